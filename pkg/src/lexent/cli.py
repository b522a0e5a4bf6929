"""``lexent`` command line: estimate, probe, analyze, plot, validate.

Every written artifact gets a ``<name>.manifest.json`` sidecar carrying the
command, a config echo, and content hashes of the inputs, enough to re-run
the command bit-identically. Exit codes: 0 success, 1 usage, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from lexent import __version__, ambiguity, embedstore, probe, stats
from lexent.errors import LexentDataError, LexentNumericalError

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


@dataclass
class RunConfig:
    """Echoable configuration for one subcommand invocation."""

    command: str
    min_contexts: int = ambiguity.DEFAULT_MIN_CONTEXTS
    variance_floor: float = ambiguity.DEFAULT_VARIANCE_FLOOR
    seed: int = 0
    hidden_size: int = 200
    epochs: int = 1
    batch_size: int = 64
    score_on_train: bool = False
    alpha: float = 0.05
    bh_family: str = "all"
    store_path: str | None = None
    train_store_path: str | None = None
    score_store_path: str | None = None
    senses_path: str | None = None
    ambiguity_path: str | None = None
    surprisal_path: str | None = None
    params_path: str | None = None
    out_path: str | None = None

    def __post_init__(self):
        if self.min_contexts < 2:
            raise LexentDataError(f"min_contexts must be >= 2, got {self.min_contexts}")
        if self.bh_family not in ("all", "correlations"):
            raise LexentDataError(f"unknown BH family {self.bh_family!r}")

    def echo(self) -> dict:
        """Path-bearing fields reduced to basenames so reruns into a fresh
        directory produce identical manifests."""
        raw = asdict(self)
        return {
            k: (os.path.basename(v) if k.endswith("_path") and v is not None else v)
            for k, v in raw.items()
        }


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_path, config: RunConfig, inputs: dict[str, str], extra: dict | None = None):
    echo = config.echo()
    doc = {
        "tool": {"name": "lexent", "version": __version__},
        "command": config.command,
        "config": echo,
        "config_sha256": hashlib.sha256(
            json.dumps(echo, sort_keys=True).encode("utf-8")
        ).hexdigest(),
        "inputs": {
            role: {"file": os.path.basename(path), "sha256": _sha256_file(path)}
            for role, path in sorted(inputs.items())
        },
        "output": os.path.basename(str(out_path)),
    }
    if extra:
        doc.update(extra)
    manifest_path = f"{out_path}.manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _fmt(value: float) -> str:
    return repr(float(value))


def _tsv_word(word: str) -> str:
    if "\t" in word or "\n" in word or "\r" in word:
        raise LexentDataError(f"word {word!r} contains TSV delimiters")
    return word


def _read_tsv(path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    if not lines:
        raise LexentDataError(f"{path}: empty table")
    columns = lines[0].split("\t")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != len(columns):
            raise LexentDataError(f"{path}:{lineno}: expected {len(columns)} columns")
        rows.append(dict(zip(columns, parts)))
    return columns, rows


def _read_header(path) -> embedstore.StoreHeader:
    with open(path, "rb") as fh:
        return embedstore.read_header(fh)


# ---------------------------------------------------------------------------
# estimate


def cmd_estimate(config: RunConfig) -> int:
    header = _read_header(config.store_path)
    scores = ambiguity.estimate_ambiguities(
        config.store_path,
        min_contexts=config.min_contexts,
        variance_floor=config.variance_floor,
    )
    senses = ambiguity.load_sense_table(config.senses_path) if config.senses_path else None
    columns = ["word", "n_contexts", "entropy_bits", "floored_dims"]
    if senses is not None:
        columns.append("wordnet_bits")
    with open(config.out_path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for score in scores:
            word = header.vocab[score.word_id]
            cells = [
                _tsv_word(word),
                str(score.n_contexts),
                _fmt(score.entropy_bits),
                str(score.floored_dims),
            ]
            if senses is not None:
                bits = ambiguity.wordnet_ambiguity(senses, word)
                cells.append("NA" if bits is None else _fmt(bits))
            fh.write("\t".join(cells) + "\n")
    omitted = header.vocab_size - len(scores)
    if not scores:
        log.warning("no type reached min_contexts=%d; table is empty", config.min_contexts)
    inputs = {"store": config.store_path}
    if config.senses_path:
        inputs["senses"] = config.senses_path
    _write_manifest(
        config.out_path,
        config,
        inputs,
        extra={"types_scored": len(scores), "types_omitted": omitted},
    )
    print(f"estimate: {len(scores)} types scored, {omitted} omitted -> {config.out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# probe


def cmd_probe(config: RunConfig) -> int:
    train_path = config.train_store_path
    score_path = train_path if config.score_on_train else config.score_store_path
    train_header = _read_header(train_path)
    score_header = _read_header(score_path)
    for name, header in (("training", train_header), ("scoring", score_header)):
        if header.kind != embedstore.StoreKind.MASKED_STATES:
            raise ambiguity.WrongStoreKindError(header.kind, embedstore.StoreKind.MASKED_STATES)
    if train_header.vocab_hash() != score_header.vocab_hash():
        raise probe.VocabHashMismatchError(
            "training and scoring stores carry different vocab tables; refusing to score"
        )
    hyper = probe.ProbeHyper(
        hidden_size=config.hidden_size,
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=config.seed,
    )
    params = probe.train_probe(train_path, hyper)
    probe.save_probe(params, config.params_path)
    # Score with the persisted float32 weights so the table matches any
    # later re-scoring from the file.
    persisted = probe.load_probe(config.params_path)
    probe.ensure_vocab_match(persisted, score_header)
    contextual = probe.score_surprisal(persisted, score_path, min_contexts=config.min_contexts)
    rows = probe.build_type_scores(score_header, contextual)
    columns = [
        "word",
        "n_contexts",
        "ctx_surprisal_bits",
        "unigram_surprisal_bits",
        "informativeness_bits",
        "corpus_count",
        "flagged",
    ]
    with open(config.out_path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write(
                "\t".join(
                    [
                        _tsv_word(score_header.vocab[row.word_id]),
                        str(row.n_contexts),
                        _fmt(row.ctx_surprisal_bits),
                        _fmt(row.unigram_surprisal_bits),
                        _fmt(row.informativeness_bits),
                        str(score_header.counts[row.word_id]),
                        "1" if row.flagged else "0",
                    ]
                )
                + "\n"
            )
    inputs = {"train_store": train_path, "score_store": score_path}
    extra = {
        "types_scored": len(rows),
        "epoch_loss_bits": params.epoch_loss_bits,
    }
    _write_manifest(config.params_path, config, inputs, extra=extra)
    _write_manifest(config.out_path, config, inputs, extra=extra)
    print(
        f"probe: trained {config.epochs} epoch(s), final loss "
        f"{params.epoch_loss_bits[-1]:.4f} bits, {len(rows)} types scored -> {config.out_path}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def _parse_float(row: dict[str, str], column: str, path) -> float:
    try:
        return float(row[column])
    except (KeyError, ValueError):
        raise LexentDataError(f"{path}: missing or non-numeric column {column!r}") from None


@dataclass
class JoinedTable:
    words: list[str]
    entropy_bits: np.ndarray
    ctx_surprisal_bits: np.ndarray
    corpus_counts: np.ndarray
    wordnet_bits: np.ndarray | None = None  # NaN where not covered
    losses: dict = field(default_factory=dict)


def _join_tables(config: RunConfig, require_counts: bool) -> JoinedTable:
    _, amb_rows = _read_tsv(config.ambiguity_path)
    _, sur_rows = _read_tsv(config.surprisal_path)
    amb = {row["word"]: row for row in amb_rows}
    sur = {row["word"]: row for row in sur_rows}
    # Sorted join order makes every downstream float reduction independent of
    # input row order, so reports are byte-identical under row shuffles.
    joined_words = sorted(w for w in amb if w in sur)
    losses = {
        "ambiguity_rows": len(amb_rows),
        "surprisal_rows": len(sur_rows),
        "joined": len(joined_words),
        "ambiguity_only": len(amb) - len(joined_words),
        "surprisal_only": len(sur) - len(joined_words),
    }
    log.info("join: %s", losses)
    entropy = np.array(
        [_parse_float(amb[w], "entropy_bits", config.ambiguity_path) for w in joined_words]
    )
    ctx = np.array(
        [_parse_float(sur[w], "ctx_surprisal_bits", config.surprisal_path) for w in joined_words]
    )
    if require_counts:
        counts = np.array(
            [_parse_float(sur[w], "corpus_count", config.surprisal_path) for w in joined_words]
        )
    else:
        counts = np.array(
            [float(sur[w].get("corpus_count", "nan")) for w in joined_words]
        )
    table = JoinedTable(
        words=joined_words,
        entropy_bits=entropy,
        ctx_surprisal_bits=ctx,
        corpus_counts=counts,
        losses=losses,
    )
    if config.senses_path:
        senses = ambiguity.load_sense_table(config.senses_path)
        table.wordnet_bits = np.array(
            [
                float("nan") if (b := ambiguity.wordnet_ambiguity(senses, w)) is None else b
                for w in joined_words
            ]
        )
        losses["sense_covered"] = int(np.sum(~np.isnan(table.wordnet_bits)))
    return table


def cmd_analyze(config: RunConfig) -> int:
    table = _join_tables(config, require_counts=config.senses_path is not None)
    if len(table.words) < 10:
        raise LexentDataError(
            f"join produced only {len(table.words)} rows; need at least 10 to analyze"
        )

    correlations: dict[str, stats.CorrelationResult] = {
        "pearson:entropy_vs_ctx_surprisal": stats.pearson(
            table.entropy_bits, table.ctx_surprisal_bits
        ),
        "spearman:entropy_vs_ctx_surprisal": stats.spearman(
            table.entropy_bits, table.ctx_surprisal_bits
        ),
    }
    regression = None
    white_tests = {
        "white:ctx_surprisal_on_entropy": stats.white_test(
            table.ctx_surprisal_bits, table.entropy_bits
        )
    }
    if table.wordnet_bits is not None:
        covered = ~np.isnan(table.wordnet_bits)
        if int(covered.sum()) >= 10:
            correlations["pearson:wordnet_vs_entropy"] = stats.pearson(
                table.wordnet_bits[covered], table.entropy_bits[covered]
            )
            correlations["spearman:wordnet_vs_entropy"] = stats.spearman(
                table.wordnet_bits[covered], table.entropy_bits[covered]
            )
            regression = stats.ols_standardized(
                table.entropy_bits[covered],
                np.column_stack(
                    [table.wordnet_bits[covered], np.log2(table.corpus_counts[covered])]
                ),
                names=["log2_senses", "log2_frequency"],
            )
            white_tests["white:ctx_surprisal_on_wordnet"] = stats.white_test(
                table.ctx_surprisal_bits[covered], table.wordnet_bits[covered]
            )
        else:
            log.warning(
                "only %d joined types covered by the sense table; skipping WordNet analyses",
                int(covered.sum()),
            )
    huber = stats.huber_fit(table.entropy_bits, table.ctx_surprisal_bits)

    family: list[tuple[str, float]] = [(n, c.p_value) for n, c in correlations.items()]
    if config.bh_family == "all":
        if regression is not None:
            family += [
                (f"regression:{name}", float(p))
                for name, p in zip(regression.names, regression.p_values)
                if name != "intercept"
            ]
        family += [(n, w.p_value) for n, w in white_tests.items()]
    adjusted, rejected = stats.bh_adjust([p for _, p in family], alpha=config.alpha)
    bh_table = {
        name: {"p_value": p, "p_adjusted": float(a), "rejected": bool(r)}
        for (name, p), a, r in zip(family, adjusted, rejected)
    }
    for name, corr in correlations.items():
        corr.p_adjusted = bh_table[name]["p_adjusted"]
        corr.rejected = bh_table[name]["rejected"]

    report = {
        "join": table.losses,
        "correlations": {n: c.to_dict() for n, c in correlations.items()},
        "regression": regression.to_dict() if regression is not None else None,
        "white": {n: w.to_dict() for n, w in white_tests.items()},
        "huber": huber.to_dict(),
        "bh": {"alpha": config.alpha, "family": bh_table},
        "config": config.echo(),
    }
    with open(config.out_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    inputs = {"ambiguity": config.ambiguity_path, "surprisal": config.surprisal_path}
    if config.senses_path:
        inputs["senses"] = config.senses_path
    _write_manifest(config.out_path, config, inputs)
    rho = correlations["pearson:entropy_vs_ctx_surprisal"].rho
    print(
        f"analyze: n={len(table.words)}, pearson(entropy, ctx surprisal)={rho:+.3f} "
        f"-> {config.out_path}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    span = hi - lo
    raw = span / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = 10.0 * mag
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (mult * mag) <= target:
            step = mult * mag
            break
    ticks = []
    t = math.ceil(lo / step) * step
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 10))
        t += step
    return ticks


def render_scatter_svg(
    x: np.ndarray,
    y: np.ndarray,
    fit: stats.HuberFitResult,
    xlabel: str = "lexical ambiguity (bits)",
    ylabel: str = "contextual uncertainty (bits)",
    width: int = 720,
    height: int = 540,
) -> str:
    """Self-contained deterministic SVG: one circle per point plus the fit line."""
    left, right, top, bottom = 64.0, 16.0, 16.0, 48.0
    plot_w = width - left - right
    plot_h = height - top - bottom

    def _range(values: np.ndarray) -> tuple[float, float]:
        lo, hi = float(values.min()), float(values.max())
        if hi <= lo:
            lo, hi = lo - 1.0, hi + 1.0
        pad = 0.05 * (hi - lo)
        return lo - pad, hi + pad

    x_lo, x_hi = _range(x)
    y_lo, y_hi = _range(y)

    def sx(v: float) -> float:
        return left + (v - x_lo) / (x_hi - x_lo) * plot_w

    def sy(v: float) -> float:
        return top + (y_hi - v) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    axis_style = 'stroke="#333" stroke-width="1"'
    parts.append(
        f'<line x1="{left:.2f}" y1="{top + plot_h:.2f}" x2="{left + plot_w:.2f}" '
        f'y2="{top + plot_h:.2f}" {axis_style}/>'
    )
    parts.append(
        f'<line x1="{left:.2f}" y1="{top:.2f}" x2="{left:.2f}" y2="{top + plot_h:.2f}" '
        f"{axis_style}/>"
    )
    text = 'font-family="sans-serif" font-size="12" fill="#333"'
    for t in _nice_ticks(x_lo, x_hi):
        px = sx(t)
        parts.append(
            f'<line x1="{px:.2f}" y1="{top + plot_h:.2f}" x2="{px:.2f}" '
            f'y2="{top + plot_h + 5:.2f}" {axis_style}/>'
        )
        parts.append(
            f'<text x="{px:.2f}" y="{top + plot_h + 18:.2f}" text-anchor="middle" {text}>{t:g}</text>'
        )
    for t in _nice_ticks(y_lo, y_hi):
        py = sy(t)
        parts.append(
            f'<line x1="{left - 5:.2f}" y1="{py:.2f}" x2="{left:.2f}" y2="{py:.2f}" {axis_style}/>'
        )
        parts.append(
            f'<text x="{left - 8:.2f}" y="{py + 4:.2f}" text-anchor="end" {text}>{t:g}</text>'
        )
    parts.append(
        f'<text x="{left + plot_w / 2:.2f}" y="{height - 10:.2f}" text-anchor="middle" '
        f"{text}>{xlabel}</text>"
    )
    parts.append(
        f'<text x="16" y="{top + plot_h / 2:.2f}" text-anchor="middle" {text} '
        f'transform="rotate(-90 16 {top + plot_h / 2:.2f})">{ylabel}</text>'
    )
    for xi, yi in zip(x, y):
        parts.append(
            f'<circle cx="{sx(float(xi)):.2f}" cy="{sy(float(yi)):.2f}" r="2.5" '
            f'fill="#3b6ea5" fill-opacity="0.45"/>'
        )
    parts.append(
        f'<line x1="{sx(x_lo):.2f}" y1="{sy(fit.intercept + fit.slope * x_lo):.2f}" '
        f'x2="{sx(x_hi):.2f}" y2="{sy(fit.intercept + fit.slope * x_hi):.2f}" '
        f'stroke="#a53b3b" stroke-width="1.5"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(config: RunConfig) -> int:
    table = _join_tables(config, require_counts=False)
    if not table.words:
        raise LexentDataError("join produced no rows; nothing to plot")
    fit = stats.huber_fit(table.entropy_bits, table.ctx_surprisal_bits)
    svg = render_scatter_svg(table.entropy_bits, table.ctx_surprisal_bits, fit)
    with open(config.out_path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    _write_manifest(
        config.out_path,
        config,
        {"ambiguity": config.ambiguity_path, "surprisal": config.surprisal_path},
        extra={"points": len(table.words), "huber": fit.to_dict()},
    )
    print(f"plot: {len(table.words)} points -> {config.out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate


def cmd_validate(config: RunConfig) -> int:
    report = embedstore.validate_store(config.store_path, min_contexts=config.min_contexts)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(sub: argparse.ArgumentParser):
    sub.add_argument("--min-contexts", type=int, default=ambiguity.DEFAULT_MIN_CONTEXTS)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lexent", description=__doc__)
    parser.add_argument("--version", action="version", version=f"lexent {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("estimate", help="per-type ambiguity table from a TokenStates store")
    _add_common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--variance-floor", type=float, default=ambiguity.DEFAULT_VARIANCE_FLOOR)
    p.add_argument("--senses", default=None)
    p.add_argument("--out", required=True)

    p = subs.add_parser("probe", help="train the cloze probe and score surprisal")
    _add_common(p)
    p.add_argument("--train-store", required=True)
    p.add_argument("--score-store", default=None)
    p.add_argument("--score-on-train", action="store_true")
    p.add_argument("--hidden-size", type=int, default=200)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--params-out", required=True)
    p.add_argument("--out", required=True)

    p = subs.add_parser("analyze", help="correlations, regression, White test, robust fit")
    _add_common(p)
    p.add_argument("--ambiguity", required=True)
    p.add_argument("--surprisal", required=True)
    p.add_argument("--senses", default=None)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--bh-family", choices=("all", "correlations"), default="all")
    p.add_argument("--out", required=True)

    p = subs.add_parser("plot", help="scatter + robust fit SVG")
    _add_common(p)
    p.add_argument("--ambiguity", required=True)
    p.add_argument("--surprisal", required=True)
    p.add_argument("--out", required=True)

    p = subs.add_parser("validate", help="scan a store and report per-type counts")
    _add_common(p)
    p.add_argument("--store", required=True)
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    kwargs = dict(command=args.command, min_contexts=args.min_contexts, seed=args.seed)
    if args.command == "estimate":
        kwargs.update(
            store_path=args.store,
            variance_floor=args.variance_floor,
            senses_path=args.senses,
            out_path=args.out,
        )
    elif args.command == "probe":
        if not args.score_on_train and args.score_store is None:
            raise LexentDataError("probe needs --score-store or --score-on-train")
        kwargs.update(
            train_store_path=args.train_store,
            score_store_path=args.score_store,
            score_on_train=args.score_on_train,
            hidden_size=args.hidden_size,
            epochs=args.epochs,
            batch_size=args.batch_size,
            params_path=args.params_out,
            out_path=args.out,
        )
    elif args.command == "analyze":
        kwargs.update(
            ambiguity_path=args.ambiguity,
            surprisal_path=args.surprisal,
            senses_path=args.senses,
            alpha=args.alpha,
            bh_family=args.bh_family,
            out_path=args.out,
        )
    elif args.command == "plot":
        kwargs.update(
            ambiguity_path=args.ambiguity,
            surprisal_path=args.surprisal,
            out_path=args.out,
        )
    elif args.command == "validate":
        kwargs.update(store_path=args.store)
    return RunConfig(**kwargs)


_COMMANDS = {
    "estimate": cmd_estimate,
    "probe": cmd_probe,
    "analyze": cmd_analyze,
    "plot": cmd_plot,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _config_from_args(args)
        return _COMMANDS[args.command](config)
    except LexentDataError as exc:
        print(f"lexent {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LexentNumericalError as exc:
        print(f"lexent {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"lexent {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
