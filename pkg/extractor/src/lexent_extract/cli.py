"""``lexent-extract`` command line: plain text in, embedding stores out.

Reads a UTF-8 corpus, sentencizes and tokenizes it for the requested
language, draws disjoint seeded samples for analysis and probe training,
and writes TokenStates/MaskedStates stores in the exact binary format the
``lexent`` commands consume. Every output gets a ``<name>.manifest.json``
sidecar. Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass

import numpy as np

from lexent.errors import LexentDataError, LexentNumericalError

from lexent_extract import __version__, pipeline
from lexent_extract.encoders import build_encoder
from lexent_extract.segment import sentencize_tokenize

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


@dataclass
class ExtractConfig:
    """Echoable configuration for one extraction run."""

    language: str
    encoder_spec: str = "stub:16"
    analysis_budget: int = pipeline.DEFAULT_ANALYSIS_BUDGET
    probe_budget: int = pipeline.DEFAULT_PROBE_BUDGET
    min_contexts: int = pipeline.DEFAULT_MIN_CONTEXTS
    seed: int = 0
    input_path: str | None = None
    tokens_path: str | None = None
    masked_path: str | None = None
    train_masked_path: str | None = None

    def corpus(self) -> pipeline.CorpusConfig:
        return pipeline.CorpusConfig(
            language=self.language,
            analysis_budget=self.analysis_budget,
            probe_budget=self.probe_budget,
            min_contexts=self.min_contexts,
            seed=self.seed,
        )

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


def _write_manifest(out_path, config: ExtractConfig, inputs: dict[str, str], extra: dict):
    echo = config.echo()
    doc = {
        "tool": {"name": "lexent-extract", "version": __version__},
        "command": "extract",
        "config": echo,
        "config_sha256": hashlib.sha256(
            json.dumps(echo, sort_keys=True).encode("utf-8")
        ).hexdigest(),
        "inputs": {
            role: {"file": os.path.basename(path), "sha256": _sha256_file(path)}
            for role, path in sorted(inputs.items())
        },
        "output": os.path.basename(str(out_path)),
        "masking_policy": pipeline.MASKING_POLICY,
    }
    doc.update(extra)
    manifest_path = f"{out_path}.manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_extract(config: ExtractConfig) -> int:
    corpus_config = config.corpus()
    encoder = build_encoder(config.encoder_spec)
    with open(config.input_path, encoding="utf-8") as fh:
        text = fh.read()
    sentences = sentencize_tokenize(text, config.language)
    if not sentences:
        raise LexentDataError(f"{config.input_path}: no sentences found")
    log.info("corpus: %d sentences", len(sentences))
    rng = np.random.default_rng(config.seed)
    analysis, training = pipeline.disjoint_samples(
        sentences, config.analysis_budget, config.probe_budget, rng
    )
    result = pipeline.extract_states(
        analysis, encoder, corpus_config, config.tokens_path, config.masked_path
    )
    inputs = {"corpus": config.input_path}
    summary = {
        "sentences": {
            "corpus": len(sentences),
            "analysis": len(analysis),
            "probe_training": len(training),
        },
        "vocab_size": result.token_header.vocab_size,
        "records": result.records_per_store,
        "dropped_types": result.dropped_types,
        "out_of_script_types": result.out_of_script_types,
    }
    _write_manifest(config.tokens_path, config, inputs, dict(summary, store_kind="TOKEN_STATES"))
    _write_manifest(config.masked_path, config, inputs, dict(summary, store_kind="MASKED_STATES"))
    if config.train_masked_path is not None:
        train_records = pipeline.extract_training_states(
            training, encoder, result.masked_header, config.train_masked_path
        )
        _write_manifest(
            config.train_masked_path,
            config,
            inputs,
            dict(summary, store_kind="MASKED_STATES", training_records=train_records),
        )
        print(
            f"extract: {result.token_header.vocab_size} types, "
            f"{result.records_per_store} records per store, "
            f"{train_records} training records -> {config.tokens_path}, "
            f"{config.masked_path}, {config.train_masked_path}"
        )
    else:
        print(
            f"extract: {result.token_header.vocab_size} types, "
            f"{result.records_per_store} records per store -> "
            f"{config.tokens_path}, {config.masked_path}"
        )
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lexent-extract", description=__doc__)
    parser.add_argument(
        "--version", action="version", version=f"lexent-extract {__version__}"
    )
    parser.add_argument("--lang", required=True, help="language code (e.g. en, de, ru)")
    parser.add_argument("--input", required=True, help="UTF-8 plain-text corpus")
    parser.add_argument("--out-tokens", required=True, help="TokenStates store to write")
    parser.add_argument("--out-masked", required=True, help="MaskedStates store to write")
    parser.add_argument(
        "--out-train-masked",
        default=None,
        help="optional probe-training MaskedStates store, drawn disjointly",
    )
    parser.add_argument(
        "--budget", type=int, default=pipeline.DEFAULT_ANALYSIS_BUDGET,
        help="analysis sentence sample size",
    )
    parser.add_argument(
        "--probe-budget", type=int, default=pipeline.DEFAULT_PROBE_BUDGET,
        help="probe-training sentence sample size",
    )
    parser.add_argument("--min-contexts", type=int, default=pipeline.DEFAULT_MIN_CONTEXTS)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--encoder", default="stub:16", help="encoder spec: stub or stub:<dim>"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = ExtractConfig(
            language=args.lang,
            encoder_spec=args.encoder,
            analysis_budget=args.budget,
            probe_budget=args.probe_budget,
            min_contexts=args.min_contexts,
            seed=args.seed,
            input_path=args.input,
            tokens_path=args.out_tokens,
            masked_path=args.out_masked,
            train_masked_path=args.out_train_masked,
        )
        return cmd_extract(config)
    except LexentDataError as exc:
        print(f"lexent-extract: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LexentNumericalError as exc:
        print(f"lexent-extract: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"lexent-extract: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
