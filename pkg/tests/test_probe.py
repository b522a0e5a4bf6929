"""Cloze probe: forward pass, gradients, Adam, training, scoring, persistence."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from lexent import embedstore, probe
from lexent.ambiguity import WrongStoreKindError
from lexent.errors import LexentDataError
from lexent.probe import (
    ProbeHyper,
    ProbeParams,
    TrainingDivergedError,
    VocabHashMismatchError,
    adam_step,
    build_type_scores,
    cross_entropy_loss_and_grads,
    ensure_vocab_match,
    informativeness,
    init_params,
    load_probe,
    probe_forward,
    save_probe,
    score_surprisal,
    train_probe,
    unigram_surprisal,
)
from lexent.embedstore import StoreKind

from conftest import build_store, gaussian_store


def zero_params(dim: int, hidden: int, vocab: int) -> ProbeParams:
    params, _ = init_params(dim, hidden, vocab, seed=0)
    for w in params.weights().values():
        w[:] = 0.0
    return params


def cluster_store(path, n_types: int, per_type: int, dim: int, seed: int, sep: float = 6.0):
    """Each word's masked states form a tight cluster far from the others."""
    return gaussian_store(
        path,
        StoreKind.MASKED_STATES,
        n_types,
        per_type,
        dim,
        seed,
        spread=0.3,
        center_scale=sep,
    )


class TestForward:
    def test_zero_params_uniform(self):
        params = zero_params(4, 3, 7)
        logp = probe_forward(params, np.zeros(4))
        np.testing.assert_allclose(logp, -math.log2(7), rtol=1e-12)

    def test_large_bias_concentrates(self):
        params = zero_params(4, 3, 5)
        params.b2[0] = 50.0
        logp = probe_forward(params, np.ones(4))
        assert logp[0] == pytest.approx(0.0, abs=1e-12)
        assert np.all(logp[1:] < -60)

    def test_shape_and_finite_checks(self):
        params = zero_params(4, 3, 5)
        with pytest.raises(ValueError):
            probe_forward(params, np.zeros(3))
        with pytest.raises(ValueError):
            probe_forward(params, np.array([1.0, np.nan, 0.0, 0.0]))

    def test_matches_mpmath_ce(self, rng):
        params, _ = init_params(6, 4, 9, seed=3)
        h = rng.standard_normal((5, 6))
        targets = rng.integers(0, 9, size=5)
        loss, _ = cross_entropy_loss_and_grads(params, h, targets)
        expected = oracles.mlp_ce_nats(params.w1, params.b1, params.w2, params.b2, h, targets)
        assert loss == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(
        seed=st.integers(0, 2**16),
        scale=st.floats(min_value=0.01, max_value=1e4),
    )
    def test_exponentials_sum_to_one(self, seed, scale):
        r = np.random.default_rng(seed)
        params, _ = init_params(5, 4, 8, seed=seed)
        h = scale * r.standard_normal(5)
        logp = probe_forward(params, h)
        total = np.exp2(logp).sum()
        assert total == pytest.approx(1.0, abs=1e-6)


class TestGradients:
    def test_central_difference_check(self):
        dim, hidden, vocab, n = 8, 5, 7, 16
        r = np.random.default_rng(11)
        params, _ = init_params(dim, hidden, vocab, seed=7)
        h = r.standard_normal((n, dim))
        targets = r.integers(0, vocab, size=n)
        _, grads = cross_entropy_loss_and_grads(params, h, targets)
        eps = 1e-6
        worst = 0.0
        for name, w in params.weights().items():
            numeric = np.zeros_like(w)
            flat = w.reshape(-1)
            num_flat = numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up, _ = cross_entropy_loss_and_grads(params, h, targets)
                flat[i] = orig - eps
                down, _ = cross_entropy_loss_and_grads(params, h, targets)
                flat[i] = orig
                num_flat[i] = (up - down) / (2 * eps)
            denom = np.maximum(np.abs(numeric) + np.abs(grads[name]), 1e-8)
            worst = max(worst, float(np.max(np.abs(numeric - grads[name]) / denom)))
        assert worst < 1e-4

    def test_gradient_descends(self, rng):
        params, _ = init_params(4, 6, 5, seed=2)
        h = rng.standard_normal((32, 4))
        targets = rng.integers(0, 5, size=32)
        loss0, grads = cross_entropy_loss_and_grads(params, h, targets)
        for name, w in params.weights().items():
            w -= 0.1 * grads[name]
        loss1, _ = cross_entropy_loss_and_grads(params, h, targets)
        assert loss1 < loss0


class TestAdam:
    def test_single_step_closed_form(self):
        params = zero_params(1, 1, 2)
        hyper = ProbeHyper(learning_rate=0.01)
        g = {
            "w1": np.array([[0.3]]),
            "b1": np.array([0.5]),
            "w2": np.array([[0.2], [-0.4]]),
            "b2": np.array([0.1, -0.1]),
        }
        adam_step(params, g, hyper)
        # After one step the bias-corrected update is -lr * g / (|g| + eps).
        for name, w in params.weights().items():
            expected = -hyper.learning_rate * g[name] / (np.abs(g[name]) + hyper.eps)
            np.testing.assert_allclose(w, expected, rtol=1e-9)
        assert params.adam.step == 1

    def test_two_steps_match_reference_formula(self):
        params = zero_params(1, 1, 2)
        hyper = ProbeHyper(learning_rate=0.05)
        g1 = {k: np.full_like(v, 0.2) for k, v in params.weights().items()}
        g2 = {k: np.full_like(v, -0.1) for k, v in params.weights().items()}
        adam_step(params, g1, hyper)
        w_after_1 = {k: v.copy() for k, v in params.weights().items()}
        adam_step(params, g2, hyper)
        m = (1 - hyper.beta1) * (hyper.beta1 * 0.2 + (1 - hyper.beta1) * (-0.1)) / (
            1 - hyper.beta1
        )
        # Recompute explicitly: m_2 = b1*m_1 + (1-b1)*g2, v_2 = b2*v_1 + (1-b2)*g2^2.
        m1, v1 = (1 - hyper.beta1) * 0.2, (1 - hyper.beta2) * 0.04
        m2 = hyper.beta1 * m1 + (1 - hyper.beta1) * (-0.1)
        v2 = hyper.beta2 * v1 + (1 - hyper.beta2) * 0.01
        mhat = m2 / (1 - hyper.beta1**2)
        vhat = v2 / (1 - hyper.beta2**2)
        step = -hyper.learning_rate * mhat / (math.sqrt(vhat) + hyper.eps)
        for k, w in params.weights().items():
            np.testing.assert_allclose(w, w_after_1[k] + step, rtol=1e-9)

    def test_requires_optimizer_state(self):
        params = zero_params(1, 1, 2)
        params.adam = None
        with pytest.raises(ValueError):
            adam_step(params, {}, ProbeHyper())


class TestInit:
    def test_glorot_bounds_and_zero_biases(self):
        params, _ = init_params(10, 20, 30, seed=5)
        lim1 = math.sqrt(6.0 / (10 + 20))
        lim2 = math.sqrt(6.0 / (20 + 30))
        assert np.all(np.abs(params.w1) <= lim1)
        assert np.all(np.abs(params.w2) <= lim2)
        assert np.all(params.b1 == 0.0)
        assert np.all(params.b2 == 0.0)

    def test_seed_determinism(self):
        a, _ = init_params(6, 7, 8, seed=42)
        b, _ = init_params(6, 7, 8, seed=42)
        c, _ = init_params(6, 7, 8, seed=43)
        np.testing.assert_array_equal(a.w1, b.w1)
        np.testing.assert_array_equal(a.w2, b.w2)
        assert not np.array_equal(a.w1, c.w1)


class TestTraining:
    def test_separable_reaches_low_surprisal(self, tmp_path):
        path = tmp_path / "train.lexe"
        header = cluster_store(path, n_types=5, per_type=200, dim=8, seed=1)
        hyper = ProbeHyper(hidden_size=32, epochs=30, batch_size=64, seed=0)
        params = train_probe(path, hyper)
        scores = score_surprisal(params, path, min_contexts=100)
        assert len(scores) == 5
        mean_bits = float(np.mean([s.ctx_surprisal_bits for s in scores]))
        assert mean_bits < 0.1
        assert params.vocab_hash == header.vocab_hash()

    def test_epoch_loss_non_increasing_on_separable(self, tmp_path):
        path = tmp_path / "train.lexe"
        cluster_store(path, n_types=4, per_type=150, dim=6, seed=2)
        params = train_probe(path, ProbeHyper(hidden_size=16, epochs=8, seed=0))
        losses = params.epoch_loss_bits
        assert len(losses) == 8
        assert all(b <= a + 1e-6 for a, b in zip(losses, losses[1:]))

    def test_shuffled_labels_stay_near_uniform(self, tmp_path):
        path = tmp_path / "train.lexe"
        r = np.random.default_rng(3)
        n_types, per_type, dim = 8, 400, 8
        vocab = [f"w{i}" for i in range(n_types)]
        header = embedstore.StoreHeader(
            kind=StoreKind.MASKED_STATES, dim=dim, vocab=vocab, counts=[per_type] * n_types
        )
        # Cluster states as in the separable task, then shuffle the labels so
        # context carries no information about the word.
        centers = 6.0 * r.standard_normal((n_types, dim))
        states = np.concatenate(
            [c + 0.3 * r.standard_normal((per_type, dim)) for c in centers]
        )
        labels = np.repeat(np.arange(n_types), per_type)
        r.shuffle(labels)
        recs = [
            embedstore.EmbeddingRecord(int(w), s.astype(np.float32))
            for w, s in zip(labels, states)
        ]
        embedstore.write_store_path(header, recs, path)
        params = train_probe(path, ProbeHyper(hidden_size=32, epochs=10, seed=0))
        scores = score_surprisal(params, path, min_contexts=1)
        mean_bits = float(
            np.sum([s.ctx_surprisal_bits * s.n_contexts for s in scores])
            / np.sum([s.n_contexts for s in scores])
        )
        assert mean_bits == pytest.approx(3.0, abs=0.2)

    def test_empty_store_rejected(self, tmp_path):
        path = tmp_path / "empty.lexe"
        header = embedstore.StoreHeader(
            kind=StoreKind.MASKED_STATES, dim=4, vocab=["a"], counts=[1]
        )
        embedstore.write_store_path(header, [], path)
        with pytest.raises(LexentDataError, match="no records"):
            train_probe(path)

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "tok.lexe"
        build_store(path, StoreKind.TOKEN_STATES, ["a"], [2], lambda i, j: [0.0], dim=1)
        with pytest.raises(WrongStoreKindError):
            train_probe(path)

    def test_divergence_aborts_with_diagnostics(self, tmp_path, monkeypatch):
        path = tmp_path / "train.lexe"
        cluster_store(path, n_types=3, per_type=40, dim=4, seed=4)
        real = probe.cross_entropy_loss_and_grads
        calls = {"n": 0}

        def poisoned(params, h, targets):
            calls["n"] += 1
            loss, grads = real(params, h, targets)
            return (math.nan, grads) if calls["n"] == 3 else (loss, grads)

        monkeypatch.setattr(probe, "cross_entropy_loss_and_grads", poisoned)
        with pytest.raises(TrainingDivergedError, match="epoch 0"):
            train_probe(path, ProbeHyper(hidden_size=8, epochs=1, batch_size=32, seed=0))

    def test_training_is_seed_deterministic(self, tmp_path):
        path = tmp_path / "train.lexe"
        cluster_store(path, n_types=3, per_type=120, dim=4, seed=5)
        a = train_probe(path, ProbeHyper(hidden_size=8, epochs=2, seed=9))
        b = train_probe(path, ProbeHyper(hidden_size=8, epochs=2, seed=9))
        for k in ("w1", "b1", "w2", "b2"):
            np.testing.assert_array_equal(a.weights()[k], b.weights()[k])
        assert a.epoch_loss_bits == b.epoch_loss_bits

    def test_ce_bounds_true_conditional_entropy(self, tmp_path):
        """With word|context ~ Bernoulli(0.7) the probe's cross entropy cannot
        dip below H(0.7) = 0.881 bits, however long it trains."""
        path = tmp_path / "train.lexe"
        r = np.random.default_rng(6)
        n = 4000
        contexts = np.where(r.random(n) < 0.5, -4.0, 4.0)
        states = np.column_stack([contexts, contexts]) + 0.05 * r.standard_normal((n, 2))
        labels = np.where(r.random(n) < 0.7, 0, 1)
        counts = np.bincount(labels, minlength=2).tolist()
        header = embedstore.StoreHeader(
            kind=StoreKind.MASKED_STATES, dim=2, vocab=["a", "b"], counts=counts
        )
        recs = [
            embedstore.EmbeddingRecord(int(w), s.astype(np.float32))
            for w, s in zip(labels, states)
        ]
        embedstore.write_store_path(header, recs, path)
        params = train_probe(path, ProbeHyper(hidden_size=8, epochs=10, seed=0))
        true_bits = -(0.7 * math.log2(0.7) + 0.3 * math.log2(0.3))
        assert params.epoch_loss_bits[-1] >= true_bits - 0.05
        assert params.epoch_loss_bits[-1] == pytest.approx(true_bits, abs=0.1)


class TestScoring:
    def _store(self, tmp_path, n_types=4, per_type=30, dim=3, seed=0):
        path = tmp_path / "score.lexe"
        header = gaussian_store(
            path, StoreKind.MASKED_STATES, n_types, per_type, dim, seed
        )
        return path, header

    def test_uniform_probe_scores_log2_vocab(self, tmp_path):
        path, header = self._store(tmp_path, n_types=16, per_type=20, dim=3)
        params = zero_params(3, 5, 16)
        scores = score_surprisal(params, path, min_contexts=1)
        assert len(scores) == 16
        for s in scores:
            assert s.ctx_surprisal_bits == pytest.approx(4.0, abs=1e-12)

    def test_half_probability_scores_one_bit(self, tmp_path):
        path, _ = self._store(tmp_path, n_types=2, per_type=25, dim=3)
        params = zero_params(3, 5, 2)
        scores = score_surprisal(params, path, min_contexts=1)
        for s in scores:
            assert s.ctx_surprisal_bits == pytest.approx(1.0, abs=1e-12)

    def test_min_contexts_filter(self, tmp_path):
        path = tmp_path / "s.lexe"
        build_store(
            path,
            StoreKind.MASKED_STATES,
            vocab=["hi", "lo"],
            counts=[40, 10],
            make_vector=lambda i, j: [float(i)],
            dim=1,
        )
        params = zero_params(1, 4, 2)
        scores = score_surprisal(params, path, min_contexts=20)
        assert [s.word_id for s in scores] == [0]
        assert scores[0].n_contexts == 40

    def test_record_order_invariance(self, tmp_path):
        r = np.random.default_rng(8)
        vecs = [(int(w), r.standard_normal(3).astype(np.float32)) for w in r.integers(0, 3, 60)]
        header = embedstore.StoreHeader(
            kind=StoreKind.MASKED_STATES,
            dim=3,
            vocab=["a", "b", "c"],
            counts=np.maximum(np.bincount([w for w, _ in vecs], minlength=3), 1).tolist(),
        )
        params, _ = init_params(3, 6, 3, seed=1)
        results = []
        for perm_seed in (1, 2):
            order = np.random.default_rng(perm_seed).permutation(len(vecs))
            path = tmp_path / f"s{perm_seed}.lexe"
            embedstore.write_store_path(
                header,
                [embedstore.EmbeddingRecord(*vecs[i]) for i in order],
                path,
            )
            results.append(score_surprisal(params, path, min_contexts=1))
        for s1, s2 in zip(*results):
            assert s1.word_id == s2.word_id
            assert s1.n_contexts == s2.n_contexts
            assert s1.ctx_surprisal_bits == pytest.approx(s2.ctx_surprisal_bits, rel=1e-9)

    def test_mpmath_surprisal_oracle(self, tmp_path):
        path, header = self._store(tmp_path, n_types=3, per_type=4, dim=3, seed=2)
        params, _ = init_params(3, 5, 3, seed=4)
        scores = score_surprisal(params, path, min_contexts=1)
        _, batches = embedstore.read_batches_path(path)
        per_type: dict[int, list[float]] = {0: [], 1: [], 2: []}
        for word_ids, vectors in batches:
            for w, h in zip(word_ids, vectors):
                a = np.maximum(params.w1 @ h.astype(np.float64) + params.b1, 0.0)
                logits = params.w2 @ a + params.b2
                per_type[int(w)].append(oracles.softmax_ce_nats(logits, int(w)) / math.log(2))
        for s in scores:
            assert s.ctx_surprisal_bits == pytest.approx(
                float(np.mean(per_type[s.word_id])), rel=1e-10
            )

    def test_out_of_vocab_records_skipped(self, tmp_path):
        path, _ = self._store(tmp_path, n_types=4, per_type=10, dim=3)
        params = zero_params(3, 5, 2)  # output layer only covers ids 0..1
        scores = score_surprisal(params, path, min_contexts=1)
        assert [s.word_id for s in scores] == [0, 1]


class TestUnigram:
    def _header(self, counts):
        return embedstore.StoreHeader(
            kind=StoreKind.MASKED_STATES,
            dim=1,
            vocab=[f"w{i}" for i in range(len(counts))],
            counts=counts,
        )

    def test_power_of_two(self):
        header = self._header([1, 1023])
        assert unigram_surprisal(header, 0) == pytest.approx(10.0, abs=1e-12)

    def test_sole_type(self):
        header = self._header([17])
        assert unigram_surprisal(header, 0) == 0.0

    def test_three_counts(self):
        header = self._header([3, 5, 8])
        assert unigram_surprisal(header, 1) == pytest.approx(-math.log2(5 / 16), abs=1e-12)
        assert unigram_surprisal(header, 1) == pytest.approx(1.678, abs=5e-4)

    def test_informativeness(self):
        assert informativeness(10.0, 3.0) == 7.0
        assert informativeness(4.0, 4.0) == 0.0

    def test_flagging(self, tmp_path):
        header = self._header([100, 100])
        rows = build_type_scores(
            header,
            [
                probe.ContextualScore(word_id=0, n_contexts=100, ctx_surprisal_bits=1.0),
                probe.ContextualScore(word_id=1, n_contexts=100, ctx_surprisal_bits=2.0),
            ],
        )
        # unigram is 1 bit each; word 1 under-performs it by a full bit.
        assert rows[0].informativeness_bits == pytest.approx(0.0)
        assert not rows[0].flagged
        assert rows[1].informativeness_bits == pytest.approx(-1.0)
        assert rows[1].flagged


class TestPersistence:
    def _trained(self, tmp_path):
        path = tmp_path / "t.lexe"
        header = cluster_store(path, n_types=3, per_type=50, dim=4, seed=7)
        params = train_probe(path, ProbeHyper(hidden_size=8, epochs=1, seed=0))
        return path, header, params

    def test_round_trip_float32(self, tmp_path):
        _, _, params = self._trained(tmp_path)
        out = tmp_path / "p.bin"
        save_probe(params, out)
        loaded = load_probe(out)
        for k in ("w1", "b1", "w2", "b2"):
            np.testing.assert_array_equal(
                loaded.weights()[k], params.weights()[k].astype(np.float32).astype(np.float64)
            )
        assert loaded.vocab_hash == params.vocab_hash
        assert loaded.adam is None

    def test_bad_magic(self, tmp_path):
        _, _, params = self._trained(tmp_path)
        out = tmp_path / "p.bin"
        save_probe(params, out)
        data = bytearray(out.read_bytes())
        data[:4] = b"NOPE"
        out.write_bytes(bytes(data))
        with pytest.raises(LexentDataError, match="magic"):
            load_probe(out)

    def test_truncated(self, tmp_path):
        _, _, params = self._trained(tmp_path)
        out = tmp_path / "p.bin"
        save_probe(params, out)
        out.write_bytes(out.read_bytes()[:-7])
        with pytest.raises(LexentDataError, match="truncated"):
            load_probe(out)

    def test_trailing_bytes(self, tmp_path):
        _, _, params = self._trained(tmp_path)
        out = tmp_path / "p.bin"
        save_probe(params, out)
        out.write_bytes(out.read_bytes() + b"x")
        with pytest.raises(LexentDataError, match="trailing"):
            load_probe(out)

    def test_vocab_hash_gate(self, tmp_path):
        path, header, params = self._trained(tmp_path)
        ensure_vocab_match(params, header)  # same store passes
        other = tmp_path / "other.lexe"
        other_header = cluster_store(other, n_types=3, per_type=10, dim=4, seed=8)
        with pytest.raises(VocabHashMismatchError):
            ensure_vocab_match(params, other_header)

    def test_scores_from_saved_equal_saved_values(self, tmp_path):
        path, _, params = self._trained(tmp_path)
        out = tmp_path / "p.bin"
        save_probe(params, out)
        loaded = load_probe(out)
        a = score_surprisal(loaded, path, min_contexts=1)
        b = score_surprisal(load_probe(out), path, min_contexts=1)
        assert [(s.word_id, s.ctx_surprisal_bits) for s in a] == [
            (s.word_id, s.ctx_surprisal_bits) for s in b
        ]
