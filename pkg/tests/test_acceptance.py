"""Acceptance suite: one test per engine-level criterion, with stated
tolerances pinned.  Each test prints a PASS line with the measured quantity
(run with `pytest -s` to see them)."""

import time

import numpy as np
import pytest

from neighbormix.aggregate import HyperParams, interpolate, knn_distribution, predict
from neighbormix.data_model import BaseProbSet, EmbeddingSet, LabeledSet, LabelVocab
from neighbormix.memory import build_memory
from neighbormix.metrics import evaluate, longtail_report, micro_f1_from_arrays
from neighbormix.search import DistanceKind, NeighborList, batch_search, search
from neighbormix.synth import SynthSpec, centroid_base_probs, generate, subsample
from neighbormix.tune import (
    SearchSpace,
    greedy_search,
    interpolated_distributions,
    tune_alpha,
)

from conftest import random_embedding_set, random_memory
from reference import naive_pipeline, naive_search, naive_vote


def _pass(name: str, detail: str = "") -> None:
    print(f"ACCEPTANCE PASS: {name}" + (f" ({detail})" if detail else ""))


def _random_neighbor_list(rng, n, num_labels, low=0.0, high=4.0):
    d = np.sort(rng.uniform(low, high, size=n))
    return NeighborList(
        memory_rows=np.arange(n, dtype=np.int64),
        record_ids=tuple(f"n{i}" for i in range(n)),
        distances=d,
        label_ids=rng.integers(0, num_labels, size=n),
    )


def test_search_oracle_equivalence():
    """1,000 randomized trials against a naive full-sort reference, < 10 s."""
    rng = np.random.default_rng(2024)
    start = time.time()
    for trial in range(1000):
        n = int(rng.integers(1, 513))
        dim = int(rng.integers(1, 17))
        num_labels = int(rng.integers(2, 5))
        memory = random_memory(rng, n, dim, num_labels)
        if n >= 4 and trial % 3 == 0:
            # duplicated rows exercise exact ties
            keys = memory.keys.copy()
            keys[n // 2] = keys[0]
            memory = random_memory(rng, n, dim, num_labels)
            object.__setattr__(memory, "keys", keys)
            object.__setattr__(
                memory, "key_sq_norms", np.einsum("ij,ij->i", keys, keys)
            )
        q = rng.uniform(size=dim)
        k = int(rng.integers(1, n + 4))
        kind = DistanceKind.SQ_L2 if trial % 2 else DistanceKind.L2
        got = search(memory, q, k, distance=kind)
        want = naive_search(memory.keys, q, k)
        assert list(got.memory_rows) == [r for _, r in want], f"trial {trial}"
    elapsed = time.time() - start
    assert elapsed < 10.0, f"oracle sweep took {elapsed:.1f}s"
    _pass("search oracle equivalence", f"1000 trials in {elapsed:.1f}s")


def test_pipeline_oracle_equivalence():
    """200 randomized predict() runs match a straight-line reference, 1e-9."""
    rng = np.random.default_rng(7)
    for trial in range(200):
        n = int(rng.integers(1, 64))
        dim = int(rng.integers(1, 9))
        num_labels = int(rng.integers(2, 6))
        memory = random_memory(rng, n, dim, num_labels)
        q = rng.uniform(size=dim)
        k = int(rng.integers(1, 17))
        t = float(rng.uniform(0.3, 1.0))
        lam = float(rng.uniform(0.0, 1.0))
        p_base = rng.dirichlet(np.ones(num_labels))
        base = BaseProbSet(
            vocab=memory.vocab, ids=("q",), rows=p_base[None, :].copy()
        )
        hp = HyperParams(k=k, temperature=t, lam=lam)
        got = predict("q", q, memory, base, hp)
        want = naive_pipeline(
            memory.keys, memory.values, q, p_base, k, t, lam, num_labels
        )
        assert got.distribution == pytest.approx(want, abs=1e-9), f"trial {trial}"
    _pass("pipeline oracle equivalence", "200 trials within 1e-9")


def test_mix_weight_boundaries():
    """Weight 0 returns the base row exactly; weight 1 the vote exactly."""
    rng = np.random.default_rng(12)
    memory = random_memory(rng, 300, 6, 4)
    queries = random_embedding_set(rng, 1000, 6)
    neighbors = batch_search(memory, queries, k=8)
    for i in range(1000):
        vote = knn_distribution(neighbors[i], memory.vocab, 0.4)
        base = rng.dirichlet(np.ones(4))
        assert np.array_equal(interpolate(vote, base, 0.0), base)
        assert np.array_equal(interpolate(vote, base, 1.0), vote)
    _pass("mix-weight boundaries", "1000 queries, exact")


def test_vote_limits():
    """Huge T flattens to label frequencies; tiny T sharpens to the nearest."""
    rng = np.random.default_rng(3)
    vocab = LabelVocab(names=("a", "b", "c"))
    for _ in range(300):
        n = int(rng.integers(1, 24))
        nl = _random_neighbor_list(rng, n, 3)
        flat = knn_distribution(nl, vocab, 1e6)
        freqs = np.bincount(nl.label_ids, minlength=3) / n
        assert flat == pytest.approx(freqs, abs=1e-4)
        sharp = knn_distribution(nl, vocab, 1e-6)
        one_hot = np.zeros(3)
        one_hot[nl.label_ids[0]] = 1.0
        assert sharp == pytest.approx(one_hot, abs=1e-4)
    _pass("vote temperature limits", "within 1e-4")


def test_vote_shift_scale_invariance():
    rng = np.random.default_rng(4)
    vocab = LabelVocab(names=("a", "b", "c"))
    for _ in range(300):
        n = int(rng.integers(1, 24))
        nl = _random_neighbor_list(rng, n, 3)
        t = float(rng.uniform(0.05, 1.0))
        base = knn_distribution(nl, vocab, t)
        shift = float(rng.uniform(0.0, 100.0))
        shifted = NeighborList(
            memory_rows=nl.memory_rows,
            record_ids=nl.record_ids,
            distances=nl.distances + shift,
            label_ids=nl.label_ids,
        )
        assert knn_distribution(shifted, vocab, t) == pytest.approx(base, abs=1e-9)
        scale = float(rng.uniform(0.01, 100.0))
        scaled = NeighborList(
            memory_rows=nl.memory_rows,
            record_ids=nl.record_ids,
            distances=nl.distances * scale,
            label_ids=nl.label_ids,
        )
        assert knn_distribution(scaled, vocab, t * scale) == pytest.approx(
            base, abs=1e-9
        )
    _pass("vote shift/scale invariance", "within 1e-9")


def test_worker_determinism():
    """1 vs 8 workers: bit-identical search results and tuning traces."""
    spec = SynthSpec(
        num_classes=5,
        dim=8,
        train_counts=(400,) * 5,
        dev_counts=(40,) * 5,
        test_counts=(10,) * 5,
        mean_scale=1.0,
        spread=1.0,
        bias_strength=0.8,
        label_noise=0.1,
        seed=99,
    )
    data = generate(spec)
    memory = build_memory(data.train, "train")
    one = batch_search(memory, data.dev.embeddings, k=64, workers=1)
    eight = batch_search(memory, data.dev.embeddings, k=64, workers=8)
    assert one == eight
    space = SearchSpace(k_grid=(2, 8, 32), t_grid=(0.05, 0.3, 0.9))
    tune_one = greedy_search(memory, data.dev, data.dev_probs, space, workers=1)
    tune_eight = greedy_search(memory, data.dev, data.dev_probs, space, workers=8)
    assert tune_one == tune_eight
    _pass("worker-count determinism", "search and tuning bit-identical")


def test_metrics_fixtures_and_accuracy_property():
    vocab = LabelVocab(names=("A", "B"))
    report = evaluate(
        dict(zip("wxyz", [0, 0, 1, 1])), dict(zip("wxyz", [0, 1, 1, 1])), vocab
    )
    assert report.micro_f1 == pytest.approx(0.75)
    assert report.per_class[0].f1 == pytest.approx(2 / 3)
    assert report.per_class[1].f1 == pytest.approx(0.8)

    vocab_n = LabelVocab(names=("A", "B", "N"), negative_label=2)
    report_n = evaluate(
        dict(zip("123", [0, 2, 2])),
        dict(zip("123", [0, 0, 2])),
        vocab_n,
        exclude_negative=True,
    )
    assert report_n.micro_precision == pytest.approx(0.5)
    assert report_n.micro_recall == pytest.approx(1.0)
    assert report_n.micro_f1 == pytest.approx(2 / 3)

    rng = np.random.default_rng(8)
    for _ in range(500):
        n = int(rng.integers(1, 80))
        c = int(rng.integers(2, 7))
        gold = rng.integers(0, c, size=n)
        pred = rng.integers(0, c, size=n)
        micro = micro_f1_from_arrays(gold, pred, c)
        assert micro == pytest.approx(float((gold == pred).mean()), abs=1e-12)
    _pass("metrics fixtures and micro==accuracy", "500 random instances")


# Frozen from the implementation on the fixed seeds below; the qualitative
# gates (gain >= 2 points, tail improvement, margin monotonicity) are the
# actual criteria, the frozen numbers pin against silent drift.
LONGTAIL_FROZEN = {
    "base_micro": 0.8429237947122862,
    "system_micro": 0.9533437013996889,
    "tail_base": 0.6340163338062498,
    "tail_system": 0.8123623703156518,
}

LOW_RESOURCE_FROZEN = [
    # (fraction, base proxy micro F1, tuned system micro F1)
    (0.01, 0.40333333333333327, 0.6483333333333333),
    (0.1, 0.6383333333333333, 0.6833333333333333),
    (0.5, 0.6683333333333333, 0.6833333333333333),
    (1.0, 0.6966666666666667, 0.6966666666666667),
]


def test_longtail_gain():
    """Skewed classes + majority-biased base: tuned system gains >= 2 points
    micro and improves mean tail-class F1; < 60 s."""
    start = time.time()
    train_counts = (3862, 1800, 1200, 900, 600, 280, 268, 250, 166, 125, 100, 61)
    eval_counts = tuple(max(8, c // 15) for c in train_counts)
    spec = SynthSpec(
        num_classes=12,
        dim=16,
        train_counts=train_counts,
        dev_counts=eval_counts,
        test_counts=eval_counts,
        mean_scale=1.2,
        spread=1.0,
        bias_strength=1.5,
        label_noise=0.1,
        seed=20,
    )
    data = generate(spec)
    memory = build_memory(data.train, "train")
    tuned = greedy_search(memory, data.dev, data.dev_probs, workers=2)
    gold = {r: int(l) for r, l in zip(data.test.embeddings.ids, data.test.labels)}
    base_preds = {r: int(np.argmax(data.test_probs.row(r))) for r in data.test_probs.ids}
    base_report = evaluate(gold, base_preds, data.vocab)
    dists = interpolated_distributions(
        memory, data.test, data.test_probs, tuned.best, workers=2, exclude_self=False
    )
    sys_preds = {r: int(np.argmax(d)) for r, d in dists.items()}
    sys_report = evaluate(gold, sys_preds, data.vocab)
    rows = longtail_report(
        sys_report, base_report, {c: n for c, n in enumerate(train_counts)}, threshold=300
    )
    tail_base = float(np.mean([r.baseline_f1 for r in rows]))
    tail_sys = float(np.mean([r.system_f1 for r in rows]))

    assert sys_report.micro_f1 - base_report.micro_f1 >= 0.02
    assert tail_sys > tail_base
    assert base_report.micro_f1 == pytest.approx(LONGTAIL_FROZEN["base_micro"], abs=5e-3)
    assert sys_report.micro_f1 == pytest.approx(LONGTAIL_FROZEN["system_micro"], abs=5e-3)
    assert tail_base == pytest.approx(LONGTAIL_FROZEN["tail_base"], abs=5e-3)
    assert tail_sys == pytest.approx(LONGTAIL_FROZEN["tail_system"], abs=5e-3)
    elapsed = time.time() - start
    assert elapsed < 60.0
    _pass(
        "long-tail gain",
        f"micro {base_report.micro_f1:.4f}->{sys_report.micro_f1:.4f}, "
        f"tail {tail_base:.4f}->{tail_sys:.4f}, {elapsed:.1f}s",
    )


def test_low_resource_margins():
    """Large clean extra-supervision memory: the tuned system's margin over a
    fraction-trained base proxy grows monotonically as the fraction shrinks."""
    spec = SynthSpec(
        num_classes=10,
        dim=16,
        train_counts=(200,) * 10,
        dev_counts=(40,) * 10,
        test_counts=(60,) * 10,
        ds_counts=(1500,) * 10,
        mean_scale=0.6,
        spread=1.0,
        seed=31,
    )
    data = generate(spec)
    ds_memory = build_memory(data.ds, "ds")
    proxy = dict(base_temperature=0.25, bias_strength=1.0, label_noise=0.1, seed=3)
    margins = []
    for fraction, frozen_base, frozen_sys in LOW_RESOURCE_FROZEN:
        sub = subsample(data.train, fraction, seed=5)
        dev_probs = centroid_base_probs(sub, data.dev.embeddings, data.vocab, **proxy)
        test_probs = centroid_base_probs(sub, data.test.embeddings, data.vocab, **proxy)
        base_f1 = micro_f1_from_arrays(
            data.test.labels, np.argmax(test_probs.rows, axis=1), 10
        )
        tuned = greedy_search(ds_memory, data.dev, dev_probs, workers=2)
        dists = interpolated_distributions(
            ds_memory, data.test, test_probs, tuned.best, workers=2, exclude_self=False
        )
        preds = np.array([np.argmax(dists[r]) for r in data.test.embeddings.ids])
        sys_f1 = micro_f1_from_arrays(data.test.labels, preds, 10)
        assert base_f1 == pytest.approx(frozen_base, abs=5e-3)
        assert sys_f1 == pytest.approx(frozen_sys, abs=5e-3)
        margins.append(sys_f1 - base_f1)
    assert margins[0] > 0.0, "system must beat the 1% proxy"
    assert all(a > b for a, b in zip(margins, margins[1:])), margins
    _pass(
        "low-resource margins",
        "margins " + ", ".join(f"{m:.3f}" for m in margins) + " over 1%..100%",
    )


@pytest.mark.slow
def test_throughput():
    """1,000 queries, dim 768, 100K rows, k=256: <= 60 s single worker,
    <= 10 s with 8 workers (sized for an 8-core host)."""
    rng = np.random.default_rng(0)
    n, dim, nq, k = 100_000, 768, 1_000, 256
    vocab = LabelVocab(names=tuple(f"c{i}" for i in range(5)))
    embeddings = EmbeddingSet(
        dim=dim,
        ids=tuple(f"m{i}" for i in range(n)),
        vectors=rng.standard_normal((n, dim)),
    )
    labeled = LabeledSet(
        embeddings=embeddings, labels=rng.integers(0, 5, size=n), vocab=vocab
    )
    memory = build_memory(labeled, "train")
    queries = EmbeddingSet(
        dim=dim,
        ids=tuple(f"q{i}" for i in range(nq)),
        vectors=rng.standard_normal((nq, dim)),
    )
    start = time.time()
    single = batch_search(memory, queries, k=k, workers=1)
    single_s = time.time() - start
    start = time.time()
    eight = batch_search(memory, queries, k=k, workers=8)
    eight_s = time.time() - start
    assert all(len(nl) == k for nl in single)
    assert single == eight
    assert single_s <= 60.0, f"single worker took {single_s:.1f}s"
    assert eight_s <= 10.0, f"8 workers took {eight_s:.1f}s"
    _pass("throughput", f"single {single_s:.1f}s, 8 workers {eight_s:.1f}s")


def test_tuning_trace_and_cache():
    """Default grids: 8x10 + 11 trace points and 11 alpha points; the shared
    neighbor-cache path matches per-k re-search bit-for-bit on 1,000 dev rows."""
    spec = SynthSpec(
        num_classes=5,
        dim=8,
        train_counts=(600,) * 5,
        dev_counts=(200,) * 5,
        test_counts=(10,) * 5,
        mean_scale=1.0,
        spread=1.0,
        bias_strength=0.5,
        label_noise=0.05,
        seed=55,
    )
    data = generate(spec)
    assert len(data.dev) == 1000
    memory = build_memory(data.train, "train")
    space = SearchSpace()
    result = greedy_search(memory, data.dev, data.dev_probs, space, workers=2)
    assert len(result.trace) == 8 * 10 + 11

    gold = {r: int(l) for r, l in zip(data.dev.embeddings.ids, data.dev.labels)}
    side = interpolated_distributions(memory, data.dev, data.dev_probs, result.best, workers=2)
    _, alpha_trace = tune_alpha(side, side, gold, space.alpha_grid)
    assert len(alpha_trace) == 11

    cache = batch_search(
        memory, data.dev.embeddings, max(space.k_grid), exclude_self=True, workers=2
    )
    checked = 0
    for k in space.k_grid:
        fresh = batch_search(memory, data.dev.embeddings, k, exclude_self=True, workers=2)
        for t in space.t_grid:
            for nf, nc in zip(fresh, cache):
                a = knn_distribution(nf, memory.vocab, t)
                b = knn_distribution(nc.prefix(k), memory.vocab, t)
                assert np.array_equal(a, b)
                checked += 1
    _pass("tuning trace and neighbor cache", f"{checked} distributions bit-identical")
