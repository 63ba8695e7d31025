import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdefs import de

BITS3 = [np.array(b, dtype=np.uint8) for b in itertools.product((0, 1), repeat=3)]


def diff_truth(a, b):
    return [0 if x == y else x for x, y in zip(a, b)]


def mutate_truth(d, p):
    return [1 if x == 1 else y for x, y in zip(d, p)]


def test_difference_vector_examples():
    assert de.difference_vector([1, 0, 1], [1, 1, 0]).tolist() == [0, 0, 1]
    assert not de.difference_vector([1, 0, 1], [1, 0, 1]).any()


def test_mutate_examples():
    assert de.mutate([0, 0, 1], [1, 0, 0]).tolist() == [1, 0, 1]
    assert de.mutate([0, 0, 0], [1, 0, 1]).tolist() == [1, 0, 1]


def test_operators_match_truth_tables():
    for a, b in itertools.product(BITS3, BITS3):
        assert de.difference_vector(a, b).tolist() == diff_truth(a.tolist(), b.tolist())
        assert de.mutate(a, b).tolist() == mutate_truth(a.tolist(), b.tolist())


@pytest.mark.parametrize("op", [de.difference_vector, de.mutate])
def test_length_mismatch(op):
    with pytest.raises(ValueError):
        op([1, 0], [1, 0, 1])


def test_crossover_cr1_is_mutant():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = rng.integers(0, 2, 17, dtype=np.uint8)
        c = rng.integers(0, 2, 17, dtype=np.uint8)
        assert np.array_equal(de.crossover(m, c, 1.0, rng), m)


def test_crossover_identical_sources():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 2, 50, dtype=np.uint8)
    assert np.array_equal(de.crossover(a, a.copy(), 0.3, rng), a)


def test_crossover_rate_fraction():
    # mutant all ones, current all zeros: output ones are mutant-sourced bits
    frac = de.crossover(np.ones(1000, np.uint8), np.zeros(1000, np.uint8), 0.5,
                        np.random.default_rng(2)).mean()
    assert 0.45 <= frac <= 0.56


def test_crossover_forces_one_mutant_bit():
    rng = np.random.default_rng(3)
    for _ in range(100):
        out = de.crossover(np.ones(20, np.uint8), np.zeros(20, np.uint8), 1e-9, rng)
        assert out.sum() >= 1


def test_crossover_rejects_bad_rate():
    with pytest.raises(ValueError):
        de.crossover([1], [0], 0.0, np.random.default_rng())


def test_init_population():
    cfg = de.DeConfig(pop_size=4)
    p = de.init_population(cfg, 3, np.random.default_rng(5))
    assert p.shape == (4, 3) and set(np.unique(p)) <= {0, 1}
    assert np.array_equal(p, de.init_population(cfg, 3, np.random.default_rng(5)))
    big = de.init_population(de.DeConfig(pop_size=20), 400, np.random.default_rng(6))
    # 8000 fair bits: sd of the mean is 0.0056, so [0.4, 0.6] is a ~18 sigma band
    assert 0.4 <= big.mean() <= 0.6
    with pytest.raises(ValueError):
        de.init_population(cfg, 0, np.random.default_rng())


@pytest.mark.parametrize("kw", [dict(pop_size=3), dict(generations=0),
                                dict(crossover_rate=0.0), dict(crossover_rate=1.5)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        de.DeConfig(**kw)


def test_select():
    table = {(1, 1): 0.2, (0, 1): 0.1, (1, 0): 0.2}
    f = lambda m: table[tuple(int(v) for v in m)]
    w, fit, n = de.select(np.array([1, 1]), 0.2, np.array([0, 1]), f)
    assert w.tolist() == [0, 1] and fit == 0.1 and n == 1
    w, fit, _ = de.select(np.array([1, 1]), 0.2, np.array([1, 0]), f)
    assert w.tolist() == [1, 1] and fit == 0.2
    pop = lambda m: np.sum(m) / 4
    w, fit, _ = de.select(np.array([1, 1, 1, 1]), 1.0, np.array([0, 1, 0, 0]), pop)
    assert w.tolist() == [0, 1, 0, 0] and fit == 0.25


def two_bits(m):
    return abs(int(np.sum(m)) - 2)


def test_run_finds_two_bit_masks():
    # exhaustive oracle over all 16 masks: the minimum of |popcount - 2| is 0
    assert min(two_bits(np.array(b)) for b in itertools.product((0, 1), repeat=4)) == 0
    hits = 0
    for s in range(100):
        mask, best, hist = de.run(de.DeConfig(8, 50, 1.0, s), 4, two_bits)
        hits += best == 0
        assert np.all(np.diff(hist.best_fitness) <= 0)
    assert hits >= 95


def test_run_constant_fitness_is_fixed_point():
    seen = []

    def cb(gen, pop):
        seen.append(pop.masks.copy())

    mask, best, hist = de.run(de.DeConfig(6, 5, 1.0, 0), 8, lambda m: 0.5, callback=cb)
    assert best == 0.5
    init = de.init_population(de.DeConfig(6, 5, 1.0, 0), 8, np.random.default_rng(0))
    for p in seen:
        assert np.array_equal(p, init)


def test_identical_population_fixed_point():
    # equal donors give a zero difference, so the mutant is the donor itself
    cur = np.array([1, 0, 1, 1, 0], np.uint8)
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = de.difference_vector(cur, cur)
        t = de.crossover(de.mutate(d, cur), cur, 1.0, rng)
        assert np.array_equal(t, cur)


def test_donors_distinct_over_trace():
    trace = []
    de.run(de.DeConfig(5, 30, 0.7, 11), 6, lambda m: float(m.sum()), trace=trace)
    assert len(trace) == 5 * 30
    for _, k, u1, u2, u3 in trace:
        assert len({k, u1, u2, u3}) == 4


def test_determinism_and_evaluation_bound():
    f = lambda m: float(np.sum(m * np.arange(m.size))) / 100
    a = de.run(de.DeConfig(10, 20, 0.6, 4), 12, f)
    b = de.run(de.DeConfig(10, 20, 0.6, 4), 12, f)
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]
    assert a[2].best_fitness == b[2].best_fitness
    assert a[2].evaluations[-1] <= 10 * 21


def test_cache_avoids_repeat_calls():
    calls = []

    def f(m):
        calls.append(1)
        return float(m.sum())

    _, _, hist = de.run(de.DeConfig(8, 20, 1.0, 0), 4, f)
    assert len(calls) == hist.evaluations[-1] <= 16


def test_map_fn_does_not_change_result():
    f = lambda m: float((m * np.arange(1, m.size + 1)).sum() % 7)
    a = de.run(de.DeConfig(8, 10, 0.5, 1), 9, f)
    b = de.run(de.DeConfig(8, 10, 0.5, 1), 9, f, map_fn=lambda fn, xs: [fn(x) for x in reversed(xs)][::-1])
    assert np.array_equal(a[0], b[0]) and a[2].best_fitness == b[2].best_fitness


def test_failure_keeps_partial_history():
    state = {"n": 0}

    def f(m):
        state["n"] += 1
        if state["n"] > 12:
            raise RuntimeError("boom")
        return float(m.sum())

    with pytest.raises(de.DeRunError) as ei:
        de.run(de.DeConfig(4, 50, 0.5, 0), 10, f)
    assert len(ei.value.history.best_fitness) >= 1


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 9), st.integers(1, 12), st.floats(0.05, 1.0), st.integers(0, 10**6))
def test_history_monotone_and_closed(pop, d, cr, seed):
    w = np.random.default_rng(seed).random(d)
    mask, best, hist = de.run(de.DeConfig(pop, 8, cr, seed), d, lambda m: float(m @ w))
    assert np.all(np.diff(hist.best_fitness) <= 0)
    for m in hist.best_masks:
        assert m.shape == (d,) and set(np.unique(m)) <= {0, 1}


def test_history_csv_and_mask_strings(tmp_path):
    _, _, hist = de.run(de.DeConfig(4, 3, 1.0, 0), 5, lambda m: float(m.sum()))
    p = tmp_path / "h.csv"
    hist.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "generation,best_fitness,evaluations"
    assert len(lines) == 1 + 4
    m = np.array([1, 0, 0, 1], np.uint8)
    assert de.mask_to_str(m) == "1001"
    assert np.array_equal(de.mask_from_str("1001\n"), m)
    with pytest.raises(ValueError):
        de.mask_from_str("10a1")
