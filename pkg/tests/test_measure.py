import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import greedy_grid_distance, lp_distance, random_probability
from qsmf.errors import DomainError, MassMismatch, NonProbabilityMeasure
from qsmf.measure import (SignedAtomicMeasure, bl_distance, cdf, combine, compact, format_density_csv, is_probability,
                          mean_degree, quantile, read_density_csv, require_probability, total_mass, variance_degree,
                          write_density_csv)

M = SignedAtomicMeasure

positions = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def probabilities(draw, max_atoms=12):
    k = draw(st.integers(1, max_atoms))
    pos = draw(st.lists(positions, min_size=k, max_size=k))
    w = draw(st.lists(st.floats(1e-3, 1.0), min_size=k, max_size=k))
    w = np.asarray(w) / np.sum(w)
    return M(pos, w)


@st.composite
def zero_mass_signed(draw):
    k = draw(st.integers(1, 10))
    pos = draw(st.lists(positions, min_size=k, max_size=k))
    w = np.asarray(draw(st.lists(st.floats(-1.0, 1.0), min_size=k, max_size=k)))
    return M(pos, w - w.mean())


# -- construction


def test_atoms_sorted_and_merged():
    m = M([0.8, 0.3, 0.8], [0.25, 0.5, 0.25])
    assert m.positions.tolist() == [0.3, 0.8]
    assert m.masses.tolist() == [0.5, 0.5]


def test_zero_masses_dropped():
    assert len(M([0.1, 0.2], [0.0, 1.0])) == 1


def test_positions_outside_unit_interval_rejected():
    with pytest.raises(DomainError):
        M([1.5], [1.0])
    with pytest.raises(DomainError):
        M([float("nan")], [1.0])


def test_measure_is_immutable():
    m = M([0.1], [1.0])
    with pytest.raises(ValueError):
        m.masses[0] = 2.0


def test_pickle_round_trip():
    m = M([0.1, 0.4], [0.3, 0.7])
    assert pickle.loads(pickle.dumps(m)) == m


# -- scalar functionals


@pytest.mark.parametrize("m, expected", [
    (M(), 0.0),
    (M([0.3, 0.8], [0.5, 0.5]), 1.0),
    (M([0.2, 0.6], [0.25, -0.25]), 0.0),
])
def test_total_mass(m, expected):
    assert total_mass(m) == expected


@pytest.mark.parametrize("m, expected", [
    (M.delta(0.7), 0.7),
    (M([0.0, 1.0], [0.5, 0.5]), 0.5),
    (M([0.2, 0.6], [0.25, 0.75]), 0.5),
])
def test_mean_degree(m, expected):
    assert mean_degree(m) == pytest.approx(expected, abs=1e-15)


def test_variance_examples():
    assert variance_degree(M.delta(0.7)) == 0.0
    assert variance_degree(M([0.0, 1.0], [0.5, 0.5])) == pytest.approx(0.25, abs=1e-15)
    grid = M(np.linspace(0, 1, 101), np.full(101, 1 / 101))
    # discrete uniform on 101 points: (n+2)/(12 n) with n = 100 intervals
    assert variance_degree(grid) == pytest.approx(102 / 1200, abs=1e-12)
    assert abs(variance_degree(grid) - 0.085) <= 0.001


def test_variance_requires_probability():
    with pytest.raises(NonProbabilityMeasure):
        variance_degree(M([0.2], [0.5]))


def test_cdf_examples():
    d = M.delta(0.5)
    assert cdf(d, 0.5) == 1.0
    assert cdf(d, 0.49) == 0.0
    assert cdf(M([0.3, 0.8], [0.5, 0.5]), 0.6) == 0.5
    with pytest.raises(DomainError):
        cdf(d, 1.2)


def test_quantile_examples():
    m = M([0.3, 0.8], [0.5, 0.5])
    assert quantile(m, 0.25) == 0.3
    assert quantile(m, 0.5) == 0.8  # plateau: F(0.3) = 0.5 is not above 0.5
    assert quantile(m, 0.0) == 0.3
    for theta in (0.0, 0.3, 0.999999):
        assert quantile(M.delta(0.42), theta) == 0.42


def test_quantile_rejects_bad_input():
    with pytest.raises(DomainError):
        quantile(M.delta(0.1), 1.0)
    with pytest.raises(NonProbabilityMeasure):
        quantile(M([0.1, 0.2], [0.5, 0.2]), 0.1)


def test_require_probability_clamps_round_off():
    m = M([0.1, 0.2, 0.3], [-1e-13, 0.5, 0.5 + 1e-13])
    out = require_probability(m)
    assert out.masses.min() >= 0.0
    assert not is_probability(M([0.1, 0.2], [-1e-9, 1 + 1e-9]))
    with pytest.raises(NonProbabilityMeasure):
        require_probability(M())


# -- distance


@pytest.mark.parametrize("g, h, expected", [
    (M.delta(0.2), M.delta(0.7), 0.5),
    (M([0.0, 1.0], [0.5, 0.5]), M.delta(0.5), 0.5),
    (M([0.3, 0.8], [0.4, 0.6]), M([0.3, 0.8], [0.4, 0.6]), 0.0),
])
def test_bl_distance_examples(g, h, expected):
    assert bl_distance(g, h) == pytest.approx(expected, abs=1e-15)


def test_bl_distance_requires_matching_mass():
    with pytest.raises(MassMismatch):
        bl_distance(M.delta(0.1), M([0.1], [0.5]))


def test_bl_distance_signed_measures():
    # empirical of the auxiliary process can carry negative atoms
    g = M([0.1, 0.5, 0.9], [0.6, -0.2, 0.6])
    h = M.delta(0.5)
    assert bl_distance(g, h) == pytest.approx(lp_distance(g.positions, g.masses, h.positions, h.masses), abs=1e-9)


def test_bl_distance_matches_lp_oracle_small_sample():
    rng = np.random.default_rng(11)
    for _ in range(50):
        gp, gm = random_probability(rng)
        hp, hm = random_probability(rng)
        ours = bl_distance(M(gp, gm), M(hp, hm))
        assert ours == pytest.approx(lp_distance(gp, gm, hp, hm), abs=1e-6)


def test_bl_distance_matches_greedy_grid_oracle():
    rng = np.random.default_rng(12)
    for _ in range(50):
        gp, gm = random_probability(rng)
        hp, hm = random_probability(rng)
        ours = bl_distance(M(gp, gm), M(hp, hm))
        assert ours == pytest.approx(greedy_grid_distance(gp, gm, hp, hm), abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(probabilities(), probabilities(), probabilities())
def test_metric_axioms(g, h, k):
    assert bl_distance(g, g) == 0.0
    assert bl_distance(g, h) == pytest.approx(bl_distance(h, g), abs=1e-15)
    assert bl_distance(g, k) <= bl_distance(g, h) + bl_distance(h, k) + 1e-12


@settings(max_examples=200, deadline=None)
@given(zero_mass_signed())
def test_distance_bounded_by_total_variation(m):
    # a zero-mass signed measure compared with the empty measure
    assert bl_distance(m, M()) <= np.sum(np.abs(m.masses)) + 1e-12


# -- quantile sampling


@settings(max_examples=100, deadline=None)
@given(probabilities())
def test_quantile_inverts_cdf(m):
    for x, w in zip(m.positions, m.masses):
        f = cdf(m, x)
        for frac in (1e-9, 0.5, 1.0 - 1e-9):
            theta = f - frac * w
            if 0.0 <= theta < f:
                assert quantile(m, theta) == x
        if f - 1e-15 >= 0.0 and w > 1e-15:
            assert quantile(m, f - 1e-15) == x


def test_quantile_sampling_frequencies():
    rng = np.random.default_rng(3)
    pos, mass = random_probability(rng, max_atoms=10)
    m = M(pos, mass)
    n = 100_000
    draws = np.array([quantile(m, t) for t in rng.random(n)])
    for x, w in zip(m.positions, m.masses):
        freq = np.count_nonzero(draws == x) / n
        assert abs(freq - w) < 0.01


# -- linear operations


def test_combine_examples():
    g = M([0.1, 0.4], [0.3, 0.7])
    assert combine(1.0, g, 0.0, M.delta(0.9)) == g
    assert combine(0.5, M.delta(0.2), 0.5, M.delta(0.2)) == M.delta(0.2)
    assert len(combine(1.0, M.delta(0.2), -1.0, M.delta(0.2))) == 0


def test_compact_examples():
    m = M([0.2, 0.5], [0.5, 0.5])
    assert compact(m, 0.0) is m
    merged = compact(M([0.5, 0.5 + 1e-12], [0.5, 0.5]), 1e-9)
    assert len(merged) == 1
    assert abs(merged.positions[0] - 0.5) <= 1e-12
    assert merged.masses[0] == pytest.approx(1.0, abs=1e-15)
    two = compact(M([0.2, 0.21], [0.3, 0.7]), 0.05)
    assert two.positions[0] == pytest.approx(0.207, abs=1e-15)
    assert two.masses[0] == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DomainError):
        compact(m, -1.0)


def test_compact_merges_chains():
    m = M([0.1, 0.105, 0.11, 0.5], [0.25, 0.25, 0.25, 0.25])
    out = compact(m, 0.006)
    assert out.positions.tolist() == pytest.approx([0.105, 0.5])


@settings(max_examples=200, deadline=None)
@given(probabilities(), probabilities(), st.floats(-2, 2), st.floats(-2, 2), st.floats(0.0, 0.2))
def test_combine_and_compact_conserve(g, h, a, b, tol):
    c = combine(a, g, b, h)
    assert c.total == pytest.approx(a + b, abs=1e-12)
    k = compact(g, tol)
    assert k.total == pytest.approx(g.total, abs=1e-12)
    assert mean_degree(k) == pytest.approx(mean_degree(g), abs=1e-12)
    assert np.all(np.diff(k.positions) > 0)


# -- csv


def test_density_csv_round_trip(tmp_path):
    m = M([0.1, 1 / 3, 0.9], [0.2, 0.3, 0.5])
    path = tmp_path / "d.csv"
    write_density_csv(path, [((0.5, 7), m)], ("snapshot_time", "k"))
    text = path.read_text()
    assert text.splitlines()[0] == "snapshot_time,k,position,mass"
    assert text.splitlines()[2].startswith("0.5,7,0.33333333333333331,")
    assert read_density_csv(path) == m


def test_density_csv_values_have_full_precision():
    x = 0.1 + 0.2
    line = format_density_csv([((), M.delta(x))]).splitlines()[1]
    assert float(line.split(",")[0]) == x
    assert line.split(",")[1] == "1.0"


def test_read_density_csv_requires_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_density_csv(path)


def test_bl_is_wasserstein_for_shifted_delta():
    for a, b in [(0.0, 1.0), (0.25, 0.26), (0.9, 0.1)]:
        assert math.isclose(bl_distance(M.delta(a), M.delta(b)), abs(a - b), abs_tol=1e-15)
