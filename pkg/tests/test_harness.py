import math

import numpy as np
import pytest

from qsmf.errors import DegenerateFit, DomainError, InsufficientReplicas, LambdaOutOfRange, ValidationError
from qsmf.harness import (CHANNEL_PRIMARY, CHANNEL_TIME, CHANNEL_UNCOUPLED, REPORT_HEADER, ExperimentConfig, ReportRow,
                          default_benchmark, fit_rate, resolve_workers, run_convergence, run_coupled, run_lln,
                          run_time_sync, stream_generator, triangle_decomposition, update_count)
from qsmf.measure import SignedAtomicMeasure as M
from qsmf.model import ModelParams, ResponseSpec

HILL = ResponseSpec.hill(2.0, 0.4)
IDENTITY = ResponseSpec.identity()


def small(**kw):
    base = dict(params=ModelParams(), spec=HILL, init=M([0.1, 0.9], [0.5, 0.5]), n_ladder=(20, 40, 80),
                replicas=6, t_eval=0.5, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def fixed_point(**kw):
    return small(spec=IDENTITY, init=M.delta(0.35), **kw)


# -- update counts


def test_update_count_examples():
    params = ModelParams(s=0.3, b=2.0, c=1.0, lam=0.0, n=50)
    assert update_count(M.delta(0.4), params, HILL, 0.0) == 0
    assert update_count(M.delta(0.0), params, HILL, 1.3) == math.floor(50 * 1.3)
    equal = ModelParams(s=0.3, b=1.0, c=1.0, lam=0.8, n=70)
    assert update_count(M([0.2, 0.7], [0.5, 0.5]), equal, HILL, 2.0) == 140
    with pytest.raises(DomainError):
        update_count(M.delta(0.4), params, HILL, -1.0)


def test_update_count_follows_mean_increments():
    params = ModelParams(s=0.5, b=2.0, c=1.0, lam=0.3, n=30)
    eta = M.delta(0.6)
    # R(q) = q keeps <p> = 0.6 fixed, so the increment is constant
    inc = 1.0 / (30 * (1 + 0.5 * 0.6))
    assert update_count(eta, params, IDENTITY, 1.0) == math.floor(1.0 / inc + 1e-9)


# -- fitting


def test_fit_rate_examples():
    xs = [100, 200, 400, 800]
    slope, intercept, se = fit_rate([(x, 1 / x) for x in xs])
    assert slope == pytest.approx(-1.0, abs=1e-12)
    assert se == pytest.approx(0.0, abs=1e-12)
    slope, intercept, _ = fit_rate([(x, 3 * x ** -0.25) for x in xs])
    assert slope == pytest.approx(-0.25, abs=1e-12)
    assert intercept == pytest.approx(math.log(3), abs=1e-12)


def test_fit_rate_degenerate_inputs():
    with pytest.raises(DegenerateFit):
        fit_rate([(1, 1), (2, 0.5)])
    with pytest.raises(DegenerateFit):
        fit_rate([(1, 1), (1, 2), (2, 0.5)])
    notes = []
    with pytest.raises(DegenerateFit):
        fit_rate([(1, 1), (2, 0.5), (4, 0.0)], notes)
    assert notes and "excluded" in notes[0]
    with pytest.raises(DomainError):
        fit_rate([(0, 1), (2, 0.5), (4, 0.2)])


# -- streams


def test_adjacent_streams_do_not_collide():
    base = stream_generator(0, 100, 0, CHANNEL_PRIMARY).bit_generator.random_raw(1_000_000)
    for other in [(100, 1, CHANNEL_PRIMARY), (100, 0, CHANNEL_UNCOUPLED), (100, 0, CHANNEL_TIME), (200, 0, 0)]:
        raw = stream_generator(0, *other).bit_generator.random_raw(1_000_000)
        assert np.intersect1d(base, raw).size == 0


def test_streams_are_reproducible():
    a = stream_generator(7, 100, 3, 1).random(10)
    b = stream_generator(7, 100, 3, 1).random(10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, stream_generator(8, 100, 3, 1).random(10))


def test_resolve_workers():
    assert resolve_workers(None) == 1
    assert resolve_workers(3) == 3
    assert resolve_workers(0) >= 1
    with pytest.raises(ValueError):
        resolve_workers(-1)


# -- configuration and reports


def test_experiment_config_validation():
    with pytest.raises(ValidationError):
        small(n_ladder=(40, 20))
    with pytest.raises(ValidationError):
        small(replicas=1)
    with pytest.raises(ValidationError):
        small(t_eval=0.0)
    with pytest.raises(ValidationError):
        small(formulation="both")


def test_default_benchmark_values():
    cfg = default_benchmark()
    assert cfg.params == ModelParams(s=0.2, b=1.0, c=1.0, lam=0.3)
    assert cfg.spec == ResponseSpec.hill(2.0, 0.4)
    assert cfg.n_ladder == (100, 200, 400, 800, 1600)
    assert cfg.replicas == 200 and cfg.t_eval == 1.0


def test_report_row_format():
    assert ReportRow("lln", 100, 25, 0.5, 0.01, 200).csv() == "lln,100,25,0.5,0.01,200"
    assert ReportRow("convergence_slope", None, 1.0, -0.5, 0.02, 5).csv() == "convergence_slope,,1.0,-0.5,0.02,5"


# -- experiments


def test_convergence_homogeneous_is_zero():
    report = run_convergence(fixed_point())
    assert [r.mean_distance for r in report.rows] == [0.0, 0.0, 0.0]
    assert not report.checks["strictly_decreasing"]
    assert report.notes  # zero distances cannot be fitted on a log scale


def test_convergence_report_layout():
    report = run_convergence(small())
    lines = report.to_csv().splitlines()
    assert lines[0] == REPORT_HEADER
    assert [line.split(",")[0] for line in lines[1:]] == ["convergence"] * 3 + ["convergence_slope"]
    assert lines[-1].split(",")[1] == ""
    assert "check strictly_decreasing" in report.summary()


def test_reports_independent_of_worker_count():
    cfg = small(replicas=8)
    assert run_convergence(cfg, workers=1).to_csv() == run_convergence(cfg, workers=2).to_csv()
    assert run_lln(cfg, workers=1).to_csv() == run_lln(cfg, workers=3).to_csv()


def test_lln_zero_steps_and_fixed_point():
    report = run_lln(small(), k_schedule=[0])
    assert all(r.mean_distance == 0.0 for r in report.rows)
    report = run_lln(fixed_point(), k_schedule=[5, 40])
    assert all(r.mean_distance == 0.0 for r in report.rows)


def test_lln_rejects_lambda_above_half():
    with pytest.raises(LambdaOutOfRange):
        run_lln(small(params=ModelParams(lam=0.7)))


def test_lln_default_schedule():
    report = run_lln(small(n_ladder=(40,)))
    assert [r.k_or_t for r in report.rows] == [10, 20, 40, 80]
    assert set(report.checks) == {"ratio_bounded_along_k", "ratio_bounded_along_n"}


def test_coupled_zero_steps_and_fixed_point():
    report = run_coupled(small(), k_end=0)
    coupled = [r for r in report.rows if r.experiment == "coupled"]
    assert all(r.mean_distance == 0.0 for r in coupled)
    report = run_coupled(fixed_point(), k_end=30)
    assert all(r.mean_distance == 0.0 for r in report.rows)


def test_coupled_beats_uncoupled():
    report = run_coupled(small(replicas=10))
    assert report.checks["finite"]
    assert report.checks["coupled_below_uncoupled"]
    assert set(report.gronwall) == {20, 40, 80}


def test_time_sync_at_zero():
    report = run_time_sync(small(), t=0.0)
    assert all(r.mean_distance == 0.0 for r in report.rows)
    assert all(m == 0 for m in report.update_counts.values())


def test_time_sync_constant_rate():
    cfg = small(params=ModelParams(s=0.3, b=1.0, c=1.0, lam=0.3), n_ladder=(100, 200), replicas=20, t_eval=1.0)
    report = run_time_sync(cfg)
    assert report.update_counts == {100: 100, 200: 200}
    assert all(r.mean_distance == 0.0 for r in report.rows)
    assert report.passed


def test_failed_replica_is_reported():
    # population formulation with lambda > 1/2 fails inside every replica
    cfg = small(params=ModelParams(lam=0.7), formulation="population", replicas=2, n_ladder=(10, 20, 30))
    with pytest.raises(InsufficientReplicas):
        run_convergence(cfg, reference=M.delta(0.5))


def test_triangle_decomposition_holds():
    cfg = small()
    for replica in range(4):
        terms = triangle_decomposition(cfg, 60, replica)
        assert terms.slack >= -1e-12
        assert all(v >= 0 for v in terms)
