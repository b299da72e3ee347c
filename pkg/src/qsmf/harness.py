"""Replica farms, convergence statistics and report serialisation.

Every replica draws from its own generator,
``PCG64(SeedSequence(entropy=seed, spawn_key=(N, replica, channel)))``, so
a replica's result depends only on ``(seed, N, replica, channel)`` and
never on how replicas are scheduled.  Aggregates are formed in replica
order, which makes reports byte-identical for any worker count.

Channels: 0 is the primary stream (micro runs, and the auxiliary process
coupled to them); 1 drives the independent micro runs of the uncoupled
comparison; 2 drives the time-synchronisation runs.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from qsmf.auxiliary import run_aux_ensemble
from qsmf.errors import DegenerateFit, DomainError, InsufficientReplicas, ValidationError
from qsmf.measure import SignedAtomicMeasure, _insert, bl_distance, mean_degree, require_probability
from qsmf.meanfield import IntegratorConfig, mf_integrate
from qsmf.micro import (DrawStream, EventDraw, MicroState, empirical_density, event_law, net_change, run_micro,
                        run_micro_steps, sample_degrees, step_individual, step_population)
from qsmf.model import ModelParams, ResponseSpec, check_phi_lambda, phi_atoms

__all__ = [
    "STREAM_RULE",
    "CHANNEL_PRIMARY",
    "CHANNEL_UNCOUPLED",
    "CHANNEL_TIME",
    "stream_generator",
    "stream_for",
    "resolve_workers",
    "ExperimentConfig",
    "default_benchmark",
    "ReportRow",
    "ExperimentReport",
    "ConvergenceReport",
    "LLNReport",
    "CoupledReport",
    "TimeSyncReport",
    "update_count",
    "fit_rate",
    "run_convergence",
    "run_lln",
    "run_coupled",
    "run_time_sync",
    "TriangleTerms",
    "triangle_decomposition",
    "compare_formulations",
    "REPORT_HEADER",
]

STREAM_RULE = "numpy PCG64(SeedSequence(entropy=seed, spawn_key=(N, replica, channel)))"
CHANNEL_PRIMARY = 0
CHANNEL_UNCOUPLED = 1
CHANNEL_TIME = 2

REPORT_HEADER = "experiment,N,K_or_t,mean_distance,stderr,replicas"


def stream_generator(seed: int, n: int, replica: int, channel: int = CHANNEL_PRIMARY) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(n), int(replica), int(channel)))
    return np.random.Generator(np.random.PCG64(ss))


def stream_for(seed: int, n: int, replica: int, channel: int, lam: float) -> DrawStream:
    return DrawStream(stream_generator(seed, n, replica, channel), lam)


def resolve_workers(threads: int | None) -> int:
    """``None`` -> 1, ``0`` -> all CPUs, otherwise ``threads``."""
    if threads is None:
        return 1
    if threads < 0:
        raise ValueError("thread count must be non-negative")
    return threads or (os.cpu_count() or 1)


@dataclass(frozen=True)
class ExperimentConfig:
    params: ModelParams
    spec: ResponseSpec
    init: SignedAtomicMeasure
    n_ladder: tuple[int, ...] = (100, 200, 400, 800, 1600)
    replicas: int = 200
    t_eval: float = 1.0
    seed: int = 0
    integrator: IntegratorConfig = IntegratorConfig()
    formulation: str = "individual"

    def __post_init__(self):
        ladder = tuple(int(n) for n in self.n_ladder)
        object.__setattr__(self, "n_ladder", ladder)
        if not ladder or any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ValidationError("n_ladder must be non-empty and strictly increasing")
        if ladder[0] < 2:
            raise ValidationError("population sizes must be at least 2")
        if self.replicas < 2:
            raise ValidationError("replicas must be at least 2 for standard errors")
        if not self.t_eval > 0:
            raise ValidationError("t_eval must be positive")
        if self.formulation not in ("individual", "population"):
            raise ValidationError(f"unknown formulation {self.formulation!r}")
        require_probability(self.init)


def default_benchmark(seed: int = 0, replicas: int = 200) -> ExperimentConfig:
    """s=0.2, b=c=1, lam=0.3, hill response (2, 0.4), init half at 0.1 and half at 0.9."""
    return ExperimentConfig(
        params=ModelParams(s=0.2, b=1.0, c=1.0, lam=0.3, n=100),
        spec=ResponseSpec.hill(2.0, 0.4),
        init=SignedAtomicMeasure([0.1, 0.9], [0.5, 0.5]),
        n_ladder=(100, 200, 400, 800, 1600),
        replicas=replicas,
        t_eval=1.0,
        seed=seed,
    )


# ---------------------------------------------------------------- reports

def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


class ReportRow(NamedTuple):
    experiment: str
    n: int | None
    k_or_t: float
    mean_distance: float
    stderr: float
    replicas: int

    def csv(self) -> str:
        return ",".join([self.experiment, _num(self.n), _num(self.k_or_t), _num(self.mean_distance),
                         _num(self.stderr), _num(self.replicas)])


@dataclass
class ExperimentReport:
    experiment: str
    rows: list[ReportRow] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def csv_rows(self) -> list[str]:
        return [r.csv() for r in self.rows]

    def to_csv(self) -> str:
        return "\n".join([REPORT_HEADER, *self.csv_rows()]) + "\n"

    def summary_body(self) -> list[str]:
        return []

    def summary(self) -> str:
        lines = [f"experiment: {self.experiment}"]
        for r in self.rows:
            lines.append(f"  {r.experiment} N={r.n} K_or_t={_num(r.k_or_t)} "
                         f"mean={r.mean_distance:.6g} stderr={r.stderr:.3g} replicas={r.replicas}")
        lines.extend(self.summary_body())
        for name, ok in self.checks.items():
            lines.append(f"check {name}: {'PASS' if ok else 'FAIL'}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"


@dataclass
class ConvergenceReport(ExperimentReport):
    slope: float = math.nan
    intercept: float = math.nan
    slope_stderr: float = math.nan

    def csv_rows(self) -> list[str]:
        fit_row = ReportRow("convergence_slope", None, self.rows[0].k_or_t if self.rows else 0.0,
                            self.slope, self.slope_stderr, len(self.rows))
        return [r.csv() for r in self.rows] + [fit_row.csv()]

    def summary_body(self) -> list[str]:
        return [f"  fitted slope = {self.slope:.6g} +- {self.slope_stderr:.3g} (intercept {self.intercept:.6g})"]


@dataclass
class LLNReport(ExperimentReport):
    ratios: dict[tuple[int, int], float] = field(default_factory=dict)

    def summary_body(self) -> list[str]:
        return [f"  ratio N={n} K={k}: {v:.6g}" for (n, k), v in self.ratios.items()]


@dataclass
class CoupledReport(ExperimentReport):
    gronwall: dict[int, tuple[float, float]] = field(default_factory=dict)

    def summary_body(self) -> list[str]:
        return [f"  gronwall fit N={n}: a={a:.6g} const={c:.6g}" for n, (a, c) in self.gronwall.items()]


@dataclass
class TimeSyncReport(ExperimentReport):
    update_counts: dict[int, int] = field(default_factory=dict)
    mean_abs_gap: dict[int, float] = field(default_factory=dict)

    def summary_body(self) -> list[str]:
        return [f"  N={n}: M(t)={m} mean|kappa-M|={self.mean_abs_gap.get(n, math.nan):.6g}"
                for n, m in self.update_counts.items()]


# ---------------------------------------------------------------- helpers

def _mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    return float(np.mean(a)), float(np.std(a, ddof=1) / math.sqrt(a.size))


def _run_replicas(task: Callable, common, n_rep: int, workers: int) -> list:
    """Run ``task(common, indices)`` over all replicas; results in index order."""
    idx = list(range(n_rep))
    if workers <= 1:
        outcomes = task(common, idx)
    else:
        size = max(1, -(-n_rep // (4 * workers)))
        chunks = [idx[i:i + size] for i in range(0, n_rep, size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = [o for part in pool.map(partial(task, common), chunks) for o in part]
    failed = [(i, o) for i, o in zip(idx, outcomes) if isinstance(o, BaseException)]
    if failed:
        i, exc = failed[0]
        raise InsufficientReplicas(f"{len(failed)} of {n_rep} replicas failed; replica {i}: {exc!r}") from exc
    return outcomes


def _guard(fn: Callable, *args):
    try:
        return fn(*args)
    except Exception as exc:  # reported per replica, re-raised by the farm
        return exc


def update_count(eta0: SignedAtomicMeasure, params: ModelParams, spec: ResponseSpec, t: float) -> int:
    """Number of auxiliary update steps whose mean waiting times fit into ``t``.

    Increments ``1 / (N <phi>_k)`` are summed along the auxiliary average
    with compensated summation; a sum within ``1e-12 * t`` of ``t`` counts
    as not exceeding it.
    """
    if t < 0:
        raise DomainError("t must be non-negative")
    if t == 0:
        return 0
    eta = require_probability(eta0)
    n = params.n
    slope = params.s * (params.b - params.c)
    limit = t + 1e-12 * t
    pos, mass = eta.positions, eta.masses
    pbar = mean_degree(eta)
    total = 0.0
    comp = 0.0
    k = 0
    if slope != 0.0:
        check_phi_lambda(params)
    while True:
        inc = 1.0 / (n * (1.0 + slope * pbar))
        nxt = total + inc
        c = comp + ((total - nxt) + inc if abs(total) >= abs(inc) else (inc - nxt) + total)
        if nxt + c > limit:
            return k
        total, comp = nxt, c
        k += 1
        if slope != 0.0:
            # the rate depends on the average only through its mean degree
            ppos, pmass, j, _, _ = phi_atoms(pos, mass, pbar, params, spec)
            base = mass if ppos.size == pos.size else _insert(mass, j, 0.0)
            mass = (1.0 - 1.0 / n) * base + pmass / n
            mass = mass / np.sum(mass)
            pos = ppos
            pbar = float(np.sum(pos * mass))


def fit_rate(points: Sequence[tuple[float, float]], notes: list[str] | None = None) -> tuple[float, float, float]:
    """Least-squares fit of ``ln y = slope * ln x + intercept``.

    Points with ``y == 0`` are skipped (a note is appended to ``notes``).

    Returns
    -------
    slope, intercept, slope_stderr

    Raises
    ------
    DegenerateFit
        Fewer than three usable points or fewer than three distinct ``x``.
    """
    pts = [(float(x), float(y)) for x, y in points]
    if any(x <= 0 or y < 0 or not (math.isfinite(x) and math.isfinite(y)) for x, y in pts):
        raise DomainError("fit points need x > 0 and finite y >= 0")
    usable = [(x, y) for x, y in pts if y > 0]
    if len(usable) < len(pts) and notes is not None:
        notes.append(f"{len(pts) - len(usable)} point(s) with zero y excluded from the fit")
    if len(usable) < 3 or len({x for x, _ in usable}) < 3:
        raise DegenerateFit(f"need at least 3 usable points with distinct x, got {len(usable)}")
    lx = np.log([x for x, _ in usable])
    ly = np.log([y for _, y in usable])
    res = stats.linregress(lx, ly)
    return float(res.slope), float(res.intercept), float(res.stderr)


# ---------------------------------------------------------------- convergence

def _convergence_task(common, indices):
    config, n, reference = common
    params = config.params.with_n(n)
    out = []
    for i in indices:
        def one():
            stream = stream_for(config.seed, n, i, CHANNEL_PRIMARY, params.lam)
            state = MicroState(sample_degrees(config.init, n, stream))
            traj = run_micro(state, params, config.spec, config.t_eval, config.formulation, stream)
            return bl_distance(empirical_density(traj.final_state), reference)
        out.append(_guard(one))
    return out


def mean_field_reference(config: ExperimentConfig) -> SignedAtomicMeasure:
    return mf_integrate(config.init, config.params, config.spec, config.t_eval, config.integrator).final


def run_convergence(config: ExperimentConfig, workers: int = 1,
                    reference: SignedAtomicMeasure | None = None) -> ConvergenceReport:
    """Micro versus mean-field distance at ``t_eval`` across the N ladder.

    One mean-field reference (independent of N) is shared by all replicas.
    """
    ref = mean_field_reference(config) if reference is None else require_probability(reference)
    report = ConvergenceReport("convergence")
    for n in config.n_ladder:
        d = _run_replicas(_convergence_task, (config, n, ref), config.replicas, workers)
        mean, se = _mean_stderr(d)
        report.rows.append(ReportRow("convergence", n, config.t_eval, mean, se, config.replicas))
    means = [r.mean_distance for r in report.rows]
    report.checks["strictly_decreasing"] = all(b < a for a, b in zip(means, means[1:]))
    if len(report.rows) >= 3:
        try:
            report.slope, report.intercept, report.slope_stderr = fit_rate(
                [(r.n, r.mean_distance) for r in report.rows], report.notes)
            report.checks["slope_within_bound"] = report.slope <= -0.25 + 2.0 * report.slope_stderr
        except DegenerateFit as exc:
            report.notes.append(f"slope not fitted: {exc}")
    else:
        report.notes.append("slope not fitted: fewer than 3 ladder entries")
    return report


# ---------------------------------------------------------------- law of large numbers

def _k_schedule(n: int, k_schedule, k_fractions) -> list[int]:
    ks = list(k_schedule) if k_schedule is not None else [int(round(f * n)) for f in k_fractions]
    if not ks or any(k < 0 for k in ks):
        raise DomainError("k schedule must be non-empty and non-negative")
    return [int(k) for k in ks]


def _lln_task(common, indices):
    config, n, ks = common
    params = config.params.with_n(n)
    streams = [stream_for(config.seed, n, i, CHANNEL_PRIMARY, params.lam) for i in indices]
    try:
        ens = run_aux_ensemble(config.init, params, config.spec, max(ks), streams, ks)
    except Exception as exc:
        return [exc] * len(indices)
    return [[bl_distance(emp, avg) for emp, avg in zip(row, ens.averages)] for row in ens.empiricals]


def _monotone_growth(seq: Sequence[float], factor: float = 1.5) -> bool:
    vals = [v for v in seq if math.isfinite(v)]
    if len(vals) < 2 or vals[0] <= 0:
        return False
    return all(b > a for a, b in zip(vals, vals[1:])) and vals[-1] > factor * vals[0]


def run_lln(config: ExperimentConfig, k_schedule: Sequence[int] | None = None,
            k_fractions: Sequence[float] = (0.25, 0.5, 1.0, 2.0), workers: int = 1) -> LLNReport:
    """Auxiliary realisation versus auxiliary average after K steps.

    Realisations start at the average (zero initial error).  The ratio
    ``mean * N / K**0.75`` is flagged when it grows monotonically by more
    than 50% along K at fixed N, or along N at a fixed position in the
    schedule.
    """
    check_phi_lambda(config.params)
    report = LLNReport("lln")
    table: list[list[float]] = []
    for n in config.n_ladder:
        ks = _k_schedule(n, k_schedule, k_fractions)
        per_rep = _run_replicas(_lln_task, (config, n, ks), config.replicas, workers)
        cols = np.asarray(per_rep, dtype=np.float64)
        row = []
        for j, k in enumerate(ks):
            mean, se = _mean_stderr(cols[:, j])
            report.rows.append(ReportRow("lln", n, k, mean, se, config.replicas))
            ratio = mean * n / k ** 0.75 if k > 0 else math.nan
            report.ratios[(n, k)] = ratio
            row.append(ratio)
        table.append(row)
    width = min(len(r) for r in table)
    report.checks["ratio_bounded_along_k"] = not any(_monotone_growth(r) for r in table)
    report.checks["ratio_bounded_along_n"] = not any(_monotone_growth([r[j] for r in table]) for j in range(width))
    return report


# ---------------------------------------------------------------- coupled micro / auxiliary

def _coupled_task(common, indices):
    config, n, ks = common
    params = config.params.with_n(n)
    lam = params.lam
    k_end = max(ks)
    micro_c, micro_u, streams, emp0 = [], [], [], []
    for i in indices:
        try:
            s = stream_for(config.seed, n, i, CHANNEL_PRIMARY, lam)
            deg = sample_degrees(config.init, n, s)
            micro_c.append(run_micro_steps(deg, params, config.spec, k_end, s, "population", ks))
            su = stream_for(config.seed, n, i, CHANNEL_UNCOUPLED, lam)
            deg_u = sample_degrees(config.init, n, su)
            micro_u.append(run_micro_steps(deg_u, params, config.spec, k_end, su, "population", ks))
            # the auxiliary copy replays the coupled stream from the start
            sa = stream_for(config.seed, n, i, CHANNEL_PRIMARY, lam)
            emp0.append(empirical_density(MicroState(sample_degrees(config.init, n, sa))))
            streams.append(sa)
        except Exception as exc:
            return [exc] * len(indices)
    try:
        ens = run_aux_ensemble(config.init, params, config.spec, k_end, streams, ks, emp0)
    except Exception as exc:
        return [exc] * len(indices)
    out = []
    for mc, mu, aux in zip(micro_c, micro_u, ens.empiricals):
        out.append(([bl_distance(a, b) for a, b in zip(mc, aux)],
                    [bl_distance(a, b) for a, b in zip(mu, aux)]))
    return out


def run_coupled(config: ExperimentConfig, k_end: int | None = None,
                k_fractions: Sequence[float] = (0.25, 0.5, 1.0), workers: int = 1) -> CoupledReport:
    """Population-formulation micro runs against auxiliary realisations.

    Coupled pairs share initial degrees and every draw; the uncoupled
    baseline pairs the same auxiliary realisation with a micro run on an
    independent stream.  With ``k_end`` the schedule is ``[k_end]`` for
    every N; otherwise it is ``round(f * N)`` for each fraction.
    """
    check_phi_lambda(config.params)
    report = CoupledReport("coupled")
    at_n: dict[int, tuple[list[float], list[float]]] = {}
    last = None
    for n in config.n_ladder:
        ks = [int(k_end)] if k_end is not None else _k_schedule(n, None, k_fractions)
        per_rep = _run_replicas(_coupled_task, (config, n, ks), config.replicas, workers)
        coupled = np.asarray([p[0] for p in per_rep])
        uncoupled = np.asarray([p[1] for p in per_rep])
        cm, um = [], []
        for j, k in enumerate(ks):
            mean, se = _mean_stderr(coupled[:, j])
            report.rows.append(ReportRow("coupled", n, k, mean, se, config.replicas))
            cm.append(mean)
        for j, k in enumerate(ks):
            mean, se = _mean_stderr(uncoupled[:, j])
            report.rows.append(ReportRow("uncoupled", n, k, mean, se, config.replicas))
            um.append(mean)
        at_n[n] = (cm, um)
        last = len(ks) - 1
        pts = [(k / n, m * n / k ** 0.75) for k, m in zip(ks, cm) if k > 0 and m > 0]
        if len({x for x, _ in pts}) >= 2:
            res = stats.linregress([x for x, _ in pts], np.log([y for _, y in pts]))
            report.gronwall[n] = (float(res.slope), float(math.exp(res.intercept)))
    finals = [at_n[n][0][last] for n in config.n_ladder]
    report.checks["finite"] = all(math.isfinite(v) for cm, _ in at_n.values() for v in cm)
    report.checks["decreasing_in_n"] = all(b < a for a, b in zip(finals, finals[1:]))
    report.checks["coupled_below_uncoupled"] = all(
        c < u for cm, um in at_n.values() for c, u in zip(cm, um))
    if report.gronwall:
        consts = [c for _, c in report.gronwall.values()]
        report.notes.append(f"gronwall constant spread max/min = {max(consts) / min(consts):.4g}")
    return report


# ---------------------------------------------------------------- time synchronisation

def _time_task(common, indices):
    config, n, t = common
    params = config.params.with_n(n)
    out = []
    for i in indices:
        def one():
            stream = stream_for(config.seed, n, i, CHANNEL_TIME, params.lam)
            state = MicroState(sample_degrees(config.init, n, stream))
            return run_micro(state, params, config.spec, t, config.formulation, stream).kappa
        out.append(_guard(one))
    return out


def run_time_sync(config: ExperimentConfig, t: float | None = None, workers: int = 1) -> TimeSyncReport:
    """Frequency of ``|kappa(t) - M(t)| >= N**0.75`` per population size.

    ``t`` defaults to ``config.t_eval``; at ``t = 0`` no event can have
    happened and no simulation is run.
    """
    t = config.t_eval if t is None else float(t)
    if t < 0:
        raise DomainError("t must be non-negative")
    report = TimeSyncReport("time_sync")
    freqs, errs = [], []
    for n in config.n_ladder:
        params = config.params.with_n(n)
        m = update_count(config.init, params, config.spec, t)
        if t == 0:
            kappas = [0] * config.replicas
        else:
            kappas = _run_replicas(_time_task, (config, n, t), config.replicas, workers)
        gaps = np.abs(np.asarray(kappas, dtype=np.int64) - m)
        freq = float(np.count_nonzero(gaps >= n ** 0.75)) / config.replicas
        se = math.sqrt(freq * (1.0 - freq) / config.replicas)
        report.rows.append(ReportRow("time_sync", n, t, freq, se, config.replicas))
        report.update_counts[n] = m
        report.mean_abs_gap[n] = float(np.mean(gaps))
        freqs.append(freq)
        errs.append(se)
    report.checks["frequency_at_most_0.05"] = all(f <= 0.05 for f in freqs)
    report.checks["non_increasing_within_binomial_error"] = all(
        f2 <= f1 + 2.0 * math.hypot(e1, e2) for f1, f2, e1, e2 in zip(freqs, freqs[1:], errs, errs[1:]))
    report.notes.append("mean_distance column holds the exceedance frequency; stderr is binomial")
    return report


# ---------------------------------------------------------------- proof-chain diagnostics

class TriangleTerms(NamedTuple):
    micro_meanfield: float
    micro_aux: float
    aux_average: float
    average_meanfield: float

    @property
    def slack(self) -> float:
        """Right-hand side minus left-hand side of the triangle inequality."""
        return self.micro_aux + self.aux_average + self.average_meanfield - self.micro_meanfield


def triangle_decomposition(config: ExperimentConfig, n: int, replica: int) -> TriangleTerms:
    """Distances along micro -> auxiliary realisation -> auxiliary average -> mean field.

    The micro and auxiliary processes are coupled on the primary stream and
    run for ``M(t_eval)`` steps; the mean field is taken at ``t_eval``.
    """
    params = config.params.with_n(n)
    check_phi_lambda(params)
    k = update_count(config.init, params, config.spec, config.t_eval)
    s = stream_for(config.seed, n, replica, CHANNEL_PRIMARY, params.lam)
    deg = sample_degrees(config.init, n, s)
    micro = run_micro_steps(deg, params, config.spec, k, s, "population", [k])[0]
    sa = stream_for(config.seed, n, replica, CHANNEL_PRIMARY, params.lam)
    emp0 = empirical_density(MicroState(sample_degrees(config.init, n, sa)))
    ens = run_aux_ensemble(config.init, params, config.spec, k, [sa], [k], [emp0])
    aux, avg = ens.empiricals[0][0], ens.averages[0]
    mf = mean_field_reference(config)
    return TriangleTerms(bl_distance(micro, mf), bl_distance(micro, aux), bl_distance(aux, avg),
                         bl_distance(avg, mf))


def compare_formulations(state: MicroState, params: ModelParams, spec: ResponseSpec,
                         draws: int = 0, seed: int = 0) -> float:
    """Total-variation gap between the one-event net-change laws of the two formulations.

    With ``draws == 0`` the exact laws are compared.  Otherwise both
    formulations are sampled ``draws`` times on one shared stream and the
    empirical laws are compared.
    """
    if draws == 0:
        a = event_law(state, params, spec, "individual")
        b = event_law(state, params, spec, "population")
        return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b))
    stream = DrawStream(np.random.default_rng(seed), params.lam)
    ca: dict = {}
    cb: dict = {}
    for _ in range(draws):
        _, w1, w2, b3, b4 = stream.next_step()
        d = EventDraw(w1, w2, b3, b4)
        ea = step_individual(state, params, spec, d)[1]
        eb = step_population(state, params, spec, d)[1]
        ka = net_change(ea.created, ea.annihilated)
        kb = net_change(eb.created, eb.annihilated)
        ca[ka] = ca.get(ka, 0) + 1
        cb[kb] = cb.get(kb, 0) + 1
    return 0.5 * sum(abs(ca.get(k, 0) - cb.get(k, 0)) for k in set(ca) | set(cb)) / draws
