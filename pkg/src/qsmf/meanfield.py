"""Deterministic mean-field equation on atomic measures.

The replicator term reweights existing atoms and the sense-and-response
term injects mass at the current response value, so the equation is closed
on finite atomic measures and no spatial grid is needed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from qsmf.errors import DomainError, NonProbabilityMeasure, NoQualifyingCluster, StepTooLarge
from qsmf.measure import SignedAtomicMeasure, combine, compact, mean_degree, require_probability, variance_degree
from qsmf.model import ModelParams, ResponseSpec, fitness_deviation, response

__all__ = [
    "IntegratorConfig",
    "MeanFieldTrajectory",
    "mf_rhs",
    "mf_step",
    "mf_integrate",
    "mean_degree_rate",
    "classify_modality",
    "diagnostic_lines",
]


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    method: Literal["euler", "rk2"] = "rk2"
    compact_tol: float = 1e-9
    renorm_check_tol: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.dt <= 0.1:
            raise DomainError(f"dt={self.dt!r} must lie in (0, 0.1]")
        if self.method not in ("euler", "rk2"):
            raise DomainError(f"unknown method {self.method!r}")
        if self.compact_tol < 0:
            raise DomainError("compact_tol must be non-negative")
        if self.renorm_check_tol < 1e-12:
            raise DomainError("renorm_check_tol must be at least 1e-12")


def _rhs(rho: SignedAtomicMeasure, params: ModelParams, spec: ResponseSpec) -> SignedAtomicMeasure:
    lam = params.lam
    pbar = mean_degree(rho)
    mean_fit = 1.0 + params.s * (params.b - params.c) * pbar
    coef = -2.0 * lam * mean_fit + (1.0 - 2.0 * lam) * fitness_deviation(rho.positions, pbar, params)
    source = SignedAtomicMeasure.delta(response(pbar, spec), 2.0 * lam * mean_fit)
    return combine(1.0, SignedAtomicMeasure(rho.positions, coef * rho.masses, _trusted=True), 1.0, source)


def mf_rhs(rho: SignedAtomicMeasure, params: ModelParams, spec: ResponseSpec) -> SignedAtomicMeasure:
    """Time derivative of ``rho``: a signed measure of total mass zero."""
    return _rhs(require_probability(rho), params, spec)


def _settle(m: SignedAtomicMeasure, tol: float) -> SignedAtomicMeasure:
    """Clamp round-off negatives and renormalise; refuse genuine negativity."""
    if len(m) == 0:
        raise NonProbabilityMeasure("mean-field step produced an empty measure")
    lowest = float(m.masses.min())
    if lowest < -tol:
        raise StepTooLarge(f"mass {lowest:.3g} below -{tol:g}; reduce dt")
    if abs(m.total - 1.0) > tol:
        raise NonProbabilityMeasure(f"total mass drifted to {m.total!r}")
    masses = np.maximum(m.masses, 0.0) if lowest < 0.0 else m.masses
    masses = masses / np.sum(masses)
    keep = masses != 0.0
    return SignedAtomicMeasure(m.positions[keep], masses[keep], _trusted=True)


def mf_step(rho: SignedAtomicMeasure, params: ModelParams, spec: ResponseSpec,
            config: IntegratorConfig = IntegratorConfig(), dt: float | None = None) -> SignedAtomicMeasure:
    """One explicit Euler or midpoint (rk2) step of size ``dt`` (default ``config.dt``).

    Raises
    ------
    StepTooLarge
        If a mass becomes negative beyond ``config.renorm_check_tol``.
    """
    h = config.dt if dt is None else dt
    rho = require_probability(rho)
    k1 = _rhs(rho, params, spec)
    if config.method == "euler":
        out = combine(1.0, rho, h, k1)
    else:
        mid = _settle(combine(1.0, rho, 0.5 * h, k1), config.renorm_check_tol)
        k2 = _shift_half_step_atom(rho, mid, _rhs(mid, params, spec), spec)
        out = combine(1.0, rho, h, k2)
    return compact(_settle(out, config.renorm_check_tol), config.compact_tol)


def _shift_half_step_atom(rho, mid, k2, spec):
    """Book the decay of the half-step source atom at the full-step source.

    The atom injected at ``R(<p>_rho)`` during the half step is absent from
    ``rho``; left in place its O(dt^2) decay would be a negative atom.  The
    moved mass travels O(dt), an O(dt^3) change in distance per step.
    """
    r0 = response(mean_degree(rho), spec)
    i = int(np.searchsorted(rho.positions, r0))
    if i < len(rho) and rho.positions[i] == r0:
        return k2
    j = int(np.searchsorted(k2.positions, r0))
    if j >= len(k2) or k2.positions[j] != r0:
        return k2
    r1 = response(mean_degree(mid), spec)
    if r1 == r0:
        return k2
    moved = SignedAtomicMeasure(np.array([r0, r1]), np.array([-k2.masses[j], k2.masses[j]]), _trusted=r0 < r1)
    return combine(1.0, k2, 1.0, moved)


@dataclass
class MeanFieldTrajectory:
    times: list[float]
    densities: list[SignedAtomicMeasure]

    @property
    def final(self) -> SignedAtomicMeasure:
        return self.densities[-1]


def mf_integrate(rho0: SignedAtomicMeasure, params: ModelParams, spec: ResponseSpec, t_end: float,
                 config: IntegratorConfig = IntegratorConfig(),
                 snapshot_times: Sequence[float] | None = None) -> MeanFieldTrajectory:
    """Integrate from 0 to ``t_end``; snapshot times are hit exactly.

    Steps have size ``config.dt`` except the one ending at a snapshot time or
    at ``t_end``, which is shortened.  Without ``snapshot_times`` only the
    final density is returned.
    """
    if t_end < 0:
        raise DomainError("t_end must be non-negative")
    times = [float(t_end)] if snapshot_times is None else [float(t) for t in snapshot_times]
    if times != sorted(times) or (times and (times[0] < 0 or times[-1] > t_end)):
        raise DomainError("snapshot_times must be sorted within [0, t_end]")
    rho = require_probability(rho0)
    dt = config.dt
    eps = 1e-12 * max(1.0, t_end)
    t = 0.0
    out = []
    for target in times:
        while target - t > eps:
            h = min(dt, target - t)
            rho = mf_step(rho, params, spec, config, dt=h)
            t = target if h < dt or abs(target - (t + h)) <= eps else t + h
        out.append(rho)
    return MeanFieldTrajectory(times, out)


def mean_degree_rate(rho: SignedAtomicMeasure, params: ModelParams, spec: ResponseSpec) -> float:
    """Closed-form ``d<p>/dt`` implied by the mean-field equation."""
    rho = require_probability(rho)
    lam = params.lam
    pbar = mean_degree(rho)
    mean_fit = 1.0 + params.s * (params.b - params.c) * pbar
    return (2.0 * lam * mean_fit * (response(pbar, spec) - pbar)
            - (1.0 - 2.0 * lam) * params.s * params.c * variance_degree(rho))


def classify_modality(rho: SignedAtomicMeasure, bandwidth: float, min_mass: float) -> str:
    """Count clusters (gaps wider than ``bandwidth`` separate them) holding at
    least ``min_mass``; 1 -> unimodal, 2 -> bimodal, more -> multimodal."""
    rho = require_probability(rho)
    if not bandwidth > 0 or not 0 < min_mass < 1:
        raise DomainError("need bandwidth > 0 and 0 < min_mass < 1")
    p = rho.positions
    starts = np.flatnonzero(np.concatenate(([True], np.diff(p) > bandwidth)))
    cluster_mass = np.add.reduceat(rho.masses, starts)
    qualifying = int(np.count_nonzero(cluster_mass >= min_mass))
    if qualifying == 0:
        raise NoQualifyingCluster(f"no cluster reaches mass {min_mass}")
    return {1: "unimodal", 2: "bimodal"}.get(qualifying, "multimodal")


def diagnostic_lines(traj: MeanFieldTrajectory, bandwidth: float = 0.05, min_mass: float = 0.05) -> str:
    lines = ["time,mean,variance,modality"]
    for t, rho in zip(traj.times, traj.densities):
        try:
            modality = classify_modality(rho, bandwidth, min_mass)
        except NoQualifyingCluster:
            modality = "undetermined"
        lines.append(f"{t!r},{mean_degree(rho)!r},{variance_degree(rho)!r},{modality}")
    return "\n".join(lines) + "\n"
