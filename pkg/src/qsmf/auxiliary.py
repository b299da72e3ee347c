"""Auxiliary stochastic mean-field process.

The average density follows the deterministic recursion
``eta_{k+1} = (1 - 1/N) eta_k + (1/N) Phi(eta_k)``.  A realisation adds
``+1/N`` at two created degrees and ``-1/N`` at two annihilated degrees per
step, all four sampled from ``eta_k`` and the draw only, so successive steps
are independent and the empirical measure may carry negative masses while
staying normalised.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from qsmf.measure import PROBABILITY_TOL, SignedAtomicMeasure, _insert, _quantile_index, combine, compact, require_probability
from qsmf.micro import STEP_WIDTH, DrawStream, EventDraw
from qsmf.model import ModelParams, ResponseSpec, check_phi_lambda, phi_atoms

__all__ = [
    "AuxState",
    "aux_average_step",
    "aux_sample",
    "aux_empirical_step",
    "run_aux",
    "AuxEnsemble",
    "run_aux_ensemble",
    "signed_counts_measure",
]


@dataclass(frozen=True)
class AuxState:
    average: SignedAtomicMeasure
    empirical: SignedAtomicMeasure
    k: int = 0


def _average_update(pos: np.ndarray, mass: np.ndarray, n: int, params: ModelParams, spec: ResponseSpec):
    """One recursion step on raw arrays.

    Returns the next ``(pos, mass)`` together with the sampling tables of the
    current step: reproduction-density atoms and cumulative masses, the
    cumulative masses of ``eta_k`` and the response value.
    """
    pbar = float(np.sum(pos * mass))
    ppos, pmass, j, _, r = phi_atoms(pos, mass, pbar, params, spec)
    base = mass if ppos.size == pos.size else _insert(mass, j, 0.0)
    new = (1.0 - 1.0 / n) * base + pmass / n
    new /= np.sum(new)
    keep = new != 0.0
    new_pos = ppos if keep.all() else ppos[keep]
    new = new if keep.all() else new[keep]
    return new_pos, new, ppos, np.cumsum(pmass), np.cumsum(mass), r


def aux_average_step(eta: SignedAtomicMeasure, params: ModelParams, spec: ResponseSpec,
                     compact_tol: float = 0.0) -> SignedAtomicMeasure:
    """Advance the average density by one step.

    Raises
    ------
    LambdaOutOfRange
        If ``lam > 1/2``.
    """
    check_phi_lambda(params)
    eta = require_probability(eta)
    pos, mass, *_ = _average_update(eta.positions, eta.masses, params.n, params, spec)
    return compact(SignedAtomicMeasure(pos, mass, _trusted=True), compact_tol)


def _sample_four(ppos, phi_cum, pos, eta_cum, r, w1, w2, b3, b4):
    p1 = ppos[_quantile_index(phi_cum, w1)]
    p2 = pos[_quantile_index(eta_cum, w2)]
    o1 = np.where(b3, p1, r)
    o2 = np.where(b4, p1, r)
    return o1, o2, p1, p2


def aux_sample(average: SignedAtomicMeasure, params: ModelParams, spec: ResponseSpec,
               draw: EventDraw) -> tuple[tuple[float, float], tuple[float, float]]:
    """The ``(created, annihilated)`` degrees of one step; a function of
    the average density and the draw alone."""
    check_phi_lambda(params)
    average = require_probability(average)
    _, _, ppos, phi_cum, eta_cum, r = _average_update(average.positions, average.masses, params.n, params, spec)
    o1, o2, p1, p2 = _sample_four(ppos, phi_cum, average.positions, eta_cum, r,
                                  draw.omega1, draw.omega2, draw.omega3, draw.omega4)
    return (float(o1), float(o2)), (float(p1), float(p2))


def signed_counts_measure(created: np.ndarray, annihilated: np.ndarray, n: int) -> SignedAtomicMeasure:
    """``(1/n) (sum of deltas at created - sum of deltas at annihilated)``.

    Masses are integer counts divided by ``n``, so cancellations are exact.
    """
    p = np.concatenate((np.ravel(created), np.ravel(annihilated)))
    if p.size == 0:
        return SignedAtomicMeasure()
    sign = np.concatenate((np.ones(np.size(created), dtype=np.int64), -np.ones(np.size(annihilated), dtype=np.int64)))
    uniq, inv = np.unique(p, return_inverse=True)
    counts = np.bincount(inv, weights=sign, minlength=uniq.size).astype(np.int64)
    keep = counts != 0
    return SignedAtomicMeasure(uniq[keep], counts[keep] / n, _trusted=True)


def aux_empirical_step(state: AuxState, params: ModelParams, spec: ResponseSpec, draw: EventDraw,
                       compact_tol: float = 0.0) -> AuxState:
    """Advance one realisation and the average density together."""
    check_phi_lambda(params)
    n = params.n
    avg = require_probability(state.average)
    pos, mass, ppos, phi_cum, eta_cum, r = _average_update(avg.positions, avg.masses, n, params, spec)
    o1, o2, p1, p2 = _sample_four(ppos, phi_cum, avg.positions, eta_cum, r,
                                  draw.omega1, draw.omega2, draw.omega3, draw.omega4)
    events = signed_counts_measure(np.array([o1, o2]), np.array([p1, p2]), n)
    empirical = combine(1.0, state.empirical, 1.0, events)
    average = compact(SignedAtomicMeasure(pos, mass, _trusted=True), compact_tol)
    return AuxState(average, empirical, state.k + 1)


@dataclass
class AuxEnsemble:
    """Snapshots of the shared average and of every replica's realisation."""

    steps: list[int]
    averages: list[SignedAtomicMeasure]
    empiricals: list[list[SignedAtomicMeasure]]  # [replica][snapshot]


def run_aux_ensemble(eta0: SignedAtomicMeasure, params: ModelParams, spec: ResponseSpec, k_end: int,
                     streams: Sequence[DrawStream], snapshot_steps: Sequence[int],
                     empirical0: Sequence[SignedAtomicMeasure] | None = None,
                     compact_tol: float = 0.0) -> AuxEnsemble:
    """Run many realisations against one average trajectory.

    Replica ``i`` consumes ``5 * k_end`` uniforms from ``streams[i]`` in the
    per-step layout of the microscopic process; its result is identical to
    a sequential run on the same stream.
    """
    check_phi_lambda(params)
    eta0 = require_probability(eta0)
    n = params.n
    steps = [int(k) for k in snapshot_steps]
    if steps and (min(steps) < 0 or max(steps) > k_end):
        raise ValueError("snapshot steps must lie within [0, k_end]")
    n_rep = len(streams)
    if empirical0 is None:
        empirical0 = [eta0] * n_rep
    draws = np.stack([s.take(STEP_WIDTH * k_end).reshape(k_end, STEP_WIDTH) for s in streams]) if k_end else None
    created = np.empty((n_rep, k_end, 2))
    annihilated = np.empty((n_rep, k_end, 2))
    lam = params.lam
    pos, mass = eta0.positions, eta0.masses
    averages_at: dict[int, SignedAtomicMeasure] = {}
    wanted = set(steps)
    for k in range(k_end + 1):
        if k in wanted:
            averages_at[k] = SignedAtomicMeasure(pos, mass, _trusted=True)
        if k == k_end:
            break
        new_pos, new_mass, ppos, phi_cum, eta_cum, r = _average_update(pos, mass, n, params, spec)
        w = draws[:, k, :]
        o1, o2, p1, p2 = _sample_four(ppos, phi_cum, pos, eta_cum, r, w[:, 1], w[:, 2], w[:, 3] >= lam, w[:, 4] >= lam)
        created[:, k, 0] = o1
        created[:, k, 1] = o2
        annihilated[:, k, 0] = p1
        annihilated[:, k, 1] = p2
        if compact_tol > 0.0:
            c = compact(SignedAtomicMeasure(new_pos, new_mass, _trusted=True), compact_tol)
            new_pos, new_mass = c.positions, c.masses
        pos, mass = new_pos, new_mass
    empiricals = []
    for i in range(n_rep):
        row = []
        for k in steps:
            events = signed_counts_measure(created[i, :k], annihilated[i, :k], n)
            row.append(combine(1.0, empirical0[i], 1.0, events))
        empiricals.append(row)
    return AuxEnsemble(steps, [averages_at[k] for k in steps], empiricals)


def run_aux(eta0: SignedAtomicMeasure, params: ModelParams, spec: ResponseSpec, k_end: int, rng_seed=0,
            with_empirical: bool = True, snapshot_steps: Sequence[int] | None = None,
            empirical0: SignedAtomicMeasure | None = None, compact_tol: float = 0.0) -> list[AuxState]:
    """Iterate ``k_end`` steps from ``eta0`` and return snapshots.

    The realisation starts at ``empirical0`` (default ``eta0``, i.e. zero
    initial error).  Without ``with_empirical`` no randomness is used and the
    returned empirical fields equal the average.
    """
    if k_end < 0:
        raise ValueError("k_end must be non-negative")
    steps = list(range(k_end + 1)) if snapshot_steps is None else [int(k) for k in snapshot_steps]
    if not with_empirical:
        check_phi_lambda(params)
        eta = require_probability(eta0, PROBABILITY_TOL)
        out: dict[int, SignedAtomicMeasure] = {}
        wanted = set(steps)
        for k in range(k_end + 1):
            if k in wanted:
                out[k] = eta
            if k == k_end:
                break
            eta = aux_average_step(eta, params, spec, compact_tol)
        return [AuxState(out[k], out[k], k) for k in steps]
    stream = rng_seed if isinstance(rng_seed, DrawStream) else DrawStream(np.random.default_rng(rng_seed), params.lam)
    emp0 = None if empirical0 is None else [empirical0]
    ens = run_aux_ensemble(eta0, params, spec, k_end, [stream], steps, emp0, compact_tol)
    return [AuxState(a, e, k) for k, a, e in zip(steps, ens.averages, ens.empiricals[0])]
