"""Microscopic many-particle process.

Two formulations share one random-stream layout so that they can be
coupled to each other and to the auxiliary process.  Every update step
consumes five uniforms in the order ``(u_time, w1, w2, r3, r4)``:

* ``u_time`` drives the exponential waiting time,
* ``w1`` selects the ancestor (first annihilated degree),
* ``w2`` selects the victim (second annihilated degree),
* ``r3``/``r4`` become the inherit bits, ``omega = 0`` iff ``r < lam``.

Initial degrees, when sampled, consume their uniforms before the first step.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from qsmf.errors import InternalInvariantViolation
from qsmf.measure import SignedAtomicMeasure, _delete, _insert, _quantile_index
from qsmf.model import ModelParams, ResponseSpec, check_phi_lambda, fitness, phi_atoms, response

__all__ = [
    "MicroState",
    "EventDraw",
    "EventRecord",
    "DrawStream",
    "MicroTrajectory",
    "STEP_WIDTH",
    "empirical_density",
    "draw_waiting_time",
    "step_individual",
    "step_population",
    "run_micro",
    "run_micro_steps",
    "sample_degrees",
    "net_change",
    "event_law",
]

STEP_WIDTH = 5
_HALF_ULP = 2.0 ** -54

Formulation = Literal["individual", "population"]


@dataclass(frozen=True)
class MicroState:
    """Sorted production degrees, continuous time ``tau`` and step count ``k``."""

    degrees: np.ndarray
    tau: float = 0.0
    k: int = 0

    def __post_init__(self):
        d = np.sort(np.asarray(self.degrees, dtype=np.float64).reshape(-1))
        if d.size < 2:
            raise ValueError("a population needs at least two individuals")
        if d[0] < 0.0 or d[-1] > 1.0:
            raise ValueError("production degrees must lie in [0, 1]")
        d.flags.writeable = False
        object.__setattr__(self, "degrees", d)

    @property
    def n(self) -> int:
        return int(self.degrees.size)


@dataclass(frozen=True)
class EventDraw:
    omega1: float
    omega2: float
    omega3: int
    omega4: int


@dataclass(frozen=True)
class EventRecord:
    created: tuple[float, float]
    annihilated: tuple[float, float]
    delta_tau: float = 0.0


class DrawStream:
    """Buffered view of a generator that hands out uniforms in stream order.

    The buffer size never changes which numbers a caller sees, only how
    many are fetched from the generator at once.
    """

    def __init__(self, rng: np.random.Generator, lam: float, block: int = 8192):
        self.rng = rng
        self.lam = float(lam)
        self.block = int(block)
        self._buf = np.empty(0)
        self._i = 0

    def take(self, count: int) -> np.ndarray:
        if self._buf.size - self._i < count:
            rest = self._buf[self._i:]
            self._buf = np.concatenate((rest, self.rng.random(max(self.block, count))))
            self._i = 0
        out = self._buf[self._i:self._i + count]
        self._i += count
        return out

    def next_step(self) -> tuple[float, float, float, int, int]:
        u = self.take(STEP_WIDTH)
        lam = self.lam
        return (
            float(u[0]) + _HALF_ULP,
            float(u[1]),
            float(u[2]),
            0 if u[3] < lam else 1,
            0 if u[4] < lam else 1,
        )

    def next_draw(self) -> tuple[float, EventDraw]:
        u_time, w1, w2, b3, b4 = self.next_step()
        return u_time, EventDraw(w1, w2, b3, b4)


def _stats(deg: np.ndarray):
    """Atoms of a sorted degree array and its mean degree."""
    n = deg.size
    edge = np.empty(n + 1, dtype=bool)
    edge[0] = edge[n] = True
    np.not_equal(deg[1:], deg[:-1], out=edge[1:n])
    bounds = np.flatnonzero(edge)
    pos = deg[bounds[:-1]]
    masses = np.diff(bounds) / n
    return pos, masses, float(np.sum(pos * masses))


def empirical_density(state: MicroState) -> SignedAtomicMeasure:
    pos, masses, _ = _stats(state.degrees)
    return SignedAtomicMeasure(pos, masses, _trusted=True)


def _waiting_time(pbar: float, n: int, params: ModelParams, u: float) -> float:
    return -math.log(u) / (n * (1.0 + params.s * (params.b - params.c) * pbar))


def draw_waiting_time(state: MicroState, params: ModelParams, u: float) -> float:
    """Exponential waiting time with rate ``N <phi>`` by inverse transform of ``u``."""
    if not 0.0 < u < 1.0:
        raise ValueError("u must lie in the open interval (0, 1)")
    _, _, pbar = _stats(state.degrees)
    return _waiting_time(pbar, state.n, params, u)


def _individual_update(deg, pbar, params, spec, w1, w2, b3, b4):
    n = deg.size
    fit = np.cumsum(fitness(deg, pbar, params))
    ia = int(_quantile_index(fit, w1 * fit[-1]))
    j = int(w2 * (n - 1))
    iv = j if j < ia else j + 1
    a = float(deg[ia])
    v = float(deg[iv])
    r = response(pbar, spec)
    o1 = a if b3 else r
    o2 = a if b4 else r
    new = deg.copy()
    new[ia] = o1
    new[iv] = o2
    new.sort()
    return new, (o1, o2), (a, v)


def _remove_one(arr: np.ndarray, value: float) -> np.ndarray:
    i = int(np.searchsorted(arr, value, side="left"))
    if i >= arr.size or arr[i] != value:
        raise InternalInvariantViolation(f"degree {value!r} scheduled for removal is absent")
    return _delete(arr, i)


def _population_update(deg, pos, masses, pbar, params, spec, w1, w2, b3, b4):
    n = deg.size
    ppos, pmass, j, rep_at_r, r = phi_atoms(pos, masses, pbar, params, spec)
    cum = np.cumsum(pmass)
    i1 = int(_quantile_index(cum, w1))
    p1 = float(ppos[i1])
    if i1 != j:
        delta_branch = False
    elif rep_at_r == 0.0:
        delta_branch = True
    else:
        # within a merged atom at r the replicator share precedes the delta share
        below = float(cum[j - 1]) if j > 0 else 0.0
        delta_branch = w1 >= below + rep_at_r
    if delta_branch:
        p2 = float(deg[int(w2 * n)])
    else:
        k = int(w2 * (n - 1))
        i_p1 = int(np.searchsorted(deg, p1, side="left"))
        p2 = float(deg[k] if k < i_p1 else deg[k + 1])
    o1 = p1 if b3 else r
    o2 = p1 if b4 else r
    # creations first, so a response-branch p1 always has a copy to remove
    new = _insert(deg, int(np.searchsorted(deg, o1)), o1)
    new = _insert(new, int(np.searchsorted(new, o2)), o2)
    new = _remove_one(_remove_one(new, p1), p2)
    return new, (o1, o2), (p1, p2)


def step_individual(state: MicroState, params: ModelParams, spec: ResponseSpec, draw: EventDraw,
                    delta_tau: float = 0.0) -> tuple[MicroState, EventRecord]:
    """One birth-death event in the individual-based description.

    The ancestor is chosen fitness-proportionally (``omega1``), the victim
    uniformly among the other ``N - 1`` individuals (``omega2``); each
    offspring inherits the ancestor's degree when its bit is 1 and adopts
    ``R(<p>)`` otherwise.
    """
    _, _, pbar = _stats(state.degrees)
    new, created, annihilated = _individual_update(
        state.degrees, pbar, params, spec, draw.omega1, draw.omega2, draw.omega3, draw.omega4
    )
    nxt = MicroState(new, state.tau + delta_tau, state.k + 1)
    return nxt, EventRecord(created, annihilated, delta_tau)


def step_population(state: MicroState, params: ModelParams, spec: ResponseSpec, draw: EventDraw,
                    delta_tau: float = 0.0) -> tuple[MicroState, EventRecord]:
    """One event of the population-based reformulation.

    The first annihilated degree is the ``omega1``-quantile of the
    reproduction density of the current empirical density.  If it came from
    the response delta the second one is uniform over all ``N`` individuals,
    otherwise uniform over the ``N - 1`` left after removing one copy of it.

    Raises
    ------
    LambdaOutOfRange
        If ``lam > 1/2``.
    """
    check_phi_lambda(params)
    pos, masses, pbar = _stats(state.degrees)
    new, created, annihilated = _population_update(
        state.degrees, pos, masses, pbar, params, spec, draw.omega1, draw.omega2, draw.omega3, draw.omega4
    )
    nxt = MicroState(new, state.tau + delta_tau, state.k + 1)
    return nxt, EventRecord(created, annihilated, delta_tau)


@dataclass
class MicroTrajectory:
    snapshot_times: list[float]
    densities: list[SignedAtomicMeasure]
    final_state: MicroState
    kappa: int
    snapshot_steps: list[int] = field(default_factory=list)


def _as_stream(rng, lam: float) -> DrawStream:
    if isinstance(rng, DrawStream):
        return rng
    return DrawStream(np.random.default_rng(rng), lam)


def sample_degrees(rho0: SignedAtomicMeasure, n: int, stream: DrawStream) -> np.ndarray:
    """``n`` i.i.d. degrees from ``rho0`` by quantile sampling; consumes ``n`` uniforms."""
    theta = stream.take(n)
    return np.sort(rho0.positions[_quantile_index(rho0.cumulative, theta)])


def run_micro(initial: MicroState, params: ModelParams, spec: ResponseSpec, t_end: float,
              formulation: Formulation = "individual", rng_seed=0,
              snapshot_times: Sequence[float] = ()) -> MicroTrajectory:
    """Simulate until the next event would occur after ``t_end``.

    ``rng_seed`` may be an integer, a ``SeedSequence``, a ``Generator`` or a
    ``DrawStream``.  Each snapshot holds the density after the last event
    not later than its time.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    times = [float(t) for t in snapshot_times]
    if times != sorted(times) or (times and (times[0] < 0 or times[-1] > t_end)):
        raise ValueError("snapshot_times must be sorted within [0, t_end]")
    if formulation not in ("individual", "population"):
        raise ValueError(f"unknown formulation {formulation!r}")
    if formulation == "population":
        check_phi_lambda(params)
    stream = _as_stream(rng_seed, params.lam)
    deg = np.array(initial.degrees)
    n = deg.size
    tau = float(initial.tau)
    k = int(initial.k)
    densities: list[SignedAtomicMeasure] = []
    steps: list[int] = []
    si = 0
    population = formulation == "population"
    while True:
        pos, masses, pbar = _stats(deg)
        u_time, w1, w2, b3, b4 = stream.next_step()
        dt = _waiting_time(pbar, n, params, u_time)
        t_next = tau + dt
        if t_next > t_end:
            break
        while si < len(times) and times[si] < t_next:
            densities.append(SignedAtomicMeasure(pos, masses, _trusted=True))
            steps.append(k)
            si += 1
        if population:
            deg, _, _ = _population_update(deg, pos, masses, pbar, params, spec, w1, w2, b3, b4)
        else:
            deg, _, _ = _individual_update(deg, pbar, params, spec, w1, w2, b3, b4)
        tau = t_next
        k += 1
    if si < len(times):
        pos, masses, _ = _stats(deg)
        final = SignedAtomicMeasure(pos, masses, _trusted=True)
        while si < len(times):
            densities.append(final)
            steps.append(k)
            si += 1
    return MicroTrajectory(times, densities, MicroState(deg, tau, k), k, steps)


def run_micro_steps(degrees: np.ndarray, params: ModelParams, spec: ResponseSpec, k_end: int,
                    stream: DrawStream, formulation: Formulation = "population",
                    snapshot_steps: Sequence[int] = ()) -> list[SignedAtomicMeasure]:
    """Step-indexed run without a clock; ``u_time`` is still consumed per step.

    Returns the empirical densities after each step count in ``snapshot_steps``.
    """
    if formulation == "population":
        check_phi_lambda(params)
    wanted = sorted(set(int(k) for k in snapshot_steps))
    if wanted and (wanted[0] < 0 or wanted[-1] > k_end):
        raise ValueError("snapshot steps must lie within [0, k_end]")
    deg = np.sort(np.asarray(degrees, dtype=np.float64))
    out: dict[int, SignedAtomicMeasure] = {}
    for k in range(k_end + 1):
        pos, masses, pbar = _stats(deg)
        if k in wanted:
            out[k] = SignedAtomicMeasure(pos, masses, _trusted=True)
        if k == k_end:
            break
        _, w1, w2, b3, b4 = stream.next_step()
        if formulation == "population":
            deg, _, _ = _population_update(deg, pos, masses, pbar, params, spec, w1, w2, b3, b4)
        else:
            deg, _, _ = _individual_update(deg, pbar, params, spec, w1, w2, b3, b4)
    return [out[int(k)] for k in snapshot_steps]


def net_change(created, annihilated) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Multiset change of one event after cancelling equal created/annihilated degrees."""
    plus = Counter(float(x) for x in created)
    minus = Counter(float(x) for x in annihilated)
    common = plus & minus
    plus -= common
    minus -= common
    return tuple(sorted(plus.elements())), tuple(sorted(minus.elements()))


def _bit_outcomes(p1: float, r: float, lam: float):
    keep = 1.0 - lam
    return (((p1, p1), keep * keep), ((p1, r), keep * lam), ((r, p1), lam * keep), ((r, r), lam * lam))


def event_law(state: MicroState, params: ModelParams, spec: ResponseSpec,
              formulation: Formulation = "individual") -> dict:
    """Exact law of the net multiset change of one event from ``state``.

    Enumerates every branch of the chosen formulation; keys are the pairs
    returned by :func:`net_change`, values their probabilities.
    """
    deg = state.degrees
    n = deg.size
    pos, masses, pbar = _stats(deg)
    counts = np.rint(masses * n).astype(np.int64)
    r = response(pbar, spec)
    lam = params.lam
    law: Counter = Counter()
    if formulation == "individual":
        fit = fitness(pos, pbar, params) * counts
        fit = fit / np.sum(fit)
        for a, pa, ca in zip(pos, fit, counts):
            for v, cv in zip(pos, counts):
                pv = (cv - (1 if v == a else 0)) / (n - 1)
                if pa == 0.0 or pv <= 0.0:
                    continue
                for created, pb in _bit_outcomes(float(a), r, lam):
                    law[net_change(created, (a, v))] += float(pa) * pv * pb
    elif formulation == "population":
        check_phi_lambda(params)
        ppos, pmass, j, rep_at_r, _ = phi_atoms(pos, masses, pbar, params, spec)
        branches = [(float(x), float(m), False) for i, (x, m) in enumerate(zip(ppos, pmass)) if i != j]
        branches.append((r, rep_at_r, False))
        branches.append((r, 2.0 * lam, True))
        for p1, w, from_delta in branches:
            if w <= 0.0:
                continue
            for v, cv in zip(pos, counts):
                pv = cv / n if from_delta else (cv - (1 if v == p1 else 0)) / (n - 1)
                if pv <= 0.0:
                    continue
                for created, pb in _bit_outcomes(p1, r, lam):
                    law[net_change(created, (p1, v))] += w * pv * pb
    else:
        raise ValueError(f"unknown formulation {formulation!r}")
    return {k: p for k, p in law.items() if p > 0.0}
