"""Model constants, fitness, response functions and the reproduction density."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qsmf.errors import LambdaOutOfRange, ValidationError
from qsmf.measure import SignedAtomicMeasure, _insert, mean_degree, require_probability

__all__ = [
    "ModelParams",
    "ResponseSpec",
    "RESPONSE_KINDS",
    "fitness",
    "fitness_deviation",
    "mean_fitness",
    "response",
    "reproduction_density",
    "phi_atoms",
    "check_phi_lambda",
]

RESPONSE_KINDS = ("identity", "constant", "linear", "hill")


@dataclass(frozen=True)
class ModelParams:
    """Selection strength ``s``, benefit ``b``, cost ``c``, response
    probability ``lam`` and population size ``n``."""

    s: float = 0.2
    b: float = 1.0
    c: float = 1.0
    lam: float = 0.3
    n: int = 100

    def __post_init__(self):
        if self.b < 0 or self.c < 0:
            raise ValidationError("benefit b and cost c must be non-negative")
        if self.c > 0:
            if not 0 < self.s < 1.0 / self.c:
                raise ValidationError(f"selection strength must satisfy 0<s<1/c (s={self.s!r}, c={self.c!r})")
        elif not self.s > 0:
            raise ValidationError(f"selection strength must satisfy s>0 (s={self.s!r})")
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"response probability lambda={self.lam!r} outside [0, 1]")
        if int(self.n) != self.n or self.n < 2:
            raise ValidationError(f"population size n={self.n!r} must be an integer >= 2")
        object.__setattr__(self, "n", int(self.n))

    def with_n(self, n: int) -> "ModelParams":
        return ModelParams(self.s, self.b, self.c, self.lam, n)


@dataclass(frozen=True)
class ResponseSpec:
    """Response function ``R`` mapping the mean degree into ``[0, 1]``.

    ``constant`` uses ``level``; ``linear`` uses ``slope`` and ``intercept``
    (output clamped to ``[0, 1]``); ``hill`` uses ``exponent`` and
    ``threshold`` for ``x**n / (x**n + K**n)``.
    """

    kind: str = "hill"
    level: float = 0.5
    slope: float = 1.0
    intercept: float = 0.0
    exponent: float = 2.0
    threshold: float = 0.4

    def __post_init__(self):
        if self.kind not in RESPONSE_KINDS:
            raise ValidationError(f"unknown response kind {self.kind!r}")
        if self.kind == "constant" and not 0.0 <= self.level <= 1.0:
            raise ValidationError("constant response level must lie in [0, 1]")
        if self.kind == "hill":
            if not self.exponent > 0:
                raise ValidationError("hill exponent must be positive")
            if not 0.0 < self.threshold < 1.0:
                raise ValidationError("hill threshold must lie in (0, 1)")

    @classmethod
    def identity(cls) -> "ResponseSpec":
        return cls(kind="identity")

    @classmethod
    def constant(cls, level: float) -> "ResponseSpec":
        return cls(kind="constant", level=level)

    @classmethod
    def linear(cls, slope: float, intercept: float) -> "ResponseSpec":
        return cls(kind="linear", slope=slope, intercept=intercept)

    @classmethod
    def hill(cls, exponent: float, threshold: float) -> "ResponseSpec":
        return cls(kind="hill", exponent=exponent, threshold=threshold)

    def __call__(self, pbar: float) -> float:
        return response(pbar, self)


def fitness(p, pbar, params: ModelParams):
    """Replication rate ``1 + s (b pbar - c p)``; vectorises over ``p``."""
    return 1.0 + params.s * (params.b * pbar - params.c * p)


def fitness_deviation(p, pbar, params: ModelParams):
    """``fitness(p, pbar) - mean fitness`` for the linear fitness, i.e. ``-s c (p - pbar)``.

    Written in factored form so that it vanishes exactly at ``p == pbar``.
    """
    return -params.s * params.c * (p - pbar)


def mean_fitness(nu: SignedAtomicMeasure, params: ModelParams) -> float:
    nu = require_probability(nu)
    return 1.0 + params.s * (params.b - params.c) * mean_degree(nu)


def response(pbar: float, spec: ResponseSpec) -> float:
    kind = spec.kind
    if kind == "identity":
        return float(pbar)
    if kind == "constant":
        return float(spec.level)
    if kind == "linear":
        return float(min(1.0, max(0.0, spec.slope * pbar + spec.intercept)))
    xn = pbar ** spec.exponent
    return float(xn / (xn + spec.threshold ** spec.exponent))


def check_phi_lambda(params: ModelParams) -> None:
    if params.lam > 0.5:
        raise LambdaOutOfRange(
            f"lambda={params.lam!r} > 1/2: the reproduction density would carry negative mass"
        )


def phi_atoms(positions: np.ndarray, masses: np.ndarray, pbar: float, params: ModelParams, spec: ResponseSpec):
    """Atoms of the reproduction density built from raw arrays.

    Returns ``(pos, mass, j, replicator_mass_at_r, r)`` where ``j`` is the
    index of the response atom ``r`` in ``pos``.  Zero masses are kept so
    that ``j`` stays meaningful; they are never selected by a quantile.
    """
    lam = params.lam
    w = fitness(positions, pbar, params) * masses
    # normalising by the realised sum keeps the total at one to round-off
    w = (1.0 - 2.0 * lam) * (w / np.sum(w))
    r = response(pbar, spec)
    j = int(np.searchsorted(positions, r, side="left"))
    if j < positions.size and positions[j] == r:
        pos = positions
        mass = w.copy()
        rep_at_r = float(mass[j])
        mass[j] += 2.0 * lam
    else:
        pos = _insert(positions, j, r)
        mass = _insert(w, j, 2.0 * lam)
        rep_at_r = 0.0
    return pos, mass, j, rep_at_r, r


def reproduction_density(nu: SignedAtomicMeasure, params: ModelParams, spec: ResponseSpec) -> SignedAtomicMeasure:
    """Reproduction density: mass ``2 lam`` at ``R(<p>)`` plus the
    fitness-reweighted ``nu`` scaled by ``1 - 2 lam``.

    Raises
    ------
    LambdaOutOfRange
        If ``lam > 1/2``.
    NonProbabilityMeasure
        If ``nu`` is not a probability measure.
    """
    check_phi_lambda(params)
    nu = require_probability(nu)
    pos, mass, _, _, _ = phi_atoms(nu.positions, nu.masses, mean_degree(nu), params, spec)
    return SignedAtomicMeasure(pos, mass)
