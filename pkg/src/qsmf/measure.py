"""Finite signed atomic measures on the unit interval.

A measure is a sorted sequence of atoms ``(position, mass)`` with strictly
increasing positions.  All operations are pure; instances are immutable and
safe to share between replicas.

The distance between two measures of equal total mass is the bounded
Lipschitz distance, which on ``[0, 1]`` equals the integral of the absolute
difference of the two cumulative distribution functions (Wasserstein-1).
"""
from __future__ import annotations

import csv
import io
import math
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from qsmf.errors import DomainError, MassMismatch, NonProbabilityMeasure

__all__ = [
    "Atom",
    "SignedAtomicMeasure",
    "PROBABILITY_TOL",
    "MASS_MATCH_TOL",
    "total_mass",
    "mean_degree",
    "variance_degree",
    "cdf",
    "quantile",
    "bl_distance",
    "combine",
    "compact",
    "require_probability",
    "is_probability",
    "format_density_csv",
    "write_density_csv",
    "read_density_csv",
]

PROBABILITY_TOL = 1e-12
MASS_MATCH_TOL = 1e-9


class Atom(NamedTuple):
    position: float
    mass: float


def _insert(arr: np.ndarray, i: int, value: float) -> np.ndarray:
    """``np.insert`` for 1-d float arrays without its dispatch overhead."""
    out = np.empty(arr.size + 1)
    out[:i] = arr[:i]
    out[i] = value
    out[i + 1:] = arr[i:]
    return out


def _delete(arr: np.ndarray, i: int) -> np.ndarray:
    out = np.empty(arr.size - 1)
    out[:i] = arr[:i]
    out[i:] = arr[i + 1:]
    return out


def _merge_sorted(positions: np.ndarray, masses: np.ndarray, drop_zero: bool = True):
    """Sort by position, sum masses at bit-identical positions, drop zeros."""
    if positions.size == 0:
        return positions, masses
    order = np.argsort(positions, kind="stable")
    p = positions[order]
    m = masses[order]
    if p.size > 1:
        starts = np.flatnonzero(np.concatenate(([True], p[1:] != p[:-1])))
        if starts.size != p.size:
            m = np.add.reduceat(m, starts)
            p = p[starts]
    if drop_zero:
        keep = m != 0.0
        if not keep.all():
            p = p[keep]
            m = m[keep]
    return p, m


class SignedAtomicMeasure:
    """Immutable finite signed measure made of point masses on ``[0, 1]``.

    Parameters
    ----------
    positions, masses : array_like
        Atom locations and their (signed) weights.  Equal positions are
        merged and zero masses dropped.
    """

    __slots__ = ("positions", "masses", "total", "_cum")

    def __init__(self, positions: Iterable[float] = (), masses: Iterable[float] = (), *, _trusted: bool = False):
        p = np.asarray(positions, dtype=np.float64).reshape(-1)
        m = np.asarray(masses, dtype=np.float64).reshape(-1)
        if not _trusted:
            if p.shape != m.shape:
                raise ValueError("positions and masses must have the same length")
            if p.size and (np.isnan(p).any() or p.min() < 0.0 or p.max() > 1.0):
                raise DomainError("atom positions must lie in [0, 1]")
            if not np.isfinite(m).all():
                raise ValueError("atom masses must be finite")
            p, m = _merge_sorted(p.copy(), m.copy())
        p.flags.writeable = False
        m.flags.writeable = False
        self.positions = p
        self.masses = m
        self.total = float(np.sum(m)) if m.size else 0.0
        self._cum = None

    @classmethod
    def empty(cls) -> "SignedAtomicMeasure":
        return cls()

    @classmethod
    def delta(cls, position: float, mass: float = 1.0) -> "SignedAtomicMeasure":
        return cls([position], [mass])

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]]) -> "SignedAtomicMeasure":
        atoms = list(atoms)
        if not atoms:
            return cls()
        p, m = zip(*atoms)
        return cls(p, m)

    @classmethod
    def from_samples(cls, samples: Sequence[float]) -> "SignedAtomicMeasure":
        """Empirical measure with mass ``1/n`` per sample."""
        x = np.sort(np.asarray(samples, dtype=np.float64))
        n = x.size
        if n == 0:
            return cls()
        starts = np.flatnonzero(np.concatenate(([True], x[1:] != x[:-1])))
        counts = np.diff(np.append(starts, n))
        return cls(x[starts], counts / n, _trusted=True)

    @property
    def atoms(self) -> list[Atom]:
        return [Atom(float(p), float(m)) for p, m in zip(self.positions, self.masses)]

    @property
    def cumulative(self) -> np.ndarray:
        """Right-continuous CDF values at each atom position."""
        if self._cum is None:
            c = np.cumsum(self.masses)
            c.flags.writeable = False
            self._cum = c
        return self._cum

    def __len__(self) -> int:
        return int(self.positions.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SignedAtomicMeasure):
            return NotImplemented
        return np.array_equal(self.positions, other.positions) and np.array_equal(self.masses, other.masses)

    __hash__ = None

    def __reduce__(self):
        return (_rebuild, (np.array(self.positions), np.array(self.masses)))

    def __repr__(self) -> str:
        if len(self) > 6:
            head = ", ".join(f"({p:.6g}, {m:.6g})" for p, m in self.atoms[:3])
            return f"SignedAtomicMeasure([{head}, ...], n_atoms={len(self)}, total={self.total:.12g})"
        body = ", ".join(f"({p:.6g}, {m:.6g})" for p, m in self.atoms)
        return f"SignedAtomicMeasure([{body}])"


def _rebuild(positions: np.ndarray, masses: np.ndarray) -> SignedAtomicMeasure:
    return SignedAtomicMeasure(positions, masses, _trusted=True)


def total_mass(m: SignedAtomicMeasure) -> float:
    return m.total


def mean_degree(m: SignedAtomicMeasure) -> float:
    """First moment ``sum(position * mass)``; no normalisation is applied."""
    if len(m) == 0:
        return 0.0
    return float(np.sum(m.positions * m.masses))


def variance_degree(m: SignedAtomicMeasure) -> float:
    m = require_probability(m)
    mu = mean_degree(m)
    return float(np.sum((m.positions - mu) ** 2 * m.masses))


def is_probability(m: SignedAtomicMeasure, tol: float = PROBABILITY_TOL) -> bool:
    if len(m) == 0:
        return False
    return bool(m.masses.min() >= -tol and abs(m.total - 1.0) <= tol)


def require_probability(m: SignedAtomicMeasure, tol: float = PROBABILITY_TOL) -> SignedAtomicMeasure:
    """Return ``m`` (negatives above ``-tol`` clamped to 0) or raise.

    Raises
    ------
    NonProbabilityMeasure
        If a mass is below ``-tol`` or the total differs from 1 by more
        than ``tol``.
    """
    if len(m) == 0:
        raise NonProbabilityMeasure("empty measure is not a probability measure")
    if m.masses.min() < -tol:
        raise NonProbabilityMeasure(f"negative mass {m.masses.min():.3g}")
    if abs(m.total - 1.0) > tol:
        raise NonProbabilityMeasure(f"total mass {m.total!r} differs from 1")
    if m.masses.min() < 0.0:
        return SignedAtomicMeasure(m.positions, np.maximum(m.masses, 0.0))
    return m


def cdf(m: SignedAtomicMeasure, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"cdf argument {x!r} outside [0, 1]")
    i = int(np.searchsorted(m.positions, x, side="right"))
    return float(m.cumulative[i - 1]) if i > 0 else 0.0


def _quantile_index(cum: np.ndarray, theta) -> np.ndarray:
    # first index with cum > theta; round-off can leave cum[-1] < theta
    idx = np.searchsorted(cum, theta, side="right")
    return np.minimum(idx, cum.size - 1)


def quantile(m: SignedAtomicMeasure, theta: float) -> float:
    """Smallest atom position ``x`` with ``cdf(m, x) > theta``."""
    if not 0.0 <= theta < 1.0:
        raise DomainError(f"quantile level {theta!r} outside [0, 1)")
    m = require_probability(m)
    return float(m.positions[_quantile_index(m.cumulative, theta)])


def bl_distance(g: SignedAtomicMeasure, h: SignedAtomicMeasure) -> float:
    """Bounded Lipschitz distance of two measures with equal total mass.

    Evaluated exactly as the integral of ``|F_g - F_h|`` over ``[0, 1]``;
    the CDF difference is piecewise constant between merged atom positions.
    """
    if abs(g.total - h.total) > MASS_MATCH_TOL:
        raise MassMismatch(f"total masses differ: {g.total!r} vs {h.total!r}")
    p = np.concatenate((g.positions, h.positions))
    if p.size == 0:
        return 0.0
    w = np.concatenate((g.masses, -h.masses))
    p, w = _merge_sorted(p, w, drop_zero=False)
    diff_cdf = np.cumsum(w)
    widths = np.diff(np.append(p, 1.0))
    return float(np.sum(np.abs(diff_cdf) * widths))


def combine(alpha: float, g: SignedAtomicMeasure, beta: float, h: SignedAtomicMeasure) -> SignedAtomicMeasure:
    """Linear combination ``alpha*g + beta*h`` with coincident atoms merged."""
    p = np.concatenate((g.positions, h.positions))
    w = np.concatenate((alpha * g.masses, beta * h.masses))
    p, w = _merge_sorted(p, w)
    return SignedAtomicMeasure(p, w, _trusted=True)


def compact(m: SignedAtomicMeasure, tol: float) -> SignedAtomicMeasure:
    """Merge chains of atoms whose neighbouring gaps are at most ``tol``.

    Each merged group becomes one atom at its mass-weighted mean position;
    singleton groups keep their exact position.  Groups of zero total mass
    are dropped.
    """
    if tol < 0:
        raise DomainError("compaction tolerance must be non-negative")
    n = len(m)
    if tol == 0.0 or n < 2:
        return m
    p, w = m.positions, m.masses
    starts = np.flatnonzero(np.concatenate(([True], np.diff(p) > tol)))
    if starts.size == n:
        return m
    sizes = np.diff(np.append(starts, n))
    mass = np.add.reduceat(w, starts)
    moment = np.add.reduceat(p * w, starts)
    pos = p[starts].copy()
    multi = (sizes > 1) & (mass != 0.0)
    if multi.any():
        lo = p[starts[multi]]
        hi = p[starts[multi] + sizes[multi] - 1]
        pos[multi] = np.clip(moment[multi] / mass[multi], lo, hi)
    keep = mass != 0.0
    return SignedAtomicMeasure(pos[keep], mass[keep], _trusted=True)


def format_density_csv(
    entries: Iterable[tuple[Sequence, SignedAtomicMeasure]],
    context_columns: Sequence[str] = (),
) -> str:
    """Render measures as CSV text: context columns, then ``position,mass``.

    ``entries`` yields ``(context_values, measure)`` pairs; every atom of the
    measure becomes one row carrying the context values.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*context_columns, "position", "mass"])
    for context, measure in entries:
        ctx = [_fmt(v) for v in context]
        for p, w in zip(measure.positions, measure.masses):
            writer.writerow([*ctx, _fmt(p), _fmt(w)])
    return buf.getvalue()


def write_density_csv(path, entries, context_columns: Sequence[str] = ()) -> None:
    text = format_density_csv(entries, context_columns)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def read_density_csv(path) -> SignedAtomicMeasure:
    """Read a ``position,mass`` CSV; extra context columns are ignored."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"position", "mass"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: density CSV needs 'position' and 'mass' columns")
        rows = [(float(r["position"]), float(r["mass"])) for r in reader]
    return SignedAtomicMeasure.from_atoms(rows)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
            return repr(v)
        return format(v, ".17g")
    return str(v)
