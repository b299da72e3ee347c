"""Run configuration: a line-based ``key = value`` format with ``[section]`` headers.

Sections and keys::

    [model]     s, b, c, lambda, n
    [response]  kind (identity | constant | linear | hill), level, slope,
                intercept, exponent, threshold
    [init]      kind (delta | two_delta | uniform_atoms | custom_csv),
                position, positions, weight, count, low, high, path
    [run]       t_end, dt, method, compact_tol, k_end, replicas, n_ladder,
                seed, output_dir, formulation, snapshot_times, snapshot_steps

``#`` starts a comment.  Lists are comma separated.  Every key is optional;
an unknown key or section is an error, reported with its line number.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from qsmf.errors import ParseError, UnknownKey, ValidationError
from qsmf.measure import SignedAtomicMeasure, read_density_csv, require_probability
from qsmf.model import RESPONSE_KINDS, ModelParams, ResponseSpec

__all__ = [
    "InitSpec",
    "RunSection",
    "RunConfig",
    "parse_config",
    "serialize",
    "validate_for_command",
    "build_init",
    "with_seed",
    "COMMANDS",
    "PHI_COMMANDS",
]

COMMANDS = ("simulate-micro", "simulate-aux", "integrate-mf", "convergence", "lln", "coupled", "time-sync", "report")
# commands that always sample from the reproduction density
PHI_COMMANDS = ("simulate-aux", "lln", "coupled")
INIT_KINDS = ("delta", "two_delta", "uniform_atoms", "custom_csv")


@dataclass(frozen=True)
class InitSpec:
    kind: str = "two_delta"
    position: float = 0.5
    positions: tuple[float, float] = (0.1, 0.9)
    weight: float = 0.5
    count: int = 100
    low: float = 0.0
    high: float = 1.0
    path: str = ""


@dataclass(frozen=True)
class RunSection:
    t_end: float = 1.0
    dt: float = 1e-3
    method: str = "rk2"
    compact_tol: float = 1e-9
    k_end: int | None = None
    replicas: int = 200
    n_ladder: tuple[int, ...] = (100, 200, 400, 800, 1600)
    seed: int = 0
    output_dir: str = "qsmf_output"
    formulation: str = "individual"
    snapshot_times: tuple[float, ...] = ()
    snapshot_steps: tuple[int, ...] = ()


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams = ModelParams()
    response: ResponseSpec = ResponseSpec()
    init: InitSpec = InitSpec()
    run: RunSection = RunSection()
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    def line_of(self, section: str, key: str) -> int | None:
        return self.lines.get((section, key))


# ---------------------------------------------------------------- value parsing

def _real(text: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"expected a number, got {text!r}", line) from None
    if not math.isfinite(v):
        raise ParseError(f"expected a finite number, got {text!r}", line)
    return v


def _integer(text: str, line: int) -> int:
    # exact for large seeds; the float path only serves forms like 1e3
    try:
        return int(text)
    except ValueError:
        pass
    v = _real(text, line)
    if v != int(v):
        raise ParseError(f"expected an integer, got {text!r}", line)
    return int(v)


def _items(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _reals(text: str, line: int) -> tuple[float, ...]:
    return tuple(_real(t, line) for t in _items(text))


def _integers(text: str, line: int) -> tuple[int, ...]:
    return tuple(_integer(t, line) for t in _items(text))


def _word(text: str, line: int) -> str:
    if not text:
        raise ParseError("empty value", line)
    return text


def _optional_integer(text: str, line: int) -> int | None:
    return None if text.lower() == "none" else _integer(text, line)


_SCHEMA = {
    "model": {"s": _real, "b": _real, "c": _real, "lambda": _real, "n": _integer},
    "response": {"kind": _word, "level": _real, "slope": _real, "intercept": _real,
                 "exponent": _real, "threshold": _real},
    "init": {"kind": _word, "position": _real, "positions": _reals, "weight": _real, "count": _integer,
             "low": _real, "high": _real, "path": _word},
    "run": {"t_end": _real, "dt": _real, "method": _word, "compact_tol": _real, "k_end": _optional_integer,
            "replicas": _integer, "n_ladder": _integers, "seed": _integer, "output_dir": _word,
            "formulation": _word, "snapshot_times": _reals, "snapshot_steps": _integers},
}


def _tokenize(text: str) -> dict[str, dict[str, tuple[object, int]]]:
    values: dict[str, dict[str, tuple[object, int]]] = {name: {} for name in _SCHEMA}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise UnknownKey(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if section is None:
            raise ParseError("key outside of any [section]", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA[section]:
            raise UnknownKey(f"unknown key {key!r} in [{section}]", lineno)
        if key in values[section]:
            raise ParseError(f"duplicate key {key!r} in [{section}]", lineno)
        values[section][key] = (_SCHEMA[section][key](value, lineno), lineno)
    return values


# ---------------------------------------------------------------- validation

def _get(values, section, key, default):
    v = values[section].get(key)
    return default if v is None else v[0]


def _line(values, section, key):
    v = values[section].get(key)
    return None if v is None else v[1]


def _build_model(values) -> ModelParams:
    d = ModelParams()
    s, b, c = (_get(values, "model", k, getattr(d, k)) for k in ("s", "b", "c"))
    lam = _get(values, "model", "lambda", d.lam)
    n = _get(values, "model", "n", d.n)
    if b < 0:
        raise ValidationError("benefit b must be non-negative", _line(values, "model", "b"))
    if c < 0:
        raise ValidationError("cost c must be non-negative", _line(values, "model", "c"))
    if not (0 < s < 1.0 / c if c > 0 else s > 0):
        where = _line(values, "model", "s") or _line(values, "model", "c")
        raise ValidationError(f"selection strength must satisfy 0<s<1/c (s={s!r}, c={c!r})", where)
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda={lam!r} must lie in [0, 1]", _line(values, "model", "lambda"))
    if n < 2:
        raise ValidationError(f"population size n={n!r} must be at least 2", _line(values, "model", "n"))
    return ModelParams(s=s, b=b, c=c, lam=lam, n=n)


def _build_response(values) -> ResponseSpec:
    d = ResponseSpec()
    kw = {k: _get(values, "response", k, getattr(d, k)) for k in
          ("kind", "level", "slope", "intercept", "exponent", "threshold")}
    kind = kw["kind"]
    if kind not in RESPONSE_KINDS:
        raise ValidationError(f"unknown response kind {kind!r}; choose from {', '.join(RESPONSE_KINDS)}",
                              _line(values, "response", "kind"))
    if kind == "constant" and not 0.0 <= kw["level"] <= 1.0:
        raise ValidationError("constant response level must lie in [0, 1]", _line(values, "response", "level"))
    if kind == "hill":
        if not kw["exponent"] > 0:
            raise ValidationError("hill exponent must be positive", _line(values, "response", "exponent"))
        if not 0.0 < kw["threshold"] < 1.0:
            raise ValidationError("hill threshold must lie in (0, 1)", _line(values, "response", "threshold"))
    return ResponseSpec(**kw)


def _build_init(values) -> InitSpec:
    d = InitSpec()
    kw = {f.name: _get(values, "init", f.name, getattr(d, f.name)) for f in fields(InitSpec)}
    kind = kw["kind"]
    at = lambda key: _line(values, "init", key)  # noqa: E731
    if kind not in INIT_KINDS:
        raise ValidationError(f"unknown init kind {kind!r}; choose from {', '.join(INIT_KINDS)}", at("kind"))
    if not 0.0 <= kw["position"] <= 1.0:
        raise ValidationError("init position must lie in [0, 1]", at("position"))
    if len(kw["positions"]) != 2 or not all(0.0 <= p <= 1.0 for p in kw["positions"]):
        raise ValidationError("init positions must be two values in [0, 1]", at("positions"))
    if not 0.0 <= kw["weight"] <= 1.0:
        raise ValidationError("init weight must lie in [0, 1]", at("weight"))
    if kw["count"] < 1:
        raise ValidationError("init count must be at least 1", at("count"))
    if not 0.0 <= kw["low"] <= kw["high"] <= 1.0:
        raise ValidationError("init range needs 0 <= low <= high <= 1", at("low") or at("high"))
    if kind == "custom_csv" and not kw["path"]:
        raise ValidationError("init kind custom_csv needs a path", at("kind"))
    kw["positions"] = tuple(kw["positions"])
    return InitSpec(**kw)


def _build_run(values) -> RunSection:
    d = RunSection()
    kw = {f.name: _get(values, "run", f.name, getattr(d, f.name)) for f in fields(RunSection)}
    at = lambda key: _line(values, "run", key)  # noqa: E731
    if not kw["t_end"] >= 0:
        raise ValidationError("t_end must be non-negative", at("t_end"))
    if not 0.0 < kw["dt"] <= 0.1:
        raise ValidationError("dt must lie in (0, 0.1]", at("dt"))
    if kw["method"] not in ("euler", "rk2"):
        raise ValidationError("method must be euler or rk2", at("method"))
    if kw["compact_tol"] < 0:
        raise ValidationError("compact_tol must be non-negative", at("compact_tol"))
    if kw["k_end"] is not None and kw["k_end"] < 0:
        raise ValidationError("k_end must be non-negative", at("k_end"))
    if kw["replicas"] < 2:
        raise ValidationError("replicas must be at least 2", at("replicas"))
    ladder = kw["n_ladder"]
    if not ladder or ladder[0] < 2 or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValidationError("n_ladder must be strictly increasing sizes >= 2", at("n_ladder"))
    if kw["formulation"] not in ("individual", "population"):
        raise ValidationError("formulation must be individual or population", at("formulation"))
    times = kw["snapshot_times"]
    if list(times) != sorted(times) or any(t < 0 or t > kw["t_end"] for t in times):
        raise ValidationError("snapshot_times must be sorted within [0, t_end]", at("snapshot_times"))
    steps = kw["snapshot_steps"]
    if list(steps) != sorted(steps) or any(k < 0 for k in steps):
        raise ValidationError("snapshot_steps must be sorted and non-negative", at("snapshot_steps"))
    return RunSection(**kw)


def parse_config(text: str, command: str | None = None, formulation: str | None = None) -> RunConfig:
    """Parse and validate configuration text.

    ``command`` and ``formulation`` enable the checks that depend on what
    will be run (see :func:`validate_for_command`).

    Raises
    ------
    ParseError, UnknownKey, ValidationError
        With the offending line number where one exists.
    """
    values = _tokenize(text)
    lines = {(sec, key): ln for sec, kv in values.items() for key, (_, ln) in kv.items()}
    cfg = RunConfig(_build_model(values), _build_response(values), _build_init(values), _build_run(values), lines)
    if command is not None:
        validate_for_command(cfg, command, formulation)
    return cfg


def validate_for_command(cfg: RunConfig, command: str, formulation: str | None = None) -> None:
    """Reject ``lambda > 1/2`` wherever the reproduction density is sampled."""
    if command not in COMMANDS:
        raise ValidationError(f"unknown command {command!r}")
    form = formulation or cfg.run.formulation
    uses_phi = command in PHI_COMMANDS or (
        command in ("simulate-micro", "convergence", "time-sync") and form == "population")
    if uses_phi and cfg.model.lam > 0.5:
        raise ValidationError(
            f"lambda={cfg.model.lam!r} > 1/2 is not allowed for {command}"
            + (" with the population formulation" if form == "population" else "")
            + " (reproduction density needs lambda <= 1/2)",
            cfg.line_of("model", "lambda"))


def build_init(init: InitSpec, base_dir: Path | str | None = None) -> SignedAtomicMeasure:
    """Atomic initial density described by ``init``."""
    if init.kind == "delta":
        return SignedAtomicMeasure.delta(init.position)
    if init.kind == "two_delta":
        a, b = init.positions
        return SignedAtomicMeasure([a, b], [init.weight, 1.0 - init.weight])
    if init.kind == "uniform_atoms":
        m = init.count
        pos = init.low + (np.arange(m) + 0.5) * (init.high - init.low) / m
        return SignedAtomicMeasure(pos, np.full(m, 1.0 / m))
    path = Path(init.path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    try:
        rho = read_density_csv(path)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read init density {str(path)!r}: {exc}") from exc
    try:
        return require_probability(rho, 1e-9)
    except ValueError as exc:
        raise ValidationError(f"init density {str(path)!r} is not a probability measure: {exc}") from exc


# ---------------------------------------------------------------- serialisation

def _fmt(v) -> str:
    if isinstance(v, bool):
        raise TypeError("booleans are not part of the format")
    if v is None:
        return "none"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def serialize(cfg: RunConfig) -> str:
    """Canonical text for ``cfg``; ``parse_config`` inverts it exactly."""
    m = cfg.model
    sections = {
        "model": {"s": m.s, "b": m.b, "c": m.c, "lambda": m.lam, "n": m.n},
        "response": {f.name: getattr(cfg.response, f.name) for f in fields(ResponseSpec)},
        "init": {f.name: getattr(cfg.init, f.name) for f in fields(InitSpec)},
        "run": {f.name: getattr(cfg.run, f.name) for f in fields(RunSection)},
    }
    out = []
    for name, kv in sections.items():
        out.append(f"[{name}]")
        for k, v in kv.items():
            if isinstance(v, tuple) and not v:
                continue  # an empty list has no textual form; it is the default
            if k == "path" and v == "":
                continue
            out.append(f"{k} = {_fmt(float(v) if k in _FLOAT_KEYS else v)}")
        out.append("")
    return "\n".join(out)


_FLOAT_KEYS = {"s", "b", "c", "lambda", "level", "slope", "intercept", "exponent", "threshold", "position",
               "weight", "low", "high", "t_end", "dt", "compact_tol"}


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, run=replace(cfg.run, seed=int(seed)))
