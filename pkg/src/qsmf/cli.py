"""Command-line entry point ``qsmf``.

Exit status: 0 on success, 1 for invalid input (bad flags, unknown command,
configuration errors), 2 when a computation fails.
"""
from __future__ import annotations

import argparse
import hashlib
import os
import platform
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from qsmf import __version__
from qsmf.config import COMMANDS, RunConfig, build_init, parse_config, serialize, validate_for_command, with_seed
from qsmf.errors import ConfigError, LambdaOutOfRange, QSMFError
from qsmf.auxiliary import run_aux
from qsmf.harness import (REPORT_HEADER, STREAM_RULE, ExperimentConfig, fit_rate, resolve_workers, run_convergence,
                          run_coupled, run_lln, run_time_sync, stream_for)
from qsmf.measure import format_density_csv
from qsmf.meanfield import IntegratorConfig, diagnostic_lines, mf_integrate
from qsmf.micro import MicroState, empirical_density, run_micro, sample_degrees

__all__ = ["main", "build_parser", "dispatch"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qsmf", description="Quorum-sensing many-particle and mean-field simulations.")
    p.add_argument("command", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--config", type=Path, help="configuration file (defaults apply without one)")
    p.add_argument("--seed", type=int, help="master seed; overrides [run] seed")
    p.add_argument("--output", type=Path, help="output directory; overrides [run] output_dir")
    p.add_argument("--threads", type=int, help="worker processes, 0 = all CPUs (env QSMF_THREADS)")
    p.add_argument("--formulation", choices=("individual", "population"),
                   help="micro-process formulation; overrides [run] formulation")
    return p


def _threads(flag: int | None) -> int:
    if flag is not None:
        return resolve_workers(flag)
    env = os.environ.get("QSMF_THREADS", "").strip()
    if not env:
        return 1
    try:
        return resolve_workers(int(env))
    except ValueError:
        raise _UsageError(f"QSMF_THREADS={env!r} is not a non-negative integer") from None


def _write_atomic(path: Path, text: str) -> None:
    # write-then-rename, so a failed run never leaves a partial file behind
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _experiment(cfg: RunConfig, base_dir: Path) -> ExperimentConfig:
    r = cfg.run
    return ExperimentConfig(
        params=cfg.model, spec=cfg.response, init=build_init(cfg.init, base_dir), n_ladder=r.n_ladder,
        replicas=r.replicas, t_eval=r.t_end, seed=r.seed,
        integrator=IntegratorConfig(dt=r.dt, method=r.method, compact_tol=r.compact_tol),
        formulation=r.formulation)


def _times(cfg: RunConfig) -> list[float]:
    return list(cfg.run.snapshot_times) or [0.0, cfg.run.t_end]


def _simulate_micro(cfg, base_dir, workers):
    params, r = cfg.model, cfg.run
    rho0 = build_init(cfg.init, base_dir)
    stream = stream_for(r.seed, params.n, 0, 0, params.lam)
    state = MicroState(sample_degrees(rho0, params.n, stream))
    if r.t_end == 0:
        times = _times(cfg)
        dens = [empirical_density(state)] * len(times)
        steps = [0] * len(times)
    else:
        traj = run_micro(state, params, cfg.response, r.t_end, r.formulation, stream, _times(cfg))
        times, dens, steps = traj.snapshot_times, traj.densities, traj.snapshot_steps
    text = format_density_csv((((t, k), d) for t, k, d in zip(times, steps, dens)), ("snapshot_time", "k"))
    return {"micro_density.csv": text}


def _simulate_aux(cfg, base_dir, workers):
    params, r = cfg.model, cfg.run
    k_end = r.k_end if r.k_end is not None else params.n
    steps = list(r.snapshot_steps) or [0, k_end]
    if steps[-1] > k_end:
        raise ConfigError(f"snapshot_steps exceed k_end={k_end}", cfg.line_of("run", "snapshot_steps"))
    rho0 = build_init(cfg.init, base_dir)
    stream = stream_for(r.seed, params.n, 0, 0, params.lam)
    states = run_aux(rho0, params, cfg.response, k_end, stream, snapshot_steps=steps, compact_tol=0.0)
    avg = format_density_csv((((s.k,), s.average) for s in states), ("k",))
    emp = format_density_csv((((s.k,), s.empirical) for s in states), ("k",))
    return {"aux_average.csv": avg, "aux_empirical.csv": emp}


def _integrate_mf(cfg, base_dir, workers):
    r = cfg.run
    rho0 = build_init(cfg.init, base_dir)
    integ = IntegratorConfig(dt=r.dt, method=r.method, compact_tol=r.compact_tol)
    traj = mf_integrate(rho0, cfg.model, cfg.response, r.t_end, integ, _times(cfg))
    text = format_density_csv((((t,), d) for t, d in zip(traj.times, traj.densities)), ("snapshot_time",))
    return {"mf_density.csv": text, "mf_diagnostics.csv": diagnostic_lines(traj)}


def _report_files(name, report):
    return {f"{name}_report.csv": report.to_csv(), f"{name}_summary.txt": report.summary()}


def _convergence(cfg, base_dir, workers):
    return _report_files("convergence", run_convergence(_experiment(cfg, base_dir), workers=workers))


def _lln(cfg, base_dir, workers):
    ks = [cfg.run.k_end] if cfg.run.k_end is not None else None
    return _report_files("lln", run_lln(_experiment(cfg, base_dir), k_schedule=ks, workers=workers))


def _coupled(cfg, base_dir, workers):
    return _report_files("coupled", run_coupled(_experiment(cfg, base_dir), k_end=cfg.run.k_end, workers=workers))


def _time_sync(cfg, base_dir, workers):
    # a zero horizon is legal here: no event can have happened by t = 0
    t = cfg.run.t_end
    exp = _experiment(cfg if t > 0 else replace(cfg, run=replace(cfg.run, t_end=1.0)), base_dir)
    return _report_files("time_sync", run_time_sync(exp, t=t, workers=workers))


def _report(cfg, base_dir, workers, out_dir: Path):
    """Merge every ``*_report.csv`` in the output directory into one table."""
    sources = sorted(p for p in out_dir.glob("*_report.csv") if p.name != "combined_report.csv")
    if not sources:
        raise QSMFError(f"no *_report.csv files in {str(out_dir)!r}")
    rows = []
    for src in sources:
        lines = src.read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != REPORT_HEADER:
            raise QSMFError(f"{src.name}: not a report CSV")
        rows.extend(lines[1:])
    summary = [f"sources: {', '.join(p.name for p in sources)}", f"rows: {len(rows)}"]
    conv = [r.split(",") for r in rows if r.startswith("convergence,")]
    if len(conv) >= 3:
        notes: list[str] = []
        slope, _, se = fit_rate([(float(c[1]), float(c[3])) for c in conv], notes)
        summary.append(f"convergence slope: {slope!r} +- {se!r}")
        summary.extend(notes)
    return {"combined_report.csv": "\n".join([REPORT_HEADER, *rows]) + "\n",
            "report.txt": "\n".join(summary) + "\n"}


_HANDLERS = {
    "simulate-micro": _simulate_micro,
    "simulate-aux": _simulate_aux,
    "integrate-mf": _integrate_mf,
    "convergence": _convergence,
    "lln": _lln,
    "coupled": _coupled,
    "time-sync": _time_sync,
}


def _manifest(command: str, cfg_text: str, cfg: RunConfig, outputs: dict[str, str]) -> str:
    lines = [
        f"command = {command}",
        f"config_sha256 = {hashlib.sha256(cfg_text.encode('utf-8')).hexdigest()}",
        f"seed = {cfg.run.seed}",
        f"formulation = {cfg.run.formulation}",
        f"stream_rule = {STREAM_RULE}",
        "stream_channels = 0 primary, 1 uncoupled baseline, 2 time synchronisation",
        f"qsmf = {__version__}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        f"python = {platform.python_version()}",
    ]
    lines += [f"output {name} sha256 = {hashlib.sha256(text.encode('utf-8')).hexdigest()}"
              for name, text in sorted(outputs.items())]
    return "\n".join(lines) + "\n"


def dispatch(command: str, cfg: RunConfig, out_dir: Path, workers: int = 1, base_dir: Path | None = None) -> dict:
    """Run ``command`` and write its files (plus ``manifest.txt``) into ``out_dir``.

    Returns the mapping of file names to contents.
    """
    base_dir = Path.cwd() if base_dir is None else base_dir
    if command == "report":
        outputs = _report(cfg, base_dir, workers, out_dir)
    else:
        outputs = _HANDLERS[command](cfg, base_dir, workers)
    cfg_text = serialize(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in outputs.items():
        _write_atomic(out_dir / name, text)
    manifest = _manifest(command, cfg_text, cfg, outputs)
    _write_atomic(out_dir / ("manifest.txt" if command != "report" else "report_manifest.txt"), manifest)
    return outputs


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command not in COMMANDS:
            raise _UsageError(f"unknown command {args.command!r}")
        workers = _threads(args.threads)
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        base_dir = args.config.parent if args.config else Path.cwd()
        cfg = parse_config(text)
        if args.seed is not None:
            cfg = with_seed(cfg, args.seed)
        if args.formulation is not None:
            cfg = replace(cfg, run=replace(cfg.run, formulation=args.formulation))
        validate_for_command(cfg, args.command)
        out_dir = args.output if args.output is not None else base_dir / cfg.run.output_dir
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"qsmf: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, LambdaOutOfRange) as exc:
        print(f"qsmf: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"qsmf: cannot read configuration: {exc}", file=sys.stderr)
        return 1
    try:
        dispatch(args.command, cfg, out_dir, workers, base_dir)
    except (ConfigError, LambdaOutOfRange) as exc:
        print(f"qsmf: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except (QSMFError, OSError, ValueError, RuntimeError) as exc:
        print(f"qsmf: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
