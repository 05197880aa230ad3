"""Command-line front end for the convergence laboratory.

Five subcommands: converge-time, converge-space, mms, noise-stats and
single-run.  Configuration comes from a flat key=value file (--config)
overridden by flags; step sizes are written as exact fractions ("1/64")
so dyadic ladders never pass through floating point.  Every run writes its
data files plus a JSON manifest holding the fully resolved configuration,
from which the run can be reproduced byte-identically (the manifest's own
timestamp aside).

Exit codes: 0 success, 1 configuration error, 2 study failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, ensemble, linalg, stepper
from .ensemble import StudyConfig, StudyFailure
from .noise import NoiseConfig

#: every configuration key, its help line, and its per-command defaults;
#: the --help completeness check in the test suite walks this table
CONFIG_KEYS = {
    "T": "total integration time, a fraction like 1 or 1/10",
    "tau": "fixed time step, a fraction; must be T*2^-k with integer tau^-2",
    "tau_ladder": "dyadic step ladder, 'coarse:fine' range or comma list, e.g. 1/4:1/32",
    "nx": "cells per axis of the fixed mesh",
    "nx_ladder": "mesh ladder, 'coarse:fine' range or comma list, e.g. 8:64",
    "lam": "first elastic constant (the divergence weight)",
    "mu": "second elastic constant (the strain weight)",
    "coefficients": "nonlinearity pair: trig, linear or zero",
    "samples": "Monte Carlo sample count",
    "seed": "base seed of the counter-based noise streams",
    "workers": "parallel sample workers; default ELWAVE_WORKERS or 1",
    "zero_noise": "true forces the zero Brownian path (deterministic run)",
    "draws": "draws per level for noise-stats",
    "oracle_refinement": "bridge refinement of the integrated-increment oracle",
    "picard_tol": "relative tolerance of the implicit drift iteration",
    "picard_cap": "iteration cap of the implicit drift iteration",
    "axis": "mms ladder axis: time or space",
    "outdir": "directory for output files",
}

_COMMON_DEFAULTS = {
    "lam": "1",
    "mu": "1",
    "seed": "0",
    "samples": "1",
    "zero_noise": "false",
    "draws": "100000",
    "oracle_refinement": "8",
    "picard_tol": "1e-10",
    "picard_cap": "50",
    "outdir": ".",
}

_COMMAND_DEFAULTS = {
    "converge-time": {
        "T": "1", "nx": "32", "tau_ladder": "1/4:1/32",
        "samples": "200", "coefficients": "trig",
    },
    "converge-space": {
        "T": "1/10", "tau": "1/1280", "nx_ladder": "8:64",
        "samples": "100", "coefficients": "linear",
    },
    "mms": {"axis": "time", "coefficients": "zero"},
    "noise-stats": {"tau_ladder": "1/4:1/32"},
    "single-run": {"T": "1", "tau": "1/64", "nx": "16", "coefficients": "trig"},
}

_MMS_AXIS_DEFAULTS = {
    "time": {"T": "1", "nx": "64", "tau_ladder": "1/2:1/16"},
    "space": {"T": "1/10", "tau": "1/1280", "nx_ladder": "8:64"},
}

COMMANDS = ("converge-time", "converge-space", "mms", "noise-stats", "single-run")


class ConfigError(ValueError):
    pass


def _parse_fraction(text: str, key: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{key}: {text!r} is not a fraction") from None


def _expand_range(lo, hi, key):
    if lo == hi:
        return [lo]
    descending = lo > hi
    ratio = lo / hi if descending else Fraction(hi) / lo
    if ratio < 1 or ratio.denominator != 1 or (ratio.numerator & (ratio.numerator - 1)):
        raise ConfigError(f"{key}: range {lo}:{hi} is not a dyadic chain")
    count = ratio.numerator.bit_length() - 1
    if descending:
        return [lo / 2**j for j in range(count + 1)]
    return [lo * 2**j for j in range(count + 1)]


def _parse_ladder(text: str, key: str, as_int: bool):
    conv = (lambda s: int(s)) if as_int else (lambda s: _parse_fraction(s, key))
    try:
        if ":" in text:
            lo_s, hi_s = text.split(":", 1)
            values = _expand_range(Fraction(conv(lo_s)), Fraction(conv(hi_s)), key)
        else:
            values = [Fraction(conv(part)) for part in text.split(",")]
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{key}: cannot parse ladder {text!r}") from None
    if as_int:
        return tuple(int(v) for v in values)
    return tuple(values)


def _check_step(T: Fraction, tau: Fraction, key: str) -> Fraction:
    try:
        NoiseConfig(T=T, tau=tau, seed=0, sample_index=0)
    except ValueError as exc:
        raise ConfigError(
            f"{key}: {exc}; dyadic steps are required so coupled ladders "
            f"can share one Brownian path"
        ) from None
    return tau


def _read_config_file(path: str) -> dict[str, str]:
    values = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def parse_config(command: str, config_path: str | None, overrides: dict[str, str]):
    """Resolve defaults, file values and flag overrides into a StudyConfig.

    Returns (study_config, resolved_values) with the resolved flat mapping
    that the manifest records.
    """
    values = dict(_COMMON_DEFAULTS)
    values.update(_COMMAND_DEFAULTS[command])
    file_values = _read_config_file(config_path) if config_path else {}
    flag_values = {k: v for k, v in overrides.items() if v is not None}
    axis = flag_values.get("axis") or file_values.get("axis") or values.get("axis")
    if command == "mms":
        if axis not in _MMS_AXIS_DEFAULTS:
            raise ConfigError(f"axis: expected time or space, got {axis!r}")
        values.update(_MMS_AXIS_DEFAULTS[axis])
    values.update(file_values)
    values.update(flag_values)

    T = _parse_fraction(values["T"], "T") if "T" in values else Fraction(1)
    values["T"] = str(T)
    kind = {
        "converge-time": "temporal",
        "converge-space": "spatial",
        "mms": "mms",
        "noise-stats": "noise-stats",
        "single-run": "single-run",
    }[command]

    taus = tau = nx_list = nx = None
    if "tau_ladder" in values:
        taus = _parse_ladder(values["tau_ladder"], "tau_ladder", as_int=False)
        values["tau_ladder"] = ",".join(str(t) for t in taus)
        if kind != "noise-stats":
            for t in taus:
                _check_step(T, t, "tau_ladder")
        else:
            for t in taus:
                _check_step(t, t, "tau_ladder")
    if "tau" in values:
        tau = _parse_fraction(values["tau"], "tau")
        values["tau"] = str(tau)
        _check_step(T, tau, "tau")
    if "nx_ladder" in values:
        nx_list = _parse_ladder(values["nx_ladder"], "nx_ladder", as_int=True)
        values["nx_ladder"] = ",".join(str(n) for n in nx_list)
    if "nx" in values:
        nx = int(values["nx"])

    zero_noise = values["zero_noise"].lower()
    if zero_noise not in {"true", "false", "0", "1", "yes", "no"}:
        raise ConfigError(f"zero_noise: expected a boolean, got {values['zero_noise']!r}")

    try:
        cfg = StudyConfig(
            kind=kind,
            T=T,
            lam=float(values["lam"]),
            mu=float(values["mu"]),
            coefficients=values.get("coefficients", "trig"),
            taus=taus,
            tau=tau,
            nx_list=nx_list,
            nx=nx,
            samples=int(values["samples"]),
            seed=int(values["seed"]),
            workers=int(values["workers"]) if "workers" in values else None,
            zero_noise=zero_noise in {"true", "1", "yes"},
            draws=int(values["draws"]),
            oracle_refinement=int(values["oracle_refinement"]),
            picard_tol=float(values["picard_tol"]),
            picard_cap=int(values["picard_cap"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elwave",
        description="Convergence laboratory for a nonlinear stochastic "
        "elastic wave solver.",
    )
    parser.add_argument("--version", action="version", version=f"elwave {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    briefs = {
        "converge-time": "step-size convergence study on a fixed mesh",
        "converge-space": "mesh convergence study at a fixed step",
        "mms": "manufactured-solution verification against the exact field",
        "noise-stats": "moment checks of the sampled noise increments",
        "single-run": "one trajectory with checkpoints and energy traces",
    }
    for cmd in COMMANDS:
        p = sub.add_parser(cmd, help=briefs[cmd])
        p.add_argument("--config", metavar="FILE", help="flat key=value configuration file")
        for key, text in CONFIG_KEYS.items():
            default_parts = []
            if key in _COMMAND_DEFAULTS[cmd]:
                default_parts.append(f"default {_COMMAND_DEFAULTS[cmd][key]}")
            elif key in _COMMON_DEFAULTS:
                default_parts.append(f"default {_COMMON_DEFAULTS[key]}")
            suffix = f" ({'; '.join(default_parts)})" if default_parts else ""
            p.add_argument(
                f"--{key.replace('_', '-')}", dest=key, metavar="V", help=text + suffix
            )
    return parser


def _write_manifest(outdir: Path, stem: str, command: str, values, outputs) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": int(values["seed"]),
        "config": {k: values[k] for k in sorted(values)},
        "outputs": [p.name for p in outputs],
    }
    path = outdir / f"{stem}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _write_log(outdir: Path, stem: str, command: str, values, summary: list[str]) -> Path:
    lines = [f"command: {command}"]
    lines += [f"config: {k}={values[k]}" for k in sorted(values)]
    lines += summary
    path = outdir / f"{stem}.log"
    path.write_text("\n".join(lines) + "\n")
    return path


def _table_summary(table) -> list[str]:
    orders = table.orders
    out = [f"samples: {table.samples} (failed {table.failed_samples})"]
    for f in ensemble.ERROR_FIELDS:
        err = " ".join(f"{v:.4e}" for v in table.errors[f])
        out.append(f"{f} errors: {err}")
        if len(table.resolutions) > 1:
            ords = " ".join(f"{v:.3f}" for v in orders[f])
            out.append(f"{f} orders: {ords}")
    return out


def _emit_table(table, outdir: Path, stem: str) -> tuple[list[Path], list[str]]:
    csv_path = outdir / f"{stem}_rates.csv"
    gp_path = outdir / f"{stem}_rates.gp"
    table.to_csv(csv_path)
    table.to_gnuplot(gp_path)
    return [csv_path, gp_path], _table_summary(table)


def _run_single(cfg: StudyConfig, outdir: Path, stem: str):
    diag_path = outdir / f"{stem}_diagnostics.tsv"
    with open(diag_path, "w") as diag:
        diag.write("# step\tpicard\tincrement\tenergy\tgrad_energy\n")
        traj, ops = ensemble.single_run(cfg, diagnostics=diag)
    energy_path = outdir / f"{stem}_energy.csv"
    with open(energy_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "t", "energy", "staggered_energy"])
        for n, (j, s) in enumerate(zip(traj.energy_J, traj.energy_staggered)):
            writer.writerow([n, f"{n * ops.tau:.10g}", f"{j:.12e}", f"{s:.12e}"])
    paths = [diag_path, energy_path]
    for name, arr in (
        ("times", traj.times),
        ("u", np.stack(traj.u)),
        ("v", np.stack(traj.v)),
    ):
        p = outdir / f"{stem}_{name}.npy"
        np.save(p, arr)
        paths.append(p)
    summary = [
        f"steps: {len(traj.energy_J) - 1}",
        f"max picard iterations: {traj.max_picard}",
        f"final energy: {traj.energy_J[-1]:.6e}",
    ]
    return paths, summary


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    command = args.command
    overrides = {k: getattr(args, k, None) for k in CONFIG_KEYS}

    try:
        cfg, values = parse_config(command, args.config, overrides)
        outdir = Path(values["outdir"])
        outdir.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"elwave: configuration error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"elwave: cannot prepare output directory: {exc}", file=sys.stderr)
        return 3

    stem = command if command != "mms" else f"mms-{values['axis']}"
    try:
        if command == "converge-time":
            table = ensemble.temporal_convergence_study(cfg)
            paths, summary = _emit_table(table, outdir, stem)
        elif command == "converge-space":
            table = ensemble.spatial_convergence_study(cfg)
            paths, summary = _emit_table(table, outdir, stem)
        elif command == "mms":
            table = ensemble.mms_study(cfg)
            paths, summary = _emit_table(table, outdir, stem)
        elif command == "noise-stats":
            report = ensemble.noise_stats_study(cfg)
            report_path = outdir / f"{stem}_report.txt"
            report_path.write_text("\n".join(report.lines()) + "\n")
            paths, summary = [report_path], report.lines()[:2]
        else:
            paths, summary = _run_single(cfg, outdir, stem)
        log_path = _write_log(outdir, stem, command, values, summary)
        paths.append(log_path)
        paths.append(_write_manifest(outdir, stem, command, values, paths))
    except (ValueError, ConfigError) as exc:
        print(f"elwave: configuration error: {exc}", file=sys.stderr)
        return 1
    except (StudyFailure, stepper.StepFailure, linalg.ConvergenceFailure) as exc:
        print(f"elwave: study failed: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"elwave: I/O error: {exc}", file=sys.stderr)
        return 3

    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
