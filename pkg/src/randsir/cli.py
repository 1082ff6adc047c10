"""Command-line harness: ``randsir {simulate,report,figure,pullback,scan}``.

Exit codes: 0 success, 2 configuration error, 3 numerical error, 4 I/O error.
The default output directory is ``$RANDSIR_OUT`` or the working directory;
``--out`` and the config key ``out_dir`` take precedence, in that order.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import FIGURE_IDS, ExperimentConfig, figure_preset, load_config
from .dynamics import (
    dichotomy_projections,
    disease_free_linearization,
    format_dichotomy,
    pullback_endpoints,
    write_floor_csv,
)
from .errors import (
    ClassificationDisagreement,
    ConfigError,
    GridOverflow,
    InvalidParameter,
    NonHyperbolicMatrix,
    NumericalError,
    SirError,
)
from .integrator import Trajectory, integrate_many, write_trajectory_csv
from .model import ModelParams, ModelVariant, NoiseBounds, Variant, Verdict, regime_report

log = logging.getLogger("randsir")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "RANDSIR_OUT"
SCAN_PARAMS = ("gamma", "d", "e", "q")
# endemic floors are read off this window of the published runs
FLOOR_WINDOW = (20.0, 40.0)


# ------------------------------------------------------------ helpers


def _csv_line(values) -> str:
    out = []
    for v in values:
        if isinstance(v, str):
            out.append(v)
        elif v is None:
            out.append("")
        else:
            out.append(format(float(v), ".17g"))
    return ",".join(out)


def _write_rows(dest: Path, header: str, rows) -> Path:
    text = "\n".join([header] + [_csv_line(r) for r in rows]) + "\n"
    dest.write_text(text, encoding="utf-8", newline="\n")
    return dest


def _parse_floats(text: str, what: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    try:
        values = [float(tok) for tok in text.split(",")]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not all(math.isfinite(v) for v in values):
        raise ConfigError(f"{what}: values must be finite")
    return values


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config and args.preset is not None:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    elif args.preset is not None:
        cfg = figure_preset(args.preset)
    else:
        raise ConfigError("one of --config or --preset is required")
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.realizations is not None:
        changes["realizations"] = args.realizations
    if args.dt is not None:
        changes["dt"] = args.dt
    return cfg.with_overrides(**changes) if changes else cfg


def resolve_out_dir(args: argparse.Namespace, cfg: Optional[ExperimentConfig] = None) -> Path:
    if args.out:
        out = Path(args.out)
    elif cfg is not None and cfg.out_dir:
        out = Path(cfg.out_dir)
    else:
        out = Path(os.environ.get(OUT_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    return out


def run_ensemble(cfg: ExperimentConfig, extra_horizon: float = 0.0) -> list[Trajectory]:
    variants = [cfg.variant_for(k, extra_horizon) for k in range(cfg.realizations)]
    return integrate_many(variants, cfg.params, cfg.u0, cfg.t_span, cfg.dt, cfg.dt_out)


def run_reference(cfg: ExperimentConfig) -> Trajectory:
    tag = Variant.CLASSICAL if cfg.variant is Variant.CLASSICAL else Variant.DETERMINISTIC
    return integrate_many(ModelVariant(tag), cfg.params, cfg.u0, cfg.t_span, cfg.dt, cfg.dt_out)[0]


# ------------------------------------------------------------ report


def _fmt_complex(z: complex) -> str:
    return f"{z.real:.10g}{z.imag:+.10g}j"


def report_lines(cfg: ExperimentConfig) -> tuple[list[str], list[tuple[str, str]]]:
    rep = regime_report(cfg.params, cfg.bounds, cfg.variant)
    text = [f"variant: {rep.variant.value}"]
    rows: list[tuple[str, str]] = [("variant", rep.variant.value)]
    for k, info in enumerate(rep.equilibria):
        name = "E0*" if k == 0 else "E1*"
        p = info.point
        eigs = np.sort_complex(np.asarray(info.eigenvalues, dtype=complex))
        eig_text = " ".join(_fmt_complex(z) for z in eigs)
        text.append(f"{name} = ({p.S:.10g}, {p.I:.10g}, {p.R:.10g})  {info.stability.value}")
        text.append(f"  eigenvalues: {eig_text}")
        rows += [(f"{name}_S", f"{p.S:.17g}"), (f"{name}_I", f"{p.I:.17g}"), (f"{name}_R", f"{p.R:.17g}"),
                 (f"{name}_class", info.stability.value), (f"{name}_eigenvalues", eig_text)]
    text.append(f"R0 ratio: {rep.r0:.10g}")
    rows.append(("R0", f"{rep.r0:.17g}"))
    for label, value in (("R1", rep.r1), ("R2", rep.r2)):
        if value is not None:
            text.append(f"{label} ratio: {value:.10g}")
            rows.append((label, f"{value:.17g}"))
    text.append(f"verdict: {rep.verdict.value}")
    rows.append(("verdict", rep.verdict.value))
    if cfg.variant is not Variant.CLASSICAL:
        try:
            dich = dichotomy_projections(disease_free_linearization(cfg.params))
            text.append(format_dichotomy(dich).rstrip("\n"))
            rows.append(("unstable_rank", str(dich.unstable_rank)))
        except NonHyperbolicMatrix as exc:
            text.append(f"dichotomy report: none ({exc})")
            rows.append(("unstable_rank", "nonhyperbolic"))
    return text, rows


def cmd_report(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = resolve_out_dir(args, cfg)
    text, rows = report_lines(cfg)
    print("\n".join(text))
    dest = out / "report.csv"
    dest.write_text("\n".join(["quantity,value"] + [f"{k},{v}" for k, v in rows]) + "\n",
                    encoding="utf-8", newline="\n")
    log.info("wrote %s", dest)
    return EXIT_OK


# ------------------------------------------------------------ simulate / figure


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = resolve_out_dir(args, cfg)
    for k, traj in enumerate(run_ensemble(cfg)):
        write_trajectory_csv(traj, out / f"traj_{cfg.seed}_{k}.csv")
    log.info("wrote %d trajectories to %s", cfg.realizations, out)
    return EXIT_OK


def cmd_figure(args: argparse.Namespace) -> int:
    if args.id not in FIGURE_IDS:
        raise ConfigError(f"figure id must be one of {FIGURE_IDS}, got {args.id}")
    args.config, args.preset = None, args.id
    cfg = resolve_config(args)
    out = resolve_out_dir(args, cfg)
    prefix = f"fig{args.id}"
    series = run_ensemble(cfg)
    reference = run_reference(cfg)
    for k, traj in enumerate(series):
        write_trajectory_csv(traj, out / f"{prefix}_traj_{cfg.seed}_{k}.csv")
    write_trajectory_csv(reference, out / f"{prefix}_reference.csv")

    rep = regime_report(cfg.params, cfg.bounds, cfg.variant)
    if rep.verdict is Verdict.ENDEMIC and cfg.t_span[1] >= FLOOR_WINDOW[0]:
        t1, t2 = FLOOR_WINDOW[0], min(FLOOR_WINDOW[1], cfg.t_span[1])
        floors = [(k, float(tr.I[tr.window(t1, t2)].min())) for k, tr in enumerate(series)]
        write_floor_csv(floors, out / f"{prefix}_floors.csv")

    try:
        from .plotting import plot_figure

        plot_figure(series, reference, out / f"{prefix}.svg",
                    title=f"{cfg.variant.value}, gamma={cfg.params.gamma:g}")
    except Exception as exc:  # plotting must never fail the run
        warnings.warn(f"plot skipped: {exc}", RuntimeWarning, stacklevel=1)
        print(f"randsir: warning: plot skipped ({exc})", file=sys.stderr)
    log.info("figure %d written to %s", args.id, out)
    return EXIT_OK


# ------------------------------------------------------------ pullback


def cmd_pullback(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    horizons = _parse_floats(args.horizons, "--horizons")
    if not horizons:
        raise ConfigError("--horizons needs at least one value")
    if any(h < 0 for h in horizons) or any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ConfigError(f"horizons must be nonnegative and strictly increasing, got {horizons}")
    out = resolve_out_dir(args, cfg)
    variants = [cfg.variant_for(k, extra_horizon=horizons[-1]) for k in range(cfg.realizations)]
    u0 = np.repeat(cfg.u0.as_array()[None, :], cfg.realizations, axis=0)
    ends = np.stack([pullback_endpoints(variants, cfg.params, cfg.tau, T, u0, cfg.dt) for T in horizons])
    for k in range(cfg.realizations):
        rows = []
        for j, T in enumerate(horizons):
            gap = float("nan") if j == 0 else float(np.linalg.norm(ends[j, k] - ends[j - 1, k]))
            rows.append((T, *ends[j, k], gap))
        _write_rows(out / f"pullback_{cfg.seed}_{k}.csv", "T,S,I,R,dist_prev", rows)
    return EXIT_OK


# ------------------------------------------------------------ scan


def scan_config(cfg: ExperimentConfig, name: str, value: float) -> ExperimentConfig:
    if name in ("gamma", "q"):
        params = cfg.params.replace(**{name: value})
        return cfg.with_overrides(params=params)
    if not cfg.variant.is_random or cfg.bounds is None:
        raise ConfigError(f"scanning {name} needs a random variant, base is {cfg.variant.value}")
    if name == "d":
        bounds = NoiseBounds(value, cfg.bounds.e)
    else:
        if cfg.variant is not Variant.RANDOM_GAMMA_RANDOM_Q:
            raise ConfigError("scanning e needs the random_gamma_random_q variant")
        bounds = NoiseBounds(cfg.bounds.d, value)
    return cfg.with_overrides(bounds=bounds)


def scan_rows(cfg: ExperimentConfig, name: str, grid: Sequence[float]) -> list[tuple]:
    rows = []
    t_mid = 0.5 * (cfg.t_span[0] + cfg.t_span[1])
    for value in grid:
        sub = scan_config(cfg, name, value)
        verdict = regime_report(sub.params, sub.bounds, sub.variant).verdict
        trajs = run_ensemble(sub)
        tail = min(float(tr.I[tr.window(t_mid, tr.t[-1])].min()) for tr in trajs)
        terminal = max(float(tr.I[-1]) for tr in trajs)
        rows.append((value, verdict.value, tail, terminal))
    return rows


def cmd_scan(args: argparse.Namespace) -> int:
    if args.param not in SCAN_PARAMS:
        raise ConfigError(f"--param must be one of {SCAN_PARAMS}, got {args.param!r}")
    cfg = resolve_config(args)
    grid = _parse_floats(args.grid, "--grid")
    out = resolve_out_dir(args, cfg)
    rows = scan_rows(cfg, args.param, grid)
    _write_rows(out / f"scan_{args.param}.csv", "value,verdict,tail_floor,terminal_I", rows)
    return EXIT_OK


# ------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randsir", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value experiment file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or .)")
    common.add_argument("--realizations", type=int, help="ensemble size")
    common.add_argument("--dt", type=float, help="integration and noise grid step")

    with_preset = argparse.ArgumentParser(add_help=False)
    with_preset.add_argument("--preset", type=int, choices=FIGURE_IDS,
                             help="use a figure preset instead of --config")

    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common, with_preset], help="write one CSV per realization")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("report", parents=[common, with_preset], help="equilibria, thresholds and verdict")
    p.set_defaults(func=cmd_report)
    p = sub.add_parser("figure", parents=[common], help="reproduce one of the figure experiments")
    p.add_argument("id", type=int, help=f"figure id, one of {FIGURE_IDS}")
    p.set_defaults(func=cmd_figure)
    p = sub.add_parser("pullback", parents=[common, with_preset], help="pullback endpoints for a list of horizons")
    p.add_argument("--horizons", default="10,20,40", help="comma-separated increasing horizons")
    p.set_defaults(func=cmd_pullback)
    p = sub.add_parser("scan", parents=[common, with_preset], help="verdict and tail of I over a parameter grid")
    p.add_argument("--param", required=True, help=f"one of {', '.join(SCAN_PARAMS)}")
    p.add_argument("--grid", required=True, help="comma-separated values (may be empty)")
    p.set_defaults(func=cmd_scan)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if not hasattr(args, "preset"):
        args.preset = None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("once")
            return args.func(args)
    except (ConfigError, InvalidParameter) as exc:
        print(f"randsir: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ClassificationDisagreement, GridOverflow) as exc:
        print(f"randsir: numerical error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"randsir: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SirError as exc:
        print(f"randsir: error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
