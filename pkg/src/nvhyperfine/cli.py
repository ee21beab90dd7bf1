"""Command-line front end: enhancement sweeps, Rabi traces, synthetic data, fits, precision study.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
Every command writes ``<output>.manifest.json`` next to its output.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import FRAMES, PropagationError, rabi_trace
from .estimation import (
    FitConvergenceError,
    RankDeficiencyError,
    ReadoutModel,
    Strategy,
    SweepDataset,
    SweepDesign,
    fit_transverse_hyperfine,
    frontier,
    precision_study,
    synth_sweep,
)
from .mixing import DegenerateDenominatorError, LabelingAmbiguityError, enhancement_exact, enhancement_first_order
from .model import MANIFOLDS, ConfigError, SpinSystemConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

READOUT_KEYS = {f.name for f in dataclasses.fields(ReadoutModel)}


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def _read_json_object(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a flat key-value object")
    return data


def load_run_config(config_path: str | None, readout_path: str | None = None):
    """Spin configuration and readout model from flat JSON files.

    The config file may also carry readout keys; a separate readout file
    overrides them.
    """
    data = _read_json_object(config_path) if config_path else {}
    readout = {k: data.pop(k) for k in list(data) if k in READOUT_KEYS}
    if readout_path:
        extra = _read_json_object(readout_path)
        unknown = sorted(set(extra) - READOUT_KEYS)
        if unknown:
            raise ConfigError(f"unknown readout keys: {', '.join(unknown)}")
        readout.update(extra)
    config = SpinSystemConfig.from_dict(data)
    try:
        model = ReadoutModel(**readout)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid readout model: {exc}") from None
    return config, model


def _apply_overrides(config: SpinSystemConfig, args) -> SpinSystemConfig:
    changes = {}
    for key in ("b_z", "b1", "a_perp"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    return config.replace(**changes) if changes else config


def write_manifest(command: str, args, config, readout, outputs, extra=None) -> Path:
    manifest = {
        "command": command,
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        "config": config.to_dict(),
        "readout": dataclasses.asdict(readout) if readout is not None else None,
        "seed": getattr(args, "seed", None),
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    path = Path(str(outputs[0]) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return path


def cmd_enhancement(args) -> int:
    config, _ = load_run_config(args.config)
    if args.steps < 1 or args.b_max < args.b_min:
        raise UsageError("empty field range: need steps >= 1 and --b-max >= --b-min")
    fields = np.linspace(args.b_min, args.b_max, args.steps) if args.steps > 1 else np.array([args.b_min])
    methods = ["first-order", "exact"] if args.method == "both" else [args.method]
    rows = []
    for bz in fields:
        cfg = config.replace(b_z=float(bz))
        for method in methods:
            alphas = enhancement_exact(cfg, args.model) if method == "exact" else enhancement_first_order(cfg)
            rows.append([repr(float(bz)), *(repr(float(a)) for a in alphas.as_tuple()), method])
    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bz_gauss", "alpha_p1", "alpha_0", "alpha_m1", "method"])
        w.writerows(rows)
    write_manifest("enhancement", args, config, None, [out])
    return EXIT_OK


def cmd_rabi(args) -> int:
    config, _ = load_run_config(args.config)
    config = _apply_overrides(config, args)
    if args.points < 8:
        raise UsageError("--points must be at least 8")
    if not args.tmax > 0:
        raise UsageError("--tmax must be positive")
    if config.b1 == 0:
        raise UsageError("b1 must be nonzero (set it in the config or with --b1)")
    times = np.linspace(0.0, args.tmax, args.points)
    trace = rabi_trace(config, args.manifold, times, frame=args.frame, detuning=args.detuning)
    out = Path(args.out)
    trace.write_csv(out)
    write_manifest("rabi", args, config, None, [out])
    return EXIT_OK


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_manifold_values(items, what: str = "value") -> dict[int, float]:
    out = {}
    for item in items or []:
        try:
            m, d = item.split("=")
            m, d = int(m), float(d)
        except ValueError:
            raise UsageError(f"{what} must look like MANIFOLD=NUMBER, got {item!r}") from None
        if m not in MANIFOLDS:
            raise UsageError(f"invalid manifold {m}")
        out[m] = d
    return out


def cmd_synth(args) -> int:
    config, readout = load_run_config(args.config, args.readout)
    config = _apply_overrides(config, args)
    if config.b1 == 0:
        raise UsageError("b1 (the maximum RF amplitude) must be nonzero")
    try:
        design = SweepDesign(
            amplitudes=_parse_floats(args.amplitudes),
            repetitions=args.repetitions or readout.repetitions,
            periods=args.periods,
            points=args.points,
            manifolds=tuple(args.manifolds),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    outcome = synth_sweep(
        config, design, readout, args.seed,
        _parse_manifold_values(args.detuning, "detuning"), _parse_manifold_values(args.scale, "scale"),
    )
    if outcome.failures:
        print(f"warning: {outcome.failures} trace fit(s) failed and were dropped", file=sys.stderr)
    if not outcome.dataset.sweeps:
        raise NumericalFailure("every trace fit failed")
    out = Path(args.out)
    outcome.dataset.write_csv(out)
    write_manifest(
        "synth", args, config, readout, [out],
        {"design": dataclasses.asdict(design), "measurement_time_s": outcome.measurement_time_s,
         "failed_traces": outcome.failures},
    )
    return EXIT_OK


def cmd_fit(args) -> int:
    config, _ = load_run_config(args.config)
    config = _apply_overrides(config, args)
    try:
        data = SweepDataset.read_csv(args.data, config.b_z)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    result = fit_transverse_hyperfine(
        data, config, scales=_parse_manifold_values(args.scale, "scale"),
        fit_scales=args.fit_scales, a_perp_guess=args.a_perp_guess,
    )
    report = {"b_z_gauss": config.b_z, **result.to_dict()}
    out = Path(args.report)
    out.write_text(json.dumps(report, indent=2) + "\n")
    write_manifest("fit", args, config, None, [out])
    print(f"A_perp = {result.a_perp:.5f} +/- {result.a_perp_err:.5f} MHz "
          f"(reduced chi2 {result.reduced_chi2:.3f})")
    return EXIT_OK


def _load_strategies(path: str) -> list[Strategy]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read strategies {path}: {exc}") from None
    if not isinstance(data, list) or not data:
        raise ConfigError("strategies file must hold a nonempty list of objects")
    out = []
    for item in data:
        try:
            s = Strategy(
                repetitions=int(item["repetitions"]),
                amplitudes=tuple(float(x) for x in item["amplitudes"]),
                periods=float(item.get("periods", 3.0)),
                points=int(item.get("points", 40)),
            )
            s.design()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid strategy {item!r}: {exc}") from None
        out.append(s)
    return out


STUDY_HEADER = [
    "measurement_time_s", "sigma_a_perp_mhz", "mean_reported_sigma_mhz", "bias_mhz",
    "failure_rate", "flagged", "repetitions", "amplitudes", "periods", "points",
]


def _study_row(p) -> list:
    s = p.strategy
    return [
        repr(p.measurement_time_s), repr(p.sigma_a_perp), repr(p.mean_reported_sigma), repr(p.bias),
        repr(p.failure_rate), int(p.flagged), s.repetitions, " ".join(repr(x) for x in s.amplitudes),
        repr(s.periods), s.points,
    ]


def cmd_precision(args) -> int:
    config, readout = load_run_config(args.config, args.readout)
    config = _apply_overrides(config, args)
    if config.b1 == 0:
        raise UsageError("b1 (the maximum RF amplitude) must be nonzero")
    strategies = _load_strategies(args.strategies)
    if args.mc_seeds < 3:
        raise UsageError("--mc-seeds must be at least 3")
    points = precision_study(
        strategies, config, readout, n_seeds=args.mc_seeds, seed=args.seed, workers=args.threads or 1
    )
    front = frontier(points)
    out = Path(args.out)
    outputs = [out]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STUDY_HEADER)
        w.writerows(_study_row(p) for p in front)
    if args.all:
        outputs.append(Path(args.all))
        with open(args.all, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(STUDY_HEADER)
            w.writerows(_study_row(p) for p in points)
    flagged = sum(p.flagged for p in points)
    if flagged:
        print(f"warning: {flagged} strategy(ies) exceeded the 20% fit failure rate", file=sys.stderr)
    write_manifest("precision", args, config, readout, outputs)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvhyperfine", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False):
        p.add_argument("--config", help="flat JSON file of configuration keys")
        p.add_argument("--out", required=True, help="output CSV path")
        p.add_argument("--threads", type=int, default=None, help="parallelism cap")
        if seed:
            p.add_argument("--seed", type=int, default=0, help="master seed")

    def overrides(p):
        p.add_argument("--b-field", dest="b_z", type=float, help="static field Bz in gauss")
        p.add_argument("--b1", type=float, help="RF amplitude (maximum amplitude for sweeps) in gauss")

    p = sub.add_parser("enhancement", help="enhancement factors versus static field")
    common(p)
    p.add_argument("--b-field-min", dest="b_min", type=float, default=0.0)
    p.add_argument("--b-field-max", dest="b_max", type=float, default=600.0)
    p.add_argument("--steps", type=int, default=61)
    p.add_argument("--method", choices=["first-order", "exact", "both"], default="exact")
    p.add_argument("--model", choices=["reduced", "full"], default="reduced")
    p.set_defaults(func=cmd_enhancement)

    p = sub.add_parser("rabi", help="nuclear Rabi trace of one manifold")
    common(p)
    overrides(p)
    p.add_argument("--manifold", type=int, choices=MANIFOLDS, required=True)
    p.add_argument("--frame", choices=FRAMES, default="rwa")
    p.add_argument("--tmax", type=float, required=True, help="trace length in microseconds")
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--detuning", type=float, default=0.0, help="drive detuning in MHz")
    p.set_defaults(func=cmd_rabi)

    p = sub.add_parser("synth", help="synthetic amplitude-sweep dataset with shot noise")
    common(p, seed=True)
    overrides(p)
    p.add_argument("--readout", help="flat JSON file of readout keys")
    p.add_argument("--amplitudes", default="0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--periods", type=float, default=3.0)
    p.add_argument("--points", type=int, default=40)
    p.add_argument("--manifolds", type=int, nargs="+", choices=MANIFOLDS, default=list(MANIFOLDS))
    p.add_argument("--detuning", action="append", metavar="MANIFOLD=MHZ", help="write --detuning=-1=MHZ for the -1 manifold")
    p.add_argument("--scale", action="append", metavar="MANIFOLD=K", help="drive scale factor k_ms; write --scale=-1=K for the -1 manifold")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="global fit of the transverse hyperfine coupling")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--config", help="flat JSON file of configuration keys")
    p.add_argument("--report", required=True, help="fit report JSON path")
    p.add_argument("--b-field", dest="b_z", type=float, help="static field Bz in gauss")
    p.add_argument("--scale", action="append", metavar="MANIFOLD=K", help="known drive scale factor k_ms; write --scale=-1=K for the -1 manifold")
    p.add_argument("--fit-scales", action="store_true",
                   help="request free scale factors (not identifiable from a single-field sweep)")
    p.add_argument("--a-perp-guess", type=float, default=2.62, help="magnitude of the starting A_perp")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("precision", help="sigma(A_perp) versus measurement time study")
    common(p, seed=True)
    overrides(p)
    p.add_argument("--readout", help="flat JSON file of readout keys")
    p.add_argument("--strategies", required=True, help="JSON list of strategy objects")
    p.add_argument("--mc-seeds", type=int, default=50)
    p.add_argument("--all", help="also write every strategy (not only the frontier) here")
    p.set_defaults(func=cmd_precision)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RankDeficiencyError, FitConvergenceError, DegenerateDenominatorError,
            LabelingAmbiguityError, PropagationError, NumericalFailure, ArithmeticError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
