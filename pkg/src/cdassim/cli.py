"""Command-line front end for the twin-experiment toolkit.

Subcommands cover the full workflow: ``simulate`` (truth generation, with an
optional reduced-order temperature comparison), ``estimate`` (the filter
bank), ``steady-state`` (the flow/temperature equilibrium curve), ``sweep``
(Monte Carlo size study) and ``oracle`` (posterior-spread comparison against
a large particle reference).

Every run resolves its configuration first and writes the echo (with hash)
into the output directory before computing, so even aborted runs leave a
reproducible record. Exit codes: 0 success, 1 configuration or usage error,
2 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from cdassim.config import ConfigError, ExperimentConfig, load_config
from cdassim.cstr import (
    SteadyStateRangeError,
    cstr1_drift,
    cstr2_drift,
    cstr3_drift,
    steady_state_curve,
)
from cdassim.filters.linalg import FactorizationError
from cdassim.filters.runner import FILTER_KINDS, FilterRunError
from cdassim.harness import (
    ensemble_size_sweep,
    generate_truth_and_measurements,
    run_all_filters,
    uncertainty_comparison,
    write_report,
    write_sweep_report,
    write_uncertainty_report,
)
from cdassim.sde import IntegrationError

__all__ = ["main", "parse_and_dispatch"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

DEFAULT_SWEEP_SIZES = (10, 100, 1000)

_NUMERICAL_ERRORS = (IntegrationError, FilterRunError, FactorizationError,
                     SteadyStateRangeError, FloatingPointError,
                     np.linalg.LinAlgError)


def _fmt(x) -> str:
    return f"{float(x):.17g}"


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1, leaving 2 to mean numerical failure
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list: {exc}")


def _csv_names(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def _build_parser() -> _Parser:
    parser = _Parser(prog="cdassim", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, help_text, **extra_flags):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", default=None,
                       help="JSON config file layered over the packaged defaults")
        p.add_argument("--seed", metavar="U64", type=int, default=None,
                       help="override the experiment seed")
        p.add_argument("--out", metavar="DIR", default=None,
                       help="output directory (overrides the config's out_dir)")
        p.add_argument("--serial", action="store_true",
                       help="run on one worker for uncontended timing")
        for flag, kwargs in extra_flags.items():
            p.add_argument(flag, **kwargs)
        return p

    add("simulate", "generate one truth realization and its measurements",
        **{"--reduced": dict(action="store_true",
                             help="also emit the 3/2/1-state deterministic "
                                  "temperature comparison")})
    add("estimate", "run the filter bank and write metrics and trajectories",
        **{"--filters": dict(type=_csv_names, metavar="CSV-list", default=None,
                             help="subset of ekf,ukf,enkf,pf")})
    add("steady-state", "emit the steady-state flow curve as CSV")
    add("sweep", "rerun the Monte Carlo filters across ensemble sizes",
        **{"--sizes": dict(type=_csv_ints, metavar="CSV-list", default=None,
                           help=f"sizes to sweep (default "
                                f"{','.join(map(str, DEFAULT_SWEEP_SIZES))})"),
           "--filters": dict(type=_csv_names, metavar="CSV-list", default=None,
                             help="subset of enkf,pf")})
    add("oracle", "compare posterior spreads against a large particle reference",
        **{"--filters": dict(type=_csv_names, metavar="CSV-list", default=None,
                             help="subset of ekf,ukf,enkf,pf")})
    return parser


def _resolve_config(args) -> ExperimentConfig:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def _prepare_out(config: ExperimentConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.write(out / "config.json")  # echo lands before any computation
    return out


def _write_csv(path: Path, header: str, rows) -> Path:
    path.write_text("\n".join([header, *rows]) + "\n")
    return path


def _announce(paths) -> None:
    for p in paths:
        print(f"wrote {p}")


# -- subcommands --------------------------------------------------------------

def _reduced_comparison(config: ExperimentConfig):
    """Deterministic 3/2/1-state temperature trajectories on the sample grid.

    All three models start from feed composition (the reductions are exact
    there) and integrate the noise-free dynamics with a classical 4th-order
    scheme on the inner substep grid.
    """
    params = config.cstr_params()
    flow = config.flow_profile()
    h = config.dt_sample / config.substeps

    def rk4(f, t, x):
        k1 = f(t, x)
        k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = f(t + h, x + h * k3)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    f3 = lambda t, z: cstr3_drift(z, flow.flow(t), params)
    f2 = lambda t, z: cstr2_drift(z[0], z[1], flow.flow(t), params)
    f1 = lambda t, z: cstr1_drift(z, flow.flow(t), params)

    x3 = np.array([params.CA_in, params.CB_in, params.T_in])
    x2 = np.array([0.0, params.T_in])
    x1 = params.T_in
    temps = [(0.0, x3[2], x2[1], x1)]
    for k in range(config.n_samples):
        t = k * config.dt_sample
        for j in range(config.substeps):
            tj = t + j * h
            x3 = rk4(f3, tj, x3)
            x2 = rk4(f2, tj, x2)
            x1 = rk4(f1, tj, x1)
        temps.append((t + config.dt_sample, x3[2], x2[1], x1))
    return temps


def _cmd_simulate(config: ExperimentConfig, args, out: Path) -> int:
    truth = generate_truth_and_measurements(config)
    rows = []
    for k in range(config.n_samples + 1):
        t = 0.0 if k == 0 else truth.times[k - 1]
        meas = "" if k == 0 else _fmt(truth.measurements[k - 1])
        rows.append(",".join([_fmt(t), *map(_fmt, truth.truth_states[k]), meas]))
    paths = [_write_csv(out / "truth.csv",
                        "t,truth_ca,truth_cb,truth_t,truth_beta,measurement", rows)]
    if args.reduced:
        temps = _reduced_comparison(config)
        paths.append(_write_csv(
            out / "reduced.csv", "t,temp_3state,temp_2state,temp_1state",
            (",".join(map(_fmt, row)) for row in temps)))
    _announce(paths)
    return EXIT_OK


def _cmd_estimate(config: ExperimentConfig, args, out: Path) -> int:
    truth = generate_truth_and_measurements(config)
    report = run_all_filters(config, truth, filters=args.filters, serial=args.serial)
    _announce(write_report(report, config, truth, out))
    failed = [k for k, m in report.filters.items() if not m.ok]
    if failed:
        print(f"numerical failure in: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_steady_state(config: ExperimentConfig, args, out: Path) -> int:
    T_s, F_s = steady_state_curve(config.cstr_params())
    path = _write_csv(out / "steady_state.csv", "T_s,F_s",
                      (f"{_fmt(T)},{_fmt(F)}" for T, F in zip(T_s, F_s)))
    _announce([path])
    return EXIT_OK


def _cmd_sweep(config: ExperimentConfig, args, out: Path) -> int:
    sizes = args.sizes if args.sizes else list(DEFAULT_SWEEP_SIZES)
    filters = tuple(args.filters) if args.filters else ("enkf", "pf")
    rows = ensemble_size_sweep(config, sizes, filters=filters, serial=args.serial)
    _announce(write_sweep_report(rows, config, out))
    return EXIT_OK  # collapsed or failed rows are sweep findings, not failures


def _cmd_oracle(config: ExperimentConfig, args, out: Path) -> int:
    truth = generate_truth_and_measurements(config)
    unc = uncertainty_comparison(config, truth, filters=args.filters,
                                 serial=args.serial)
    _announce(write_uncertainty_report(unc, config, out))
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "steady-state": _cmd_steady_state,
    "sweep": _cmd_sweep,
    "oracle": _cmd_oracle,
}


def _validate_filter_names(parser: _Parser, args) -> None:
    allowed = ("enkf", "pf") if args.subcommand == "sweep" else FILTER_KINDS
    names = getattr(args, "filters", None)
    if names is not None:
        bad = [n for n in names if n not in allowed]
        if bad:
            parser.error(f"--filters accepts {'/'.join(allowed)}, "
                         f"got {', '.join(bad)}")
        if not names:
            parser.error("--filters needs at least one name")


def parse_and_dispatch(argv) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _validate_filter_names(parser, args)
    try:
        config = _resolve_config(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    out = _prepare_out(config)
    try:
        return _COMMANDS[args.subcommand](config, args, out)
    except _NUMERICAL_ERRORS as exc:
        print(exc, file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # bad request the schema cannot see (e.g. sweep size 1, undersized
        # oracle); the config echo is already on disk
        print(exc, file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(parse_and_dispatch(sys.argv[1:]))
