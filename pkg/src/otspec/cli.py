"""Command-line entry point ``otspec``.

Every subcommand is driven by a JSON config file; flags only override paths,
the random seed and verbosity. Outputs are JSON documents whose only
run-dependent field is ``header.timestamp``.

Exit status is 0 on success, 1 on a domain error (infeasible target,
non-coercive spectrum, solver failure) and 2 on a usage or config error.
Failures print one line ``ERROR <code> <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .covariance_ingest import (
    FeasibilityError,
    feasible_sigma,
    read_data_csv,
    target_from_spectrum,
    write_data_csv,
)
from .dual_solver import SolverOptions
from .filter_bank import CovarianceTarget, FilterBank, RangeRankError
from .itakura_saito import ISProblem, estimate_is
from .montecarlo import ExperimentConfig, GenerationError, run_study, simulate_process
from .spectral_core import (
    CoercivityError,
    FrequencyGrid,
    MatrixGrid,
    StateSpaceFilter,
    congruence,
    eval_transfer,
    psd_from_factor,
)
from .transport_estimator import TransportProblem, estimate
from .transport_metric import transport_distance

log = logging.getLogger("otspec")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    """Malformed config; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class UsageError(Exception):
    """Bad command line."""


class SolverFailure(Exception):
    """The dual solver stopped without converging; diagnostics were written."""


DISTANCE_HELP = """\
Weighted transport distance between two spectra.

PHI_X and PHI_Y are MatrixGrid JSON files:
  {"n_points": N, "m": m, "kind": "psd", "real_process": true,
   "values": [[[[re, im], ...], ...], ...]}   (N x m x m pairs)
--omega gives a weight grid of kind "weight" (identity when omitted, which
yields the Hellinger distance).
"""

ESTIMATE_HELP = """\
Spectral estimation from moment data. Config fields:
  method        "transport" | "is" | "is_weighted"        (required)
  grid_points   frequency grid size                        (default 2048)
  bank          {"type": "covariance_lags", "m": m, "l": l}
                or {"type": "state_space", "A": [[..]], "B": [[..]]}  (required)
  prior         {"filter": FILTER} or {"grid": PATH}       (required)
                spectrum of the source; measured through h_inv if given
  h_inv         FILTER, sensor characteristic                (optional)
  omega         {"grid": PATH}, transport weight without h_inv (default I)
  omega_scalar  number or {"grid": PATH}, weight for is_weighted (default 1)
  sigma         moment target, one of
                  {"data_csv": PATH, "n_lags": k (optional)}
                  {"matrix": [[..]]}
                  {"from_prior": true}   (target of the prior itself)
  solver        SolverOptions fields, e.g. {"tol_grad": 1e-8, "max_iter": 500}
FILTER is {"A": [[..]], "B": [[..]], "C": [[..]], "D": [[..]]} ("D" required).
Relative paths resolve against the config file's directory.
"""

MONTECARLO_HELP = """\
Monte Carlo comparison of the transport and IS estimators. Config fields
(all optional): n_experiments, m, state_order, eig_bound_model, eig_bound_h,
perturbation_norm, n_samples, l, grid_points, rng_seed, inject_prior_sigma,
n_workers, tol_grad, max_iter.
"""

SIMULATE_HELP = """\
Simulate a record from a chain of filters driven by unit white noise.
Config fields:
  filters    list of FILTER specs applied in order (first acts first)  (required)
  n_samples  record length                                          (required)
  seed       RNG seed                                               (default 0)
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otspec", description="Transport-distance spectral estimation tools.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("distance", help="distance between two spectra", description=DISTANCE_HELP, formatter_class=fmt)
    p.add_argument("phi_x", type=Path)
    p.add_argument("phi_y", type=Path)
    p.add_argument("--omega", type=Path)
    p.add_argument("-o", "--output", type=Path)

    p = sub.add_parser("estimate", help="single estimation", description=ESTIMATE_HELP, formatter_class=fmt)
    p.add_argument("config", type=Path)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--method", choices=("transport", "is", "is_weighted"), help="override config method")

    p = sub.add_parser("montecarlo", help="Monte Carlo study", description=MONTECARLO_HELP, formatter_class=fmt)
    p.add_argument("config", type=Path, nargs="?")
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--curves", type=Path, help="CSV file for mean error curves")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="simulate a data record", description=SIMULATE_HELP, formatter_class=fmt)
    p.add_argument("config", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--seed", type=int)
    return parser


# config helpers -------------------------------------------------------------


def _load_json(path: Path, field: str) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(field, f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(field, f"invalid JSON in {path}: {exc}") from None


def _resolve(base: Path, value, field: str) -> Path:
    if not isinstance(value, str):
        raise ConfigError(field, "expected a path string")
    p = Path(value)
    return p if p.is_absolute() else base / p


def _require(cfg: dict, key: str, prefix: str = "") -> Any:
    if key not in cfg:
        raise ConfigError(prefix + key, "missing required field")
    return cfg[key]


def _filter(spec, field: str) -> StateSpaceFilter:
    if not isinstance(spec, dict):
        raise ConfigError(field, "expected a filter object with A, B, C, D")
    try:
        return StateSpaceFilter.from_dict(spec)
    except KeyError as exc:
        raise ConfigError(field, str(exc).strip("'\"")) from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(field, str(exc)) from None


def _grid_file(path: Path, field: str, n_points: Optional[int] = None) -> MatrixGrid:
    try:
        grid = MatrixGrid.from_dict(_load_json(path, field))
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, CoercivityError):
            raise
        raise ConfigError(field, str(exc).strip("'\"")) from None
    if n_points is not None and grid.n_points != n_points:
        raise ConfigError(field, f"grid has {grid.n_points} points, expected {n_points}")
    return grid


def _solver_options(spec, field: str = "solver") -> SolverOptions:
    spec = spec or {}
    if not isinstance(spec, dict):
        raise ConfigError(field, "expected an object")
    try:
        return SolverOptions(**spec)
    except TypeError as exc:
        raise ConfigError(field, str(exc)) from None


def _header(command: str) -> dict:
    return {
        "tool": "otspec",
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def _write_json(doc: dict, path: Optional[Path]) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# subcommands ----------------------------------------------------------------


def cmd_distance(args) -> int:
    phi_x = _grid_file(args.phi_x, "phi_x")
    phi_y = _grid_file(args.phi_y, "phi_y")
    if args.omega is not None:
        omega = _grid_file(args.omega, "omega")
    else:
        omega = MatrixGrid.identity(phi_x.grid, phi_x.m)
    report = transport_distance(phi_x, phi_y, omega)
    _write_json({"header": _header("distance"), "distance": report.to_dict()}, args.output)
    return EXIT_OK


def _estimation_problem(cfg: dict, base: Path):
    method = _require(cfg, "method")
    if method not in ("transport", "is", "is_weighted"):
        raise ConfigError("method", f"unknown method {method!r}")
    n_points = cfg.get("grid_points", 2048)
    if not isinstance(n_points, int) or n_points < 4:
        raise ConfigError("grid_points", "expected an integer >= 4")
    grid = FrequencyGrid(n_points)

    bank_spec = _require(cfg, "bank")
    try:
        bank = FilterBank.from_config(bank_spec, grid)
    except (KeyError, TypeError) as exc:
        raise ConfigError("bank", str(exc).strip("'\"")) from None
    except RangeRankError:
        raise
    except ValueError as exc:
        raise ConfigError("bank", str(exc)) from None

    prior = _require(cfg, "prior")
    if not isinstance(prior, dict) or not ({"filter", "grid"} & set(prior)):
        raise ConfigError("prior", "expected {'filter': ...} or {'grid': PATH}")
    if "filter" in prior:
        psi_source = psd_from_factor(eval_transfer(_filter(prior["filter"], "prior.filter"), grid))
    else:
        psi_source = _grid_file(_resolve(base, prior["grid"], "prior.grid"), "prior.grid", n_points)

    h_inv = _filter(cfg["h_inv"], "h_inv") if "h_inv" in cfg else None
    psi = congruence(eval_transfer(h_inv, grid), psi_source) if h_inv is not None else psi_source
    if psi.m != bank.m:
        raise ConfigError("prior", f"prior has {psi.m} channels, bank expects {bank.m}")

    sig = _require(cfg, "sigma")
    if not isinstance(sig, dict):
        raise ConfigError("sigma", "expected an object")
    if "data_csv" in sig:
        try:
            data = read_data_csv(_resolve(base, sig["data_csv"], "sigma.data_csv"))
        except FileNotFoundError as exc:
            raise ConfigError("sigma.data_csv", f"file not found: {exc.filename}") from None
        except ValueError as exc:
            raise ConfigError("sigma.data_csv", str(exc)) from None
        sigma = feasible_sigma(data, bank, sig.get("n_lags"))
    elif "matrix" in sig:
        try:
            mat = np.asarray(sig["matrix"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError("sigma.matrix", str(exc)) from None
        if mat.shape != (bank.n, bank.n):
            raise ConfigError("sigma.matrix", f"expected {bank.n}x{bank.n}, got shape {mat.shape}")
        sigma = CovarianceTarget.from_matrix(mat, bank)
    elif sig.get("from_prior"):
        sigma = target_from_spectrum(psi, bank)
    else:
        raise ConfigError("sigma", "expected one of data_csv, matrix, from_prior")

    opts = _solver_options(cfg.get("solver"))
    if method == "transport":
        if h_inv is not None:
            prob = TransportProblem.indirect(sigma, psi_source, h_inv, bank)
        else:
            if "omega" in cfg:
                if not isinstance(cfg["omega"], dict) or "grid" not in cfg["omega"]:
                    raise ConfigError("omega", "expected {'grid': PATH}")
                omega = _grid_file(_resolve(base, cfg["omega"]["grid"], "omega.grid"), "omega.grid", n_points)
            else:
                omega = MatrixGrid.identity(grid, bank.m)
            prob = TransportProblem(sigma, psi, omega, bank)
        return prob, opts, estimate
    weight = None
    if method == "is_weighted":
        w = cfg.get("omega_scalar", 1.0)
        if isinstance(w, (int, float)):
            weight = float(w)
        elif isinstance(w, dict) and "grid" in w:
            wg = _grid_file(_resolve(base, w["grid"], "omega_scalar.grid"), "omega_scalar.grid", n_points)
            if wg.m != 1:
                raise ConfigError("omega_scalar.grid", "scalar weight grid must be 1x1")
            weight = wg.values[:, 0, 0].real
        else:
            raise ConfigError("omega_scalar", "expected a number or {'grid': PATH}")
    elif "omega_scalar" in cfg:
        raise ConfigError("omega_scalar", "only used with method 'is_weighted'")
    prob = ISProblem(sigma, psi, bank, weight_scalar=weight, h_inv=h_inv)
    return prob, opts, estimate_is


def cmd_estimate(args) -> int:
    cfg = _load_json(args.config, "config")
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be an object")
    if args.method:
        cfg["method"] = args.method
    prob, opts, run = _estimation_problem(cfg, args.config.parent)
    result = run(prob, opts)
    _write_json({"header": _header("estimate"), "result": result.to_dict()}, args.output)
    if not result.converged:
        raise SolverFailure(f"solver did not converge: {result.message}")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    raw = _load_json(args.config, "config") if args.config else {}
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    if args.seed is not None:
        raw["rng_seed"] = args.seed
    try:
        config = ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError("config", str(exc)) from None
    report = run_study(config)
    _write_json({"header": _header("montecarlo"), "report": report.to_dict()}, args.output)
    if args.curves is not None:
        report.write_curves_csv(args.curves)
    log.info("mean L2 %s over %d runs", report.mean_l2, len(report.included))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config, "config")
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be an object")
    specs = _require(cfg, "filters")
    if not isinstance(specs, list) or not specs:
        raise ConfigError("filters", "expected a non-empty list of filters")
    chain = _filter(specs[0], "filters[0]")
    for i, spec in enumerate(specs[1:], start=1):
        nxt = _filter(spec, f"filters[{i}]")
        if nxt.shape[1] != chain.shape[0]:
            raise ConfigError(f"filters[{i}]", "input size does not match the previous output")
        chain = chain.series(nxt)
    n = _require(cfg, "n_samples")
    if not isinstance(n, int) or n < 1:
        raise ConfigError("n_samples", "expected a positive integer")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed", "expected an integer")
    record = simulate_process(chain, n, np.random.default_rng(seed))
    write_data_csv(record, args.output)
    return EXIT_OK


COMMANDS = {
    "distance": cmd_distance,
    "estimate": cmd_estimate,
    "montecarlo": cmd_montecarlo,
    "simulate": cmd_simulate,
}

DOMAIN_ERRORS = (
    ValueError,
    ArithmeticError,
    np.linalg.LinAlgError,
    FeasibilityError,
    GenerationError,
    RangeRankError,
)


def _fail(code: str, message: str, status: int) -> int:
    line = " ".join(str(message).split())
    print(f"ERROR {code} {line}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    if args.command is None:
        return _fail("usage", "a subcommand is required: " + ", ".join(COMMANDS), EXIT_USAGE)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_USAGE)
    except SolverFailure as exc:
        return _fail("nonconvergence", exc, EXIT_DOMAIN)
    except CoercivityError as exc:
        return _fail("coercivity", exc, EXIT_DOMAIN)
    except FeasibilityError as exc:
        return _fail("infeasible", exc, EXIT_DOMAIN)
    except DOMAIN_ERRORS as exc:
        return _fail("domain", exc, EXIT_DOMAIN)
    except OSError as exc:
        return _fail("io", exc, EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
