"""Command-line front end.

Subcommands run the transient, steady-state, response-time and sqrt(N)-fit
experiments on the built-in models and write per-N CSV tables plus SVG
figures into the output directory.  All defaults match the reference
experiments, so e.g. ``popmf transient --model seir`` reproduces the SEIR
transient comparison out of the box.

Exit codes: 0 success, 1 usage error, 2 model or numeric error (partial
output files are removed).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import reports
from .core import PopmfError, PopulationModel
from .derivatives import hessian_phi1, jacobian_phi1
from .models import BUILTINS, BuiltinModel
from .refined import (Functional, functional_correction, gamma, refine,
                      refined_mean)
from .simulator import CountState, counts_from_fractions, exact_stationary, simulate
from .steady import Stability, find_fixed_point, lyapunov_w, v_infinity

DEFAULT_SEED = 1
ENV_OUTDIR = "POPMF_OUTDIR"


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    """Resolved experiment settings (config file merged with flag overrides)."""

    command: str
    model: str
    params: dict[str, float]
    init: tuple[float, ...] | None
    init_counts: tuple[int, ...] | None
    n_list: tuple[int, ...]
    t_max: int
    runs: int
    seed: int
    functional: str | None
    out_dir: Path
    formats: tuple[str, ...]
    errors: bool = False


def _builtin(name: str) -> BuiltinModel:
    try:
        return BUILTINS[name]
    except KeyError:
        raise UsageError(
            f"unknown model {name!r}; available: {', '.join(sorted(BUILTINS))}")


def _build_model(cfg: ExperimentConfig):
    entry = _builtin(cfg.model)
    if cfg.params and entry.params_cls is None:
        raise UsageError(f"model {cfg.model!r} takes no parameters")
    if entry.params_cls is None:
        return entry, None, entry.factory()
    try:
        params = entry.params_cls(**cfg.params)
    except TypeError as exc:
        raise UsageError(f"bad parameter for model {cfg.model!r}: {exc}")
    except ValueError as exc:
        raise PopmfError(str(exc))
    return entry, params, entry.factory(params)


def _initial_counts(cfg: ExperimentConfig, entry: BuiltinModel,
                    model: PopulationModel, n_objects: int) -> CountState:
    if cfg.init_counts is not None:
        counts = np.asarray(cfg.init_counts, dtype=np.int64)
        if int(counts.sum()) != n_objects:
            raise UsageError(
                f"initial counts sum to {int(counts.sum())} but N = {n_objects}")
    else:
        fractions = cfg.init if cfg.init is not None else entry.default_init
        counts = counts_from_fractions(fractions, n_objects)
        print(f"N={n_objects}: initial fractions {tuple(fractions)} "
              f"-> counts {tuple(int(c) for c in counts)}")
    if counts.size != model.dim:
        raise UsageError(
            f"initial condition has {counts.size} entries, model has {model.dim}")
    return CountState(counts, n_objects)


def _out_path(cfg: ExperimentConfig, experiment: str, n_objects: int | None,
              suffix: str) -> Path:
    tag = f"_N{n_objects}" if n_objects is not None else ""
    return cfg.out_dir / f"{experiment}_{cfg.model}{tag}.{suffix}"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_transient(cfg: ExperimentConfig, written: list[Path]) -> None:
    entry, _, model = _build_model(cfg)
    labels = model.state_labels
    for n_objects in cfg.n_list:
        initial = _initial_counts(cfg, entry, model, n_objects)
        m0 = initial.occupancy()
        states = refine(model, m0, cfg.t_max)
        summary = simulate(model, initial, cfg.t_max, cfg.runs, cfg.seed)
        stderr = summary.stderr()
        header = ["t", "state", "mu", "refined_mean", "sim_mean", "sim_stderr"]
        if cfg.errors:
            header += ["err_mean_field", "err_refined"]
        rows = []
        for state in states:
            rmean = refined_mean(state, n_objects)
            for j, label in enumerate(labels):
                row = [state.t, label, float(state.mu[j]), float(rmean[j]),
                       float(summary.mean_trajectory[state.t, j]),
                       float(stderr[state.t, j])]
                if cfg.errors:
                    row += [float(summary.mean_trajectory[state.t, j] - state.mu[j]),
                            float(summary.mean_trajectory[state.t, j] - rmean[j])]
                rows.append(row)
        csv_path = _out_path(cfg, "transient", n_objects, "csv")
        reports.write_csv(csv_path, header, rows)
        written.append(csv_path)
        if "svg" in cfg.formats:
            svg_path = _out_path(cfg, "transient", n_objects, "svg")
            reports.plot_transient(csv_path, svg_path,
                                   f"{cfg.model} transient, N={n_objects}",
                                   error_mode=cfg.errors)
            written.append(svg_path)


def cmd_steady(cfg: ExperimentConfig, written: list[Path]) -> None:
    entry, _, model = _build_model(cfg)
    labels = model.state_labels
    for n_objects in cfg.n_list:
        initial = _initial_counts(cfg, entry, model, n_objects)
        m0 = initial.occupancy()
        report = find_fixed_point(model, m0)
        refined_col: list[float] | None = None
        if report.classification is Stability.EXPONENTIALLY_STABLE:
            a = jacobian_phi1(model, report.mu_inf)
            w = lyapunov_w(a, gamma(model, report.mu_inf))
            v = v_infinity(a, hessian_phi1(model, report.mu_inf), w)
            refined_col = list(report.mu_inf + v / n_objects)
        else:
            print(f"N={n_objects}: attractor is {report.classification.value}, "
                  "refined steady-state columns unavailable")
        summary = simulate(model, initial, cfg.t_max, cfg.runs, cfg.seed)
        sim = summary.mean_trajectory[-1]
        header = ["state", "simulation", "refined_mean_field", "mean_field",
                  "residual", "spectral_radius_tangent", "classification"]
        rows = []
        for j, label in enumerate(labels):
            rows.append([
                label, float(sim[j]),
                float(refined_col[j]) if refined_col is not None else "unavailable",
                float(report.mu_inf[j]), float(report.residual),
                float(report.spectral_radius_tangent),
                report.classification.value])
        csv_path = _out_path(cfg, "steady", n_objects, "csv")
        reports.write_csv(csv_path, header, rows)
        written.append(csv_path)
        if "svg" in cfg.formats:
            svg_path = _out_path(cfg, "steady", n_objects, "svg")
            reports.plot_steady(csv_path, svg_path,
                                f"{cfg.model} steady state, N={n_objects}")
            written.append(svg_path)


def cmd_response_time(cfg: ExperimentConfig, written: list[Path]) -> None:
    entry, params, model = _build_model(cfg)
    functional_id = cfg.functional or "response_time"
    if functional_id not in entry.functionals:
        raise UsageError(
            f"model {cfg.model!r} has no functional {functional_id!r}; "
            f"available: {', '.join(sorted(entry.functionals)) or 'none'}")
    h: Functional = entry.functionals[functional_id](params)
    clamp = getattr(params, "clamp", None)
    for n_objects in cfg.n_list:
        initial = _initial_counts(cfg, entry, model, n_objects)
        states = refine(model, initial.occupancy(), cfg.t_max)
        summary = simulate(model, initial, cfg.t_max, cfg.runs, cfg.seed,
                           h=h, clamp=clamp)
        for message in summary.warnings:
            print(f"N={n_objects}: {message}")
        rows = []
        for state in states:
            t = state.t
            h_mu = float(h.value(state.mu)[0])
            h_ref = h_mu + float(functional_correction(h, state)[0]) / n_objects
            h_rmf = float(h.value(refined_mean(state, n_objects))[0])
            h_sim_mean = float(h.value(summary.mean_trajectory[t])[0])
            rows.append([t, h_mu, float(summary.functional_mean[t, 0]),
                         h_ref, h_rmf, h_sim_mean])
        header = ["t", "h_mean_field", "h_simulation", "h_refined_functional",
                  "h_of_refined_mean", "h_of_simulation_mean"]
        csv_path = _out_path(cfg, "response_time", n_objects, "csv")
        reports.write_csv(csv_path, header, rows)
        written.append(csv_path)
        if "svg" in cfg.formats:
            svg_path = _out_path(cfg, "response_time", n_objects, "svg")
            reports.plot_response_time(
                csv_path, svg_path, f"{cfg.model} response time, N={n_objects}")
            written.append(svg_path)


def cmd_sqrt_fit(cfg: ExperimentConfig, written: list[Path]) -> None:
    entry, _, model = _build_model(cfg)
    if len(cfg.n_list) < 2:
        raise UsageError("sqrt-fit needs at least two population sizes; "
                         "a one-point grid leaves the fit underdetermined")
    m0 = np.asarray(cfg.init if cfg.init is not None else entry.default_init)
    report = find_fixed_point(model, m0)
    mu0 = float(report.mu_inf[0])
    grid = sorted(cfg.n_list)
    exact0 = []
    for n_objects in grid:
        exact0.append(float(exact_stationary(model, n_objects)[0]))
    y = np.sqrt(grid) * (np.array(exact0) - mu0)
    design = np.vstack([np.ones(len(grid)), 1.0 / np.sqrt(grid)]).T
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    fitted = design @ np.array([a, b])
    print(f"fit sqrt(N)(E[M_0] - mu_0(inf)) = a + b/sqrt(N): "
          f"a = {a:.6g}, b = {b:.6g}")
    rows = [[n, e, float(yv), float(fv), float(a), float(b)]
            for n, e, yv, fv in zip(grid, exact0, y, fitted)]
    header = ["n", "exact_mean_state0", "sqrt_n_deviation", "fitted_deviation",
              "fit_a", "fit_b"]
    csv_path = _out_path(cfg, "sqrt_fit", None, "csv")
    reports.write_csv(csv_path, header, rows)
    written.append(csv_path)
    if "svg" in cfg.formats:
        svg_path = _out_path(cfg, "sqrt_fit", None, "svg")
        reports.plot_sqrt_fit(csv_path, svg_path,
                              f"{cfg.model} stationary deviation fit")
        written.append(svg_path)


def cmd_list_models(as_json: bool) -> None:
    schema = {}
    for name, entry in sorted(BUILTINS.items()):
        model = entry.factory() if entry.params_cls is None else \
            entry.factory(entry.params_cls())
        params = {}
        if entry.params_cls is not None:
            params = {f.name: f.default
                      for f in dataclasses.fields(entry.params_cls)}
        schema[name] = {
            "parameters": params,
            "states": list(model.state_labels),
            "default_init": list(entry.default_init),
            "functionals": sorted(entry.functionals),
        }
    if as_json:
        print(json.dumps(schema, indent=2, sort_keys=True))
        return
    for name, info in schema.items():
        print(name)
        print(f"  states: {', '.join(info['states'])}")
        if info["parameters"]:
            pairs = ", ".join(f"{k}={v}" for k, v in info["parameters"].items())
            print(f"  parameters: {pairs}")
        else:
            print("  parameters: none")
        print(f"  default init: {tuple(info['default_init'])}")
        if info["functionals"]:
            print(f"  functionals: {', '.join(info['functionals'])}")


# ---------------------------------------------------------------------------
# Argument and config handling
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_DEFAULTS = {
    "transient": dict(model="seir", n=[10, 20, 50, 100], tmax=500, runs=10_000),
    "steady": dict(model="seir", n=[10], tmax=1000, runs=100_000),
    "response-time": dict(model="wsn", n=[15], tmax=400, runs=20_000),
    "sqrt-fit": dict(model="two_state",
                     n=[10, 20, 30, 50, 70, 100, 140, 200, 300, 500, 700, 1000],
                     tmax=0, runs=0),
}


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--model", help="built-in model id (see list-models)")
    sub.add_argument("--params", action="append", default=[], metavar="K=V",
                     help="model parameter override, repeatable")
    sub.add_argument("--init", help="comma-separated initial occupancy "
                     "(fractions, or integer counts implying N)")
    sub.add_argument("--n", action="append", type=int, metavar="N",
                     help="population size, repeatable")
    sub.add_argument("--tmax", type=int, help="time horizon")
    sub.add_argument("--runs", type=int, help="number of simulation runs")
    sub.add_argument("--seed", type=int, help=f"RNG seed (default {DEFAULT_SEED})")
    sub.add_argument("--out", help="output directory "
                     f"(default ${ENV_OUTDIR} or ./popmf_output)")
    sub.add_argument("--format", dest="formats", default=None,
                     help="comma subset of csv,svg (default csv,svg; "
                     "svg is rendered from the csv)")
    sub.add_argument("--config", help="key = value config file; flags override")


def build_parser() -> _Parser:
    parser = _Parser(prog="popmf", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
            ("transient", "mean field vs refined vs simulation over time"),
            ("steady", "stationary occupancy table plus fixed-point report"),
            ("response-time", "the five response-time curves"),
            ("sqrt-fit", "fit a + b/sqrt(N) to the scaled stationary deviation")]:
        sub = subs.add_parser(name, help=helptext)
        _add_common(sub)
        if name == "transient":
            sub.add_argument("--errors", action="store_true",
                             help="emit/plot error curves instead of levels")
        if name == "response-time":
            sub.add_argument("--functional", help="functional id "
                             "(default response_time)")
    lm = subs.add_parser("list-models", help="list built-in models")
    lm.add_argument("--json", action="store_true", help="machine-readable output")
    return parser


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path!r}: {exc}")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


_CONFIG_KEYS = {"model", "params", "init", "n", "tmax", "runs", "seed",
                "functional", "out", "format", "errors"}


def _parse_params(items: list[str]) -> dict[str, float]:
    params: dict[str, float] = {}
    for item in items:
        for piece in item.split(","):
            if not piece:
                continue
            if "=" not in piece:
                raise UsageError(f"--params expects K=V, got {piece!r}")
            key, value = piece.split("=", 1)
            try:
                params[key.strip()] = float(value)
            except ValueError:
                raise UsageError(f"parameter {key.strip()!r} has non-numeric "
                                 f"value {value!r}")
    return params


def _parse_init(text: str) -> tuple[tuple[float, ...] | None,
                                    tuple[int, ...] | None]:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--init expects comma-separated numbers, got {text!r}")
    integral = all(v == int(v) for v in values)
    total = sum(values)
    if integral and abs(total - 1.0) > 1e-9:
        return None, tuple(int(v) for v in values)
    return tuple(values), None


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    defaults = _DEFAULTS[args.command]
    file_values = _parse_config_file(args.config) if args.config else {}
    unknown = set(file_values) - _CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")

    def pick(flag, key, convert=lambda s: s):
        if flag is not None:
            return flag
        if key in file_values:
            return convert(file_values[key])
        return None

    model = pick(args.model, "model") or defaults["model"]
    params_items = list(args.params)
    if not params_items and "params" in file_values:
        params_items = [file_values["params"]]
    init_text = pick(args.init, "init")
    init, init_counts = (None, None)
    if init_text is not None:
        init, init_counts = _parse_init(init_text)
    n_list = pick(args.n, "n", lambda s: [int(v) for v in s.split(",")])
    if n_list is None:
        n_list = list(defaults["n"]) if init_counts is None \
            else [int(sum(init_counts))]
    if not n_list:
        raise UsageError("population size list is empty")
    if init_counts is not None and list(n_list) != [int(sum(init_counts))]:
        raise UsageError("integer --init fixes N to the count total; "
                         "drop --n or pass matching fractions")
    t_max = pick(args.tmax, "tmax", int)
    runs = pick(args.runs, "runs", int)
    seed = pick(args.seed, "seed", int)
    out = pick(args.out, "out")
    formats_text = pick(args.formats, "format") or "csv,svg"
    formats = tuple(part.strip() for part in formats_text.split(",") if part.strip())
    bad = set(formats) - {"csv", "svg"}
    if bad:
        raise UsageError(f"unsupported formats: {', '.join(sorted(bad))}")
    errors = bool(getattr(args, "errors", False)) or \
        file_values.get("errors", "").lower() in ("1", "true", "yes")
    functional = getattr(args, "functional", None) or file_values.get("functional")

    out_dir = Path(out or os.environ.get(ENV_OUTDIR) or "popmf_output")
    return ExperimentConfig(
        command=args.command, model=model, params=_parse_params(params_items),
        init=init, init_counts=init_counts, n_list=tuple(int(v) for v in n_list),
        t_max=int(t_max if t_max is not None else defaults["tmax"]),
        runs=int(runs if runs is not None else defaults["runs"]),
        seed=int(seed if seed is not None else DEFAULT_SEED),
        functional=functional, out_dir=out_dir, formats=formats, errors=errors)


_COMMANDS = {
    "transient": cmd_transient,
    "steady": cmd_steady,
    "response-time": cmd_response_time,
    "sqrt-fit": cmd_sqrt_fit,
}


def main(argv=None) -> int:
    parser = build_parser()
    written: list[Path] = []
    try:
        args = parser.parse_args(argv)
        if args.command == "list-models":
            cmd_list_models(args.json)
            return 0
        cfg = resolve_config(args)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        if cfg.t_max < 0:
            raise UsageError("tmax must be non-negative")
        if cfg.command != "sqrt-fit" and cfg.runs < 1:
            raise UsageError("runs must be >= 1")
        _COMMANDS[cfg.command](cfg, written)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except PopmfError as exc:
        for path in written:
            try:
                path.unlink(missing_ok=True)
            except OSError:
                pass
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
