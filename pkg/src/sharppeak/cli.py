"""Command-line front end: experiment configuration, parameter sweeps,
phase diagrams, figure-data emission, and reproducibility manifests.

Single binary, subcommand style.  Every command writes its result table
(CSV or JSON) plus a JSON manifest holding the resolved configuration,
the seed, library versions, and the wall clock; all numerics in result
files use 17 significant digits so that round-trips are lossless.  Exit
codes: 0 success, 1 validation error, 2 numeric or regime error, 3
censored or incomplete statistics.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .birthdeath import (
    BirthDeathSpec,
    binomial_bounds,
    binomial_log_limit,
    exit_point_law,
    mean_hitting_time_down,
    mean_hitting_time_up,
    pi_products_log,
    rho_root,
)
from .bounding import BoundingChainKind, ek_transition_matrix, master_class_chain
from .core import OccupancyDistribution, Parameters
from .errors import (
    CapacityError,
    CensoredError,
    NumericError,
    RegimeError,
    SingularChainError,
    UnreachableTargetError,
    ValidationError,
)
from .harness import (
    _format_floats,
    estimate_discovery_time,
    estimate_persistence_time,
    occupancy_stationary,
    renewal_decomposition,
    write_json_record,
)
from .kernels import lumped_mutation_matrix, sequence_mutation_prob
from .quasispecies import (
    classify_phase,
    generating_function,
    phi_threshold,
    q_moments,
    rho_star_closed,
    rho_star_recurrence,
)
from .simulate import SimulationConfig, run_trajectory, write_trajectory_csv

COMMANDS = (
    "simulate",
    "quasispecies-curve",
    "phase-diagram",
    "bd-analyze",
    "hitting-times",
    "renewal-check",
    "verify",
)


@dataclass(frozen=True)
class ExperimentSpec:
    """A fully resolved experiment: what to run and where to put it."""

    command: str
    params: Parameters
    config: SimulationConfig
    output_dir: Path
    format: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError("unknown command %r" % (self.command,))
        if self.format not in ("csv", "json"):
            raise ValidationError("format must be csv or json")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ValidationError (exit 1)."""

    def error(self, message):
        raise ValidationError(message)


# dest -> argparse action, per command; used to validate config files
_COMMAND_ACTIONS: dict = {}


def _flag(sub, command: str, name: str, **kwargs):
    action = sub.add_argument(name, **kwargs)
    _COMMAND_ACTIONS.setdefault(command, {})[action.dest] = action


def _add_model_flags(sub, command):
    _flag(sub, command, "--ell", type=int, help="chromosome length")
    _flag(sub, command, "--m", type=int, help="population size")
    _flag(sub, command, "--q", type=float, help="per-locus mutation probability")
    _flag(sub, command, "--a", type=float, help="mutation scale; sets q = a/ell")
    _flag(sub, command, "--sigma", type=float, help="master-sequence fitness")
    _flag(sub, command, "--kappa", type=int, help="alphabet size (default 2)")
    _flag(sub, command, "--K", type=int, help="number of tracked mutant classes (default 0)")


def _add_output_flags(sub, command):
    _flag(sub, command, "--output", type=str, help="output directory (default .)")
    _flag(sub, command, "--format", type=str, choices=("csv", "json"),
          help="result table format (default csv)")
    _flag(sub, command, "--config", type=str,
          help="flat JSON config file; flags override its values")


def build_parser() -> _Parser:
    parser = _Parser(prog="sharppeak", description=__doc__)
    subs = parser.add_subparsers(dest="command", metavar="command")

    sub = subs.add_parser("simulate", help="run occupancy-chain trajectories")
    _add_model_flags(sub, "simulate")
    _flag(sub, "simulate", "--seed", type=int, help="master seed (default 0)")
    _flag(sub, "simulate", "--steps", type=int, help="events per replica (default 20*m*ell)")
    _flag(sub, "simulate", "--burn-in", type=int, help="events discarded (default 10*m*ell)")
    _flag(sub, "simulate", "--replicas", type=int, help="independent replicas (default 1)")
    _flag(sub, "simulate", "--thin", type=int, help="events between samples (default m)")
    _flag(sub, "simulate", "--initial", type=str, choices=("master", "exit"),
          help="start state: all in class 0, or all in class K+1 (default master)")
    _add_output_flags(sub, "simulate")

    sub = subs.add_parser("quasispecies-curve",
                          help="equilibrium class frequencies against a")
    _flag(sub, "quasispecies-curve", "--sigma", type=float, help="master-sequence fitness")
    _flag(sub, "quasispecies-curve", "--a-max", type=float,
          help="largest a on the grid (default ln sigma)")
    _flag(sub, "quasispecies-curve", "--classes", type=int,
          help="highest class emitted (default 10)")
    _flag(sub, "quasispecies-curve", "--points", type=int,
          help="grid points from 0 to a-max (default 101)")
    _add_output_flags(sub, "quasispecies-curve")

    sub = subs.add_parser("phase-diagram",
                          help="regime labels over the (a, alpha) plane")
    _flag(sub, "phase-diagram", "--sigma", type=float, help="master-sequence fitness")
    _flag(sub, "phase-diagram", "--kappa", type=int, help="alphabet size (default 2)")
    _flag(sub, "phase-diagram", "--grid", type=int, help="points per axis (default 100)")
    _flag(sub, "phase-diagram", "--a-max", type=float,
          help="largest a (default 1.5 ln sigma)")
    _flag(sub, "phase-diagram", "--alpha-max", type=float,
          help="largest alpha (default spans the critical curve)")
    _add_output_flags(sub, "phase-diagram")

    sub = subs.add_parser("bd-analyze",
                          help="master-class birth-death chain: rates and hitting times")
    _add_model_flags(sub, "bd-analyze")
    _flag(sub, "bd-analyze", "--theta", type=str, choices=("lower", "upper"),
          help="which bounding chain (default lower)")
    _add_output_flags(sub, "bd-analyze")

    sub = subs.add_parser("hitting-times",
                          help="discovery and persistence time estimates")
    _add_model_flags(sub, "hitting-times")
    _flag(sub, "hitting-times", "--seed", type=int, help="master seed (default 0)")
    _flag(sub, "hitting-times", "--replicas", type=int, help="replicas (default 200)")
    _flag(sub, "hitting-times", "--step-cap", type=int,
          help="censoring cap per replica (default 10^9)")
    _flag(sub, "hitting-times", "--kind", type=str,
          choices=("discovery", "persistence", "both"),
          help="which estimate to run (default both)")
    _add_output_flags(sub, "hitting-times")

    sub = subs.add_parser("renewal-check",
                          help="renewal decomposition of the bounding chains")
    _add_model_flags(sub, "renewal-check")
    _flag(sub, "renewal-check", "--theta", type=str,
          choices=("lower", "upper", "both"), help="which chain (default both)")
    _flag(sub, "renewal-check", "--mode", type=str,
          choices=("auto", "exact", "mc"), help="solver mode (default auto)")
    _flag(sub, "renewal-check", "--seed", type=int, help="seed for mc mode (default 0)")
    _flag(sub, "renewal-check", "--steps", type=int,
          help="stationary-run events in mc mode (default 50000)")
    _flag(sub, "renewal-check", "--replicas", type=int,
          help="renewal cycles in mc mode (default 200)")
    _add_output_flags(sub, "renewal-check")

    subs.add_parser("verify", help="run the exact small-instance oracle suite")
    _COMMAND_ACTIONS.setdefault("verify", {})
    return parser


# ---------------------------------------------------------------------------
# config files


def _coerce_config_value(action, key: str, value):
    """Config values must match the flag's type; no nesting allowed."""
    if isinstance(value, bool) or isinstance(value, (list, dict)) or value is None:
        raise ValidationError("config key %r must be a scalar of the flag's type" % key)
    if action.type is int:
        if not isinstance(value, int):
            raise ValidationError("config key %r must be an integer" % key)
        return value
    if action.type is float:
        if not isinstance(value, (int, float)):
            raise ValidationError("config key %r must be a number" % key)
        return float(value)
    if not isinstance(value, str):
        raise ValidationError("config key %r must be a string" % key)
    if action.choices is not None and value not in action.choices:
        raise ValidationError(
            "config key %r must be one of %s" % (key, ", ".join(action.choices))
        )
    return value


def load_config(path, command: str) -> dict:
    """Read a flat JSON config for the given command.

    Keys are the flag names with dashes replaced by underscores; unknown
    keys are rejected by name.  The caller merges the result under the
    explicit command-line flags (flags win).
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError("cannot read config file %s: %s" % (path, exc))
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            "config parse error at line %d column %d: %s"
            % (exc.lineno, exc.colno, exc.msg)
        )
    if not isinstance(data, dict):
        raise ValidationError("config must be a flat JSON object")
    actions = _COMMAND_ACTIONS[command]
    out = {}
    for key, value in data.items():
        if key == "config" or key not in actions:
            raise ValidationError(
                "unknown config key %r for command %s" % (key, command)
            )
        out[key] = _coerce_config_value(actions[key], key, value)
    return out


def _merge_config(args) -> None:
    if getattr(args, "config", None) is None:
        return
    for key, value in load_config(args.config, args.command).items():
        if getattr(args, key) is None:
            setattr(args, key, value)


def _get(args, name, default):
    value = getattr(args, name, None)
    return default if value is None else value


def _resolve_params(args) -> Parameters:
    if args.ell is None or args.m is None or args.sigma is None:
        raise ValidationError("--ell, --m and --sigma are required")
    if (args.q is None) == (args.a is None):
        raise ValidationError("give exactly one of --q and --a")
    kappa = _get(args, "kappa", 2)
    K = _get(args, "K", 0)
    if args.a is not None:
        return Parameters.from_a(
            ell=args.ell, m=args.m, a=args.a, sigma=args.sigma, kappa=kappa, K=K
        )
    return Parameters(
        ell=args.ell, m=args.m, q=args.q, sigma=args.sigma, kappa=kappa, K=K
    )


def _require_sigma(args) -> float:
    if args.sigma is None:
        raise ValidationError("--sigma is required")
    if args.sigma <= 1.0:
        raise ValidationError("sigma must exceed 1")
    return float(args.sigma)


def build_spec(args) -> ExperimentSpec:
    """Turn merged arguments into a fully resolved ExperimentSpec."""
    command = args.command
    output_dir = Path(_get(args, "output", "."))
    fmt = _get(args, "format", "csv")
    params = None
    config = None
    options: dict = {}

    if command == "simulate":
        params = _resolve_params(args)
        steps = _get(args, "steps", 20 * params.m * params.ell)
        config = SimulationConfig(
            seed=_get(args, "seed", 0),
            steps=steps,
            burn_in=getattr(args, "burn_in", None),
            replicas=_get(args, "replicas", 1),
            thin=getattr(args, "thin", None),
        ).resolved(params)
        options["initial"] = _get(args, "initial", "master")
    elif command == "quasispecies-curve":
        sigma = _require_sigma(args)
        options["sigma"] = sigma
        options["a_max"] = _get(args, "a_max", math.log(sigma))
        options["classes"] = _get(args, "classes", 10)
        options["points"] = _get(args, "points", 101)
        if options["a_max"] <= 0.0:
            raise ValidationError("--a-max must be positive")
        if options["classes"] < 0 or options["points"] < 2:
            raise ValidationError("need --classes >= 0 and --points >= 2")
    elif command == "phase-diagram":
        sigma = _require_sigma(args)
        options["sigma"] = sigma
        options["kappa"] = _get(args, "kappa", 2)
        options["grid"] = _get(args, "grid", 100)
        options["a_max"] = _get(args, "a_max", 1.5 * math.log(sigma))
        options["alpha_max"] = getattr(args, "alpha_max", None)
        if options["grid"] < 2:
            raise ValidationError("--grid must be at least 2")
        if options["a_max"] <= 0.0:
            raise ValidationError("--a-max must be positive")
        if options["alpha_max"] is not None and options["alpha_max"] <= 0.0:
            raise ValidationError("--alpha-max must be positive")
    elif command == "bd-analyze":
        params = _resolve_params(args)
        options["theta"] = _get(args, "theta", "lower")
    elif command == "hitting-times":
        params = _resolve_params(args)
        options["seed"] = _get(args, "seed", 0)
        options["replicas"] = _get(args, "replicas", 200)
        options["step_cap"] = _get(args, "step_cap", 10 ** 9)
        options["kind"] = _get(args, "kind", "both")
    elif command == "renewal-check":
        params = _resolve_params(args)
        options["theta"] = _get(args, "theta", "both")
        options["mode"] = _get(args, "mode", "auto")
        config = SimulationConfig(
            seed=_get(args, "seed", 0),
            steps=_get(args, "steps", 50_000),
            replicas=_get(args, "replicas", 200),
        )
    return ExperimentSpec(
        command=command,
        params=params,
        config=config,
        output_dir=output_dir,
        format=fmt,
        options=options,
    )


# ---------------------------------------------------------------------------
# artifact plumbing


def _g17(value) -> str:
    return "%.17g" % float(value)


def _cell(value) -> str:
    if isinstance(value, (bool, str)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return _g17(value)


def _write_table(path: Path, header, rows, fmt: str) -> None:
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
    else:
        records = [dict(zip(header, row)) for row in rows]
        with open(path, "w") as fh:
            json.dump(_format_floats(records), fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_table(path) -> list:
    """Round-trip reader for result tables (CSV or JSON), used by the
    test suite: returns a list of per-row dicts with floats parsed."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path) as fh:
            return json.load(fh)
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for key, text in raw.items():
                try:
                    row[key] = int(text)
                except ValueError:
                    try:
                        row[key] = float(text)
                    except ValueError:
                        row[key] = text
            rows.append(row)
    return rows


def _versions() -> dict:
    import scipy

    try:
        from importlib.metadata import version

        own = version("sharppeak")
    except Exception:
        own = "unknown"
    return {
        "sharppeak": own,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": "%d.%d.%d" % sys.version_info[:3],
    }


def _write_manifest(spec: ExperimentSpec, payload: dict, started: float) -> None:
    record = {
        "kind": spec.command,
        "format": spec.format,
        "settings": dict(spec.options),
        "parameters": None,
        "config": None,
        "payload": payload,
        "versions": _versions(),
        "wall_clock_s": time.time() - started,
    }
    if spec.params is not None:
        p = spec.params
        record["parameters"] = {
            "ell": p.ell, "m": p.m, "q": p.q, "sigma": p.sigma,
            "kappa": p.kappa, "K": p.K, "a": p.a, "alpha": p.alpha,
        }
    if spec.config is not None:
        c = spec.config
        record["config"] = {
            "seed": c.seed, "steps": c.steps, "burn_in": c.burn_in,
            "replicas": c.replicas, "thin": c.thin,
        }
    base = spec.command.replace("-", "_")
    write_json_record(spec.output_dir / (base + "_manifest.json"),
                      _format_floats(record))


def _table_path(spec: ExperimentSpec) -> Path:
    base = spec.command.replace("-", "_")
    return spec.output_dir / ("%s.%s" % (base, spec.format))


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(spec: ExperimentSpec) -> dict:
    params = spec.params
    if spec.options["initial"] == "master":
        initial = OccupancyDistribution.all_in_class(params.ell, params.m, 0)
    else:
        initial = OccupancyDistribution.exit_state(params.ell, params.m, params.K)
    result = run_trajectory(spec.config, params, initial)
    path = _table_path(spec)
    if spec.format == "csv":
        write_trajectory_csv(result, path)
    else:
        payload = {
            "sample_times": result.sample_times.tolist(),
            "class_freqs": result.class_freqs.tolist(),
            "nk_over_m": result.nk_over_m.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(_format_floats(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return {
        "result_file": path.name,
        "samples": int(result.sample_times.size),
        "replicas": int(result.class_freqs.shape[0]),
    }


def _cmd_quasispecies_curve(spec: ExperimentSpec) -> dict:
    sigma = spec.options["sigma"]
    a_max = spec.options["a_max"]
    classes = spec.options["classes"]
    points = spec.options["points"]
    header = ["a"] + ["rho%d" % k for k in range(classes + 1)]
    rows = []
    for i in range(points):
        a = a_max * i / (points - 1)
        if sigma * math.exp(-a) > 1.0:
            weights = rho_star_recurrence(sigma, a, classes)
        else:
            # beyond the error threshold every fixed class has limit
            # frequency zero (the mass escapes to ever-higher classes)
            weights = np.zeros(classes + 1)
        rows.append([a] + [float(w) for w in weights])
    path = _table_path(spec)
    _write_table(path, header, rows, spec.format)
    return {"result_file": path.name, "rows": len(rows)}


def _cmd_phase_diagram(spec: ExperimentSpec) -> dict:
    sigma = spec.options["sigma"]
    kappa = spec.options["kappa"]
    grid = spec.options["grid"]
    a_max = spec.options["a_max"]
    log_kappa = math.log(kappa)
    a_values = [a_max * i / grid for i in range(1, grid + 1)]
    critical = []
    for a in a_values:
        phi = phi_threshold(sigma, a)
        critical.append(math.inf if phi == 0.0 else log_kappa / phi)
    alpha_max = spec.options["alpha_max"]
    if alpha_max is None:
        finite = sorted(c for c in critical if math.isfinite(c))
        alpha_max = 2.0 * finite[len(finite) // 2] if finite else 4.0 * log_kappa
        spec.options["alpha_max"] = alpha_max
    alpha_values = [alpha_max * j / grid for j in range(1, grid + 1)]
    header = ["a", "alpha", "regime", "alpha_critical"]
    rows = []
    for a, a_crit in zip(a_values, critical):
        for alpha in alpha_values:
            point = classify_phase(a, alpha, sigma, kappa)
            rows.append([a, alpha, point.regime.value, a_crit])
    path = _table_path(spec)
    _write_table(path, header, rows, spec.format)
    return {"result_file": path.name, "rows": len(rows)}


def _cmd_bd_analyze(spec: ExperimentSpec) -> dict:
    params = spec.params
    theta = BoundingChainKind(spec.options["theta"])
    mh = lumped_mutation_matrix(params)
    chain = master_class_chain(theta, mh)
    m = params.m
    log_pi = pi_products_log(chain)
    header = ["i", "delta", "gamma", "log_pi"]
    rows = []
    for i in range(m + 1):
        delta = chain.delta_at(i) if i < m else 0.0
        gamma = chain.gamma_at(i) if i > 0 else 0.0
        lp = float(log_pi[i]) if i < m else math.nan
        rows.append([i, delta, gamma, lp])
    path = _table_path(spec)
    _write_table(path, header, rows, spec.format)

    beta0 = mh.entry(0, 0)
    eps = 0.0 if theta is BoundingChainKind.LOWER else mh.entry(1, 0)
    payload = {
        "result_file": path.name,
        "mean_time_bottom_to_top": mean_hitting_time_up(chain, 0, m),
        "mean_time_top_to_bottom": mean_hitting_time_down(chain, 0, m),
        "beta0": beta0,
        "epsilon": eps,
        "rho_fixed_point": rho_root(beta0, eps, params.sigma),
    }
    if m >= 3:
        p_low, p_high = exit_point_law(chain, 0, m // 2, m)
        payload["exit_low_from_middle"] = p_low
        payload["exit_high_from_middle"] = p_high
    return payload


def _cmd_hitting_times(spec: ExperimentSpec) -> dict:
    params = spec.params
    kind = spec.options["kind"]
    replicas = spec.options["replicas"]
    seed = spec.options["seed"]
    cap = spec.options["step_cap"]
    header = ["kind", "mean", "standard_error", "count", "censored",
              "log_scale_per_unit", "scale_unit"]
    rows = []
    if kind in ("discovery", "both"):
        est = estimate_discovery_time(
            params, params.K, replicas=replicas, seed=seed, step_cap=cap
        )
        rows.append(["discovery", est.mean, est.standard_error, est.count,
                     est.censored, est.log_scale_per_unit, "ell"])
    if kind in ("persistence", "both"):
        # measured from a master-saturated start; the estimator's
        # two-phase default (discover first, then watch the loss) is
        # available through the library but impractically slow here
        initial = OccupancyDistribution.all_in_class(params.ell, params.m, 0)
        est = estimate_persistence_time(
            params, params.K, replicas=replicas, seed=seed + 1,
            step_cap=cap, initial=initial,
        )
        rows.append(["persistence", est.mean, est.standard_error, est.count,
                     est.censored, est.log_scale_per_unit, "m"])
    path = _table_path(spec)
    _write_table(path, header, rows, spec.format)
    return {"result_file": path.name, "rows": len(rows)}


def _cmd_renewal_check(spec: ExperimentSpec) -> dict:
    params = spec.params
    mode = spec.options["mode"]
    which = spec.options["theta"]
    thetas = {
        "lower": [BoundingChainKind.LOWER],
        "upper": [BoundingChainKind.UPPER],
        "both": [BoundingChainKind.LOWER, BoundingChainKind.UPPER],
    }[which]
    header = ["theta", "mode", "left_side", "right_side", "residual",
              "tau_star_mean", "tau0_mean", "nu_integral",
              "se_left", "se_right", "se_residual"]
    rows = []
    for theta in thetas:
        dec = renewal_decomposition(
            theta, params, params.K, config=spec.config, mode=mode
        )
        se = dec.standard_errors
        rows.append([
            theta.value, dec.mode, dec.left_side, dec.right_side, dec.residual,
            dec.tau_star_mean, dec.tau0_mean, dec.nu_integral,
            se.get("left_side", 0.0), se.get("right_side", 0.0),
            se.get("residual", 0.0),
        ])
    path = _table_path(spec)
    _write_table(path, header, rows, spec.format)
    return {"result_file": path.name, "rows": len(rows)}


# ---------------------------------------------------------------------------
# the verify suite: exact small instances with independent cross-checks


def _check_quasispecies_identities():
    sigma, a = 5.0, 0.5
    weights = rho_star_recurrence(sigma, a, 400)
    for k in range(21):
        closed = rho_star_closed(sigma, a, k)
        if abs(weights[k] - closed) > 1e-10 * max(1.0, abs(closed)):
            raise NumericError("recurrence vs closed form differ at k=%d" % k)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise NumericError("weights sum to %.12f" % weights.sum())
    ks = np.arange(weights.size)
    mean = float(ks @ weights)
    var = float((ks ** 2) @ weights) - mean ** 2
    m1, m2 = q_moments(sigma, a)
    if abs(m1 - mean) > 1e-8 or abs(m2 - var) > 1e-8:
        raise NumericError("moment formulas differ from direct sums")
    x = 0.4
    series = float((x ** ks) @ weights)
    if abs(generating_function(sigma, a, x) - series) > 1e-10:
        raise NumericError("generating function differs from its series")


def _bd_first_step_up_time(spec: BirthDeathSpec, b: int) -> float:
    # E(steps to reach b) from 0, by the dense first-step system
    A = np.zeros((b, b))
    for i in range(b):
        d = spec.delta_at(i)
        g = spec.gamma_at(i) if i > 0 else 0.0
        A[i, i] = d + g
        if i + 1 < b:
            A[i, i + 1] = -d
        if i > 0:
            A[i, i - 1] = -g
    return float(np.linalg.solve(A, np.ones(b))[0])


def _check_birth_death_closed_forms():
    rng = np.random.default_rng(20260814)
    m = 12
    spec = BirthDeathSpec(
        m=m,
        delta=tuple(rng.uniform(0.05, 0.45, m)),
        gamma=tuple(rng.uniform(0.05, 0.45, m)),
    )
    up = mean_hitting_time_up(spec, 0, m)
    up_solve = _bd_first_step_up_time(spec, m)
    if abs(up - up_solve) > 1e-9 * max(1.0, abs(up_solve)):
        raise NumericError("up hitting time %.12g vs solve %.12g" % (up, up_solve))
    mirror = BirthDeathSpec(
        m=m,
        delta=tuple(spec.gamma_at(m - i) for i in range(m)),
        gamma=tuple(spec.delta_at(m - i) for i in range(1, m + 1)),
    )
    down = mean_hitting_time_down(spec, 0, m)
    down_solve = _bd_first_step_up_time(mirror, m)
    if abs(down - down_solve) > 1e-9 * max(1.0, abs(down_solve)):
        raise NumericError("down hitting time %.12g vs solve %.12g" % (down, down_solve))
    i0 = m // 2
    p_low, _ = exit_point_law(spec, 0, i0, m)
    A = np.zeros((m - 1, m - 1))
    rhs = np.zeros(m - 1)
    for idx, i in enumerate(range(1, m)):
        d, g = spec.delta_at(i), spec.gamma_at(i)
        A[idx, idx] = d + g
        if i + 1 < m:
            A[idx, idx + 1] = -d
        if i - 1 > 0:
            A[idx, idx - 1] = -g
        if i - 1 == 0:
            rhs[idx] = g
    p_solve = float(np.linalg.solve(A, rhs)[i0 - 1])
    if abs(p_low - p_solve) > 1e-9:
        raise NumericError("exit law %.12g vs solve %.12g" % (p_low, p_solve))


def _check_lumping_exactness():
    params = Parameters(ell=2, m=2, q=0.1, sigma=2.0, kappa=2, K=0)
    ell, m, kappa, sigma = params.ell, params.m, params.kappa, params.sigma
    seqs = list(itertools.product(range(kappa), repeat=ell))
    cls = [sum(1 for x in s if x) for s in seqs]
    M = np.array([[sequence_mutation_prob(u, v, params) for v in seqs] for u in seqs])
    states = list(itertools.product(range(len(seqs)), repeat=m))
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    P = np.zeros((n, n))
    for i, x in enumerate(states):
        fitness = np.array([sigma if cls[u] == 0 else 1.0 for u in x])
        w = fitness / fitness.sum()
        for slot in range(m):
            for parent in range(m):
                for v in range(len(seqs)):
                    y = list(x)
                    y[slot] = v
                    P[i, index[tuple(y)]] += w[parent] * M[x[parent], v] / m
    A = P.T - np.eye(n)
    A[-1] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    mu = np.linalg.solve(A, b)
    push: dict = {}
    for s, weight in zip(states, mu):
        counts = [0] * (ell + 1)
        for u in s:
            counts[cls[u]] += 1
        key = tuple(counts)
        push[key] = push.get(key, 0.0) + weight
    ostates, onu = occupancy_stationary(params)
    worst = max(abs(push.get(z, 0.0) - w) for z, w in zip(ostates, onu))
    if worst > 1e-10:
        raise NumericError("pushforward differs from occupancy stationary by %.3e" % worst)


def _check_renewal_identity():
    params = Parameters.from_a(ell=6, m=4, a=0.5, sigma=3.0, kappa=2, K=0)
    for theta in (BoundingChainKind.LOWER, BoundingChainKind.UPPER):
        dec = renewal_decomposition(theta, params, 0, mode="exact")
        if abs(dec.residual) > 1e-9:
            raise NumericError(
                "%s-chain renewal residual %.3e" % (theta.value, dec.residual)
            )


def _check_window_chain_consistency():
    params = Parameters.from_a(ell=6, m=4, a=0.5, sigma=3.0, kappa=2, K=0)
    m = params.m
    for theta in (BoundingChainKind.LOWER, BoundingChainKind.UPPER):
        ekm = ek_transition_matrix(theta, params, 0)
        for label, matrix in (("modified", ekm.matrix), ("raw", ekm.unmodified)):
            gap = np.abs(np.asarray(matrix.sum(axis=1)).ravel() - 1.0).max()
            if gap > 1e-12:
                raise NumericError(
                    "%s %s-chain rows sum to 1 +/- %.3e" % (label, theta.value, gap)
                )
        chain = master_class_chain(theta, lumped_mutation_matrix(params))
        P = ekm.matrix.toarray()
        idx = {z: i for i, z in enumerate(ekm.states)}
        if abs(P[idx[(0,)], idx[(1,)]] - 1.0) > 1e-12:
            raise NumericError("empty state must re-enter at (1,)")
        for i in range(1, m + 1):
            row = P[idx[(i,)]]
            up = row[idx[(i + 1,)]] if i < m else 0.0
            down = row[idx[(i - 1,)]]
            want_up = chain.delta_at(i) if i < m else 0.0
            if abs(up - want_up) > 1e-12 or abs(down - chain.gamma_at(i)) > 1e-12:
                raise NumericError(
                    "K=0 window chain disagrees with birth-death rates at i=%d" % i
                )


def _check_binomial_limit():
    ell, kappa = 2000, 2
    b = int(0.3 * ell)
    bounds = binomial_bounds(ell, kappa, b)
    if not bounds.log_lower <= bounds.log_exact <= bounds.log_upper:
        raise NumericError("binomial bounds are not ordered")
    gap = abs(bounds.log_exact / ell - binomial_log_limit(kappa, b / ell))
    if gap > 5e-3:
        raise NumericError("binomial limit off by %.3e at ell=%d" % (gap, ell))


_VERIFY_CHECKS = (
    ("quasispecies identities", _check_quasispecies_identities),
    ("birth-death closed forms vs first-step solves", _check_birth_death_closed_forms),
    ("occupancy lumping exactness (16-state instance)", _check_lumping_exactness),
    ("renewal identity, exact mode", _check_renewal_identity),
    ("bounded window chain consistency", _check_window_chain_consistency),
    ("binomial bounds and limit", _check_binomial_limit),
)


def _cmd_verify() -> int:
    failures = 0
    for name, check in _VERIFY_CHECKS:
        started = time.time()
        try:
            check()
        except Exception as exc:
            failures += 1
            print("FAIL: %s: %s" % (name, exc))
        else:
            print("ok: %s (%.2f s)" % (name, time.time() - started))
    if failures:
        print("%d verification check(s) failed" % failures)
        return 2
    print("all %d verification checks passed" % len(_VERIFY_CHECKS))
    return 0


# ---------------------------------------------------------------------------
# entry point


def run_experiment(spec: ExperimentSpec) -> int:
    """Run one experiment, write its artifacts, return the exit status."""
    if spec.command == "verify":
        return _cmd_verify()
    started = time.time()
    spec.output_dir.mkdir(parents=True, exist_ok=True)
    runner = {
        "simulate": _cmd_simulate,
        "quasispecies-curve": _cmd_quasispecies_curve,
        "phase-diagram": _cmd_phase_diagram,
        "bd-analyze": _cmd_bd_analyze,
        "hitting-times": _cmd_hitting_times,
        "renewal-check": _cmd_renewal_check,
    }[spec.command]
    payload = runner(spec)
    _write_manifest(spec, payload, started)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ValidationError("a command is required (see --help)")
        if args.command == "verify":
            return _cmd_verify()
        _merge_config(args)
        return run_experiment(build_spec(args))
    except ValidationError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except (RegimeError, NumericError, CapacityError, SingularChainError,
            UnreachableTargetError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except CensoredError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
