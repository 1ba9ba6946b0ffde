"""Command line entry point: ``relalloc <command> --config FILE``.

Commands: allocate, simulate, converge, fractions, oracle, constants.  The
configuration is a single JSON document::

    {
      "system": {"topology": "parallel",
                 "groups": [[{"alpha": 1, "beta": 1}, {"alpha": 1, "beta": 1}]]},
      "scheme": "two_stage",
      "m_grid": [100, 400],
      "replications": 10000,
      "master_seed": 7,
      "loss_mode": "posterior_variance",
      "output_path": "risk.csv"
    }

``scheme`` is one of ``two_stage``, ``hybrid``, ``fixed_equal`` or
``{"fixed_custom": [[m_11, ...], ...]}``.  Exit status is 0 on success, 1
when a computation failed or a check came out ``fail``, and 2 for usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import __version__
from .allocation import (
    AllocationPlan,
    InfeasibleBudgetError,
    Scheme,
    SchemeKind,
    check_feasible,
    plan_for,
)
from .core_model import (
    BetaParams,
    ComponentCounts,
    ObservationLedger,
    StructureError,
    SystemSpec,
    Topology,
    dualize,
)
from .oracle import (
    BudgetExceededError,
    EnumerationBudget,
    enumerate_scheme_risk,
    mc_constant_check,
    optimal_fixed_allocation,
)
from .risk import asymptotic_constant, b_constant
from .simulation import (
    LossMode,
    SimulationConfig,
    SimulationError,
    convergence_study,
    estimate_bayes_risk,
    fraction_study,
    resolve_threads,
)

CONFIG_KEYS = {"system", "scheme", "m_grid", "replications", "master_seed", "loss_mode", "output_path"}
DEFAULT_REPLICATIONS = 1000
Z_LIMIT = 3.0


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def _load_json(path, what: str):
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(what, f"file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(what, f"cannot read {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(what, f"malformed JSON in {path}: {exc}") from None


def _int(value, field: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(field, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(field, f"must be at least {minimum}, got {value}")
    return value


def _parse_system(raw) -> SystemSpec:
    if not isinstance(raw, dict):
        raise ConfigError("system", "expected an object")
    unknown = set(raw) - {"topology", "groups"}
    if unknown:
        raise ConfigError(f"system.{sorted(unknown)[0]}", "unknown key")
    try:
        topology = Topology(raw.get("topology"))
    except ValueError:
        choices = ", ".join(t.value for t in Topology)
        raise ConfigError("system.topology", f"expected one of {choices}, got {raw.get('topology')!r}") from None
    groups = raw.get("groups")
    if not isinstance(groups, list) or not groups:
        raise ConfigError("system.groups", "expected a non-empty list of groups")
    parsed = []
    for i, group in enumerate(groups):
        if not isinstance(group, list) or not group:
            raise ConfigError(f"system.groups[{i}]", "expected a non-empty list of components")
        members = []
        for j, comp in enumerate(group):
            where = f"system.groups[{i}][{j}]"
            if not isinstance(comp, dict):
                raise ConfigError(where, "expected an object with alpha and beta")
            unknown = set(comp) - {"alpha", "beta"}
            if unknown:
                raise ConfigError(f"{where}.{sorted(unknown)[0]}", "unknown key")
            for key in ("alpha", "beta"):
                value = comp.get(key)
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{where}.{key}", f"expected a number, got {value!r}")
                if not math.isfinite(value) or value <= 0:
                    raise ConfigError(f"{where}.{key}", f"must be a finite positive number, got {value!r}")
            members.append(BetaParams(float(comp["alpha"]), float(comp["beta"])))
        parsed.append(tuple(members))
    if topology.is_flat and len(parsed) != 1:
        raise ConfigError("system.groups", f"a {topology.value} system takes exactly one group")
    return SystemSpec(topology, tuple(parsed))


def _parse_scheme(raw, spec: SystemSpec) -> Scheme:
    if raw is None:
        return Scheme.two_stage() if spec.topology.is_flat else Scheme.hybrid()
    if isinstance(raw, dict):
        if set(raw) != {"fixed_custom"}:
            raise ConfigError("scheme", "an object scheme must be {\"fixed_custom\": [[...], ...]}")
        sizes = raw["fixed_custom"]
        if not isinstance(sizes, list) or not all(isinstance(g, list) for g in sizes):
            raise ConfigError("scheme.fixed_custom", "expected a list of lists of sizes")
        for i, g in enumerate(sizes):
            for j, x in enumerate(g):
                _int(x, f"scheme.fixed_custom[{i}][{j}]", 0)
        if tuple(len(g) for g in sizes) != spec.shape:
            raise ConfigError("scheme.fixed_custom", f"shape must match the system shape {list(spec.shape)}")
        return Scheme.fixed_custom(sizes)
    try:
        kind = SchemeKind(raw)
    except ValueError:
        raise ConfigError("scheme", f"unknown scheme {raw!r}") from None
    if kind is SchemeKind.FIXED_CUSTOM:
        raise ConfigError("scheme", "fixed_custom needs sizes: {\"fixed_custom\": [[...]]}")
    return Scheme(kind)


def config_from_dict(raw) -> SimulationConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config", "expected a JSON object at top level")
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    if "system" not in raw:
        raise ConfigError("system", "missing required key")
    if "m_grid" not in raw:
        raise ConfigError("m_grid", "missing required key")
    spec = _parse_system(raw["system"])
    scheme = _parse_scheme(raw.get("scheme"), spec)

    grid = raw["m_grid"]
    if not isinstance(grid, list):
        raise ConfigError("m_grid", "expected a list of positive integers")
    grid = [_int(m, f"m_grid[{k}]", 1) for k, m in enumerate(grid)]
    for k, m in enumerate(grid):
        try:
            check_feasible(spec, scheme, m)
        except (InfeasibleBudgetError, StructureError, ValueError) as exc:
            raise ConfigError(f"m_grid[{k}]", str(exc)) from None

    replications = _int(raw.get("replications", DEFAULT_REPLICATIONS), "replications", 1)
    seed = _int(raw.get("master_seed", 0), "master_seed")
    if not -(2**63) <= seed < 2**64:
        raise ConfigError("master_seed", "must fit in 64 bits")
    try:
        loss_mode = LossMode(raw.get("loss_mode", LossMode.POSTERIOR_VARIANCE.value))
    except ValueError:
        raise ConfigError("loss_mode", f"expected one of {[m.value for m in LossMode]}") from None
    output_path = raw.get("output_path")
    if output_path is not None and not isinstance(output_path, str):
        raise ConfigError("output_path", "expected a string")
    return SimulationConfig(spec, scheme, tuple(grid), replications, seed, loss_mode, output_path)


def parse_config(path) -> SimulationConfig:
    return config_from_dict(_load_json(path, "config"))


def config_to_dict(config: SimulationConfig) -> dict:
    scheme = config.scheme
    return {
        "system": {
            "topology": config.spec.topology.value,
            "groups": [[{"alpha": p.alpha, "beta": p.beta} for p in g] for g in config.spec.groups],
        },
        "scheme": {"fixed_custom": [list(g) for g in scheme.sizes]}
        if scheme.kind is SchemeKind.FIXED_CUSTOM else scheme.label,
        "m_grid": list(config.m_grid),
        "replications": config.replications,
        "master_seed": config.master_seed,
        "loss_mode": config.loss_mode.value,
        "output_path": config.output_path,
    }


def parse_stage_one(raw, spec: SystemSpec) -> tuple[int | None, ObservationLedger]:
    """Stage-one data file: ``{"m": 100, "stage_one": [[{"trials": 10, "successes": 4}, ...], ...]}``.

    A flat list of components is accepted for single-group systems.
    """
    if not isinstance(raw, dict) or "stage_one" not in raw:
        raise ConfigError("stage_one", "expected an object with a stage_one list")
    unknown = set(raw) - {"m", "stage_one"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key in stage-one data")
    data = raw["stage_one"]
    if isinstance(data, list) and data and all(isinstance(c, dict) for c in data):
        data = [data]
    if not isinstance(data, list) or not all(isinstance(g, list) for g in data):
        raise ConfigError("stage_one", "expected a list of groups of {trials, successes}")
    groups = []
    for i, g in enumerate(data):
        members = []
        for j, c in enumerate(g):
            where = f"stage_one[{i}][{j}]"
            if not isinstance(c, dict) or set(c) != {"trials", "successes"}:
                raise ConfigError(where, "expected {\"trials\": int, \"successes\": int}")
            trials = _int(c["trials"], f"{where}.trials", 0)
            successes = _int(c["successes"], f"{where}.successes", 0)
            if successes > trials:
                raise ConfigError(f"{where}.successes", "exceeds trials")
            members.append(ComponentCounts(trials, successes))
        groups.append(tuple(members))
    ledger = ObservationLedger(tuple(groups))
    if ledger.shape != spec.shape:
        raise ConfigError("stage_one", f"shape {list(ledger.shape)} does not match the system shape {list(spec.shape)}")
    m = raw.get("m")
    if m is not None:
        m = _int(m, "m", 1)
    return m, ledger


def format_plan_table(plan: AllocationPlan) -> str:
    rows = [("subsystem", "component", "units")]
    if plan.per_component is None:
        rows += [("1", str(j + 1), str(n)) for j, n in enumerate(plan.per_subsystem)]
    else:
        for i, g in enumerate(plan.per_component):
            rows += [(str(i + 1), str(j + 1), str(n)) for j, n in enumerate(g)]
    widths = [max(len(r[k]) for r in rows) for k in range(3)]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
    header = f"m={plan.total}  L={plan.stage_one}"
    if plan.stage_one_tilde is not None:
        header += f"  L_tilde={plan.stage_one_tilde}"
    return "\n".join([header] + lines)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def cmd_allocate(config: SimulationConfig, args) -> int:
    if args.data is None:
        raise ConfigError("--data", "the allocate command needs a stage-one data file")
    file_m, ledger = parse_stage_one(_load_json(args.data, "stage_one"), config.spec)
    m = args.m or file_m or (config.m_grid[0] if len(config.m_grid) == 1 else None)
    if m is None:
        raise ConfigError("m", "give --m, an \"m\" key in the data file, or a single-entry m_grid")
    if config.scheme.is_fixed:
        plan = plan_for(config.spec, config.scheme, m)
    else:
        plan = plan_for(config.spec, config.scheme, m, ledger)
    _emit(_json(plan.to_dict()), args.out)
    print(format_plan_table(plan), file=sys.stderr)
    return 0


def _row_dict(row) -> dict:
    return {
        "m": row.m,
        "scheme": row.scheme,
        "loss_mode": row.loss_mode,
        "risk_estimate": row.risk_estimate,
        "std_error": row.std_error,
        "m_times_risk": row.m_times_risk,
        "target_constant": row.target_constant,
        "replications": row.replications,
        "seed": row.seed,
        "squared_error_estimate": row.squared_error_estimate,
        "squared_error_std_error": row.squared_error_std_error,
    }


def cmd_simulate(config: SimulationConfig, args) -> int:
    rows = []
    status = 0
    for m in config.m_grid:
        try:
            rows.append(_row_dict(estimate_bayes_risk(config, m, threads=args.threads)))
        except (ValueError, RuntimeError) as exc:
            rows.append({"m": m, "status": "error", "error": str(exc)})
            status = 1
    _emit(_json(rows), args.out or config.output_path)
    return status


def cmd_converge(config: SimulationConfig, args) -> int:
    status = 0
    try:
        report = convergence_study(config, threads=args.threads)
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        report = exc.partial
        status = 1
    _emit(report.to_csv(), args.out or config.output_path)
    return status


def cmd_fractions(config: SimulationConfig, args) -> int:
    if args.p_true is None:
        raise ConfigError("--p-true", "the fractions command needs --p-true")
    p = [float(x) for x in args.p_true.split(",")]
    m = args.m or (config.m_grid[-1] if config.m_grid else None)
    if m is None:
        raise ConfigError("m", "give --m or a non-empty m_grid")
    result = fraction_study(config, m, p)
    _emit(_json(result.to_dict()), args.out or config.output_path)
    return 0


def _constant_item(name: str, closed: float, check) -> dict:
    z = check.z_score(closed)
    return {
        "name": name,
        "closed_form": closed,
        "mc": check.mc_estimate,
        "std_error": check.std_error,
        "z_score": z,
        "pass": "pass" if abs(z) <= Z_LIMIT else "fail",
    }


def _canonical(spec: SystemSpec) -> SystemSpec:
    return dualize(spec) if spec.topology in (Topology.SERIES, Topology.SERIES_PARALLEL) else spec


def cmd_oracle(config: SimulationConfig, args) -> int:
    budget = EnumerationBudget(args.max_paths)
    spec = config.spec
    failed = False
    exact, optimal = [], []
    for m in config.m_grid:
        try:
            res = enumerate_scheme_risk(spec, config.scheme, m, budget)
            exact.append({
                "m": m, "scheme": config.scheme.label, "status": "ok",
                "exact_risk": res.risk, "m_times_risk": m * res.risk,
                "paths": res.paths, "total_probability": res.total_probability,
            })
        except BudgetExceededError as exc:
            exact.append({"m": m, "scheme": config.scheme.label, "status": "budget_exceeded", "error": str(exc)})
            failed = True
        try:
            alloc, risk = optimal_fixed_allocation(spec, m, budget)
            optimal.append({"m": m, "status": "ok", "allocation": list(alloc), "exact_risk": risk})
        except BudgetExceededError as exc:
            optimal.append({"m": m, "status": "budget_exceeded", "error": str(exc)})
            failed = True

    canon = _canonical(spec)
    constants = []
    seed = config.master_seed
    constants.append(_constant_item(
        "asymptotic_constant", asymptotic_constant(spec), mc_constant_check(spec, args.draws, seed)
    ))
    if canon.topology is Topology.PARALLEL_SERIES:
        for i, g in enumerate(canon.groups):
            constants.append(_constant_item(
                f"b_constant[{i}]", b_constant(g), mc_constant_check(list(g), args.draws, seed + i + 1)
            ))
    failed = failed or any(c["pass"] == "fail" for c in constants)
    report = {"exact": exact, "optimal_fixed": optimal, "constants": constants}
    _emit(_json(report), args.out)
    return 1 if failed else 0


def cmd_constants(config: SimulationConfig, args) -> int:
    canon = _canonical(config.spec)
    report = {
        "topology": config.spec.topology.value,
        "canonical_topology": canon.topology.value,
        "asymptotic_constant": asymptotic_constant(config.spec),
        "b_constants": [b_constant(g) for g in canon.groups],
    }
    _emit(_json(report), args.out)
    return 0


COMMANDS = {
    "allocate": cmd_allocate,
    "simulate": cmd_simulate,
    "converge": cmd_converge,
    "fractions": cmd_fractions,
    "oracle": cmd_oracle,
    "constants": cmd_constants,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relalloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="override master_seed from the config")
    common.add_argument("--threads", type=int, help="worker threads (default: $RELALLOC_THREADS or 1)")
    common.add_argument("--out", help="write the result here instead of stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("allocate", parents=[common], help="allocation plan from stage-one data")
    p.add_argument("--data", help="stage-one data file (JSON)")
    p.add_argument("--m", type=int, help="total sample size")
    sub.add_parser("simulate", parents=[common], help="Bayes risk per m as JSON")
    sub.add_parser("converge", parents=[common], help="convergence table as CSV")
    p = sub.add_parser("fractions", parents=[common], help="realized vs limiting allocation shares")
    p.add_argument("--m", type=int, help="total sample size (default: last m_grid entry)")
    p.add_argument("--p-true", help="comma-separated component reliabilities, group-major")
    p = sub.add_parser("oracle", parents=[common], help="exact risks and constant cross-checks")
    p.add_argument("--max-paths", type=int, default=EnumerationBudget().max_paths)
    p.add_argument("--draws", type=int, default=10**6, help="prior draws for constant checks")
    sub.add_parser("constants", parents=[common], help="closed-form constants")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.threads = resolve_threads(args.threads)
        config = parse_config(args.config)
        if args.seed is not None:
            config = config.with_seed(args.seed)
        return COMMANDS[args.command](config, args)
    except (ConfigError, StructureError, InfeasibleBudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
