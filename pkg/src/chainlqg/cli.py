"""Command-line front end.

Three subcommands:

- ``synth``: build a controller for the configured platoon and write it,
  with its analytical cost report, to a JSON file.
- ``simulate``: run the configured road-speed scenario for one or more
  controllers on common random numbers and write trace and metrics CSVs.
- ``verify``: run the numerical property suites and exit 0 only if every
  check passes.

Configuration is a schema-versioned JSON document.  Every field has a
default, unknown keys are rejected, and the fully materialized effective
configuration is echoed next to the outputs, so rerunning with the echoed
file reproduces the outputs byte for byte.

Seed precedence: ``--seed`` beats the ``CHAINLQG_SEED`` environment
variable, which beats ``scenario.noise_seed`` from the config file.

Exit codes: 0 success, 1 verify-suite failure, 2 configuration problem,
3 modeling or assumption violation, 4 numerical failure, 5 I/O failure.
"""

import argparse
import json
import os
import re
import sys as _sys
from pathlib import Path

import numpy as np

from .blocks import BlockIndexError
from .exceptions import (
    AssumptionError,
    ConfigError,
    ModelError,
    RiccatiDivergenceError,
    SimulationDivergenceError,
)
from .platoon_model import (
    DEFAULT_INPUT_WEIGHT,
    DEFAULT_MASSES,
    DEFAULT_MAX_BRAKE_TORQUE,
    DEFAULT_MAX_ENGINE_TORQUE,
    DEFAULT_NOISE_SIGMA,
    THETA_FORMS,
    AeroModel,
    ChainSystem,
    CostWeights,
    OperatingPoint,
    VehicleParams,
    build_platoon,
)
from .simulate import (
    DEFAULT_DURATION,
    DEFAULT_EVENTS,
    Scenario,
    compare_controllers,
    format_metrics_table,
    run_closed_loop,
    write_metrics_csv,
    write_trace_csv,
)
from .synthesis import (
    controller_to_dict,
    load_controller,
    synth_centralized,
    synth_suboptimal_local,
    synth_three_vehicle,
    synth_two_vehicle,
)
from .verification import SUITE_NAMES, format_results, results_to_dict, run_suite

CONFIG_SCHEMA_VERSION = 1
ENV_SEED = "CHAINLQG_SEED"
MODES = ("two", "three", "centralized", "suboptimal")


def default_config() -> dict:
    """Fully materialized default configuration (three stock vehicles)."""
    return {
        "schema": CONFIG_SCHEMA_VERSION,
        "vehicles": [
            {
                "mass": float(mass),
                "max_engine_torque": DEFAULT_MAX_ENGINE_TORQUE,
                "max_brake_torque": DEFAULT_MAX_BRAKE_TORQUE,
                "k_u": None,
                "k_d": None,
            }
            for mass in DEFAULT_MASSES
        ],
        "aero": {"kappa1": -0.47, "kappa2": 45.0, "valid_range": [0.0, 65.0]},
        "operating_point": {"v0": 19.44, "tau": 1.0, "Ts": 0.1, "d0": None},
        "weights": {
            "w_tau": 1.0,
            "w_dv": 1.0,
            "w_d": 0.01,
            "w_v": 0.01,
            "w_u": DEFAULT_INPUT_WEIGHT,
            "w1_v": 1.0,
            "w1_u": DEFAULT_INPUT_WEIGHT,
        },
        "noise": {"sigma": DEFAULT_NOISE_SIGMA},
        "scenario": {
            "duration": DEFAULT_DURATION,
            "events": [[t, v] for t, v in DEFAULT_EVENTS],
            "noise_seed": 0,
            "noise_scale": 1.0,
        },
        "solver": {"tol": 1e-12, "max_iter": 10**6},
        "flags": {
            "integral_action": False,
            "theta_form": "euler",
            "alternate_tail_estimator": False,
        },
    }


def load_config(path) -> dict:
    """Raw config dict from a JSON file; {} when no path is given."""
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return raw


def _check_keys(section: dict, allowed, path: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown} under {path!r}")


def _section(raw: dict, key: str) -> dict:
    sec = raw.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {key!r} must be an object")
    return sec


def _number(sec, key, path, default, lo=None, allow_none=False):
    val = sec.get(key, default)
    if val is None:
        if allow_none:
            return None
        raise ConfigError(f"{path}.{key} must be a number")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}.{key} must be a number, got {val!r}")
    val = float(val)
    if lo is not None and val < lo:
        raise ConfigError(f"{path}.{key} must be >= {lo}, got {val}")
    return val


def _scalar_or_list(sec, key, path, default, count, lo=None):
    """A float, or a list of `count` floats (one per follower/vehicle)."""
    val = sec.get(key, default)
    if isinstance(val, (list, tuple)):
        if len(val) != count:
            raise ConfigError(f"{path}.{key} needs {count} entries, got {len(val)}")
        return [_coerce_float(v, f"{path}.{key}", lo) for v in val]
    return _coerce_float(val, f"{path}.{key}", lo)


def _coerce_float(val, path, lo=None):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path} must be a number, got {val!r}")
    val = float(val)
    if lo is not None and val < lo:
        raise ConfigError(f"{path} must be >= {lo}, got {val}")
    return val


def _boolean(sec, key, path, default):
    val = sec.get(key, default)
    if not isinstance(val, bool):
        raise ConfigError(f"{path}.{key} must be true or false, got {val!r}")
    return val


def validate_config(raw: dict) -> dict:
    """Validate a raw config and materialize every default.

    The result is the effective configuration: plain JSON-serializable
    values only, every key present, every value range-checked.  Feeding
    the echoed effective config back through this function is the
    identity.
    """
    defaults = default_config()
    _check_keys(raw, defaults.keys(), "config root")
    schema = raw.get("schema", CONFIG_SCHEMA_VERSION)
    if schema != CONFIG_SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported config schema {schema!r}; this build reads schema "
            f"{CONFIG_SCHEMA_VERSION}"
        )

    vehicles_raw = raw.get("vehicles", defaults["vehicles"])
    if not isinstance(vehicles_raw, list) or len(vehicles_raw) < 2:
        raise ConfigError("vehicles must be a list of at least 2 vehicle objects")
    vehicles = []
    for i, v in enumerate(vehicles_raw):
        path = f"vehicles[{i}]"
        if not isinstance(v, dict):
            raise ConfigError(f"{path} must be an object")
        _check_keys(v, ("mass", "max_engine_torque", "max_brake_torque", "k_u", "k_d"), path)
        if "mass" not in v:
            raise ConfigError(f"{path}.mass is required")
        vehicles.append(
            {
                "mass": _number(v, "mass", path, None, lo=1e-12),
                "max_engine_torque": _number(
                    v, "max_engine_torque", path, DEFAULT_MAX_ENGINE_TORQUE, lo=0.0
                ),
                "max_brake_torque": _number(
                    v, "max_brake_torque", path, DEFAULT_MAX_BRAKE_TORQUE, lo=0.0
                ),
                "k_u": _number(v, "k_u", path, None, lo=1e-15, allow_none=True),
                "k_d": _number(v, "k_d", path, None, lo=0.0, allow_none=True),
            }
        )
    M = len(vehicles)

    aero_raw = _section(raw, "aero")
    _check_keys(aero_raw, ("kappa1", "kappa2", "valid_range"), "aero")
    vr = aero_raw.get("valid_range", defaults["aero"]["valid_range"])
    if (
        not isinstance(vr, (list, tuple))
        or len(vr) != 2
        or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in vr)
        or float(vr[0]) >= float(vr[1])
    ):
        raise ConfigError("aero.valid_range must be an increasing pair [lo, hi]")
    aero = {
        "kappa1": _number(aero_raw, "kappa1", "aero", defaults["aero"]["kappa1"]),
        "kappa2": _number(aero_raw, "kappa2", "aero", defaults["aero"]["kappa2"]),
        "valid_range": [float(vr[0]), float(vr[1])],
    }

    op_raw = _section(raw, "operating_point")
    _check_keys(op_raw, ("v0", "tau", "Ts", "d0"), "operating_point")
    op = {
        "v0": _number(op_raw, "v0", "operating_point", 19.44, lo=1e-9),
        "tau": _number(op_raw, "tau", "operating_point", 1.0, lo=0.0),
        "Ts": _number(op_raw, "Ts", "operating_point", 0.1, lo=1e-9),
        "d0": _number(op_raw, "d0", "operating_point", None, lo=0.0, allow_none=True),
    }

    w_raw = _section(raw, "weights")
    _check_keys(w_raw, defaults["weights"].keys(), "weights")
    wdef = defaults["weights"]
    weights = {
        key: _scalar_or_list(w_raw, key, "weights", wdef[key], M - 1, lo=0.0)
        for key in ("w_tau", "w_dv", "w_d", "w_v", "w_u")
    }
    weights["w1_v"] = _number(w_raw, "w1_v", "weights", wdef["w1_v"], lo=0.0)
    weights["w1_u"] = _number(w_raw, "w1_u", "weights", wdef["w1_u"], lo=0.0)

    noise_raw = _section(raw, "noise")
    _check_keys(noise_raw, ("sigma",), "noise")
    noise = {
        "sigma": _scalar_or_list(noise_raw, "sigma", "noise", DEFAULT_NOISE_SIGMA, M, lo=0.0)
    }

    scn_raw = _section(raw, "scenario")
    _check_keys(scn_raw, ("duration", "events", "noise_seed", "noise_scale"), "scenario")
    events_raw = scn_raw.get("events", defaults["scenario"]["events"])
    if not isinstance(events_raw, list):
        raise ConfigError("scenario.events must be a list of [time_s, speed_mps] pairs")
    events = []
    for i, ev in enumerate(events_raw):
        if (
            not isinstance(ev, (list, tuple))
            or len(ev) != 2
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in ev)
        ):
            raise ConfigError(f"scenario.events[{i}] must be a [time_s, speed_mps] pair")
        events.append([float(ev[0]), float(ev[1])])
    seed_val = scn_raw.get("noise_seed", 0)
    if isinstance(seed_val, bool) or not isinstance(seed_val, int):
        raise ConfigError(f"scenario.noise_seed must be an integer, got {seed_val!r}")
    if not 0 <= seed_val < 2**64:
        raise ConfigError("scenario.noise_seed must fit in an unsigned 64-bit integer")
    scenario = {
        "duration": _number(scn_raw, "duration", "scenario", DEFAULT_DURATION, lo=1e-9),
        "events": events,
        "noise_seed": seed_val,
        "noise_scale": _scalar_or_list(
            scn_raw, "noise_scale", "scenario", 1.0, M, lo=0.0
        ),
    }

    sol_raw = _section(raw, "solver")
    _check_keys(sol_raw, ("tol", "max_iter"), "solver")
    max_iter = sol_raw.get("max_iter", 10**6)
    if isinstance(max_iter, bool) or not isinstance(max_iter, int) or max_iter < 1:
        raise ConfigError(f"solver.max_iter must be a positive integer, got {max_iter!r}")
    solver = {
        "tol": _number(sol_raw, "tol", "solver", 1e-12, lo=0.0),
        "max_iter": max_iter,
    }

    fl_raw = _section(raw, "flags")
    _check_keys(fl_raw, defaults["flags"].keys(), "flags")
    theta_form = fl_raw.get("theta_form", "euler")
    if theta_form not in THETA_FORMS:
        raise ConfigError(f"flags.theta_form must be one of {list(THETA_FORMS)}, got {theta_form!r}")
    flags = {
        "integral_action": _boolean(fl_raw, "integral_action", "flags", False),
        "theta_form": theta_form,
        "alternate_tail_estimator": _boolean(fl_raw, "alternate_tail_estimator", "flags", False),
    }

    return {
        "schema": CONFIG_SCHEMA_VERSION,
        "vehicles": vehicles,
        "aero": aero,
        "operating_point": op,
        "weights": weights,
        "noise": noise,
        "scenario": scenario,
        "solver": solver,
        "flags": flags,
    }


def resolve_seed(cli_seed, cfg: dict) -> int:
    """--seed beats CHAINLQG_SEED beats scenario.noise_seed."""
    if cli_seed is not None:
        seed = int(cli_seed)
    else:
        env = os.environ.get(ENV_SEED)
        if env:
            try:
                seed = int(env)
            except ValueError as exc:
                raise ConfigError(f"{ENV_SEED} must be an integer, got {env!r}") from exc
        else:
            return cfg["scenario"]["noise_seed"]
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must fit in an unsigned 64-bit integer")
    return seed


def config_system(cfg: dict) -> ChainSystem:
    """Instantiate the platoon chain described by an effective config."""
    params = []
    for v in cfg["vehicles"]:
        overrides = {}
        if v["k_u"] is not None:
            overrides["k_u"] = v["k_u"]
        if v["k_d"] is not None:
            overrides["k_d"] = v["k_d"]
        params.append(
            VehicleParams.from_mass(
                v["mass"],
                max_engine_torque=v["max_engine_torque"],
                max_brake_torque=v["max_brake_torque"],
                **overrides,
            )
        )
    aero = AeroModel(
        kappa1=cfg["aero"]["kappa1"],
        kappa2=cfg["aero"]["kappa2"],
        valid_range=tuple(cfg["aero"]["valid_range"]),
    )
    op = OperatingPoint(
        v0=cfg["operating_point"]["v0"],
        tau=cfg["operating_point"]["tau"],
        Ts=cfg["operating_point"]["Ts"],
        d0=cfg["operating_point"]["d0"],
    )
    w = cfg["weights"]
    weights = CostWeights.uniform(
        len(params),
        w_tau=w["w_tau"],
        w_dv=w["w_dv"],
        w_d=w["w_d"],
        w_v=w["w_v"],
        w_u=w["w_u"],
        w1_v=w["w1_v"],
        w1_u=w["w1_u"],
    )
    return build_platoon(
        params,
        aero,
        op,
        weights=weights,
        noise_sigma=cfg["noise"]["sigma"],
        integral_action=cfg["flags"]["integral_action"],
        theta_form=cfg["flags"]["theta_form"],
    )


def config_scenario(cfg: dict) -> Scenario:
    scn = cfg["scenario"]
    return Scenario(
        duration=scn["duration"],
        events=tuple((t, v) for t, v in scn["events"]),
        noise_seed=scn["noise_seed"],
        noise_scale=scn["noise_scale"],
    )


def dump_config(cfg: dict, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _safe_label(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", label) or "controller"


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: dict, mode: str, out_path) -> int:
    sys_m = config_system(cfg)
    tol = cfg["solver"]["tol"]
    max_iter = cfg["solver"]["max_iter"]
    report = None
    if mode == "two":
        ctrl, report = synth_two_vehicle(sys_m, tol=tol, max_iter=max_iter)
    elif mode == "three":
        ctrl, report = synth_three_vehicle(
            sys_m,
            tol=tol,
            max_iter=max_iter,
            alternate_tail_estimator=cfg["flags"]["alternate_tail_estimator"],
        )
    elif mode == "centralized":
        ctrl, report = synth_centralized(sys_m, tol=tol, max_iter=max_iter)
    elif mode == "suboptimal":
        ctrl = synth_suboptimal_local(sys_m, tol=tol, max_iter=max_iter)
    else:
        raise ConfigError(f"unknown mode {mode!r}; choose from {MODES}")

    if out_path is None:
        out_path = f"controller_{mode}.json"
    doc = controller_to_dict(ctrl, report, label=mode)
    doc["effective_config"] = cfg
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(f"mode: {mode} ({sys_m.M} vehicles, state dim {sys_m.n})")
    if report is not None:
        for term, value in report.trace_terms:
            print(f"  {term} = {value:.9g}")
        print(f"analytical per-step cost: {report.analytical_cost:.9g}")
    else:
        print("no analytical cost report (baseline controller)")
    print(f"controller written to {out_path}")
    return 0


def cmd_simulate(cfg: dict, controller_paths, replications: int, out_dir, baseline) -> int:
    if replications < 1:
        raise ConfigError(f"--replications must be >= 1, got {replications}")
    sys_m = config_system(cfg)
    scn = config_scenario(cfg)
    tol = cfg["solver"]["tol"]
    max_iter = cfg["solver"]["max_iter"]

    arms = []
    if controller_paths:
        seen = set()
        for p in controller_paths:
            ctrl, _, label = load_controller(p)
            gain = ctrl.L1 if hasattr(ctrl, "L1") else ctrl.L
            if gain.shape[1] != sys_m.n:
                raise ModelError(
                    f"controller {p} expects state dim {gain.shape[1]}, "
                    f"but the configured platoon has {sys_m.n}"
                )
            label = _safe_label(label or Path(p).stem)
            while label in seen:
                label += "-b"
            seen.add(label)
            arms.append((label, ctrl))
    else:
        if sys_m.M == 2:
            ctrl, _ = synth_two_vehicle(sys_m, tol=tol, max_iter=max_iter)
            arms.append(("decentralized", ctrl))
        elif sys_m.M == 3:
            ctrl, _ = synth_three_vehicle(
                sys_m,
                tol=tol,
                max_iter=max_iter,
                alternate_tail_estimator=cfg["flags"]["alternate_tail_estimator"],
            )
            arms.append(("decentralized", ctrl))
        cen, _ = synth_centralized(sys_m, tol=tol, max_iter=max_iter)
        arms.append(("centralized", cen))
        arms.append(("suboptimal", synth_suboptimal_local(sys_m, tol=tol, max_iter=max_iter)))

    report = compare_controllers(
        sys_m, scn, arms, replications=replications, baseline=baseline
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config_effective.json")
    for label, ctrl in arms:
        trace = run_closed_loop(sys_m, ctrl, scn, replication=0)
        write_trace_csv(trace, sys_m, out / f"trace_{label}.csv")
    write_metrics_csv(report, out / "metrics.csv")

    print(
        f"scenario: {scn.duration:g} s, {len(scn.events)} speed events, "
        f"{replications} replication(s), seed {scn.noise_seed}"
    )
    print(format_metrics_table(report))
    print(f"outputs written to {out}/")
    return 0


def cmd_verify(cfg: dict, suite: str, out_path) -> int:
    seed = cfg["scenario"]["noise_seed"]
    tol = cfg["solver"]["tol"]
    max_iter = cfg["solver"]["max_iter"]
    names = SUITE_NAMES if suite == "all" else (suite,)
    payload = []
    all_ok = True
    for name in names:
        results = run_suite(name, seed=seed, tol=tol, max_iter=max_iter)
        print(format_results(name, results))
        payload.append(results_to_dict(name, results))
        all_ok = all_ok and all(r.passed for r in results)
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"suites": payload, "passed": all_ok}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"report written to {out_path}")
    print(f"verify: {'PASS' if all_ok else 'FAIL'}")
    return 0 if all_ok else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chainlqg",
        description="Decentralized LQG synthesis and simulation for vehicle chains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="synthesize a controller and write it to JSON")
    p_synth.add_argument("--config", default=None, help="config JSON path")
    p_synth.add_argument("--mode", choices=MODES, required=True)
    p_synth.add_argument("--out", default=None, help="controller JSON output path")
    p_synth.add_argument("--seed", type=int, default=None, help="noise seed override")

    p_sim = sub.add_parser("simulate", help="run the road-speed scenario and write CSVs")
    p_sim.add_argument(
        "controllers",
        nargs="*",
        help="controller JSON files; with none given, the decentralized, "
        "centralized and suboptimal controllers are synthesized in place",
    )
    p_sim.add_argument("--config", default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--replications", type=int, default=1)
    p_sim.add_argument("--out", default="out", help="output directory")
    p_sim.add_argument("--baseline", default=None, help="label differences are taken against")

    p_ver = sub.add_parser("verify", help="run the numerical property suites")
    p_ver.add_argument("--config", default=None)
    p_ver.add_argument("--seed", type=int, default=None)
    p_ver.add_argument("--suite", choices=(*SUITE_NAMES, "all"), default="all")
    p_ver.add_argument("--out", default=None, help="optional JSON report path")

    return parser


def run(argv=None) -> int:
    args = make_parser().parse_args(argv)
    cfg = validate_config(load_config(args.config))
    cfg["scenario"]["noise_seed"] = resolve_seed(args.seed, cfg)
    if args.command == "synth":
        return cmd_synth(cfg, args.mode, args.out)
    if args.command == "simulate":
        return cmd_simulate(cfg, args.controllers, args.replications, args.out, args.baseline)
    return cmd_verify(cfg, args.suite, args.out)


def entry(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return 2
    except AssumptionError as exc:
        print(f"assumption violated: {exc}", file=_sys.stderr)
        return 3
    except (ModelError, BlockIndexError) as exc:
        print(f"model error: {exc}", file=_sys.stderr)
        return 3
    except (
        RiccatiDivergenceError,
        SimulationDivergenceError,
        FloatingPointError,
        np.linalg.LinAlgError,
    ) as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=_sys.stderr)
        return 5


if __name__ == "__main__":
    raise SystemExit(entry())
