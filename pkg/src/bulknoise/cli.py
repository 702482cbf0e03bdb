"""Command-line experiment driver.

Usage::

    bulknoise <command> [--config FILE | --preset NAME] [--seed N] [--out DIR]
    bulknoise run --config FILE          # command taken from the file
    bulknoise presets                    # list shipped presets

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import sys

import numpy as np

from . import __version__
from .chain import ChainParams, Model
from .config import COMMANDS, ConfigError, load, load_preset, preset_names, validate

OUTPUT_ENV = "BULKNOISE_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class NumericalFailure(RuntimeError):
    pass


def _numeric_errors():
    from .dynamics import SimulationError
    from .flucthydro import SPDEInstabilityError
    from .hydro import HydroError
    from .moments import SingularSystemError
    return (SimulationError, SPDEInstabilityError, HydroError, SingularSystemError,
            np.linalg.LinAlgError, FloatingPointError, NumericalFailure)


# ------------------------------------------------------------------ output helpers


def header(config: dict) -> str:
    return (f"bulknoise {__version__}\n"
            f"config: {json.dumps(config, sort_keys=True, separators=(',', ':'))}")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, config, columns, rows):
    buf = io.StringIO()
    for line in header(config).splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    with open(path, "w") as fh:
        fh.write(buf.getvalue())
    return path


class Outputs:
    def __init__(self, config):
        out = config.get("output", {})
        self.dir = out.get("dir") or os.environ.get(OUTPUT_ENV) or "."
        self.prefix = out.get("prefix", config["command"])
        os.makedirs(self.dir, exist_ok=True)
        self.written = []

    def path(self, name):
        p = os.path.join(self.dir, f"{self.prefix}_{name}.csv")
        self.written.append(p)
        return p


# ------------------------------------------------------------------ config plumbing


def chain_params(config) -> ChainParams:
    c = dict(config.get("chain", {}))
    if "n_sites" not in c:
        raise ConfigError("chain/n_sites is required for this command")
    if "model" in c:
        c["model"] = Model(c["model"])
    return ChainParams(**c)


def sim_config(config):
    from .dynamics import SimConfig
    s = {k: v for k, v in config.get("sim", {}).items() if k not in ("n_batches", "backend")}
    return SimConfig(**s)


HYDRO_DEFAULTS = dict(gamma=1.0, temp_left=1.0, temp_right=8.0, mesh=64, dt_macro=1e-3, t_final=1.0,
                      initial="cosine", amplitude=0.5)
FLUCT_DEFAULTS = dict(gamma=1.0, temp_left=1.0, temp_right=8.0, mesh=64, dt=None, t_final=10.0,
                      t_burn=None, replicas=16, seed=0, simulate=True, n_batches=32)


def _resolved(config):
    """Fill defaults so the header records every parameter actually used."""
    cfg = copy.deepcopy(config)
    if cfg["command"] == "hydro":
        cfg["hydro"] = {**HYDRO_DEFAULTS, **cfg.get("hydro", {})}
    if cfg["command"] == "flucthydro":
        cfg["flucthydro"] = {**FLUCT_DEFAULTS, **cfg.get("flucthydro", {})}
    if "chain" in cfg:
        p = chain_params(cfg)
        cfg["chain"] = dict(n_sites=p.n_sites, pinning=p.pinning, flip_rate=p.flip_rate,
                            bath_coupling=p.bath_coupling, temp_left=p.temp_left,
                            temp_right=p.temp_right, model=p.model.value, flip_at_baths=p.flip_at_baths)
    if cfg["command"] in ("simulate",) or (cfg["command"] == "compare" and cfg.get("compare", {}).get("monte_carlo")):
        from dataclasses import asdict
        sim = sim_config(cfg).resolve(chain_params(cfg))
        extra = {k: v for k, v in cfg.get("sim", {}).items() if k in ("n_batches", "backend")}
        cfg["sim"] = {**asdict(sim), **extra}
    return cfg


# ------------------------------------------------------------------ commands


def cmd_simulate(config, out: Outputs):
    from .dynamics import run
    from .stats import block_profile_estimate, estimate_s
    params = chain_params(config)
    sim = config.get("sim", {})
    stats = run(params, sim_config(config), backend=sim.get("backend"))
    n = params.n_sites
    write_table(out.path("profile"), config, ["site", "temperature", "energy"],
                [(j + 1, stats.mean_p_sq_profile[j], stats.mean_energy_profile[j]) for j in range(n)])
    s = estimate_s(stats.h_samples, n, sim.get("n_batches", 32))
    jm, je = block_profile_estimate(stats.block_current[..., 1:n])
    rows = [("s_N", s.value, s.std_error, s.n_batches, "; ".join(s.warnings)),
            ("mean_current", float(jm.mean()), float(np.sqrt(np.sum(je**2)) / je.size), "", ""),
            ("flip_count", stats.flip_count, "", "", "")]
    write_table(out.path("summary"), config, ["quantity", "value", "std_error", "n_batches", "warnings"], rows)
    return {"s_N": s.value, "s_N_err": s.std_error}


def cmd_covariance(config, out: Outputs):
    from .moments import spectral_gap, stationary_covariance, steady_current_and_s
    params = chain_params(config)
    opts = config.get("covariance", {})
    cov = stationary_covariance(params, method=opts.get("method", "auto"))
    current, s_gauss = steady_current_and_s(params, cov)
    equilibrium = params.temp_left == params.temp_right
    if opts.get("write_matrix", True):
        cov.to_csv(out.path("matrix"), header(config))
    temps = cov.temperatures()
    rows = [("equilibrium", equilibrium), ("current", current),
            ("zero_current", bool(abs(current) < 1e-10)),
            ("s_gaussian", s_gauss), ("min_eigenvalue", cov.min_eigenvalue()),
            ("temperature_first", temps[0]), ("temperature_last", temps[-1])]
    write_table(out.path("report"), config, ["quantity", "value"], rows)
    sizes = opts.get("gap_sizes")
    if sizes:
        gaps = [(n, spectral_gap(params.with_(n_sites=n))) for n in sizes]
        ln = np.log([g[0] for g in gaps])
        lg = np.log([g[1] for g in gaps])
        slope = float(np.polyfit(ln, lg, 1)[0]) if len(gaps) > 1 else float("nan")
        write_table(out.path("gaps"), config, ["n_sites", "gap"], gaps + [("fit_exponent", slope)])
    return {"equilibrium": equilibrium, "current": current}


def cmd_selfconsistent(config, out: Outputs):
    from .moments import self_consistency_residual, self_consistent_profile
    params = chain_params(config).with_(model=Model.SELF_CONSISTENT)
    prof = self_consistent_profile(params)
    res = self_consistency_residual(params, prof)
    write_table(out.path("profile"), config, ["site", "temperature"],
                [(j + 1, t) for j, t in enumerate(prof)])
    write_table(out.path("summary"), config, ["quantity", "value"], [("residual", res)])
    return {"residual": res}


def cmd_hydro(config, out: Outputs):
    from .hydro import HydroState, hydro_evolve, snapshots_to_csv, stationary_state
    h = config["hydro"]
    base = stationary_state(h["mesh"], h["gamma"], h["temp_left"], h["temp_right"])
    x = base.x
    if h["initial"] == "cosine":
        u = h["amplitude"] * np.cos(np.pi * x)
    elif h["initial"] == "bump":
        u = h["amplitude"] * (np.exp(-50 * (x - 0.5) ** 2) - np.mean(np.exp(-50 * (x - 0.5) ** 2)))
    else:
        u = np.zeros_like(x)
    state = HydroState(u, base.eps + 0.5 * u**2, 0.0, h["gamma"], h["temp_left"], h["temp_right"])
    traj = hydro_evolve(state, h["t_final"], h["dt_macro"], h.get("sample_every"))
    snapshots_to_csv(traj, out.path("snapshots"), header(config))
    last = traj[-1]
    dist = float(max(np.abs(last.u).max(), np.abs(last.eps - base.eps).max()))
    write_table(out.path("summary"), config, ["quantity", "value"],
                [("t_final", last.time), ("distance_to_stationary", dist)])
    return {"distance": dist}


def cmd_flucthydro(config, out: Outputs):
    from .flucthydro import ness_field_covariance, s_infinity, spde_simulate
    f = config["flucthydro"]
    tests = {"1": 1.0, "sin": lambda x: np.sin(np.pi * x)}
    rows = [("s_inf", "", s_infinity(f["temp_left"], f["temp_right"]), "")]
    for name, fn in tests.items():
        c = ness_field_covariance(fn, fn, f["temp_left"], f["temp_right"])
        rows += [("r_variance_exact", name, c.r_variance, ""), ("y_variance_exact", name, c.y_variance, "")]
    result = {}
    if f["simulate"]:
        res = spde_simulate(f["temp_left"], f["temp_right"], f["gamma"], f["mesh"], f["dt"], f["t_final"],
                            f["seed"], f["replicas"], tests, f["t_burn"], n_batches=f["n_batches"])
        for name, r, y, c in zip(res.test_names, res.r_variance, res.y_variance, res.cross):
            rows += [("r_variance_spde", name, r.value, r.std_error),
                     ("y_variance_spde", name, y.value, y.std_error),
                     ("cross_spde", name, c.value, c.std_error)]
        result["spde"] = res
    write_table(out.path("variances"), config, ["quantity", "test_function", "value", "std_error"], rows)
    return result


def cmd_compare(config, out: Outputs):
    from .flucthydro import s_infinity, s_infinity_from_fields
    from .gibbs import linear_profile, lte_fluctuation_prediction
    from .moments import self_consistent_profile, stationary_covariance, steady_current_and_s
    params = chain_params(config)
    opts = config.get("compare", {})
    res_n = opts.get("lte_resolution", 400)
    tl, tr = params.temp_left, params.temp_right
    lte = lte_fluctuation_prediction(linear_profile(tl, tr, res_n), params.pinning)
    rows = [("lte", lte, ""), ("s_inf", s_infinity(tl, tr), ""),
            ("s_inf_field_route", s_infinity_from_fields(tl, tr), "")]
    sc = params.with_(model=Model.SELF_CONSISTENT)
    prof = self_consistent_profile(sc)
    if params.model is Model.VELOCITY_FLIP:
        cov = stationary_covariance(params)
    else:
        cov = stationary_covariance(sc, prof)
    current, s_gauss = steady_current_and_s(params, cov)
    temps = cov.temperatures()
    rows += [("exact_current", current, ""), ("exact_s_gaussian", s_gauss, ""),
             ("lte_at_exact_profile", lte_fluctuation_prediction(temps, params.pinning), ""),
             ("temperature_first", temps[0], ""), ("temperature_last", temps[-1], "")]
    report = {"lte": lte, "s_inf": s_infinity(tl, tr)}
    if opts.get("monte_carlo"):
        from .dynamics import run
        from .stats import estimate_s
        sim = config.get("sim", {})
        stats = run(params, sim_config(config), backend=sim.get("backend"))
        s = estimate_s(stats.h_samples, params.n_sites, sim.get("n_batches", 32))
        rows.append(("monte_carlo_s_N", s.value, s.std_error))
        report["monte_carlo_s_N"] = s.value
    write_table(out.path("report"), config, ["quantity", "value", "std_error"], rows)
    return report


HANDLERS = {"simulate": cmd_simulate, "covariance": cmd_covariance, "selfconsistent": cmd_selfconsistent,
            "hydro": cmd_hydro, "flucthydro": cmd_flucthydro, "compare": cmd_compare}


def run_experiment(config: dict, out_dir: str | None = None):
    """Validate, resolve and execute a configuration; returns ``(result, files)``."""
    validate(config)
    config = _resolved(config)
    if out_dir is not None:
        config.setdefault("output", {})["dir"] = out_dir
    out = Outputs(config)
    result = HANDLERS[config["command"]](config, out)
    return result, out.written


# ------------------------------------------------------------------ entry point


def build_parser():
    ap = argparse.ArgumentParser(prog="bulknoise", description="Harmonic chains with bulk noise.")
    ap.add_argument("--version", action="version", version=f"bulknoise {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS + ("run",):
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=(name == "run"))
        src.add_argument("--config", help="JSON configuration file")
        if name != "run":
            src.add_argument("--preset", help="name of a shipped preset")
        p.add_argument("--seed", type=int, help="overrides sim.seed and flucthydro.seed")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
    sub.add_parser("presets")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "presets":
        print("\n".join(preset_names()))
        return EXIT_OK
    try:
        if args.config:
            config = load(args.config)
        elif getattr(args, "preset", None):
            config = load_preset(args.preset)
        else:
            config = {"command": args.command}
        if args.command != "run":
            if config["command"] != args.command:
                raise ConfigError(f"configuration is for {config['command']!r}, not {args.command!r}")
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            if config["command"] in ("simulate", "compare"):
                config.setdefault("sim", {})["seed"] = args.seed
            elif config["command"] == "flucthydro":
                config.setdefault("flucthydro", {})["seed"] = args.seed
        result, files = run_experiment(config, args.out)
    except _numeric_errors() as exc:
        print(f"bulknoise: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"bulknoise: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
