"""Command-line front end: instances, training, fitting, simulation, bounds.

Every command writes delimited text tables plus a JSON manifest sidecar
(`<output>.manifest.json`) recording the command, flags, and seeds, so a
result file can be traced back to the invocation that produced it.
Given the same flags and seeds, re-running a command reproduces the
result tables byte for byte except for wall-clock columns.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, figures, horizon, model, rolling
from .model import SchemaError, build_hpop, load_instance, save_instance
from .rolling import EffortSchedule, PolicySpec, draw_sample_path, simulate
from .sddp import StageInfeasible, TrainConfig, load_pool, save_pool
from .stationary import StationaryModel, evaluate_stationary, train_stationary

GAMMA_GRID = (0.10, 0.20, 0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90, 0.95, 0.99)
DEFAULT_EPSILON = 1e-5  # inferred default, flagged as such in every bound table


def out_dir() -> str:
    return os.environ.get("SDDPRH_OUT", ".")


def resolve(path: str) -> str:
    if os.path.isabs(path) or os.path.dirname(path):
        return path
    return os.path.join(out_dir(), path)


def write_manifest(path: str, command: str, args: argparse.Namespace, outputs: list[str]):
    doc = {
        "tool": "sddprh",
        "version": __version__,
        "command": command,
        "arguments": {
            k: v for k, v in sorted(vars(args).items()) if k != "func" and v is not None
        },
        "outputs": [os.path.basename(o) for o in outputs],
    }
    manifest_path = path + ".manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(doc, fh, indent=2, default=str)
        fh.write("\n")
    return manifest_path


def load_manifest(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--max-iterations", type=int, default=200,
                   help="iteration cap per training run")
    p.add_argument("--time-limit", type=float, default=10_800.0,
                   help="wall-clock cap per training run, seconds")
    p.add_argument("--stall-window", type=int, default=500,
                   help="consecutive low-progress iterations before stopping")
    p.add_argument("--stall-tol", type=float, default=1e-4,
                   help="relative progress below which an iteration counts as stalled")
    p.add_argument("--cut-tol", type=float, default=1e-7,
                   help="relative improvement a cut must bring to enter the pool")


def train_config_from(args, seed: int) -> TrainConfig:
    return TrainConfig(
        max_iterations=args.max_iterations,
        time_limit_seconds=args.time_limit,
        stall_window=args.stall_window,
        stall_rel_tol=args.stall_tol,
        cut_violation_tol=args.cut_tol,
        rng_seed=seed,
    )


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    inst = build_hpop(
        num_plants=args.plants,
        demand=args.demand,
        num_realizations=args.realizations,
        inflow_scale=args.c0,
        strict=args.strict_presets,
    )
    path = resolve(args.out)
    save_instance(inst, path)
    write_manifest(path, "gen", args, [path])
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# fit


def _scan_one(payload):
    inst_doc, state_water, state_phi, cfg = payload
    inst = model.instance_from_dict(inst_doc)
    state = model.SystemState(np.asarray(state_water), state_phi)
    return horizon.stability_scan(inst, state, cfg)


def cmd_fit(args) -> int:
    inst = load_instance(args.instance)
    cfg = horizon.ScanConfig(
        sample_size=args.samples,
        tolerance=args.tolerance,
        stability_window=args.w,
        tau_max=args.tau_max,
        train_config=train_config_from(args, args.seed),
    )
    rng = np.random.default_rng(args.seed)
    states = horizon.draw_scan_states(inst, cfg.sample_size, rng)
    import time as _time

    samples = []
    if args.jobs > 1:
        doc = model.instance_to_dict(inst)
        payloads = [(doc, s.water.tolist(), s.energy_potential, cfg) for s in states]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            stars = list(pool.map(_scan_one, payloads))
        for n, (state, tau_star) in enumerate(zip(states, stars)):
            samples.append(horizon.ScanSample(n, state.energy_potential, tau_star, 0.0))
    else:
        for n, state in enumerate(states):
            t0 = _time.perf_counter()
            tau_star = horizon.stability_scan(inst, state, cfg)
            samples.append(
                horizon.ScanSample(n, state.energy_potential, tau_star,
                                   (_time.perf_counter() - t0) * 1e3)
            )

    hmap = horizon.fit_horizon_map([(s.phi1, s.tau_star) for s in samples],
                                   max_pieces=args.max_pieces)
    scan_path = resolve(args.out_scan)
    map_path = resolve(args.out_map)
    horizon.save_scan(samples, scan_path)
    horizon.save_horizon_map(hmap, map_path)
    outputs = [scan_path, map_path]
    if args.plot:
        outputs.append(figures.plot_horizon_map(hmap, map_path + ".png", samples))
    write_manifest(map_path, "fit", args, outputs)
    print(f"scanned {len(samples)} states; weighted R^2 = {hmap.r2_avg:.4f}")
    print(f"wrote {scan_path} and {map_path}")
    return 0


# ---------------------------------------------------------------------------
# simulate


def parse_effort(text: str) -> EffortSchedule:
    parts = [int(x) for x in text.split(",")]
    if len(parts) != 4:
        raise ValueError("--effort expects four integers: initial,second,covered,off")
    return EffortSchedule(*parts)


def cmd_simulate(args) -> int:
    inst = load_instance(args.instance)
    rng = np.random.default_rng(args.seed)
    path_realizations = draw_sample_path(inst.inflow_process, args.length, rng)
    out_path = resolve(args.out)

    if args.policy == "stationary":
        if args.gamma is None or args.pool is None:
            raise ValueError("stationary policy needs --gamma and --pool")
        pool = load_pool(args.pool)
        result = evaluate_stationary(StationaryModel(inst, args.gamma), pool, path_realizations)
    else:
        if args.policy == "static":
            if args.tau is None:
                raise ValueError("static policy needs --tau")
            policy = PolicySpec.static(args.tau)
        else:
            if args.map is None:
                raise ValueError("dynamic policy needs --map")
            policy = PolicySpec.dynamic(horizon.load_horizon_map(args.map), args.tau_max)
        schedule = parse_effort(args.effort)
        schedule.stall_streak_limit = args.stall_streak_limit
        pools = {}
        if args.pool is not None and args.policy == "static":
            pools[args.tau] = load_pool(args.pool)
        result = simulate(inst, policy, path_realizations,
                          train_config=train_config_from(args, args.train_seed),
                          schedule=schedule, pools=pools)

    extra = []
    if args.baseline:
        ref = rolling.load_result(args.baseline)
        gap = (result.zbar - ref.zbar) / ref.zbar
        extra = [("baseline_zbar", f"{ref.zbar:.12g}"), ("gap", f"{gap:.12g}")]
    rolling.save_result(result, out_path, extra_summary=extra)
    outputs = [out_path]
    if args.plot:
        outputs.append(figures.plot_simulation(
            result.records, result.zbar, out_path + ".png",
            title=f"{args.policy} policy, T={args.length}"))
    write_manifest(out_path, "simulate", args, outputs)
    print(f"zbar = {result.zbar:.6g} over {args.length} rolls; wrote {out_path}")
    if extra:
        print(f"gap vs baseline: {100 * gap:.4f}%")
    return 0


# ---------------------------------------------------------------------------
# bound


def cmd_bound(args) -> int:
    if args.kappa is None and not args.compute_kappa:
        raise ValueError("provide --kappa or --compute-kappa")
    computed = None
    if args.compute_kappa:
        if args.instance is None:
            raise ValueError("--compute-kappa needs --instance")
        computed = horizon.compute_kappa(load_instance(args.instance))
    kappa = args.kappa if args.kappa is not None else computed
    if kappa is None or kappa <= 0:
        raise ValueError("the per-stage cost bound must be positive")

    gammas = [float(g) for g in args.gamma.split(",")] if args.gamma else list(GAMMA_GRID)
    epsilon = args.epsilon if args.epsilon is not None else DEFAULT_EPSILON
    rows = []
    for g in gammas:
        tau = horizon.epsilon_sufficient_horizon(kappa, g, epsilon)
        tau = max(tau, 0.0)
        rows.append(
            (
                g,
                tau,
                horizon.suboptimality_bound(np.ceil(tau), g, kappa, "general"),
                horizon.suboptimality_bound(np.ceil(tau), g, kappa, "nonpositive"),
            )
        )

    out_path = resolve(args.out)
    with open(out_path, "w") as fh:
        source = "supplied" if args.kappa is not None else "computed"
        fh.write(f"# kappa\t{kappa:.12g}\t({source})\n")
        if computed is not None and args.kappa is not None:
            fh.write(f"# kappa_computed\t{computed:.12g}\t(reported alongside, not substituted)\n")
        eps_note = "supplied" if args.epsilon is not None else "inferred default, not from source data"
        fh.write(f"# epsilon\t{epsilon:.12g}\t({eps_note})\n")
        fh.write("gamma\ttau_eps\tgap_general_at_ceil\tgap_nonpositive_at_ceil\n")
        for g, tau, gap2, gap1 in rows:
            fh.write(f"{g:.12g}\t{tau:.12g}\t{gap2:.12g}\t{gap1:.12g}\n")
    outputs = [out_path]
    if args.plot:
        outputs.append(figures.plot_bound_curve(
            [r[0] for r in rows], [r[1] for r in rows], out_path + ".png",
            kappa=kappa, epsilon=epsilon))
    write_manifest(out_path, "bound", args, outputs)
    for g, tau, _, _ in rows:
        print(f"gamma={g:g}: sufficient horizon {tau:.2f}")
    print(f"wrote {out_path}")
    return 0


# ---------------------------------------------------------------------------
# train-stationary


def cmd_train_stationary(args) -> int:
    inst = load_instance(args.instance)
    smodel = StationaryModel(inst, args.gamma)
    pool, report = train_stationary(smodel, train_config_from(args, args.seed))
    pool_path = resolve(args.out_pool)
    save_pool(pool, pool_path)
    outputs = [pool_path]
    if args.plot:
        outputs.append(figures.plot_training(
            report, pool_path + ".png", title=f"stationary training, gamma={args.gamma:g}"))
    write_manifest(pool_path, "train-stationary", args, outputs)
    mean, std = report.upper_bound_stats()
    print(f"{report.iterations} iterations ({report.reason}); "
          f"bound {report.lower_bounds[-1]:.6g}; "
          f"forward cost {mean:.6g} +- {std:.6g}")
    print(f"wrote {pool_path}")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sddprh",
        description="Multistage stochastic LP toolkit: SDDP training and "
                    "rolling-horizon policy evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"sddprh {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a benchmark instance file")
    g.add_argument("--plants", type=int, default=1, help="number of hydro plants (1, 3, or 6)")
    g.add_argument("--demand", type=float, default=1000.0)
    g.add_argument("--realizations", type=int, default=5, help="inflow outcomes (5 or 12)")
    g.add_argument("--c0", type=float, default=1.0, help="inflow-to-storage scale factor")
    g.add_argument("--strict-presets", action="store_true",
                   help="reject demand values outside the benchmark grid")
    g.add_argument("--out", default="instance.json")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="learn a state-to-horizon map offline")
    f.add_argument("--instance", required=True)
    f.add_argument("--samples", type=int, default=50, help="number of sampled states")
    f.add_argument("--w", type=int, default=10, choices=None,
                   help="stability window (how far back decisions are compared)")
    f.add_argument("--tau-max", type=int, default=16)
    f.add_argument("--tolerance", type=float, default=1e-5)
    f.add_argument("--max-pieces", type=int, default=3)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--jobs", type=int, default=1)
    f.add_argument("--out-map", default="horizon-map.json")
    f.add_argument("--out-scan", default="scan.tsv")
    f.add_argument("--plot", action="store_true")
    add_train_flags(f)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="evaluate a policy along a sample path")
    s.add_argument("--instance", required=True)
    s.add_argument("--policy", choices=("static", "dynamic", "stationary"), required=True)
    s.add_argument("--tau", type=int, help="forecast horizon for the static policy")
    s.add_argument("--map", help="horizon map file for the dynamic policy")
    s.add_argument("--tau-max", type=int, default=16)
    s.add_argument("--gamma", type=float, help="discount factor for the stationary policy")
    s.add_argument("--pool", help="cut pool snapshot to start from")
    s.add_argument("-T", "--length", type=int, default=200, help="rolls in the sample path")
    s.add_argument("--seed", type=int, default=0, help="sample path seed")
    s.add_argument("--train-seed", type=int, default=0, help="online training seed")
    s.add_argument("--effort", default="500,50,10,1",
                   help="stall windows: first roll, later rolls, full coverage, off")
    s.add_argument("--stall-streak-limit", type=int, default=50)
    s.add_argument("--baseline", help="result file to report the relative gap against")
    s.add_argument("--out", default="result.tsv")
    s.add_argument("--plot", action="store_true")
    add_train_flags(s)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bound", help="sufficient-horizon table for discounted models")
    b.add_argument("--kappa", type=float, help="per-stage cost bound")
    b.add_argument("--compute-kappa", action="store_true",
                   help="derive the bound from the zero-state stage problem")
    b.add_argument("--instance")
    b.add_argument("--gamma", help="comma-separated discount factors (default: standard grid)")
    b.add_argument("--epsilon", type=float, help="optimality tolerance (default inferred 1e-5)")
    b.add_argument("--out", default="bounds.tsv")
    b.add_argument("--plot", action="store_true")
    b.set_defaults(func=cmd_bound)

    t = sub.add_parser("train-stationary", help="train a discounted stationary policy")
    t.add_argument("--instance", required=True)
    t.add_argument("--gamma", type=float, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out-pool", default="pool.tsv")
    t.add_argument("--plot", action="store_true")
    add_train_flags(t)
    t.set_defaults(func=cmd_train_stationary)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StageInfeasible, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
