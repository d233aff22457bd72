"""Rolling-horizon policy simulation with cut reuse across rolls.

Each roll observes the current inflow, picks a forecast horizon (fixed,
or predicted from the system state), retrains the cached multistage
problem for that horizon from the roll's state, and implements only the
first-stage decision. Problems are keyed by horizon and keep their cut
pools between rolls; the online training effort is wound down over the
run by shrinking the stall window.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .model import HPOPInstance, Realization, make_state, stage_cost
from .sddp import SddpProblem, TrainConfig


@dataclass(eq=False)
class PolicySpec:
    """Which policy drives the simulator: static(tau), dynamic(map), stationary(gamma)."""

    kind: str
    tau: int | None = None
    horizon_map: object | None = None
    tau_max: int | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.kind == "static":
            if self.tau is None or self.tau < 1:
                raise ValueError("static policy needs tau >= 1")
        elif self.kind == "dynamic":
            if self.horizon_map is None:
                raise ValueError("dynamic policy needs a horizon map")
            if self.tau_max is None or self.tau_max < 1:
                raise ValueError("dynamic policy needs tau_max >= 1")
        elif self.kind == "stationary":
            if self.gamma is None or not 0.0 < self.gamma < 1.0:
                raise ValueError("stationary policy needs gamma in (0, 1)")
        else:
            raise ValueError(f"unknown policy kind {self.kind!r}")

    @classmethod
    def static(cls, tau: int) -> "PolicySpec":
        return cls("static", tau=tau)

    @classmethod
    def dynamic(cls, horizon_map, tau_max: int) -> "PolicySpec":
        return cls("dynamic", horizon_map=horizon_map, tau_max=tau_max)

    @classmethod
    def stationary(cls, gamma: float) -> "PolicySpec":
        return cls("stationary", gamma=gamma)


@dataclass
class RollRecord:
    """One row of the per-roll result table."""

    roll: int
    tau: int
    jbar: int
    train_iterations: int
    stage_cost: float
    cum_avg: float
    wall_ms: float


@dataclass
class SimulationResult:
    records: list[RollRecord]
    zbar: float
    total_wall_ms: float
    cost_mean: float
    cost_std: float

    @classmethod
    def from_records(cls, records: list[RollRecord], total_wall_ms: float) -> "SimulationResult":
        costs = [r.stage_cost for r in records]
        zbar = sum(costs) / len(costs)
        arr = np.asarray(costs)
        return cls(records, zbar, total_wall_ms, float(arr.mean()), float(arr.std()))


@dataclass
class EffortSchedule:
    """Stall-window phases for online retraining, largest to smallest."""

    initial: int = 500
    after_first_roll: int = 50
    all_seen: int = 10
    training_off: int = 1
    stall_streak_limit: int = 50

    def __post_init__(self):
        phases = (self.initial, self.after_first_roll, self.all_seen, self.training_off)
        if any(p < 1 for p in phases):
            raise ValueError("all stall-window phases must be >= 1")
        if list(phases) != sorted(phases, reverse=True):
            raise ValueError("phases must be nonincreasing")


def next_effort(schedule: EffortSchedule, roll_index: int, seen_all: bool,
                stall_latched: bool) -> int:
    """Stall window for this roll under the wind-down schedule."""
    if roll_index <= 1:
        return schedule.initial
    if stall_latched:
        return schedule.training_off
    if seen_all:
        return schedule.all_seen
    return schedule.after_first_roll


def problem_cache_lookup(cache: dict, inst: HPOPInstance, tau: int,
                         floor: float = 0.0, pool=None) -> SddpProblem:
    """Fetch (or create and register) the multistage problem for a horizon."""
    problem = cache.get(tau)
    if problem is None:
        problem = SddpProblem(inst, tau, floor=floor, pool=pool)
        cache[tau] = problem
    return problem


def draw_sample_path(process, length: int, rng: np.random.Generator) -> list[Realization]:
    """An out-of-sample inflow path of the given length."""
    return [process.sample(rng) for _ in range(length)]


def dynamic_horizon(policy: PolicySpec, state) -> int:
    """Predicted horizon for the state, rounded up and clamped to [1, tau_max]."""
    raw = policy.horizon_map.predict(state)
    return int(min(max(math.ceil(raw), 1), policy.tau_max))


def simulate(
    inst: HPOPInstance,
    policy: PolicySpec,
    sample_path: list[Realization],
    train_config: TrainConfig | None = None,
    schedule: EffortSchedule | None = None,
    floor: float = 0.0,
    pools: dict | None = None,
) -> SimulationResult:
    """Run the rolling-horizon procedure along one inflow path.

    Static and dynamic policies only; stationary policies are evaluated
    by their own single-stage loop. Cut pools persist across rolls, one
    problem per distinct horizon; ``pools`` may seed specific horizons
    with pre-trained pools. Set train_config.max_iterations = 0 to
    evaluate pre-trained pools without any online training.
    """
    if policy.kind not in ("static", "dynamic"):
        raise ValueError("simulate handles static and dynamic policies")
    if train_config is None:
        train_config = TrainConfig()
    if schedule is None:
        schedule = EffortSchedule()
    if pools is None:
        pools = {}
    rng = np.random.default_rng(train_config.rng_seed)

    cache: dict[int, SddpProblem] = {}
    storage = inst.initial_storage
    seen: set[int] = set()
    num_realizations = len(inst.inflow_process)
    stall_streak = 0
    latched = False
    records: list[RollRecord] = []
    cost_sum = 0.0
    start = time.perf_counter()

    for t, xi in enumerate(sample_path, start=1):
        roll_start = time.perf_counter()
        seen.add(xi.id)
        state = make_state(inst, storage, xi)
        tau_t = policy.tau if policy.kind == "static" else dynamic_horizon(policy, state)
        problem = problem_cache_lookup(cache, inst, tau_t, floor, pool=pools.get(tau_t))
        jbar = next_effort(schedule, t, len(seen) >= num_realizations, latched)
        if train_config.max_iterations > 0:
            report = problem.train(
                train_config.replace(stall_window=jbar), first_state=state, rng=rng
            )
            iters = report.iterations
            if not latched and jbar == schedule.all_seen:
                if report.reason == "stall" and iters == jbar + 1:
                    stall_streak += 1
                    if stall_streak > schedule.stall_streak_limit:
                        latched = True
                else:
                    stall_streak = 0
        else:
            iters = 0
        sol = problem.solve_first_stage(state)
        cost = stage_cost(sol, problem.template, problem.discount)
        storage = sol.primal[problem.template.state_extract].copy()
        cost_sum += cost
        records.append(
            RollRecord(
                roll=t,
                tau=tau_t,
                jbar=jbar,
                train_iterations=iters,
                stage_cost=cost,
                cum_avg=cost_sum / t,
                wall_ms=(time.perf_counter() - roll_start) * 1e3,
            )
        )
    total_ms = (time.perf_counter() - start) * 1e3
    return SimulationResult.from_records(records, total_ms)


RESULT_COLUMNS = ("roll", "tau", "jbar", "train_iters", "stage_cost", "cum_avg", "wall_ms")


def save_result(result: SimulationResult, path, extra_summary=()) -> None:
    """One row per roll, tab-delimited, with summary footer comments.

    Wall-clock fields live in the last column and the footer only; all
    other content is deterministic for a fixed seed.
    """
    with open(path, "w") as fh:
        fh.write("\t".join(RESULT_COLUMNS) + "\n")
        for r in result.records:
            fh.write(
                f"{r.roll}\t{r.tau}\t{r.jbar}\t{r.train_iterations}\t"
                f"{r.stage_cost:.12g}\t{r.cum_avg:.12g}\t{r.wall_ms:.3f}\n"
            )
        fh.write(f"# zbar\t{result.zbar:.12g}\n")
        fh.write(f"# cost_mean\t{result.cost_mean:.12g}\n")
        fh.write(f"# cost_std\t{result.cost_std:.12g}\n")
        for key, value in extra_summary:
            fh.write(f"# {key}\t{value}\n")
        fh.write(f"# total_wall_ms\t{result.total_wall_ms:.3f}\n")


def load_result(path) -> SimulationResult:
    records = []
    summary = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("roll\t"):
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("\t")
                summary[key] = value
                continue
            f = line.split("\t")
            records.append(
                RollRecord(int(f[0]), int(f[1]), int(f[2]), int(f[3]),
                           float(f[4]), float(f[5]), float(f[6]))
            )
    if not records:
        raise ValueError(f"{path}: no roll records found")
    result = SimulationResult.from_records(records, float(summary.get("total_wall_ms", "nan")))
    stored = summary.get("zbar")
    if stored is not None and abs(result.zbar - float(stored)) > 1e-6 * max(1.0, abs(result.zbar)):
        raise ValueError(f"{path}: stored zbar disagrees with the roll records")
    return result
