"""Discounted infinite-horizon SDDP on a single shared cut pool.

Every stage of the stationary model is the same problem, so one cut
collection approximates the unique fixed-point cost-to-go. Training
samples the forward-pass length from a geometric distribution whose mean
1/(1-gamma) matches the discounted weight of the future, then runs the
usual forward/backward sweep along the sampled path with objective
f + gamma * theta at every stage.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .model import HPOPInstance, Realization, make_state, stage_cost
from .rolling import RollRecord, SimulationResult
from .sddp import CutPool, SddpProblem, TrainConfig, TrainReport, _stalled

HORIZON_CAP_SCALE = 50.0  # sampled horizons truncated at 50/(1-gamma)


@dataclass(eq=False)
class StationaryModel:
    """A stationary instance with its discount factor and epigraph floor."""

    instance: HPOPInstance
    gamma: float
    floor: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        if not self.instance.inflow_process.stationary:
            raise ValueError("the stationary model requires a stationary inflow process")


def sample_horizon(gamma: float, rng: np.random.Generator) -> int:
    """Geometric draw with success probability 1-gamma: P(T=k) = (1-gamma) gamma^(k-1)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie strictly inside (0, 1), got {gamma}")
    u = 1.0 - rng.random()  # in (0, 1]
    draw = max(1, math.ceil(math.log(u) / math.log(gamma)))
    cap = math.ceil(HORIZON_CAP_SCALE / (1.0 - gamma))
    return min(draw, cap)


def _expected_first_stage_value(problem: SddpProblem, model: StationaryModel) -> float:
    """Current approximation of the expected cost-to-go at the initial storage."""
    inst = model.instance
    total = 0.0
    for xi in inst.inflow_process.realizations:
        state = make_state(inst, inst.initial_storage, xi)
        total += xi.probability * problem.solve_first_stage(state).objective
    return total


def train_stationary(model: StationaryModel, config: TrainConfig) -> tuple[CutPool, TrainReport]:
    """Train the shared pool; the tracked bound is the expected first-stage value."""
    inst = model.instance
    pool = CutPool.stationary(inst.state_dim, model.floor)
    problem = SddpProblem(inst, horizon=1, pool=pool, discount=model.gamma)
    rng = np.random.default_rng(config.rng_seed)
    start = time.perf_counter()
    lbs: list[float] = []
    fwd_costs: list[float] = []
    reason = "iterations"
    iterations = 0
    for i in range(config.max_iterations):
        if time.perf_counter() - start > config.time_limit_seconds:
            reason = "time"
            break
        for _ in range(config.forward_paths_per_iteration):
            horizon = sample_horizon(model.gamma, rng)
            first = make_state(inst, inst.initial_storage, inst.inflow_process.sample(rng))
            trajectory = problem.forward_pass(first, rng, horizon=horizon)
            fwd_costs.append(sum(v.cost for v in trajectory))
            problem.backward_pass(trajectory, iteration=i,
                                  violation_tol=config.cut_violation_tol)
        lbs.append(_expected_first_stage_value(problem, model))
        iterations = i + 1
        if _stalled(lbs, config):
            reason = "stall"
            break
    report = TrainReport(
        iterations=iterations,
        lower_bounds=np.asarray(lbs),
        wall_seconds=time.perf_counter() - start,
        reason=reason,
        forward_costs=np.asarray(fwd_costs),
    )
    return pool, report


def evaluate_stationary(
    model: StationaryModel, pool: CutPool, sample_path: list[Realization]
) -> SimulationResult:
    """Greedy single-stage rollout of the trained stationary policy.

    Each roll solves  min f + gamma * cost-to-go model  at the current
    state and accrues the undiscounted immediate cost; the reported zbar
    is the long-run average over the path.
    """
    inst = model.instance
    problem = SddpProblem(inst, horizon=1, pool=pool, discount=model.gamma)
    storage = inst.initial_storage
    records: list[RollRecord] = []
    cost_sum = 0.0
    start = time.perf_counter()
    for t, xi in enumerate(sample_path, start=1):
        roll_start = time.perf_counter()
        state = make_state(inst, storage, xi)
        sol = problem.solve_first_stage(state)
        cost = stage_cost(sol, problem.template, model.gamma)
        storage = sol.primal[problem.template.state_extract].copy()
        cost_sum += cost
        records.append(
            RollRecord(
                roll=t,
                tau=1,
                jbar=0,
                train_iterations=0,
                stage_cost=cost,
                cum_avg=cost_sum / t,
                wall_ms=(time.perf_counter() - roll_start) * 1e3,
            )
        )
    total_ms = (time.perf_counter() - start) * 1e3
    return SimulationResult.from_records(records, total_ms)
