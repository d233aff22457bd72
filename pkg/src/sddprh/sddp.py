"""Finite-horizon SDDP: sampled forward passes, dual-based backward cuts.

The expected cost-to-go of every stage is kept as an outer cutting-plane
model: a floor value plus affine minorants beta'x + alpha collected from
probability-weighted equality-row duals. Training alternates a forward
simulation along one sampled inflow path with a backward sweep that adds
one aggregated cut per visited stage (when violated), and tracks the
first-stage optimum as a monotone lower bound.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import model
from .model import (
    StageTemplate,
    SystemState,
    build_template,
    initial_state,
    instantiate_stage,
    stage_rhs,
)
from .simplex import BasisState, LPSolution, solve

CUT_VIOLATION_TOL = 1e-7
POOL_FORMAT = 1


class StageInfeasible(RuntimeError):
    """A stage subproblem has no feasible point (broken recourse) or no finite optimum."""

    def __init__(self, stage: int, status: str):
        super().__init__(f"stage {stage} subproblem is {status}")
        self.stage = stage
        self.status = status


@dataclass(eq=False)
class Cut:
    """Affine minorant of an expected cost-to-go function."""

    beta: np.ndarray
    alpha: float
    birth_iteration: int = 0

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)

    def value(self, x: np.ndarray) -> float:
        return float(self.beta @ x + self.alpha)


class CutPool:
    """Cut collections per stage (2..T), or one shared collection.

    ``cuts_for(t)`` returns the list backing the cost-to-go of stage t;
    indices beyond the horizon yield the permanently empty terminal list,
    so the last stage's epigraph stays pinned at the floor.
    """

    def __init__(self, horizon: int, state_dim: int, floor: float = 0.0, shared: bool = False):
        self.horizon = horizon
        self.state_dim = state_dim
        self.floor = floor
        self.shared = shared
        n_lists = 1 if shared else max(horizon - 1, 0)
        self._stages: list[list[Cut]] = [[] for _ in range(n_lists)]
        self._terminal: list[Cut] = []
        self._stacked: dict[int, tuple[int, np.ndarray, np.ndarray]] = {}

    @classmethod
    def finite(cls, horizon: int, state_dim: int, floor: float = 0.0) -> "CutPool":
        return cls(horizon, state_dim, floor, shared=False)

    @classmethod
    def stationary(cls, state_dim: int, floor: float = 0.0) -> "CutPool":
        return cls(horizon=0, state_dim=state_dim, floor=floor, shared=True)

    def cuts_for(self, stage: int) -> list[Cut]:
        if self.shared:
            return self._stages[0]
        if 2 <= stage <= self.horizon:
            return self._stages[stage - 2]
        return self._terminal

    def stacked(self, stage: int) -> tuple[np.ndarray, np.ndarray]:
        """Cut coefficients of one stage as (betas, alphas) arrays (cached)."""
        cuts = self.cuts_for(stage)
        key = 0 if self.shared else stage
        cached = self._stacked.get(key)
        if cached is not None and cached[0] == len(cuts):
            return cached[1], cached[2]
        betas = np.array([c.beta for c in cuts], dtype=float).reshape(len(cuts), self.state_dim)
        alphas = np.array([c.alpha for c in cuts])
        self._stacked[key] = (len(cuts), betas, alphas)
        return betas, alphas

    def value(self, stage: int, x: np.ndarray) -> float:
        """Current cutting-plane model of the stage's expected cost-to-go at x."""
        cuts = self.cuts_for(stage)
        if not cuts:
            return self.floor
        betas, alphas = self.stacked(stage)
        return max(self.floor, float((betas @ x + alphas).max()))

    def total_cuts(self) -> int:
        return sum(len(s) for s in self._stages)

    def copy(self) -> "CutPool":
        dup = CutPool(self.horizon, self.state_dim, self.floor, self.shared)
        dup._stages = [[Cut(c.beta.copy(), c.alpha, c.birth_iteration) for c in s] for s in self._stages]
        return dup


@dataclass
class TrainConfig:
    """Termination and filtering knobs for one SDDP training run."""

    max_iterations: int = 100_000
    time_limit_seconds: float = 10_800.0
    stall_window: int = 500
    stall_rel_tol: float = 1e-4
    forward_paths_per_iteration: int = 1
    rng_seed: int = 0
    cut_violation_tol: float = CUT_VIOLATION_TOL  # relative; coarsen to bound pool growth

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.time_limit_seconds <= 0 or self.stall_window <= 0:
            raise ValueError("time limit and stall window must be positive")
        if not 0.0 < self.stall_rel_tol < 1.0:
            raise ValueError("stall_rel_tol must lie in (0, 1)")
        if self.forward_paths_per_iteration <= 0:
            raise ValueError("forward_paths_per_iteration must be positive")
        if self.cut_violation_tol <= 0:
            raise ValueError("cut_violation_tol must be positive")

    def replace(self, **kw) -> "TrainConfig":
        data = self.__dict__ | kw
        return TrainConfig(**data)


@dataclass
class TrainReport:
    iterations: int
    lower_bounds: np.ndarray
    wall_seconds: float
    reason: str  # iterations | time | stall
    forward_costs: np.ndarray

    def upper_bound_stats(self, window: int = 50) -> tuple[float, float]:
        """Sample mean and std of recent forward-pass path costs."""
        tail = self.forward_costs[-window:]
        if tail.size == 0:
            return float("nan"), float("nan")
        return float(tail.mean()), float(tail.std())


@dataclass(eq=False)
class StageVisit:
    """One stage of a forward trajectory."""

    realization: model.Realization | None
    solution: LPSolution
    storage: np.ndarray
    cost: float


class SddpProblem:
    """A multistage problem of fixed horizon with its own cut pool.

    Owns the stage template and the pool; the first-stage state varies
    call to call, which is what rolling evaluation needs.
    """

    def __init__(self, inst, horizon: int, floor: float = 0.0, pool: CutPool | None = None,
                 discount: float = 1.0):
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        self.instance = inst
        self.horizon = horizon
        self.discount = discount
        self.template = build_template(inst)
        self.pool = pool if pool is not None else CutPool.finite(horizon, inst.state_dim, floor)
        # Last optimal basis per (stage, realization), with its cut count:
        # consecutive solves of one slot differ only in the rhs, so the old
        # basis usually restarts; after cut appends it is padded with the
        # new slack columns.
        self._warm_bases: dict[tuple[int, int], tuple[int, object]] = {}
        self._lp_cache: dict[int, tuple[int, object]] = {}

    def stage_lp(self, stage: int, incoming, realization=None):
        return instantiate_stage(
            self.template,
            incoming,
            realization,
            cuts=self.pool.cuts_for(stage + 1),
            floor=self.pool.floor,
            discount=self.discount,
        )

    def _cache_slot(self, stage: int) -> int:
        # A shared pool makes every stage the same program, so caches collapse.
        return 0 if self.pool.shared else stage

    def _cached_stage_lp(self, stage: int, incoming, realization):
        """Stage LP with the matrix reused across solves; only the rhs changes."""
        ncuts = len(self.pool.cuts_for(stage + 1))
        slot = self._cache_slot(stage)
        cached = self._lp_cache.get(slot)
        if cached is not None and cached[0] == ncuts:
            lp = cached[1]
            m_base = self.template.base_lp.num_rows
            lp.eq_rhs[:m_base] = stage_rhs(self.template, incoming, realization)
            return lp
        lp = self.stage_lp(stage, incoming, realization)
        self._lp_cache[slot] = (ncuts, lp)
        return lp

    def _solve_stage(self, stage: int, incoming, realization=None) -> LPSolution:
        ncuts = len(self.pool.cuts_for(stage + 1))
        lp = self._cached_stage_lp(stage, incoming, realization)
        key = (self._cache_slot(stage), realization.id if realization is not None else -1)
        warm = None
        cached = self._warm_bases.get(key)
        if cached is not None:
            old_ncuts, state = cached
            if old_ncuts == ncuts:
                warm = state
            elif 0 < ncuts - old_ncuts <= 8 and ncuts > 0:
                # Pool grew: pad the basis with the new cut rows' slack columns.
                # The block-triangular structure extends the inverse in closed
                # form: binv' = [[binv, 0], [C binv, -I]] for new rows C.
                n_struct = lp.num_vars - ncuts
                k = ncuts - old_ncuts
                extra = np.arange(n_struct + old_ncuts, n_struct + ncuts)
                binv = None
                if state.binv is not None:
                    m_old = state.binv.shape[0]
                    rows = lp.eq_matrix[m_old:, :][:, state.basis]
                    binv = np.zeros((m_old + k, m_old + k))
                    binv[:m_old, :m_old] = state.binv
                    binv[m_old:, :m_old] = rows @ state.binv
                    binv[m_old:, m_old:] = -np.eye(k)
                warm = BasisState(
                    basis=np.concatenate([state.basis, extra]),
                    at_upper=np.concatenate([state.at_upper, np.zeros(k, bool)]),
                    binv=binv,
                    age=state.age,
                )
        sol = solve(lp, warm=warm)
        if sol.status != "optimal":
            raise StageInfeasible(stage, sol.status)
        if sol.basis_state is not None:
            self._warm_bases[key] = (ncuts, sol.basis_state)
        return sol

    def solve_first_stage(self, first_state: SystemState) -> LPSolution:
        return self._solve_stage(1, first_state)

    def lower_bound(self, first_state: SystemState) -> float:
        return self.solve_first_stage(first_state).objective

    def forward_pass(self, first_state: SystemState, rng: np.random.Generator,
                     horizon: int | None = None) -> list[StageVisit]:
        """Simulate one path, solving each stage under the current cuts."""
        horizon = self.horizon if horizon is None else horizon
        process = self.instance.inflow_process
        trajectory: list[StageVisit] = []
        sol = self.solve_first_stage(first_state)
        storage = sol.primal[self.template.state_extract].copy()
        trajectory.append(
            StageVisit(None, sol, storage, model.stage_cost(sol, self.template, self.discount))
        )
        for t in range(2, horizon + 1):
            xi = process.sample(rng)
            sol = self._solve_stage(t, trajectory[-1].storage, xi)
            storage = sol.primal[self.template.state_extract].copy()
            trajectory.append(
                StageVisit(xi, sol, storage, model.stage_cost(sol, self.template, self.discount))
            )
        return trajectory

    def backward_pass(self, trajectory: list[StageVisit], iteration: int = 0,
                      violation_tol: float = CUT_VIOLATION_TOL) -> int:
        """Walk the trajectory backwards, adding one aggregated cut per stage.

        At each stage t the subproblem is solved for every realization at
        the previous stage's decision; the equality-row duals composed
        with the linking matrix give a subgradient of the stage value in
        the incoming storage, and the probability-weighted aggregate is
        appended to the pool when it beats the current model at that point.
        """
        tmpl = self.template
        process = self.instance.inflow_process
        probs = process.probabilities
        added = 0
        for t in range(len(trajectory), 1, -1):
            x_prev = trajectory[t - 2].storage
            beta = np.zeros(self.pool.state_dim)
            alpha_acc = 0.0
            for xi, p in zip(process.realizations, probs):
                sol = self._solve_stage(t, x_prev, xi)
                grad = tmpl.linking_matrix.T @ sol.duals[: tmpl.linking_matrix.shape[0]]
                beta += p * grad
                alpha_acc += p * sol.objective
            alpha = alpha_acc - float(beta @ x_prev)
            incumbent = self.pool.value(t, x_prev)
            # Violation test is relative: stage values span many orders of magnitude.
            if alpha_acc > incumbent + violation_tol * max(1.0, abs(incumbent)):
                self.pool.cuts_for(t).append(Cut(beta, alpha, iteration))
                added += 1
        return added

    def train(self, config: TrainConfig, first_state: SystemState | None = None,
              rng: np.random.Generator | None = None) -> TrainReport:
        """Alternate forward and backward passes until a stopping rule fires."""
        if first_state is None:
            first_state = initial_state(self.instance)
        if rng is None:
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
                trajectory = self.forward_pass(first_state, rng)
                fwd_costs.append(sum(v.cost for v in trajectory))
                self.backward_pass(trajectory, iteration=i,
                                   violation_tol=config.cut_violation_tol)
            lbs.append(self.lower_bound(first_state))
            iterations = i + 1
            if _stalled(lbs, config):
                reason = "stall"
                break
        return TrainReport(
            iterations=iterations,
            lower_bounds=np.asarray(lbs),
            wall_seconds=time.perf_counter() - start,
            reason=reason,
            forward_costs=np.asarray(fwd_costs),
        )


def _stalled(lbs: list[float], config: TrainConfig) -> bool:
    j = config.stall_window
    if len(lbs) <= j:
        return False
    current, past = lbs[-1], lbs[-1 - j]
    progress = current - past
    if abs(current) < 1.0:  # relative test divides by the bound itself
        return progress < config.stall_rel_tol
    return progress / abs(current) < config.stall_rel_tol


# Functional wrappers around SddpProblem, for one-shot offline use.

def train(inst, horizon: int, config: TrainConfig, floor: float = 0.0,
          first_state: SystemState | None = None) -> tuple[CutPool, TrainReport]:
    problem = SddpProblem(inst, horizon, floor=floor)
    report = problem.train(config, first_state=first_state)
    return problem.pool, report


def forward_pass(inst, pool: CutPool, horizon: int, first_state: SystemState,
                 rng: np.random.Generator) -> list[StageVisit]:
    problem = SddpProblem(inst, horizon, pool=pool)
    return problem.forward_pass(first_state, rng)


def backward_pass(inst, pool: CutPool, trajectory: list[StageVisit]) -> int:
    problem = SddpProblem(inst, len(trajectory), pool=pool)
    return problem.backward_pass(trajectory)


def lower_bound(inst, pool: CutPool, horizon: int, first_state: SystemState | None = None) -> float:
    problem = SddpProblem(inst, horizon, pool=pool)
    if first_state is None:
        first_state = initial_state(inst)
    return problem.lower_bound(first_state)


def save_pool(pool: CutPool, path) -> None:
    """Write a cut pool as a documented text table (one row per cut)."""
    with open(path, "w") as fh:
        fh.write(f"# cutpool format {POOL_FORMAT}\n")
        fh.write(f"# floor {pool.floor!r}\n")
        fh.write(f"# state_dim {pool.state_dim}\n")
        fh.write(f"# stages {'shared' if pool.shared else pool.horizon}\n")
        cols = "\t".join(f"beta_{k}" for k in range(pool.state_dim))
        fh.write("stage\talpha" + ("\t" + cols if cols else "") + "\n")
        stages = [0] if pool.shared else range(2, pool.horizon + 1)
        for s in stages:
            for cut in pool.cuts_for(max(s, 2)):
                betas = "\t".join(format(v, ".17g") for v in cut.beta)
                fh.write(f"{s}\t{format(cut.alpha, '.17g')}" + ("\t" + betas if betas else "") + "\n")


def load_pool(path) -> CutPool:
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) >= 2:
                header[parts[0]] = parts[-1]
        elif line and not line.startswith("stage"):
            body.append(line)
    if header.get("cutpool") != str(POOL_FORMAT):
        raise ValueError("unrecognized cut pool file header")
    floor = float(header["floor"])
    state_dim = int(header["state_dim"])
    shared = header["stages"] == "shared"
    horizon = 0 if shared else int(header["stages"])
    pool = CutPool(horizon, state_dim, floor, shared)
    for line in body:
        fields = line.split("\t")
        stage = int(fields[0])
        alpha = float(fields[1])
        beta = np.array([float(v) for v in fields[2 : 2 + state_dim]])
        target = pool.cuts_for(2) if shared else pool.cuts_for(stage)
        target.append(Cut(beta, alpha))
    return pool
