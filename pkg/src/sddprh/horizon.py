"""Offline forecast-horizon learning and the discounted-case bounds.

Three independent tools live here:

* a stability scan that finds, per sampled system state, the smallest
  look-ahead length whose first-stage decision has stopped moving;
* a segmented piecewise-linear regression from the state's energy
  potential to that sufficient horizon (exact dynamic-programming
  segmentation, not a heuristic);
* closed-form calculators for the discounted suboptimality bound and the
  epsilon-sufficient horizon it implies, plus a small tabular
  value-iteration oracle used to validate both empirically.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .model import HPOPInstance, SystemState, build_template, instantiate_stage, make_state
from .sddp import SddpProblem, TrainConfig
from .simplex import solve

MAP_FORMAT = 1


# ---------------------------------------------------------------------------
# Piecewise-linear horizon map


@dataclass
class HorizonPiece:
    lo: float
    hi: float  # math.inf on the last piece
    theta0: float
    theta1: float
    r2: float
    count: int = 0


@dataclass(eq=False)
class HorizonMap:
    """State-to-horizon predictor: theta0 + theta1 * phi1 per contiguous range.

    The single regressor phi1 is the hydro energy potential of the state
    (efficiency-weighted available water), with a constant offset basis.
    """

    pieces: list[HorizonPiece]
    r2_avg: float
    basis: str = "energy-potential"

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("a horizon map needs at least one piece")
        if self.pieces[0].lo != 0.0 or not math.isinf(self.pieces[-1].hi):
            raise ValueError("pieces must cover [0, inf)")
        for a, b in zip(self.pieces, self.pieces[1:]):
            if a.hi != b.lo:
                raise ValueError("piece ranges must partition [0, inf) in order")

    def piece_for(self, phi: float) -> HorizonPiece:
        for piece in self.pieces:
            if phi < piece.hi:
                return piece
        return self.pieces[-1]

    def predict_phi(self, phi: float) -> float:
        piece = self.piece_for(phi)
        return piece.theta0 + piece.theta1 * phi

    def predict(self, state: SystemState) -> float:
        return self.predict_phi(state.energy_potential)


def predict(horizon_map: HorizonMap, state: SystemState) -> float:
    """Real-valued horizon prediction for a system state."""
    return horizon_map.predict(state)


def _ols_sse(phi: np.ndarray, tau: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line through the points; returns (theta0, theta1, sse)."""
    if np.ptp(phi) <= 0.0:
        theta0 = float(tau.mean())
        return theta0, 0.0, float(((tau - theta0) ** 2).sum())
    x = phi - phi.mean()
    theta1 = float((x @ (tau - tau.mean())) / (x @ x))
    theta0 = float(tau.mean() - theta1 * phi.mean())
    resid = tau - (theta0 + theta1 * phi)
    return theta0, theta1, float(resid @ resid)


def fit_horizon_map(points, max_pieces: int = 3) -> HorizonMap:
    """Optimal segmented least squares over sorted phi1 values.

    Minimizes total squared error over at most ``max_pieces`` contiguous
    segments of at least two points each (dynamic programming over all
    breakpoint placements; breakpoints land on midpoints between
    consecutive distinct phi values). Among piece counts whose error
    ties, the smallest wins.
    """
    pts = sorted((float(p), float(t)) for p, t in points)
    n = len(pts)
    if n < 2:
        raise ValueError("need at least two points to fit a horizon map")
    phi = np.array([p for p, _ in pts])
    tau = np.array([t for _, t in pts])
    max_pieces = max(1, min(max_pieces, n // 2))

    # seg[i][j]: fit of points i..j inclusive (precomputed OLS per window).
    seg = {}
    for i in range(n):
        for j in range(i + 1, n):
            seg[i, j] = _ols_sse(phi[i : j + 1], tau[i : j + 1])

    # A segment may not end between two equal phi values (no breakpoint fits there).
    def can_break_after(j: int) -> bool:
        return j == n - 1 or phi[j + 1] > phi[j]

    INF = float("inf")
    best = [[INF] * (max_pieces + 1) for _ in range(n)]
    back = [[-1] * (max_pieces + 1) for _ in range(n)]
    for j in range(n):
        if not can_break_after(j):
            continue
        for k in range(1, max_pieces + 1):
            if k == 1:
                if j >= 1:
                    best[j][1] = seg[0, j][2]
                    back[j][1] = 0
                continue
            for i in range(2 * (k - 1), j):
                if j - i < 1 or not can_break_after(i - 1):
                    continue
                prev = best[i - 1][k - 1]
                if prev == INF:
                    continue
                cand = prev + seg[i, j][2]
                if cand < best[j][k] - 1e-15:
                    best[j][k] = cand
                    back[j][k] = i

    errors = [best[n - 1][k] for k in range(1, max_pieces + 1)]
    finite = [e for e in errors if e < INF]
    if not finite:
        raise ValueError("no feasible segmentation (need two points per piece)")
    target = min(finite)
    pieces_used = next(k for k, e in enumerate(errors, start=1) if e <= target + 1e-12)

    # Recover segment boundaries.
    bounds = []
    j, k = n - 1, pieces_used
    while k >= 1:
        i = back[j][k]
        bounds.append((i, j))
        j, k = i - 1, k - 1
    bounds.reverse()

    pieces = []
    total_weighted_r2 = 0.0
    for idx, (i, j) in enumerate(bounds):
        theta0, theta1, sse = seg[i, j]
        window = tau[i : j + 1]
        sst = float(((window - window.mean()) ** 2).sum())
        if sst <= 1e-15:
            r2 = 1.0 if sse <= 1e-12 else 0.0
        else:
            r2 = 1.0 - sse / sst
        lo = 0.0 if idx == 0 else pieces[-1].hi
        hi = math.inf if idx == len(bounds) - 1 else float((phi[j] + phi[j + 1]) / 2.0)
        count = j - i + 1
        pieces.append(HorizonPiece(lo, hi, theta0, theta1, r2, count))
        total_weighted_r2 += count * r2
    return HorizonMap(pieces, r2_avg=total_weighted_r2 / n)


def save_horizon_map(hmap: HorizonMap, path) -> None:
    doc = {
        "format": MAP_FORMAT,
        "basis": hmap.basis,
        "r2_avg": hmap.r2_avg,
        "pieces": [
            {
                "lo": p.lo,
                "hi": None if math.isinf(p.hi) else p.hi,
                "theta0": p.theta0,
                "theta1": p.theta1,
                "r2": p.r2,
                "count": p.count,
            }
            for p in hmap.pieces
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_horizon_map(path) -> HorizonMap:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MAP_FORMAT:
        raise ValueError(f"unsupported horizon map format {doc.get('format')!r}")
    pieces = [
        HorizonPiece(
            lo=float(p["lo"]),
            hi=math.inf if p["hi"] is None else float(p["hi"]),
            theta0=float(p["theta0"]),
            theta1=float(p["theta1"]),
            r2=float(p["r2"]),
            count=int(p.get("count", 0)),
        )
        for p in doc["pieces"]
    ]
    return HorizonMap(pieces, r2_avg=float(doc["r2_avg"]), basis=doc.get("basis", "energy-potential"))


# ---------------------------------------------------------------------------
# Stability scan (offline horizon learning, data-collection half)


@dataclass
class ScanConfig:
    """Controls the per-state search for a sufficient look-ahead length."""

    sample_size: int = 50
    tolerance: float = 1e-5  # relative change of the first-stage decision
    stability_window: int = 10  # w: how far back the comparison reaches
    tau_max: int = 64
    train_config: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            max_iterations=400, stall_window=30, stall_rel_tol=1e-6
        )
    )

    def __post_init__(self):
        if self.stability_window < 1:
            raise ValueError("stability window must be >= 1")
        if self.tau_max <= self.stability_window:
            raise ValueError("tau_max must exceed the stability window")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.sample_size < 1:
            raise ValueError("sample size must be >= 1")


@dataclass
class ScanSample:
    index: int
    phi1: float
    tau_star: int
    wall_ms: float


def stability_scan(inst: HPOPInstance, state: SystemState, cfg: ScanConfig,
                   floor: float = 0.0) -> int:
    """Smallest sufficient horizon for one state.

    Trains a fresh multistage problem per candidate horizon and compares
    the post-decision first-stage storage against the one from
    ``stability_window`` horizons earlier (relative Euclidean norm).
    Returns tau_max when the test never fires.
    """
    history: dict[int, np.ndarray] = {}
    w = cfg.stability_window
    for tau in range(1, cfg.tau_max + 1):
        problem = SddpProblem(inst, tau, floor=floor)
        problem.train(cfg.train_config, first_state=state)
        sol = problem.solve_first_stage(state)
        x1 = sol.primal[problem.template.state_extract].copy()
        history[tau] = x1
        if tau > w:
            ref = history[tau - w]
            denom = max(1.0, float(np.linalg.norm(ref)))
            if float(np.linalg.norm(x1 - ref)) / denom < cfg.tolerance:
                return tau - w
    return cfg.tau_max


def draw_scan_states(inst: HPOPInstance, count: int, rng: np.random.Generator) -> list[SystemState]:
    """Sampled system states: uniform storage per reservoir plus one inflow draw."""
    states = []
    caps = np.array([inst.hydro[i].storage_cap for i in inst.reservoir_indices])
    for _ in range(count):
        storage = rng.uniform(0.0, caps) if caps.size else np.zeros(0)
        xi = inst.inflow_process.sample(rng)
        states.append(make_state(inst, storage, xi))
    return states


def run_scan(inst: HPOPInstance, cfg: ScanConfig, rng: np.random.Generator,
             floor: float = 0.0) -> list[ScanSample]:
    """Stability scan over a fresh state sample; one record per state."""
    samples = []
    for n, state in enumerate(draw_scan_states(inst, cfg.sample_size, rng)):
        t0 = time.perf_counter()
        tau_star = stability_scan(inst, state, cfg, floor)
        samples.append(
            ScanSample(n, state.energy_potential, tau_star, (time.perf_counter() - t0) * 1e3)
        )
    return samples


def save_scan(samples: list[ScanSample], path) -> None:
    """Scan records as a tab-delimited table (wall time in the last column)."""
    with open(path, "w") as fh:
        fh.write("n\tphi1\ttau_star\twall_ms\n")
        for s in samples:
            fh.write(f"{s.index}\t{s.phi1:.12g}\t{s.tau_star}\t{s.wall_ms:.3f}\n")


def load_scan(path) -> list[ScanSample]:
    samples = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("n\t") or line.startswith("#"):
                continue
            f = line.split("\t")
            samples.append(ScanSample(int(f[0]), float(f[1]), int(f[2]), float(f[3])))
    return samples


# ---------------------------------------------------------------------------
# Discounted-case bound calculators


def epsilon_sufficient_horizon(kappa: float, gamma: float, epsilon: float) -> float:
    """Horizon beyond which the look-ahead policy is within epsilon of optimal.

    log(eps (1-gamma) / kappa) / log(gamma); zero when the ratio already
    reaches one (any horizon suffices).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie strictly inside (0, 1), got {gamma}")
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    ratio = epsilon * (1.0 - gamma) / kappa
    if ratio >= 1.0:
        return 0.0
    return math.log(ratio) / math.log(gamma)


def suboptimality_bound(tau: float, gamma: float, kappa: float,
                        regime: str = "general") -> float:
    """Discounted-cost gap bound of the tau-stage look-ahead policy.

    gamma^tau * kappa / (1-gamma), doubled for cost functions of
    arbitrary sign ("general"); "nonpositive" keeps the single factor.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie strictly inside (0, 1), got {gamma}")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if regime not in ("general", "nonpositive"):
        raise ValueError(f"unknown regime {regime!r}")
    base = gamma**tau * kappa / (1.0 - gamma)
    return 2.0 * base if regime == "general" else base


def compute_kappa(inst: HPOPInstance) -> float:
    """Per-stage cost bound: single-stage optimum with every state at zero."""
    tmpl = build_template(inst)
    zero = SystemState(np.zeros(len(inst.hydro)), 0.0)
    sol = solve(instantiate_stage(tmpl, zero))
    if sol.status != "optimal":
        raise RuntimeError(f"zero-state stage problem is {sol.status}")
    return sol.objective


# ---------------------------------------------------------------------------
# Tabular value-iteration oracle


@dataclass(eq=False)
class FiniteModel:
    """Tabular control problem: finite states, finite moves, finite outcomes.

    ``cost[r, s, s']`` is the immediate cost of moving from state s to s'
    when outcome r occurs; +inf marks an inadmissible move.
    """

    probabilities: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        self.cost = np.asarray(self.cost, dtype=float)
        if abs(self.probabilities.sum() - 1.0) > 1e-9:
            raise ValueError("outcome probabilities must sum to 1")
        if self.cost.ndim != 3 or self.cost.shape[0] != self.probabilities.shape[0]:
            raise ValueError("cost must have shape (outcomes, states, states)")
        if np.any(np.all(np.isinf(self.cost), axis=2)):
            raise ValueError("every (outcome, state) needs at least one admissible move")

    @property
    def num_states(self) -> int:
        return self.cost.shape[1]


def value_iteration(model: FiniteModel, gamma: float, iterations: int) -> np.ndarray:
    """Iterates of the discounted optimality recursion from the zero function.

    Returns the (iterations+1, states) trace g^0 .. g^K with
    g^k(s) = E_r[ min_s' cost[r,s,s'] + gamma g^(k-1)(s') ].
    """
    S = model.num_states
    trace = np.zeros((iterations + 1, S))
    for k in range(1, iterations + 1):
        future = gamma * trace[k - 1]
        stagewise = np.min(model.cost + future[None, None, :], axis=2)  # (R, S)
        trace[k] = model.probabilities @ stagewise
    return trace


def value_iteration_fixed_point(model: FiniteModel, gamma: float, tol: float = 1e-13) -> np.ndarray:
    """Iterate until the sup-norm step falls below tol (geometric convergence)."""
    g = np.zeros(model.num_states)
    for _ in range(200_000):
        future = gamma * g
        nxt = model.probabilities @ np.min(model.cost + future[None, None, :], axis=2)
        if np.abs(nxt - g).max() < tol:
            return nxt
        g = nxt
    raise RuntimeError("value iteration failed to converge")


def greedy_policy(model: FiniteModel, gamma: float, g: np.ndarray) -> np.ndarray:
    """Per (outcome, state) argmin move against the value table g."""
    return np.argmin(model.cost + gamma * g[None, None, :], axis=2)


def policy_value(model: FiniteModel, gamma: float, policy: np.ndarray) -> np.ndarray:
    """Exact discounted value of a stationary policy (linear solve)."""
    R, S = policy.shape
    transition = np.zeros((S, S))
    immediate = np.zeros(S)
    for r in range(R):
        p = model.probabilities[r]
        for s in range(S):
            nxt = int(policy[r, s])
            transition[s, nxt] += p
            immediate[s] += p * model.cost[r, s, nxt]
    return np.linalg.solve(np.eye(S) - gamma * transition, immediate)


def lookahead_policy_value(model: FiniteModel, gamma: float, tau: int) -> np.ndarray:
    """Exact value of the tau-stage look-ahead policy (greedy against g^(tau-1))."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    trace = value_iteration(model, gamma, tau - 1)
    policy = greedy_policy(model, gamma, trace[tau - 1])
    return policy_value(model, gamma, policy)
