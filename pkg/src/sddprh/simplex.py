"""Dense revised simplex for small stage subproblems.

Solves   min c'x   s.t.   A x = b,   l <= x <= u

with a two-phase bounded-variable primal simplex. The pivot rule is
largest-violation (Dantzig) with an automatic switch to Bland's rule
after a run of degenerate pivots, which keeps the termination guarantee
while avoiding Bland's long stalls; every choice breaks ties by lowest
index, so the method is fully deterministic: identical inputs always
produce identical pivots and identical output.

Phase 1 first tries a singleton-column crash so that rows repairable by
one dedicated column (slacks, surpluses, penalties) never carry an
artificial variable. Callers re-solving structurally identical programs
can pass the previous solution's ``basis_state`` to skip phase 1
entirely when that basis is still feasible.

The equality-row duals returned with an optimal solution are valid
Lagrange multipliers: perturbing b by a small delta never drops the
optimal value below ``objective + duals @ delta``. Downstream code
builds cutting planes from exactly that property.

Scope: dense problems with at most a few hundred rows/columns. Every
variable must carry at least one finite bound (free variables are
rejected). No sparsity, no integer variables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Standard double-precision simplex tolerances.
FEAS_TOL = 1e-7
DUALITY_TOL = 1e-6
PIVOT_TOL = 1e-9
RC_TOL = 1e-9

_REFACTOR_EVERY = 100
_MAX_PIVOTS = 200_000
_BLAND_AFTER_DEGENERATE = 25

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class LinearProgram:
    """One stage subproblem: costs, equality rows, and variable bounds."""

    objective: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    var_lower: np.ndarray
    var_upper: np.ndarray

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.eq_matrix = np.asarray(self.eq_matrix, dtype=float)
        self.eq_rhs = np.asarray(self.eq_rhs, dtype=float)
        self.var_lower = np.asarray(self.var_lower, dtype=float)
        self.var_upper = np.asarray(self.var_upper, dtype=float)
        n = self.objective.shape[0]
        if self.eq_matrix.ndim != 2:
            raise ValueError("eq_matrix must be two-dimensional")
        m, n_cols = self.eq_matrix.shape
        if n_cols != n:
            raise ValueError(f"eq_matrix has {n_cols} columns, objective has {n}")
        if self.eq_rhs.shape[0] != m:
            raise ValueError(f"eq_rhs has {self.eq_rhs.shape[0]} entries, eq_matrix has {m} rows")
        if self.var_lower.shape[0] != n or self.var_upper.shape[0] != n:
            raise ValueError("bound vectors must match objective length")
        if np.any(self.var_lower > self.var_upper):
            raise ValueError("var_lower exceeds var_upper for some variable")
        free = np.isneginf(self.var_lower) & np.isposinf(self.var_upper)
        if np.any(free):
            raise ValueError(
                f"variable {int(np.nonzero(free)[0][0])} is free; every variable "
                "needs at least one finite bound"
            )

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]

    @property
    def num_rows(self) -> int:
        return self.eq_matrix.shape[0]


@dataclass
class BasisState:
    """Restartable snapshot of an optimal basis and nonbasic bound placement.

    ``binv`` may be None (e.g. a basis extended by appended rows); the
    restart then refactorizes instead of pricing with the cached inverse.
    ``age`` counts product-form updates since the inverse was last
    factorized from scratch; restarts refactorize once it grows stale.
    """

    basis: np.ndarray
    at_upper: np.ndarray
    binv: np.ndarray | None = None
    age: int = 0


@dataclass
class LPSolution:
    """Primal point, equality duals, objective, and a status flag."""

    primal: np.ndarray
    duals: np.ndarray
    objective: float
    status: str
    basis_state: BasisState | None = None

    def dual_objective(self, lp: LinearProgram) -> float:
        """Value of the bound-aware dual; equals the primal objective at optimality."""
        rc = lp.objective - lp.eq_matrix.T @ self.duals
        val = float(lp.eq_rhs @ self.duals)
        at_lower = np.isfinite(lp.var_lower) & (rc > 0.0)
        at_upper = np.isfinite(lp.var_upper) & (rc < 0.0)
        val += float(rc[at_lower] @ lp.var_lower[at_lower])
        val += float(rc[at_upper] @ lp.var_upper[at_upper])
        return val


class _Tableau:
    """Working state of the bounded-variable simplex on extended columns."""

    def __init__(self, A, b, lower, upper, basis, x, binv=None, age=0):
        self.A = A
        self.b = b
        self.lower = lower
        self.upper = upper
        self.m = A.shape[0]
        self.basis = np.asarray(basis, dtype=np.intp)
        self.in_basis = np.zeros(A.shape[1], dtype=bool)
        self.in_basis[self.basis] = True
        self.x = x
        if binv is None or age >= _REFACTOR_EVERY:
            self.refactor()
        else:
            self.binv = binv
            self.age = age
            self.recompute_basics()

    def refactor(self):
        B = self.A[:, self.basis]
        self.binv = np.linalg.inv(B)
        self.age = 0
        self.recompute_basics()

    def duals(self, c) -> np.ndarray:
        return self.binv.T @ c[self.basis]

    def recompute_basics(self):
        """Refresh basic values from the current inverse (no factorization)."""
        rhs = self.b - self.A[:, ~self.in_basis] @ self.x[~self.in_basis]
        self.x[self.basis] = self.binv @ rhs

    def pivot(self, row, col, direction):
        """Replace basis[row] by col; direction is binv @ A[:, col]."""
        out = self.basis[row]
        self.in_basis[out] = False
        self.in_basis[col] = True
        self.basis[row] = col
        self.age += 1
        if self.age >= _REFACTOR_EVERY:
            self.refactor()
            return
        piv_row = self.binv[row] / direction[row]
        buf = getattr(self, "_update_buf", None)
        if buf is None:
            buf = self._update_buf = np.empty_like(self.binv)
        np.multiply(direction[:, None], piv_row[None, :], out=buf)
        self.binv -= buf
        self.binv[row] = piv_row


def _run_simplex(tab: _Tableau, c: np.ndarray) -> str:
    """Primal simplex from a basic feasible point (Dantzig, Bland fallback)."""
    A, lower, upper = tab.A, tab.lower, tab.upper
    x = tab.x
    m = tab.m
    fixed = upper - lower <= 0.0
    blocked = tab.in_basis | fixed
    # Bound-side sign per variable: -1 while resting at/near the lower bound
    # (improving when rc < 0), +1 at the upper. Maintained incrementally.
    rc_sign = np.where(np.abs(x - lower) <= np.abs(x - upper), -1.0, 1.0)
    ratios = np.empty(m)
    rc = None
    use_bland = False
    degenerate_streak = 0

    for _ in range(_MAX_PIVOTS):
        if rc is None:
            rc = c - tab.duals(c) @ A
        violation = rc * rc_sign
        violation[blocked] = 0.0
        if use_bland:
            improving = violation > RC_TOL
            j = int(np.argmax(improving))
            if not improving[j]:
                return OPTIMAL
        else:
            j = int(np.argmax(violation))
            if violation[j] <= RC_TOL:
                return OPTIMAL
        sigma = -rc_sign[j]

        d = tab.binv @ A[:, j]
        basis = tab.basis
        xb = x[basis]
        step = d if sigma > 0 else -d
        t_best = upper[j] - lower[j]  # bound-flip distance (may be inf)
        leave_row = -1
        ratios.fill(np.inf)
        dec = step > PIVOT_TOL   # basic value moving toward its lower bound
        inc = step < -PIVOT_TOL  # basic value moving toward its upper bound
        np.divide(xb - lower[basis], step, out=ratios, where=dec)
        np.divide(upper[basis] - xb, -step, out=ratios, where=inc)
        t_rows = ratios.min()
        if t_rows < t_best - 1e-12:
            # tie-break by lowest variable index among blocking rows
            tied = np.nonzero(ratios <= t_rows + 1e-12)[0]
            leave_row = int(tied[np.argmin(basis[tied])])
            t_best = max(float(t_rows), 0.0)
        if not np.isfinite(t_best):
            return UNBOUNDED

        x[basis] = xb - t_best * step
        if leave_row < 0:
            # Bound flip: j crosses to its opposite bound, basis and duals unchanged.
            x[j] = upper[j] if sigma > 0 else lower[j]
            rc_sign[j] = -rc_sign[j]
            degenerate_streak = 0
            use_bland = False
            continue
        x[j] = (lower[j] if sigma > 0 else upper[j]) + sigma * t_best
        out = basis[leave_row]
        if step[leave_row] > 0:
            x[out] = lower[out]
            rc_sign[out] = -1.0
        else:
            x[out] = upper[out]
            rc_sign[out] = 1.0
        blocked[out] = fixed[out]
        blocked[j] = True
        tab.pivot(leave_row, j, d)
        rc = None
        if t_best <= 1e-12:
            degenerate_streak += 1
            if degenerate_streak >= _BLAND_AFTER_DEGENERATE:
                use_bland = True  # anti-cycling mode until progress resumes
        else:
            degenerate_streak = 0
            use_bland = False
    raise RuntimeError("simplex pivot limit exceeded")


def _run_dual_simplex(tab: _Tableau, c: np.ndarray) -> str:
    """Restore primal feasibility from a dual-feasible basis.

    Used for warm restarts whose basic values drifted out of bounds (rhs
    changed, or rows were appended): the most-violated basic variable
    leaves at its nearest bound and the entering column is chosen by the
    dual ratio test, so reduced-cost signs stay valid throughout.
    Returns OPTIMAL once feasible, INFEASIBLE when a violated row proves
    the program empty, or "stalled" to make the caller fall back cold.
    """
    A, lower, upper = tab.A, tab.lower, tab.upper
    x = tab.x
    fixed = upper - lower <= 0.0
    rc = c - tab.duals(c) @ A
    bound_sign = np.where(np.abs(x - lower) <= np.abs(x - upper), 1.0, -1.0)
    for it in range(500):
        basis = tab.basis
        xb = x[basis]
        below = lower[basis] - xb
        above = xb - upper[basis]
        worst = np.maximum(below, above)
        r = int(np.argmax(worst))
        if worst[r] <= FEAS_TOL:
            return OPTIMAL
        under = below[r] > above[r]  # leaving variable exits at its lower bound
        w = tab.binv[r] @ A
        swz = bound_sign * w
        if under:
            eligible = ~tab.in_basis & ~fixed & (swz < -PIVOT_TOL)
        else:
            eligible = ~tab.in_basis & ~fixed & (swz > PIVOT_TOL)
        idx = np.nonzero(eligible)[0]
        if idx.size == 0:
            return INFEASIBLE
        ratios = np.abs(rc[idx] / w[idx])
        j = int(idx[np.argmin(ratios)])

        out = basis[r]
        bound = lower[out] if under else upper[out]
        delta = (xb[r] - bound) / w[j]
        d = tab.binv @ A[:, j]
        x[basis] = xb - delta * d
        x[j] += delta
        x[out] = bound
        bound_sign[out] = 1.0 if under else -1.0
        tab.pivot(r, j, d)
        if tab.age == 0 or it % 64 == 63:  # refactored inside pivot, or resync
            tab.recompute_basics()
            rc = c - tab.duals(c) @ A
        else:
            rc = rc - (rc[j] / w[j]) * w
    return "stalled"


def _crash_basis(lp: LinearProgram, x0: np.ndarray):
    """Pick one repair column per row: singletons first, artificials otherwise.

    A column qualifies for a row when it appears in no other row and can
    absorb the row's residual without leaving its bounds. Returns the
    basis (artificial slots filled by the caller), the rows still needing
    artificials, and start values for the crashed columns.
    """
    A, b = lp.eq_matrix, lp.eq_rhs
    m, n = A.shape
    resid = b - A @ x0
    nonzero = A != 0.0
    nnz = nonzero.sum(axis=0)
    singleton_cols = np.nonzero(nnz == 1)[0]
    row_of = {}
    for j in singleton_cols:
        row_of.setdefault(int(np.argmax(nonzero[:, j])), []).append(int(j))

    basis = np.empty(m, dtype=np.intp)
    crash_vals = {}
    artificial_rows = []
    for i in range(m):
        chosen = -1
        for j in row_of.get(i, ()):
            val = x0[j] + resid[i] / A[i, j]
            if lp.var_lower[j] - 1e-12 <= val <= lp.var_upper[j] + 1e-12:
                chosen = j
                crash_vals[j] = min(max(val, lp.var_lower[j]), lp.var_upper[j])
                break
        if chosen >= 0:
            basis[i] = chosen
        else:
            basis[i] = -1
            artificial_rows.append(i)
    if artificial_rows:
        _epigraph_crash(lp, x0, basis, artificial_rows, crash_vals, row_of)
    return basis, artificial_rows, crash_vals


def _epigraph_crash(lp, x0, basis, artificial_rows, crash_vals, row_of):
    """Cover leftover rows sharing one driver column plus per-row slacks.

    Epigraph blocks look like  t - beta'x - s_i = alpha_i : lifting the
    shared column t far enough leaves every row with a residual its own
    slack can absorb, so t goes basic on the tightest row and the slacks
    on the rest. Tried for any column whose support lies inside the
    leftover rows with one-signed coefficients.
    """
    A = lp.eq_matrix
    resid = lp.eq_rhs - A @ x0
    pending = set(artificial_rows)
    pending_mask = np.zeros(A.shape[0], dtype=bool)
    pending_mask[artificial_rows] = True
    nonzero = A != 0.0
    inside = nonzero[pending_mask].sum(axis=0)
    candidates = np.nonzero((inside >= 2) & (inside == nonzero.sum(axis=0)))[0]
    for j in candidates:
        if not pending:
            break
        support = np.nonzero(A[:, j])[0]
        if not set(support).issubset(pending):
            continue
        col = A[support, j]
        if not (np.all(col > 0.0) or np.all(col < 0.0)):
            continue
        t_vals = resid[support] / col
        lift = float(np.max(t_vals) if col[0] > 0.0 else np.min(t_vals))
        driver_val = x0[j] + lift
        if not lp.var_lower[j] - 1e-12 <= driver_val <= lp.var_upper[j] + 1e-12:
            continue
        assignment = {}  # row -> (column, value)
        drive_row = -1
        ok = True
        for k, i in enumerate(support):
            gap = resid[i] - lift * col[k]
            if drive_row < 0 and abs(gap) <= 1e-12:
                drive_row = int(i)
                continue
            hit = -1
            for s in row_of.get(int(i), ()):
                val = x0[s] + gap / A[i, s]
                if lp.var_lower[s] - 1e-12 <= val <= lp.var_upper[s] + 1e-12:
                    hit = s
                    assignment[int(i)] = (s, min(max(val, lp.var_lower[s]), lp.var_upper[s]))
                    break
            if hit < 0:
                ok = False
                break
        if not ok or drive_row < 0:
            continue
        basis[drive_row] = j
        crash_vals[j] = driver_val
        for i, (s, val) in assignment.items():
            basis[i] = s
            crash_vals[s] = val
        pending -= set(support)
    artificial_rows[:] = sorted(pending)


def _try_warm(lp: LinearProgram, warm: BasisState) -> LPSolution | _Tableau | None:
    """Restart from a previous basis of a structurally identical program.

    When the old basis is still primal feasible AND still dual feasible,
    no factorization or pivoting is needed at all: the cached inverse
    prices the new rhs directly and the solution comes back immediately.
    A feasible but non-optimal basis returns a tableau to pivot from;
    an unusable basis returns None (caller falls back to a cold start).
    """
    n, m = lp.num_vars, lp.num_rows
    if warm.basis.shape[0] != m or warm.at_upper.shape[0] != n:
        return None
    if warm.basis.min(initial=0) < 0 or warm.basis.max(initial=-1) >= n:
        return None
    x0 = np.where(warm.at_upper, lp.var_upper, lp.var_lower)
    nonbasic = np.ones(n, dtype=bool)
    nonbasic[warm.basis] = False
    if not np.all(np.isfinite(x0[nonbasic])):
        return None
    x0[~nonbasic] = 0.0

    c = lp.objective
    lb, ub = lp.var_lower[warm.basis], lp.var_upper[warm.basis]
    feasible = None
    if warm.binv is not None:
        xb = warm.binv @ (lp.eq_rhs - lp.eq_matrix @ x0)
        feasible = not (np.any(xb < lb - 1e-9) or np.any(xb > ub + 1e-9))
        if feasible:
            y = warm.binv.T @ c[warm.basis]
            rc = c - lp.eq_matrix.T @ y
            fixed = lp.var_upper - lp.var_lower <= 0.0
            violation = np.where(warm.at_upper, rc, -rc)
            improvable = nonbasic & ~fixed & (violation > RC_TOL)
            if not improvable.any():
                primal = x0
                primal[warm.basis] = np.minimum(np.maximum(xb, lb), ub)
                return LPSolution(primal, y, float(c @ primal), OPTIMAL, warm)
            x0[warm.basis] = xb
    try:
        tab = _Tableau(lp.eq_matrix, lp.eq_rhs, lp.var_lower, lp.var_upper,
                       warm.basis.copy(), x0,
                       binv=None if warm.binv is None else warm.binv.copy(),
                       age=warm.age)
    except np.linalg.LinAlgError:
        return None
    if feasible:
        return tab
    xb = tab.x[tab.basis]
    if not (np.any(xb < lb - 1e-9) or np.any(xb > ub + 1e-9)):
        return tab
    # Out of bounds: the basis is still dual feasible (costs unchanged for a
    # rhs change; zero duals on appended rows), so repair it dually.
    status = _run_dual_simplex(tab, c)
    if status == OPTIMAL:
        return tab
    return None  # let the cold path confirm infeasibility or stalling


def solve(lp: LinearProgram, warm: BasisState | None = None) -> LPSolution:
    """Solve a LinearProgram, returning primal, equality duals, and status.

    With a ``warm`` basis from a structurally identical program the
    feasibility phase is skipped whenever that basis still fits. Cold
    solves run the singleton-column crash, drive any leftover artificial
    variables out in phase 1, then optimize the real objective. The final
    basis is refactorized once so the reported solution satisfies
    ``|A x - b| <= FEAS_TOL`` and strong duality to DUALITY_TOL.
    """
    n, m = lp.num_vars, lp.num_rows
    if m == 0:
        return _solve_unconstrained(lp)

    if warm is not None:
        restart = _try_warm(lp, warm)
        if isinstance(restart, LPSolution):
            return restart
        if restart is not None:
            status = _run_simplex(restart, lp.objective)
            if status == UNBOUNDED:
                return LPSolution(np.full(n, np.nan), np.full(m, np.nan), -np.inf, UNBOUNDED)
            return _finish(lp, restart, lp.objective, n)

    # Nonbasic start: every structural variable at a finite bound.
    x0 = np.where(np.isfinite(lp.var_lower), lp.var_lower, lp.var_upper)
    basis, artificial_rows, crash_vals = _crash_basis(lp, x0)
    n_art = len(artificial_rows)

    x_start = np.concatenate([x0, np.zeros(n_art)])
    for j, val in crash_vals.items():
        x_start[j] = val
    art_cols = np.zeros((m, n_art))
    if n_art:
        resid = lp.eq_rhs - lp.eq_matrix @ x_start[:n]
        for k, i in enumerate(artificial_rows):
            art_cols[i, k] = 1.0 if resid[i] >= 0.0 else -1.0
            basis[i] = n + k
            x_start[n + k] = abs(resid[i])

    A = np.hstack([lp.eq_matrix, art_cols]) if n_art else lp.eq_matrix
    lower = np.concatenate([lp.var_lower, np.zeros(n_art)])
    upper = np.concatenate([lp.var_upper, np.full(n_art, np.inf)])
    tab = _Tableau(A, lp.eq_rhs, lower, upper, basis, x_start)

    if n_art:
        c1 = np.concatenate([np.zeros(n), np.ones(n_art)])
        status = _run_simplex(tab, c1)
        if status != OPTIMAL:  # phase 1 is bounded below by 0
            raise RuntimeError("phase 1 terminated abnormally")
        scale = 1.0 + float(np.abs(lp.eq_rhs).max(initial=0.0))
        if float(c1 @ tab.x) > FEAS_TOL * scale:
            return LPSolution(np.full(n, np.nan), np.full(m, np.nan), np.nan, INFEASIBLE)
        # Artificials pinned to zero for phase 2.
        tab.lower[n:] = 0.0
        tab.upper[n:] = 0.0
        tab.x[n:] = np.where(np.abs(tab.x[n:]) <= FEAS_TOL, 0.0, tab.x[n:])

    c2 = np.concatenate([lp.objective, np.zeros(n_art)]) if n_art else lp.objective
    status = _run_simplex(tab, c2)
    if status == UNBOUNDED:
        return LPSolution(np.full(n, np.nan), np.full(m, np.nan), -np.inf, UNBOUNDED)
    return _finish(lp, tab, c2, n)


def _finish(lp: LinearProgram, tab: _Tableau, c_ext: np.ndarray, n: int) -> LPSolution:
    tab.recompute_basics()
    primal = tab.x[:n].copy()
    duals = tab.duals(c_ext)
    basis_state = None
    if np.all(tab.basis < n):
        at_upper = np.isfinite(lp.var_upper) & (
            np.abs(primal - lp.var_upper) <= np.abs(primal - lp.var_lower)
        )
        # The tableau is discarded here, so its inverse moves into the state.
        basis_state = BasisState(tab.basis.copy(), at_upper, tab.binv, tab.age)
    objective = float(lp.objective @ primal)
    return LPSolution(primal, duals, objective, OPTIMAL, basis_state)


def _solve_unconstrained(lp: LinearProgram) -> LPSolution:
    """No equality rows: each variable sits at whichever bound its cost prefers."""
    c = lp.objective
    x = np.where(c > 0.0, lp.var_lower, np.where(c < 0.0, lp.var_upper, 0.0))
    zero_cost = c == 0.0
    x[zero_cost] = np.where(
        np.isfinite(lp.var_lower[zero_cost]), lp.var_lower[zero_cost], lp.var_upper[zero_cost]
    )
    if not np.all(np.isfinite(x)):
        return LPSolution(np.full(lp.num_vars, np.nan), np.zeros(0), -np.inf, UNBOUNDED)
    return LPSolution(x, np.zeros(0), float(c @ x), OPTIMAL)
