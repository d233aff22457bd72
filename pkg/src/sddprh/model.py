"""Stage templates and the hydrothermal benchmark instance.

A stage subproblem decides reservoir storage, turbined/spilled/pumped
water, thermal generation, and unmet demand for one period. Templates
freeze the constraint skeleton once per instance; instantiating a stage
only rewrites the right-hand side (incoming storage plus the period's
inflow) and appends the current cutting planes on the epigraph variable.

Stage LP variable order (fixed, dual extraction relies on it):
    storage x_h (reservoir plants) | turbined y_h (all hydro) |
    spill v+_h (all hydro) | pump-back v-_h (all hydro) |
    thermal g_f | penalty p | demand surplus w | theta | cut slacks

Equality row order: reservoir balance per reservoir plant, run-of-river
balance per run-of-river plant, demand (>= turned into = with the
surplus column), then one row per cut.

Instances and templates are immutable after construction and safe to
share read-only across concurrent workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .simplex import LinearProgram

INSTANCE_FORMAT = 1

# Benchmark network data: six cascaded hydro plants, four thermal units.
# Columns follow the plant numbering h1..h6; plants without storage
# figures are run-of-river.
_HYDRO_EFFICIENCY = (0.18, 0.35, 0.75, 0.32, 0.56, 0.15)
_HYDRO_TURBINE_CAP = (220.0, 585.0, 1688.0, 5220.0, 2028.0, 1480.0)
_HYDRO_STORAGE_CAP = (672.0, None, 17217.0, 2500.0, None, None)
_HYDRO_INITIAL = (336.0, None, 10330.2, 1250.0, None, None)
_HYDRO_UPSTREAM = ((), (1,), (), (2, 3), (), (4, 5))
_HYDRO_DOWNSTREAM = ((2,), (4,), (4,), (6,), (6,), ())

_THERMAL_CAP = (20.0, 20.0, 20.0, 20.0)
_THERMAL_COST = (20.0, 40.0, 80.0, 160.0)
_PENALTY = 500.0

# Inflow realizations (one column per plant h1..h6) and probabilities.
_INFLOWS_5 = (
    (245.50, 125.20, 1438.00, 311.00, 16.20, 29.70),
    (201.70, 103.90, 1085.30, 221.90, 13.00, 23.60),
    (158.00, 82.60, 732.50, 132.70, 9.90, 17.50),
    (130.20, 58.60, 488.10, 93.10, 7.00, 10.70),
    (102.40, 34.60, 243.60, 53.40, 4.20, 3.90),
)
_PROBS_5 = (0.20, 0.15, 0.30, 0.15, 0.20)

_INFLOWS_12 = (
    (245.50, 125.20, 1438.00, 120.00, 16.20, 29.70),
    (232.50, 117.00, 1329.50, 111.00, 15.10, 27.40),
    (219.40, 108.70, 1220.90, 101.90, 14.00, 25.00),
    (206.40, 100.50, 1112.30, 92.90, 12.90, 22.70),
    (193.40, 92.30, 1003.70, 83.90, 11.80, 20.30),
    (180.40, 84.00, 895.10, 74.80, 10.70, 18.00),
    (167.40, 75.80, 786.60, 65.80, 9.70, 15.60),
    (154.40, 67.50, 678.00, 56.70, 8.60, 13.30),
    (141.40, 59.30, 569.40, 47.70, 7.50, 10.90),
    (128.40, 51.10, 460.80, 38.70, 6.40, 8.60),
    (115.40, 42.80, 352.20, 29.60, 5.30, 6.20),
    (102.40, 34.60, 243.60, 20.60, 4.20, 3.90),
)
# As printed these weights add up to 1.02; they are renormalized on load.
_PROBS_12 = (0.09, 0.10, 0.10, 0.09, 0.07, 0.06, 0.06, 0.07, 0.09, 0.10, 0.10, 0.09)

_PRESET_PLANTS = {1: (3,), 3: (2, 3, 4), 6: (1, 2, 3, 4, 5, 6)}
_PRESET_DEMANDS = (1000.0, 1500.0, 1750.0, 2000.0, 2250.0)


class SchemaError(ValueError):
    """Instance file is malformed or violates the documented schema."""


@dataclass(eq=False)
class Realization:
    """One outcome of the stage-wise independent inflow process."""

    id: int
    probability: float
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if not 0.0 < self.probability <= 1.0:
            raise ValueError(f"realization {self.id}: probability {self.probability} not in (0,1]")


@dataclass(eq=False)
class DiscreteProcess:
    """Finite inflow distribution shared by every stochastic stage."""

    realizations: list[Realization]
    stationary: bool = True

    def __post_init__(self):
        total = sum(r.probability for r in self.realizations)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, expected 1")

    def __len__(self) -> int:
        return len(self.realizations)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([r.probability for r in self.realizations])

    def sample(self, rng: np.random.Generator) -> Realization:
        idx = int(rng.choice(len(self.realizations), p=self.probabilities))
        return self.realizations[idx]


@dataclass(eq=False)
class HydroPlant:
    efficiency: float
    turbine_cap: float
    storage_cap: float | None = None
    storage_min: float = 0.0
    initial_storage: float | None = None
    upstream: tuple[int, ...] = ()
    downstream: tuple[int, ...] = ()
    pump_cap: float = 0.0  # benchmark network has no pumping stations

    @property
    def run_of_river(self) -> bool:
        return self.storage_cap is None


@dataclass(eq=False)
class ThermalPlant:
    generation_cap: float
    unit_cost: float
    generation_min: float = 0.0


@dataclass(eq=False)
class HPOPInstance:
    """Hydro/thermal network, demand, penalty, and the inflow process."""

    hydro: list[HydroPlant]
    thermal: list[ThermalPlant]
    demand: float
    penalty: float
    inflow_process: DiscreteProcess
    inflow_scale: float = 1.0  # flow-to-storage conversion, c0

    def __post_init__(self):
        n = len(self.hydro)
        for i, plant in enumerate(self.hydro):
            for m in plant.upstream:
                if not 0 <= m < n or i not in self.hydro[m].downstream:
                    raise ValueError(f"plant {i}: inconsistent upstream reference {m}")
            for m in plant.downstream:
                if not 0 <= m < n or i not in self.hydro[m].upstream:
                    raise ValueError(f"plant {i}: inconsistent downstream reference {m}")
            if plant.run_of_river and plant.initial_storage is not None:
                raise ValueError(f"plant {i}: run-of-river plants carry no initial storage")
        for real in self.inflow_process.realizations:
            if real.data.shape != (n,):
                raise ValueError("inflow realization length must match the number of hydro plants")

    @property
    def reservoir_indices(self) -> list[int]:
        return [i for i, p in enumerate(self.hydro) if not p.run_of_river]

    @property
    def state_dim(self) -> int:
        return len(self.reservoir_indices)

    @property
    def initial_storage(self) -> np.ndarray:
        return np.array([self.hydro[i].initial_storage for i in self.reservoir_indices])

    @property
    def efficiencies(self) -> np.ndarray:
        return np.array([p.efficiency for p in self.hydro])


@dataclass(eq=False)
class SystemState:
    """Per-plant available water at the start of a stage, plus its energy value."""

    water: np.ndarray  # reservoir plants: storage + inflow; run-of-river: inflow
    energy_potential: float  # phi1 = sum_h r_h * water_h

    def __post_init__(self):
        self.water = np.asarray(self.water, dtype=float)


def make_state(inst: HPOPInstance, storage: np.ndarray, realization: Realization) -> SystemState:
    """Combine incoming storage and an inflow draw into the stage-opening state."""
    storage = np.asarray(storage, dtype=float)
    water = inst.inflow_scale * realization.data.copy()
    for k, i in enumerate(inst.reservoir_indices):
        water[i] += storage[k]
    return SystemState(water, float(inst.efficiencies @ water))


def initial_state(inst: HPOPInstance, realization: Realization | None = None) -> SystemState:
    """State at the first stage: initial storage plus a deterministic inflow (zero by default)."""
    if realization is None:
        realization = Realization(-1, 1.0, np.zeros(len(inst.hydro)))
    return make_state(inst, inst.initial_storage, realization)


@dataclass(eq=False)
class StageTemplate:
    """Frozen stage LP skeleton plus the maps that vary it per stage."""

    instance: HPOPInstance
    base_lp: LinearProgram
    linking_matrix: np.ndarray  # (eq rows, state dim): incoming storage -> rhs
    rhs_random_rows: np.ndarray  # balance row index of each hydro plant
    state_extract: np.ndarray  # storage variable index per state component
    theta_index: int

    def __post_init__(self):
        if self.linking_matrix.shape[0] != self.base_lp.num_rows:
            raise ValueError("linking matrix row count must equal the equality row count")


def build_template(inst: HPOPInstance) -> StageTemplate:
    """Assemble the stage LP skeleton for an instance.

    The rhs left in base_lp carries only the demand; balance rows are
    filled in per stage from the incoming state and the inflow draw.
    """
    hydro, thermal = inst.hydro, inst.thermal
    nh, nf = len(hydro), len(thermal)
    res = inst.reservoir_indices
    nr = len(res)
    row_of_plant = {}
    for k, i in enumerate(res):
        row_of_plant[i] = k
    ror = [i for i in range(nh) if hydro[i].run_of_river]
    for k, i in enumerate(ror):
        row_of_plant[i] = nr + k

    # Column offsets per block.
    ox = 0
    oy = ox + nr
    osp = oy + nh
    opm = osp + nh
    og = opm + nh
    op = og + nf
    ow = op + 1
    otheta = ow + 1
    n = otheta + 1
    m = nh + 1

    A = np.zeros((m, n))
    for i, plant in enumerate(hydro):
        row = row_of_plant[i]
        if not plant.run_of_river:
            A[row, ox + res.index(i)] = 1.0
        A[row, oy + i] = 1.0
        A[row, osp + i] = 1.0
        A[row, opm + i] = -1.0
        for mup in plant.upstream:
            A[row, oy + mup] -= 1.0
            A[row, osp + mup] -= 1.0
        for mdn in plant.downstream:
            A[row, opm + mdn] += 1.0
    demand_row = nh
    for i, plant in enumerate(hydro):
        A[demand_row, oy + i] = plant.efficiency
    for f in range(nf):
        A[demand_row, og + f] = 1.0
    A[demand_row, op] = 1.0
    A[demand_row, ow] = -1.0

    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    for k, i in enumerate(res):
        lower[ox + k] = hydro[i].storage_min
        upper[ox + k] = hydro[i].storage_cap
    for i, plant in enumerate(hydro):
        upper[oy + i] = plant.turbine_cap
        upper[opm + i] = plant.pump_cap
    for f, plant in enumerate(thermal):
        lower[og + f] = plant.generation_min
        upper[og + f] = plant.generation_cap

    cost = np.zeros(n)
    for f, plant in enumerate(thermal):
        cost[og + f] = plant.unit_cost
    cost[op] = inst.penalty
    cost[otheta] = 1.0  # rescaled by the discount at instantiation

    rhs = np.zeros(m)
    rhs[demand_row] = inst.demand

    linking = np.zeros((m, nr))
    for k, i in enumerate(res):
        linking[row_of_plant[i], k] = 1.0
    random_rows = np.array([row_of_plant[i] for i in range(nh)], dtype=int)
    state_extract = np.array([ox + k for k in range(nr)], dtype=int)

    base = LinearProgram(cost, A, rhs, lower, upper)
    return StageTemplate(inst, base, linking, random_rows, state_extract, otheta)


def stage_rhs(tmpl: StageTemplate, incoming, realization: Realization | None = None) -> np.ndarray:
    """Balance/demand right-hand side for one (state, inflow) pair."""
    inst = tmpl.instance
    rhs = tmpl.base_lp.eq_rhs.copy()
    if isinstance(incoming, SystemState):
        if incoming.water.shape[0] != len(inst.hydro):
            raise ValueError("state water vector must have one entry per hydro plant")
        rhs[tmpl.rhs_random_rows] += incoming.water
    else:
        if realization is None:
            raise ValueError("a realization is required when passing raw storage")
        incoming = np.asarray(incoming, dtype=float)
        if incoming.shape[0] != tmpl.linking_matrix.shape[1]:
            raise ValueError("incoming storage length must match the state dimension")
        rhs += tmpl.linking_matrix @ incoming
        rhs[tmpl.rhs_random_rows] += inst.inflow_scale * realization.data
    return rhs


def instantiate_stage(
    tmpl: StageTemplate,
    incoming,
    realization: Realization | None = None,
    cuts=(),
    floor: float = 0.0,
    discount: float = 1.0,
) -> LinearProgram:
    """Concrete stage LP for one (state, inflow) pair under the current cuts.

    ``incoming`` is either a SystemState (inflow already folded in, no
    realization needed: first stages and sampled scan states) or the
    previous stage's storage vector, in which case ``realization``
    supplies the inflow written into the balance rows.

    Each cut contributes one row  theta - beta'x - slack = alpha  with a
    fresh slack column; with no cuts theta is pinned to the floor value.
    """
    if not 0.0 < discount <= 1.0:
        raise ValueError(f"discount {discount} outside (0, 1]")
    base = tmpl.base_lp
    m, n = base.num_rows, base.num_vars
    rhs = stage_rhs(tmpl, incoming, realization)
    ncuts = len(cuts)
    cost = np.concatenate([base.objective, np.zeros(ncuts)])
    cost[tmpl.theta_index] = discount
    lower = np.concatenate([base.var_lower, np.zeros(ncuts)])
    upper = np.concatenate([base.var_upper, np.full(ncuts, np.inf)])
    lower[tmpl.theta_index] = floor
    if ncuts == 0:
        upper[tmpl.theta_index] = floor
        return LinearProgram(cost, base.eq_matrix.copy(), rhs, lower, upper)

    A = np.zeros((m + ncuts, n + ncuts))
    A[:m, :n] = base.eq_matrix
    betas = np.array([cut.beta for cut in cuts], dtype=float)
    if betas.ndim != 2 or betas.shape[1] != tmpl.state_extract.shape[0]:
        raise ValueError("cut dimension does not match the state dimension")
    cut_rows = m + np.arange(ncuts)
    A[cut_rows, tmpl.theta_index] = 1.0
    A[np.ix_(cut_rows, tmpl.state_extract)] = -betas
    A[cut_rows, n + np.arange(ncuts)] = -1.0
    full_rhs = np.concatenate([rhs, [cut.alpha for cut in cuts]])
    return LinearProgram(cost, A, full_rhs, lower, upper)


def extract_state(sol, tmpl: StageTemplate, next_realization: Realization) -> SystemState:
    """State opening the next stage: post-decision storage plus the next inflow."""
    if sol.status != "optimal":
        raise ValueError(f"cannot extract a state from a {sol.status} solution")
    return make_state(tmpl.instance, sol.primal[tmpl.state_extract], next_realization)


def stage_cost(sol, tmpl: StageTemplate, discount: float = 1.0) -> float:
    """Immediate cost of a stage solution, net of the cost-to-go term."""
    return float(sol.objective - discount * sol.primal[tmpl.theta_index])


def build_hpop(
    num_plants: int = 1,
    demand: float = 1000.0,
    num_realizations: int = 5,
    inflow_scale: float = 1.0,
    strict: bool = False,
) -> HPOPInstance:
    """Benchmark instance for a preset (plant count, demand, realization count).

    One plant selects the large mid-cascade reservoir (h3); three plants
    select h2..h4; six the full cascade. Upstream/downstream links are
    restricted to the selected subset.
    """
    if num_plants not in _PRESET_PLANTS:
        raise ValueError(f"num_plants must be one of {sorted(_PRESET_PLANTS)}, got {num_plants}")
    if num_realizations == 5:
        inflows, probs = _INFLOWS_5, _PROBS_5
    elif num_realizations == 12:
        inflows, probs = _INFLOWS_12, _PROBS_12
    else:
        raise ValueError(f"num_realizations must be 5 or 12, got {num_realizations}")
    if strict and float(demand) not in _PRESET_DEMANDS:
        raise ValueError(f"demand {demand} is not a preset value {_PRESET_DEMANDS}")
    if demand < 0:
        raise ValueError("demand must be nonnegative")

    selected = _PRESET_PLANTS[num_plants]
    pos = {plant_id: k for k, plant_id in enumerate(selected)}
    hydro = []
    for plant_id in selected:
        i = plant_id - 1
        hydro.append(
            HydroPlant(
                efficiency=_HYDRO_EFFICIENCY[i],
                turbine_cap=_HYDRO_TURBINE_CAP[i],
                storage_cap=_HYDRO_STORAGE_CAP[i],
                initial_storage=_HYDRO_INITIAL[i],
                upstream=tuple(pos[u] for u in _HYDRO_UPSTREAM[i] if u in pos),
                downstream=tuple(pos[d] for d in _HYDRO_DOWNSTREAM[i] if d in pos),
            )
        )
    thermal = [ThermalPlant(cap, cost) for cap, cost in zip(_THERMAL_CAP, _THERMAL_COST)]

    total = sum(probs)
    cols = [plant_id - 1 for plant_id in selected]
    realizations = [
        Realization(k, p / total, np.array([row[c] for c in cols]))
        for k, (row, p) in enumerate(zip(inflows, probs))
    ]
    process = DiscreteProcess(realizations)
    return HPOPInstance(hydro, thermal, float(demand), _PENALTY, process, inflow_scale)


def instance_to_dict(inst: HPOPInstance) -> dict:
    return {
        "format": INSTANCE_FORMAT,
        "c0": inst.inflow_scale,
        "demand": inst.demand,
        "penalty": inst.penalty,
        "hydro": [
            {
                "efficiency": p.efficiency,
                "turbine_cap": p.turbine_cap,
                "storage_cap": p.storage_cap,
                "storage_min": p.storage_min,
                "initial_storage": p.initial_storage,
                "upstream": list(p.upstream),
                "downstream": list(p.downstream),
                "pump_cap": p.pump_cap,
            }
            for p in inst.hydro
        ],
        "thermal": [
            {
                "generation_cap": p.generation_cap,
                "generation_min": p.generation_min,
                "unit_cost": p.unit_cost,
            }
            for p in inst.thermal
        ],
        "inflow": {
            "stationary": inst.inflow_process.stationary,
            "realizations": [r.data.tolist() for r in inst.inflow_process.realizations],
            "probabilities": [r.probability for r in inst.inflow_process.realizations],
        },
    }


def instance_from_dict(doc: dict) -> HPOPInstance:
    try:
        if doc.get("format") != INSTANCE_FORMAT:
            raise SchemaError(f"unsupported instance format {doc.get('format')!r}")
        for section in ("hydro", "thermal", "demand", "penalty", "inflow"):
            if section not in doc:
                raise SchemaError(f"missing section {section!r}")
        hydro = [
            HydroPlant(
                efficiency=float(p["efficiency"]),
                turbine_cap=float(p["turbine_cap"]),
                storage_cap=None if p.get("storage_cap") is None else float(p["storage_cap"]),
                storage_min=float(p.get("storage_min", 0.0)),
                initial_storage=(
                    None if p.get("initial_storage") is None else float(p["initial_storage"])
                ),
                upstream=tuple(int(u) for u in p.get("upstream", ())),
                downstream=tuple(int(d) for d in p.get("downstream", ())),
                pump_cap=float(p.get("pump_cap", 0.0)),
            )
            for p in doc["hydro"]
        ]
        thermal = [
            ThermalPlant(
                generation_cap=float(p["generation_cap"]),
                unit_cost=float(p["unit_cost"]),
                generation_min=float(p.get("generation_min", 0.0)),
            )
            for p in doc["thermal"]
        ]
        inflow = doc["inflow"]
        probs = [float(x) for x in inflow["probabilities"]]
        reals = [np.asarray(r, dtype=float) for r in inflow["realizations"]]
        if len(probs) != len(reals):
            raise SchemaError("realizations and probabilities differ in length")
        total = sum(probs)
        if total <= 0:
            raise SchemaError("probabilities must have a positive sum")
        realizations = [Realization(k, p / total, r) for k, (r, p) in enumerate(zip(reals, probs))]
        process = DiscreteProcess(realizations, stationary=bool(inflow.get("stationary", True)))
        return HPOPInstance(
            hydro,
            thermal,
            float(doc["demand"]),
            float(doc["penalty"]),
            process,
            inflow_scale=float(doc.get("c0", 1.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"malformed instance document: {exc}") from exc


def save_instance(inst: HPOPInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2)
        fh.write("\n")


def load_instance(path) -> HPOPInstance:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}") from exc
    return instance_from_dict(doc)
