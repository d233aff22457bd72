import math

import numpy as np
import pytest

from sddprh.horizon import FiniteModel, value_iteration_fixed_point
from sddprh.model import (
    DiscreteProcess,
    HPOPInstance,
    HydroPlant,
    Realization,
    ThermalPlant,
)
from sddprh.rolling import draw_sample_path
from sddprh.sddp import Cut, CutPool, TrainConfig
from sddprh.stationary import (
    StationaryModel,
    evaluate_stationary,
    sample_horizon,
    train_stationary,
)


def reservoir_toy(inflow_values, probs, demand=3.0, thermal=((2.0, 3.0),), penalty=60.0,
                  cap=8.0, x0=4.0, efficiency=1.0, turbine_cap=50.0):
    process = DiscreteProcess(
        [Realization(k, float(p), np.array([v])) for k, (v, p) in enumerate(zip(inflow_values, probs))]
    )
    hydro = [HydroPlant(efficiency, turbine_cap, storage_cap=cap, initial_storage=x0)]
    plants = [ThermalPlant(c, cost) for c, cost in thermal]
    return HPOPInstance(hydro, plants, demand, penalty, process)


def grid_oracle_model(inst, grid_step=0.5):
    """Discretized single-reservoir control problem for value iteration.

    Independent arithmetic: water in minus next storage is released;
    releases are turbined up to the cap, demand is covered merit-order by
    thermal plants and then the penalty.
    """
    plant = inst.hydro[0]
    levels = np.arange(0.0, plant.storage_cap + 1e-9, grid_step)
    S = len(levels)
    reals = inst.inflow_process.realizations
    R = len(reals)
    cost = np.full((R, S, S), np.inf)
    for r, xi in enumerate(reals):
        inflow = inst.inflow_scale * float(xi.data[0])
        for i, s in enumerate(levels):
            water = s + inflow
            for j, s_next in enumerate(levels):
                release = water - s_next
                if release < -1e-12:
                    continue
                energy = plant.efficiency * min(release, plant.turbine_cap)
                needed = max(0.0, inst.demand - energy)
                c = 0.0
                for tp in sorted(inst.thermal, key=lambda t: t.unit_cost):
                    used = min(needed, tp.generation_cap)
                    c += used * tp.unit_cost
                    needed -= used
                c += needed * inst.penalty
                cost[r, i, j] = c
    return FiniteModel(np.array([x.probability for x in reals]), cost), levels


def test_sample_horizon_tiny_gamma_always_one():
    rng = np.random.default_rng(0)
    assert all(sample_horizon(1e-9, rng) == 1 for _ in range(200))


def test_sample_horizon_mean():
    rng = np.random.default_rng(7)
    draws = np.array([sample_horizon(0.9, rng) for _ in range(100_000)])
    assert abs(draws.mean() - 10.0) < 0.3


def test_sample_horizon_reproducible_and_validated():
    a = [sample_horizon(0.7, np.random.default_rng(3)) for _ in range(50)]
    b = [sample_horizon(0.7, np.random.default_rng(3)) for _ in range(50)]
    assert a == b
    with pytest.raises(ValueError):
        sample_horizon(1.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_horizon(0.0, np.random.default_rng(0))


def test_sample_horizon_pmf():
    rng = np.random.default_rng(11)
    gamma = 0.8
    n = 200_000
    draws = np.array([sample_horizon(gamma, rng) for _ in range(n)])
    for k in range(1, 15):
        pk = (1 - gamma) * gamma ** (k - 1)
        se = math.sqrt(pk * (1 - pk) / n)
        assert abs((draws == k).mean() - pk) <= 4 * se


def test_sample_horizon_capped():
    rng = np.random.default_rng(5)
    cap = math.ceil(50.0 / (1.0 - 0.99))
    draws = [sample_horizon(0.99, rng) for _ in range(20_000)]
    assert max(draws) <= cap


def test_stationary_model_validation():
    inst = reservoir_toy([2.0], [1.0])
    with pytest.raises(ValueError):
        StationaryModel(inst, gamma=1.0)
    with pytest.raises(ValueError):
        StationaryModel(inst, gamma=0.0)
    StationaryModel(inst, gamma=0.5)


def test_train_stationary_matches_grid_value_iteration():
    # Deterministic inflow, integer-friendly data: the grid restriction is
    # exact, so the discretized fixed point equals the continuous one.
    inst = reservoir_toy([2.0], [1.0], demand=3.0, thermal=((1.0, 4.0),), penalty=40.0,
                         cap=6.0, x0=4.0)
    model = StationaryModel(inst, gamma=0.5)
    pool, report = train_stationary(
        model, TrainConfig(max_iterations=600, stall_window=25, stall_rel_tol=1e-10, rng_seed=0)
    )
    oracle, levels = grid_oracle_model(inst, grid_step=0.5)
    g_star = value_iteration_fixed_point(oracle, 0.5)
    idx = int(np.argmin(np.abs(levels - 4.0)))
    # The tracked bound is the expected cost-to-go at the initial storage.
    assert report.lower_bounds[-1] == pytest.approx(g_star[idx], abs=1e-3)
    # Every shared cut stays below the fixed point across the whole grid.
    for level, truth in zip(levels, g_star):
        assert pool.value(2, np.array([level])) <= truth + 1e-6


def test_train_stationary_small_gamma_structural():
    inst = reservoir_toy([2.0, 1.0], [0.5, 0.5])
    model = StationaryModel(inst, gamma=0.1)
    pool, report = train_stationary(
        model, TrainConfig(max_iterations=400, stall_window=20, stall_rel_tol=1e-8, rng_seed=1)
    )
    assert report.reason in ("stall", "iterations")
    assert report.iterations >= 1
    assert np.all(np.diff(report.lower_bounds) >= -1e-9)
    assert pool.shared


def test_train_stationary_benchmark_small_gamma_quick():
    # Near-myopic discounting on the one-plant benchmark: short sampled
    # horizons, quick termination, well-formed report.
    from sddprh.model import build_hpop

    inst = build_hpop(num_plants=1, demand=1000.0, num_realizations=5)
    model = StationaryModel(inst, gamma=0.1)
    pool, report = train_stationary(
        model, TrainConfig(max_iterations=80, stall_window=15, stall_rel_tol=1e-6, rng_seed=0)
    )
    assert report.reason in ("stall", "iterations")
    assert report.lower_bounds.shape == (report.iterations,)
    assert report.forward_costs.shape[0] == report.iterations
    mean, std = report.upper_bound_stats()
    assert np.isfinite(mean) and np.isfinite(std)


def test_train_stationary_reproducible():
    inst = reservoir_toy([3.0, 1.0], [0.4, 0.6])
    model = StationaryModel(inst, gamma=0.6)
    cfg = TrainConfig(max_iterations=60, stall_window=10, stall_rel_tol=1e-9, rng_seed=9)
    pool1, r1 = train_stationary(model, cfg)
    pool2, r2 = train_stationary(model, cfg)
    assert np.array_equal(r1.lower_bounds, r2.lower_bounds)
    c1, c2 = pool1.cuts_for(2), pool2.cuts_for(2)
    assert len(c1) == len(c2)
    for a, b in zip(c1, c2):
        assert a.alpha == b.alpha and np.array_equal(a.beta, b.beta)


def test_shared_pool_value_monotone_in_cut_count():
    # Appending cuts can only raise the cost-to-go model, pointwise.
    inst = reservoir_toy([3.0, 1.0], [0.4, 0.6])
    model = StationaryModel(inst, gamma=0.6)
    pool, _ = train_stationary(
        model, TrainConfig(max_iterations=50, stall_window=10, stall_rel_tol=1e-9, rng_seed=2)
    )
    cuts = list(pool.cuts_for(2))
    grid = [np.array([x]) for x in np.linspace(0.0, 8.0, 9)]
    previous = [pool.floor] * len(grid)
    partial = CutPool.stationary(state_dim=1, floor=pool.floor)
    for cut in cuts:
        partial.cuts_for(2).append(cut)
        current = [partial.value(2, x) for x in grid]
        assert all(c >= p - 1e-12 for c, p in zip(current, previous))
        previous = current


def test_evaluate_floor_pool_constant_cost():
    # No hydro at all: every roll is the same thermal dispatch.
    process = DiscreteProcess([Realization(0, 1.0, np.zeros(0))])
    inst = HPOPInstance([], [ThermalPlant(10.0, 7.0)], 4.0, 500.0, process)
    model = StationaryModel(inst, gamma=0.5)
    pool = CutPool.stationary(state_dim=0, floor=0.0)
    path = draw_sample_path(inst.inflow_process, 25, np.random.default_rng(0))
    result = evaluate_stationary(model, pool, path)
    assert result.zbar == pytest.approx(28.0)
    assert all(r.stage_cost == pytest.approx(28.0) for r in result.records)


def test_evaluate_single_roll():
    inst = reservoir_toy([2.0], [1.0])
    model = StationaryModel(inst, gamma=0.5)
    pool = CutPool.stationary(state_dim=1, floor=0.0)
    path = draw_sample_path(inst.inflow_process, 1, np.random.default_rng(0))
    result = evaluate_stationary(model, pool, path)
    assert len(result.records) == 1
    assert result.zbar == result.records[0].stage_cost


def test_high_gamma_not_worse_than_low_gamma():
    # Far-sighted training should not lose to near-myopic on a long path.
    inst = reservoir_toy([4.0, 0.0], [0.5, 0.5], demand=3.0, thermal=((1.0, 5.0),),
                         penalty=50.0, cap=10.0, x0=5.0, turbine_cap=3.5)
    cfg = TrainConfig(max_iterations=150, stall_window=20, stall_rel_tol=1e-5, rng_seed=4,
                      cut_violation_tol=1e-4)
    pool_hi, _ = train_stationary(StationaryModel(inst, gamma=0.9), cfg)
    pool_lo, _ = train_stationary(StationaryModel(inst, gamma=0.1), cfg)
    path = draw_sample_path(inst.inflow_process, 800, np.random.default_rng(123))
    z_hi = evaluate_stationary(StationaryModel(inst, 0.9), pool_hi, path).zbar
    z_lo = evaluate_stationary(StationaryModel(inst, 0.1), pool_lo, path).zbar
    assert z_hi <= z_lo + 0.05 * abs(z_lo) + 1e-9
