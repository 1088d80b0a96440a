import math

import numpy as np
import pytest

from branchflow import (
    OptimizerConfig,
    TimeGrid,
    baseline_upper,
    derivative_lp_norm,
    kirchhoff_residual,
    local_search,
    lower_bound,
    make_atomic_path,
    make_graph,
    metric_probe,
    optimize_weights,
    power_cost,
)
from branchflow.graph import is_never_cyclic
from branchflow.optimize import direct_topology, instance_connector_witness

from conftest import random_path


def delta(x, n_samples=4):
    return make_atomic_path([np.atleast_1d(x)], np.ones((1, n_samples)), TimeGrid(n_samples))


FAST = OptimizerConfig(k_max=1, iterations=8, seed=0, multi_start=1, sweeps=2,
                       subgradient_steps=5)


# ---------------------------------------------------------------------------
# weight optimization
# ---------------------------------------------------------------------------

def test_single_edge_weight_forced():
    grid = TimeGrid(4)
    G = make_graph([[0.1], [0.8]], [(0, 1)], np.zeros((1, 4)), grid)
    tau = power_cost(0.5)
    out = optimize_weights(G, delta(0.1), delta(0.8), tau, 2, 0.1, FAST)
    assert np.allclose(out.weights, 1.0, atol=1e-9)


def test_infeasible_topology_rejected():
    grid = TimeGrid(4)
    G = make_graph([[0.1], [0.8]], [(1, 0)], np.zeros((1, 4)), grid)  # wrong direction
    with pytest.raises(ValueError, match="infeasible"):
        optimize_weights(G, delta(0.1), delta(0.8), power_cost(0.5), 2, 0.1, FAST)


def test_v_graph_consolidates_on_short_route():
    grid = TimeGrid(4)
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.1], [0.5, 0.8]])
    edges = [(0, 2), (2, 1), (0, 3), (3, 1)]
    G = make_graph(pts, edges, np.zeros((4, 4)), grid)
    x = make_atomic_path([pts[0]], np.ones((1, 4)), grid)
    y = make_atomic_path([pts[1]], np.ones((1, 4)), grid)
    out = optimize_weights(G, x, y, power_cost(0.5), 2, 0.1, FAST)
    # brute-force oracle over mass splits: all mass belongs on the short route
    short = 2 * math.hypot(0.5, 0.1)
    long = math.hypot(0.5, 0.8) + math.hypot(0.5, 0.8)
    splits = np.linspace(0, 1, 101)
    costs = splits**0.5 * short + (1 - splits) ** 0.5 * long
    assert np.argmin(costs) == len(splits) - 1
    assert np.allclose(out.weights[[0, 1]], 1.0, atol=1e-9)
    assert np.allclose(out.weights[[2, 3]], 0.0, atol=1e-9)


def test_lambda_sweep_reduces_witness_derivative():
    # oscillating demand at two nearby sinks: a sink-to-sink shuttle keeps the
    # long feed edges steady, so the high-lambda witness swings less
    n_samples = 8
    t = np.arange(n_samples) / n_samples
    grid = TimeGrid(n_samples)
    s = 0.25 * np.sin(2 * np.pi * t)
    source = make_atomic_path([[0.0, 0.0]], np.ones((1, n_samples)), grid)
    sinks = make_atomic_path([[0.9, 0.05], [0.9, -0.05]], np.vstack([0.5 + s, 0.5 - s]), grid)
    derivs = []
    for lam in (0.01, 10.0):
        rep = local_search(source, sinks, power_cost(0.5), 2, lam,
                           OptimizerConfig(k_max=1, iterations=12, seed=1))
        derivs.append(derivative_lp_norm(rep.witness, 2))
    assert derivs[1] <= derivs[0] + 1e-9


# ---------------------------------------------------------------------------
# baselines and seeds
# ---------------------------------------------------------------------------

def test_baseline_upper_returns_finite_energy_and_witness():
    rng = np.random.default_rng(0)
    mu = random_path(rng, n=1, atoms=3)
    nu = random_path(rng, n=1, atoms=2)
    val, witness = baseline_upper(mu, nu, power_cost(0.8), 2, 0.5, 2)
    assert math.isfinite(val)
    assert witness.n_edges > 0


def test_baseline_upper_warns_for_inadmissible_cost():
    rng = np.random.default_rng(1)
    mu = random_path(rng, n=2, atoms=3)
    nu = random_path(rng, n=2, atoms=2)
    with pytest.warns(UserWarning, match="admissible"):
        baseline_upper(mu, nu, power_cost(0.4), 2, 0.5, 2)


def test_instance_connector_witness_feasible():
    rng = np.random.default_rng(2)
    for n in (1, 2):
        mu = random_path(rng, n=n, atoms=3)
        nu = random_path(rng, n=n, atoms=2)
        for k in (1, 2):
            W = instance_connector_witness(mu, nu, k)
            assert kirchhoff_residual(W, mu, nu) <= 1e-9


def test_direct_topology_complete():
    rng = np.random.default_rng(3)
    mu = random_path(rng, n=1, atoms=2)
    nu = random_path(rng, n=1, atoms=2)
    G = direct_topology(mu, nu)
    n_points = len(mu.support() | nu.support())
    assert G.n_edges == n_points * (n_points - 1)


# ---------------------------------------------------------------------------
# local search
# ---------------------------------------------------------------------------

def test_delta_pair_bracket_collapses():
    x, y = delta(0.1), delta(0.8)
    rep = local_search(x, y, power_cost(0.5), 2, 0.1, FAST)
    assert rep.upper == pytest.approx(0.7, abs=1e-6)
    assert abs(rep.gap) <= 1e-6
    assert rep.witness.n_edges == 1


def test_identical_paths_empty_witness():
    rng = np.random.default_rng(4)
    a = random_path(rng, n=1, atoms=3)
    rep = local_search(a, a, power_cost(0.5), 2, 0.1, FAST)
    assert rep.upper <= 1e-9
    assert rep.witness.n_edges == 0


def test_report_invariants_random_instances():
    tau = power_cost(0.8)
    for seed in range(8):
        rng = np.random.default_rng(seed)
        mu = random_path(rng, n=1, atoms=3)
        nu = random_path(rng, n=1, atoms=2)
        rep = local_search(mu, nu, tau, 2, 0.3, FAST)
        assert rep.lower <= rep.upper + 1e-6
        assert is_never_cyclic(rep.witness, cap=512)
        if rep.witness.n_edges:
            assert kirchhoff_residual(rep.witness, mu, nu) <= 1e-6
        assert rep.upper <= min(rep.baseline_upper.values()) + 1e-9


def test_shared_support_instances_stay_feasible():
    n_samples = 8
    t = np.arange(n_samples) / n_samples
    grid = TimeGrid(n_samples)
    wp = np.vstack([0.5 + 0.25 * np.sin(2 * np.pi * t), 0.5 - 0.25 * np.sin(2 * np.pi * t)])
    wm = np.vstack([0.5 + 0.25 * np.cos(2 * np.pi * t), 0.5 - 0.25 * np.cos(2 * np.pi * t)])
    mu = make_atomic_path([[-0.3], [0.4]], wp, grid)
    nu = make_atomic_path([[-0.3], [0.4]], wm, grid)
    rep = local_search(mu, nu, power_cost(0.5), 2, 0.1, FAST)
    assert kirchhoff_residual(rep.witness, mu, nu) <= 1e-6
    assert is_never_cyclic(rep.witness, cap=512)
    assert rep.lower <= rep.upper + 1e-6


def test_determinism_same_seed_same_report():
    rng = np.random.default_rng(5)
    mu = random_path(rng, n=1, atoms=3)
    nu = random_path(rng, n=1, atoms=2)
    cfg = OptimizerConfig(k_max=1, iterations=15, seed=42)
    rep1 = local_search(mu, nu, power_cost(0.7), 2, 0.2, cfg)
    rep2 = local_search(mu, nu, power_cost(0.7), 2, 0.2, cfg)
    assert rep1.upper == rep2.upper
    assert rep1.lower == rep2.lower
    assert np.array_equal(rep1.witness.weights, rep2.witness.weights)


def test_witness_beats_lower_bound_from_module():
    rng = np.random.default_rng(6)
    mu = random_path(rng, n=2, atoms=3)
    nu = random_path(rng, n=2, atoms=2)
    tau = power_cost(0.8)
    rep = local_search(mu, nu, tau, 2, 0.3, FAST)
    assert lower_bound(mu, nu, tau, 2, 0.3) <= rep.upper + 1e-6


# ---------------------------------------------------------------------------
# metric probe
# ---------------------------------------------------------------------------

def test_metric_probe_requires_three_paths():
    rng = np.random.default_rng(7)
    a = random_path(rng)
    with pytest.raises(ValueError):
        metric_probe([a, a], power_cost(0.5), 2, 0.1)


def test_metric_probe_identical_pair_bracket():
    rng = np.random.default_rng(8)
    a = random_path(rng, n=1, atoms=3)
    b = random_path(rng, n=1, atoms=2)
    report = metric_probe([a, a, b], power_cost(0.5), 2, 0.1, FAST)
    assert report["brackets"]["0,1"]["upper"] <= 1e-9
    assert report["brackets"]["0,1"]["lower"] <= 1e-12


def test_metric_probe_triangle_defects_within_gap_budget():
    tau = power_cost(0.8)
    rng = np.random.default_rng(9)
    paths = [random_path(rng, n=1, atoms=2, n_samples=4) for _ in range(3)]
    report = metric_probe(paths, tau, 2, 0.2, FAST)
    assert not any(t["flagged"] for t in report["triangles"])


def test_metric_probe_convergence_family():
    rng = np.random.default_rng(10)
    base = random_path(rng, n=1, atoms=2, n_samples=4)
    family = []
    t = np.arange(4) / 4
    for m in (4, 6):
        phases = np.arange(base.n_atoms)[:, None]
        w = base.weights * (1.0 + 2.0**-m * np.sin(2 * np.pi * t[None, :] + phases))
        w /= w.sum(axis=0)
        family.append(make_atomic_path(base.points, w, base.grid))
    others = [random_path(rng, n=1, atoms=2, n_samples=4) for _ in range(2)]
    report = metric_probe([base] + others, power_cost(0.9), 2, 0.1, FAST,
                          convergence_family=(family, base))
    probes = report["convergence"]
    assert probes[-1]["lid1_terms"] < probes[0]["lid1_terms"]
    assert probes[-1]["upper"] < 0.1
