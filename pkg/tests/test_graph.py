import itertools
import math

import numpy as np
import pytest

from branchflow import (
    TimeGrid,
    decompose,
    derivative_graph,
    derivative_lp_norm,
    eliminate_cycles,
    energy,
    enumerate_cycles,
    holder_check,
    kirchhoff_residual,
    m_tau_p,
    make_atomic_path,
    make_graph,
    power_cost,
    separate_supports,
    tv_norm,
)
from branchflow.graph import (
    CycleExplosionError,
    cancel_antiparallel,
    is_never_cyclic,
    prune_zero_edges,
)

from conftest import cyclic_flow_instance, random_graph


def unit_edge(n_samples=4, weight=1.0, length=1.0):
    grid = TimeGrid(n_samples)
    return make_graph([[0.0], [length]], [(0, 1)], np.full((1, n_samples), weight), grid)


def delta_at(x, n_samples=4):
    return make_atomic_path([np.atleast_1d(x)], np.ones((1, n_samples)), TimeGrid(n_samples))


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def test_constructor_merges_parallel_edges():
    grid = TimeGrid(2)
    G = make_graph([[0.0], [1.0]], [(0, 1), (0, 1)], [[0.3, 0.3], [0.2, 0.2]], grid)
    assert G.n_edges == 1
    assert np.allclose(G.weights, 0.5)


def test_constructor_rejects_self_loop_and_duplicates():
    grid = TimeGrid(2)
    with pytest.raises(ValueError, match="self loop"):
        make_graph([[0.0], [1.0]], [(0, 0)], [[1, 1]], grid)
    with pytest.raises(ValueError, match="distinct"):
        make_graph([[0.0], [0.0]], [(0, 1)], [[1, 1]], grid)
    with pytest.raises(ValueError, match="nonnegative"):
        make_graph([[0.0], [1.0]], [(0, 1)], [[-0.5, 1]], grid)


# ---------------------------------------------------------------------------
# balance
# ---------------------------------------------------------------------------

def test_kirchhoff_single_edge():
    G = unit_edge()
    assert kirchhoff_residual(G, delta_at(0.0), delta_at(1.0)) == 0.0


def test_kirchhoff_half_weight_deficit():
    G = unit_edge(weight=0.5)
    assert kirchhoff_residual(G, delta_at(0.0), delta_at(1.0)) == pytest.approx(0.5)


def test_kirchhoff_missing_support_point():
    G = unit_edge()
    with pytest.raises(ValueError, match="not a graph vertex"):
        kirchhoff_residual(G, delta_at(0.5), delta_at(1.0))


def test_kirchhoff_grid_mismatch():
    G = unit_edge(n_samples=4)
    with pytest.raises(ValueError, match="grids"):
        kirchhoff_residual(G, delta_at(0.0, n_samples=8), delta_at(1.0, n_samples=8))


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def test_tv_norm_single_edge():
    G = unit_edge(weight=1.0, length=2.0)
    assert tv_norm(G, 0) == pytest.approx(2.0)


def test_tv_norm_antiparallel_cancellation():
    grid = TimeGrid(4)
    G = make_graph([[0.0], [1.0]], [(0, 1), (1, 0)],
                   np.vstack([np.full(4, 0.7), np.full(4, 0.3)]), grid)
    assert tv_norm(G, 0) == pytest.approx(0.4)


def test_tv_norm_disjoint_edges_is_plain_sum():
    rng = np.random.default_rng(0)
    grid = TimeGrid(4)
    pts = rng.normal(size=(6, 2))
    edges = [(0, 1), (2, 3), (4, 5)]
    w = rng.uniform(0, 1, size=(3, 4))
    G = make_graph(pts, edges, w, grid)
    direct = float(sum(w[e, 1] * np.linalg.norm(pts[edges[e][1]] - pts[edges[e][0]]) for e in range(3)))
    assert tv_norm(G, 1) == pytest.approx(direct, abs=1e-12)


def test_m_tau_p_constant_integrand():
    G = unit_edge(weight=1.0, length=2.0)
    assert m_tau_p(G, power_cost(0.5), 2) == pytest.approx(2.0)


@pytest.mark.parametrize("p", [2.0, 3.0, math.inf])
def test_m_tau_p_half_active(p):
    n_samples = 8
    w = np.array([[1.0] * 4 + [0.0] * 4])
    G = make_graph([[0.0], [1.0]], [(0, 1)], w, TimeGrid(n_samples))
    expected = 1.0 if math.isinf(p) else 0.5 ** (1.0 / p)
    assert m_tau_p(G, power_cost(0.6), p) == pytest.approx(expected)


def test_m_tau_p_identity_with_tv_for_linear_cost():
    rng = np.random.default_rng(1)
    grid = TimeGrid(4)
    pts = rng.normal(size=(6, 2))
    edges = [(0, 1), (2, 3), (4, 5)]
    w = rng.uniform(0, 1, size=(3, 4))
    G = make_graph(pts, edges, w, grid)
    series = np.array([tv_norm(G, j) for j in range(4)])
    assert m_tau_p(G, power_cost(1.0), 2) == pytest.approx(float((np.mean(series**2)) ** 0.5), abs=1e-12)


def test_m_tau_p_monotone_in_weights():
    rng = np.random.default_rng(2)
    G = random_graph(rng, n=2, n_vertices=4)
    tau = power_cost(0.7)
    bumped = G.weights.copy()
    bumped[0] += 0.25
    assert m_tau_p(G.with_weights(bumped), tau, 2) >= m_tau_p(G, tau, 2) - 1e-15


def test_derivative_graph_values_and_periodicity():
    grid = TimeGrid(4)
    G = make_graph([[0.0], [1.0]], [(0, 1)], [[0.0, 1.0, 1.0, 0.0]], grid)
    dG = derivative_graph(G)
    assert np.allclose(dG.weights, [[4.0, 0.0, -4.0, 0.0]])
    assert dG.weights.sum() == pytest.approx(0.0)


def test_derivative_lp_norm_swap():
    G = make_graph([[0.0], [1.0]], [(0, 1)], [[0.0, 1.0]], TimeGrid(2))
    assert derivative_lp_norm(G, 2) == pytest.approx(2.0)


def test_derivative_lp_norm_homogeneous():
    rng = np.random.default_rng(3)
    G = random_graph(rng)
    assert derivative_lp_norm(G.with_weights(2 * G.weights), 2) == pytest.approx(
        2 * derivative_lp_norm(G, 2), abs=1e-12)


# ---------------------------------------------------------------------------
# cycles
# ---------------------------------------------------------------------------

def test_tree_has_no_cycles():
    grid = TimeGrid(2)
    G = make_graph([[0.0], [1.0], [2.0]], [(0, 1), (0, 2)], np.ones((2, 2)), grid)
    assert enumerate_cycles(G) == []


def test_triangle_single_cycle():
    grid = TimeGrid(2)
    G = make_graph([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
                   [(0, 1), (1, 2), (2, 0)], np.ones((3, 2)), grid)
    assert enumerate_cycles(G) == [(0, 1, 2)]


def test_antiparallel_two_cycle():
    grid = TimeGrid(2)
    G = make_graph([[0.0], [1.0]], [(0, 1), (1, 0)], np.ones((2, 2)), grid)
    cycles = enumerate_cycles(G)
    assert cycles == [(0, 1)]


def test_cycle_cap_explosion():
    grid = TimeGrid(2)
    pts = np.column_stack([np.arange(6.0), np.zeros(6)])
    edges = [(i, j) for i in range(6) for j in range(6) if i != j]
    G = make_graph(pts, edges, np.ones((len(edges), 2)), grid)
    with pytest.raises(CycleExplosionError):
        enumerate_cycles(G, cap=10)


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------

def test_decompose_acyclic_graph_is_identity():
    grid = TimeGrid(2)
    G = make_graph([[0.0], [1.0], [2.0]], [(0, 1), (1, 2)], np.ones((2, 2)), grid)
    dec = decompose(G, [])
    assert dec.extracted.shape == (0, 2)
    assert np.array_equal(dec.residual, G.weights)


def test_decompose_triangle_by_hand():
    grid = TimeGrid(4)
    G = make_graph([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [(0, 1), (1, 2), (2, 0)],
                   np.vstack([np.full(4, 0.5), np.full(4, 0.3), np.full(4, 0.9)]), grid)
    dec = decompose(G, [0])
    assert np.allclose(dec.extracted[0], 0.3)
    assert np.allclose(dec.residual[:, 0], [0.2, 0.0, 0.6])


def test_decompose_reconstruction_both_orders():
    # two triangles sharing the edge 0->1
    grid = TimeGrid(4)
    rng = np.random.default_rng(5)
    pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0]]
    edges = [(0, 1), (1, 2), (2, 0), (1, 3), (3, 0)]
    w = rng.uniform(0.2, 1.0, size=(5, 4))
    G = make_graph(pts, edges, w, grid)
    cycles = enumerate_cycles(G)
    assert len(cycles) == 2
    for order in itertools.permutations(range(2)):
        dec = decompose(G, order)
        recon = dec.residual.copy()
        for slot, ci in enumerate(dec.order):
            for e in cycles[ci]:
                recon[e] += dec.extracted[slot]
        assert np.allclose(recon, G.weights, atol=1e-12)
        # residual min over each cycle vanishes at every sample
        for cyc in cycles:
            assert np.max(dec.residual[list(cyc)].min(axis=0)) <= 1e-12


def test_decompose_invalid_permutation():
    grid = TimeGrid(2)
    G = make_graph([[0.0], [1.0]], [(0, 1), (1, 0)], np.ones((2, 2)), grid)
    with pytest.raises(ValueError, match="permutation"):
        decompose(G, [0, 0])


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

def test_energy_never_cyclic_two_term_formula():
    G, a_plus, a_minus = cyclic_flow_instance(np.random.default_rng(8))
    tau = power_cost(0.6)
    acyclic = eliminate_cycles(G, a_plus, a_minus, 2)
    rep = energy(acyclic, tau, 2, 0.7)
    assert rep.total == pytest.approx(
        m_tau_p(acyclic, tau, 2) + 0.7 * derivative_lp_norm(acyclic, 2), abs=1e-12)


def test_energy_constant_weights_zero_derivative_term():
    grid = TimeGrid(4)
    G = make_graph([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [(0, 1), (1, 2), (2, 0)],
                   0.5 * np.ones((3, 4)), grid)
    rep = energy(G, power_cost(0.5), 2, 1.0)
    assert rep.derivative_term == pytest.approx(0.0, abs=1e-12)
    assert rep.cycle_count == 1


def test_energy_two_cycle_exhaustive_max():
    grid = TimeGrid(4)
    rng = np.random.default_rng(9)
    pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0]]
    edges = [(0, 1), (1, 2), (2, 0), (1, 3), (3, 0)]
    w = rng.uniform(0.2, 1.0, size=(5, 4))
    G = make_graph(pts, edges, w, grid)
    tau = power_cost(0.5)
    rep = energy(G, tau, 2, 1.0)
    assert rep.exact_flag
    cycles = enumerate_cycles(G)
    lengths = G.lengths
    n = 4

    def bracket(order):
        dec = decompose(G, order)
        resid_d = n * (np.roll(dec.residual, -1, axis=1) - dec.residual)
        series = lengths @ np.abs(resid_d)
        val = float((np.mean(series**2)) ** 0.5)
        for slot, ci in enumerate(order):
            cyclen = lengths[list(cycles[ci])].sum()
            wd = n * (np.roll(dec.extracted[slot], -1) - dec.extracted[slot])
            val += float((np.mean((np.abs(wd) * cyclen) ** 2)) ** 0.5)
        return val

    manual = max(bracket(o) for o in itertools.permutations(range(2)))
    assert rep.derivative_term == pytest.approx(manual, abs=1e-12)


def test_energy_invariant_under_relabeling():
    rng = np.random.default_rng(10)
    G = random_graph(rng, n=2, n_vertices=5)
    tau = power_cost(0.7)
    rep = energy(G, tau, 2, 0.5)
    perm = rng.permutation(len(G.vertices))
    inv = np.argsort(perm)
    new_edges = [(inv[t], inv[h]) for t, h in G.edges]
    shuffle = rng.permutation(G.n_edges)
    G2 = make_graph(G.vertices[perm], [new_edges[i] for i in shuffle], G.weights[shuffle], G.grid)
    rep2 = energy(G2, tau, 2, 0.5)
    assert rep2.total == pytest.approx(rep.total, abs=1e-12)


# ---------------------------------------------------------------------------
# elimination and surgery
# ---------------------------------------------------------------------------

def test_eliminate_cycles_acyclic_identity():
    grid = TimeGrid(2)
    G = make_graph([[0.0], [1.0], [2.0]], [(0, 1), (1, 2)], np.ones((2, 2)), grid)
    out = eliminate_cycles(G, delta_at(0.0, 2), delta_at(2.0, 2), 2)
    assert out.n_edges == G.n_edges
    assert np.allclose(out.weights, G.weights)


def test_eliminate_cycles_removes_superimposed_triangle():
    G, a_plus, a_minus = cyclic_flow_instance(np.random.default_rng(12))
    out = eliminate_cycles(G, a_plus, a_minus, 2)
    assert is_never_cyclic(out)
    assert kirchhoff_residual(out, a_plus, a_minus) <= 1e-9


def test_eliminate_cycles_property_over_seeds():
    tau = power_cost(0.8)
    for seed in range(40):
        G, a_plus, a_minus = cyclic_flow_instance(np.random.default_rng(seed))
        out = eliminate_cycles(G, a_plus, a_minus, 2)
        assert is_never_cyclic(out)
        assert kirchhoff_residual(out, a_plus, a_minus) <= 1e-9
        assert energy(out, tau, 2, 0.5).total <= energy(G, tau, 2, 0.5).total + 1e-9
        # idempotent up to pruning
        again = eliminate_cycles(out, a_plus, a_minus, 2)
        assert again.n_edges == prune_zero_edges(out).n_edges


def test_eliminate_cycles_shared_support_rejected():
    G = unit_edge()
    with pytest.raises(ValueError, match="separate_supports"):
        eliminate_cycles(G, delta_at(0.0), delta_at(0.0), 2)


def test_separate_supports_disjoint_identity():
    a = delta_at(0.0)
    b = delta_at(1.0)
    moved, patch = separate_supports(a, b, 0.01)
    assert moved is b
    assert patch.n_edges == 0


def test_separate_supports_single_shared_atom():
    a = delta_at(0.0)
    b = delta_at(0.0)
    moved, patch = separate_supports(a, b, 0.01)
    assert patch.n_edges == 1
    assert np.linalg.norm(moved.points[0]) == pytest.approx(0.01)
    assert np.allclose(patch.weights, 1.0)
    # patch composes: single-edge graph for (a, b-moved) plus nothing needed
    assert kirchhoff_residual(patch, a, moved) == pytest.approx(0.0, abs=1e-15)


def test_separate_supports_patch_energy_bound():
    grid = TimeGrid(4)
    a = make_atomic_path([[0.0], [1.0]], 0.5 * np.ones((2, 4)), grid)
    b = make_atomic_path([[0.0], [1.0]], 0.5 * np.ones((2, 4)), grid)
    delta = 0.01
    moved, patch = separate_supports(a, b, delta)
    tau = power_cost(0.5)
    assert m_tau_p(patch, tau, math.inf) <= 2 * tau(1.0) * delta + 1e-12


def test_separate_supports_delta_too_large():
    grid = TimeGrid(2)
    a = make_atomic_path([[0.0], [0.05]], 0.5 * np.ones((2, 2)), grid)
    with pytest.raises(ValueError, match="half the minimum"):
        separate_supports(a, a, 0.04)


def test_cancel_antiparallel_preserves_balance():
    grid = TimeGrid(4)
    t = np.arange(4) / 4
    w_fwd = 0.6 + 0.3 * np.sin(2 * np.pi * t)
    w_bwd = 0.4 * np.ones(4)
    G = make_graph([[0.0], [1.0]], [(0, 1), (1, 0)], np.vstack([w_fwd, w_bwd]), grid)
    out = cancel_antiparallel(G)
    assert is_never_cyclic(out)
    # net flow preserved
    for j in range(4):
        net = sum(out.weights[e, j] * (1 if out.edges[e, 0] == 0 else -1) for e in range(out.n_edges))
        assert net == pytest.approx(w_fwd[j] - w_bwd[j], abs=1e-12)


# ---------------------------------------------------------------------------
# Hoelder bound
# ---------------------------------------------------------------------------

def test_holder_constant_weights():
    G = unit_edge(weight=0.7)
    assert holder_check(G, 2) <= 0.0


def test_holder_two_sample_equality_at_p_inf():
    G = make_graph([[0.0], [1.0]], [(0, 1)], [[0.0, 1.0]], TimeGrid(2))
    # difference TV = 1, bound = ||G'||_inf * (1/2) = 1: tight
    assert holder_check(G, math.inf) == pytest.approx(0.0, abs=1e-12)


def test_holder_random_graphs():
    for seed in range(30):
        G = random_graph(np.random.default_rng(seed), n=2, n_vertices=4, n_samples=8)
        for p in (2.0, 4.0, math.inf):
            assert holder_check(G, p) <= 1e-9
