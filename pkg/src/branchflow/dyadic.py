"""Multiscale flux constructions on the dyadic lattice.

Conventions.  The level-k cells tile [x0 - 2s, x0 + 2s)^n (default root
x0 = 0, base scale s = 1, giving [-2, 2)^n) with side s * 2**(2-k).
Layer j carries edges from level-j cell centers to the centers of their
2^n child cells, weighted by the child-cell mass trajectory, so mass
flows coarse to fine.  A band over layers k..l-1 is therefore a
transport path whose source boundary is the level-k aggregation and
whose sink boundary is the level-l aggregation; the connector glues two
such trees back to back across a short bridge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cost import TransportCost
from .graph import TransportGraph, graph_from_paths, merge_graphs, prune_zero_edges
from .measures import AtomicMeasurePath, dyadic_project, sobolev_seminorm


@dataclass(frozen=True)
class DyadicLevelSpec:
    """Root and base scale of the lattice; defaults give [-2, 2)^n."""

    root: np.ndarray | float = 0.0
    scale: float = 1.0

    def origin(self, n: int) -> np.ndarray:
        r = np.asarray(self.root, dtype=float)
        if r.ndim == 0:
            return np.full(n, float(r))
        return r

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("base scale must be positive")


STANDARD = DyadicLevelSpec()


def _cell_side(k: int, spec: DyadicLevelSpec) -> float:
    return spec.scale * 2.0 ** (2 - k)


def _cell_index(points: np.ndarray, k: int, spec: DyadicLevelSpec) -> np.ndarray:
    n = points.shape[1]
    lo = spec.origin(n) - 2.0 * spec.scale
    h = _cell_side(k, spec)
    idx = np.floor((points - lo) / h).astype(int)
    if np.any(idx < 0) or np.any(idx >= 2**k):
        raise ValueError("support escapes the dyadic cell")
    return idx


def _cell_center(idx, k: int, spec: DyadicLevelSpec, n: int) -> np.ndarray:
    lo = spec.origin(n) - 2.0 * spec.scale
    h = _cell_side(k, spec)
    return lo + h * (np.asarray(idx, dtype=float) + 0.5)


def _elementary_edges(mu: AtomicMeasurePath, s: float, x: np.ndarray):
    """Edge list of the elementary flux at (s, x), counting only interior mass."""
    n = mu.dimension
    lo = x - 2.0 * s
    rel = np.floor((mu.points - lo) / (2.0 * s)).astype(int)
    inside = np.all((rel >= 0) & (rel < 2), axis=1)
    edges, rows = [], []
    for flat in range(2**n):
        key = np.array([(flat >> d) & 1 for d in range(n)])
        center = lo + 2.0 * s * (key + 0.5)
        mask = inside & np.all(rel == key, axis=1)
        w = mu.weights[mask].sum(axis=0) if np.any(mask) else np.zeros(mu.grid.n_samples)
        edges.append((x.copy(), center))
        rows.append(w)
    return edges, rows


def elementary_flux(mu: AtomicMeasurePath, s: float, x) -> TransportGraph:
    """Edges from x to the 2^n surrounding cube centers, weighted by cube mass.

    The cubes x + v + [-s, s)^n for v in {-s, s}^n tile [x-2s, x+2s)^n;
    zero-weight edges are retained.
    """
    n = mu.dimension
    x = np.asarray(x, dtype=float) if np.ndim(x) else np.full(n, float(x))
    _cell_index(mu.points, 1, DyadicLevelSpec(root=x, scale=s))  # raises if support escapes
    edges, rows = _elementary_edges(mu, s, x)
    return graph_from_paths(None, edges, np.array(rows), mu.grid)


def recursive_flux(mu: AtomicMeasurePath, k: int, spec: DyadicLevelSpec = STANDARD) -> TransportGraph:
    """Depth-k refinement tree: the elementary flux of every cell down to level k.

    Feasible between a unit point mass at the root and the level-k
    aggregation of mu (checked in tests via the balance residual).  Inner
    cells only count the mass they contain.
    """
    if k < 1:
        raise ValueError("depth must be >= 1")
    n = mu.dimension
    x0 = spec.origin(n)
    _cell_index(mu.points, 1, spec)  # top-level support check
    edges, rows = [], []

    def recurse(s, x, depth):
        e, r = _elementary_edges(mu, s, x)
        edges.extend(e)
        rows.extend(r)
        if depth > 1:
            for flat in range(2**n):
                v = np.array([s if (flat >> d) & 1 else -s for d in range(n)])
                recurse(s / 2.0, x + v, depth - 1)

    recurse(spec.scale, x0, k)
    return graph_from_paths(None, edges, np.array(rows), mu.grid)


def _layer_edges(mu: AtomicMeasurePath, j: int, spec: DyadicLevelSpec):
    """Edges of layer j: level-j centers to occupied level-(j+1) child centers."""
    n = mu.dimension
    child_idx = _cell_index(mu.points, j + 1, spec)
    buckets: dict[tuple, np.ndarray] = {}
    for i, key in enumerate(map(tuple, child_idx)):
        if key in buckets:
            buckets[key] = buckets[key] + mu.weights[i]
        else:
            buckets[key] = mu.weights[i].copy()
    edges, rows = [], []
    for key in sorted(buckets):
        w = buckets[key]
        if not np.any(w > 0):
            continue
        child = _cell_center(np.array(key), j + 1, spec, n)
        parent = _cell_center(np.array(key) // 2, j, spec, n)
        edges.append((parent, child))
        rows.append(w)
    return edges, rows


def _band_graph(mu: AtomicMeasurePath, k: int, ell: int, spec: DyadicLevelSpec) -> TransportGraph:
    edges, rows = [], []
    for j in range(k, ell):
        e, r = _layer_edges(mu, j, spec)
        edges.extend(e)
        rows.extend(r)
    return graph_from_paths(None, edges, np.array(rows), mu.grid)


def band_flux(mu: AtomicMeasurePath, k: int, ell: int, spec: DyadicLevelSpec = STANDARD) -> TransportGraph:
    """Layered flux between the level-k and level-l aggregations of mu.

    Edges point coarse to fine across layers k..l-1, so the graph is a
    DAG (never cyclic) and carries the level-k aggregation as its source
    boundary and the level-l aggregation as its sink boundary.
    Zero-everywhere edges are pruned.
    """
    if not 1 <= k < ell:
        raise ValueError("levels must satisfy 1 <= k < l")
    return _band_graph(mu, k, ell, spec)


def band_flux_bounds(k: int, ell: int, n: int, beta: TransportCost,
                     mu: AtomicMeasurePath, p) -> tuple[float, float]:
    """Certified bounds for the band flux of a measure supported in [-1, 1)^n.

    mass bound:    sqrt(n) * sum_{j=k}^{l-1} 2^(j(n-1)) beta(2^(-jn))
    derivative:    sqrt(n) * seminorm(mu, p) * sum_{j=k}^{l-1} 2^(-j)
    """
    if not 1 <= k < ell:
        raise ValueError("levels must satisfy 1 <= k < l")
    js = np.arange(k, ell)
    mass = math.sqrt(n) * float(np.sum(2.0 ** (js * (n - 1)) * beta.eval_witness(2.0 ** (-js * n))))
    deriv = math.sqrt(n) * sobolev_seminorm(mu, p) * float(np.sum(2.0 ** (-js.astype(float))))
    return mass, deriv


def _layer_cube_count(j: int, n: int) -> int:
    # cubes of side 2^(1-j) meeting [-1, 1)^n; layer 0 has 2 per axis
    return int(2 ** (max(j, 1) * n))


def connector_energy_bound(mu_plus: AtomicMeasurePath, mu_minus: AtomicMeasurePath,
                           tau: TransportCost, p, lam: float, k: int) -> float:
    """Closed-form certificate for the connector energy at depth k.

    Bridge cost tau(1) 2^(-k) plus, per tree and per layer j < k, the
    Jensen bound on the cost-weighted layer mass (cube counts taken for
    supports inside [-1, 1)^n) plus lam times the layer derivative
    bounds.
    """
    n = mu_plus.dimension
    mass = tau(1.0) * 2.0 ** (-k)
    for j in range(k):
        count = _layer_cube_count(j, n)
        mass += 2.0 * math.sqrt(n) * 2.0 ** (-j) * count * tau.eval_witness(1.0 / count)
    geom = sum(2.0 ** (-j) for j in range(k))
    deriv = math.sqrt(n) * geom * (sobolev_seminorm(mu_plus, p) + sobolev_seminorm(mu_minus, p))
    return mass + lam * deriv


def connector(mu_plus: AtomicMeasurePath, mu_minus: AtomicMeasurePath, k: int):
    """Glued pair of depth-k trees joined by a short bridge.

    Returns (G, a_plus_k, a_minus_k): the source boundary a_plus_k is
    the level-k aggregation of mu_minus shifted by 2^(-k) e_1, the sink
    boundary a_minus_k is the level-k aggregation of mu_plus.  Mass
    enters at the shifted fine centers, flows up the reversed mu_minus
    tree to the shifted root, crosses the bridge to the origin, and
    descends the mu_plus tree.  The result is a DAG with disjoint
    boundary supports and balance residual at machine precision.
    """
    if k < 1:
        raise ValueError("depth must be >= 1")
    if mu_plus.grid.n_samples != mu_minus.grid.n_samples:
        raise ValueError("time grids do not match")
    n = mu_plus.dimension
    grid = mu_plus.grid
    shift = np.zeros(n)
    shift[0] = 2.0 ** (-k)

    tree_plus = _band_graph(mu_plus, 0, k, STANDARD)

    tree_minus = _band_graph(mu_minus, 0, k, STANDARD)
    rev_edges = []
    rev_rows = []
    for e in range(tree_minus.n_edges):
        tail = tree_minus.vertices[tree_minus.edges[e, 1]] + shift
        head = tree_minus.vertices[tree_minus.edges[e, 0]] + shift
        rev_edges.append((tail, head))
        rev_rows.append(tree_minus.weights[e])

    bridge_edges = [(shift, np.zeros(n))]
    bridge_rows = [np.ones(grid.n_samples)]

    pieces = []
    if tree_plus.n_edges:
        pieces.append(tree_plus)
    if rev_edges:
        pieces.append(graph_from_paths(None, rev_edges, np.array(rev_rows), grid))
    pieces.append(graph_from_paths(None, bridge_edges, np.array(bridge_rows), grid))
    G = prune_zero_edges(merge_graphs(grid, *pieces))

    a_minus_k = dyadic_project(mu_plus, k)
    a_plus_k = dyadic_project(mu_minus, k).shifted(shift)
    return G, a_plus_k, a_minus_k
