"""Periodic time-sampled atomic measure paths and their multiscale projections.

Weights live on a uniform periodic grid t_j = j/N.  All measure paths keep
their support points fixed in time; only the weights move.  The dyadic
machinery tiles the half-open box [-2, 2)^n with level-k cells of side
2**(2-k); instances are expected to live well inside [-1, 1)^n so the
per-level cube counts match the certified energy bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

DOMAIN_LO = -2.0
DOMAIN_HI = 2.0
MASS_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform periodic grid with N samples t_j = j/N (t_N wraps to t_0)."""

    n_samples: int

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("time grid needs at least 2 samples")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_samples

    @property
    def samples(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.n_samples


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AtomicMeasurePath:
    """Fixed atoms with nonnegative periodic weight trajectories summing to 1."""

    points: np.ndarray  # (k, n)
    weights: np.ndarray  # (k, N)
    grid: TimeGrid

    def __post_init__(self):
        object.__setattr__(self, "points", _freeze(np.atleast_2d(self.points)))
        object.__setattr__(self, "weights", _freeze(np.atleast_2d(self.weights)))

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    def support(self) -> set[tuple]:
        return {tuple(p) for p in self.points}

    def shifted(self, offset) -> "AtomicMeasurePath":
        return AtomicMeasurePath(self.points + np.asarray(offset, dtype=float), self.weights, self.grid)


@dataclass(frozen=True)
class SignedAtomicPath:
    """Same shape as AtomicMeasurePath but weights are signed and sum to 0."""

    points: np.ndarray
    weights: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        object.__setattr__(self, "points", _freeze(np.atleast_2d(self.points)))
        object.__setattr__(self, "weights", _freeze(np.atleast_2d(self.weights)))
        totals = self.weights.sum(axis=0)
        if np.any(np.abs(totals) > MASS_TOL):
            j = int(np.argmax(np.abs(totals)))
            raise ValueError(f"signed path totals must vanish; got {totals[j]:.3e} at sample {j}")


def make_atomic_path(points, weight_table, grid: TimeGrid) -> AtomicMeasurePath:
    """Validate and build an atomic probability path.

    Rejects negative weights, duplicate support points, and per-sample
    totals off by more than ``MASS_TOL``; smaller deviations are
    renormalized away.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    w = np.atleast_2d(np.asarray(weight_table, dtype=float))
    if pts.shape[0] != w.shape[0]:
        raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weight rows")
    if w.shape[1] != grid.n_samples:
        raise ValueError(f"weight table has {w.shape[1]} columns, grid has {grid.n_samples}")
    if np.any(w < 0):
        i, j = np.unravel_index(int(np.argmin(w)), w.shape)
        raise ValueError(f"negative weight {w[i, j]:.3e} for atom {i} at sample {j}")
    if len({tuple(p) for p in pts}) != pts.shape[0]:
        raise ValueError("support points must be pairwise distinct")
    totals = w.sum(axis=0)
    dev = np.abs(totals - 1.0)
    if np.any(dev > MASS_TOL):
        j = int(np.argmax(dev))
        raise ValueError(f"mass condition fails at sample t_{j}: total {totals[j]!r}")
    return AtomicMeasurePath(pts, w / totals, grid)


def derivative_path(a: AtomicMeasurePath) -> SignedAtomicPath:
    """Periodic forward difference: nu_i(t_j) = N * (a_i(t_{j+1}) - a_i(t_j))."""
    n = a.grid.n_samples
    nu = n * (np.roll(a.weights, -1, axis=1) - a.weights)
    return SignedAtomicPath(a.points, nu, a.grid)


def lp_time_norm(values, p, n_samples: int | None = None) -> float:
    """Discrete L^p-in-time norm (left endpoint rule); max for p = inf."""
    vals = np.asarray(values, dtype=float)
    if n_samples is None:
        n_samples = vals.shape[-1]
    if math.isinf(p):
        return float(np.max(np.abs(vals))) if vals.size else 0.0
    return float((np.mean(np.abs(vals) ** p)) ** (1.0 / p))


def sobolev_seminorm(a: AtomicMeasurePath, p) -> float:
    """Discrete L^p norm of the total variation of the weight derivative."""
    if not math.isinf(p) and p <= 1:
        raise ValueError("seminorm requires p > 1")
    nu = derivative_path(a)
    tv = np.abs(nu.weights).sum(axis=0)
    return lp_time_norm(tv, p, a.grid.n_samples)


# ---------------------------------------------------------------------------
# dyadic cells
# ---------------------------------------------------------------------------

def cell_side(k: int) -> float:
    """Side length of a level-k cell tiling [-2, 2)^n."""
    return 2.0 ** (2 - k)


def cell_index(points: np.ndarray, k: int) -> np.ndarray:
    """Integer cell index per axis for each point; cells are half open."""
    h = cell_side(k)
    idx = np.floor((points - DOMAIN_LO) / h).astype(int)
    if np.any(idx < 0) or np.any(idx >= 2**k):
        raise ValueError("point outside [-2, 2)^n")
    return idx


def cell_center(idx: np.ndarray, k: int) -> np.ndarray:
    h = cell_side(k)
    return DOMAIN_LO + h * (np.asarray(idx, dtype=float) + 0.5)


def _aggregate(points, weights, k):
    """Sum weight rows by level-k cell; returns (centers, table) sorted."""
    idx = cell_index(points, k)
    buckets: dict[tuple, np.ndarray] = {}
    for i, key in enumerate(map(tuple, idx)):
        if key in buckets:
            buckets[key] = buckets[key] + weights[i]
        else:
            buckets[key] = weights[i].copy()
    keys = sorted(buckets)
    centers = np.array([cell_center(np.array(key), k) for key in keys])
    table = np.array([buckets[key] for key in keys])
    keep = np.any(table > 0, axis=1)
    return centers[keep], table[keep]


def dyadic_project(a: AtomicMeasurePath, k: int) -> AtomicMeasurePath:
    """Aggregate atoms onto level-k cell centers; mass preserved per sample."""
    if k < 1:
        raise ValueError("projection level must be >= 1")
    centers, table = _aggregate(a.points, a.weights, k)
    return AtomicMeasurePath(centers, table, a.grid)


def dyadic_project_signed(nu: SignedAtomicPath, k: int) -> SignedAtomicPath:
    """Same aggregation for signed paths (used to check commutation)."""
    idx = cell_index(nu.points, k)
    buckets: dict[tuple, np.ndarray] = {}
    for i, key in enumerate(map(tuple, idx)):
        buckets[key] = buckets.get(key, 0.0) + nu.weights[i]
    keys = sorted(buckets)
    centers = np.array([cell_center(np.array(key), k) for key in keys])
    table = np.array([buckets[key] for key in keys])
    return SignedAtomicPath(centers, table, nu.grid)


# ---------------------------------------------------------------------------
# mollified projection
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _bump_norm(n: int) -> float:
    """Integral of exp(-1/(1-|x|^2)) over the unit ball in R^n."""
    nodes, wts = np.polynomial.legendre.leggauss(16)
    total = 0.0
    panels = 64
    for i in range(panels):
        lo, hi = i / panels, (i + 1) / panels
        r = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        f = r ** (n - 1) * np.exp(-1.0 / (1.0 - r**2))
        total += 0.5 * (hi - lo) * float(f @ wts)
    surface = 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)
    return surface * total


def bump(x: np.ndarray, n: int) -> np.ndarray:
    """Normalized radial bump supported on the closed unit ball."""
    r2 = np.sum(np.atleast_2d(x) ** 2, axis=-1)
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out / _bump_norm(n)


def _box_integral(lo, hi, center, eps, n, order=8, panels=4):
    """Integral of the eps-scaled bump centered at ``center`` over a box.

    Composite tensorized Gauss--Legendre; panel count doubles until the
    value is stable to 1e-9 relative.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(hi <= lo):
        return 0.0
    nodes, wts = np.polynomial.legendre.leggauss(order)

    def compute(m):
        axes_nodes, axes_wts = [], []
        for d in range(n):
            edges = np.linspace(lo[d], hi[d], m + 1)
            mid = 0.5 * (edges[:-1] + edges[1:])
            half = 0.5 * (edges[1] - edges[0])
            pts = (mid[:, None] + half * nodes[None, :]).ravel()
            ws = np.tile(half * wts, m)
            axes_nodes.append(pts)
            axes_wts.append(ws)
        grids = np.meshgrid(*axes_nodes, indexing="ij")
        stacked = np.stack([g.ravel() for g in grids], axis=-1)
        wgrids = np.meshgrid(*axes_wts, indexing="ij")
        wprod = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
        vals = bump((stacked - center) / eps, n) / eps**n
        return float(vals @ wprod)

    val = compute(panels)
    while panels < 32:
        panels *= 2
        refined = compute(panels)
        if abs(refined - val) <= 1e-9 * max(abs(refined), 1e-12):
            return refined
        val = refined
    return val


def mollified_dyadic_project(a: AtomicMeasurePath, k: int, eps: float):
    """Level-k projection of the mollified path.

    Each atom spreads over the level-k cells met by its eps-ball with
    mass given by the bump integral over the cell.  Per-sample totals
    are renormalized to 1; the factors are returned alongside the path.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("mollification radius must lie in (0, 1)")
    if np.any(a.points - eps < DOMAIN_LO) or np.any(a.points + eps >= DOMAIN_HI):
        raise ValueError("eps-ball of a support point escapes [-2, 2)^n")
    n = a.dimension
    h = cell_side(k)
    buckets: dict[tuple, np.ndarray] = {}
    for i in range(a.n_atoms):
        x = a.points[i]
        lo_idx = np.floor((x - eps - DOMAIN_LO) / h).astype(int)
        hi_idx = np.floor((x + eps - DOMAIN_LO) / h).astype(int)
        ranges = [range(lo_idx[d], hi_idx[d] + 1) for d in range(n)]
        for key in _iter_indices(ranges):
            cell_lo = DOMAIN_LO + h * np.array(key, dtype=float)
            cell_hi = cell_lo + h
            box_lo = np.maximum(cell_lo, x - eps)
            box_hi = np.minimum(cell_hi, x + eps)
            mass = _box_integral(box_lo, box_hi, x, eps, n)
            if mass <= 0.0:
                continue
            contrib = mass * a.weights[i]
            if key in buckets:
                buckets[key] = buckets[key] + contrib
            else:
                buckets[key] = contrib
    keys = sorted(buckets)
    centers = np.array([cell_center(np.array(key), k) for key in keys])
    table = np.array([buckets[key] for key in keys])
    keep = np.any(table > 0, axis=1)
    centers, table = centers[keep], table[keep]
    totals = table.sum(axis=0)
    factors = 1.0 / totals
    return AtomicMeasurePath(centers, table * factors, a.grid), factors


def _iter_indices(ranges):
    if len(ranges) == 1:
        for i in ranges[0]:
            yield (i,)
        return
    for i in ranges[0]:
        for rest in _iter_indices(ranges[1:]):
            yield (i,) + rest
