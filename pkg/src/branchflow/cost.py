"""Transportation costs: subadditive, nondecreasing cost functions.

A cost maps transported mass to a per-unit-length price.  Two kinds are
supported: power costs ``s -> s**alpha`` with ``alpha`` in (0, 1], and
tabulated costs given as strictly increasing sample points with
piecewise-linear interpolation (constant beyond the last sample).
Tabulated costs may carry a concave majorant used for admissibility
checks; for power costs the cost itself serves as its own majorant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SUBADDITIVITY_TOL = 1e-12

# deterministic lattice used to validate subadditivity at construction
_LATTICE = np.geomspace(1e-6, 1.0, 64)


@dataclass(frozen=True)
class TransportCost:
    """A validated transportation cost.

    ``kind`` is "power" or "tabulated".  Power costs store ``alpha``;
    tabulated costs store ``samples`` as an (m, 2) array of (s, value)
    pairs with strictly increasing s starting at (0, 0).  ``witness`` is
    an optional concave majorant, stored as an (m, 2) sample table; for
    power costs it is implicit (the cost itself).
    """

    kind: str
    alpha: float | None = None
    samples: np.ndarray | None = None
    witness: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("power", "tabulated"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.samples is not None:
            self.samples.setflags(write=False)
        if self.witness is not None:
            self.witness.setflags(write=False)

    def __call__(self, s):
        return eval_cost(self, s)

    def has_witness(self) -> bool:
        return self.kind == "power" or self.witness is not None

    def eval_witness(self, s):
        """Evaluate the concave majorant beta at s (array friendly)."""
        if self.kind == "power":
            return eval_cost(self, s)
        if self.witness is None:
            raise ValueError("no admissibility witness")
        return _interp_table(self.witness, s)


def _interp_table(table: np.ndarray, s):
    # linear interpolation, constant extension beyond the last sample
    return np.interp(s, table[:, 0], table[:, 1])


def power_cost(alpha: float) -> TransportCost:
    """Cost s**alpha for alpha in (0, 1]."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"power exponent must lie in (0, 1], got {alpha}")
    return TransportCost(kind="power", alpha=float(alpha))


def tabulated_cost(samples, witness=None) -> TransportCost:
    """Piecewise-linear cost from (s, value) pairs.

    The table must start at (0, 0), have strictly increasing s and
    nondecreasing values, and pass a subadditivity check on a fixed
    lattice of sample pairs.  ``witness`` is an optional majorant table
    of the same shape.
    """
    table = np.asarray(samples, dtype=float)
    if table.ndim != 2 or table.shape[1] != 2 or table.shape[0] < 2:
        raise ValueError("tabulated cost needs an (m, 2) table with m >= 2")
    s, v = table[:, 0], table[:, 1]
    if s[0] != 0.0 or v[0] != 0.0:
        raise ValueError("tabulated cost must start at (0, 0)")
    if np.any(np.diff(s) <= 0):
        raise ValueError("tabulated cost abscissae must be strictly increasing")
    if np.any(v[1:] <= 0):
        raise ValueError("cost must be positive for positive mass")
    if np.any(np.diff(v) < 0):
        raise ValueError("cost must be nondecreasing")

    wtab = None
    if witness is not None:
        wtab = np.asarray(witness, dtype=float)
        if wtab.ndim != 2 or wtab.shape[1] != 2:
            raise ValueError("witness must be an (m, 2) table")
        if np.any(np.diff(wtab[:, 0]) <= 0):
            raise ValueError("witness abscissae must be strictly increasing")

    cost = TransportCost(kind="tabulated", samples=table, witness=wtab)
    _check_subadditive(cost)
    if wtab is not None:
        _check_majorant(cost)
    return cost


def _check_subadditive(tau: TransportCost):
    grid = _LATTICE
    f = eval_cost(tau, grid)
    pair_sum = grid[:, None] + grid[None, :]
    lhs = eval_cost(tau, pair_sum)
    rhs = f[:, None] + f[None, :]
    worst = float(np.max(lhs - rhs))
    if worst > SUBADDITIVITY_TOL:
        raise ValueError(f"cost violates subadditivity by {worst:.3e} on the test lattice")


def _check_majorant(tau: TransportCost):
    grid = np.union1d(tau.samples[:, 0], tau.witness[:, 0])
    if np.any(eval_cost(tau, grid) > tau.eval_witness(grid) + 1e-12):
        raise ValueError("witness does not dominate the cost on the sample lattice")


def eval_cost(tau: TransportCost, s):
    """Evaluate tau at mass s >= 0 (scalar or array)."""
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0):
        raise ValueError("cost is only defined for nonnegative mass")
    if tau.kind == "power":
        out = np.power(arr, tau.alpha)
    else:
        out = _interp_table(tau.samples, arr)
    if np.ndim(s) == 0:
        return float(out)
    return out


def check_admissible(tau: TransportCost, n: int) -> tuple[bool, str]:
    """Decide whether the integral s**(1/n - 2) * beta(s) converges near 0.

    Power costs use the closed-form criterion alpha > 1 - 1/n.  Tabulated
    costs need a witness; convergence is probed on geometric shells down
    to 1e-12, declaring divergence when shell contributions stop
    decaying (the slope of beta near 0 is too shallow).
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    if tau.kind == "power":
        threshold = 1.0 - 1.0 / n
        ok = tau.alpha > threshold
        return ok, (
            f"power cost alpha={tau.alpha} vs threshold 1-1/n={threshold}: "
            f"{'admissible' if ok else 'not admissible'}"
        )
    if tau.witness is None:
        raise ValueError("no admissibility witness")
    exponent = 1.0 / n - 2.0
    hi = 1.0
    total = 0.0
    prev_shell = math.inf
    nondecaying = 0
    while hi > 1e-12:
        lo = hi / 2.0
        grid = np.linspace(lo, hi, 33)
        vals = grid**exponent * tau.eval_witness(grid)
        shell = float(np.trapezoid(vals, grid))
        total += shell
        if shell >= prev_shell * 0.999:
            nondecaying += 1
        else:
            nondecaying = 0
        if nondecaying >= 4:
            return False, (
                f"shell integrals stopped decaying near s={hi:.2e}; "
                "integral diverges (witness slope too shallow at 0)"
            )
        prev_shell = shell
        hi = lo
    return True, f"shell integration converged, integral ~ {total:.6g}"


def rho(tau: TransportCost, m: float) -> float:
    """inf of tau(w)/w over w in [m/2, m]; gives tau(w) >= rho*w on [0, m]."""
    if m <= 0:
        raise ValueError("mass bound must be positive")
    if tau.kind == "power":
        # tau(w)/w = w**(alpha-1) is nonincreasing, so the inf sits at w = m
        return float(m ** (tau.alpha - 1.0))
    grid = np.linspace(m / 2.0, m, 10_001)
    val = float(np.min(eval_cost(tau, grid) / grid))
    if val <= 0:
        raise ValueError("cost ratio vanished on [m/2, m]; cost is not positive there")
    return val
