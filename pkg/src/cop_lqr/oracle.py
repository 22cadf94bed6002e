"""Brute-force checks of the closed-form solve.

Nothing here shares algebra with the backward recursion: expectations are
truncated Poisson sums, minimization is golden-section search, and the grid
dynamic program does backward induction on a lattice with bilinear
interpolation.  Agreement between these and the closed form is the evidence
that the recursion is implemented right.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .lqr import (
    ExecState,
    ModelParams,
    QuadraticValue,
    step_matrices,
    value_at,
)

__all__ = [
    "OracleError",
    "PoissonSpec",
    "GridSpec",
    "GridTables",
    "poisson_pmf",
    "stage_cost",
    "bellman_rhs_raw",
    "bellman_rhs_folded",
    "minimize_u",
    "grid_dp",
]

# Truncation beyond this point leaves tail mass under 1e-12 for any
# desk-scale mean.
def _truncation_k(mean: float) -> int:
    return math.ceil(mean + 10.0 * math.sqrt(mean) + 20.0)


# Off-lattice probability mass the grid DP may silently drop per (node, u)
# before declaring the control infeasible at that node.
GRID_DROP_TOL = 1e-9

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class OracleError(RuntimeError):
    """A numerical check could not be carried out as posed."""


@dataclass(frozen=True)
class PoissonSpec:
    """Distribution of fills over one step: mean ``rate_times_dt``."""

    rate_times_dt: float

    def __post_init__(self):
        if not (math.isfinite(self.rate_times_dt) and self.rate_times_dt >= 0.0):
            raise OracleError(
                f"negative Poisson rate: mean {self.rate_times_dt} is not allowed"
            )

    @property
    def truncation_k(self) -> int:
        """Largest support point kept; omitted tail mass is below 1e-12."""
        return _truncation_k(self.rate_times_dt)


def poisson_pmf(spec: PoissonSpec, k: int) -> float:
    """P(W = k) for mean ``spec.rate_times_dt``, computed in log space."""
    if k < 0 or k != int(k):
        raise OracleError(f"pmf support is the nonnegative integers, got {k}")
    m = spec.rate_times_dt
    if m == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(m) - m - math.lgamma(k + 1.0))


def _pmf_vector(mean: float) -> np.ndarray:
    """pmf over k = 0..K as an array; sums to 1 minus sub-1e-12 tail."""
    if mean < 0.0:
        raise OracleError(f"negative Poisson rate: mean {mean}")
    kmax = _truncation_k(mean)
    if mean == 0.0:
        out = np.zeros(kmax + 1)
        out[0] = 1.0
        return out
    k = np.arange(kmax + 1)
    logfact = np.array([math.lgamma(i + 1.0) for i in range(kmax + 1)])
    return np.exp(k * math.log(mean) - mean - logfact)


def stage_cost(x: ExecState, u: float, w: int, gamma_n: float) -> float:
    """Per-step cost: delay penalty plus snipe cost minus lots filled."""
    return gamma_n * x.q * x.q + u * u - w


def bellman_rhs_raw(
    x: ExecState, u: float, v_next: QuadraticValue, params: ModelParams, n: int
) -> float:
    """Expected cost of playing u now: truncated sum over fill counts.

    Every appearance of the fill W, including the -W reward in the stage
    cost, goes through the pmf; no moment identities are used.
    """
    dt = params.dt[n]
    rate = x.lam - params.eta * u
    if rate < 0.0:
        raise OracleError(
            f"negative Poisson rate: lam - eta*u = {rate} at step {n}; "
            f"reduce u or raise lam"
        )
    pmf = _pmf_vector(rate * dt)
    total = params.gamma[n] * x.q * x.q + u * u
    base_q = x.q - u
    for k, p in enumerate(pmf):
        nxt = ExecState(base_q - k, rate)
        total += p * (value_at(v_next, nxt) - k)
    return total


def bellman_rhs_folded(
    x: ExecState, u: float, v_next: QuadraticValue, params: ModelParams, n: int
) -> float:
    """Expected cost of playing u now, with the fill moments folded in
    analytically: E[W] = Var(W) = rate*dt collapses the sum to one
    evaluation of the next value at the mean next state."""
    J, h = step_matrices(params, n)
    dt = params.dt[n]
    rate = x.lam - params.eta * u
    xv = np.array([x.q, x.lam])
    mean_next = J @ xv - h * u
    l11 = 1.0 - v_next.p11
    return (
        params.gamma[n] * x.q * x.q
        + u * u
        - l11 * rate * dt
        + value_at(v_next, ExecState(float(mean_next[0]), float(mean_next[1])))
    )


def minimize_u(
    x: ExecState,
    v_next: QuadraticValue,
    params: ModelParams,
    n: int,
    bracket: tuple[float, float] | None = None,
) -> tuple[float, float]:
    """Golden-section minimizer of the one-step cost in u.

    The objective is strictly convex (leading coefficient at least 1), so
    the minimum is unique.  Golden-section narrows the bracket to 1e-6;
    one three-point parabola step then lands the vertex, which is exact
    here because the objective is an exact quadratic in u, beating the
    comparison-noise floor that pure interval splitting runs into.  If the
    minimizer presses the bracket edge, the bracket is widened once; a
    second failure faults.
    """

    def f(u):
        return bellman_rhs_folded(x, u, v_next, params, n)

    if bracket is None:
        half = abs(x.q) + abs(x.lam) * params.dt[n] + 10.0
        bracket = (-half, half)
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise OracleError(f"empty bracket {bracket}")

    for attempt in range(2):
        a, b = lo, hi
        c = b - INVPHI * (b - a)
        d = a + INVPHI * (b - a)
        fc, fd = f(c), f(d)
        while b - a > 1e-6:
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - INVPHI * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + INVPHI * (b - a)
                fd = f(d)
        u_star = 0.5 * (a + b)
        edge = 1e-5 * (hi - lo)
        if u_star - lo > edge and hi - u_star > edge:
            fm = f(u_star)
            # wide stencil keeps the vertex insensitive to rounding in f
            h = max(1e-3, 1e-7 * (1.0 + abs(fm)))
            fl_, fr_ = f(u_star - h), f(u_star + h)
            denom = fl_ - 2.0 * fm + fr_
            if denom > 0.0:
                shift = 0.5 * h * (fl_ - fr_) / denom
                if abs(shift) <= 2.0 * h:
                    u_star += shift
            return u_star, f(u_star)
        if attempt == 0:
            # minimum pressed against the bracket: widen once and retry
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            lo, hi = mid - 4.0 * half, mid + 4.0 * half
    raise OracleError(
        f"bracket failure: minimizer stuck at the edge of {(lo, hi)} "
        f"for state {x} at step {n}"
    )


@dataclass(frozen=True)
class GridSpec:
    """Lattice for the grid dynamic program.

    State nodes are n_q equally spaced points on [q_min, q_max] crossed
    with n_lam points on [lam_min, lam_max]; controls are searched over
    n_u points on [u_min, u_max].  The caller must size the lattice so
    that states reachable with probability 1 - 1e-9 stay inside it.
    """

    q_min: float
    q_max: float
    lam_min: float
    lam_max: float
    n_q: int
    n_lam: int
    u_min: float
    u_max: float
    n_u: int

    def __post_init__(self):
        if not (self.q_min < self.q_max and self.lam_min < self.lam_max):
            raise OracleError("grid bounds must be strictly increasing")
        if not (self.u_min < self.u_max):
            raise OracleError("control bracket must be strictly increasing")
        if self.n_q < 2 or self.n_lam < 2 or self.n_u < 3:
            raise OracleError("grid needs >= 2 nodes per state axis, >= 3 controls")
        if self.lam_min < 0.0:
            raise OracleError("negative Poisson rate: lam_min must be >= 0")

    def q_nodes(self) -> np.ndarray:
        return np.linspace(self.q_min, self.q_max, self.n_q)

    def lam_nodes(self) -> np.ndarray:
        return np.linspace(self.lam_min, self.lam_max, self.n_lam)

    def u_nodes(self) -> np.ndarray:
        return np.linspace(self.u_min, self.u_max, self.n_u)

    def refine(self, factor: int = 2) -> "GridSpec":
        """Same extents, state spacing divided by ``factor`` (controls kept)."""
        return GridSpec(
            self.q_min,
            self.q_max,
            self.lam_min,
            self.lam_max,
            (self.n_q - 1) * factor + 1,
            (self.n_lam - 1) * factor + 1,
            self.u_min,
            self.u_max,
            self.n_u,
        )


@dataclass(frozen=True)
class GridTables:
    """Backward-induction output on the lattice.

    values[n] is the step-n cost-to-go table, shape (n_q, n_lam), NaN where
    the lattice could not support a trustworthy minimization; valid[n] marks
    the trustworthy nodes.  The terminal table values[-1] is exact.
    """

    spec: GridSpec
    q_nodes: np.ndarray
    lam_nodes: np.ndarray
    values: tuple[np.ndarray, ...]
    valid: tuple[np.ndarray, ...]

    def evaluate(self, n: int, q: float, lam: float) -> float:
        """Bilinear read of the step-n table; NaN off-lattice or on an
        untrusted stencil."""
        tab = self.values[n]
        iq, wq = _locate(q, self.q_nodes)
        il, wl = _locate(lam, self.lam_nodes)
        if iq < 0 or il < 0:
            return math.nan
        v00 = tab[iq, il]
        v01 = tab[iq, il + 1]
        v10 = tab[iq + 1, il]
        v11 = tab[iq + 1, il + 1]
        return float(
            (1 - wq) * ((1 - wl) * v00 + wl * v01) + wq * ((1 - wl) * v10 + wl * v11)
        )


def _locate(v: float, nodes: np.ndarray) -> tuple[int, float]:
    """Cell index and fraction for linear interpolation; (-1, nan) outside."""
    if not nodes[0] <= v <= nodes[-1]:
        return -1, math.nan
    step = (nodes[-1] - nodes[0]) / (len(nodes) - 1)
    pos = (v - nodes[0]) / step
    idx = min(int(pos), len(nodes) - 2)
    return idx, pos - idx


def _terminal_table(params: ModelParams, qs: np.ndarray, lams: np.ndarray):
    vals = params.gamma_terminal * qs[:, None] ** 2 + 0.0 * lams[None, :]
    return vals, np.ones(vals.shape, dtype=bool)


def _column_costs_terminal(
    params: ModelParams, qs: np.ndarray, lam_j: float, u: float, n: int
) -> np.ndarray:
    """Cost of control u at every q node in one lam column, last step.

    The continuation is the exact terminal quadratic, evaluated directly at
    each post-fill inventory, so no lattice reads are involved.
    """
    dt = params.dt[n]
    rate = lam_j - params.eta * u
    if rate < 0.0:
        return np.full(qs.shape, np.nan)
    pmf = _pmf_vector(rate * dt)
    k = np.arange(pmf.size)
    qn = qs[:, None] - u - k[None, :]
    cont = pmf[None, :] * (params.gamma_terminal * qn * qn - k[None, :])
    return params.gamma[n] * qs * qs + u * u + cont.sum(axis=1)


def _column_costs_interp(
    params: ModelParams,
    qs: np.ndarray,
    lam_j: float,
    u: float,
    n: int,
    next_vals: np.ndarray,
    lam_nodes: np.ndarray,
) -> np.ndarray:
    """Cost of control u at every q node in one lam column, inner step.

    The continuation is read from the next-step table by bilinear
    interpolation.  Fill counts whose landing state the lattice cannot
    price, either off the lattice or on an untrusted (NaN) stencil, are
    dropped if their combined probability mass is below GRID_DROP_TOL;
    above that the control is infeasible (NaN) at the affected nodes, so
    nothing downstream leans on an untrusted node with material weight.
    """
    dt = params.dt[n]
    rate = lam_j - params.eta * u
    if rate < 0.0:
        return np.full(qs.shape, np.nan)
    il, wl = _locate(rate, lam_nodes)
    if il < 0:
        return np.full(qs.shape, np.nan)
    vq = (1.0 - wl) * next_vals[:, il] + wl * next_vals[:, il + 1]

    pmf = _pmf_vector(rate * dt)
    k = np.arange(pmf.size)
    n_q = qs.size
    dq = (qs[-1] - qs[0]) / (n_q - 1)
    pos = (qs[:, None] - u - k[None, :] - qs[0]) / dq
    idx = np.floor(pos).astype(np.int64)
    frac = pos - idx
    off = (pos < 0.0) | (pos > n_q - 1.0)
    at_top = idx == n_q - 1
    idx = np.clip(idx, 0, n_q - 2)
    frac = np.where(at_top, 1.0, frac)
    idx = np.where(at_top, n_q - 2, idx)

    vals = (1.0 - frac) * vq[idx] + frac * vq[idx + 1]
    bad = off | ~np.isfinite(vals)
    contrib = np.where(bad, 0.0, pmf[None, :] * (vals - k[None, :]))
    dropped = np.where(bad, pmf[None, :], 0.0).sum(axis=1)
    out = params.gamma[n] * qs * qs + u * u + contrib.sum(axis=1)
    out[dropped > GRID_DROP_TOL] = np.nan
    return out


def _minimize_columns(costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-node minimum over the control axis of a (n_q, n_u) cost slab.

    A node is trusted only when its best control is strictly inside the
    control grid with finite neighbors; the minimum is then polished with
    the three-point parabola through those neighbors (exact for the
    quadratic objective, so control-grid resolution barely matters).
    """
    n_q, n_u = costs.shape
    values = np.full(n_q, np.nan)
    good = np.zeros(n_q, dtype=bool)
    finite = np.isfinite(costs)
    any_finite = finite.any(axis=1)
    safe = np.where(finite, costs, np.inf)
    am = np.argmin(safe, axis=1)
    interior = any_finite & (am > 0) & (am < n_u - 1)
    rows = np.nonzero(interior)[0]
    if rows.size == 0:
        return values, good
    fm = safe[rows, am[rows]]
    fl = safe[rows, am[rows] - 1]
    fr = safe[rows, am[rows] + 1]
    keep = rows[np.isfinite(fl) & np.isfinite(fr)]
    if keep.size == 0:
        return values, good
    fm = safe[keep, am[keep]]
    fl = safe[keep, am[keep] - 1]
    fr = safe[keep, am[keep] + 1]
    denom = fl - 2.0 * fm + fr
    polish = np.where(denom > 0.0, (fr - fl) ** 2 / np.where(denom > 0.0, 8.0 * denom, 1.0), 0.0)
    values[keep] = fm - polish
    good[keep] = True
    return values, good


def grid_dp(
    params: ModelParams, grid: GridSpec, n_workers: int = 1
) -> GridTables:
    """Backward induction on the lattice, independent of the closed form.

    At each node the one-step cost is minimized over the control grid with
    the continuation read from the next table (the terminal continuation is
    evaluated exactly).  Nodes whose expectation would need states off the
    lattice, beyond the allowed drop mass, come back NaN and stay NaN in
    any later stencil that touches them.  Faults if a whole step loses all
    trusted nodes or the lattice center itself cannot be trusted, listing
    the offending nodes; that means the lattice fails its coverage duty.

    Columns of constant hit rate are independent within a step, so they may
    be computed on any number of threads; per column the arithmetic order
    is fixed, making results bit-identical regardless of worker count.
    """
    qs = grid.q_nodes()
    lams = grid.lam_nodes()
    us = grid.u_nodes()
    term_vals, term_ok = _terminal_table(params, qs, lams)
    values = [term_vals]
    valid = [term_ok]

    for n in range(params.n_steps - 1, -1, -1):
        last = n == params.n_steps - 1
        next_vals = values[0]
        tab = np.empty((grid.n_q, grid.n_lam))
        ok = np.empty((grid.n_q, grid.n_lam), dtype=bool)

        def column(j: int):
            lam_j = float(lams[j])
            costs = np.empty((grid.n_q, grid.n_u))
            for iu, u in enumerate(us):
                if last:
                    costs[:, iu] = _column_costs_terminal(params, qs, lam_j, float(u), n)
                else:
                    costs[:, iu] = _column_costs_interp(
                        params, qs, lam_j, float(u), n, next_vals, lams
                    )
            tab[:, j], ok[:, j] = _minimize_columns(costs)

        if n_workers > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                list(pool.map(column, range(grid.n_lam)))
        else:
            for j in range(grid.n_lam):
                column(j)

        if not ok.any():
            raise OracleError(
                f"state leaves grid: no trusted nodes remain at step {n}; "
                f"the lattice does not cover the reachable states"
            )
        values.insert(0, tab)
        valid.insert(0, ok)

    ci, cj = grid.n_q // 2, grid.n_lam // 2
    if not valid[0][ci, cj]:
        raise OracleError(
            f"state leaves grid: center node (q={qs[ci]}, lam={lams[cj]}) "
            f"is untrusted at step 0; enlarge the lattice"
        )
    return GridTables(grid, qs, lams, tuple(values), tuple(valid))
