"""Shared search machinery: batched information measures, simplex meshes,
pattern refinement, 1-d ray suprema, and transportation-polytope
parameterizations.

Every optimizer in this package is built from the same two-stage recipe:
an exhaustive coarse grid over the search domain followed by derivative-free
local refinement (coordinate shrink-and-probe) around the incumbent. The
helpers here implement both stages once so the exponent and dual modules
share one tuned engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .prob import simplex_grid_array

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# batched measures
# ---------------------------------------------------------------------------


def xlogx(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    np.multiply(a, np.log(a, out=np.zeros_like(a), where=a > 0), out=out, where=a > 0)
    return out


def mi_batch(j: np.ndarray) -> np.ndarray:
    """Mutual information of a batch of joints, shape (..., A, B) -> (...)."""
    row = j.sum(axis=-1)
    col = j.sum(axis=-2)
    v = xlogx(j).sum(axis=(-2, -1)) - xlogx(row).sum(axis=-1) - xlogx(col).sum(axis=-1)
    return np.maximum(v, 0.0)


def entropy_batch(p: np.ndarray) -> np.ndarray:
    return -xlogx(p).sum(axis=-1)


def elog_batch(j: np.ndarray, logw: np.ndarray) -> np.ndarray:
    """Sum of j * logw over the trailing axes of logw; -inf where j puts mass
    on logw = -inf cells, with the 0 * (-inf) = 0 convention elsewhere."""
    axes = tuple(range(-logw.ndim, 0))
    mass_on_zero = ((j > 0) & np.isneginf(logw)).any(axis=axes)
    fin = np.where(np.isneginf(logw), 0.0, logw)
    val = (j * fin).sum(axis=axes)
    return np.where(mass_on_zero, -np.inf, val)


# ---------------------------------------------------------------------------
# pattern refinement (coordinate shrink-and-probe)
# ---------------------------------------------------------------------------


def pattern_min(
    x0: np.ndarray,
    f: Callable[[np.ndarray], float],
    step: float,
    iters: int,
    shrink: float,
    steps: np.ndarray | None = None,
) -> tuple[np.ndarray, float, int]:
    """Minimize f by probing +-step along each coordinate of x0.

    f must return +inf for infeasible points. Per-coordinate step sizes may be
    supplied via ``steps``; all shrink together when a full sweep fails to
    improve. Returns (argmin, min, evaluation count).
    """
    x = np.array(x0, dtype=float)
    fx = float(f(x))
    h = np.full(x.size, step, dtype=float) if steps is None else np.array(steps, dtype=float)
    evals = 1
    for _ in range(iters):
        improved = False
        for i in range(x.size):
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[i] += sgn * h[i]
                fy = float(f(y))
                evals += 1
                if fy < fx - 1e-15:
                    x, fx = y, fy
                    improved = True
        if not improved:
            h *= shrink
    return x, fx, evals


def golden_max(f: Callable[[float], float], lo: float, hi: float,
               tol: float = 1e-10, max_iter: int = 200) -> tuple[float, float]:
    """Golden-section maximization of a unimodal f on [lo, hi]."""
    a, b = float(lo), float(hi)
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    it = 0
    while b - a > tol and it < max_iter:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
        it += 1
    xm = 0.5 * (a + b)
    return xm, f(xm)


@dataclass
class RayResult:
    arg: float
    value: float
    hit_boundary: bool
    domain_hi: float


def sup_ray(
    f: Callable[[float], float],
    hi: float = 8.0,
    n_grid: int = 17,
    lo_pos: float = 1e-3,
    include_zero: bool = True,
    doublings: int = 3,
    refine: bool = True,
    tol: float | None = None,
) -> RayResult:
    """Supremum of f over the ray [0, inf), searched on [0, hi].

    Log-spaced grid plus the endpoint 0, golden refinement between the
    neighbors of the best grid point. If the maximum sits at the upper end the
    domain is doubled, at most ``doublings`` times; a maximum still at the
    boundary is reported via ``hit_boundary`` rather than chased further.
    """
    top = float(hi)
    for _ in range(doublings + 1):
        xs = list(np.geomspace(lo_pos, top, n_grid))
        if include_zero:
            xs = [0.0] + xs
        vals = [f(x) for x in xs]
        best = int(np.argmax(vals))
        if best < len(xs) - 1:
            break
        top *= 2.0
    lo_n = xs[best - 1] if best > 0 else xs[0]
    hi_n = xs[best + 1] if best < len(xs) - 1 else xs[-1]
    if refine and hi_n > lo_n:
        gtol = tol if tol is not None else 1e-9 * max(1.0, hi_n)
        xg, vg = golden_max(f, lo_n, hi_n, tol=gtol)
        if vg > vals[best]:
            return RayResult(xg, vg, best == len(xs) - 1, top)
    return RayResult(xs[best], vals[best], best == len(xs) - 1, top)


# ---------------------------------------------------------------------------
# transportation polytope {J >= 0 : row sums = p, col sums = q}
# ---------------------------------------------------------------------------


def polytope_basis(nr: int, nc: int) -> np.ndarray:
    """Basis of marginal-preserving moves, shape ((nr-1)(nc-1), nr, nc).

    Move (i, j), i,j >= 1, adds +1 at (i,j) and (0,0), -1 at (i,0) and (0,j);
    any zero-marginal matrix is a unique combination of these.
    """
    basis = np.zeros(((nr - 1) * (nc - 1), nr, nc))
    t = 0
    for i in range(1, nr):
        for j in range(1, nc):
            basis[t, i, j] += 1.0
            basis[t, 0, 0] += 1.0
            basis[t, i, 0] -= 1.0
            basis[t, 0, j] -= 1.0
            t += 1
    return basis


class TransportPolytope:
    """Joints with both marginals pinned, parameterized around the product
    coupling: J(c) = p x q + sum_t c_t * B_t."""

    def __init__(self, p: np.ndarray, q: np.ndarray):
        self.p = np.asarray(p, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.base = np.outer(self.p, self.q)
        self.basis = polytope_basis(self.p.size, self.q.size)
        self.dim = self.basis.shape[0]

    def joints(self, c: np.ndarray) -> np.ndarray:
        """Materialize joints for parameter rows c, shape (..., dim)."""
        return self.base + np.tensordot(c, self.basis, axes=(-1, 0))

    def feasible(self, j: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return (j >= -tol).all(axis=(-2, -1))

    def grid(self, n_per_axis: int, budget: int) -> np.ndarray:
        """Parameter mesh covering [-1, 1]^dim, thinned to respect budget."""
        n = n_per_axis
        while n > 5 and n**self.dim > budget:
            n -= 2
        axis = np.linspace(-1.0, 1.0, n)
        mesh = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def param_of(self, j: np.ndarray) -> np.ndarray:
        """Inverse of joints(): the coordinates at cells (i>=1, j>=1)."""
        d = np.asarray(j, dtype=float) - self.base
        return d[1:, 1:].reshape(-1)


# ---------------------------------------------------------------------------
# conditional-row meshes (search over Q_{Y|slots})
# ---------------------------------------------------------------------------


class RowMesh:
    """Product grid over a tuple of probability rows, with the batched
    per-candidate accumulations every inner problem needs.

    ``weights[r]`` is the mass of slot r, ``x_of[r]`` / ``xp_of[r]`` say into
    which X / X' symbol slot r aggregates. A candidate assigns one grid row to
    each slot; the mesh exposes, flattened over all G**s candidates:

    - ``qy``   (N, ny)       output marginal
    - ``qxy``  (N, nx, ny)   joint with the X symbol
    - ``qxpy`` (N, nx, ny)   joint with the X' symbol
    - ``kl``   (N,)          sum_r weights[r] * D(row_r || W(.|x_of[r]))
    """

    def __init__(self, weights: np.ndarray, x_of: np.ndarray, xp_of: np.ndarray,
                 grid_rows, nx: int, logw: np.ndarray):
        self.weights = np.asarray(weights, dtype=float)
        self.x_of = np.asarray(x_of, dtype=int)
        self.xp_of = np.asarray(xp_of, dtype=int)
        self.nx = nx
        self.logw = logw
        self.s = self.weights.size
        if isinstance(grid_rows, np.ndarray):
            self.slot_grids = [grid_rows] * self.s
        else:
            self.slot_grids = list(grid_rows)
        self.gs = tuple(g.shape[0] for g in self.slot_grids)
        self.g = self.gs[0]
        self.ny = self.slot_grids[0].shape[1]
        self.n = int(np.prod(self.gs))
        self._x_onehot = np.zeros((self.s, nx))
        self._x_onehot[np.arange(self.s), self.x_of] = 1.0
        self._xp_onehot = np.zeros((self.s, nx))
        self._xp_onehot[np.arange(self.s), self.xp_of] = 1.0
        # per-slot KL reference rows and zero-support masks
        self._lw_slots = logw[self.x_of]  # (s, ny)
        self._lw_fin = np.where(np.isneginf(self._lw_slots), 0.0, self._lw_slots)
        self._lw_dead = np.isneginf(self._lw_slots)

    def size(self) -> int:
        return self.n

    def _axis_view(self, arr: np.ndarray, r: int) -> np.ndarray:
        # arr has shape (G_r, ...); place its axis at mesh position r
        shape = [1] * self.s + list(arr.shape[1:])
        shape[r] = self.gs[r]
        return arr.reshape(shape)

    def build(self) -> dict[str, np.ndarray]:
        s, ny, nx = self.s, self.ny, self.nx
        mesh_shape = self.gs
        qy = np.zeros(mesh_shape + (ny,))
        qxy = np.zeros(mesh_shape + (nx, ny))
        qxpy = np.zeros(mesh_shape + (nx, ny))
        kl = np.zeros(mesh_shape)
        for r in range(s):
            w = self.weights[r]
            rows = self.slot_grids[r]
            qy += self._axis_view(w * rows, r)
            qxy[..., self.x_of[r], :] += self._axis_view(w * rows, r)
            qxpy[..., self.xp_of[r], :] += self._axis_view(w * rows, r)
            kl += self._axis_view(w * self._row_kl(rows, self.x_of[r]), r)
        flat = self.n
        return {
            "qy": qy.reshape(flat, ny),
            "qxy": qxy.reshape(flat, nx, ny),
            "qxpy": qxpy.reshape(flat, nx, ny),
            "kl": kl.reshape(flat),
        }

    def _row_kl(self, rows: np.ndarray, x: int) -> np.ndarray:
        """D(row || W(.|x)) per grid row; +inf on support violations."""
        lw = self.logw[x]
        bad = ((rows > 0) & np.isneginf(lw)).any(axis=-1)
        fin = np.where(np.isneginf(lw), 0.0, lw)
        val = (xlogx(rows) - rows * fin).sum(axis=-1)
        return np.where(bad, np.inf, val)

    def rows_of(self, flat_index: int) -> np.ndarray:
        idx = np.unravel_index(flat_index, self.gs)
        return np.stack([self.slot_grids[r][idx[r]] for r in range(self.s)])

    def stats_of(self, rows: np.ndarray) -> dict[str, np.ndarray]:
        """Same accumulations for a single candidate, rows shape (s, ny)."""
        wr = self.weights[:, None] * rows
        qy = wr.sum(axis=0)
        qxy = self._x_onehot.T @ wr
        qxpy = self._xp_onehot.T @ wr
        if ((rows > 0) & self._lw_dead).any():
            kl = np.inf
        else:
            per_slot = (xlogx(rows) - rows * self._lw_fin).sum(axis=1)
            kl = float(self.weights @ per_slot)
        return {"qy": qy, "qxy": qxy, "qxpy": qxpy, "kl": kl}

    def params_to_rows(self, params: np.ndarray) -> np.ndarray | None:
        """Free coordinates (first ny-1 entries per slot) -> full rows, or
        None when outside the simplex."""
        free = params.reshape(self.s, self.ny - 1)
        if np.any(free < -1e-12):
            return None
        last = 1.0 - free.sum(axis=1)
        if np.any(last < -1e-12):
            return None
        rows = np.concatenate([free, last[:, None]], axis=1)
        return np.clip(rows, 0.0, 1.0)

    def rows_to_params(self, rows: np.ndarray) -> np.ndarray:
        return rows[:, : self.ny - 1].reshape(-1)


def row_grid(ny: int, k: int, cap: int) -> np.ndarray:
    return simplex_grid_array(ny, k, cap)


def zoom_slot_grids(centers: np.ndarray, h: float, budget: int,
                    points_cap: int = 33) -> list[np.ndarray]:
    """Per-slot local row grids for zoom refinement: points of each row
    simplex within an L-inf box of half-width h around that slot's center.

    The number of points per free axis is the largest of (33, 17, 9, 5, 3)
    within points_cap that keeps the full product mesh within budget. Each
    slot always retains at least its own center point.
    """
    s, ny = centers.shape
    free = ny - 1
    p = 3
    for cand in (33, 17, 9, 5, 3):
        if cand <= points_cap and cand ** (free * s) <= budget:
            p = cand
            break
    grids = []
    for r in range(s):
        axes = []
        for j in range(free):
            c = centers[r, j]
            axes.append(np.unique(np.clip(np.linspace(c - h, c + h, p), 0.0, 1.0)))
        mesh = np.meshgrid(*axes, indexing="ij")
        fc = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        last = 1.0 - fc.sum(axis=1)
        ok = last >= -1e-12
        grids.append(np.concatenate([fc[ok], np.clip(last[ok], 0.0, 1.0)[:, None]], axis=1))
    return grids


def mesh_budget_ok(g: int, s: int, per_candidate: int, budget: int) -> bool:
    return g**s * per_candidate <= budget
