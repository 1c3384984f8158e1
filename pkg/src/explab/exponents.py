"""Primal computation of the typical-random-code and expurgated error
exponents of fixed-composition ensembles over a DMC, for the matched
(ML) and universal (MMI) decoding metrics.

The rate-R exponent of the typical random codebook is the double
minimization

    E_trc(R) = min over couplings {Q_XX' : I(X;X') <= 2R, both marginals
               pinned to the composition} of  Gamma(Q_XX', R) + I(X;X') - R,

where the inner value Gamma is itself a constrained minimum over channel
conditionals Q_{Y|XX'}; the expurgated exponent has the same shape with the
outer constraint I <= R and a soft-clamped inner penalty (Gamma-tilde). Both
inner problems reference a rate-dependent threshold (``a_threshold`` /
``alpha_threshold``): the largest metric score an incorrect codeword of the
pinned composition can reach among output-conditionals at information cost at
most R.

All searches follow one scheme (see search.py): exhaustive coarse grid, then
nested zoom meshes around the incumbent (full local grids with shrinking
half-width, which keep the thin feasible shells of active score constraints
covered), then a coordinate shrink-and-probe polish. Hard constraints carry a
grid-resolution slack that is graded away with the zoom scale, so reported
witnesses are exactly feasible. None of the feasible sets here are convex for
the MMI metric, so no solver certificate is claimed beyond the grid
resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .prob import Channel, CondDist, Dist, Joint2, ProbError, coupling_grid, mutual_information
from .search import (
    GOLDEN,
    RowMesh,
    TransportPolytope,
    elog_batch,
    mi_batch,
    pattern_min,
    row_grid,
    zoom_slot_grids,
)

MASS_TOL = 1e-15  # coupling cells below this carry no conditional row


@dataclass(frozen=True)
class DecodingMetric:
    """Selector for the decoding functional g applied to joints over X x Y.

    - ``ml``:  g(Q) = E_Q[log W(Y|X)]; -inf when Q charges a zero of W.
    - ``mmi``: g(Q) = I_Q(X;Y); the channel argument is ignored.
    """

    kind: str

    def __post_init__(self) -> None:
        if self.kind not in ("ml", "mmi"):
            raise ProbError(f"unknown decoding metric {self.kind!r}")

    def evaluate(self, j: Joint2, ch: Channel | None = None) -> float:
        if self.kind == "mmi":
            return mutual_information(j)
        if ch is None:
            raise ProbError("the ml metric needs a channel")
        return float(elog_batch(j.probs[None], ch.log_matrix)[0])


ML = DecodingMetric("ml")
MMI = DecodingMetric("mmi")


@dataclass(frozen=True)
class OptimizerOptions:
    """Knobs shared by every grid-plus-refinement search in the package.

    ``constraint_slack`` is the additive slack applied to inequality
    constraints so that coarse-grid points near a boundary are not spuriously
    rejected; when left None it resolves to 1e-3 scaled with the grid step
    (1e-3 at the default 1/8 step).
    """

    grid_step: float = 0.125
    refine_iters: int = 20
    refine_shrink: float = 0.5
    constraint_slack: float | None = None
    value_tol: float = 1e-6
    budget_cap: int = 2_000_000

    def __post_init__(self) -> None:
        if not (0 < self.grid_step <= 1):
            raise ProbError(f"grid_step must be in (0,1], got {self.grid_step}")
        if abs(round(1.0 / self.grid_step) - 1.0 / self.grid_step) > 1e-9:
            raise ProbError(f"grid_step must be 1/k for integer k, got {self.grid_step}")
        if self.refine_iters < 0 or not (0 < self.refine_shrink < 1):
            raise ProbError("refine_iters must be >= 0 and refine_shrink in (0,1)")
        if self.value_tol <= 0 or self.budget_cap <= 0:
            raise ProbError("value_tol and budget_cap must be positive")
        if self.constraint_slack is not None and self.constraint_slack < 0:
            raise ProbError("constraint_slack must be nonnegative")

    @property
    def k(self) -> int:
        return round(1.0 / self.grid_step)

    @property
    def slack(self) -> float:
        if self.constraint_slack is not None:
            return self.constraint_slack
        return 1e-3 * (8.0 * self.grid_step)


@dataclass(frozen=True)
class RatePoint:
    """A coding rate in nats per channel use plus the codeword composition."""

    rate: float
    composition: Dist

    def __post_init__(self) -> None:
        if self.rate < 0 or not math.isfinite(self.rate):
            raise ProbError(f"rate must be finite and >= 0, got {self.rate}")


@dataclass
class ExponentResult:
    """Value of an exponent optimization together with its witnesses.

    ``value`` is clamped to >= 0; the raw minimum is kept in diagnostics.
    ``argmin_coupling`` is the outer minimizer Q_XX'; ``argmin_channel`` holds
    the inner conditional rows Q_{Y|XX'} (rows indexed by (x, x')).
    """

    value: float
    argmin_coupling: Joint2
    argmin_channel: CondDist
    diagnostics: dict


@dataclass
class RateRecord:
    rate: float
    value: float
    ok: bool
    error: str | None
    diagnostics: dict


@dataclass
class ExponentCurve:
    which: str
    metric: str
    records: list[RateRecord] = field(default_factory=list)


# ---------------------------------------------------------------------------
# metric context: g evaluation and the rate-R score thresholds
# ---------------------------------------------------------------------------

_QUANT = 4096.0  # lattice for memoizing thresholds on quantized Q_Y


class _MetricCtx:
    """Per-(channel, composition, metric, options) solver state.

    Holds the threshold memo cache: ``a_threshold``/``alpha_threshold`` get
    re-evaluated for every inner candidate's output marginal, so values are
    memoized on the quantized Q_Y lattice. Entries are deterministic, so
    concurrent insert-or-read races are benign.
    """

    def __init__(self, ch: Channel, qx: Dist, metric: DecodingMetric, opts: OptimizerOptions):
        self.ch = ch
        self.qx = qx
        self.kind = metric.kind
        self.opts = opts
        self.logw = ch.log_matrix
        self._memo: dict[tuple, float] = {}
        self._tables: dict[tuple, np.ndarray] = {}
        self._fast_1d = (
            ch.n_in == 2 and ch.n_out == 2
            and (self.kind == "mmi" or bool(ch.support.all()))
        )

    # g over a batch of joints on X x Y
    def g_batch(self, j: np.ndarray) -> np.ndarray:
        if self.kind == "ml":
            return elog_batch(j, self.logw)
        return mi_batch(j)

    # ----- threshold solves ------------------------------------------------

    def threshold(self, qy: np.ndarray, rate: float, which: str) -> float:
        """a(R, Q_Y) for which='a', alpha(R, Q_Y) for which='alpha'."""
        key_vec = np.rint(qy * _QUANT).astype(np.int64)
        if self._fast_1d:
            return float(self._lattice_table(rate, which)[int(key_vec[0])])
        key = (which, round(rate * 1e12), tuple(key_vec))
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        snapped = key_vec / _QUANT
        total = snapped.sum()
        if total <= 0:
            raise ProbError("threshold called with a zero output marginal")
        val = self._solve_threshold(snapped / total, rate, which)
        self._memo[key] = val
        return val

    def threshold_batch(self, qy_arr: np.ndarray, rate: float, which: str) -> np.ndarray:
        keys = np.rint(qy_arr * _QUANT).astype(np.int64)
        if self._fast_1d:
            return self._lattice_table(rate, which)[keys[:, 0]]
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        vals = np.empty(uniq.shape[0])
        for i, u in enumerate(uniq):
            vals[i] = self.threshold(u / _QUANT, rate, which)
        return vals[inverse.reshape(-1)]

    # Binary X and Y: the coupling polytope for every Q_Y is one-dimensional,
    # so the whole quantized-Q_Y memo lattice is solved in one vectorized pass
    # (interval endpoints by bisection, then endpoint/golden evaluation).

    def _lattice_table(self, rate: float, which: str) -> np.ndarray:
        tkey = (which, round(rate * 1e12))
        table = self._tables.get(tkey)
        if table is None:
            qy0 = np.arange(int(_QUANT) + 1) / _QUANT
            table = self._solve_1d_batch(np.stack([qy0, 1.0 - qy0], axis=1), rate, which)
            self._tables[tkey] = table
        return table

    def _solve_1d_batch(self, qys: np.ndarray, rate: float, which: str) -> np.ndarray:
        qx = self.qx.probs
        base = qx[None, :, None] * qys[:, None, :]
        bmove = np.array([[1.0, -1.0], [-1.0, 1.0]])

        def info(c: np.ndarray) -> np.ndarray:
            return mi_batch(base + c[:, None, None] * bmove)

        lo = -np.minimum(base[:, 0, 0], base[:, 1, 1])
        hi = np.minimum(base[:, 0, 1], base[:, 1, 0])

        def edge(side: np.ndarray) -> np.ndarray:
            ok = info(side) <= rate
            a = np.where(ok, side, 0.0)
            b = side.copy()
            for _ in range(60):
                mid = 0.5 * (a + b)
                good = info(mid) <= rate
                a = np.where(good, mid, a)
                b = np.where(good, b, mid)
            return np.where(ok, side, a)

        c_lo = edge(lo)
        c_hi = edge(hi)
        if which == "alpha" and self.kind == "mmi":
            return np.full(qys.shape[0], rate)
        if which == "a" and self.kind == "mmi":
            return np.maximum(info(c_lo), info(c_hi))

        def g_of(c: np.ndarray) -> np.ndarray:
            return elog_batch(base + c[:, None, None] * bmove, self.logw)

        if which == "a":
            # full channel support: g is affine on the interval, ends win
            return np.maximum(g_of(c_lo), g_of(c_hi))

        # alpha under ml: g - I + rate is concave on the interval
        def f(c: np.ndarray) -> np.ndarray:
            return g_of(c) - info(c) + rate

        a, b = c_lo.copy(), c_hi.copy()
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        f1, f2 = f(x1), f(x2)
        for _ in range(70):
            keep_left = f1 >= f2
            a_new = np.where(keep_left, a, x1)
            b_new = np.where(keep_left, x2, b)
            x1_fresh = b_new - GOLDEN * (b_new - a_new)
            x2_fresh = a_new + GOLDEN * (b_new - a_new)
            fx1 = f(x1_fresh)
            fx2 = f(x2_fresh)
            x1, f1, x2, f2 = (
                np.where(keep_left, x1_fresh, x2),
                np.where(keep_left, fx1, f2),
                np.where(keep_left, x1, x2_fresh),
                np.where(keep_left, f1, fx2),
            )
            a, b = a_new, b_new
        xm = 0.5 * (a + b)
        return np.maximum.reduce([f(xm), f(c_lo), f(c_hi)])

    def _solve_threshold(self, qy: np.ndarray, rate: float, which: str) -> float:
        poly = TransportPolytope(self.qx.probs, qy)
        if poly.dim == 0:
            j = poly.base
            if mutual_information(Joint2(j)) > rate + self.opts.slack:
                return -math.inf
            return self._threshold_obj(j[None], rate, which)[0]
        if poly.dim == 1:
            return self._solve_threshold_1d(poly, rate, which)
        return self._solve_threshold_grid(poly, rate, which)

    def _threshold_obj(self, joints: np.ndarray, rate: float, which: str) -> np.ndarray:
        g = self.g_batch(joints)
        if which == "a":
            return g
        return g - mi_batch(joints) + rate

    def _solve_threshold_1d(self, poly: TransportPolytope, rate: float, which: str) -> float:
        # One free coordinate: the I <= R region is an exact interval around
        # the product coupling (I is convex with I(0) = 0), so locate its
        # endpoints by bisection and optimize on a dense 1-d grid inside.
        b = poly.basis[0]
        pos = b > 0
        neg = b < 0
        lo = float(np.max(-poly.base[pos] / b[pos]))
        hi = float(np.min(poly.base[neg] / -b[neg]))

        def info(c: float) -> float:
            return float(mi_batch(poly.joints(np.array([c]))[None])[0])

        def edge(c_out: float) -> float:
            # largest |c| on the segment [0, c_out] with I(c) <= rate
            if info(c_out) <= rate:
                return c_out
            a, bb = 0.0, c_out
            for _ in range(80):
                mid = 0.5 * (a + bb)
                if info(mid) <= rate:
                    a = mid
                else:
                    bb = mid
            return a

        c_lo = edge(lo)
        c_hi = edge(hi)
        if which == "a" and self.kind == "mmi":
            return max(info(c_lo), info(c_hi))
        if which == "alpha" and self.kind == "mmi":
            return rate  # objective I - I + R is constant on the feasible set
        cs = np.linspace(c_lo, c_hi, 129)
        joints = poly.joints(cs[:, None])
        ok = poly.feasible(joints)
        obj = np.where(ok, self._threshold_obj(np.clip(joints, 0.0, None), rate, which), -np.inf)
        best = int(np.argmax(obj))
        c_best, v_best = cs[best], obj[best]
        span = (c_hi - c_lo) / 128 if c_hi > c_lo else 0.0

        def fneg(c: np.ndarray) -> float:
            j = poly.joints(c)
            if not poly.feasible(j[None])[0]:
                return math.inf
            j = np.clip(j, 0.0, None)
            if mi_batch(j[None])[0] > rate + 1e-12:
                return math.inf
            return -float(self._threshold_obj(j[None], rate, which)[0])

        if span > 0:
            c_ref, v_ref, _ = pattern_min(
                np.array([c_best]), fneg, span, self.opts.refine_iters, self.opts.refine_shrink
            )
            if -v_ref > v_best:
                v_best = -v_ref
        return float(v_best)

    def _solve_threshold_grid(self, poly: TransportPolytope, rate: float, which: str) -> float:
        slack = self.opts.slack
        cs = poly.grid(2 * self.opts.k + 1, self.opts.budget_cap // 8)
        joints = poly.joints(cs)
        ok = poly.feasible(joints)
        joints = np.clip(joints, 0.0, None)
        ok &= mi_batch(joints) <= rate + slack
        if not ok.any():
            cs = np.vstack([cs, np.zeros((1, poly.dim))])
            joints = poly.joints(cs)
            ok = np.concatenate([ok, [True]])  # product coupling, I = 0
        obj = np.where(ok, self._threshold_obj(joints, rate, which), -np.inf)
        best = int(np.argmax(obj))
        c0 = cs[best]

        def fneg(c: np.ndarray) -> float:
            j = poly.joints(c)
            if not poly.feasible(j[None])[0]:
                return math.inf
            j = np.clip(j, 0.0, None)
            if mi_batch(j[None])[0] > rate + slack:
                return math.inf
            return -float(self._threshold_obj(j[None], rate, which)[0])

        c_ref, v_ref, _ = pattern_min(
            c0, fneg, self.opts.grid_step, self.opts.refine_iters, self.opts.refine_shrink
        )
        return float(max(obj[best], -v_ref))


# ---------------------------------------------------------------------------
# public threshold operations
# ---------------------------------------------------------------------------


def a_threshold(rate: float, q_y: Dist, metric: DecodingMetric, ch: Channel,
                q_x: Dist, opts: OptimizerOptions = OptimizerOptions()) -> float:
    """Largest metric score g(Q_XY) over joints with X-marginal pinned to the
    composition, Y-marginal equal to q_y, and I(X;Y) <= rate.

    -inf when the feasible set scores -inf everywhere (possible for the ml
    metric when every feasible joint charges a zero of the channel).
    """
    _check_rate_inputs(rate, q_y, ch, q_x)
    ctx = _MetricCtx(ch, q_x, metric, opts)
    return ctx.threshold(q_y.probs, rate, "a")


def alpha_threshold(rate: float, q_y: Dist, metric: DecodingMetric, ch: Channel,
                    q_x: Dist, opts: OptimizerOptions = OptimizerOptions()) -> float:
    """Same feasible set as a_threshold, objective g(Q_XY) - I(X;Y) + rate."""
    _check_rate_inputs(rate, q_y, ch, q_x)
    ctx = _MetricCtx(ch, q_x, metric, opts)
    return ctx.threshold(q_y.probs, rate, "alpha")


def _check_rate_inputs(rate: float, q_y: Dist, ch: Channel, q_x: Dist) -> None:
    if rate < 0 or not math.isfinite(rate):
        raise ProbError(f"rate must be finite and >= 0, got {rate}")
    if q_y.size != ch.n_out:
        raise ProbError(f"q_y has {q_y.size} symbols, channel emits {ch.n_out}")
    if q_x.size != ch.n_in:
        raise ProbError(f"q_x has {q_x.size} symbols, channel accepts {ch.n_in}")


# ---------------------------------------------------------------------------
# inner problems over Q_{Y|XX'}
# ---------------------------------------------------------------------------


def _support_slots(q_xx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs, xps = np.nonzero(q_xx > MASS_TOL)
    return q_xx[xs, xps], xs, xps


def _clamp_penalty(max_side: np.ndarray, gxp: np.ndarray) -> np.ndarray:
    """[max_side - gxp]_+ with the -inf cases resolved: a -inf score for the
    competitor is an infinite penalty unless the reference side is -inf too."""
    with np.errstate(invalid="ignore"):
        pen = np.maximum(max_side - gxp, 0.0)
    dead_xp = np.isneginf(gxp)
    pen = np.where(dead_xp & np.isneginf(max_side), 0.0, pen)
    pen = np.where(dead_xp & ~np.isneginf(max_side), np.inf, pen)
    return pen


_N_STARTS = 4  # distinct grid basins fed to the refinement ladder


def _spread_minima(obj: np.ndarray, k: int, shape: tuple[int, ...]) -> list[int]:
    """Indices of up to k small finite entries of obj, spread at least two
    grid cells apart (L-inf over the mesh coordinates) so the refinements
    start from distinct basins rather than one cluster."""
    order = np.argsort(obj, kind="stable")
    order = order[np.isfinite(obj[order])]
    if order.size == 0:
        return []
    scan = order[: max(64 * k, 256)]
    coords = np.stack(np.unravel_index(scan, shape), axis=1)
    picked = [0]
    for i in range(1, scan.size):
        if len(picked) >= k:
            break
        if all(np.abs(coords[i] - coords[p]).max() >= 2 for p in picked):
            picked.append(i)
    return [int(scan[i]) for i in picked]


class _InnerSolve:
    """Grid + refinement over the conditional rows Q_{Y|XX'} for Gamma (hard
    score constraint) and Gamma-tilde (clamped penalty)."""

    def __init__(self, ctx: _MetricCtx, q_xx: np.ndarray, rate: float, tilde: bool):
        self.ctx = ctx
        self.rate = rate
        self.tilde = tilde
        self.which = "alpha" if tilde else "a"
        weights, xs, xps = _support_slots(q_xx)
        ch = ctx.ch
        self.mesh = RowMesh(weights, xs, xps,
                            row_grid(ch.n_out, ctx.opts.k, ctx.opts.budget_cap),
                            ch.n_in, ch.log_matrix)

    def _objective(self, kl, qxy, qxpy, qy, slack: float | None = None) -> np.ndarray:
        ctx = self.ctx
        gx = ctx.g_batch(qxy)
        gxp = ctx.g_batch(qxpy)
        avals = ctx.threshold_batch(qy, self.rate, self.which)
        max_side = np.maximum(gx, avals)
        if self.tilde:
            return kl + _clamp_penalty(max_side, gxp)
        feas = gxp >= max_side - (ctx.opts.slack if slack is None else slack)
        return np.where(feas, kl, np.inf)

    def _objective_single(self, rows: np.ndarray, slack: float | None = None) -> float:
        st = self.mesh.stats_of(rows)
        val = self._objective(
            np.array([st["kl"]]), st["qxy"][None], st["qxpy"][None], st["qy"][None],
            slack=slack,
        )[0]
        return float(val)

    def _margin(self, rows: np.ndarray) -> float:
        st = self.mesh.stats_of(rows)
        gx = float(self.ctx.g_batch(st["qxy"][None])[0])
        gxp = float(self.ctx.g_batch(st["qxpy"][None])[0])
        aval = self.ctx.threshold(st["qy"], self.rate, self.which)
        return gxp - max(gx, aval)

    def solve(self, warm_rows: np.ndarray | None = None,
              extra_starts: list[np.ndarray] | None = None) -> dict:
        """Full solve: global grid -> zoom refinement -> pattern polish.

        A warm start (witness rows from a nearby coupling's solve) skips the
        global stage; the thin feasible shells these problems develop near
        active score constraints are handled by the zoom stages, which keep
        full-dimensional local meshes instead of single-coordinate probes.
        The hard-constraint slack is graded down with the zoom scale, so the
        reported witness satisfies the score constraint exactly (a strictly
        feasible anchor repairs any residual boundary violation).
        """
        mesh, ctx = self.mesh, self.ctx
        budget_ok = mesh.size() * mesh.nx * mesh.ny <= ctx.opts.budget_cap
        starts: list[tuple[np.ndarray, float]] = []
        n_feasible = -1
        evals = 0
        if warm_rows is not None:
            starts.append((warm_rows, self._objective_single(warm_rows)))
        elif budget_ok:
            arrs = mesh.build()
            obj = self._objective(arrs["kl"], arrs["qxy"], arrs["qxpy"], arrs["qy"])
            n_feasible = int(np.isfinite(obj).sum())
            for idx in _spread_minima(obj, _N_STARTS, mesh.gs):
                starts.append((mesh.rows_of(idx), float(obj[idx])))
        else:
            starts.append(self._sweep_start()[:2])
        for rows in extra_starts or []:
            starts.append((rows, self._objective_single(rows)))
        if not starts or not math.isfinite(starts[0][1]):
            # nothing feasible yet: manufacture a start with the soft-penalty
            # ladder before giving up (the feasible set may be a thin shell
            # the coarse grid misses entirely)
            rows_pen, ev = self._penalty_ladder()
            evals += ev
            if rows_pen is not None:
                starts = [(rows_pen, self._objective_single(rows_pen))]
            else:
                rows_w = ctx.ch.w[mesh.x_of]
                starts = [(rows_w, self._objective_single(rows_w))]

        anchor = {"rows": None, "kl": math.inf}
        rows_best, v_best = starts[0]
        for rows0, v0 in starts:
            rows_z, v_z, ev = self._zoom(rows0, v0, anchor,
                                         shallow=warm_rows is not None)
            evals += ev
            if v_z < v_best:
                rows_best, v_best = rows_z, v_z

        if not self.tilde:
            # repair to exact feasibility before the exact-slack polish
            rows_best, v_best = self._exact_feasible(rows_best, anchor)
        final_slack = 0.0 if not self.tilde else None

        def f(params: np.ndarray) -> float:
            rows = mesh.params_to_rows(params)
            if rows is None:
                return math.inf
            return self._objective_single(rows, slack=final_slack)

        p_ref, v_ref, ev = pattern_min(
            mesh.rows_to_params(rows_best), f,
            ctx.opts.grid_step / 2**4, ctx.opts.refine_iters, ctx.opts.refine_shrink
        )
        evals += ev
        if v_ref < v_best:
            rows_best, v_best = mesh.params_to_rows(p_ref), v_ref

        return {
            "value": float(v_best),
            "rows": rows_best,
            "n_feasible": n_feasible,
            "refine_evals": evals,
            "score_margin": self._margin(rows_best),
        }

    def _zoom(self, rows0: np.ndarray, v0: float, anchor: dict,
              shallow: bool = False) -> tuple[np.ndarray, float, int]:
        """Nested local meshes around the incumbent with shrinking half-width;
        exhaustive within each box, so active-constraint shells stay covered.
        The feasibility slack shrinks with the box (exact in the limit), and
        the best strictly feasible candidate seen is kept as a repair anchor."""
        ctx = self.ctx
        stages = max(4, ctx.opts.refine_iters // 3)
        h = ctx.opts.grid_step
        cap = 33
        if shallow:
            stages = max(3, stages - 2)
            h = ctx.opts.grid_step / 2
            cap = 9  # warm probes rank couplings; the final cold solve decides
        rows, val = rows0, v0
        evals = 0
        budget = ctx.opts.budget_cap // (4 * self.mesh.nx * self.mesh.ny)
        for _ in range(stages):
            grids = zoom_slot_grids(rows, h, budget, points_cap=cap)
            local = RowMesh(self.mesh.weights, self.mesh.x_of, self.mesh.xp_of,
                            grids, self.mesh.nx, ctx.ch.log_matrix)
            arrs = local.build()
            evals += arrs["kl"].size
            if self.tilde:
                obj = self._objective(arrs["kl"], arrs["qxy"], arrs["qxpy"], arrs["qy"])
                best = int(np.argmin(obj))
                if np.isfinite(obj[best]) and obj[best] < val - 1e-15:
                    rows, val = local.rows_of(best), float(obj[best])
            else:
                # one pass serves both the graded-slack objective and the
                # strictly feasible anchor used by the final repair
                gx = ctx.g_batch(arrs["qxy"])
                gxp = ctx.g_batch(arrs["qxpy"])
                avals = ctx.threshold_batch(arrs["qy"], self.rate, self.which)
                with np.errstate(invalid="ignore"):
                    margin = gxp - np.maximum(gx, avals)
                # -inf on both sides counts as a (boundary) feasible tie
                margin = np.where(np.isnan(margin), 0.0, margin)
                slack_h = ctx.opts.slack * (h / ctx.opts.grid_step)
                obj = np.where(margin >= -slack_h, arrs["kl"], np.inf)
                best = int(np.argmin(obj))
                if np.isfinite(obj[best]) and obj[best] < val - 1e-15:
                    rows, val = local.rows_of(best), float(obj[best])
                strict = np.where(margin >= 0.0, arrs["kl"], np.inf)
                sbest = int(np.argmin(strict))
                if np.isfinite(strict[sbest]) and strict[sbest] < anchor["kl"]:
                    anchor["rows"] = local.rows_of(sbest)
                    anchor["kl"] = float(strict[sbest])
            h *= ctx.opts.refine_shrink
        return rows, val, evals

    def _exact_feasible(self, rows: np.ndarray, anchor: dict) -> tuple[np.ndarray, float]:
        """Return a witness satisfying the score constraint with margin >= 0,
        repairing a boundary-hugging incumbent by bisecting toward the best
        strictly feasible candidate seen during the zoom stages."""
        if self._margin(rows) >= 0.0:
            return rows, self._objective_single(rows, slack=0.0)
        target = anchor["rows"]
        if target is None:
            # nothing strictly feasible anywhere: report under the base slack
            return rows, self._objective_single(rows)
        best_rows, best_val = target, anchor["kl"]
        lo_t, hi_t = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo_t + hi_t)
            cand = (1.0 - mid) * rows + mid * target
            if self._margin(cand) >= 0.0:
                hi_t = mid
            else:
                lo_t = mid
        cand = (1.0 - hi_t) * rows + hi_t * target
        v = self._objective_single(cand, slack=0.0)
        if v < best_val:
            best_rows, best_val = cand, v
        return best_rows, best_val

    def _penalty_ladder(self) -> tuple[np.ndarray | None, int]:
        """Soft-constraint continuation for Gamma: minimize KL plus an
        increasingly stiff clamp penalty, warm-starting each stage, then
        polish under the hard constraint. Returns (rows or None, evals)."""
        mesh, ctx = self.mesh, self.ctx

        def penalized(lam: float):
            def f(params: np.ndarray) -> float:
                rows = mesh.params_to_rows(params)
                if rows is None:
                    return math.inf
                st = mesh.stats_of(rows)
                gx = float(ctx.g_batch(st["qxy"][None])[0])
                gxp = float(ctx.g_batch(st["qxpy"][None])[0])
                aval = ctx.threshold(st["qy"], self.rate, self.which)
                pen = float(_clamp_penalty(np.array(max(gx, aval)), np.array(gxp)))
                return st["kl"] + lam * pen
            return f

        evals = 0
        params = mesh.rows_to_params(self.ctx.ch.w[mesh.x_of])
        stage_iters = max(8, ctx.opts.refine_iters // 2)
        for lam in (8.0, 64.0, 1024.0):
            params, _, ev = pattern_min(params, penalized(lam), ctx.opts.grid_step,
                                        stage_iters, ctx.opts.refine_shrink)
            evals += ev
        params, v_hard, ev = pattern_min(
            params, lambda p: math.inf if mesh.params_to_rows(p) is None
            else self._objective_single(mesh.params_to_rows(p)),
            ctx.opts.grid_step / 2, ctx.opts.refine_iters, ctx.opts.refine_shrink)
        evals += ev
        if not math.isfinite(v_hard):
            return None, evals
        return mesh.params_to_rows(params), evals

    def _sweep_start(self) -> tuple[np.ndarray, float, int]:
        """Coordinate sweeps (one row at a time over its full grid) when the
        product mesh would blow the budget."""
        mesh = self.mesh
        starts = [self.ctx.ch.w[mesh.x_of],
                  np.full((mesh.s, mesh.ny), 1.0 / mesh.ny)]
        best_rows, best_v = starts[0], math.inf
        for rows in starts:
            rows = rows.copy()
            val = self._objective_single(rows)
            for _ in range(3):
                for r in range(mesh.s):
                    grid_r = mesh.slot_grids[r]
                    cand = np.repeat(rows[None], grid_r.shape[0], axis=0)
                    cand[:, r, :] = grid_r
                    vals = np.array([self._objective_single(c) for c in cand])
                    i = int(np.argmin(vals))
                    if vals[i] < val - 1e-15:
                        rows, val = cand[i], float(vals[i])
            if val < best_v:
                best_rows, best_v = rows, val
        return best_rows, best_v, -1


def gamma(q_xx: Joint2, rate: float, metric: DecodingMetric, ch: Channel,
          q_x: Dist, opts: OptimizerOptions = OptimizerOptions()) -> float:
    """Constrained inner minimum: smallest -E[log W] - H(Y|X,X') over channel
    conditionals whose competitor score g(Q_X'Y) reaches max{g(Q_XY), a(R,Q_Y)}.

    +inf when no conditional on the search grid (or found by refinement)
    satisfies the score constraint.
    """
    _check_coupling(q_xx, q_x, opts)
    ctx = _MetricCtx(ch, q_x, metric, opts)
    return _InnerSolve(ctx, q_xx.probs, rate, tilde=False).solve()["value"]


def gamma_tilde(q_xx: Joint2, rate: float, metric: DecodingMetric, ch: Channel,
                q_x: Dist, opts: OptimizerOptions = OptimizerOptions()) -> float:
    """Unconstrained variant: the score shortfall enters as the clamped
    penalty [max{g(Q_XY), alpha(R,Q_Y)} - g(Q_X'Y)]_+ instead of a hard
    constraint.

    The hard-constraint witness is fed in as an extra start: it is feasible
    for the penalized problem at zero penalty, which keeps the computed value
    at or below the computed hard-constraint minimum.
    """
    _check_coupling(q_xx, q_x, opts)
    ctx = _MetricCtx(ch, q_x, metric, opts)
    hard = _InnerSolve(ctx, q_xx.probs, rate, tilde=False).solve()
    return _InnerSolve(ctx, q_xx.probs, rate, tilde=True).solve(
        extra_starts=[hard["rows"]])["value"]


def _check_coupling(q_xx: Joint2, q_x: Dist, opts: OptimizerOptions) -> None:
    m = q_xx.probs
    if m.shape[0] != m.shape[1] or m.shape[0] != q_x.size:
        raise ProbError(f"coupling shape {m.shape} does not match composition size {q_x.size}")
    err = max(np.abs(m.sum(axis=1) - q_x.probs).max(),
              np.abs(m.sum(axis=0) - q_x.probs).max())
    if err > opts.slack + 1e-9:
        raise ProbError(f"coupling marginals deviate from the composition by {err}")


# ---------------------------------------------------------------------------
# outer problems over the coupling Q_XX'
# ---------------------------------------------------------------------------


def _outer_minimize(rp: RatePoint, ch: Channel, opts: OptimizerOptions,
                    info_cap: float,
                    inner: Callable[..., dict],
                    reeval: Callable[[np.ndarray, np.ndarray], float]) -> ExponentResult:
    qx = rp.composition
    # the coupling polytope always contains the product point in its
    # interior, so the information cap needs no grid slack
    slack = 1e-12
    # the product coupling (information 0) is always feasible but is not
    # always a grid point (its entries need not be multiples of the step),
    # so it seeds the search unconditionally
    q_prod = np.outer(qx.probs, qx.probs)
    res0 = inner(q_prod)
    best = (res0["value"] - rp.rate, q_prod, res0, 0.0)
    n_feasible = 0
    for j2 in coupling_grid(qx, opts.k):
        q = j2.probs
        info = mutual_information(j2)
        if info > info_cap + slack:
            continue
        n_feasible += 1
        res = inner(q)
        total = res["value"] + info - rp.rate
        if total < best[0] - 1e-15:
            best = (total, q, res, info)

    poly = TransportPolytope(qx.probs, qx.probs)
    # refinement probes warm-start the inner solve from the incumbent's
    # witness whenever the coupling support pattern matches
    state = {"rows": best[2]["rows"], "sig": _support_sig(best[1]), "val": best[0]}

    def f(c: np.ndarray) -> float:
        j = poly.joints(c)
        if not poly.feasible(j[None])[0]:
            return math.inf
        j = np.clip(j, 0.0, None)
        info = float(mi_batch(j[None])[0])
        if info > info_cap + slack:
            return math.inf
        warm = state["rows"] if _support_sig(j) == state["sig"] else None
        res = inner(j, warm)
        val = res["value"] + info - rp.rate
        if val < state["val"]:
            state.update(rows=res["rows"], sig=_support_sig(j), val=val)
        return val

    c0 = poly.param_of(best[1])
    c_ref, v_ref, evals = pattern_min(
        c0, f, opts.grid_step, opts.refine_iters, opts.refine_shrink
    )
    if v_ref < best[0]:
        j = np.clip(poly.joints(c_ref), 0.0, None)
        res = inner(j)  # cold re-solve at the winning coupling
        best = (min(v_ref, res["value"] + float(mi_batch(j[None])[0]) - rp.rate),
                j, res, float(mi_batch(j[None])[0]))

    raw, q, res, info = best
    rows_full = _full_conditional(ch, q, res["rows"])
    # witness consistency: re-evaluate the objective at the reported rows
    recheck = reeval(q, res["rows"]) + info - rp.rate
    diag = {
        "raw_value": float(raw),
        "coupling_information": info,
        "outer_feasible_grid_points": n_feasible,
        "outer_refine_evals": evals,
        "inner_feasible_grid_points": res["n_feasible"],
        "inner_refine_evals": res["refine_evals"],
        "score_margin": res["score_margin"],
        "witness_recheck_gap": float(abs(recheck - raw)),
    }
    return ExponentResult(
        value=max(float(raw), 0.0),
        argmin_coupling=Joint2(q / q.sum()),
        argmin_channel=CondDist(rows_full),
        diagnostics=diag,
    )


def _support_sig(q: np.ndarray) -> tuple:
    return tuple((q > MASS_TOL).reshape(-1).tolist())


def _full_conditional(ch: Channel, q_xx: np.ndarray, support_rows: np.ndarray) -> np.ndarray:
    """Expand witness rows on the support pairs to a full (nx, nx, ny) table;
    zero-mass pairs get the true channel row (any valid row would do)."""
    nx, ny = ch.n_in, ch.n_out
    rows = np.empty((nx, nx, ny))
    for x in range(nx):
        rows[x, :, :] = ch.w[x]
    _, xs, xps = _support_slots(q_xx)
    rows[xs, xps, :] = support_rows
    return rows


def trc_exponent(rp: RatePoint, metric: DecodingMetric, ch: Channel,
                 opts: OptimizerOptions = OptimizerOptions()) -> ExponentResult:
    """Exponent of the typical random fixed-composition codebook at rate R:
    outer constraint I(X;X') <= 2R, inner value Gamma."""
    ctx = _MetricCtx(ch, rp.composition, metric, opts)

    def inner(q: np.ndarray, warm: np.ndarray | None = None) -> dict:
        return _InnerSolve(ctx, q, rp.rate, tilde=False).solve(warm)

    def reeval(q: np.ndarray, rows: np.ndarray) -> float:
        return _InnerSolve(ctx, q, rp.rate, tilde=False)._objective_single(rows)

    return _outer_minimize(rp, ch, opts, 2.0 * rp.rate, inner, reeval)


def expurgated_exponent(rp: RatePoint, metric: DecodingMetric, ch: Channel,
                        opts: OptimizerOptions = OptimizerOptions()) -> ExponentResult:
    """Exponent guaranteed after expurgating the worse half of a random
    codebook: outer constraint I(X;X') <= R, inner value Gamma-tilde."""
    ctx = _MetricCtx(ch, rp.composition, metric, opts)

    def inner(q: np.ndarray, warm: np.ndarray | None = None) -> dict:
        return _InnerSolve(ctx, q, rp.rate, tilde=True).solve(warm)

    def reeval(q: np.ndarray, rows: np.ndarray) -> float:
        return _InnerSolve(ctx, q, rp.rate, tilde=True)._objective_single(rows)

    return _outer_minimize(rp, ch, opts, rp.rate, inner, reeval)


def random_coding_exponent(rp: RatePoint, ch: Channel,
                           opts: OptimizerOptions = OptimizerOptions()) -> float:
    """Baseline ensemble-average exponent of the fixed-composition ensemble:
    min over Q_{Y|X} of D(Q_{Y|X} || W | Q_X) + [I(X;Y) - R]_+."""
    qx = rp.composition
    if qx.size != ch.n_in:
        raise ProbError(f"composition has {qx.size} symbols, channel accepts {ch.n_in}")
    support = np.nonzero(qx.probs > MASS_TOL)[0]
    mesh = RowMesh(qx.probs[support], support, support,
                   row_grid(ch.n_out, opts.k, opts.budget_cap), ch.n_in, ch.log_matrix)

    def objective(kl: np.ndarray, qxy: np.ndarray) -> np.ndarray:
        return kl + np.maximum(mi_batch(qxy) - rp.rate, 0.0)

    if mesh.size() * mesh.nx * mesh.ny <= opts.budget_cap:
        arrs = mesh.build()
        obj = objective(arrs["kl"], arrs["qxy"])
        best = int(np.argmin(obj))
        rows0, v0 = mesh.rows_of(best), float(obj[best])
    else:
        rows0 = ch.w[support]
        v0 = math.inf

    # zoom refinement, same scheme as the coupled inner problems
    h = opts.grid_step
    budget = opts.budget_cap // (4 * mesh.nx * mesh.ny)
    for _ in range(max(4, opts.refine_iters // 3)):
        local = RowMesh(mesh.weights, mesh.x_of, mesh.xp_of,
                        zoom_slot_grids(rows0, h, budget), ch.n_in, ch.log_matrix)
        arrs = local.build()
        obj = objective(arrs["kl"], arrs["qxy"])
        best = int(np.argmin(obj))
        if obj[best] < v0 - 1e-15:
            rows0, v0 = local.rows_of(best), float(obj[best])
        h *= opts.refine_shrink

    def f(params: np.ndarray) -> float:
        rows = mesh.params_to_rows(params)
        if rows is None:
            return math.inf
        st = mesh.stats_of(rows)
        return float(objective(np.array([st["kl"]]), st["qxy"][None])[0])

    _, v_ref, _ = pattern_min(mesh.rows_to_params(rows0), f, opts.grid_step / 2**4,
                              opts.refine_iters, opts.refine_shrink)
    return max(0.0, min(v0, float(v_ref)))


def sweep(rates, composition: Dist, metric: DecodingMetric, ch: Channel,
          opts: OptimizerOptions = OptimizerOptions(), which: str = "trc") -> ExponentCurve:
    """Evaluate one exponent family over a list of rates (sorted ascending).

    Per-point failures become flagged records; the sweep never aborts.
    """
    if which not in ("trc", "expurgated", "random"):
        raise ProbError(f"unknown sweep target {which!r}")
    rates = [float(r) for r in rates]
    if any(b < a for a, b in zip(rates, rates[1:])):
        raise ProbError("rates must be sorted ascending")
    curve = ExponentCurve(which=which, metric=metric.kind)
    for r in rates:
        try:
            rp = RatePoint(r, composition)
            if which == "random":
                val, diag = random_coding_exponent(rp, ch, opts), {}
            else:
                fn = trc_exponent if which == "trc" else expurgated_exponent
                res = fn(rp, metric, ch, opts)
                val, diag = res.value, res.diagnostics
            curve.records.append(RateRecord(r, val, True, None, diag))
        except Exception as exc:  # noqa: BLE001 - flagged, not raised
            curve.records.append(RateRecord(r, math.nan, False, str(exc), {}))
    return curve
