"""Lagrange-dual quantities that sandwich the TRC exponent, and the numerical
certification of the inequality chain between them.

Four per-coupling functionals are evaluated, each exactly in the sup/inf
order of its defining formula (no exchanges):

- ``psi``          sup over a Chernoff parameter of a pairwise row-overlap
                   score (the s = 1/2 point is the Bhattacharyya value);
- ``theta``        a rate-dependent sup-inf over (rho; sigma, tau, V) built
                   on the auxiliary kernel ``g_aux``;
- ``lambda_bound`` sup over a multiplier of the score-tilted inner channel
                   minimization with penalty I(X;Y) - I(X';Y);
- ``phi_bound``    same with penalty R - I(X';Y).

``ml_upper_bound`` / ``mmi_lower_bound`` push max{psi, theta} and
max{lambda, phi} through the common outer coupling minimization, and
``certify_theorem1`` assembles every margin into a report. Certification
never asserts: each inequality is reported with its measured margin, and
infinities (zero channel support between row pairs) are propagated as
flagged records, never as NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exponents import (
    ML,
    MMI,
    OptimizerOptions,
    RatePoint,
    _support_slots,
    trc_exponent,
)
from .prob import Channel, Dist, Joint2, ProbError, coupling_grid, entropy, mutual_information
from .search import (
    RowMesh,
    TransportPolytope,
    golden_max,
    mi_batch,
    pattern_min,
    row_grid,
    sup_ray,
)

RAY_HI = 8.0  # scalar parameters are searched on [0, RAY_HI], doubled on boundary hits


# ---------------------------------------------------------------------------
# auxiliary kernel G
# ---------------------------------------------------------------------------


def log_g_aux(y: int, sigma: float, tau: float, v: np.ndarray,
              ch: Channel, q_x: Dist) -> float:
    """log of the auxiliary kernel for output symbol y.

    For sigma > 0 this is sigma * log sum_x [W(y|x) q(x)^tau v(x)^-tau]^(1/sigma),
    evaluated stably in the log domain; sigma = 0 takes the exact max-term
    limit (needed because the bound chain picks sigma = 0). Terms with
    W(y|x) = 0 or q(x) = 0 (for tau > 0) drop out of the sum.
    """
    if sigma < 0 or tau < 0:
        raise ProbError("sigma and tau must be nonnegative")
    v = np.asarray(v, dtype=float)
    q = q_x.probs
    col = ch.w[:, y]
    alive = col > 0 if tau == 0 else (col > 0) & (q > 0)
    if tau > 0 and np.any(alive & (v <= 0)):
        raise ProbError("V must be strictly positive wherever the Q_X-weighted "
                        "channel column is positive")
    if not alive.any():
        return -math.inf
    t = np.full(q.size, -np.inf)
    t[alive] = ch.log_matrix[alive, y]
    if tau > 0:
        t[alive] += tau * (np.log(q[alive]) - np.log(v[alive]))
    if sigma == 0.0:
        return float(t.max())
    scaled = t / sigma
    m = scaled.max()
    return float(sigma * (m + np.log(np.exp(scaled - m).sum())))


def g_aux(y: int, sigma: float, tau: float, v: np.ndarray,
          ch: Channel, q_x: Dist) -> float:
    """The auxiliary kernel itself (exp of log_g_aux)."""
    return float(math.exp(log_g_aux(y, sigma, tau, v, ch, q_x)))


def _log_g_aux_mesh(sigmas: np.ndarray, taus: np.ndarray, vs: np.ndarray,
                    ch: Channel, q_x: Dist) -> np.ndarray:
    """log G over a full (sigma, tau, V, y) mesh; sigma = 0 rows use the
    max-term limit. vs has shape (nV, nx)."""
    q = q_x.probs
    logw = ch.log_matrix  # (nx, ny)
    logq = np.where(q > 0, np.log(np.where(q > 0, q, 1.0)), -np.inf)
    logv = np.log(vs)  # (nV, nx); vs > 0 enforced by the caller's grid
    # contribution tau * (logq - logv), with tau = 0 killing the factor even
    # on zero composition entries (q^0 = 1)
    with np.errstate(invalid="ignore"):
        contrib = taus[:, None, None] * (logq[None, None, :] - logv[None, :, :])
    contrib = np.where(taus[:, None, None] == 0.0, 0.0, contrib)
    # t[tau, V, x, y] = logw + contrib
    t = logw[None, None, :, :] + contrib[:, :, :, None]
    t = np.where(np.isnan(t), -np.inf, t)
    out = np.empty((sigmas.size, taus.size, vs.shape[0], ch.n_out))
    tmax = t.max(axis=2)  # (tau, V, y)
    for i, sig in enumerate(sigmas):
        if sig == 0.0:
            out[i] = tmax
        else:
            scaled = (t - tmax[:, :, None, :]) / sig
            with np.errstate(invalid="ignore"):
                s = np.exp(scaled).sum(axis=2)
            out[i] = tmax + sig * np.log(s)
    return out


# ---------------------------------------------------------------------------
# psi
# ---------------------------------------------------------------------------


def _pair_logsum(logw_x: np.ndarray, logw_xp: np.ndarray, s: float) -> float:
    """log sum_y W(y|x)^(1-s) W(y|x')^s with the 0-support conventions."""
    coef_a, coef_b = 1.0 - s, s
    terms = np.full(logw_x.size, -np.inf)
    for yi in range(logw_x.size):
        la, lb = logw_x[yi], logw_xp[yi]
        dead_a, dead_b = np.isneginf(la), np.isneginf(lb)
        if (dead_a and coef_a > 0) or (dead_b and coef_b > 0):
            continue  # zero factor with positive exponent kills the term
        if (dead_a and coef_a < 0) or (dead_b and coef_b < 0):
            return math.inf  # division by a zero channel entry
        va = 0.0 if (dead_a and coef_a == 0) else coef_a * la
        vb = 0.0 if (dead_b and coef_b == 0) else coef_b * lb
        terms[yi] = va + vb
    m = terms.max()
    if np.isneginf(m):
        return -math.inf
    return float(m + np.log(np.exp(terms - m).sum()))


def psi(q_xx: Joint2, ch: Channel) -> float:
    """sup over s >= 0 of -sum_(x,x') Q(x,x') log sum_y W(y|x)^(1-s) W(y|x')^s.

    +inf when some charged pair of channel rows has disjoint support
    (reported as 'unbounded' by the certification layer).
    """
    val, _, _ = _psi_full(q_xx, ch)
    return val


def _psi_full(q_xx: Joint2, ch: Channel) -> tuple[float, float, bool]:
    weights, xs, xps = _support_slots(q_xx.probs)
    logw = ch.log_matrix
    for x, xp in zip(xs, xps):
        if not (ch.support[x] & ch.support[xp]).any():
            return math.inf, math.nan, True
    def f(s: float) -> float:
        tot = 0.0
        for w, x, xp in zip(weights, xs, xps):
            ls = _pair_logsum(logw[x], logw[xp], s)
            if math.isinf(ls):
                return -math.inf if ls > 0 else math.inf
            tot -= w * ls
        return tot

    res = sup_ray(f, hi=RAY_HI, n_grid=25)
    return max(res.value, f(0.0)), res.arg, res.hit_boundary


# ---------------------------------------------------------------------------
# theta
# ---------------------------------------------------------------------------


def theta(q_xx: Joint2, rate: float, ch: Channel, q_x: Dist,
          opts: OptimizerOptions = OptimizerOptions()) -> float:
    """sup over rho of the inner (sigma, tau, V) infimum of

        rho*sigma*(rate - H(Q_X)) - sum Q(x,x') log sum_y W(y|x) W(y|x')^rho G(y)^-rho.

    rho = 0 contributes exactly 0, so theta >= 0 always.
    """
    return _theta_full(q_xx, rate, ch, q_x, opts)["value"]


def _theta_full(q_xx: Joint2, rate: float, ch: Channel, q_x: Dist,
                opts: OptimizerOptions) -> dict:
    weights, xs, xps = _support_slots(q_xx.probs)
    hq = entropy(q_x)
    logw = ch.log_matrix
    nx, ny = ch.n_in, ch.n_out
    logq = np.where(q_x.probs > 0, np.log(np.where(q_x.probs > 0, q_x.probs, 1.0)), -np.inf)

    sigmas = np.concatenate([[0.0], np.geomspace(1e-3, RAY_HI, 13)])
    taus = np.concatenate([[0.0], np.geomspace(1e-3, RAY_HI, 13)])
    eps = 1e-6  # keep grid V strictly positive; the limit V -> boundary is closed
    vgrid = row_grid(nx, max(opts.k, 8), opts.budget_cap) * (1 - nx * eps) + eps
    log_g = _log_g_aux_mesh(sigmas, taus, vgrid, ch, q_x)  # (ns, nt, nv, ny)

    def pair_term(rho, logg: np.ndarray) -> np.ndarray:
        # -sum_slots w * log sum_y W(y|x) W(y|x')^rho G^-rho ; rho scalar or
        # broadcastable against logg's leading axes; logg (..., ny)
        tot = 0.0
        for w, x, xp in zip(weights, xs, xps):
            with np.errstate(invalid="ignore", divide="ignore"):
                expo = logw[x] + rho * (logw[xp] - logg)
                expo = np.where(np.isnan(expo), -np.inf, expo)
                m = expo.max(axis=-1)
                safe_m = np.where(np.isfinite(m), m, 0.0)
                ssum = np.exp(expo - safe_m[..., None]).sum(axis=-1)
                ls = np.where(np.isfinite(m), safe_m + np.log(ssum), m)
            tot = tot - w * ls
        return tot

    def log_g_single(sig: float, tau: float, v: np.ndarray) -> np.ndarray:
        t = logw + tau * (logq - np.log(v))[:, None]  # (nx, ny)
        t = np.where(np.isnan(t), -np.inf, t)
        if sig == 0.0:
            return t.max(axis=0)
        s = t / sig
        m = s.max(axis=0)
        return sig * (m + np.log(np.exp(s - m[None, :]).sum(axis=0)))

    def grid_min(rho_vec: np.ndarray) -> np.ndarray:
        # per-rho minimum over the (sigma, tau, V) grid, one vector pass
        pt = pair_term(rho_vec[:, None, None, None, None], log_g[None])
        lead = (rho_vec[:, None, None, None] * sigmas[None, :, None, None]
                * (rate - hq))
        return (lead + pt).min(axis=(1, 2, 3))

    def inner(rho: float) -> tuple[float, tuple]:
        vals = rho * sigmas[:, None, None] * (rate - hq) + pair_term(rho, log_g)
        flat = int(np.argmin(vals))
        i, jj, kk = np.unravel_index(flat, vals.shape)
        x0 = np.concatenate([[sigmas[i], taus[jj]], vgrid[kk][: nx - 1]])

        def f(z: np.ndarray) -> float:
            sig, tau = z[0], z[1]
            if sig < 0 or tau < 0:
                return math.inf
            vfree = z[2:]
            vlast = 1.0 - vfree.sum()
            if np.any(vfree <= 0) or vlast <= 0:
                return math.inf
            v = np.concatenate([vfree, [vlast]])
            lg = log_g_single(sig, tau, v)
            return float(rho * sig * (rate - hq) + pair_term(rho, lg))

        steps = np.concatenate([[max(sigmas[i], 0.25) / 2, max(taus[jj], 0.25) / 2],
                                np.full(nx - 1, opts.grid_step)])
        z, fz, _ = pattern_min(x0, f, opts.grid_step, opts.refine_iters,
                               opts.refine_shrink, steps=steps)
        best = min(float(vals[i, jj, kk]), fz)
        return best, (float(z[0]), float(z[1]), z[2:].tolist())

    # vectorized grid scan over the rho ray (with boundary doubling), then
    # golden refinement of the best bracket with the fully refined inner
    top = RAY_HI
    for _ in range(4):
        rho_grid = np.concatenate([[0.0], np.geomspace(1e-3, top, 13)])
        gvals = grid_min(rho_grid)
        best = int(np.argmax(gvals))
        if best < rho_grid.size - 1:
            break
        top *= 2.0
    hit_boundary = best == rho_grid.size - 1
    lo_b = rho_grid[best - 1] if best > 0 else rho_grid[best]
    hi_b = rho_grid[best + 1] if best < rho_grid.size - 1 else rho_grid[best]
    best_rho = float(rho_grid[best])
    best_val = inner(best_rho)[0]  # grid_min only picked the bracket
    if hi_b > lo_b:
        rho_ref, val_ref = golden_max(lambda r: inner(r)[0], lo_b, hi_b, tol=1e-3)
        if val_ref > best_val:
            best_val, best_rho = float(val_ref), float(rho_ref)
    value = max(best_val, 0.0)  # rho = 0 is a feasible point worth exactly 0
    _, witness = inner(best_rho)
    return {
        "value": float(value),
        "rho": best_rho,
        "witness": witness,
        "hit_boundary": hit_boundary,
    }


# ---------------------------------------------------------------------------
# lambda and phi
# ---------------------------------------------------------------------------


class _TiltedProblem:
    """Shared mesh state for the multiplier-tilted inner minimizations.

    solve('balance') is the I(X;Y) - I(X';Y) penalty, solve('rate', R) the
    R - I(X';Y) one; both bracket the sup over the multiplier with a
    vectorized grid-only scan and refine only inside the winning bracket.
    """

    def __init__(self, q_xx: Joint2, ch: Channel, opts: OptimizerOptions):
        self.opts = opts
        weights, xs, xps = _support_slots(q_xx.probs)
        self.mesh = RowMesh(weights, xs, xps,
                            row_grid(ch.n_out, opts.k, opts.budget_cap),
                            ch.n_in, ch.log_matrix)
        arrs = self.mesh.build()
        self.i_x = mi_batch(arrs["qxy"])
        self.i_xp = mi_batch(arrs["qxpy"])
        self.kl = arrs["kl"]

    def _drive(self, penalty: str, rate: float) -> np.ndarray:
        if penalty == "balance":
            return self.i_x - self.i_xp
        return rate - self.i_xp

    def _inner(self, mu: float, penalty: str, rate: float) -> float:
        mesh, opts = self.mesh, self.opts
        obj = self.kl + mu * self._drive(penalty, rate)
        best = int(np.argmin(obj))
        rows0, v0 = mesh.rows_of(best), float(obj[best])

        def f(params: np.ndarray) -> float:
            rows = mesh.params_to_rows(params)
            if rows is None:
                return math.inf
            st = mesh.stats_of(rows)
            ix = float(mi_batch(st["qxy"][None])[0])
            ixp = float(mi_batch(st["qxpy"][None])[0])
            pen = mu * (ix - ixp) if penalty == "balance" else mu * (rate - ixp)
            return st["kl"] + pen

        _, fp, _ = pattern_min(mesh.rows_to_params(rows0), f, opts.grid_step,
                               opts.refine_iters, opts.refine_shrink)
        return min(v0, fp)

    def solve(self, penalty: str, rate: float = 0.0) -> dict:
        drive = self._drive(penalty, rate)
        top = RAY_HI
        for _ in range(4):
            mu_grid = np.concatenate([[0.0], np.geomspace(1e-3, top, 13)])
            gvals = (self.kl[None, :] + mu_grid[:, None] * drive[None, :]).min(axis=1)
            best = int(np.argmax(gvals))
            if best < mu_grid.size - 1:
                break
            top *= 2.0
        hit_boundary = best == mu_grid.size - 1
        lo_b = mu_grid[best - 1] if best > 0 else mu_grid[best]
        hi_b = mu_grid[best + 1] if best < mu_grid.size - 1 else mu_grid[best]
        best_mu = float(mu_grid[best])
        value = self._inner(best_mu, penalty, rate)
        if hi_b > lo_b:
            mu_ref, val_ref = golden_max(lambda m: self._inner(m, penalty, rate),
                                         lo_b, hi_b, tol=1e-3)
            if val_ref > value:
                value, best_mu = float(val_ref), float(mu_ref)
        value = max(value, self._inner(0.0, penalty, rate))
        return {"value": float(value), "mu": best_mu, "hit_boundary": hit_boundary}


def _tilted_inner(q_xx: Joint2, ch: Channel, opts: OptimizerOptions,
                  penalty: str, rate: float = 0.0) -> dict:
    return _TiltedProblem(q_xx, ch, opts).solve(penalty, rate)


def lambda_bound(q_xx: Joint2, ch: Channel,
                 opts: OptimizerOptions = OptimizerOptions()) -> float:
    """Multiplier-tilted inner channel minimum with penalty I(X;Y) - I(X';Y)."""
    return _tilted_inner(q_xx, ch, opts, "balance")["value"]


def phi_bound(q_xx: Joint2, rate: float, ch: Channel,
              opts: OptimizerOptions = OptimizerOptions()) -> float:
    """Multiplier-tilted inner channel minimum with penalty rate - I(X';Y)."""
    return _tilted_inner(q_xx, ch, opts, "rate", rate)["value"]


def _tilted_pair(q_xx: Joint2, rate: float, ch: Channel,
                 opts: OptimizerOptions) -> tuple[float, float]:
    """lambda_bound and phi_bound sharing one mesh evaluation."""
    prob = _TiltedProblem(q_xx, ch, opts)
    return prob.solve("balance")["value"], prob.solve("rate", rate)["value"]


# ---------------------------------------------------------------------------
# outer bounds and certification
# ---------------------------------------------------------------------------


def _outer_bound(rp: RatePoint, ch: Channel, opts: OptimizerOptions,
                 per_coupling) -> dict:
    """min over couplings {I <= 2R} of per_coupling(q) + I - R, clamped at 0."""
    qx = rp.composition
    slack = 1e-12  # see _outer_minimize: no grid slack needed on the cap
    cap = 2.0 * rp.rate
    # seed with the always-feasible product coupling (not always a grid point)
    q_prod = np.outer(qx.probs, qx.probs)
    best = (per_coupling(q_prod) - rp.rate, q_prod, 0.0)
    n_feas = 0
    for j2 in coupling_grid(qx, opts.k):
        info = mutual_information(j2)
        if info > cap + slack:
            continue
        n_feas += 1
        val = per_coupling(j2.probs) + info - rp.rate
        if val < best[0] - 1e-15:
            best = (val, j2.probs, info)

    poly = TransportPolytope(qx.probs, qx.probs)

    def f(c: np.ndarray) -> float:
        j = poly.joints(c)
        if not poly.feasible(j[None])[0]:
            return math.inf
        j = np.clip(j, 0.0, None)
        info = float(mi_batch(j[None])[0])
        if info > cap + slack:
            return math.inf
        return per_coupling(j) + info - rp.rate

    c_ref, v_ref, _ = pattern_min(poly.param_of(best[1]), f, opts.grid_step,
                                  opts.refine_iters, opts.refine_shrink)
    raw, coupling = best[0], best[1]
    if v_ref < raw:
        raw, coupling = v_ref, np.clip(poly.joints(c_ref), 0.0, None)
    return {
        "value": max(float(raw), 0.0),
        "raw_value": float(raw),
        "coupling": coupling,
        "n_feasible": n_feas,
    }


def ml_upper_bound(rp: RatePoint, ch: Channel,
                   opts: OptimizerOptions = OptimizerOptions()) -> float:
    """Upper bound on the ML-decoding TRC exponent:
    min over {I <= 2R} of max{psi, theta} + I - R."""
    memo: dict[tuple, float] = {}

    def per_coupling(q: np.ndarray) -> float:
        key = tuple(np.rint(q.reshape(-1) * 4096).astype(np.int64))
        if key not in memo:
            j2 = Joint2(q / q.sum())
            memo[key] = max(psi(j2, ch), theta(j2, rp.rate, ch, rp.composition, opts))
        return memo[key]

    return _outer_bound(rp, ch, opts, per_coupling)["value"]


def mmi_lower_bound(rp: RatePoint, ch: Channel,
                    opts: OptimizerOptions = OptimizerOptions()) -> float:
    """Lower bound on the MMI-decoding TRC exponent:
    min over {I <= 2R} of max{lambda, phi} + I - R."""
    memo: dict[tuple, float] = {}

    def per_coupling(q: np.ndarray) -> float:
        key = tuple(np.rint(q.reshape(-1) * 4096).astype(np.int64))
        if key not in memo:
            j2 = Joint2(q / q.sum())
            memo[key] = max(_tilted_pair(j2, rp.rate, ch, opts))
        return memo[key]

    return _outer_bound(rp, ch, opts, per_coupling)["value"]


@dataclass
class CouplingMargins:
    coupling: list
    information: float
    psi: float
    theta: float
    lambda_: float
    phi: float
    lambda_minus_psi: float
    phi_minus_theta: float


@dataclass
class BoundReport:
    """Everything certify_theorem1 measured, margins included.

    Margins are reported, never asserted: ``passed`` summarizes whether every
    finite margin clears -certify_tol, and ``flags`` lists infinite/unbounded
    quantities with reasons.
    """

    rate: float
    composition: list
    certify_tol: float
    psi: float
    theta: float
    lambda_: float
    phi: float
    ml_upper: float
    mmi_lower: float
    trc_ml: float
    trc_mmi: float
    margin_lambda_psi: float
    margin_phi_theta: float
    margin_mmi_ml: float
    margin_upper_vs_trc_ml: float
    margin_trc_mmi_vs_lower: float
    primal_gap: float
    per_coupling: list[CouplingMargins] = field(default_factory=list)
    flags: list[dict] = field(default_factory=list)
    passed: bool = False

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, float):
                if math.isinf(v):
                    return "+inf" if v > 0 else "-inf"
                if math.isnan(v):
                    return "nan"
            return v

        d = {
            "rate": self.rate,
            "composition": self.composition,
            "certify_tol": self.certify_tol,
            "psi": enc(self.psi), "theta": enc(self.theta),
            "lambda": enc(self.lambda_), "phi": enc(self.phi),
            "ml_upper": enc(self.ml_upper), "mmi_lower": enc(self.mmi_lower),
            "trc_ml": enc(self.trc_ml), "trc_mmi": enc(self.trc_mmi),
            "margins": {
                "lambda_minus_psi": enc(self.margin_lambda_psi),
                "phi_minus_theta": enc(self.margin_phi_theta),
                "mmi_lower_minus_ml_upper": enc(self.margin_mmi_ml),
                "ml_upper_minus_trc_ml": enc(self.margin_upper_vs_trc_ml),
                "trc_mmi_minus_mmi_lower": enc(self.margin_trc_mmi_vs_lower),
                "primal_gap": enc(self.primal_gap),
            },
            "per_coupling": [
                {
                    "coupling": c.coupling,
                    "information": c.information,
                    "psi": enc(c.psi), "theta": enc(c.theta),
                    "lambda": enc(c.lambda_), "phi": enc(c.phi),
                    "lambda_minus_psi": enc(c.lambda_minus_psi),
                    "phi_minus_theta": enc(c.phi_minus_theta),
                }
                for c in self.per_coupling
            ],
            "flags": self.flags,
            "passed": self.passed,
        }
        return d

    @staticmethod
    def from_dict(d: dict) -> "BoundReport":
        def dec(v):
            if v == "+inf":
                return math.inf
            if v == "-inf":
                return -math.inf
            if v == "nan":
                return math.nan
            return v

        per = [
            CouplingMargins(
                coupling=c["coupling"], information=c["information"],
                psi=dec(c["psi"]), theta=dec(c["theta"]),
                lambda_=dec(c["lambda"]), phi=dec(c["phi"]),
                lambda_minus_psi=dec(c["lambda_minus_psi"]),
                phi_minus_theta=dec(c["phi_minus_theta"]),
            )
            for c in d["per_coupling"]
        ]
        m = d["margins"]
        return BoundReport(
            rate=d["rate"], composition=d["composition"], certify_tol=d["certify_tol"],
            psi=dec(d["psi"]), theta=dec(d["theta"]),
            lambda_=dec(d["lambda"]), phi=dec(d["phi"]),
            ml_upper=dec(d["ml_upper"]), mmi_lower=dec(d["mmi_lower"]),
            trc_ml=dec(d["trc_ml"]), trc_mmi=dec(d["trc_mmi"]),
            margin_lambda_psi=dec(m["lambda_minus_psi"]),
            margin_phi_theta=dec(m["phi_minus_theta"]),
            margin_mmi_ml=dec(m["mmi_lower_minus_ml_upper"]),
            margin_upper_vs_trc_ml=dec(m["ml_upper_minus_trc_ml"]),
            margin_trc_mmi_vs_lower=dec(m["trc_mmi_minus_mmi_lower"]),
            primal_gap=dec(m["primal_gap"]),
            per_coupling=per, flags=d["flags"], passed=d["passed"],
        )


def certify_theorem1(rp: RatePoint, ch: Channel,
                     opts: OptimizerOptions = OptimizerOptions(),
                     certify_tol: float = 1e-4,
                     margin_grid_k: int = 4) -> BoundReport:
    """Measure the full bound chain at one rate point and report margins.

    Per-coupling margins (lambda - psi, phi - theta) are evaluated over
    coupling_grid(composition, margin_grid_k); the outer chain compares
    trc(ml) <= ml_upper <= mmi_lower <= trc(mmi) plus the primal gap.
    """
    qx = rp.composition
    per = []
    flags: list[dict] = []
    worst_lp, worst_pt = math.inf, math.inf
    worst_vals = [math.nan] * 4
    for j2 in coupling_grid(qx, margin_grid_k):
        p = psi(j2, ch)
        t = theta(j2, rp.rate, ch, qx, opts)
        lm = lambda_bound(j2, ch, opts)
        ph = phi_bound(j2, rp.rate, ch, opts)
        if math.isinf(p):
            flags.append({"quantity": "psi", "coupling": j2.probs.tolist(),
                          "reason": "disjoint channel row support on a charged pair"})
        if math.isinf(lm):
            flags.append({"quantity": "lambda", "coupling": j2.probs.tolist(),
                          "reason": "unbounded multiplier ray"})
        mlp = lm - p if not (math.isinf(lm) and math.isinf(p)) else 0.0
        mpt = ph - t if not (math.isinf(ph) and math.isinf(t)) else 0.0
        per.append(CouplingMargins(
            coupling=j2.probs.tolist(), information=mutual_information(j2),
            psi=p, theta=t, lambda_=lm, phi=ph,
            lambda_minus_psi=mlp, phi_minus_theta=mpt,
        ))
        if mlp < worst_lp:
            worst_lp, worst_vals[0], worst_vals[2] = mlp, p, lm
        if mpt < worst_pt:
            worst_pt, worst_vals[1], worst_vals[3] = mpt, t, ph

    ml_u = ml_upper_bound(rp, ch, opts)
    mmi_l = mmi_lower_bound(rp, ch, opts)
    trc_ml = trc_exponent(rp, ML, ch, opts).value
    trc_mmi = trc_exponent(rp, MMI, ch, opts).value

    margins = {
        "lp": worst_lp, "pt": worst_pt,
        "mmi_ml": mmi_l - ml_u,
        "up_vs_ml": ml_u - trc_ml,
        "mmi_vs_low": trc_mmi - mmi_l,
    }
    finite = [v for v in margins.values() if not math.isnan(v) and not math.isinf(v)]
    passed = all(v >= -certify_tol for v in finite) and not any(
        math.isinf(v) and v < 0 for v in margins.values())
    return BoundReport(
        rate=rp.rate, composition=qx.probs.tolist(), certify_tol=certify_tol,
        psi=worst_vals[0], theta=worst_vals[1],
        lambda_=worst_vals[2], phi=worst_vals[3],
        ml_upper=ml_u, mmi_lower=mmi_l, trc_ml=trc_ml, trc_mmi=trc_mmi,
        margin_lambda_psi=worst_lp, margin_phi_theta=worst_pt,
        margin_mmi_ml=margins["mmi_ml"],
        margin_upper_vs_trc_ml=margins["up_vs_ml"],
        margin_trc_mmi_vs_lower=margins["mmi_vs_low"],
        primal_gap=abs(trc_ml - trc_mmi),
        per_coupling=per, flags=flags, passed=passed,
    )
