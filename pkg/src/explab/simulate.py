"""Exact small-blocklength simulation of fixed-composition random codes.

No Monte Carlo over channel outputs anywhere: per-message error
probabilities are computed by enumerating every output sequence y in Y^n
(an odometer capped at ``enum_cap`` outputs) and summing the exact product
channel probabilities of the decoding-error region. Randomness enters only
through codebook sampling, which is seeded and reproducible.

Decoders:

- deterministic ML and MMI (argmax over messages, ties to the lowest index),
- the stochastic generalized likelihood decoder (GLD), which picks message m
  with probability proportional to exp{n g(empirical joint of (x_m, y))};
  the ML-metric case carries a scale beta, and beta -> infinity recovers ML
  with ties split evenly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exponents import MMI, DecodingMetric
from .prob import Channel, Dist, ProbError

DEFAULT_ENUM_CAP = 2**20


@dataclass(frozen=True)
class Codebook:
    """An ordered list of fixed-composition codewords over X^n.

    Duplicates are allowed: the ensemble draws codewords independently, so a
    sampled codebook may repeat a sequence.
    """

    n: int
    codewords: np.ndarray  # (M, n) integer symbols

    def __post_init__(self) -> None:
        cw = np.asarray(self.codewords, dtype=np.int64)
        if cw.ndim != 2 or cw.shape[1] != self.n or cw.shape[0] < 1:
            raise ProbError(f"codewords must be (M, n={self.n}), got {cw.shape}")
        if np.any(cw < 0):
            raise ProbError("codeword symbols must be nonnegative indices")
        counts = np.stack([np.bincount(row, minlength=int(cw.max()) + 1) for row in cw])
        if np.any(counts != counts[0]):
            raise ProbError("codewords do not share a single composition")
        object.__setattr__(self, "codewords", cw)
        cw.setflags(write=False)

    @property
    def m_count(self) -> int:
        return self.codewords.shape[0]

    def composition_counts(self, nx: int) -> np.ndarray:
        return np.bincount(self.codewords[0], minlength=nx)


@dataclass(frozen=True)
class ErrorProfile:
    """Exact per-message error probabilities of one codebook."""

    per_message: np.ndarray
    average: float = field(init=False)
    max: float = field(init=False)

    def __post_init__(self) -> None:
        pm = np.asarray(self.per_message, dtype=float)
        if pm.ndim != 1 or np.any(pm < -1e-12) or np.any(pm > 1 + 1e-12):
            raise ProbError("per-message error probabilities must lie in [0,1]")
        pm = np.clip(pm, 0.0, 1.0)
        pm.setflags(write=False)
        object.__setattr__(self, "per_message", pm)
        object.__setattr__(self, "average", float(pm.mean()))
        object.__setattr__(self, "max", float(pm.max()))


@dataclass(frozen=True)
class GldConfig:
    """Metric and (for the ML metric) inverse-temperature of the GLD."""

    metric: DecodingMetric = MMI
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.beta < 0 or not math.isfinite(self.beta):
            raise ProbError(f"beta must be finite and >= 0, got {self.beta}")


@dataclass(frozen=True)
class TrialSummary:
    """Empirical surrogate of the typical-codebook exponent at blocklength n.

    The simulator works with (n, M) directly and reports the implied
    ``rate`` = log(M)/n. ``mean_log_pe`` averages log P_e over sampled
    codebooks with P_e > 0; zero-error codebooks are counted in
    ``zero_error_samples`` and excluded (their log is undefined), with
    ``all_zero_error`` flagging the degenerate case where no sample had a
    positive error probability.
    """

    samples: int
    n: int
    m_count: int
    rate: float
    decoder: str
    seed: int
    mean_log_pe: float
    stderr_log_pe: float
    empirical_exponent: float
    zero_error_samples: int
    all_zero_error: bool


def sample_codebook(n: int, m_count: int, q_x: Dist, seed) -> Codebook:
    """Draw m_count codewords i.i.d. uniformly from the type class of q_x.

    Each draw is a seeded shuffle of the fixed composition multiset, so equal
    seeds give identical codebooks. n * q_x must be integral. ``seed`` is
    anything numpy's default_rng accepts (an int, or a list for substreams).
    """
    if n < 1 or m_count < 1:
        raise ProbError("need n >= 1 and m_count >= 1")
    scaled = np.asarray(q_x.probs) * n
    counts = np.rint(scaled).astype(np.int64)
    if np.any(np.abs(scaled - counts) > 1e-9):
        raise ProbError(f"composition {q_x.probs} is not realizable at blocklength {n}")
    base = np.repeat(np.arange(q_x.size), counts)
    rng = np.random.default_rng(seed)
    cw = np.stack([rng.permutation(base) for _ in range(m_count)])
    return Codebook(n=n, codewords=cw)


# ---------------------------------------------------------------------------
# exhaustive output enumeration
# ---------------------------------------------------------------------------


def _output_digits(ny: int, n: int, enum_cap: int) -> np.ndarray:
    """(n, T) array of output symbols for all T = ny**n sequences."""
    total = ny**n
    if total > enum_cap:
        raise ProbError(f"|Y|^n = {total} exceeds the enumeration cap {enum_cap}")
    t = np.arange(total, dtype=np.int64)
    digits = np.empty((n, total), dtype=np.int8)
    for i in range(n):
        digits[i] = (t // ny**i) % ny
    return digits


def _joint_counts(cb: Codebook, nx: int, ny: int, enum_cap: int) -> np.ndarray:
    """Empirical joint counts N[m, a, b, t] of (codeword m, output t)."""
    digits = _output_digits(ny, cb.n, enum_cap)
    total = digits.shape[1]
    counts = np.zeros((cb.m_count, nx, ny, total), dtype=np.int16)
    for m, cw in enumerate(cb.codewords):
        for i in range(cb.n):
            row = digits[i]
            for b in range(ny):
                counts[m, cw[i], b] += row == b
    return counts


def _log_likelihoods(counts: np.ndarray, ch: Channel) -> np.ndarray:
    """log W(y_t | x_m) from joint counts; -inf on zero-support hits."""
    logw = ch.log_matrix
    fin = np.where(np.isneginf(logw), 0.0, logw)
    ll = np.einsum("mabt,ab->mt", counts.astype(float), fin)
    dead = np.einsum("mabt->mt", (counts > 0) & np.isneginf(logw)[None, :, :, None])
    return np.where(dead > 0, -np.inf, ll)


def _empirical_mi(counts: np.ndarray, n: int) -> np.ndarray:
    """Empirical mutual information of (x_m, y_t) per message/output."""
    nf = counts.astype(float) / n
    row = nf.sum(axis=2)  # (m, a, t)
    col = nf.sum(axis=1)  # (m, b, t)

    def xlx(v: np.ndarray) -> np.ndarray:
        return np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)

    return (xlx(nf).sum(axis=(1, 2)) - xlx(row).sum(axis=1) - xlx(col).sum(axis=1))


def _scores(cb: Codebook, ch: Channel, kind: str, enum_cap: int) -> tuple[np.ndarray, np.ndarray]:
    counts = _joint_counts(cb, ch.n_in, ch.n_out, enum_cap)
    ll = _log_likelihoods(counts, ch)
    if kind == "ml":
        return ll, ll
    return _empirical_mi(counts, cb.n), ll


def exact_error_profile(cb: Codebook, ch: Channel,
                        decoder: DecodingMetric = MMI,
                        enum_cap: int = DEFAULT_ENUM_CAP) -> ErrorProfile:
    """Exact per-message error probabilities of the deterministic decoder.

    Decisions are argmax of the decoder score over messages with ties broken
    toward the lowest message index; P_e|m sums W(y|x_m) over outputs decided
    away from m.
    """
    scores, ll = _scores(cb, ch, decoder.kind, enum_cap)
    decisions = np.argmax(scores, axis=0)
    wrong = decisions[None, :] != np.arange(cb.m_count)[:, None]
    probs = np.exp(ll)
    return ErrorProfile(per_message=(probs * wrong).sum(axis=1))


def _gld_exponents(cb: Codebook, ch: Channel, cfg: GldConfig,
                   enum_cap: int) -> tuple[np.ndarray, np.ndarray]:
    """n*g scores (M, T) and log-likelihoods (M, T) for the GLD."""
    scores, ll = _scores(cb, ch, cfg.metric.kind, enum_cap)
    if cfg.metric.kind == "ml":
        gn = cfg.beta * scores  # n * g = beta * log-likelihood
    else:
        gn = cb.n * scores  # n * empirical mutual information
    return gn, ll


def exact_error_profile_gld(cb: Codebook, ch: Channel,
                            cfg: GldConfig = GldConfig(),
                            enum_cap: int = DEFAULT_ENUM_CAP) -> ErrorProfile:
    """Exact per-message error probabilities of the stochastic GLD.

    P_e|m sums, over outputs, the transmit probability W(y|x_m) times the
    posterior mass the GLD assigns to the other messages.
    """
    gn, ll = _gld_exponents(cb, ch, cfg, enum_cap)
    gmax = gn.max(axis=0)
    safe = np.where(np.isfinite(gmax), gmax, 0.0)
    expg = np.exp(gn - safe[None, :])
    denom = expg.sum(axis=0)
    post = expg / denom
    probs = np.exp(ll)
    pe = (probs * (1.0 - post)).sum(axis=1)
    return ErrorProfile(per_message=pe)


def competing_sum_log(cb: Codebook, ch: Channel,
                      cfg: GldConfig = GldConfig(),
                      enum_cap: int = DEFAULT_ENUM_CAP) -> np.ndarray:
    """Concentration diagnostic: log of the competing-score mass per
    message/output, i.e. log sum over m' != m of exp{n g(joint of x_m', y)}.

    Shape (M, |Y|^n); -inf where a message has no finite-score competitor.
    M = 1 yields a single all -inf row.
    """
    gn, _ = _gld_exponents(cb, ch, cfg, enum_cap)
    m = cb.m_count
    out = np.full_like(gn, -np.inf)
    for msg in range(m):
        others = np.delete(gn, msg, axis=0)
        if others.size == 0:
            continue
        top = others.max(axis=0)
        safe = np.where(np.isfinite(top), top, 0.0)
        s = np.exp(others - safe[None, :]).sum(axis=0)
        with np.errstate(divide="ignore"):
            out[msg] = np.where(np.isfinite(top), safe + np.log(s), top)
    return out


def empirical_trc(n: int, m_count: int, q_x: Dist, ch: Channel,
                  decoder: DecodingMetric, samples: int, seed: int,
                  enum_cap: int = DEFAULT_ENUM_CAP) -> TrialSummary:
    """Mean of log P_e over seeded codebook samples; exponent = -mean / n.

    Each sample draws its own RNG stream from (seed, sample index), so the
    summary does not depend on evaluation order; codebooks with P_e = 0 are
    excluded from the log-mean and counted separately.
    """
    if samples < 1:
        raise ProbError("need at least one sample")
    logs = []
    zero = 0
    for i in range(samples):
        cb = sample_codebook(n, m_count, q_x, seed=[seed, i])
        pe = exact_error_profile(cb, ch, decoder, enum_cap).average
        if pe > 0.0:
            logs.append(math.log(pe))
        else:
            zero += 1
    if logs:
        mean = float(np.mean(logs))
        stderr = float(np.std(logs, ddof=1) / math.sqrt(len(logs))) if len(logs) > 1 else 0.0
        exponent = -mean / n
    else:
        mean, stderr, exponent = math.nan, math.nan, math.inf
    return TrialSummary(
        samples=samples, n=n, m_count=m_count, rate=math.log(m_count) / n,
        decoder=decoder.kind, seed=seed,
        mean_log_pe=mean, stderr_log_pe=stderr, empirical_exponent=exponent,
        zero_error_samples=zero, all_zero_error=zero == samples,
    )


def expurgate_worst_half(cb: Codebook, profile: ErrorProfile) -> Codebook:
    """Keep the ceil(M/2) messages with the smallest per-message error.

    Kept messages stay in their original order, so index tie-breaking in the
    shrunken codebook is consistent with the original. By the Markov/median
    argument the kept half's worst (recomputed) error is at most twice the
    input profile's average.
    """
    m = cb.m_count
    if profile.per_message.size != m:
        raise ProbError("profile does not match the codebook")
    if m == 1:
        return cb
    keep = math.ceil(m / 2)
    order = np.argsort(profile.per_message, kind="stable")[:keep]
    order = np.sort(order)
    return Codebook(n=cb.n, codewords=cb.codewords[order])
