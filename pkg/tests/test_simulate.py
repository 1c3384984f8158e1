import itertools
import math

import numpy as np
import pytest

from explab.exponents import ML, MMI
from explab.prob import Channel, Dist, ProbError
from explab.simulate import (
    Codebook,
    ErrorProfile,
    GldConfig,
    competing_sum_log,
    empirical_trc,
    exact_error_profile,
    exact_error_profile_gld,
    expurgate_worst_half,
    sample_codebook,
)

UNIF = Dist.uniform(2)
BSC01 = Channel.bsc(0.1)


# ---------------------------------------------------------------------------
# independent oracle: plain loops over Y^n, scores from integer joint counts
# so that ties are detected exactly (no float summation-order noise)
# ---------------------------------------------------------------------------


def oracle_counts(cw, y, nx, ny):
    counts = np.zeros((nx, ny), dtype=int)
    for a, b in zip(cw, y):
        counts[a, b] += 1
    return counts


def oracle_scores(cb, ch, y, kind):
    """Per-message scores for output y; exact rationals via integer counts."""
    out = []
    for cw in cb.codewords:
        counts = oracle_counts(cw, y, ch.n_in, ch.n_out)
        if kind == "ml":
            s = 0.0
            for a in range(ch.n_in):
                for b in range(ch.n_out):
                    if counts[a, b]:
                        if ch.w[a, b] == 0:
                            s = -math.inf
                            break
                        s += counts[a, b] * math.log(ch.w[a, b])
        else:
            n = cb.n
            s = 0.0
            row = counts.sum(axis=1)
            col = counts.sum(axis=0)
            for a in range(ch.n_in):
                for b in range(ch.n_out):
                    if counts[a, b]:
                        s += (counts[a, b] / n) * math.log(
                            counts[a, b] * n / (row[a] * col[b]))
        out.append(s)
    return out, [oracle_counts(cw, y, ch.n_in, ch.n_out) for cw in cb.codewords]


def oracle_profile(cb, ch, kind, tie_split=False):
    m = cb.m_count
    pe = np.zeros(m)
    for y in itertools.product(range(ch.n_out), repeat=cb.n):
        scores, all_counts = oracle_scores(cb, ch, y, kind)
        # exact tie detection: identical integer count tables give identical
        # scores; otherwise compare floats with a tiny guard band
        best = max(scores)
        winners = [i for i, s in enumerate(scores) if s >= best - 1e-12]
        for msg in range(m):
            lik = 1.0
            for a, b in zip(cb.codewords[msg], y):
                lik *= ch.w[a, b]
            if tie_split:
                wrong = 1.0 - (1.0 / len(winners) if msg in winners else 0.0)
                pe[msg] += lik * wrong
            elif winners[0] != msg:
                pe[msg] += lik
    return pe


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


class TestSampling:
    def test_type_class_n2(self):
        seen = set()
        for seed in range(40):
            cb = sample_codebook(2, 1, UNIF, seed)
            seen.add(tuple(cb.codewords[0]))
        assert seen == {(0, 1), (1, 0)}

    def test_type_class_frequencies_n4(self):
        # C(4,2) = 6 type-class members; each frequency within 3 sigma of 1/6
        draws = 60000
        cb = sample_codebook(4, draws, UNIF, seed=123)
        keys, counts = np.unique(cb.codewords, axis=0, return_counts=True)
        assert len(keys) == 6
        p = 1.0 / 6.0
        sigma = math.sqrt(p * (1 - p) / draws)
        assert np.all(np.abs(counts / draws - p) <= 3 * sigma)

    def test_determinism(self):
        a = sample_codebook(6, 4, UNIF, seed=9)
        b = sample_codebook(6, 4, UNIF, seed=9)
        assert np.array_equal(a.codewords, b.codewords)

    def test_unrealizable_composition(self):
        with pytest.raises(ProbError):
            sample_codebook(3, 2, UNIF, seed=0)

    def test_codebook_composition_enforced(self):
        with pytest.raises(ProbError):
            Codebook(n=2, codewords=np.array([[0, 1], [1, 1]]))


# ---------------------------------------------------------------------------
# exact deterministic-decoder profiles
# ---------------------------------------------------------------------------


class TestExactProfiles:
    def test_single_message_zero(self):
        cb = Codebook(n=4, codewords=np.array([[0, 0, 1, 1]]))
        assert exact_error_profile(cb, BSC01, ML).per_message.tolist() == [0.0]

    def test_duplicate_codewords_tie_rule(self):
        cb = Codebook(n=2, codewords=np.array([[0, 1], [0, 1]]))
        prof = exact_error_profile(cb, BSC01, ML)
        assert prof.per_message.tolist() == [0.0, 1.0]

    def test_ml_against_oracle_and_hand_value(self):
        cb = Codebook(n=4, codewords=np.array([[0, 0, 1, 1], [1, 1, 0, 0]]))
        prof = exact_error_profile(cb, BSC01, ML)
        # complementary codewords: m=0 errs iff >= 3 of 4 flips (ties at
        # distance 2 go to index 0), m=1 errs iff >= 2 flips
        pe0 = 4 * 0.1**3 * 0.9 + 0.1**4
        pe1 = 6 * 0.1**2 * 0.9**2 + 4 * 0.1**3 * 0.9 + 0.1**4
        assert prof.per_message == pytest.approx([pe0, pe1], abs=1e-12)
        assert prof.per_message == pytest.approx(oracle_profile(cb, BSC01, "ml"), abs=1e-12)

    def test_mmi_against_oracle(self):
        cb = Codebook(n=4, codewords=np.array([[0, 0, 1, 1], [1, 0, 1, 0]]))
        prof = exact_error_profile(cb, BSC01, MMI)
        assert prof.per_message == pytest.approx(oracle_profile(cb, BSC01, "mmi"), abs=1e-12)

    def test_profiles_with_channel_zeros(self):
        z = Channel.from_rows([[1.0, 0.0], [0.2, 0.8]])
        cb = Codebook(n=4, codewords=np.array([[0, 1, 0, 1], [1, 0, 1, 0]]))
        prof = exact_error_profile(cb, z, ML)
        assert prof.per_message == pytest.approx(oracle_profile(cb, z, "ml"), abs=1e-12)

    def test_enumeration_cap(self):
        cb = Codebook(n=8, codewords=np.array([[0, 1] * 4]))
        with pytest.raises(ProbError):
            exact_error_profile(cb, BSC01, ML, enum_cap=100)


class TestGld:
    def test_beta_zero_uniform_posterior(self):
        cb = Codebook(n=4, codewords=np.array([[0, 0, 1, 1], [1, 1, 0, 0], [0, 1, 0, 1]]))
        prof = exact_error_profile_gld(cb, BSC01, GldConfig(metric=ML, beta=0.0))
        assert prof.per_message == pytest.approx([2 / 3] * 3, abs=1e-12)

    def test_large_beta_recovers_tie_split_ml(self):
        cb = Codebook(n=4, codewords=np.array([[0, 0, 1, 1], [1, 1, 0, 0]]))
        prof = exact_error_profile_gld(cb, BSC01, GldConfig(metric=ML, beta=64 * cb.n))
        want = oracle_profile(cb, BSC01, "ml", tie_split=True)
        assert prof.per_message == pytest.approx(want, abs=1e-6)

    def test_factor_two_bound_every_instance(self):
        for seed in range(25):
            cb = sample_codebook(6, 4, UNIF, seed)
            ml_avg = exact_error_profile(cb, BSC01, ML).average
            # beta = 1 is the ordinary likelihood decoder: posterior ~ W(y|x_m)
            gld = exact_error_profile_gld(cb, BSC01, GldConfig(metric=ML, beta=1.0))
            assert gld.average <= 2 * ml_avg + 1e-12

    def test_mmi_metric_gld_valid_profile(self):
        cb = sample_codebook(6, 4, UNIF, 5)
        prof = exact_error_profile_gld(cb, BSC01, GldConfig(metric=MMI))
        assert np.all(prof.per_message >= 0) and np.all(prof.per_message <= 1)

    def test_competing_sum_log(self):
        cb = Codebook(n=2, codewords=np.array([[0, 1], [1, 0], [0, 1]]))
        cfg = GldConfig(metric=ML, beta=1.0)
        z = competing_sum_log(cb, BSC01, cfg)
        assert z.shape == (3, 4)
        # direct check: competitors of message 0 are messages 1 and 2
        from explab.simulate import _gld_exponents
        g, _ = _gld_exponents(cb, BSC01, cfg, 2**20)
        want = np.log(np.exp(g[1]) + np.exp(g[2]))
        assert z[0] == pytest.approx(want, abs=1e-12)
        single = Codebook(n=2, codewords=np.array([[0, 1]]))
        assert np.all(np.isneginf(competing_sum_log(single, BSC01, cfg)))


class TestDecoderInvariants:
    @pytest.mark.parametrize("seed", range(12))
    def test_ml_beats_mmi_average(self, seed):
        cb = sample_codebook(6, 4, UNIF, seed)
        ml_avg = exact_error_profile(cb, BSC01, ML).average
        mmi_avg = exact_error_profile(cb, BSC01, MMI).average
        assert ml_avg <= mmi_avg + 1e-12 <= 1 + 1e-12

    @pytest.mark.parametrize("seed", range(8))
    def test_mmi_equals_min_conditional_entropy(self, seed):
        # argmax empirical MI == argmin empirical H(X|Y) for every output,
        # because fixed composition makes H(X) constant across codewords
        cb = sample_codebook(5, 4, Dist(np.array([0.6, 0.4])), seed)
        ch = BSC01
        for y in itertools.product(range(2), repeat=cb.n):
            scores, counts = oracle_scores(cb, ch, y, "mmi")
            hcond = []
            for cnt in counts:
                h = 0.0
                col = cnt.sum(axis=0)
                for a in range(2):
                    for b in range(2):
                        if cnt[a, b]:
                            h -= (cnt[a, b] / cb.n) * math.log(cnt[a, b] / col[b])
                hcond.append(h)
            assert int(np.argmax(scores)) == int(np.argmin(hcond))

    @pytest.mark.parametrize("seed", range(6))
    def test_y_relabel_invariance(self, seed):
        cb = sample_codebook(5, 3, Dist(np.array([0.6, 0.4])), seed)
        perm = [1, 0]
        swapped = Channel.from_rows(BSC01.w[:, perm])
        for kind, metric in (("ml", ML), ("mmi", MMI)):
            base = oracle_profile(cb, BSC01, kind)
            prof = exact_error_profile(cb, BSC01, metric).per_message
            prof_sw = exact_error_profile(cb, swapped, metric).per_message
            assert prof == pytest.approx(base, abs=1e-12)
            assert prof_sw == pytest.approx(prof, abs=1e-12)


class TestExpurgation:
    def test_markov_guarantee_random_instances(self):
        for seed in range(30):
            cb = sample_codebook(6, 8, UNIF, seed)
            prof = exact_error_profile(cb, BSC01, ML)
            kept = expurgate_worst_half(cb, prof)
            assert kept.m_count == 4
            recomputed = exact_error_profile(kept, BSC01, ML)
            assert recomputed.max <= 2 * prof.average + 1e-15

    def test_profile_example(self):
        prof = ErrorProfile(per_message=np.array([0.9, 0.1, 0.1, 0.1]))
        assert prof.average == pytest.approx(0.3)
        cb = Codebook(n=4, codewords=np.array(
            [[0, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0], [1, 0, 0, 1]]))
        kept = expurgate_worst_half(cb, prof)
        # ceil(4/2) = 2 kept: the first two 0.1 entries, in original order;
        # their max 0.1 clears the 2 * average = 0.6 guarantee with slack
        assert np.array_equal(kept.codewords, cb.codewords[1:3])
        assert prof.per_message[1:3].max() <= 2 * prof.average

    def test_single_message_unchanged(self):
        cb = Codebook(n=2, codewords=np.array([[0, 1]]))
        prof = ErrorProfile(per_message=np.array([0.4]))
        assert expurgate_worst_half(cb, prof) is cb

    def test_mismatched_profile(self):
        cb = Codebook(n=2, codewords=np.array([[0, 1]]))
        with pytest.raises(ProbError):
            expurgate_worst_half(cb, ErrorProfile(per_message=np.array([0.1, 0.2])))


class TestEmpiricalTrc:
    def test_trend_toward_asymptote(self):
        # fixed rate log(2)/4 = log(4)/8 = log(8)/12: the finite-n surrogate
        # approaches the asymptotic exponent from above (polynomial factors
        # favor small n), and the ML/MMI gap shrinks with n
        points = {}
        for n, m in ((4, 2), (8, 4), (12, 8)):
            points[n] = (
                empirical_trc(n, m, UNIF, BSC01, ML, samples=400, seed=31),
                empirical_trc(n, m, UNIF, BSC01, MMI, samples=400, seed=31),
            )
        asymptote = 0.0568  # exponents-module value at this rate
        mls = [points[n][0].empirical_exponent for n in (4, 8, 12)]
        mmis = [points[n][1].empirical_exponent for n in (4, 8, 12)]
        assert mls[0] > mls[1] > mls[2] > asymptote
        assert mmis[0] > mmis[1] > mmis[2] > asymptote
        gaps = [a - b for a, b in zip(mls, mmis)]
        assert gaps[0] > gaps[1] > gaps[2] > 0

    def test_determinism(self):
        a = empirical_trc(6, 2, UNIF, BSC01, ML, samples=40, seed=11)
        b = empirical_trc(6, 2, UNIF, BSC01, ML, samples=40, seed=11)
        assert a == b

    def test_noiseless_all_zero_flag(self):
        # distinct codewords over a noiseless channel are never confused; a
        # single-message codebook keeps the samples duplicate-free by
        # construction, so every sampled P_e is exactly zero
        ident = Channel.from_rows([[1.0, 0.0], [0.0, 1.0]])
        s = empirical_trc(4, 1, UNIF, ident, ML, samples=10, seed=2)
        assert s.all_zero_error and s.zero_error_samples == 10
        assert math.isinf(s.empirical_exponent)
        cb = Codebook(n=4, codewords=np.array([[0, 0, 1, 1], [1, 1, 0, 0]]))
        assert exact_error_profile(cb, ident, ML).per_message.tolist() == [0.0, 0.0]

    def test_reproducible_values(self):
        s = empirical_trc(8, 2, UNIF, BSC01, ML, samples=200, seed=7)
        s2 = empirical_trc(8, 2, UNIF, BSC01, ML, samples=200, seed=7)
        assert s.mean_log_pe == s2.mean_log_pe
        assert s.empirical_exponent > 0
        assert s.zero_error_samples == 0
