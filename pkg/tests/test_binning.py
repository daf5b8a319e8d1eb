import math

import numpy as np
import pytest

from driftcard import binning
from driftcard.binning import (
    Bin,
    BinningConfig,
    Characteristic,
    bin_nominal,
    build_interaction,
    characteristics_from_text,
    characteristics_to_text,
    compute_iv,
    compute_woe,
    encode,
    supervised_bin,
)


def make_char(counts, kind=binning.CLASS_SET):
    """Characteristic from (g, b) pairs with spec-consistent WoE/fallback."""
    G = sum(g for g, _ in counts)
    B = sum(b for _, b in counts)
    raw = [(kind, frozenset([f"t{i}"]), g, b) for i, (g, b) in enumerate(counts)]
    return binning._finalize("test", "nominal", ("test",), raw)


class TestComputeWoe:
    def test_equal_shares_zero(self):
        assert compute_woe(10, 10, 100, 100, fallback=9.9) == 0.0

    def test_ln2(self):
        assert compute_woe(20, 10, 100, 100, 0.0) == pytest.approx(math.log(2), abs=1e-15)

    def test_zero_class_uses_fallback(self):
        assert compute_woe(0, 5, 100, 100, 0.12) == 0.12
        assert compute_woe(5, 0, 100, 100, -0.3) == -0.3

    def test_degenerate_total_errors(self):
        with pytest.raises(binning.BinningError):
            compute_woe(1, 1, 0, 100, 0.0)
        with pytest.raises(binning.BinningError):
            compute_woe(1, 1, 100, 0, 0.0)


class TestComputeIv:
    def test_single_bin_zero(self):
        ch = make_char([(50, 50)])
        assert compute_iv(ch) == 0.0

    def test_hand_computed_two_bins(self):
        ch = make_char([(30, 10), (20, 40)])
        expected = (0.6 - 0.2) * math.log(3) + (0.4 - 0.8) * math.log(0.5)
        assert compute_iv(ch) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.7167, abs=5e-5)

    def test_fallback_bins_excluded(self):
        with_zero = make_char([(30, 10), (20, 40), (7, 0)])
        # the zero-bad bin must contribute nothing to IV
        g_, b_ = 30 + 20 + 7, 50
        manual = sum(
            (g / g_ - b / b_) * math.log((g / g_) / (b / b_))
            for g, b in [(30, 10), (20, 40)]
        )
        assert compute_iv(with_zero) == pytest.approx(manual, abs=1e-12)

    def test_nonnegative_on_random_characteristics(self):
        rng = np.random.Generator(np.random.Philox(3))
        for _ in range(200):
            counts = [(int(rng.integers(0, 40)), int(rng.integers(0, 40)))
                      for _ in range(int(rng.integers(1, 7)))]
            if sum(g for g, _ in counts) == 0 or sum(b for _, b in counts) == 0:
                continue
            assert compute_iv(make_char(counts)) >= 0.0

    def test_higher_good_share_higher_woe(self):
        ch = make_char([(60, 10), (30, 30), (10, 60)])
        woes = [b.woe for b in ch.bins]
        assert woes[0] > woes[1] > woes[2]


def smoothed_iv_best_cut(x, y):
    """Oracle: the single cut maximizing Laplace-smoothed IV."""
    G, B = int((y == 0).sum()), int((y == 1).sum())
    best, best_iv = None, -1.0
    for c in np.unique(x)[1:]:
        left = x < c
        iv = 0.0
        for sel in (left, ~left):
            g, b = int((y[sel] == 0).sum()), int((y[sel] == 1).sum())
            iv += (g / G - b / B) * math.log(((g + 0.5) / G) / ((b + 0.5) / B))
        if iv > best_iv:
            best, best_iv = float(c), iv
    return best


class TestSupervisedBin:
    def test_perfect_separation_two_bins_at_cut(self):
        rng = np.random.Generator(np.random.Philox(1))
        x = np.concatenate([rng.uniform(0, 1, 400), rng.uniform(2, 3, 600)])
        y = np.array([0] * 400 + [1] * 600)
        ch = supervised_bin(list(x), y, BinningConfig(), name="sep")
        intervals = [b for b in ch.bins if b.kind == binning.INTERVAL]
        assert len(intervals) == 2
        assert intervals[0].bad == 0 and intervals[1].good == 0
        # the algorithm's cut lands in the same inter-class gap as the
        # brute-force smoothed-IV maximizer
        cut = intervals[0].key[1]
        oracle_cut = smoothed_iv_best_cut(x, y)
        lo, hi = x[x < 2].max(), x[x >= 2].min()
        assert lo < cut <= hi
        assert lo < oracle_cut <= hi

    def test_all_identical_single_bin_plus_missing(self):
        values = [5.0] * 80 + [None] * 20
        y = np.array(([0, 1] * 40) + [0] * 10 + [1] * 10)
        ch = supervised_bin(values, y, name="const")
        kinds = [b.kind for b in ch.bins]
        assert kinds == [binning.INTERVAL, binning.MISSING]

    def test_missing_bucket_fraction(self):
        rng = np.random.Generator(np.random.Philox(2))
        values = [None if i % 5 == 0 else float(rng.normal()) for i in range(1000)]
        y = (rng.random(1000) < 0.3).astype(int)
        ch = supervised_bin(values, y, name="m")
        missing = [b for b in ch.bins if b.kind == binning.MISSING]
        assert len(missing) == 1
        assert missing[0].count == 200

    def test_min_fraction_respected(self):
        rng = np.random.Generator(np.random.Philox(4))
        x = rng.normal(0, 1, 2000)
        y = (rng.random(2000) < 1 / (1 + np.exp(-x))).astype(int)
        config = BinningConfig(min_bin_fraction=0.10)
        ch = supervised_bin(list(x), y, config, name="f")
        intervals = [b for b in ch.bins if b.kind == binning.INTERVAL]
        assert all(b.count >= 0.10 * 2000 for b in intervals)

    def test_monotone_woe_when_enabled(self):
        rng = np.random.Generator(np.random.Philox(5))
        x = rng.normal(0, 1, 8000)
        y = (rng.random(8000) < 1 / (1 + np.exp(-(1.2 * x - 0.8)))).astype(int)
        ch = supervised_bin(list(x), y, BinningConfig(monotonic_woe=True), name="mw")
        woes = [b.woe for b in ch.bins if b.kind == binning.INTERVAL and not b.fallback]
        assert all(a >= b for a, b in zip(woes, woes[1:])) or \
               all(a <= b for a, b in zip(woes, woes[1:]))

    def test_single_class_errors(self):
        with pytest.raises(binning.BinningError):
            supervised_bin([1.0, 2.0, 3.0], [1, 1, 1], name="x")

    def test_deterministic_refit(self):
        rng = np.random.Generator(np.random.Philox(6))
        x = list(rng.normal(0, 1, 3000))
        y = (rng.random(3000) < 0.3).astype(int)
        a = supervised_bin(x, y, name="d")
        b = supervised_bin(x, y, name="d")
        assert a == b

    def test_count_totals_match_sample(self):
        rng = np.random.Generator(np.random.Philox(7))
        values = [None if i % 7 == 0 else float(rng.normal()) for i in range(500)]
        y = (rng.random(500) < 0.4).astype(int)
        ch = supervised_bin(values, y, name="t")
        G, B = ch.totals()
        assert G == int((y == 0).sum()) and B == int((y == 1).sum())
        # good/bad shares over bins each sum to one
        assert sum(b.good / G for b in ch.bins) == pytest.approx(1.0, abs=1e-12)
        assert sum(b.bad / B for b in ch.bins) == pytest.approx(1.0, abs=1e-12)


class TestNominal:
    def test_one_bin_per_class(self):
        tokens = ["a"] * 50 + ["b"] * 30 + [None] * 20
        y = np.array([0, 1] * 25 + [0] * 20 + [1] * 10 + [0] * 15 + [1] * 5)
        ch = bin_nominal(tokens, y, name="n")
        kinds = sorted(b.kind for b in ch.bins)
        assert kinds == [binning.CLASS_SET, binning.CLASS_SET, binning.MISSING]

    def test_zero_count_class_gets_average(self):
        tokens = ["a"] * 60 + ["pure"] * 10
        y = np.array([0, 1] * 30 + [0] * 10)  # "pure" has no bads
        ch = bin_nominal(tokens, y, name="n")
        pure = next(b for b in ch.bins if b.key == frozenset(["pure"]))
        assert pure.fallback
        assert pure.woe == ch.average_woe

    def test_average_woe_weighting(self):
        tokens = ["a"] * 60 + ["b"] * 40
        y = np.array([0] * 40 + [1] * 20 + [0] * 10 + [1] * 30)
        ch = bin_nominal(tokens, y, name="n")
        expected = (60 * ch.bins[0].woe + 40 * ch.bins[1].woe) / 100
        assert ch.average_woe == pytest.approx(expected, abs=1e-12)


def chunky_sample(seed=11, n=6000):
    rng = np.random.Generator(np.random.Philox(seed))
    a = rng.choice(["p", "q", "r"], n, p=[0.5, 0.3, 0.2])
    b = rng.choice(["u", "v"], n, p=[0.6, 0.4])
    logits = np.where(a == "p", -1.6, np.where(a == "q", -0.6, 0.4))
    y = (rng.random(n) < 1 / (1 + np.exp(-logits))).astype(int)
    return list(a), list(b), y


class TestInteraction:
    def test_self_interaction_keeps_iv(self):
        a, _, y = chunky_sample()
        ca = bin_nominal(a, y, name="a")
        inter = build_interaction("a*a", [ca, ca], [a, a], y, min_bin_fraction=0.02)
        assert inter.iv >= ca.iv - 1e-12

    def test_independent_variables_iv_near_zero(self):
        rng = np.random.Generator(np.random.Philox(13))
        n = 100_000
        a = list(rng.choice(["p", "q", "r"], n))
        b = list(rng.choice(["u", "v", "w"], n))
        y = (rng.random(n) < 0.3).astype(int)  # label depends on neither
        ca = bin_nominal(a, y, name="a")
        cb = bin_nominal(b, y, name="b")
        inter = build_interaction("a*b", [ca, cb], [a, b], y)
        assert inter.iv < 0.01

    def test_cells_cover_sample(self):
        a, b, y = chunky_sample(17)
        ca = bin_nominal(a, y, name="a")
        cb = bin_nominal(b, y, name="b")
        inter = build_interaction("a*b", [ca, cb], [a, b], y)
        G, B = inter.totals()
        assert G + B == len(y)

    def test_small_cells_merge_to_catch_all(self):
        a = ["p"] * 97 + ["q"] * 3
        b = ["u"] * 50 + ["v"] * 47 + ["u"] * 3
        y = np.array([0, 1] * 50)
        ca = bin_nominal(a, y, name="a")
        cb = bin_nominal(b, y, name="b")
        inter = build_interaction("a*b", [ca, cb], [a, b], y, min_bin_fraction=0.05)
        other = [bn for bn in inter.bins if bn.key == binning.CATCH_ALL]
        assert len(other) == 1
        assert other[0].count >= 3

    def test_too_few_cells_error(self):
        a = ["p"] * 100
        y = np.array([0, 1] * 50)
        ca = bin_nominal(a, y, name="a")
        with pytest.raises(binning.BinningError):
            build_interaction("a*a", [ca, ca], [a, a], y)

    def test_three_way(self):
        a, b, y = chunky_sample(19)
        c = list(np.where(np.asarray(a) == "p", "x", "z"))
        ca = bin_nominal(a, y, name="a")
        cb = bin_nominal(b, y, name="b")
        cc = bin_nominal(c, y, name="c")
        inter = build_interaction("a*b*c", [ca, cb, cc], [a, b, c], y)
        assert inter.iv >= 0.0
        assert inter.sources == ("a", "b", "c")


class TestEncode:
    def fitted(self):
        tokens = ["a"] * 60 + ["b"] * 40
        y = np.array([0] * 40 + [1] * 20 + [0] * 10 + [1] * 30)
        return bin_nominal(tokens, y, name="tok")

    def test_seen_token_gets_bin_woe(self):
        ch = self.fitted()
        assert ch.woe_for("a") == ch.bins[0].woe

    def test_unfamiliar_token_gets_average(self):
        ch = self.fitted()
        assert ch.woe_for("never-seen") == ch.average_woe

    def test_missing_without_bucket_gets_average(self):
        ch = self.fitted()
        assert ch.woe_for(None) == ch.average_woe

    def test_missing_bin_mode(self):
        tokens = ["a"] * 50 + ["b"] * 30 + [None] * 20
        y = np.array([0, 1] * 25 + [0] * 20 + [1] * 10 + [0] * 5 + [1] * 15)
        ch = bin_nominal(tokens, y, name="tok")
        missing_woe = ch.bins[ch.missing_index()].woe
        assert ch.woe_for("unseen", unfamiliar="missing_bin") == missing_woe
        # without a missing bucket the naive mode falls back to zero
        ch2 = self.fitted()
        assert ch2.woe_for("unseen", unfamiliar="missing_bin") == 0.0

    def test_numeric_boundary_belongs_to_upper_bin(self):
        rng = np.random.Generator(np.random.Philox(23))
        x = rng.uniform(0, 10, 2000)
        y = (rng.random(2000) < 1 / (1 + np.exp(-(x - 5)))).astype(int)
        ch = supervised_bin(list(x), y, name="num")
        intervals = [(i, b) for i, b in enumerate(ch.bins) if b.kind == binning.INTERVAL]
        assert len(intervals) >= 2
        idx, second = intervals[1]
        assert ch.locate(second.key[0]) == idx

    def test_numeric_out_of_fitted_range_gets_average(self):
        rng = np.random.Generator(np.random.Philox(29))
        x = rng.uniform(0, 10, 2000)
        y = (rng.random(2000) < 1 / (1 + np.exp(-(x - 5)))).astype(int)
        ch = supervised_bin(list(x), y, name="num")
        assert ch.woe_for(io_value := float(x.max()) + 1.0) == ch.average_woe
        assert ch.woe_for(float(x.min()) - 1.0) == ch.average_woe

    def test_encode_vector_total_and_deterministic(self):
        ch = self.fitted()
        rng = np.random.Generator(np.random.Philox(31))
        x = rng.uniform(0, 10, 500)
        y = (rng.random(500) < 0.5).astype(int)
        cnum = supervised_bin(list(x), y, name="num")
        for value in ("a", "b", "zz", None):
            for num in (0.0, 5.0, 99.0, None):
                v = encode([value, num], [ch, cnum])
                assert v.shape == (2,)
                assert np.isfinite(v).all()

    def test_locate_array_matches_scalar(self):
        rng = np.random.Generator(np.random.Philox(37))
        x = rng.uniform(0, 10, 1500)
        y = (rng.random(1500) < 1 / (1 + np.exp(-(x - 5)))).astype(int)
        ch = supervised_bin(list(x), y, name="num")
        probes = [None, -5.0, 0.0, 2.5, 5.0, 9.999, float(x.max()), 50.0]
        vec = ch.locate_array(probes)
        for i, p in enumerate(probes):
            scalar = ch.locate(p)
            assert (scalar if scalar is not None else -1) == vec[i]


class TestRoundTrip:
    def test_plain_and_interaction_exact(self):
        a, b, y = chunky_sample(41)
        rng = np.random.Generator(np.random.Philox(43))
        x = [None if i % 9 == 0 else float(rng.normal()) for i in range(len(y))]
        ca = bin_nominal(a, y, name="a")
        cb = bin_nominal(b, y, name="b")
        cn = supervised_bin(x, y, name="num")
        inter = build_interaction("a*b", [ca, cb], [a, b], y)
        chars = [ca, cb, cn, inter]
        text = characteristics_to_text(chars)
        back = characteristics_from_text(text)
        assert back == chars
        # twice through text is byte-stable
        assert characteristics_to_text(back) == text

    def test_comma_in_token_roundtrip(self):
        tokens = ["with,comma"] * 50 + ["plain"] * 50
        y = np.array([0, 1] * 50)
        ch = bin_nominal(tokens, y, name="c")
        back = characteristics_from_text(characteristics_to_text([ch]))
        assert back == [ch]

    def test_parent_must_precede_interaction(self):
        a, b, y = chunky_sample(47)
        ca = bin_nominal(a, y, name="a")
        cb = bin_nominal(b, y, name="b")
        inter = build_interaction("a*b", [ca, cb], [a, b], y)
        with pytest.raises(binning.BinningError):
            characteristics_to_text([inter])
