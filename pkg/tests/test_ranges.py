import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from parascan.errors import RangeError
from parascan.ranges import FiniteList, Interval, Normal, parse_range


def inv_phi(p):
    """Independent standard normal quantile via bisection on erf."""
    lo, hi = -12.0, 12.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if 0.5 * (1 + math.erf(mid / math.sqrt(2))) < p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


class TestParse:
    def test_plain_list(self):
        spec = parse_range("1, 2, 3, 4")
        assert isinstance(spec, FiniteList)
        assert spec.expand() == [1, 2, 3, 4]

    def test_ellipsis_expansion(self):
        assert parse_range("1, 1.2, ..., 2").expand() == \
            pytest.approx([1, 1.2, 1.4, 1.6, 1.8, 2], abs=1e-12)

    def test_multi_segment_ellipsis(self):
        expected = (
            [1, 2, 3, 4, 5]
            + [7.5, 10, 12.5, 15, 17.5, 20, 22.5, 25, 27.5, 30]
            + [33, 36, 39, 42, 45, 48, 51, 54, 57, 60]
        )
        assert parse_range("1, 2,..., 5, 7.5,..., 30, 33,..., 60").expand() == \
            pytest.approx(expected, abs=1e-9)

    def test_ellipsis_anchors_always_present(self):
        # c is overshot by the step yet still closes the list
        values = parse_range("1, 1.5, ..., 2.7").expand()
        assert values == pytest.approx([1, 1.5, 2.0, 2.5, 2.7])

    def test_descending_ellipsis(self):
        assert parse_range("5, 4, ..., 1").expand() == pytest.approx([5, 4, 3, 2, 1])

    def test_two_dot_ellipsis(self):
        assert parse_range("0, 1, .., 3").expand() == pytest.approx([0, 1, 2, 3])

    def test_ellipsis_needs_two_anchors(self):
        with pytest.raises(RangeError):
            parse_range("1, ..., 5")

    def test_ellipsis_needs_following_value(self):
        with pytest.raises(RangeError):
            parse_range("1, 2, ...")

    def test_interval_with_options(self):
        spec = parse_range("interval(1, 2) with count=5")
        assert isinstance(spec, Interval)
        assert spec.count == 5

    def test_interval_disorder(self):
        with pytest.raises(RangeError):
            parse_range("interval(2, 1)")

    def test_log_needs_positive_lower_bound(self):
        with pytest.raises(RangeError):
            parse_range("interval(0, 1) with distribution=log")

    def test_normalvariate(self):
        spec = parse_range("normalvariate(1, 2) with mcmc_stepsize=0.5")
        assert isinstance(spec, Normal)
        assert spec.mcmc_stepsize == 0.5

    def test_sigma_must_be_positive(self):
        with pytest.raises(RangeError):
            parse_range("normalvariate(1, 0)")

    def test_unknown_option(self):
        with pytest.raises(RangeError):
            parse_range("interval(1, 2) with shape=7")

    def test_option_invalid_for_kind(self):
        with pytest.raises(RangeError):
            parse_range("normalvariate(1, 2) with distribution=log")
        with pytest.raises(RangeError):
            parse_range("1, 2, 3 with count=5")

    def test_malformed_number(self):
        with pytest.raises(RangeError):
            parse_range("1, abc, 3")

    def test_empty(self):
        with pytest.raises(RangeError):
            parse_range("   ")


class TestExpand:
    def test_interval_linear(self):
        assert parse_range("interval(1, 2) with count=5").expand() == \
            [1, 1.25, 1.5, 1.75, 2]

    def test_interval_log(self):
        values = parse_range(
            "interval(10, 10000) with count=200, distribution=log"
        ).expand()
        assert values[0] == 10
        assert values[-1] == 10000
        ratios = [b / a for a, b in zip(values, values[1:])]
        assert max(ratios) - min(ratios) < 1e-12

    def test_degenerate_interval_count_one(self):
        assert parse_range("interval(5, 5) with count=1").expand() == [5]

    def test_interval_without_count_cannot_expand(self):
        with pytest.raises(RangeError):
            parse_range("interval(0, 1)").expand()

    def test_normal_quantile_rule_against_oracle(self):
        values = parse_range("normalvariate(1, 2) with count=11").expand()
        oracle = [1 + 2 * inv_phi(k / 12) for k in range(1, 12)]
        assert values == pytest.approx(oracle, abs=1e-9)
        assert values[0] == pytest.approx(-1.77, abs=0.0055)
        assert values[5] == pytest.approx(1.00, abs=0.0055)
        assert values[9] == pytest.approx(2.94, abs=0.0055)


class TestSample:
    def test_singleton_list(self):
        rng = random.Random(0)
        spec = parse_range("7")
        assert all(spec.sample(rng) == 7 for _ in range(10))

    def test_uniform_mean(self):
        rng = random.Random(1)
        spec = parse_range("interval(0, 1)")
        draws = [spec.sample(rng) for _ in range(100_000)]
        assert sum(draws) / len(draws) == pytest.approx(0.5, abs=0.01)

    def test_normal_moments(self):
        rng = random.Random(2)
        spec = parse_range("normalvariate(1, 2)")
        draws = [spec.sample(rng) for _ in range(100_000)]
        mean = sum(draws) / len(draws)
        sigma = math.sqrt(sum((d - mean) ** 2 for d in draws) / len(draws))
        assert sigma == pytest.approx(2, abs=0.05)

    def test_log_uniform_stays_in_range(self):
        rng = random.Random(3)
        spec = parse_range("interval(0.01, 10) with distribution=log")
        draws = [spec.sample(rng) for _ in range(1000)]
        assert all(0.01 <= d <= 10 for d in draws)
        # roughly half of the draws below the geometric midpoint
        below = sum(1 for d in draws if d < math.sqrt(0.01 * 10))
        assert 380 < below < 620

    def test_discrete_list_membership(self):
        rng = random.Random(4)
        spec = parse_range("-1, 1")
        assert set(spec.sample(rng) for _ in range(100)) == {-1.0, 1.0}


class TestProperties:
    @given(
        a=st.floats(-1e6, 1e6), width=st.floats(1e-6, 1e6),
        count=st.integers(2, 257),
    )
    @settings(max_examples=60)
    def test_expand_count_sorted_endpoints_exact(self, a, width, count):
        spec = Interval(a, a + width, count=count)
        values = spec.expand()
        assert len(values) == count
        assert values == sorted(values)
        assert values[0] == a
        assert values[-1] == a + width

    @given(
        a=st.floats(1e-3, 1e3), factor=st.floats(1.5, 1e4),
        count=st.integers(2, 65),
    )
    @settings(max_examples=60)
    def test_log_expansion_is_linear_in_log10(self, a, factor, count):
        b = a * factor
        values = Interval(a, b, distribution="log", count=count).expand()
        logs = [math.log10(v) for v in values]
        linear = Interval(math.log10(a), math.log10(b), count=count).expand()
        assert logs == pytest.approx(linear, abs=1e-9)

    @given(
        a=st.integers(-50, 50), step=st.integers(1, 9), n=st.integers(1, 30),
    )
    @settings(max_examples=60)
    def test_ellipsis_step_exact_on_integers(self, a, step, n):
        b = a + step
        c = a + step * (n + 1)
        values = parse_range("%d, %d, ..., %d" % (a, b, c)).expand()
        diffs = {y - x for x, y in zip(values, values[1:])}
        assert diffs == {float(step)}
        assert values[0] == a and values[-1] == c
