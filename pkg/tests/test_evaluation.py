import numpy as np
import pytest
from hypothesis import given, strategies as st

from zerocard import evaluation as ze
from zerocard.errors import EmptyWorkload, Undefined


def record(true, est, qid=0, dt=0.0):
    return ze.EstimateRecord(query_id=qid, true_card=true, estimate=est, elapsed_s=dt)


class TestQError:
    def test_exact_is_one(self):
        assert ze.q_error(42, 42) == 1.0

    def test_symmetric_factor_ten(self):
        assert ze.q_error(10, 100) == 10.0
        assert ze.q_error(100, 10) == 10.0

    def test_zero_estimate_is_undefined(self):
        with pytest.raises(Undefined):
            ze.q_error(0, 5)

    def test_rejects_sub_unit_inputs(self):
        with pytest.raises(ValueError):
            ze.q_error(0.5, 5)

    @given(st.integers(1, 10**6), st.integers(1, 10**6))
    def test_symmetry_and_lower_bound(self, a, b):
        q = ze.q_error(a, b)
        assert q == ze.q_error(b, a)
        assert q >= 1.0
        assert (q == 1.0) == (a == b)


class TestNearestRank:
    def test_median_of_half_ones_half_tens(self):
        values = sorted([1.0, 1.0, 10.0, 10.0])
        assert ze.nearest_rank(values, 50) == 1.0

    def test_upper_percentiles(self):
        values = sorted(float(i) for i in range(1, 11))
        assert ze.nearest_rank(values, 90) == 9.0
        assert ze.nearest_rank(values, 99) == 10.0
        assert ze.nearest_rank(values, 100) == 10.0

    def test_singleton(self):
        assert ze.nearest_rank([7.0], 50) == 7.0

    @given(st.lists(st.floats(1, 1e6, allow_nan=False), min_size=1, max_size=50))
    def test_quantiles_monotone_in_percentile(self, values):
        values = sorted(values)
        qs = [ze.nearest_rank(values, p) for p in ze.QUANTILES]
        assert qs == sorted(qs)


class TestSummarize:
    def test_perfect_estimator(self):
        records = [record(i + 1, i + 1, qid=i) for i in range(10)]
        rep = ze.summarize("perfect", records)
        assert rep.failure_rate == 0.0
        assert rep.mean == 1.0
        assert all(v == 1.0 for v in rep.quantiles.values())

    def test_all_failures(self):
        records = [record(5, 0, qid=i) for i in range(4)]
        rep = ze.summarize("dead", records)
        assert rep.failure_rate == 1.0
        assert rep.mean is None and rep.max is None
        assert rep.quantiles == {}

    def test_failures_excluded_from_errors(self):
        records = [record(10, 10), record(10, 0, qid=1), record(10, 100, qid=2)]
        rep = ze.summarize("mixed", records)
        assert rep.failure_rate == pytest.approx(1 / 3)
        assert rep.mean == pytest.approx((1 + 10) / 2)
        assert rep.n_failures + round((1 - rep.failure_rate) * rep.n_queries) == rep.n_queries

    def test_order_independent(self, rng):
        records = [record(int(t), int(e), qid=i) for i, (t, e) in
                   enumerate(zip(rng.integers(1, 100, 30), rng.integers(1, 100, 30)))]
        a = ze.summarize("m", records)
        b = ze.summarize("m", list(reversed(records)))
        assert (a.mean, a.max, a.quantiles) == (b.mean, b.max, b.quantiles)

    def test_empty_workload(self):
        with pytest.raises(EmptyWorkload):
            ze.summarize("m", [])


class TestEvaluate:
    def test_drives_estimator_and_counts_failures(self):
        from zerocard.distribution import Query

        class Flaky(ze.Estimator):
            name = "flaky"

            def estimate(self, query):
                return 0 if query.true_card % 2 else query.true_card

        workload = [Query("t", (), true_card=i + 1) for i in range(10)]
        rep = ze.evaluate(Flaky(), workload)
        assert rep.n_queries == 10
        assert rep.failure_rate == 0.5
        assert rep.mean == 1.0

    def test_empty_workload(self):
        with pytest.raises(EmptyWorkload):
            ze.evaluate(ze.Estimator(), [])


class TestReportOutputs:
    def _reports(self):
        records = [record(10, 10), record(10, 20, qid=1)]
        return [ze.summarize("alpha", records), ze.summarize("beta", [record(5, 0)])]

    def test_json_roundtrips(self):
        import json

        text = ze.reports_to_json(self._reports())
        data = json.loads(text)
        assert data[0]["method"] == "alpha"
        assert data[1]["failure_rate"] == 1.0
        assert data[1]["mean_q_error"] is None

    def test_table_is_aligned(self):
        text = ze.reports_to_table(self._reports())
        lines = text.split("\n")
        assert len(lines) == 3
        assert len({len(l) for l in lines}) == 1  # equal widths
        assert "alpha" in lines[1] and "beta" in lines[2]
