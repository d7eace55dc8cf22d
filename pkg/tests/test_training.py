import math

import numpy as np
import pytest

from zerocard import model as zm
from zerocard import training as zt
from zerocard.distribution import Predicate, Query, selectivity_oracle
from zerocard.errors import GenerationExhausted, InvalidCard
from zerocard.semantics import stub_store_for_tables
from zerocard.tables import ColumnDescriptor, ColumnKind, from_arrays

from conftest import make_mixed_table, make_numeric_table

HYPER = zm.HyperParams(
    d=16, h=8, m=3, k=2, n_heads=2, max_predicates=8,
    expert_hidden=(16,), gate_hidden=(8,), est_hidden=(16,),
)


def tiny_table(n=64, seed=0):
    rng = np.random.default_rng(seed)
    cols = [
        ColumnDescriptor("a", "a", "int", ColumnKind.NUMERICAL, comment_text="uniform key"),
        ColumnDescriptor("b", "b", "double", ColumnKind.NUMERICAL, comment_text="skewed value"),
        ColumnDescriptor("c", "c", "varchar", ColumnKind.CATEGORICAL, comment_text="status"),
    ]
    values = {
        "a": rng.integers(0, 50, n).astype(float),
        "b": np.round(rng.lognormal(1.0, 0.8, n), 2),
        "c": np.array([f"s{int(i)}" for i in rng.integers(0, 6, n)], dtype=object),
    }
    return from_arrays(f"tiny{seed}", cols, values)


def build_examples(table, count=24, seed=5, hyper=HYPER):
    rng = np.random.default_rng(seed)
    store = stub_store_for_tables([table], d=hyper.d, seed=0)
    queries = zt.generate_queries(table, count, rng)
    return zt.build_training_examples({table.table_id: table}, queries, hyper.h, store)


def dense_feature_batch(hyper, seed, pred_counts=(2, 1, 3, 4)):
    """Random dense features in the valid ranges (p in [0,1], pi a simplex)."""
    rng = np.random.default_rng(seed)
    segs, pv, xs, pis = [], [], [], []
    start = 0
    for n in pred_counts:
        segs.append((start, start + n))
        start += n
        pv.append(rng.random((n, hyper.h)))
        xs.append(rng.normal(size=(n, hyper.d)))
        raw = rng.random((n, hyper.h)) + 0.05
        pis.append(raw / raw.sum(axis=1, keepdims=True))
    n_rows = rng.integers(50, 2000, size=len(pred_counts))
    cards = np.maximum(1, (n_rows * rng.random(len(pred_counts))).astype(int))
    return zm.BatchFeatures(
        pvecs=np.concatenate(pv),
        xs=np.concatenate(xs),
        segments=segs,
        log_n=np.log(n_rows.astype(float)),
        n_rows=n_rows,
        pi_true=np.concatenate(pis),
        log_card=np.log(cards.astype(float)),
    )


class TestGenerateQueries:
    def test_contract_on_small_table(self, rng):
        t = make_numeric_table(np.arange(10.0))
        queries = zt.generate_queries(t, 5, rng)
        assert len(queries) == 5
        for q in queries:
            assert 1 <= len(q.predicates) <= 1  # one usable column
            assert 0 < q.true_card <= 9
            assert q.true_card == selectivity_oracle(t, q)

    def test_selectivity_cap_and_positivity(self, rng):
        t = tiny_table(n=200)
        for q in zt.generate_queries(t, 50, rng):
            assert 1 <= q.true_card <= 0.9 * t.n_rows
            assert 1 <= len(q.predicates) <= 3

    def test_deterministic_given_seed(self):
        t = tiny_table()
        a = zt.generate_queries(t, 10, np.random.default_rng(3))
        b = zt.generate_queries(t, 10, np.random.default_rng(3))
        assert a == b

    def test_categorical_predicates_are_equality(self, rng):
        t = tiny_table()
        for q in zt.generate_queries(t, 30, rng):
            for p in q.predicates:
                if p.column_id == "c":
                    assert p.op == "="

    def test_exhaustion_reports_budget(self, rng):
        # a constant column can only produce selectivity-1 queries
        t = make_numeric_table(np.full(10, 3.0))
        with pytest.raises(GenerationExhausted) as exc:
            zt.generate_queries(t, 5, rng, attempt_budget=40)
        assert exc.value.budget == 40
        assert exc.value.produced == 0

    def test_columns_not_repeated_within_query(self, rng):
        t = tiny_table()
        for q in zt.generate_queries(t, 30, rng):
            cols = [p.column_id for p in q.predicates]
            assert len(cols) == len(set(cols))


class TestWorkloadIO:
    def test_roundtrip(self, tmp_path, rng):
        t = tiny_table()
        queries = zt.generate_queries(t, 12, rng)
        path = tmp_path / "w.jsonl"
        zt.save_workload(queries, path)
        loaded = zt.load_workload(path)
        assert loaded == queries

    def test_format_is_one_json_object_per_line(self, tmp_path, rng):
        import json

        t = tiny_table()
        queries = zt.generate_queries(t, 3, rng)
        path = tmp_path / "w.jsonl"
        zt.save_workload(queries, path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 3
        obj = json.loads(lines[0])
        assert set(obj) == {"table_id", "predicates", "true_card"}
        assert set(obj["predicates"][0]) == {"column", "op", "value"}


class TestKLLoss:
    def test_zero_when_equal_to_smoothed_target(self):
        pi = np.array([0.25, 0.25, 0.5])
        smoothed = zt.smooth_target(pi, 1e-6)
        assert zt.kl_loss(smoothed, pi, 1e-6) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_vs_one_hot_matches_closed_form(self):
        eps = 1e-6
        pi_hat = np.array([0.5, 0.5])
        pi = np.array([1.0, 0.0])
        eps_prime = eps / (1 + 2 * eps)
        want = 0.5 * math.log(0.5 / (1 - eps_prime)) + 0.5 * math.log(0.5 / eps_prime)
        assert zt.kl_loss(pi_hat, pi, eps) == pytest.approx(want, rel=1e-12)
        assert want == pytest.approx(6.21, abs=0.01)

    def test_nonnegative(self, rng):
        for _ in range(50):
            raw = rng.random(8) + 1e-3
            pi_hat = raw / raw.sum()
            target = rng.random(8)
            target = target / target.sum()
            assert zt.kl_loss(pi_hat, target) >= -1e-12

    def test_smoothing_only_on_target(self):
        # prediction must already be strictly positive; target may have zeros
        pi_hat = np.array([0.9, 0.1])
        pi = np.array([1.0, 0.0])
        out = zt.kl_loss(pi_hat, pi, 1e-6)
        assert math.isfinite(out)


class TestCardLoss:
    def test_exact_prediction_is_zero(self):
        assert zt.card_loss(math.log(42.0), 42) == 0.0

    def test_factor_ten_error(self):
        want = math.log(10.0) ** 2
        assert zt.card_loss(math.log(10 * 7), 7) == pytest.approx(want, rel=1e-12)
        assert want == pytest.approx(5.3019, abs=1e-4)

    def test_symmetric_in_log_factor(self):
        over = zt.card_loss(math.log(10 * 7), 7)
        under = zt.card_loss(math.log(7 / 10), 7)
        assert over == pytest.approx(under, rel=1e-12)

    def test_rejects_zero_card(self):
        with pytest.raises(InvalidCard):
            zt.card_loss(0.0, 0)


class TestCompositeLoss:
    def test_arithmetic(self):
        t = tiny_table()
        examples = build_examples(t)
        params = zm.init_params(HYPER, seed=0)
        cfg = zt.TrainConfig(beta=0.1, epochs=1)
        total, dist, card = zt.composite_loss(examples, params, cfg)
        assert total == pytest.approx(dist + 0.1 * card, rel=1e-12)

    def test_matches_public_loss_functions(self):
        t = tiny_table()
        examples = build_examples(t)
        params = zm.init_params(HYPER, seed=0)
        cfg = zt.TrainConfig(beta=0.1, epochs=1)
        feats = zt.collate(examples)
        cache = zm.forward_queries(params, feats)
        total, dist, card = zt.composite_loss(examples, params, cfg)
        assert dist == pytest.approx(zt.kl_loss(cache.pi_hat, feats.pi_true, cfg.eps_smooth), rel=1e-12)
        assert card == pytest.approx(
            zt.card_loss(cache.y_hat, np.exp(feats.log_card)), rel=1e-9
        )

    def test_no_dist_ablation_is_card_only(self):
        hyper = HYPER.ablated("no-dist")
        t = tiny_table()
        examples = build_examples(t, hyper=hyper)
        params = zm.init_params(hyper, seed=0)
        cfg = zt.TrainConfig(beta=0.1, epochs=1)
        total, dist, card = zt.composite_loss(examples, params, cfg)
        assert dist == 0.0
        assert total == card


class TestGradients:
    def test_quadratic_toy_loss(self):
        hyper = zm.HyperParams(d=2, h=2, m=2, k=1, n_heads=1, expert_hidden=(2,), gate_hidden=(2,), est_hidden=(2,))
        params = zm.init_params(hyper, seed=0)

        def loss_at(p):
            return sum(float((t**2).sum()) for t in p.tensors.values())

        fd = zt.finite_diff_gradient(loss_at, params, step=1e-5)
        for name, t in params.tensors.items():
            assert np.allclose(fd[name], 2.0 * t, atol=1e-8)

    def test_halving_step_shrinks_discrepancy_quadratically(self):
        hyper = zm.HyperParams(d=2, h=2, m=2, k=1, n_heads=1, expert_hidden=(2,), gate_hidden=(2,), est_hidden=(2,))
        params = zm.init_params(hyper, seed=3)

        def loss_at(p):
            w = p.tensors["est.w0"]
            return float(np.sin(w).sum())

        exact = np.cos(params.tensors["est.w0"])
        err = {}
        for step in (1e-2, 5e-3):
            fd = zt.finite_diff_gradient(loss_at, params, step=step)
            err[step] = np.abs(fd["est.w0"] - exact).max()
        ratio = err[1e-2] / err[5e-3]
        assert 3.0 <= ratio <= 5.0  # central differences are second order

    def test_composite_gradient_matches_finite_differences(self):
        feats = dense_feature_batch(HYPER, seed=8)
        params = zm.init_params(HYPER, seed=11)
        cfg = zt.TrainConfig(beta=0.1, epochs=1)
        (_, grads) = zt.loss_and_gradients(params, feats, cfg)
        fd = zt.finite_diff_gradient(
            lambda p: zt.loss_and_gradients(p, feats, cfg)[0][0], params, step=1e-5
        )
        for name in params.tensors:
            a, f = grads[name], fd[name]
            mask = np.abs(a) > 1e-8
            if mask.any():
                rel = np.abs(a - f)[mask] / np.abs(a)[mask]
                assert rel.max() <= 1e-4, f"{name}: {rel.max()}"

    def test_gradient_on_featurized_workload(self):
        # Real featurized batches produce attention gradient entries down
        # at ~1e-8 where central differences are pure roundoff noise, so
        # this variant gates at 1e-6 instead of the dense batch's 1e-8.
        t = tiny_table(n=48, seed=2)
        examples = build_examples(t, count=6, seed=9)
        params = zm.init_params(HYPER, seed=11)
        cfg = zt.TrainConfig(beta=0.1, epochs=1)
        feats = zt.collate(examples)
        (_, grads) = zt.loss_and_gradients(params, feats, cfg)
        fd = zt.finite_diff_gradient(
            lambda p: zt.loss_and_gradients(p, feats, cfg)[0][0], params, step=1e-5
        )
        for name in params.tensors:
            a, f = grads[name], fd[name]
            mask = np.abs(a) > 1e-6
            if mask.any():
                rel = np.abs(a - f)[mask] / np.abs(a)[mask]
                assert rel.max() <= 1e-4, f"{name}: {rel.max()}"

    def test_match_fraction_flag_gradient(self):
        hyper = zm.HyperParams(
            d=8, h=6, m=2, k=1, n_heads=2, expert_hidden=(8,), gate_hidden=(4,),
            est_hidden=(8,), append_match_fraction=True,
        )
        t = tiny_table(n=32, seed=4)
        examples = build_examples(t, count=5, seed=13, hyper=hyper)
        params = zm.init_params(hyper, seed=21)
        cfg = zt.TrainConfig(beta=0.1, epochs=1)
        feats = zt.collate(examples)
        (_, grads) = zt.loss_and_gradients(params, feats, cfg)
        fd = zt.finite_diff_gradient(
            lambda p: zt.loss_and_gradients(p, feats, cfg)[0][0], params, step=1e-4
        )
        for name in params.tensors:
            a, f = grads[name], fd[name]
            mask = np.abs(a) > 1e-6
            if mask.any():
                rel = np.abs(a - f)[mask] / np.abs(a)[mask]
                assert rel.max() <= 1e-3, f"{name}: {rel.max()}"


class TestTrainLoop:
    def test_overfits_single_example(self):
        t = tiny_table(n=40, seed=1)
        examples = build_examples(t, count=1, seed=7)
        cfg = zt.TrainConfig(epochs=200, batch_size=1, seed=2, learning_rate=1e-2)
        result = zt.train(examples, HYPER, cfg)
        totals = [e.total for e in result.history]
        assert totals[-1] < 0.01 * result.initial.total
        # decreasing on average: compare first and second half means
        half = len(totals) // 2
        assert np.mean(totals[half:]) < np.mean(totals[:half])

    def test_bitwise_reproducible(self):
        t = tiny_table(n=48, seed=3)
        examples = build_examples(t, count=12, seed=5)
        cfg = zt.TrainConfig(epochs=3, batch_size=4, seed=9)
        a = zt.train(examples, HYPER, cfg)
        b = zt.train(examples, HYPER, cfg)
        for name in a.params.tensors:
            assert np.array_equal(a.params.tensors[name], b.params.tensors[name])
        assert [e.total for e in a.history] == [e.total for e in b.history]

    def test_zero_learning_rate_is_a_no_op(self):
        t = tiny_table(n=48, seed=3)
        examples = build_examples(t, count=8, seed=5)
        cfg = zt.TrainConfig(epochs=3, batch_size=4, seed=9, learning_rate=0.0)
        result = zt.train(examples, HYPER, cfg)
        fresh = zm.init_params(HYPER, seed=cfg.seed)
        for name in fresh.tensors:
            assert np.array_equal(result.params.tensors[name], fresh.tensors[name])
        totals = [round(e.total, 12) for e in result.history]
        assert len(set(totals)) == 1

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            zt.train([], HYPER, zt.TrainConfig(epochs=1))


class TestSplitByTable:
    def test_no_table_on_both_sides(self):
        queries = [Query(f"t{i % 5}", (Predicate("x", "=", 1.0),), 1) for i in range(50)]
        train, hold = zt.split_by_table(queries, 0.2, seed=3)
        assert {q.table_id for q in train}.isdisjoint({q.table_id for q in hold})
        assert len(train) + len(hold) == 50
        assert hold

    def test_deterministic(self):
        queries = [Query(f"t{i % 7}", (Predicate("x", "=", 1.0),), 1) for i in range(70)]
        assert zt.split_by_table(queries, 0.3, seed=1) == zt.split_by_table(queries, 0.3, seed=1)


class TestFeaturize:
    def test_rejects_card_above_table_size(self):
        t = make_numeric_table(np.arange(10.0))
        store = stub_store_for_tables([t], d=HYPER.d, seed=0)
        q = Query("t", (Predicate("x", "<=", 5.0),), true_card=11)
        with pytest.raises(InvalidCard):
            zt.build_training_examples({"t": t}, [q], HYPER.h, store)

    def test_groups_same_column_predicates(self):
        t = make_numeric_table(np.arange(10.0))
        store = stub_store_for_tables([t], d=HYPER.d, seed=0)
        q = Query("t", (Predicate("x", ">=", 2.0), Predicate("x", "<=", 5.0)), 4)
        pvecs, xs, pis = zt.featurize_query(t, q, HYPER.h, store)
        assert pvecs.shape == (1, HYPER.h)
        assert xs.shape == (1, HYPER.d)
        assert pis.shape == (1, HYPER.h)

    def test_inference_mode_skips_ground_truth(self):
        t = make_mixed_table([1, 2, 3], ["a", "b", "a"])
        store = stub_store_for_tables([t], d=HYPER.d, seed=0)
        q = Query("t", (Predicate("age", "<=", 2.0), Predicate("city", "=", "a")))
        pvecs, xs, pis = zt.featurize_query(t, q, HYPER.h, store, with_ground_truth=False)
        assert pis is None
        assert pvecs.shape[0] == xs.shape[0] == 2
