"""Objective, gradients, the fold trainer, and the LOSO/sweep harness."""

import math
from dataclasses import replace

import numpy as np
import pytest

from targnn.dataio import FeatureSample, SyntheticSpec, generate_synthetic
from targnn.graph import AdjacencyState, build_initial_adjacency, symmetrize
from targnn.model import ModelHyper, ModelParams, init_params
from targnn.montage import CHANNELS
from targnn.train import (
    VARIANTS,
    DomainBatch,
    EmptySourceBatch,
    Gradients,
    NoTrainingData,
    TooFewSubjects,
    TrainConfig,
    backward,
    distance_init_adjacency,
    evaluate,
    frozen_attention,
    loso,
    loss,
    predict_logits,
    sgd_step,
    sweep,
    train_fold,
)


def make_batch(rng, ns=4, nt=4, n=6, d=3):
    return DomainBatch(
        source_x=rng.standard_normal((ns, n, d)),
        source_y=rng.integers(0, 2, ns),
        target_x=rng.standard_normal((nt, n, d)),
    )


def make_params(rng, n=6, d=3, h=4, layers=2, warm=False):
    a = rng.uniform(0.2, 1.0, (n, n))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 1.0)
    a[0, 1] = a[1, 0] = -0.4  # one negative entry, like a shifted global pair
    params = init_params(n, d, AdjacencyState(a, ((0, 1),)), rng, ModelHyper(layers, h))
    if warm:
        # move the heads off their zero init so every gradient path is live
        params.dom_weight = 0.3 * rng.standard_normal((n, h))
        params.dom_bias = 0.1 * rng.standard_normal(n)
    return params


CFG = TrainConfig(lam=1.0, alpha=0.01, lr=0.05, max_epochs=5, batch_size=4, seed=0)


class TestLossDecomposition:
    def test_total_is_cls_plus_l1_minus_lam_domain(self, rng):
        params = make_params(rng, warm=True)
        batch = make_batch(rng)
        for lam in (0.0, 0.5, 2.0):
            parts = loss(params, batch, replace(CFG, lam=lam))
            assert parts.total == pytest.approx(
                parts.cls + parts.l1 - lam * parts.domain, abs=1e-12
            )
            assert parts.l1 == pytest.approx(CFG.alpha * parts.l1_norm, abs=1e-12)

    def test_hand_value_uniform_state(self, rng):
        # Identity adjacency (||A||_1 = 14), alpha = 1, zero emotion weights
        # (uniform softmax -> cls = ln 2), zero heads (d-hat = 1/2 -> domain
        # BCE = ln 2), lam = 0: total = ln 2 + 14.
        n, d, h = 14, 5, 4
        params = init_params(n, d, AdjacencyState(np.eye(n), ()), rng, ModelHyper(2, h))
        params.emo_weight = np.zeros((h, 2))
        batch = make_batch(rng, ns=6, nt=6, n=n, d=d)
        parts = loss(params, batch, replace(CFG, lam=0.0, alpha=1.0))
        assert parts.cls == pytest.approx(math.log(2.0), abs=1e-12)
        assert parts.domain == pytest.approx(math.log(2.0), abs=1e-12)
        assert parts.l1_norm == 14.0
        assert parts.total == pytest.approx(math.log(2.0) + 14.0, abs=1e-12)

    def test_lam_zero_allows_empty_target(self, rng):
        params = make_params(rng)
        batch = DomainBatch(
            source_x=rng.standard_normal((4, 6, 3)),
            source_y=np.array([0, 1, 0, 1]),
            target_x=np.zeros((0, 6, 3)),
        )
        parts = loss(params, batch, replace(CFG, lam=0.0))
        assert np.isfinite(parts.total)
        with pytest.raises(ValueError):
            loss(params, batch, replace(CFG, lam=1.0))

    def test_empty_source_rejected(self, rng):
        params = make_params(rng)
        batch = DomainBatch(
            source_x=np.zeros((0, 6, 3)),
            source_y=np.zeros(0, dtype=np.int64),
            target_x=rng.standard_normal((3, 6, 3)),
        )
        with pytest.raises(EmptySourceBatch):
            loss(params, batch, CFG)


def fd_gradient(params, batch, cfg, array, step=1e-5):
    """Central finite differences of loss().total with the attention frozen
    at the evaluation point, matching the differentiation contract."""
    attn = frozen_attention(params, batch, cfg)
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = loss(params, batch, cfg, attn_override=attn).total
        flat[i] = keep - step
        lo = loss(params, batch, cfg, attn_override=attn).total
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def assert_close_grad(analytic, numeric, rel=1e-4, abs_tol=1e-7):
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = (diff <= abs_tol) | (diff <= rel * scale)
    assert ok.all(), f"max abs err {diff.max()}, max rel {(diff / np.maximum(scale, 1e-300)).max()}"


class TestGradients:
    @pytest.mark.parametrize("lam", [0.0, 1.0, 2.5])
    def test_finite_difference_all_tensors(self, rng, lam):
        cfg = replace(CFG, lam=lam, alpha=0.02)
        params = make_params(rng, warm=True)
        batch = make_batch(rng)
        grads = backward(params, batch, cfg)
        np.testing.assert_array_equal(params.adjacency.matrix, params.adjacency.matrix.T)
        pairs = [
            (grads.adjacency, params.adjacency.matrix),
            (grads.weight, params.weight),
            (grads.emo_weight, params.emo_weight),
            (grads.emo_bias, params.emo_bias),
            (grads.dom_weight, params.dom_weight),
            (grads.dom_bias, params.dom_bias),
        ]
        for analytic, array in pairs:
            assert_close_grad(analytic, fd_gradient(params, batch, cfg, array))

    def test_lam_zero_freezes_domain_heads(self, rng):
        params = make_params(rng, warm=True)
        batch = make_batch(rng)
        grads = backward(params, batch, replace(CFG, lam=0.0))
        assert np.all(grads.dom_weight == 0.0)
        assert np.all(grads.dom_bias == 0.0)

    def test_domain_gradients_linear_in_lam(self, rng):
        # The reversal layer multiplies the domain path by -lam and nothing
        # else, so g(lam) - g(0) must scale exactly linearly.
        params = make_params(rng, warm=True)
        batch = make_batch(rng)
        g0 = backward(params, batch, replace(CFG, lam=0.0, alpha=0.0))
        g1 = backward(params, batch, replace(CFG, lam=1.0, alpha=0.0))
        g3 = backward(params, batch, replace(CFG, lam=3.0, alpha=0.0))
        for field in ("adjacency", "weight", "dom_weight", "dom_bias"):
            lhs = getattr(g3, field) - getattr(g0, field)
            rhs = 3.0 * (getattr(g1, field) - getattr(g0, field))
            assert np.abs(lhs - rhs).max() < 1e-10
        # the emotion head is upstream of the reversal: untouched by lam
        np.testing.assert_allclose(g3.emo_weight, g0.emo_weight, atol=1e-12)
        np.testing.assert_allclose(g3.emo_bias, g0.emo_bias, atol=1e-12)

    def test_backward_deterministic(self, rng):
        params = make_params(rng, warm=True)
        batch = make_batch(rng)
        a = backward(params, batch, CFG)
        b = backward(params, batch, CFG)
        for field in vars(a):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))

    def test_backward_does_not_mutate(self, rng):
        params = make_params(rng, warm=True)
        before = params.copy()
        backward(params, make_batch(rng), CFG)
        np.testing.assert_array_equal(params.adjacency.matrix, before.adjacency.matrix)
        np.testing.assert_array_equal(params.weight, before.weight)


class TestSgdStep:
    def test_updates_are_linear(self, rng):
        params = make_params(rng, warm=True)
        grads = backward(params, make_batch(rng), CFG)
        w0 = params.weight.copy()
        a0 = params.adjacency.matrix.copy()
        sgd_step(params, grads, lr=0.1)
        np.testing.assert_array_equal(params.weight, w0 - 0.1 * grads.weight)
        np.testing.assert_array_equal(
            params.adjacency.matrix, symmetrize(a0 - 0.1 * grads.adjacency)
        )
        np.testing.assert_array_equal(
            params.adjacency.matrix, params.adjacency.matrix.T
        )

    def test_zero_gradients_keep_params(self, rng):
        params = make_params(rng)
        zero = Gradients(
            adjacency=np.zeros_like(params.adjacency.matrix),
            weight=np.zeros_like(params.weight),
            emo_weight=np.zeros_like(params.emo_weight),
            emo_bias=np.zeros_like(params.emo_bias),
            dom_weight=np.zeros_like(params.dom_weight),
            dom_bias=np.zeros_like(params.dom_bias),
        )
        before = params.copy()
        sgd_step(params, zero, lr=0.5)
        np.testing.assert_array_equal(params.weight, before.weight)
        np.testing.assert_array_equal(params.adjacency.matrix, before.adjacency.matrix)


def tiny_dataset(seed=0, subjects=4, per_class=30, sep=2.0, shift=1.0):
    return generate_synthetic(
        SyntheticSpec(subjects, per_class, sep, shift, 1.0, rng_seed=seed)
    )


def split(samples, subject):
    train = [s for s in samples if s.subject_id != subject]
    test = [s for s in samples if s.subject_id == subject]
    return train, test


FOLD_CFG = TrainConfig(
    lam=1.0, alpha=0.02, lr=0.05, max_epochs=8, batch_size=32, seed=0, hidden_dim=8
)


class TestTrainFold:
    def test_deterministic_bit_for_bit(self):
        samples = tiny_dataset()
        train, test = split(samples, "s02")
        r1, p1 = train_fold(train, test, FOLD_CFG, return_params=True)
        r2, p2 = train_fold(train, test, FOLD_CFG, return_params=True)
        assert r1.accuracy == r2.accuracy
        np.testing.assert_array_equal(r1.confusion, r2.confusion)
        assert r1.loss_trace == r2.loss_trace
        assert r1.epochs_to_converge == r2.epochs_to_converge
        np.testing.assert_array_equal(p1.weight, p2.weight)
        np.testing.assert_array_equal(p1.adjacency.matrix, p2.adjacency.matrix)
        np.testing.assert_array_equal(p1.dom_weight, p2.dom_weight)

    def test_target_labels_never_influence_training(self):
        samples = tiny_dataset()
        train, test = split(samples, "s03")
        flipped = [
            FeatureSample(s.subject_id, 1 - s.label, s.features) for s in test
        ]
        _, p1 = train_fold(train, test, FOLD_CFG, return_params=True)
        r2, p2 = train_fold(train, flipped, FOLD_CFG, return_params=True)
        np.testing.assert_array_equal(p1.weight, p2.weight)
        np.testing.assert_array_equal(p1.adjacency.matrix, p2.adjacency.matrix)
        np.testing.assert_array_equal(p1.dom_weight, p2.dom_weight)
        r1, _ = train_fold(train, test, FOLD_CFG, return_params=True)
        np.testing.assert_array_equal(r1.confusion, r2.confusion[::-1])

    def test_learns_separable_task(self):
        # wide separation, no subject shift: a linear readout must nail it.
        # Channel noise is correlated and survives pooling, so the margin has
        # to clear the pooled-noise std (~1.6) by a few sigma.
        samples = tiny_dataset(seed=1, subjects=4, per_class=50, sep=8.0, shift=0.0)
        train, test = split(samples, "s01")
        report = train_fold(train, test, replace(FOLD_CFG, max_epochs=30))
        assert report.accuracy >= 0.95

    def test_confusion_accounting(self):
        samples = tiny_dataset()
        train, test = split(samples, "s01")
        report = train_fold(train, test, FOLD_CFG)
        assert report.confusion.sum() == len(test)
        assert report.confusion.shape == (2, 2)
        # rows are true labels: each class contributed per_class samples
        np.testing.assert_array_equal(report.confusion.sum(axis=1), [30, 30])
        assert report.accuracy == pytest.approx(
            report.confusion.trace() / report.confusion.sum()
        )

    def test_early_stop_on_plateau(self):
        samples = tiny_dataset()
        train, test = split(samples, "s02")
        # min_delta so large nothing ever counts as an improvement after the
        # first epoch: exactly 1 + patience epochs run
        cfg = replace(FOLD_CFG, max_epochs=50, patience=3, min_delta=1e9)
        report = train_fold(train, test, cfg)
        assert report.epochs_to_converge == 4
        assert len(report.loss_trace) == 4

    def test_trace_matches_epochs(self):
        samples = tiny_dataset()
        train, test = split(samples, "s04")
        report = train_fold(train, test, FOLD_CFG)
        assert len(report.loss_trace) == report.epochs_to_converge
        assert all(np.isfinite(v) for row in report.loss_trace for v in row)

    def test_leakage_guards(self):
        samples = tiny_dataset()
        train, test = split(samples, "s01")
        with pytest.raises(ValueError):
            train_fold(train + test, test, FOLD_CFG)
        mixed = test + [s for s in samples if s.subject_id == "s02"][:3]
        with pytest.raises(ValueError):
            train_fold(train, mixed, FOLD_CFG)
        with pytest.raises(NoTrainingData):
            train_fold([], test, FOLD_CFG)
        with pytest.raises(NoTrainingData):
            train_fold(train, [], FOLD_CFG)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            replace(FOLD_CFG, lam=-1.0).validate()
        with pytest.raises(ValueError):
            replace(FOLD_CFG, lr=0.0).validate()
        with pytest.raises(ValueError):
            replace(FOLD_CFG, variant="dann").validate()
        with pytest.raises(ValueError):
            replace(FOLD_CFG, bins=1).validate()
        for v in VARIANTS:
            replace(FOLD_CFG, variant=v).validate()


class TestVariants:
    def test_no_domain_adaptation_equals_lam_zero(self):
        samples = tiny_dataset()
        train, test = split(samples, "s02")
        r1, p1 = train_fold(
            train, test, replace(FOLD_CFG, variant="no_domain_adaptation", lam=1.0),
            return_params=True,
        )
        r2, p2 = train_fold(
            train, test, replace(FOLD_CFG, variant="ta_rgnn", lam=0.0),
            return_params=True,
        )
        assert r1.accuracy == r2.accuracy
        assert r1.loss_trace == r2.loss_trace
        np.testing.assert_array_equal(p1.weight, p2.weight)
        np.testing.assert_array_equal(p1.adjacency.matrix, p2.adjacency.matrix)

    def test_no_domain_adaptation_heads_never_move(self):
        samples = tiny_dataset()
        train, test = split(samples, "s01")
        _, params = train_fold(
            train, test, replace(FOLD_CFG, variant="no_domain_adaptation"),
            return_params=True,
        )
        assert np.all(params.dom_weight == 0.0)
        assert np.all(params.dom_bias == 0.0)

    def test_no_attention_variant_scores_with_unit_weights(self, rng):
        params = make_params(rng, n=14, d=5, warm=True)
        x = rng.standard_normal((3, 14, 5))
        cfg_plain = replace(FOLD_CFG, variant="rgnn_no_attention")
        logits = predict_logits(params, x, cfg_plain)
        # unit attention means the pooled vector is the plain node sum
        from targnn.train import _trunk

        *_, z = _trunk(params, x)
        want = z.sum(axis=1) @ params.emo_weight + params.emo_bias
        np.testing.assert_allclose(logits, want, atol=1e-12)

    def test_no_attention_gradients_match_ones_override(self, rng):
        params = make_params(rng, warm=True)
        batch = make_batch(rng)
        cfg_plain = replace(CFG, variant="rgnn_no_attention")
        g1 = backward(params, batch, cfg_plain)
        ones = np.ones((batch.source_x.shape[0] + batch.target_x.shape[0], 6))
        g2 = backward(params, batch, CFG, attn_override=ones)
        np.testing.assert_array_equal(g1.weight, g2.weight)
        np.testing.assert_array_equal(g1.emo_weight, g2.emo_weight)

    def test_global_classifier_uses_single_head(self, rng):
        params = make_params(rng, warm=True)
        batch = make_batch(rng)
        grads = backward(params, batch, replace(CFG, variant="global_domain_classifier"))
        assert np.all(grads.dom_weight[1:] == 0.0)
        assert np.all(grads.dom_bias[1:] == 0.0)
        assert np.any(grads.dom_weight[0] != 0.0)

    def test_global_classifier_fd(self, rng):
        cfg = replace(CFG, variant="global_domain_classifier", alpha=0.005)
        params = make_params(rng, warm=True)
        batch = make_batch(rng)
        grads = backward(params, batch, cfg)
        assert_close_grad(grads.weight, fd_gradient(params, batch, cfg, params.weight))
        assert_close_grad(
            grads.dom_weight, fd_gradient(params, batch, cfg, params.dom_weight)
        )

    def test_no_attention_fd(self, rng):
        cfg = replace(CFG, variant="rgnn_no_attention", alpha=0.005)
        params = make_params(rng, warm=True)
        batch = make_batch(rng)
        grads = backward(params, batch, cfg)
        assert_close_grad(
            grads.adjacency, fd_gradient(params, batch, cfg, params.adjacency.matrix)
        )


class TestDistanceInit:
    def test_structure(self):
        adj = distance_init_adjacency()
        a = adj.matrix
        assert a.shape == (14, 14)
        np.testing.assert_array_equal(a, a.T)
        np.testing.assert_array_equal(np.diag(a), np.ones(14))
        assert adj.global_pairs == tuple(adj.global_pairs)
        lower = [a[i, j] for i, j in adj.global_pairs]
        assert all(-1.0 <= v <= 0.0 for v in lower)

    def test_median_calibration(self):
        # no global pairs on a non-montage electrode count
        coords = np.random.default_rng(3).standard_normal((7, 3))
        a = distance_init_adjacency(coords).matrix
        off = a[np.triu_indices(7, 1)]
        assert np.median(off) == pytest.approx(0.5, abs=1e-12)
        assert off.min() >= 0.0 and off.max() <= 1.0

    def test_closer_electrodes_weigh_more(self):
        coords = np.array([[0.0, 0, 0], [0.1, 0, 0], [3.0, 0, 0]])
        a = distance_init_adjacency(coords).matrix
        assert a[0, 1] > a[0, 2]

    def test_degenerate_input(self):
        with pytest.raises(ValueError):
            distance_init_adjacency(np.zeros((1, 3)))


class TestLoso:
    def test_folds_cover_all_subjects_sorted(self):
        samples = tiny_dataset()
        result = loso(samples, FOLD_CFG)
        assert [f.held_out_subject for f in result.folds] == ["s01", "s02", "s03", "s04"]

    def test_summary_statistics(self):
        samples = tiny_dataset()
        result = loso(samples, FOLD_CFG)
        accs = np.array([f.accuracy for f in result.folds])
        assert result.mean_accuracy == pytest.approx(accs.mean(), abs=1e-15)
        assert result.std_accuracy == pytest.approx(accs.std(ddof=0), abs=1e-15)
        assert result.mean_epochs == pytest.approx(
            np.mean([f.epochs_to_converge for f in result.folds]), abs=1e-15
        )

    def test_fold_matches_manual_split(self):
        samples = tiny_dataset()
        result = loso(samples, FOLD_CFG)
        train, test = split(samples, "s03")
        manual = train_fold(train, test, FOLD_CFG)
        by_subject = {f.held_out_subject: f for f in result.folds}
        assert by_subject["s03"].accuracy == manual.accuracy
        np.testing.assert_array_equal(by_subject["s03"].confusion, manual.confusion)
        assert by_subject["s03"].loss_trace == manual.loss_trace

    def test_too_few_subjects(self):
        samples = [s for s in tiny_dataset() if s.subject_id == "s01"]
        with pytest.raises(TooFewSubjects):
            loso(samples, FOLD_CFG)

    def test_parallel_jobs_identical(self):
        samples = tiny_dataset(subjects=3, per_class=15)
        cfg = replace(FOLD_CFG, max_epochs=4)
        serial = loso(samples, cfg, jobs=1)
        parallel = loso(samples, cfg, jobs=2)
        assert serial.mean_accuracy == parallel.mean_accuracy
        for a, b in zip(serial.folds, parallel.folds):
            assert a.accuracy == b.accuracy
            np.testing.assert_array_equal(a.confusion, b.confusion)


class TestSweep:
    def test_grid_order_and_lam_zero_matches_no_da(self):
        samples = tiny_dataset(subjects=3, per_class=15)
        cfg = replace(FOLD_CFG, max_epochs=4)
        points = sweep(samples, lams=[0.0, 1.0], alphas=[0.01, 0.02], cfg=cfg)
        assert [(p.lam, p.alpha) for p in points] == [
            (0.0, 0.01), (0.0, 0.02), (1.0, 0.01), (1.0, 0.02),
        ]
        no_da = loso(
            samples, replace(cfg, variant="no_domain_adaptation", alpha=0.01)
        )
        assert points[0].mean_accuracy == no_da.mean_accuracy

    def test_points_carry_statistics(self):
        samples = tiny_dataset(subjects=3, per_class=15)
        cfg = replace(FOLD_CFG, max_epochs=3)
        (point,) = sweep(samples, lams=[0.5], alphas=[0.01], cfg=cfg)
        assert point.lam == 0.5 and point.alpha == 0.01
        assert 0.0 <= point.mean_accuracy <= 1.0
        assert point.std_accuracy >= 0.0


class TestDomainBatch:
    def test_from_samples_strips_target_labels(self):
        samples = tiny_dataset()
        train, test = split(samples, "s01")
        batch = DomainBatch.from_samples(train[:5], test[:7])
        assert batch.source_x.shape == (5, 14, 5)
        assert batch.source_y.shape == (5,)
        assert batch.target_x.shape == (7, 14, 5)
        assert not hasattr(batch, "target_y")

    def test_evaluate_confusion_orientation(self, rng):
        # row = true label, column = prediction; force known predictions by
        # rigging the emotion head to a constant argmax
        params = make_params(rng, n=14, d=5)
        params.emo_weight = np.zeros((4, 2))
        params.emo_bias = np.array([0.0, 5.0])  # always predicts class 1
        test = [
            FeatureSample("s09", 0, rng.standard_normal((14, 5))),
            FeatureSample("s09", 0, rng.standard_normal((14, 5))),
            FeatureSample("s09", 1, rng.standard_normal((14, 5))),
        ]
        acc, confusion = evaluate(params, test, FOLD_CFG)
        np.testing.assert_array_equal(confusion, [[0, 2], [0, 1]])
        assert acc == pytest.approx(1.0 / 3.0)
