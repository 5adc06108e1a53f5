
import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import VARIANTS, small_model, tiny_dataset
from mlas.checkpoint import dumps
from mlas.data import Dataset, FeedbackTriplet, split_feedback
from mlas.errors import ConfigError, DivergenceError, ShapeError
from mlas.evaluation import pair_distance_stats
from mlas.fusion import embed
from mlas.gradcheck import max_rel_errors, numeric_grads
from mlas.metric import (
    STOP_CONVERGED,
    STOP_EARLY,
    STOP_MAX_ITER,
    TrainingConfig,
    TrainReport,
    contrastive_loss,
    contrastive_loss_grad,
    embed_all,
    euclidean_distance,
    init_decoders,
    mahalanobis_distance,
    pair_loss,
    pair_loss_and_grads,
    pretrain,
    reconstruction_loss_and_grads,
    train,
)
from mlas.synth import default_spec, generate


class TestDistances:
    def test_identity(self):
        assert euclidean_distance([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_triangle(self):
        assert euclidean_distance([0, 3], [4, 0]) == 5.0

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            a, b = rng.normal(size=(2, 7))
            assert euclidean_distance(a, b) == euclidean_distance(b, a)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            euclidean_distance([1.0], [1.0, 2.0])

    def test_mahalanobis_identity_is_euclidean(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(2, 5))
        assert mahalanobis_distance(a, b, np.eye(5)) == pytest.approx(euclidean_distance(a, b), abs=1e-12)

    def test_mahalanobis_scaled(self):
        assert mahalanobis_distance([0, 0], [3, 0], 4 * np.eye(2)) == pytest.approx(6.0, abs=1e-12)

    def test_mahalanobis_zero(self):
        assert mahalanobis_distance([1, 2], [5, -3], np.zeros((2, 2))) == 0.0

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            mahalanobis_distance([0, 0], [1, 1], [[1.0, 0.5], [0.0, 1.0]])

    def test_indefinite_rejected(self):
        with pytest.raises(ValueError, match="semi-definite"):
            mahalanobis_distance([0, 0], [1, 1], [[1.0, 0.0], [0.0, -1.0]])

    def test_shape_rejected(self):
        with pytest.raises(ShapeError):
            mahalanobis_distance([0, 0], [1, 1], np.eye(3))


class TestContrastiveLoss:
    def test_similar(self):
        assert contrastive_loss(2.0, 0, 1.0) == 2.0

    def test_dissimilar_beyond_margin(self):
        assert contrastive_loss(1.5, 1, 1.0) == 0.0

    def test_dissimilar_inside_margin(self):
        assert contrastive_loss(0.4, 1, 1.0) == pytest.approx(0.18, abs=1e-15)

    # d is 0 or large enough that d**2 cannot underflow to zero
    @given(st.one_of(st.just(0.0), st.floats(1e-100, 100)), st.integers(0, 1), st.floats(1e-3, 100))
    def test_non_negative_and_zero_set(self, d, label, g):
        loss = contrastive_loss(d, label, g)
        assert loss >= 0
        assert (loss == 0) == ((label == 0 and d == 0) or (label == 1 and d >= g))

    def test_gradient_vanishes_in_deadzone(self):
        a, b = np.array([0.0, 0.0]), np.array([3.0, 4.0])
        loss, grad = contrastive_loss_grad(a, b, 1, 5.0)
        assert loss == 0.0 and grad is None

    @pytest.mark.parametrize("label", [0, 1])
    def test_gradient_wrt_embedding(self, label):
        rng = np.random.default_rng(label)
        a, b = rng.normal(size=(2, 4))
        g = 10.0
        _, grad = contrastive_loss_grad(a, b, label, g)

        def f():
            return contrastive_loss(euclidean_distance(a, b), label, g)

        assert max_rel_errors({"a": grad}, numeric_grads(f, {"a": a}))["a"] < 1e-7


class TestSiamese:
    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("label", [0, 1])
    def test_operand_swap(self, dataset, variant, label):
        m = small_model(variant, dataset, seed=1)
        p, q = dataset.items[0], dataset.items[3]
        margin = euclidean_distance(embed(m, p), embed(m, q)) + 1.0
        l1, g1 = pair_loss_and_grads(m, p, q, label, margin)
        l2, g2 = pair_loss_and_grads(m, q, p, label, margin)
        assert l1 == l2
        for k in g1:
            np.testing.assert_allclose(g1[k], g2[k], rtol=1e-12, atol=1e-15)

    def test_deadzone_grads_none(self, dataset):
        m = small_model("balanced", dataset)
        p, q = dataset.items[0], dataset.items[1]
        d = euclidean_distance(embed(m, p), embed(m, q))
        loss, grads = pair_loss_and_grads(m, p, q, 1, d * 0.99)
        assert loss == 0.0 and grads is None


def _pair_dataset():
    return Dataset.from_records([("a", [0.5, -1.0, 2.0], ["x", "y", "x"]), ("b", [1.0, 0.0, -0.5], ["y", "x"]),
                                 ("c", [-1.0, 1.0, 0.0], ["x"])])


def _cfg(**kw):
    base = dict(learning_rate=0.01, max_iterations=5, validation_fraction=0.0, l2_lambda=0.0, pretrain_epochs=2)
    base.update(kw)
    return TrainingConfig(**base)


class TestTrain:
    def test_similar_pair_distance_decreases(self):
        ds = _pair_dataset()
        m = small_model("balanced", ds, seed=2)
        before = euclidean_distance(embed(m, ds["a"]), embed(m, ds["b"]))
        trained, report = train(m, [FeedbackTriplet("a", "b", 0)], ds, _cfg(learning_rate=1e-3, max_iterations=1))
        after = euclidean_distance(embed(trained, ds["a"]), embed(trained, ds["b"]))
        assert after < before
        assert report.iterations == 1

    @pytest.mark.parametrize("l2", [0.0, 1e-2])
    def test_deadzone_leaves_parameters_unchanged(self, l2):
        ds = _pair_dataset()
        m = small_model("att_centric", ds, seed=2)
        d = euclidean_distance(embed(m, ds["a"]), embed(m, ds["c"]))
        cfg = _cfg(margin=0.5 * d, l2_lambda=l2, max_iterations=3)
        trained, report = train(m, [FeedbackTriplet("a", "c", 1)], ds, cfg)
        assert dumps(trained) == dumps(m)
        assert report.train_loss == [0.0] * len(report.train_loss)

    def test_input_model_untouched(self):
        ds = _pair_dataset()
        m = small_model("balanced", ds)
        snapshot = dumps(m)
        train(m, [FeedbackTriplet("a", "b", 0)], ds, _cfg())
        assert dumps(m) == snapshot

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_deterministic(self, variant):
        ds = tiny_dataset(seed=1, n=10)
        fb = [FeedbackTriplet("s0", "s1", 0), FeedbackTriplet("s2", "s3", 1), FeedbackTriplet("s4", "s5", 0),
              FeedbackTriplet("s1", "s6", 1), FeedbackTriplet("s7", "s8", 0)]
        cfg = _cfg(validation_fraction=0.2, max_iterations=8)
        m = small_model(variant, ds, seed=5)
        t1, r1 = train(m, fb, ds, cfg)
        t2, r2 = train(m, fb, ds, cfg)
        assert dumps(t1) == dumps(t2)
        assert r1.to_jsonl() == r2.to_jsonl()

    def test_empty_feedback(self, dataset):
        with pytest.raises(ConfigError):
            train(small_model("balanced", dataset), [], dataset, _cfg())

    def test_divergence_reports_epoch_and_triplet(self):
        ds, _, fb = generate(default_spec(seed=0))
        m = small_model("balanced", ds)
        # a weight-decay factor of (1 - lr * l2) = -1e10 per step overflows within an epoch
        with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
            train(m, fb, ds, _cfg(learning_rate=1e12, l2_lambda=1e-2, max_iterations=50))
        assert info.value.epoch >= 1
        assert info.value.triplet in fb

    def test_report_lengths(self):
        ds = tiny_dataset(seed=3, n=10)
        fb = [FeedbackTriplet(f"s{i}", f"s{i + 1}", i % 2) for i in range(8)]
        _, report = train(small_model("seq_centric", ds), fb, ds, _cfg(validation_fraction=0.25, max_iterations=7))
        assert len(report.train_loss) == len(report.val_loss) == report.iterations
        assert report.stop_reason in (STOP_CONVERGED, STOP_EARLY, STOP_MAX_ITER)

    def test_zero_iterations(self, dataset):
        m = small_model("balanced", dataset)
        trained, report = train(m, [FeedbackTriplet("s0", "s1", 0)], dataset, _cfg(max_iterations=0))
        assert dumps(trained) == dumps(m)
        assert report.iterations == 0 and report.stop_reason == STOP_MAX_ITER

    def test_converged_stop(self):
        ds = _pair_dataset()
        m = small_model("balanced", ds)
        # a pair that is already beyond its margin has constant (zero) loss
        d = euclidean_distance(embed(m, ds["a"]), embed(m, ds["b"]))
        _, report = train(m, [FeedbackTriplet("a", "b", 1)], ds, _cfg(margin=d / 2, max_iterations=10))
        assert report.stop_reason == STOP_CONVERGED
        assert report.iterations == 2

    def test_early_stopping_restores_best(self):
        ds = tiny_dataset(seed=4, n=12)
        # contradictory feedback makes the validation loss rise again
        fb = [FeedbackTriplet("s0", "s1", 0)] * 4 + [FeedbackTriplet("s0", "s1", 1)] * 4
        cfg = _cfg(validation_fraction=0.5, learning_rate=0.2, max_iterations=200, patience=3, margin=2.0)
        trained, report = train(small_model("balanced", ds), fb, ds, cfg)
        assert report.stop_reason == STOP_EARLY
        assert report.iterations - report.best_epoch == 3
        best = min(report.val_loss)
        assert report.val_loss[report.best_epoch - 1] == best
        _, val = split_feedback(fb, 0.5, cfg.seed)
        restored = np.mean([pair_loss(trained, ds[t.left], ds[t.right], t.label, cfg.margin) for t in val])
        assert restored == best

    def test_early_stopping_triggers(self):
        ds = tiny_dataset(seed=5, n=12)
        train_fb = [FeedbackTriplet("s0", "s1", 0), FeedbackTriplet("s2", "s3", 0)]
        val_fb = [FeedbackTriplet("s0", "s1", 1), FeedbackTriplet("s2", "s3", 1)]
        fb = train_fb + val_fb
        # find a seed whose split puts the contradicting pairs on opposite sides
        seed = next(s for s in range(200) if split_feedback(fb, 0.5, s)[1] == val_fb)
        cfg = _cfg(validation_fraction=0.5, max_iterations=100, patience=2, margin=5.0, learning_rate=0.05,
                   seed=seed)
        _, report = train(small_model("balanced", ds), fb, ds, cfg)
        assert report.stop_reason == STOP_EARLY
        assert report.best_epoch == 1
        assert report.iterations == 3

    def test_per_pair_break_flag(self):
        ds = tiny_dataset(seed=2, n=8)
        fb = [FeedbackTriplet("s0", "s1", 0), FeedbackTriplet("s2", "s3", 1), FeedbackTriplet("s4", "s5", 0)]
        m = small_model("balanced", ds)
        # with a huge eps the first pair of epoch 2 breaks the epoch before any update
        broken, report = train(m, fb, ds, _cfg(per_pair_break=True, convergence_eps=1e9, max_iterations=3))
        one_epoch, _ = train(m, fb, ds, _cfg(max_iterations=1))
        assert dumps(broken) == dumps(one_epoch)
        assert report.iterations == 2

    def test_report_round_trip(self, tmp_path):
        r = TrainReport([1.0, 0.5], [None, 0.25], STOP_EARLY, 2, 2)
        r.save(tmp_path / "r.jsonl", config={"seed": 1})
        back = TrainReport.load(tmp_path / "r.jsonl")
        assert back == r

    def test_objective_fidelity_small_step(self):
        ds, _, fb = generate(default_spec(seed=0))
        cfg = _cfg(learning_rate=0.002, max_iterations=1, pretrain_epochs=5)
        m = pretrain(small_model("balanced", ds), ds, cfg)
        sims, dis = [], []
        for epoch in range(12):
            s, d = pair_distance_stats(embed_all(m, ds), fb)
            sims.append(s)
            dis.append(d)
            m, _ = train(m, fb, ds, _cfg(learning_rate=0.002, max_iterations=1, seed=epoch))
        assert all(b <= a for a, b in zip(sims, sims[1:]))
        assert dis[-1] > dis[0]


class TestTrainingConfig:
    @pytest.mark.parametrize("kw", [dict(margin=0.0), dict(learning_rate=-1.0), dict(validation_fraction=1.0),
                                    dict(pretrain_omega_a=1.5), dict(l2_lambda=-1e-3), dict(patience=0),
                                    dict(max_iterations=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainingConfig(**kw)

    def test_omega_s(self):
        assert TrainingConfig(pretrain_omega_a=0.25).pretrain_omega_s == 0.75


class TestPretrain:
    def test_zero_epochs_no_op(self, dataset):
        m = small_model("balanced", dataset)
        assert dumps(pretrain(m, dataset, _cfg(pretrain_epochs=0))) == dumps(m)

    def test_loss_decreases(self, dataset):
        history = []
        pretrain(small_model("balanced", dataset), dataset, _cfg(pretrain_epochs=15, pretrain_learning_rate=0.1),
                 history)
        assert len(history) == 15
        assert history[-1] < history[0]

    def test_deterministic(self, dataset):
        m = small_model("seq_centric", dataset)
        a = pretrain(m, dataset, _cfg(pretrain_epochs=3))
        b = pretrain(m, dataset, _cfg(pretrain_epochs=3))
        assert dumps(a) == dumps(b)

    def test_omega_one_ignores_sequence_decoder(self, dataset):
        m = small_model("balanced", dataset)
        dec = init_decoders(m, 0)
        loss, _, dec_grads = reconstruction_loss_and_grads(m, dec, dataset.items[0], 1.0)
        for k, g in dec_grads.items():
            if k not in ("dec.W_attr", "dec.b_attr"):
                assert not g.any(), k

    def test_omega_half_weights_equally(self, dataset):
        m = small_model("att_centric", dataset)
        dec = init_decoders(m, 0)
        p = dataset.items[2]
        attr = reconstruction_loss_and_grads(m, dec, p, 1.0, need_grads=False)[0]
        seq = reconstruction_loss_and_grads(m, dec, p, 0.0, need_grads=False)[0]
        half = reconstruction_loss_and_grads(m, dec, p, 0.5, need_grads=False)[0]
        assert half == pytest.approx(0.5 * attr + 0.5 * seq, rel=1e-12)

    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("omega", [0.0, 0.3, 1.0])
    def test_reconstruction_gradients(self, variant, omega):
        ds = tiny_dataset(seed=6, n=3, u=3, r=3, t_max=3)
        m = small_model(variant, ds, seed=1)
        dec = init_decoders(m, 2)
        rng = np.random.default_rng(0)
        for arr in list(m.tensors().values()) + list(dec.tensors().values()):
            arr += rng.normal(scale=0.2, size=arr.shape)
        p = ds.items[1]
        _, g_enc, g_dec = reconstruction_loss_and_grads(m, dec, p, omega)

        def f():
            return reconstruction_loss_and_grads(m, dec, p, omega, need_grads=False)[0]

        errs = max_rel_errors({**g_enc, **g_dec}, numeric_grads(f, {**m.tensors(), **dec.tensors()}))
        assert max(errs.values()) < 1e-4, {k: v for k, v in errs.items() if v >= 1e-4}


class TestEmbedAll:
    def test_cardinality_and_order(self, dataset):
        out = embed_all(small_model("balanced", dataset), dataset)
        assert [pid for pid, _ in out] == dataset.ids
        assert all(v.shape == (4,) for _, v in out)

    def test_changes_after_training(self):
        ds, _, fb = generate(default_spec(seed=1))
        m = small_model("balanced", ds)
        trained, _ = train(m, fb, ds, _cfg(max_iterations=2))
        before, after = embed_all(m, ds), embed_all(trained, ds)
        assert any(not np.array_equal(a, b) for (_, a), (_, b) in zip(before, after))
