import numpy as np
import pytest

from setmetric import losses, mining, synthdata, trainer
from setmetric.losses import ClassifierHead, LossWeights
from setmetric.mining import BatchSpec
from setmetric.trainer import EncoderParams, OptimizerState, TrainConfig


def tiny_dataset(seed=0, ids=4, dim=5):
    cfg = synthdata.GeneratorConfig(num_identities=ids, clips_per_identity=2, frames_per_clip=3,
                                    input_dim=dim, sigma_between=3.0, sigma_within=1.0,
                                    p_occ=0.2, seed=seed)
    return synthdata.generate(cfg)


def tiny_config(**kwargs):
    defaults = dict(batch=BatchSpec(P=2, K=2, T=3), epochs=2, embedding_dim=4,
                    learning_rate=1e-3, decay_epochs=(), eval_interval=0)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


class TestEncoder:
    def test_identity_projection(self):
        params = EncoderParams.identity(3)
        v = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(trainer.encode(params, v), v)

    def test_zero_matrix(self):
        params = EncoderParams("linear", [np.zeros((3, 2))])
        assert np.array_equal(trainer.encode(params, np.ones(3)), np.zeros(2))

    def test_scalar_product(self):
        params = EncoderParams("linear", [np.array([[2.0]])])
        assert trainer.encode(params, np.array([3.0])) == np.array([6.0])

    def test_dimension_mismatch(self):
        params = EncoderParams.identity(3)
        with pytest.raises(ValueError, match="dimension mismatch"):
            trainer.encode(params, np.ones(4))

    def test_hidden_layout_relu(self):
        w1 = np.array([[1.0, -1.0]])
        w2 = np.array([[1.0], [1.0]])
        params = EncoderParams("hidden", [w1, w2])
        assert trainer.encode(params, np.array([2.0])) == 2.0  # relu(2) + relu(-2)
        assert trainer.encode(params, np.array([-3.0])) == 3.0

    def test_layout_validation(self):
        with pytest.raises(ValueError, match="unknown encoder layout"):
            EncoderParams("deep", [np.eye(2)])
        with pytest.raises(ValueError, match="weight matrices"):
            EncoderParams("hidden", [np.eye(2)])
        with pytest.raises(ValueError, match="chain"):
            EncoderParams("hidden", [np.zeros((3, 4)), np.zeros((5, 2))])

    def test_glorot_init_deterministic_and_bounded(self):
        p1 = EncoderParams.create("linear", 6, 4, 8, np.random.default_rng(3))
        p2 = EncoderParams.create("linear", 6, 4, 8, np.random.default_rng(3))
        assert np.array_equal(p1.weights[0], p2.weights[0])
        bound = np.sqrt(6.0 / (6 + 4))
        assert np.abs(p1.weights[0]).max() <= bound


class TestOptimizer:
    def test_zero_gradient_noop_from_fresh_state(self):
        w = np.array([[1.0, 2.0], [3.0, 4.0]])
        snap = w.copy()
        opt = OptimizerState.for_params([w], learning_rate=0.5)
        trainer.optimizer_step(opt, [w], [np.zeros_like(w)])
        assert np.array_equal(w, snap)

    def test_zero_learning_rate_noop(self):
        w = np.array([[1.0, 2.0]])
        snap = w.copy()
        opt = OptimizerState.for_params([w], learning_rate=0.0)
        trainer.optimizer_step(opt, [w], [np.array([[5.0, -3.0]])])
        assert np.array_equal(w, snap)

    def test_default_moment_rates(self):
        opt = OptimizerState.for_params([np.zeros(2)], learning_rate=0.1)
        assert (opt.beta1, opt.beta2, opt.epsilon) == (0.9, 0.999, 1e-8)

    def test_first_step_matches_bias_corrected_formula(self):
        w = np.array([1.0])
        g = np.array([0.5])
        opt = OptimizerState.for_params([w], learning_rate=0.1)
        trainer.optimizer_step(opt, [w], [g])
        m_hat = (0.1 * 0.5) / (1 - 0.9)
        v_hat = (0.001 * 0.25) / (1 - 0.999)
        assert w[0] == pytest.approx(1.0 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8), abs=1e-15)


class TestTrainStep:
    def test_zero_lr_keeps_params_and_reports_loss(self):
        ds = tiny_dataset()
        cfg = tiny_config()
        rng = np.random.default_rng(1)
        params = EncoderParams.create("linear", 5, 4, 8, rng)
        head = ClassifierHead.init(4, 4, rng)
        raw = mining.sample_batch(ds, cfg.batch, rng)
        opt = OptimizerState.for_params(params.weights + [head.prototypes], learning_rate=0.0)
        before = params.weights[0].copy()
        _, _, _, report = trainer.train_step(params, head, opt, raw, cfg)
        assert np.array_equal(params.weights[0], before)
        assert report.total > 0.0

    def test_small_step_decreases_same_batch_loss(self):
        ds = tiny_dataset(seed=2)
        cfg = tiny_config()
        rng = np.random.default_rng(4)
        params = EncoderParams.create("linear", 5, 4, 8, rng)
        head = ClassifierHead.init(4, 4, rng)
        raw = mining.sample_batch(ds, cfg.batch, rng)
        before = trainer.batch_loss(params, head, raw, cfg).total
        opt = OptimizerState.for_params(params.weights + [head.prototypes], learning_rate=1e-3)
        trainer.train_step(params, head, opt, raw, cfg)
        after = trainer.batch_loss(params, head, raw, cfg).total
        assert after < before

    def test_toggles_zero_reported_terms(self):
        ds = tiny_dataset()
        cfg = tiny_config(use_stri=False, use_hpsc=False)
        rng = np.random.default_rng(5)
        params = EncoderParams.create("linear", 5, 4, 8, rng)
        head = ClassifierHead.init(4, 4, rng)
        raw = mining.sample_batch(ds, cfg.batch, rng)
        opt = OptimizerState.for_params(params.weights + [head.prototypes], 1e-3)
        _, _, _, report = trainer.train_step(params, head, opt, raw, cfg)
        assert report.terms["stri_hm"] == 0.0
        assert report.terms["ctri_hpsc"] == 0.0

    def test_non_finite_loss_aborts_with_term_name(self):
        ds = tiny_dataset()
        cfg = tiny_config()
        rng = np.random.default_rng(6)
        params = EncoderParams("linear", [np.full((5, 4), 1e200)])
        head = ClassifierHead.init(4, 4, rng)
        raw = mining.sample_batch(ds, cfg.batch, rng)
        opt = OptimizerState.for_params(params.weights + [head.prototypes], 1e-3)
        with pytest.raises(RuntimeError, match="non-finite"):
            trainer.train_step(params, head, opt, raw, cfg)


class TestTrain:
    def test_zero_epochs_returns_init(self):
        ds = tiny_dataset()
        cfg = tiny_config(epochs=0)
        params, head, log = trainer.train(ds, cfg)
        assert log.epochs == [] and log.evals == []
        fresh = EncoderParams.create(cfg.encoder_layout, 5, cfg.embedding_dim, cfg.hidden_dim,
                                     np.random.default_rng(cfg.seed))
        assert np.array_equal(params.weights[0], fresh.weights[0])

    def test_bitwise_reproducible(self):
        ds = tiny_dataset()
        cfg = tiny_config(epochs=3)
        p1, h1, log1 = trainer.train(ds, cfg)
        p2, h2, log2 = trainer.train(ds, cfg)
        assert np.array_equal(p1.weights[0], p2.weights[0])
        assert np.array_equal(h1.prototypes, h2.prototypes)
        assert log1.epochs == log2.epochs

    def test_learning_rate_schedule_trace(self):
        ds = tiny_dataset()
        cfg = tiny_config(epochs=4, decay_epochs=(2,), learning_rate=1e-3, decay_factor=0.1)
        _, _, log = trainer.train(ds, cfg)
        lrs = [e["learning_rate"] for e in log.epochs]
        assert lrs == pytest.approx([1e-3, 1e-3, 1e-4, 1e-4])

    def test_eval_interval_records_retrieval(self):
        ds = tiny_dataset()
        cfg = tiny_config(epochs=4, eval_interval=2)
        _, _, log = trainer.train(ds, cfg)
        assert [e["epoch"] for e in log.evals] == [1, 3]
        for entry in log.evals:
            assert 0.0 <= entry["retrieval"]["map"] <= 1.0

    def test_noncontiguous_identities_remapped(self):
        ds = tiny_dataset()
        shifted = synthdata.Dataset(
            clips=[synthdata.FrameSet(c.frames, identity=c.identity * 10 + 5, clip_id=c.clip_id)
                   for c in ds.clips],
            num_identities=ds.num_identities, cameras=list(ds.cameras))
        cfg = tiny_config(epochs=1)
        params, head, _ = trainer.train(shifted, cfg)
        assert head.num_classes == 4

    def test_config_validation(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            tiny_config(decay_epochs=(5, 5))
        with pytest.raises(ValueError, match="learning rate"):
            tiny_config(learning_rate=0.0)


class TestFiniteDifferenceCheck:
    def _setup(self, seed=3, layout="linear"):
        ds = tiny_dataset(seed=seed)
        cfg = tiny_config(encoder_layout=layout)
        rng = np.random.default_rng(seed)
        params = EncoderParams.create(layout, 5, 4, 8, rng)
        head = ClassifierHead.init(4, 4, rng)
        raw = mining.sample_batch(ds, cfg.batch, rng)
        return params, head, raw, cfg, rng

    def test_linear_composite_passes(self):
        params, head, raw, cfg, rng = self._setup()
        report = trainer.finite_difference_check(params, head, raw, cfg, sample_size=50, rng=rng)
        assert report.max_rel_error < 1e-4
        assert report.num_coordinates >= 50

    def test_each_term_alone_passes(self):
        params, head, raw, cfg, rng = self._setup(seed=5)
        for lambdas in [(1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)]:
            cfg.loss = LossWeights(lambdas=lambdas)
            report = trainer.finite_difference_check(params, head, raw, cfg, sample_size=40,
                                                     rng=np.random.default_rng(0))
            assert report.max_rel_error < 1e-4, (lambdas, report)

    def test_hidden_layout_passes(self):
        params, head, raw, cfg, rng = self._setup(seed=7, layout="hidden")
        report = trainer.finite_difference_check(params, head, raw, cfg, sample_size=50, rng=rng)
        assert report.max_rel_error < 1e-4

    def test_zero_gradient_batch_errors_identically_zero(self):
        # hinge-only objective on perfectly separated clusters: loss locally 0
        gen = synthdata.GeneratorConfig(num_identities=4, clips_per_identity=2, frames_per_clip=2,
                                        input_dim=4, sigma_between=50.0, sigma_within=0.01,
                                        p_occ=0.0, seed=11)
        ds = synthdata.generate(gen)
        cfg = tiny_config(batch=BatchSpec(P=2, K=2, T=2),
                          loss=LossWeights(lambdas=(0.0, 0.5, 0.5, 0.5)))
        rng = np.random.default_rng(11)
        params = EncoderParams.identity(4)
        head = ClassifierHead.init(4, 4, rng)
        raw = mining.sample_batch(ds, cfg.batch, rng)
        report = trainer.finite_difference_check(params, head, raw, cfg, sample_size=30, rng=rng)
        assert report.max_rel_error == 0.0

    def test_corrupted_gradient_detected(self):
        params, head, raw, cfg, rng = self._setup(seed=9)
        _, grads = trainer.batch_forward_backward(params, head, raw, cfg)
        flat = np.concatenate([g.ravel() for g in grads])
        flat[3] += 1.0
        report = trainer.finite_difference_check(params, head, raw, cfg, sample_size=flat.size,
                                                 rng=rng, analytic_grad=flat)
        assert report.max_rel_error > 1e-1

    def test_persistent_ties_raise(self):
        # all-identical frames cannot be fixed by +-1e-6 jitter
        clips = [synthdata.FrameSet(np.zeros((2, 3)), identity=l, clip_id=i)
                 for i, l in enumerate([0, 0, 1, 1])]
        raw = mining.Batch.from_clips(clips)
        cfg = tiny_config(batch=BatchSpec(P=2, K=2, T=2))
        rng = np.random.default_rng(0)
        params = EncoderParams.create("linear", 3, 4, 8, rng)
        head = ClassifierHead.init(4, 2, rng)
        with pytest.raises(RuntimeError, match="ties persist"):
            trainer.finite_difference_check(params, head, raw, cfg, sample_size=10, rng=rng)
