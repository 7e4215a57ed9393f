import numpy as np
import pytest

from _oracles import assert_close_rel, finite_difference_grads
from told.dynamics import DynamicsParams, PhaseState, Scheme, kernel_sample
from told.score import (
    AdamState,
    ScoreNet,
    TrainConfig,
    TrainingError,
    adam_step,
    features,
    forward_score,
    load_checkpoint,
    loss,
    save_checkpoint,
    silu,
    train,
)

DIMS = (7, 8, 2)


def _small_net(seed=0, random_head=True):
    rng = np.random.default_rng(seed)
    net = ScoreNet.initialize(DIMS, rng)
    if random_head:
        net.weights[-1][:] = 0.1 * rng.standard_normal(net.weights[-1].shape)
        net.biases[-1][:] = 0.1 * rng.standard_normal(net.biases[-1].shape)
    return net


class TestSilu:
    def test_known_values(self):
        assert silu(0.0) == 0.0
        assert abs(silu(1.0) - 1.0 / (1.0 + np.exp(-1.0))) < 1e-15
        assert abs(silu(-30.0)) < 1e-11  # saturates to ~ x e^x
        assert abs(silu(30.0) - 30.0) < 1e-11

    def test_derivative_matches_finite_differences(self):
        xs = np.linspace(-6, 6, 41)
        h = 1e-6
        fd = (silu(xs + h) - silu(xs - h)) / (2 * h)
        sg = 1.0 / (1.0 + np.exp(-xs))
        an = sg * (1.0 + xs * (1.0 - sg))
        np.testing.assert_allclose(an, fd, atol=1e-9)


class TestScoreNet:
    def test_initialize_shapes_and_zero_head(self):
        rng = np.random.default_rng(1)
        net = ScoreNet.initialize((7, 128, 128, 2), rng)
        assert [w.shape for w in net.weights] == [(7, 128), (128, 128), (128, 2)]
        assert [b.shape for b in net.biases] == [(128,), (128,), (2,)]
        assert net.in_dim == 7 and net.out_dim == 2
        # zero head: fresh nets emit exactly zero score
        assert np.all(net.weights[-1] == 0.0) and np.all(net.biases[-1] == 0.0)
        assert np.any(net.weights[0] != 0.0)
        y, _ = net.forward(rng.standard_normal((5, 7)))
        np.testing.assert_array_equal(y, np.zeros((5, 2)))

    def test_forward_batch_consistency(self):
        net = _small_net()
        x = np.random.default_rng(2).standard_normal((10, 7))
        y, _ = net.forward(x)
        perm = np.random.default_rng(3).permutation(10)
        y_perm, _ = net.forward(x[perm])
        np.testing.assert_allclose(y_perm, y[perm], atol=1e-14)

    def test_backward_matches_finite_differences(self):
        net = _small_net(seed=4)
        x = np.random.default_rng(5).standard_normal((8, 7))
        C = np.random.default_rng(6).standard_normal((8, 2))

        def value(n):
            y, _ = n.forward(x)
            return float((y * C).sum())

        y, cache = net.forward(x)
        gw, gb = net.backward(C, cache)
        fw, fb = finite_difference_grads(value, net, step=1e-5)
        for a, b in zip(gw + gb, fw + fb):
            assert_close_rel(a, b, rel=1e-4, floor=1e-8)


class TestFeatures:
    def test_layout(self):
        z = PhaseState(q=np.array([[1.0, 2.0]]), p=np.array([[3.0, 4.0]]),
                       s=np.array([[5.0, 6.0]]))
        x = features(z, 0.25)
        np.testing.assert_array_equal(x, [[1, 2, 3, 4, 5, 6, 0.25]])

    def test_per_sample_times(self):
        z = PhaseState(q=np.zeros((3, 1)), p=np.zeros((3, 1)), s=np.zeros((3, 1)))
        x = features(z, np.array([0.1, 0.2, 0.3]))
        np.testing.assert_array_equal(x[:, -1], [0.1, 0.2, 0.3])

    def test_forward_score_shape(self):
        net = _small_net()
        z = PhaseState(q=np.zeros((6, 2)), p=np.zeros((6, 2)), s=np.zeros((6, 2)))
        assert forward_score(net, z, 0.5).shape == (6, 2)


class _TeacherNet:
    """Returns the precomputed optimum -l_t * eps3 regardless of input."""

    def __init__(self, y):
        self._y = y

    def forward(self, x):
        return self._y, None

    def backward(self, dy, cache):
        return [], []


class TestLoss:
    def _params(self):
        return DynamicsParams.create(Scheme.TOLDPP, lipschitz=2.0, alpha=0.2)

    def test_teacher_forced_optimum_is_zero(self):
        p = self._params()
        q0 = np.random.default_rng(1).standard_normal((32, 2))
        seed = 99
        # replay the sampler's stream to know the (t, eps3, l_t) the loss
        # will draw, then hand back the exact optimum
        rep = np.random.default_rng(seed)
        t = rep.uniform(1e-3, p.horizon, 32)
        _, eps3, l_t = kernel_sample(p, q0, t, rep, jitter=True)
        teacher = _TeacherNet(-l_t[:, None] * eps3)
        value, _ = loss(teacher, p, q0, np.random.default_rng(seed))
        assert value < 1e-28

    def test_zero_network_matches_noise_energy(self):
        # with s_theta = 0 the residual is eps3 itself, so the loss is
        # E||eps3||^2 = dim
        p = self._params()
        net = ScoreNet.initialize((7, 8, 2), np.random.default_rng(0))
        q0 = np.random.default_rng(2).standard_normal((100_000, 2))
        value, _ = loss(net, p, q0, np.random.default_rng(3))
        se = np.sqrt(2.0 * 2 * 2 / 100_000)  # var of chi^2_2 is 2*dim
        assert abs(value - 2.0) < 3 * se

    def test_gradients_match_finite_differences(self):
        p = self._params()
        net = _small_net(seed=7)
        q0 = np.random.default_rng(8).standard_normal((8, 2))

        def value(n):
            v, _ = loss(n, p, q0, np.random.default_rng(123))
            return v

        _, (gw, gb) = loss(net, p, q0, np.random.default_rng(123))
        fw, fb = finite_difference_grads(value, net, step=1e-5)
        for a, b in zip(gw + gb, fw + fb):
            assert_close_rel(a, b, rel=1e-4, floor=1e-8)

    def test_rejects_bad_batches(self):
        p = self._params()
        net = _small_net()
        with pytest.raises(ValueError):
            loss(net, p, np.zeros((0, 2)), np.random.default_rng(0))
        with pytest.raises(ValueError):
            loss(net, p, np.zeros(5), np.random.default_rng(0))


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        net = _small_net(seed=9)
        before = [w.copy() for w in net.weights] + [b.copy() for b in net.biases]
        opt = AdamState(net, 1e-2)
        zeros = ([np.zeros_like(w) for w in net.weights],
                 [np.zeros_like(b) for b in net.biases])
        for _ in range(3):
            adam_step(opt, net, zeros)
        after = list(net.weights) + list(net.biases)
        for a, b in zip(before, after):
            np.testing.assert_array_equal(a, b)
        assert opt.count == 3

    def test_first_step_is_signed_learning_rate(self):
        net = _small_net(seed=10)
        before = [w.copy() for w in net.weights]
        opt = AdamState(net, 3e-3)
        g = ([np.sign(np.random.default_rng(11).standard_normal(w.shape)) * 0.7
              for w in net.weights],
             [np.zeros_like(b) for b in net.biases])
        adam_step(opt, net, g)
        for w0, w1, gw in zip(before, net.weights, g[0]):
            step = w1 - w0
            np.testing.assert_allclose(step, -3e-3 * np.sign(gw), rtol=1e-5)

    def test_deterministic(self):
        results = []
        for _ in range(2):
            net = _small_net(seed=12)
            opt = AdamState(net, 1e-2)
            rng = np.random.default_rng(13)
            for _ in range(5):
                g = ([rng.standard_normal(w.shape) for w in net.weights],
                     [rng.standard_normal(b.shape) for b in net.biases])
                adam_step(opt, net, g)
            results.append([w.copy() for w in net.weights])
        for a, b in zip(*results):
            np.testing.assert_array_equal(a, b)


class TestTrainConfig:
    @pytest.mark.parametrize("kw", [
        {"batch_size": 0}, {"n_iterations": -1}, {"learning_rate": 0.0},
        {"t_min": 0.0}, {"checkpoint_interval": 0},
    ])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_zero_iterations_allowed(self):
        assert TrainConfig(n_iterations=0).n_iterations == 0


def _gmm_source(n, rng):
    from told.data import default_gmm, sample_gmm
    x = sample_gmm(default_gmm(), n, rng)
    return np.stack([x, -x], axis=1) * 0.1


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = _small_net(seed=20)
        opt = AdamState(net, 2e-3)
        rng = np.random.default_rng(21)
        g = ([rng.standard_normal(w.shape) for w in net.weights],
             [rng.standard_normal(b.shape) for b in net.biases])
        adam_step(opt, net, g)
        history = [1.5, 0.7, 0.66]
        path = tmp_path / "ck.bin"
        save_checkpoint(path, net, opt, 3, rng, history)
        net2, opt2, it, rng2, hist2 = load_checkpoint(path)
        assert it == 3 and hist2 == history
        assert opt2.count == opt.count and opt2.lr == opt.lr
        for a, b in zip(net.weights + net.biases, net2.weights + net2.biases):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(opt.mw + opt.vw + opt.mb + opt.vb,
                        opt2.mw + opt2.vw + opt2.mb + opt2.vb):
            np.testing.assert_array_equal(a, b)
        # restored stream continues identically
        np.testing.assert_array_equal(rng.standard_normal(5), rng2.standard_normal(5))

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"PNG\x00not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_save_is_atomic_name(self, tmp_path):
        net = _small_net()
        opt = AdamState(net, 1e-3)
        path = tmp_path / "ck.bin"
        save_checkpoint(path, net, opt, 0, np.random.default_rng(0), [])
        assert path.exists()
        assert not (tmp_path / "ck.bin.tmp").exists()


class TestTrain:
    def _params(self):
        return DynamicsParams.create(Scheme.TOLD, lipschitz=4.0)

    def test_zero_iterations(self, tmp_path):
        cfg = TrainConfig(batch_size=8, n_iterations=0, seed=1)
        net, history = train(self._params(), _gmm_source, cfg, DIMS,
                             checkpoint_dir=tmp_path)
        assert history == []
        assert np.all(net.weights[-1] == 0.0)
        assert (tmp_path / "ckpt_0000000.bin").exists()

    def test_loss_decreases_on_small_problem(self):
        cfg = TrainConfig(batch_size=64, n_iterations=300, learning_rate=5e-3, seed=3)
        net, history = train(self._params(), _gmm_source, cfg, (7, 16, 2))
        assert len(history) == 300
        assert np.mean(history[-50:]) < np.mean(history[:50])
        assert np.all(np.isfinite(history))

    def test_data_source_receives_batch_and_stream(self):
        calls = []

        def source(n, rng):
            calls.append((n, rng))
            return np.zeros((n, 2))

        cfg = TrainConfig(batch_size=17, n_iterations=3, seed=5)
        train(self._params(), source, cfg, DIMS)
        assert [n for n, _ in calls] == [17, 17, 17]
        assert all(r is calls[0][1] for _, r in calls)  # one stream throughout

    def test_seeded_run_is_reproducible(self):
        cfg = TrainConfig(batch_size=32, n_iterations=20, seed=7)
        n1, h1 = train(self._params(), _gmm_source, cfg, DIMS)
        n2, h2 = train(self._params(), _gmm_source, cfg, DIMS)
        assert h1 == h2
        for a, b in zip(n1.weights + n1.biases, n2.weights + n2.biases):
            np.testing.assert_array_equal(a, b)

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg = TrainConfig(batch_size=16, n_iterations=40, seed=9, checkpoint_interval=20)
        full_net, full_hist = train(self._params(), _gmm_source, cfg, DIMS)
        train(self._params(), _gmm_source, cfg, DIMS, checkpoint_dir=tmp_path / "a")
        res_net, res_hist = train(self._params(), _gmm_source, cfg, DIMS,
                                  resume_from=tmp_path / "a" / "ckpt_0000020.bin")
        assert res_hist == full_hist
        for a, b in zip(full_net.weights + full_net.biases,
                        res_net.weights + res_net.biases):
            np.testing.assert_array_equal(a, b)

    def test_resume_checks_layer_dims(self, tmp_path):
        cfg = TrainConfig(batch_size=8, n_iterations=2, seed=0, checkpoint_interval=1)
        train(self._params(), _gmm_source, cfg, DIMS, checkpoint_dir=tmp_path)
        with pytest.raises(ValueError):
            train(self._params(), _gmm_source, cfg, (7, 16, 2),
                  resume_from=tmp_path / "ckpt_0000001.bin")

    def test_non_finite_loss_aborts(self, tmp_path):
        # a finite state can still square to inf in the residual; resume
        # from a wrecked head so the loss itself overflows
        rng = np.random.default_rng(6)
        net = ScoreNet.initialize(DIMS, rng)
        net.weights[-1][:] = 1e200
        save_checkpoint(tmp_path / "bad.bin", net, AdamState(net, 5e-3), 1, rng, [1.0])
        cfg = TrainConfig(batch_size=4, n_iterations=10, seed=1)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingError):
                train(self._params(), _gmm_source, cfg, DIMS,
                      resume_from=tmp_path / "bad.bin")

    def test_logging_cadence(self):
        seen = []
        cfg = TrainConfig(batch_size=8, n_iterations=250, seed=2)
        train(self._params(), _gmm_source, cfg, (7, 8, 2),
              log=lambda it, v: seen.append(it))
        assert seen == [1, 100, 200]

    def test_loss_csv_written(self, tmp_path):
        cfg = TrainConfig(batch_size=8, n_iterations=5, seed=4, checkpoint_interval=5)
        _, history = train(self._params(), _gmm_source, cfg, (7, 8, 2),
                           checkpoint_dir=tmp_path)
        lines = (tmp_path / "loss.csv").read_text().strip().split("\n")
        assert lines[0] == "iteration,loss"
        assert len(lines) == 6
        assert float(lines[1].split(",")[1]) == history[0]
