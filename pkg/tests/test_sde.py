import numpy as np
import pytest

from _oracles import forward_chain_covariance, reverse_chain_covariance
from told.data import default_gmm, sample_gmm
from told.dynamics import DynamicsParams, PhaseState, Scheme, drift_matrix, mean
from told.sde import EMConfig, SimulationError, Trajectory, _forward_step, forward_simulate, reverse_sample


def _zero_score(state, t):
    return np.zeros_like(state.q)


class TestEMConfig:
    def test_accepts_valid(self):
        cfg = EMConfig(n_steps=10, horizon=2.0)
        assert cfg.noise_scale == 1.0

    @pytest.mark.parametrize("kw", [
        {"n_steps": 0, "horizon": 1.0},
        {"n_steps": -5, "horizon": 1.0},
        {"n_steps": 10, "horizon": 0.0},
        {"n_steps": 10, "horizon": np.inf},
        {"n_steps": 10, "horizon": 1.0, "noise_scale": -0.1},
        {"n_steps": 10, "horizon": 1.0, "noise_scale": 1.5},
    ])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            EMConfig(**kw)


class TestForwardStep:
    def test_noise_enters_only_acceleration(self):
        p = DynamicsParams.create(Scheme.TOLD)
        rng = np.random.default_rng(0)
        q, pp, s = (rng.standard_normal((16, 2)) for _ in range(3))
        za = rng.standard_normal((16, 2))
        zb = rng.standard_normal((16, 2))
        qa, pa, sa = _forward_step(p, q, pp, s, 0.01, za, 1.0)
        qb, pb, sb = _forward_step(p, q, pp, s, 0.01, zb, 1.0)
        np.testing.assert_array_equal(qa, qb)
        np.testing.assert_array_equal(pa, pb)
        g = np.sqrt(2.0 * p.xi / p.lipschitz)
        np.testing.assert_allclose(sa - sb, g * np.sqrt(0.01) * (za - zb), atol=1e-15)

    def test_drift_matches_linear_system(self):
        p = DynamicsParams.create(Scheme.TOLDPP)
        F = drift_matrix(p)
        x = np.array([0.7, -0.2, 1.1])
        dt = 1e-3
        qn, pn, sn = _forward_step(p, x[:1], x[1:2], x[2:3], dt, np.zeros(1), 0.0)
        ref = x + dt * (F @ x)
        np.testing.assert_allclose([qn[0], pn[0], sn[0]], ref, atol=1e-15)


class TestForwardSimulate:
    def test_frame_grid(self):
        p = DynamicsParams.create(Scheme.TOLD)
        traj = forward_simulate(p, np.zeros((4, 2)), EMConfig(25, 1.0), np.random.default_rng(0))
        assert isinstance(traj, Trajectory)
        assert len(traj.frames) == 26
        np.testing.assert_allclose(traj.times(), np.linspace(0, 1, 26), atol=1e-15)
        assert all(np.diff(traj.times()) > 0)

    def test_one_dim_input_promoted(self):
        p = DynamicsParams.create(Scheme.TOLD)
        traj = forward_simulate(p, np.zeros(7), EMConfig(3, 1.0), np.random.default_rng(0))
        assert traj.frames[0][1].q.shape == (7, 1)

    def test_draw_order(self):
        # p0 block, s0 block, then one zeta block per step
        p = DynamicsParams.create(Scheme.TOLDPP, alpha=0.4, lipschitz=2.0)
        q0 = np.full((6, 3), 0.5)
        traj = forward_simulate(p, q0, EMConfig(2, 0.5), np.random.default_rng(9))

        rng = np.random.default_rng(9)
        sd0 = np.sqrt(p.alpha / p.lipschitz)
        p0 = sd0 * rng.standard_normal((6, 3))
        s0 = sd0 * rng.standard_normal((6, 3))
        np.testing.assert_array_equal(traj.frames[0][1].p, p0)
        np.testing.assert_array_equal(traj.frames[0][1].s, s0)
        q1, p1, s1 = _forward_step(p, q0, p0, s0, 0.25, rng.standard_normal((6, 3)), 1.0)
        np.testing.assert_array_equal(traj.frames[1][1].q, q1)
        np.testing.assert_array_equal(traj.frames[1][1].s, s1)

    def test_initial_moment_scale(self):
        p = DynamicsParams.create(Scheme.TOLD, alpha=0.1, lipschitz=4.0)
        traj = forward_simulate(p, np.zeros((200_000, 1)), EMConfig(1, 1.0),
                                np.random.default_rng(3))
        st = traj.frames[0][1]
        target = p.alpha / p.lipschitz
        se = target * np.sqrt(2.0 / 200_000)
        assert abs(st.p.var() - target) < 4 * se
        assert abs(st.s.var() - target) < 4 * se

    def test_seeded_determinism(self):
        p = DynamicsParams.create(Scheme.TOLD)
        cfg = EMConfig(20, 1.0)
        a = forward_simulate(p, np.ones((5, 2)), cfg, np.random.default_rng(4))
        b = forward_simulate(p, np.ones((5, 2)), cfg, np.random.default_rng(4))
        for (ta, sa), (tb, sb) in zip(a.frames, b.frames):
            assert ta == tb
            np.testing.assert_array_equal(sa.stack(), sb.stack())

    def test_deterministic_mode_first_order_in_mean(self):
        # with the diffusion off the integrator is plain Euler on the
        # linear ODE: terminal error must halve when the step halves
        p = DynamicsParams.create(Scheme.TOLDPP, lipschitz=1.0)
        q0 = np.random.default_rng(7).standard_normal((64, 1))
        errs = []
        for n_steps in (500, 1000, 2000):
            rng = np.random.default_rng(42)
            traj = forward_simulate(p, q0, EMConfig(n_steps, 1.0, noise_scale=0.0), rng)
            rec = np.random.default_rng(42)
            sd0 = np.sqrt(p.alpha / p.lipschitz)
            x0 = PhaseState(q=q0, p=sd0 * rec.standard_normal((64, 1)),
                            s=sd0 * rec.standard_normal((64, 1)))
            exact = mean(p, x0, 1.0)
            got = traj.frames[-1][1]
            errs.append(np.abs(got.q - exact.q).max())
        assert 1.8 < errs[0] / errs[1] < 2.2
        assert 1.8 < errs[1] / errs[2] < 2.2

    def test_terminal_moments_relax_to_equilibrium(self):
        # long-horizon run from heavy-tailed data; the exact covariance of
        # the discrete chain separates Euler bias from Monte-Carlo noise
        p = DynamicsParams.create(Scheme.TOLD, lipschitz=1.0, alpha=0.1, horizon=8.0)
        n, n_steps = 100_000, 2000
        rng = np.random.default_rng(15)
        q = sample_gmm(default_gmm(), n, rng).reshape(n, 1)
        sd0 = np.sqrt(p.alpha / p.lipschitz)
        pp = sd0 * rng.standard_normal((n, 1))
        s = sd0 * rng.standard_normal((n, 1))
        dt = p.horizon / n_steps
        for _ in range(n_steps):
            q, pp, s = _forward_step(p, q, pp, s, dt, rng.standard_normal((n, 1)), 1.0)

        spec = default_gmm()
        C0 = np.diag([spec.variance(), p.alpha / p.lipschitz, p.alpha / p.lipschitz])
        chain = forward_chain_covariance(
            drift_matrix(p), np.sqrt(2.0 * p.xi / p.lipschitz), C0, n_steps, p.horizon)
        emp = np.cov(np.hstack([q, pp, s]).T)
        se = np.sqrt((np.outer(np.diag(chain), np.diag(chain)) + chain ** 2) / n)
        assert (np.abs(emp - chain) / se).max() < 4.0
        # and the chain itself sits near the continuous equilibrium
        assert abs(chain[0, 0] - 1.0 / p.lipschitz) < 0.03 / p.lipschitz

    def test_blowup_raises(self):
        # dt = 5 puts every discrete eigenvalue far outside the unit
        # circle, so the state overflows to non-finite mid-run
        p = DynamicsParams.create(Scheme.TOLD, horizon=2000.0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(SimulationError) as exc:
                forward_simulate(p, np.ones((3, 1)), EMConfig(400, 2000.0),
                                 np.random.default_rng(0))
        assert exc.value.step_index >= 1
        assert "forward" in str(exc.value)


class TestTrajectoryHistograms:
    def test_shapes_and_counts(self):
        p = DynamicsParams.create(Scheme.TOLD)
        traj = forward_simulate(p, np.random.default_rng(1).standard_normal((500, 2)),
                                EMConfig(8, 1.0), np.random.default_rng(2))
        times, edges, counts = traj.q_histograms(bins=30)
        assert counts.shape == (9, 30)
        assert edges.shape == (31,)
        assert abs(edges[0]) == edges[-1]
        np.testing.assert_array_equal(counts.sum(axis=1), np.full(9, 1000))
        np.testing.assert_array_equal(times, traj.times())

    def test_explicit_limit(self):
        p = DynamicsParams.create(Scheme.TOLD)
        traj = forward_simulate(p, np.zeros((50, 1)), EMConfig(2, 1.0),
                                np.random.default_rng(0))
        _, edges, counts = traj.q_histograms(bins=10, lim=0.001)
        assert edges[0] == -0.001 and edges[-1] == 0.001
        # samples outside the window fall off the histogram
        assert counts[-1].sum() <= 50


class TestReverseSample:
    def test_output_shape_and_determinism(self):
        p = DynamicsParams.create(Scheme.TOLDPP)
        cfg = EMConfig(20, 1.0)
        a = reverse_sample(p, _zero_score, cfg, np.random.default_rng(8), 64, dim=3)
        b = reverse_sample(p, _zero_score, cfg, np.random.default_rng(8), 64, dim=3)
        assert a.shape == (64, 3)
        np.testing.assert_array_equal(a, b)

    def test_initialization_and_score_schedule(self):
        # the score sees the freshly drawn equilibrium state at t = horizon
        # first, then the time grid descends to horizon/n_steps
        p = DynamicsParams.create(Scheme.TOLD, lipschitz=4.0)
        seen = []

        def spy(state, t):
            seen.append((t, state.q.copy()))
            return np.zeros_like(state.q)

        reverse_sample(p, spy, EMConfig(4, 1.0), np.random.default_rng(31), 10, dim=2)
        ts = [t for t, _ in seen]
        np.testing.assert_allclose(ts, [1.0, 0.75, 0.5, 0.25], atol=1e-15)
        rec = np.random.default_rng(31)
        q0 = np.sqrt(1.0 / p.lipschitz) * rec.standard_normal((10, 2))
        np.testing.assert_array_equal(seen[0][1], q0)

    def test_score_shape_validated(self):
        p = DynamicsParams.create(Scheme.TOLD)

        def bad(state, t):
            return np.zeros((1, 1))

        with pytest.raises(ValueError):
            reverse_sample(p, bad, EMConfig(5, 1.0), np.random.default_rng(0), 8)

    @pytest.mark.parametrize("scheme,qq_expected", [
        (Scheme.TOLD, None), (Scheme.TOLDPP, None),
    ])
    def test_score_free_chain_covariance(self, scheme, qq_expected):
        # without a score the reverse drift is +F's mirror and the chain
        # is linear-Gaussian; its exact covariance recursion is the oracle
        p = DynamicsParams.create(scheme, lipschitz=4.0)
        n = 20_000
        q = reverse_sample(p, _zero_score, EMConfig(200, 1.0),
                           np.random.default_rng(11), n, dim=1)
        chain = reverse_chain_covariance(p.gamma, p.xi, p.lipschitz, 200, 1.0)
        v = q.var(ddof=1)
        se = chain[0, 0] * np.sqrt(2.0 / (n - 1))
        assert abs(v - chain[0, 0]) < 4 * se

    def test_blowup_raises(self):
        p = DynamicsParams.create(Scheme.TOLD, horizon=1000.0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(SimulationError) as exc:
                reverse_sample(p, _zero_score, EMConfig(500, 1000.0),
                               np.random.default_rng(0), 4)
        assert "reverse" in str(exc.value)

    def test_noise_free_mode_is_deterministic_map(self):
        # same start, zeta stream ignored at noise_scale 0
        p = DynamicsParams.create(Scheme.TOLDPP)

        def affine_score(state, t):
            return -state.s

        a = reverse_sample(p, affine_score, EMConfig(50, 1.0, noise_scale=0.0),
                           np.random.default_rng(5), 16)
        b = reverse_sample(p, affine_score, EMConfig(50, 1.0, noise_scale=0.0),
                           np.random.default_rng(5), 16)
        np.testing.assert_array_equal(a, b)
