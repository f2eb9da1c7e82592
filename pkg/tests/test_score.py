import numpy as np
import pytest

from stppwatch.events import Domain, EventStream, TransformedEvent
from stppwatch.score import (AnalyticScoreModel, DegenerateIntensityError,
                             KernelMismatchError, WeightConfig, anomaly,
                             anomaly_stream, ball_process_psi, dsm_loss,
                             hpp_psi_stream, hyvarinen, localized_dts,
                             score_diff_closed_form, weight, weight_grad_diag)
from stppwatch.simulate import HawkesParams, simulate_ball_process

DOM = Domain(t_end=10.0, s_bounds=(0.0, 0.0, 1.0, 1.0))


class TestWeight:
    def test_coordinate_distances(self):
        w = weight(TransformedEvent(0.3, 0.5, 0.5), DOM, WeightConfig("coordinate"))
        np.testing.assert_allclose(w, [0.3, 0.5, 0.5])

    def test_vanishes_on_spatial_boundary(self):
        w = weight(TransformedEvent(0.3, 0.0, 0.5), DOM, WeightConfig("coordinate"))
        assert w[1] == 0.0

    def test_temporal_only(self):
        w = weight(TransformedEvent(0.3, 0.2, 0.8), DOM, WeightConfig("temporal"))
        np.testing.assert_allclose(w, [0.3, 0.0, 0.0])

    def test_scalar_broadcast(self):
        w = weight(TransformedEvent(0.3, 0.1, 0.5), DOM, WeightConfig("scalar"))
        np.testing.assert_allclose(w, [0.1, 0.1, 0.1])

    def test_cap_clips_and_zeroes_gradient(self):
        cfg = WeightConfig("coordinate", cap=0.2)
        xt = TransformedEvent(0.5, 0.5, 0.55)
        np.testing.assert_allclose(weight(xt, DOM, cfg), [0.2, 0.2, 0.2])
        g = weight_grad_diag(xt, DOM, cfg)
        np.testing.assert_allclose(g, [0.0, 0.0, 0.0])

    def test_grad_signs(self):
        g = weight_grad_diag(TransformedEvent(0.5, 0.2, 0.8), DOM,
                             WeightConfig("coordinate"))
        np.testing.assert_allclose(g, [1.0, 1.0, -1.0])


class TestAnalyticScore:
    def test_constant_rate_unclipped(self):
        m = AnalyticScoreModel(HawkesParams(mu=1.0), delta=0.5)
        f = m.score(TransformedEvent(0.7, 0.5, 0.5), [], [], DOM)
        np.testing.assert_allclose(f, [-1.0, 0.0, 0.0], atol=1e-12)

    def test_scales_with_rate_and_ball(self):
        m = AnalyticScoreModel(HawkesParams(mu=50.0), delta=0.1)
        f = m.score(TransformedEvent(0.2, 0.5, 0.5), [], [], DOM)
        assert f[0] == pytest.approx(-50.0 * 0.04)

    def test_clipped_ball_has_spatial_gradient(self):
        m = AnalyticScoreModel(HawkesParams(mu=2.0), delta=0.1)
        f = m.score(TransformedEvent(0.2, 0.05, 0.5), [], [], DOM)
        # ball clipped to 0.15 x 0.2; only the upper x face moves, and the
        # spatial compensator gradient integrates over the elapsed gap
        assert f[0] == pytest.approx(-2.0 * 0.15 * 0.2)
        assert f[1] == pytest.approx(-2.0 * 0.2 * 0.2)
        assert f[2] == pytest.approx(0.0, abs=1e-12)

    def test_zero_branching_collapses_to_constant_rate(self):
        hist_t = np.array([0.1, 0.3])
        hist_s = np.array([[0.5, 0.5], [0.52, 0.5]])
        m0 = AnalyticScoreModel(HawkesParams(mu=3.0, alpha=0.0, beta=2.0), delta=0.1)
        f = m0.score(TransformedEvent(0.2, 0.5, 0.5), hist_t, hist_s, DOM)
        np.testing.assert_allclose(f, [-3.0 * 0.04, 0.0, 0.0], atol=1e-12)

    def test_degenerate_intensity(self):
        m = AnalyticScoreModel(HawkesParams(mu=0.0, alpha=0.5), delta=0.1)
        with pytest.raises(DegenerateIntensityError):
            m.score(TransformedEvent(0.2, 0.5, 0.5), [], [], DOM)


class TestHyvarinen:
    def test_hand_example(self):
        # rate 1, unit ball, temporal weight, dt=1: psi = 1 - 2 = -1
        m = AnalyticScoreModel(HawkesParams(mu=1.0), delta=0.5)
        psi = hyvarinen(m, WeightConfig("temporal"), TransformedEvent(1.0, 0.5, 0.5),
                        [], [], DOM)
        assert psi == pytest.approx(-1.0)

    def test_zero_score_gives_zero(self):
        class Null:
            kind = "null"
            def score(self, xt, ht, hs, dom):
                return np.zeros(3)
        psi = hyvarinen(Null(), WeightConfig("coordinate"),
                        TransformedEvent(0.5, 0.5, 0.5), [], [], DOM)
        assert psi == 0.0

    def test_fd_matches_closed_form_constant_rate(self):
        # generic point: no coordinate ties, so the scalar weight is smooth
        m = AnalyticScoreModel(HawkesParams(mu=2.0), delta=0.2)
        xt = TransformedEvent(0.37, 0.45, 0.6)
        for mode in ("coordinate", "temporal", "scalar"):
            closed = hyvarinen(m, WeightConfig(mode), xt, [], [], DOM, "closed")
            fd = hyvarinen(m, WeightConfig(mode), xt, [], [], DOM, "fd")
            assert fd == pytest.approx(closed, abs=1e-6)

    def test_fd_matches_closed_form_hawkes(self):
        # smooth bandwidth keeps the finite-difference error inside 1e-6;
        # generic locations avoid the weight's measure-zero midline kinks
        p = HawkesParams(mu=1.0, alpha=0.5, beta=1.0, spatial_sigma=0.2)
        m = AnalyticScoreModel(p, delta=0.15)
        rng = np.random.default_rng(3)
        for _ in range(5):
            hist_t = np.sort(rng.uniform(0.0, 1.0, size=3))
            hist_s = rng.uniform(0.35, 0.65, size=(3, 2))
            xt = TransformedEvent(float(rng.uniform(0.05, 0.4)),
                                  float(rng.uniform(0.4, 0.48)),
                                  float(rng.uniform(0.52, 0.6)))
            closed = hyvarinen(m, WeightConfig("coordinate"), xt, hist_t, hist_s,
                               DOM, "closed")
            fd = hyvarinen(m, WeightConfig("coordinate"), xt, hist_t, hist_s,
                           DOM, "fd")
            assert fd == pytest.approx(closed, abs=1e-6)

    def test_one_sided_at_zero_interarrival(self):
        m = AnalyticScoreModel(HawkesParams(mu=2.0), delta=0.2)
        psi = hyvarinen(m, WeightConfig("temporal"), TransformedEvent(0.0, 0.5, 0.5),
                        [], [], DOM, "fd")
        assert np.isfinite(psi)


class TestScoreDiff:
    def setup_method(self):
        self.pre = HawkesParams(mu=1.0, alpha=0.5, beta=1.0, spatial_sigma=0.05)
        self.post = HawkesParams(mu=2.0, alpha=0.5, beta=1.0, spatial_sigma=0.05)

    def test_interior_matches_ball_volume(self):
        d = score_diff_closed_form(self.pre, self.post,
                                   TransformedEvent(0.2, 0.5, 0.5), 0.5, DOM)
        np.testing.assert_allclose(d, [-1.0, 0.0, 0.0])

    def test_spatial_entries_vanish_interior(self):
        d = score_diff_closed_form(self.pre, self.post,
                                   TransformedEvent(0.3, 0.4, 0.6), 0.1, DOM)
        assert d[1] == 0.0 and d[2] == 0.0

    def test_mismatched_kernels_error(self):
        other = HawkesParams(mu=2.0, alpha=0.5, beta=9.0, spatial_sigma=0.05)
        with pytest.raises(KernelMismatchError):
            score_diff_closed_form(self.pre, other,
                                   TransformedEvent(0.2, 0.5, 0.5), 0.1, DOM)

    def test_matches_quadrature_difference(self):
        rng = np.random.default_rng(0)
        m0 = AnalyticScoreModel(self.pre, delta=0.1)
        m1 = AnalyticScoreModel(self.post, delta=0.1)
        for _ in range(10):
            s = rng.uniform(0.15, 0.85, size=2)
            k = int(rng.integers(0, 5))
            hist_t = np.sort(rng.uniform(0.0, 1.0, size=k))
            hist_s = np.clip(s + rng.uniform(-0.1, 0.1, size=(k, 2)), 0.0, 1.0)
            xt = TransformedEvent(float(rng.exponential(0.3)), s[0], s[1])
            fq = m1.score(xt, hist_t, hist_s, DOM) - m0.score(xt, hist_t, hist_s, DOM)
            fc = score_diff_closed_form(self.pre, self.post, xt, 0.1, DOM)
            np.testing.assert_allclose(fq, fc, atol=1e-6)


class TestDsmLoss:
    def test_zero_noise_is_squared_score(self):
        m = AnalyticScoreModel(HawkesParams(mu=1.0), delta=0.5)
        xt = TransformedEvent(0.7, 0.5, 0.5)
        loss = dsm_loss(m, xt, [], [], np.zeros(3), 0.1, DOM)
        assert loss == pytest.approx(1.0)  # score (-1,0,0)

    def test_exact_minimizer_gives_zero(self):
        eps = np.array([0.02, -0.01, 0.03])
        sigma = 0.1

        class Oracle:
            kind = "oracle"
            def score(self, xt, ht, hs, dom):
                return -eps / sigma ** 2
        loss = dsm_loss(Oracle(), TransformedEvent(0.5, 0.5, 0.5), [], [],
                        eps, sigma, DOM)
        assert loss == pytest.approx(0.0, abs=1e-18)

    def test_zero_model_gives_noise_ratio(self):
        class Null:
            kind = "null"
            def score(self, xt, ht, hs, dom):
                return np.zeros(3)
        eps = np.array([0.01, 0.02, -0.01])
        sigma = 0.1
        loss = dsm_loss(Null(), TransformedEvent(0.5, 0.5, 0.5), [], [],
                        eps, sigma, DOM)
        assert loss == pytest.approx(float(np.sum(eps ** 2)) / sigma ** 4)

    def test_clamps_interarrival(self):
        seen = {}

        class Probe:
            kind = "probe"
            def score(self, xt, ht, hs, dom):
                seen["dt"] = xt.dt
                return np.zeros(3)
        dsm_loss(Probe(), TransformedEvent(0.01, 0.5, 0.5), [], [],
                 np.array([-0.5, 0.0, 0.0]), 0.1, DOM)
        assert seen["dt"] == 0.0


class TestAnomaly:
    def test_identical_models_zero(self):
        assert anomaly(-1.5, -1.5) == 0.0

    def test_example(self):
        assert anomaly(-1.0, -3.0) == 2.0


class TestVectorizedPaths:
    def test_hpp_stream_matches_ops(self):
        rng = np.random.default_rng(1)
        t = np.sort(rng.uniform(0.0, 1.0, size=25))
        s = rng.uniform(0.0, 1.0, size=(25, 2))
        stream = EventStream(t=t, s=s)
        p = HawkesParams(mu=30.0)
        m = AnalyticScoreModel(p, delta=0.1)
        for mode, cap in (("coordinate", None), ("temporal", 0.05), ("scalar", None)):
            wcfg = WeightConfig(mode, cap=cap)
            fast = hpp_psi_stream(p, stream, 0.1, wcfg, DOM)
            slow = []
            from stppwatch.events import local_history_indices, transform_event
            for i in range(len(stream)):
                xt = transform_event(stream, i, 0.1)
                idx = local_history_indices(stream, i, 0.1)
                slow.append(hyvarinen(m, wcfg, xt, stream.t[idx], stream.s[idx], DOM))
            np.testing.assert_allclose(fast, slow, atol=1e-9)

    def test_ball_process_matches_ops(self):
        p0 = HawkesParams(mu=50.0, alpha=0.5, beta=1.0, spatial_sigma=0.02)
        times = simulate_ball_process(p0.mu * 0.04, p0.alpha, p0.beta, 30, 5)
        fast = ball_process_psi(p0, times, 0.04)
        m = AnalyticScoreModel(p0, delta=0.1)
        s = np.tile([5.0, 5.0], (len(times), 1))
        stream = EventStream(t=times, s=s)
        big = Domain(t_end=float(times[-1] + 1.0), s_bounds=(0.0, 0.0, 10.0, 10.0))
        slow = []
        from stppwatch.events import transform_event
        for i in range(len(times)):
            xt = transform_event(stream, i, 0.1)
            slow.append(hyvarinen(m, WeightConfig("temporal"), xt,
                                  times[:i], s[:i], big))
        # interior ball retains all but ~1e-6 of the kernel mass
        np.testing.assert_allclose(fast, slow, rtol=2e-4, atol=1e-6)

    def test_anomaly_stream_dispatch_matches_generic(self):
        rng = np.random.default_rng(2)
        t = np.sort(rng.uniform(0.0, 1.0, size=20))
        s = rng.uniform(0.0, 1.0, size=(20, 2))
        stream = EventStream(t=t, s=s)
        p0 = HawkesParams(mu=30.0)
        p1 = HawkesParams(mu=80.0)
        m0 = AnalyticScoreModel(p0, delta=0.1)
        m1 = AnalyticScoreModel(p1, delta=0.1)
        wcfg = WeightConfig("coordinate")
        fast = anomaly_stream(m0, m1, stream, 0.1, wcfg, DOM)
        from stppwatch.events import local_history_indices, transform_event
        slow = []
        for i in range(len(stream)):
            xt = transform_event(stream, i, 0.1)
            idx = local_history_indices(stream, i, 0.1)
            psi0 = hyvarinen(m0, wcfg, xt, stream.t[idx], stream.s[idx], DOM)
            psi1 = hyvarinen(m1, wcfg, xt, stream.t[idx], stream.s[idx], DOM)
            slow.append(psi0 - psi1)
        np.testing.assert_allclose(fast, slow, atol=1e-9)


class TestDriftSigns:
    def test_post_positive_pre_negative(self):
        # short Monte Carlo version of the drift identity
        p0 = HawkesParams(mu=50.0, alpha=0.0, beta=0.1)
        p1 = HawkesParams(mu=100.0, alpha=0.0, beta=0.1)
        B = 0.04

        def mean_delta(sample_mu, n, seed):
            times = simulate_ball_process(sample_mu * B, 0.0, 0.1, n, seed)
            return float(np.mean(ball_process_psi(p0, times, B)
                                 - ball_process_psi(p1, times, B)))

        post = mean_delta(100.0, 4000, 1)
        pre = mean_delta(50.0, 4000, 2)
        assert post > 0 and pre < 0
        assert post == pytest.approx(1.0, rel=0.2)
        assert pre == pytest.approx(-2.0, rel=0.2)


def test_localized_dts_matches_transform():
    rng = np.random.default_rng(4)
    t = np.sort(rng.uniform(0.0, 1.0, size=30))
    s = rng.uniform(0.0, 1.0, size=(30, 2))
    stream = EventStream(t=t, s=s)
    from stppwatch.events import transform_event
    dts = localized_dts(stream, 0.15)
    for i in range(30):
        assert dts[i] == pytest.approx(transform_event(stream, i, 0.15).dt)
