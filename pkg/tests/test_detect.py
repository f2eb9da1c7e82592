import json

import numpy as np
import pytest

from stppwatch.detect import (DetectionResult, ScoredEvent, istep, ostep,
                              run_detector, run_online_detector, statistic)
from stppwatch.events import Domain, EventStream
from stppwatch.nets import DSMConfig, train_score_model
from stppwatch.regions import RegionUnion, region_area
from stppwatch.score import AnalyticScoreModel, WeightConfig
from stppwatch.simulate import ChangeScenario, HawkesParams, simulate

from conftest import make_benchmark_scenario

DOM = Domain(t_end=1.0)


def scored(rows):
    return [ScoredEvent(t, s1, s2, d) for t, s1, s2, d in rows]


def random_scored(rng, n):
    t = np.sort(rng.uniform(0.0, 1.0, size=n))
    s = rng.uniform(0.0, 1.0, size=(n, 2))
    d = rng.normal(0.0, 1.0, size=n)
    return [ScoredEvent(float(t[i]), float(s[i, 0]), float(s[i, 1]), float(d[i]))
            for i in range(n)]


def brute_force_value(events, delta=None):
    """Exhaustive maximum over suffix windows and all location subsets."""
    n = len(events)
    d = np.array([e.delta_value for e in events])
    masks = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1  # subset table
    best = 0.0
    for i in range(n + 1):
        v = d.copy()
        v[:i] = 0.0
        best = max(best, float(np.max(masks @ v)))
    return best


class TestIStep:
    def test_four_event_configuration(self):
        # two positive scores spawn boxes; two negative locations are excluded
        ev = scored([(0.1, 0.30, 0.30, 1.0), (0.2, 0.70, 0.70, 0.5),
                     (0.3, 0.31, 0.31, -0.4), (0.4, 0.50, 0.50, -0.9)])
        region = istep(ev, 0.0, 0.05, DOM)
        assert len(region.boxes) == 2
        np.testing.assert_allclose(region.excluded,
                                   [[0.31, 0.31], [0.50, 0.50]])
        member = region.contains_points(
            [[0.30, 0.30], [0.70, 0.70], [0.31, 0.31], [0.50, 0.50]])
        assert member.tolist() == [True, True, False, False]

    def test_all_negative_gives_empty_region(self):
        ev = scored([(0.1, 0.3, 0.3, -1.0), (0.2, 0.7, 0.7, -0.5)])
        assert istep(ev, 0.0, 0.1, DOM).is_empty

    def test_window_restriction(self):
        ev = scored([(0.1, 0.3, 0.3, 1.0), (0.6, 0.7, 0.7, 1.0)])
        region = istep(ev, 0.5, 0.1, DOM)
        assert len(region.boxes) == 1
        assert region.contains_points([[0.7, 0.7]])[0]
        assert not region.contains_points([[0.3, 0.3]])[0]

    def test_window_value_is_regionwise_maximum(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            ev = random_scored(rng, 8)
            region = istep(ev, 0.0, 0.07, DOM)
            got = statistic(ev, 0.0, region)
            want = sum(max(e.delta_value, 0.0) for e in ev)
            assert got == pytest.approx(want, abs=1e-12)

    def test_sandwich_membership(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            ev = random_scored(rng, 10)
            region = istep(ev, 0.0, 0.05, DOM)
            pts = np.array([[e.s1, e.s2] for e in ev])
            member = region.contains_points(pts)
            for e, m in zip(ev, member):
                if e.delta_value > 0:
                    assert m
                if e.delta_value < 0:
                    assert not m


class TestOStep:
    def test_all_positive_picks_earliest(self):
        ev = scored([(0.1, 0.3, 0.3, 1.0), (0.5, 0.7, 0.7, 0.5)])
        region = RegionUnion(boxes=[[0, 0, 1, 1]])
        assert ostep(ev, region, 0.5) == pytest.approx(0.1)

    def test_all_negative_returns_now(self):
        ev = scored([(0.1, 0.3, 0.3, -1.0), (0.5, 0.7, 0.7, -0.5)])
        region = RegionUnion(boxes=[[0, 0, 1, 1]])
        assert ostep(ev, region, 0.9) == pytest.approx(0.9)

    def test_respects_region_and_exclusions(self):
        region = RegionUnion(boxes=[[0.0, 0.0, 0.5, 1.0]], excluded=[[0.25, 0.5]])
        ev = scored([(0.1, 0.25, 0.5, 5.0),   # excluded point
                     (0.2, 0.30, 0.5, 1.0),   # inside
                     (0.3, 0.80, 0.5, 9.0)])  # outside box
        assert ostep(ev, region, 0.5) == pytest.approx(0.2)

    def test_matches_dense_grid_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            ev = random_scored(rng, 12)
            region = istep(ev, 0.0, 0.08, DOM)
            t_now = 1.0
            tau = ostep(ev, region, t_now)
            val = statistic(ev, tau, region)
            pts = np.array([[e.s1, e.s2] for e in ev])
            member = region.contains_points(pts)
            d = np.array([e.delta_value for e in ev]) * member
            t = np.array([e.t for e in ev])
            grid_vals = [d[t >= g].sum() for g in np.linspace(0.0, 1.0, 10_000)]
            assert val == pytest.approx(max(max(grid_vals), 0.0), abs=1e-9)


class TestStatistic:
    def test_empty_region(self):
        ev = scored([(0.1, 0.3, 0.3, 2.5)])
        assert statistic(ev, 0.0, RegionUnion.empty()) == 0.0

    def test_single_qualifying_event(self):
        ev = scored([(0.1, 0.3, 0.3, 2.5)])
        region = RegionUnion(boxes=[[0.2, 0.2, 0.4, 0.4]])
        assert statistic(ev, 0.0, region) == 2.5


class TestAlternation:
    def test_reaches_brute_force_supremum(self):
        rng = np.random.default_rng(3)
        for trial in range(120):
            n = int(rng.integers(2, 13))
            ev = random_scored(rng, n)
            stream = EventStream(t=np.array([e.t for e in ev]),
                                 s=np.array([[e.s1, e.s2] for e in ev]))
            dvals = np.array([e.delta_value for e in ev])
            res = run_detector(stream, None, None, np.inf, 5, 0.06,
                               WeightConfig("temporal"), DOM, delta_values=dvals)
            assert res.trajectory_w[-1] == pytest.approx(brute_force_value(ev),
                                                         abs=1e-10)

    def test_monotone_objective_across_alternations(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            ev = random_scored(rng, 12)
            t_now = 1.0
            tau = 0.0
            prev = -np.inf
            for k in range(5):
                region = istep(ev, tau, 0.05, DOM)
                val_region = statistic(ev, tau, region)
                assert val_region >= prev - 1e-12
                tau = ostep(ev, region, t_now)
                val_tau = statistic(ev, tau, region)
                assert val_tau >= val_region - 1e-12
                prev = val_tau

    def test_statistic_nonnegative_along_trajectory(self):
        scen = make_benchmark_scenario()
        stream = simulate(scen, 5)
        m0 = AnalyticScoreModel(scen.pre, 0.1)
        m1 = AnalyticScoreModel(scen.post, 0.1)
        res = run_detector(stream, m0, m1, np.inf, 5, 0.1,
                           WeightConfig("coordinate"), scen.domain)
        assert np.all(res.trajectory_w >= 0.0)


class TestRunDetector:
    def _models(self, scen, delta=0.1):
        return (AnalyticScoreModel(scen.pre, delta),
                AnalyticScoreModel(scen.post, delta))

    def test_zero_threshold_stops_immediately(self):
        scen = make_benchmark_scenario()
        stream = simulate(scen, 1)
        m0, m1 = self._models(scen)
        res = run_detector(stream, m0, m1, 0.0, 5, 0.1,
                           WeightConfig("coordinate"), scen.domain)
        assert res.stopped and res.nu == pytest.approx(float(stream.t[0]))

    def test_horizon_exhausted_with_infinite_threshold(self):
        scen = make_benchmark_scenario()
        stream = simulate(scen, 1)
        m0, m1 = self._models(scen)
        res = run_detector(stream, m0, m1, np.inf, 5, 0.1,
                           WeightConfig("coordinate"), scen.domain)
        assert not res.stopped and res.nu is None
        assert len(res.trajectory_w) == len(stream)

    def test_detects_after_change_and_nu_bounds_tau_hat(self):
        scen = make_benchmark_scenario()
        m0, m1 = self._models(scen)
        stream = simulate(scen, 2)
        res = run_detector(stream, m0, m1, 725.0, 5, 0.1,
                          WeightConfig("coordinate"), scen.domain)
        assert res.stopped
        assert res.nu >= res.tau_hat

    def test_deterministic(self):
        scen = make_benchmark_scenario()
        m0, m1 = self._models(scen)
        stream = simulate(scen, 3)
        r1 = run_detector(stream, m0, m1, 500.0, 5, 0.1,
                          WeightConfig("coordinate"), scen.domain)
        r2 = run_detector(stream, m0, m1, 500.0, 5, 0.1,
                          WeightConfig("coordinate"), scen.domain)
        assert r1.to_json() == r2.to_json()

    def test_empty_stream(self):
        res = run_detector(EventStream.empty(), None, None, 1.0, 5, 0.1,
                           WeightConfig("temporal"), DOM, delta_values=[])
        assert not res.stopped and res.omega_hat.is_empty

    def test_json_round_trip(self):
        scen = make_benchmark_scenario()
        m0, m1 = self._models(scen)
        stream = simulate(scen, 4)
        res = run_detector(stream, m0, m1, 725.0, 5, 0.1,
                          WeightConfig("coordinate"), scen.domain)
        res2 = DetectionResult.from_dict(json.loads(res.to_json()))
        assert res2.nu == res.nu and res2.tau_hat == res.tau_hat
        np.testing.assert_allclose(res2.trajectory_w, res.trajectory_w)

    def test_warm_start_changes_nothing_for_fresh_state(self):
        # restarting from the previous window reaches the same fixed point
        scen = make_benchmark_scenario()
        m0, m1 = self._models(scen)
        stream = simulate(scen, 6)
        cold = run_detector(stream, m0, m1, np.inf, 5, 0.1,
                            WeightConfig("coordinate"), scen.domain)
        warm = run_detector(stream, m0, m1, np.inf, 5, 0.1,
                            WeightConfig("coordinate"), scen.domain,
                            warm_start=True)
        np.testing.assert_allclose(cold.trajectory_w, warm.trajectory_w)


def _small_online_setup(seed=0):
    domain = Domain(t_end=8.0)
    pre = HawkesParams(mu=30.0, alpha=0.0, beta=0.1)
    ref = simulate(ChangeScenario.no_change(pre, domain), seed)
    cfg = DSMConfig(sigma=0.05, epochs=15, batch_size=64, learning_rate=2e-3, seed=1)
    model0, _ = train_score_model(ref, 0.15, cfg)
    return domain, pre, model0


class TestOnline:
    def test_zero_eta_matches_frozen_copy(self):
        domain, pre, model0 = _small_online_setup()
        scen = ChangeScenario.no_change(pre, Domain(t_end=1.5))
        stream = simulate(scen, 9)
        res = run_online_detector(stream, model0, np.inf, 3, 0.15,
                                  WeightConfig("temporal"), scen.domain,
                                  eta=0.0)
        np.testing.assert_allclose(res.trajectory_w, 0.0, atol=1e-12)
        frozen = run_detector(stream, model0, model0, np.inf, 3, 0.15,
                              WeightConfig("temporal"), scen.domain)
        np.testing.assert_allclose(res.trajectory_w, frozen.trajectory_w,
                                   atol=1e-12)

    @pytest.mark.parametrize("seed", [11, 12, 13])
    def test_online_adapts_and_detects(self, seed):
        domain, pre, model0 = _small_online_setup()
        scen = ChangeScenario(pre=pre, post=HawkesParams(mu=300.0, alpha=0.0, beta=0.1),
                              tau=0.6, omega=RegionUnion(boxes=[[0.25, 0.25, 0.75, 0.75]]),
                              domain=Domain(t_end=1.5))
        stream = simulate(scen, seed)
        res = run_online_detector(stream, model0, np.inf, 3, 0.15,
                                  WeightConfig("temporal"), scen.domain,
                                  eta=1e-3, steps_per_event=1, sigma=0.05, seed=3)
        post = res.trajectory_t >= scen.tau
        # adaptation drives the statistic well above its pre-change wander
        assert res.trajectory_w[post].max() > 2.5 * max(res.trajectory_w[~post].max(), 1e-9)

    def test_online_requires_neural_model(self):
        scen = make_benchmark_scenario()
        m0 = AnalyticScoreModel(scen.pre, 0.1)
        with pytest.raises(ValueError):
            run_online_detector(EventStream.empty(), m0, 1.0, 1, 0.1,
                                WeightConfig("temporal"), scen.domain, eta=0.1)

    def test_online_deterministic(self):
        domain, pre, model0 = _small_online_setup()
        scen = ChangeScenario.no_change(pre, Domain(t_end=1.0))
        stream = simulate(scen, 13)
        kw = dict(eta=1e-3, steps_per_event=2, sigma=0.05, seed=21)
        r1 = run_online_detector(stream, model0.copy(), np.inf, 2, 0.15,
                                 WeightConfig("temporal"), scen.domain, **kw)
        r2 = run_online_detector(stream, model0.copy(), np.inf, 2, 0.15,
                                 WeightConfig("temporal"), scen.domain, **kw)
        np.testing.assert_array_equal(r1.trajectory_w, r2.trajectory_w)
