import math

import numpy as np
import pytest

from roadtrack import (
    NULL_PATH,
    NoiseConfig,
    PathFinder,
    RoadState,
    TransitionParams,
    TransitionPrior,
    build_graph,
    effective_sample_size,
    ground_belief,
    kalman_update,
    multinomial_resample,
    predict_for_paths,
    road_belief,
    run_bs,
    run_pl,
    should_resample,
    substream,
)
from roadtrack.filters import (
    BsParticle,
    DegenerateWeightsError,
    Particle,
    bs_step,
    init_bs_particles,
    pl_step,
    propagate_state,
)
from tests.conftest import straight_chain


def road_particle(graph, eid, d, v, cov, prior, params):
    from roadtrack.motion import EdgeTransform, to_ground
    t = EdgeTransform.for_edge(graph.edges[eid], 0.0)
    road = road_belief([d, v], cov)
    return Particle(edge=eid, road=road, ground=to_ground(road, t),
                    prior=prior, params=params)


class TestEffectiveSampleSize:
    def test_uniform_weights(self):
        assert effective_sample_size(np.full(16, 1 / 16)) == pytest.approx(16.0)

    def test_single_unit_weight(self):
        w = np.zeros(8)
        w[3] = 1.0
        assert effective_sample_size(w) == pytest.approx(1.0)

    def test_two_point_support(self):
        assert effective_sample_size([0.5, 0.5, 0.0, 0.0]) == pytest.approx(2.0)


class TestResampleGate:
    def test_fires_exactly_below_nine_tenths(self):
        # Threshold oracle: bisect the two-level weight family for the
        # vector whose ESS crosses 0.9 N, then probe both sides.
        n = 10

        def ess_of(p):
            w = np.full(n, (1 - p) / (n - 1))
            w[0] = p
            return effective_sample_size(w)

        lo, hi = 1.0 / n, 1.0 - 1e-12
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if ess_of(mid) > 0.9 * n:
                lo = mid
            else:
                hi = mid
        p_star = 0.5 * (lo + hi)

        def weights(p):
            w = np.full(n, (1 - p) / (n - 1))
            w[0] = p
            return w

        assert ess_of(p_star - 1e-9) > 0.9 * n
        assert ess_of(p_star + 1e-9) < 0.9 * n
        assert not should_resample(weights(p_star - 1e-9), n)
        assert should_resample(weights(p_star + 1e-9), n)

    def test_uniform_never_fires(self):
        assert not should_resample(np.full(20, 0.05), 20)

    def test_degenerate_always_fires(self):
        w = np.zeros(20)
        w[0] = 1.0
        assert should_resample(w, 20)


class TestMultinomialResample:
    def test_degenerate_weights_collapse(self):
        w = np.zeros(6)
        w[4] = 1.0
        idx = multinomial_resample(w, 100, np.random.default_rng(0))
        assert set(idx) == {4}

    def test_uniform_frequencies(self):
        # Multinomial confidence-interval oracle at three standard errors.
        k, n = 8, 100_000
        idx = multinomial_resample(np.full(k, 1 / k), n, np.random.default_rng(1))
        freq = np.bincount(idx, minlength=k) / n
        se = math.sqrt((1 / k) * (1 - 1 / k) / n)
        np.testing.assert_allclose(freq, 1 / k, atol=3 * se)

    def test_seed_determinism(self):
        w = np.array([0.2, 0.3, 0.5])
        a = multinomial_resample(w, 1000, np.random.default_rng(7))
        b = multinomial_resample(w, 1000, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)


class TestPropagateState:
    def setup_method(self):
        self.graph = straight_chain(5, 100.0)
        self.noise = NoiseConfig(sigma2_r=1e-30, sigma2_g=1e-30,
                                 sigma2_y=100.0, dt=30.0)

    def _state(self, eid, d, v):
        from roadtrack.motion import EdgeTransform, to_ground
        t = EdgeTransform.for_edge(self.graph.edges[eid], 0.0)
        return eid, RoadState(d, v), np.asarray(to_ground(RoadState(d, v), t))

    def test_deterministic_advance_without_crossing(self):
        stay = TransitionParams.from_rates(pi_off=0.0, pi_g=0.05)
        edge, road, ground, dead = propagate_state(
            *self._state(1, 10.0, 1.0), self.graph, self.noise, stay,
            np.random.default_rng(0))
        assert edge == 1 and not dead
        np.testing.assert_allclose(road.d, 40.0, atol=1e-9)
        np.testing.assert_allclose(road.v, 1.0, atol=1e-12)

    def test_forward_crossing_consumes_length(self):
        stay = TransitionParams.from_rates(pi_off=0.0, pi_g=0.05)
        edge, road, ground, dead = propagate_state(
            *self._state(1, 90.0, 2.0), self.graph, self.noise, stay,
            np.random.default_rng(0))
        assert edge != 1 and not dead
        np.testing.assert_allclose(road.d + self.graph.edges[1].length - 90.0,
                                   60.0, atol=1e-9)

    def test_backward_crossing_flips_to_twin(self):
        # Start at x = 110 moving left; the walk must cross the node at
        # x = 100 through the reverse twin and continue into one of its
        # successors, 60 arc units from the start either way.
        stay = TransitionParams.from_rates(pi_off=0.0, pi_g=0.05)
        start_edge = 3  # chain segment [100, 200], forward direction
        edge, road, ground, dead = propagate_state(
            *self._state(start_edge, 10.0, -2.0), self.graph, self.noise, stay,
            np.random.default_rng(0))
        assert not dead
        assert road.v > 0        # orientation flipped with the edge
        assert 0.0 <= road.d <= self.graph.edges[edge].length
        assert min(abs(ground[0] - 50.0), abs(ground[0] - 150.0)) < 1e-9

    def test_backward_walk_continues_physically(self):
        # Without an intervening node choice (chain interior, one twin
        # flip, remainder inside the twin) the endpoint is deterministic.
        stay = TransitionParams.from_rates(pi_off=0.0, pi_g=0.05)
        edge, road, ground, dead = propagate_state(
            *self._state(3, 50.0, -1.0), self.graph, self.noise, stay,
            np.random.default_rng(0))
        # x = 150 moving -30: stays on segment [100, 200]
        assert not dead
        np.testing.assert_allclose(ground[0], 120.0, atol=1e-9)

    def test_on_to_off_switch(self):
        leave = TransitionParams.from_rates(pi_off=1.0, pi_g=0.05)
        edge, road, ground, dead = propagate_state(
            *self._state(1, 10.0, 1.0), self.graph, self.noise, leave,
            np.random.default_rng(0))
        assert edge == 0 and road is None
        np.testing.assert_allclose(ground[0], 40.0, atol=1e-9)

    def test_off_to_on_entry_projects_and_clamps(self):
        enter = TransitionParams(pi_on=1.0, pi_g=0.0, pi_off=0.05, pi_r=0.95)
        ground = np.array([150.0, 0.0, 7.0, 0.0])
        edge, road, g2, dead = propagate_state(
            0, None, ground, self.graph, self.noise, enter,
            np.random.default_rng(0))
        assert edge != 0
        e = self.graph.edges[edge]
        assert 0.0 <= road.d <= e.length

    def test_preserve_speed_on_entry(self):
        enter = TransitionParams(pi_on=1.0, pi_g=0.0, pi_off=0.05, pi_r=0.95)
        ground = np.array([150.0, 3.0, 7.0, 4.0])
        _, road_plain, _, _ = propagate_state(
            0, None, ground, self.graph, self.noise, enter,
            np.random.default_rng(0))
        _, road_kept, _, _ = propagate_state(
            0, None, ground, self.graph, self.noise, enter,
            np.random.default_rng(0), preserve_speed=True)
        assert abs(road_kept.v) == pytest.approx(5.0)
        assert abs(road_plain.v) == pytest.approx(3.0)

    def test_dead_end_reported(self):
        one_way = build_graph([(1, [(0, 0), (100, 0)])])
        stay = TransitionParams.from_rates(pi_off=0.0, pi_g=0.05)
        edge, road, ground, dead = propagate_state(
            1, RoadState(90.0, 2.0), np.array([90.0, 2.0, 0.0, 0.0]),
            one_way, self.noise, stay, np.random.default_rng(0))
        assert dead
        assert road.d == pytest.approx(100.0)

    def test_seed_replay(self, noise, true_params):
        graph = straight_chain(5, 100.0)
        s0 = self._state(1, 50.0, 1.0)
        a = propagate_state(*s0, graph, noise, true_params, np.random.default_rng(3))
        b = propagate_state(*s0, graph, noise, true_params, np.random.default_rng(3))
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[2], b[2])


class TestPlStep:
    def test_degenerate_mixture_is_plain_kalman(self, prior):
        graph = build_graph([(1, [(0.0, 0.0), (1e14, 0.0)])])
        cfg = NoiseConfig(sigma2_r=6.25e-4, sigma2_g=6.25e-4, sigma2_y=100.0, dt=30.0)
        fixed = TransitionParams.from_rates(pi_off=0.0, pi_g=0.05)
        p = road_particle(graph, 1, 40.0, 1.0, np.diag([100.0, 25.0]), prior, fixed)
        finder = PathFinder(graph)
        y = np.array([75.0, 2.0])
        out, logm = pl_step([p], y, finder, cfg, seed=5, step=1,
                            learn=False, fixed_params=fixed)
        comps = predict_for_paths(1, p.road, [graph.single_edge_path(1), NULL_PATH],
                                  fixed, cfg)
        assert len(comps) == 1
        expect = kalman_update(comps[0], y, cfg)
        np.testing.assert_allclose(out[0].road.mean, expect.road.mean, atol=1e-10)
        np.testing.assert_allclose(out[0].ground.mean, expect.ground.mean, atol=1e-10)
        np.testing.assert_allclose(logm, expect.log_weight, atol=1e-10)

    def test_identical_particles_identical_marginal(self, noise, prior, true_params):
        graph = straight_chain(4, 100.0)
        p = road_particle(graph, 1, 50.0, 1.0, np.diag([25.0, 4.0]), prior, true_params)
        finder = PathFinder(graph)
        y = np.array([80.0, 3.0])
        _, m1 = pl_step([p, p], y, finder, noise, seed=1, step=1,
                        learn=False, fixed_params=true_params)
        _, m2 = pl_step([p, p], y, finder, noise, seed=999, step=1,
                        learn=False, fixed_params=true_params)
        assert m1 == pytest.approx(m2, abs=1e-12)

    def test_particle_count_and_finite_weights(self, noise, prior, true_params):
        graph = straight_chain(4, 100.0)
        ps = [road_particle(graph, 1, 30.0 + k, 1.0, np.diag([25.0, 4.0]),
                            prior, true_params) for k in range(7)]
        finder = PathFinder(graph)
        out, logm = pl_step(ps, np.array([70.0, 1.0]), finder, noise, seed=2, step=1)
        assert len(out) == 7
        assert np.isfinite(logm)
        assert all(np.isfinite(p.log_weight) for p in out)

    def test_counts_grow_one_per_particle_per_step(self, noise, prior, true_params):
        graph = straight_chain(4, 100.0)
        ps = [road_particle(graph, 1, 30.0, 1.0, np.diag([25.0, 4.0]),
                            prior, true_params) for _ in range(5)]
        finder = PathFinder(graph)
        total0 = prior.total
        for step in range(1, 4):
            ps, _ = pl_step(ps, np.array([30.0 + 30.0 * step, 1.0]), finder,
                            noise, seed=3, step=step)
            for p in ps:
                assert p.prior.total == total0 + step

    def test_all_zero_weights_raise(self, noise, prior):
        # Off-road particle that can never stay off (pi_g = 0) and sees no
        # entry candidates: its whole mixture carries zero mass.
        graph = straight_chain(2, 100.0)
        fixed = TransitionParams(pi_on=1.0, pi_g=0.0, pi_off=0.05, pi_r=0.95)
        far = ground_belief([1e7, 0.0, 1e7, 0.0],
                            np.diag([100.0, 1.0, 100.0, 1.0]))
        p = Particle(edge=0, road=None, ground=far, prior=prior, params=fixed)
        finder = PathFinder(graph)
        with pytest.raises(DegenerateWeightsError):
            pl_step([p], np.array([1e7, 1e7]), finder, noise, seed=1, step=1,
                    learn=False, fixed_params=fixed)


class TestBsStep:
    def test_uniform_weights_skip_resampling(self, noise, true_params):
        graph = straight_chain(4, 100.0)
        ps = init_bs_particles(np.array([50.0, 0.0]), 10, noise, seed=4)
        # all particles identical: weights stay uniform
        ps = [BsParticle(edge=0, road=None,
                         ground=np.array([50.0, 1.0, 0.0, 0.0]),
                         log_weight=-math.log(10)) for _ in range(10)]
        stay_off = TransitionParams(pi_on=0.0, pi_g=1.0, pi_off=0.05, pi_r=0.95)
        cfg = NoiseConfig(sigma2_r=1e-30, sigma2_g=1e-30, sigma2_y=100.0, dt=30.0)
        out, logm, resampled = bs_step(ps, np.array([80.0, 0.0]), graph, cfg,
                                       stay_off, seed=5, step=1)
        assert not resampled
        np.testing.assert_allclose(np.exp([p.log_weight for p in out]), 0.1)

    def test_degenerate_weights_trigger_resample(self, noise, true_params):
        graph = straight_chain(4, 100.0)
        cfg = NoiseConfig(sigma2_r=1e-30, sigma2_g=1e-30, sigma2_y=1.0, dt=30.0)
        stay_off = TransitionParams(pi_on=0.0, pi_g=1.0, pi_off=0.05, pi_r=0.95)
        near = BsParticle(0, None, np.array([50.0, 1.0, 0.0, 0.0]), math.log(0.5))
        far = BsParticle(0, None, np.array([5000.0, 1.0, 0.0, 0.0]), math.log(0.5))
        out, _, resampled = bs_step([near, far], np.array([80.0, 0.0]), graph,
                                    cfg, stay_off, seed=6, step=1)
        assert resampled
        assert all(abs(p.ground[0] - 80.0) < 10.0 for p in out)

    def test_all_zero_weights_raise(self):
        # A displacement big enough to overflow the squared residual
        # drives the log likelihood to -inf for every particle.
        graph = straight_chain(2, 100.0)
        cfg = NoiseConfig(sigma2_r=1e-30, sigma2_g=1e-30, sigma2_y=1e-9, dt=30.0)
        stay_off = TransitionParams(pi_on=0.0, pi_g=1.0, pi_off=0.05, pi_r=0.95)
        ps = [BsParticle(0, None, np.zeros(4), 0.0)]
        with pytest.raises(DegenerateWeightsError):
            bs_step(ps, np.array([1e200, 0.0]), graph, cfg, stay_off, seed=7, step=1)


class TestDrivers:
    def test_run_pl_deterministic(self, noise, prior, grid10):
        rng = np.random.default_rng(8)
        obs = np.cumsum(rng.normal(0, 5, size=(30, 2)), axis=0) + 400.0
        a = run_pl(grid10, obs, noise, prior, 8, seed=11)
        b = run_pl(grid10, obs, noise, prior, 8, seed=11)
        for ra, rb in zip(a.steps, b.steps):
            np.testing.assert_array_equal(ra.param_samples, rb.param_samples)
            for pa, pb in zip(ra.particles, rb.particles):
                assert pa.edge == pb.edge
                np.testing.assert_array_equal(pa.ground.mean, pb.ground.mean)

    def test_run_bs_deterministic(self, noise, true_params, grid10):
        rng = np.random.default_rng(9)
        obs = np.cumsum(rng.normal(0, 5, size=(30, 2)), axis=0) + 400.0
        a = run_bs(grid10, obs, noise, true_params, 20, seed=12)
        b = run_bs(grid10, obs, noise, true_params, 20, seed=12)
        for ra, rb in zip(a.steps, b.steps):
            np.testing.assert_array_equal(ra.log_weights, rb.log_weights)
            for pa, pb in zip(ra.particles, rb.particles):
                np.testing.assert_array_equal(pa.ground, pb.ground)

    def test_substream_independence_of_order(self):
        a = substream(3, 5, 7).normal(size=4)
        b = substream(3, 5, 8).normal(size=4)
        a2 = substream(3, 5, 7).normal(size=4)
        assert not np.allclose(a, b)
        np.testing.assert_array_equal(a, a2)


class TestChainTracksExactFilter:
    def test_pl_position_matches_kalman_within_mc_error(self, prior):
        # Exact-filter oracle on degenerate topology: a collinear chain
        # makes the conditional model a single 1-d Kalman filter no
        # matter which edges get sampled.
        cfg = NoiseConfig(sigma2_r=6.25e-4, sigma2_g=6.25e-4, sigma2_y=100.0, dt=30.0)
        fixed = TransitionParams.from_rates(pi_off=0.0, pi_g=0.05)
        n_edges, length = 40, 1000.0
        graph = straight_chain(n_edges, length)
        x0 = n_edges * length / 2.0
        eid0 = graph.nearest_edge((x0 + 1.0, 0.0))
        d0 = x0 - graph.edges[eid0].start.x

        G = np.array([[1.0, 30.0], [0.0, 1.0]])
        Wn = cfg.sigma2_r * np.outer([450.0, 30.0], [450.0, 30.0])
        deviations = []
        for seed in range(30):
            rng = np.random.default_rng(1000 + seed)
            truth = np.array([x0, 0.0])
            n_steps = 100
            ys = np.empty((n_steps, 2))
            for i in range(n_steps):
                truth = G @ truth + np.array([450.0, 30.0]) * rng.normal(
                    0, math.sqrt(cfg.sigma2_r))
                ys[i] = [truth[0] + rng.normal(0, 10.0), rng.normal(0, 10.0)]

            particles = [road_particle(graph, eid0, d0, 0.0,
                                       np.diag([100.0, 25.0]), prior, fixed)
                         for _ in range(10)]
            finder = PathFinder(graph)
            km = np.array([x0, 0.0])
            kc = np.diag([100.0, 25.0])
            diffs = []
            for step, y in enumerate(ys, start=1):
                particles, _ = pl_step(particles, y, finder, cfg, seed=seed,
                                       step=step, learn=False, fixed_params=fixed)
                km = G @ km
                kc = G @ kc @ G.T + Wn
                gain = kc[:, 0] / (kc[0, 0] + cfg.sigma2_y)
                km = km + gain * (y[0] - km[0])
                kc = kc - np.outer(gain, gain) * (kc[0, 0] + cfg.sigma2_y)
                est = np.mean([p.ground.mean[0] for p in particles])
                diffs.append(est - km[0])
            deviations.append(np.mean(diffs))
        deviations = np.asarray(deviations)
        se = deviations.std(ddof=1) / math.sqrt(len(deviations))
        assert abs(deviations.mean()) <= 3 * se
