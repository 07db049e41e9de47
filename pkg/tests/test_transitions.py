import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from roadtrack import (
    NULL_PATH,
    TransitionParams,
    TransitionPrior,
    build_graph,
    sample_params,
    transition_probability,
    update_counts,
)


@pytest.fixture()
def chain_graph():
    return build_graph([(1, [(0, 0), (10, 0)]),
                        (2, [(10, 0), (20, 0)]),
                        (3, [(20, 0), (30, 0)])])


class TestTransitionProbability:
    def test_off_to_off(self, true_params):
        assert transition_probability(0, 0, NULL_PATH, true_params) == 0.05

    def test_on_to_off(self, chain_graph, true_params):
        path = chain_graph.path([1, 2])
        assert transition_probability(1, 0, path, true_params) == 0.05

    def test_single_forward_edge_gets_full_stay_mass(self, chain_graph, true_params):
        path = chain_graph.path([1])
        assert transition_probability(1, 1, path, true_params) == 0.95

    def test_two_forward_edges_split_evenly(self, chain_graph, true_params):
        path = chain_graph.path([1, 2])
        assert transition_probability(1, 1, path, true_params) == pytest.approx(0.475)
        assert transition_probability(1, 2, path, true_params) == pytest.approx(0.475)

    def test_backward_target_gets_zero(self, chain_graph, true_params):
        path = chain_graph.path([1, 2, 3])
        assert transition_probability(2, 1, path, true_params) == 0.0

    def test_unreachable_target_gets_zero(self, chain_graph, true_params):
        path = chain_graph.path([1, 2])
        assert transition_probability(1, 99, path, true_params) == 0.0

    def test_off_to_on_splits_entry_mass(self, chain_graph, true_params):
        path = chain_graph.path([1, 2])
        assert transition_probability(0, 1, path, true_params) == pytest.approx(0.475)
        assert transition_probability(0, 0, path, true_params) == 0.05

    @given(st.integers(1, 3), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
    @settings(max_examples=50, deadline=None)
    def test_normalizes_over_allowed_targets(self, from_edge, pi_off, pi_g):
        graph = build_graph([(1, [(0, 0), (10, 0)]),
                             (2, [(10, 0), (20, 0)]),
                             (3, [(20, 0), (30, 0)])])
        path = graph.path([1, 2, 3])
        params = TransitionParams.from_rates(pi_off=pi_off, pi_g=pi_g)
        targets = [0] + list(path.edge_ids)
        total = sum(transition_probability(from_edge, t, path, params)
                    for t in targets)
        assert total == pytest.approx(1.0, abs=1e-12)
        total_off = sum(transition_probability(0, t, path, params) for t in targets)
        assert total_off == pytest.approx(1.0, abs=1e-12)


class TestUpdateCounts:
    def test_single_count_increment(self, prior):
        out = update_counts(prior, from_is_road=False, to_is_road=False)
        assert (out.alpha_off_off, out.alpha_off_on,
                out.alpha_on_on, out.alpha_on_off) == (16, 20, 70, 100)

    def test_posterior_mean_after_update(self, prior):
        out = update_counts(prior, False, False)
        assert out.mean_pi_g == pytest.approx(16 / 36)

    def test_each_direction_hits_one_cell(self, prior):
        cases = {(False, False): "alpha_off_off", (False, True): "alpha_off_on",
                 (True, True): "alpha_on_on", (True, False): "alpha_on_off"}
        for (src, dst), field in cases.items():
            out = update_counts(prior, src, dst)
            assert getattr(out, field) == getattr(prior, field) + 1
            assert out.total == prior.total + 1

    def test_counts_recover_truth_with_coverage(self):
        # Beta-Binomial coverage oracle: after 100 off-state transitions
        # with true stay probability 0.5, the posterior mean lands within
        # 0.15 of the truth for the vast majority of seeds.
        hits = 0
        n_seeds = 200
        for seed in range(n_seeds):
            rng = np.random.default_rng(seed)
            prior = TransitionPrior(1, 1, 1, 1)
            for _ in range(100):
                stay = rng.random() < 0.5
                prior = update_counts(prior, False, stay is False)
            if abs(prior.mean_pi_g - 0.5) <= 0.15:
                hits += 1
        assert hits / n_seeds >= 0.95

    def test_positive_counts_required(self):
        with pytest.raises(ValueError):
            TransitionPrior(0, 1, 1, 1)


class TestSampleParams:
    def test_uniform_prior_samples_uniformly(self):
        rng = np.random.default_rng(0)
        prior = TransitionPrior(1, 1, 1, 1)
        draws = np.array([sample_params(prior, rng).pi_g for _ in range(10_000)])
        assert stats.kstest(draws, "uniform").pvalue > 0.01

    def test_degenerate_prior_concentrates(self):
        rng = np.random.default_rng(1)
        prior = TransitionPrior(1e6, 1, 1e6, 1)
        for _ in range(100):
            p = sample_params(prior, rng)
            assert p.pi_g > 1 - 1e-4
            assert p.pi_r > 1 - 1e-4

    def test_monte_carlo_mean_matches_beta(self, prior):
        # Analytic Beta moments as the oracle.
        rng = np.random.default_rng(2)
        n = 100_000
        draws = np.array([sample_params(prior, rng).pi_g for _ in range(n)])
        a, b = prior.alpha_off_off, prior.alpha_off_on
        mean = a / (a + b)
        se = np.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)) / n)
        assert abs(draws.mean() - mean) < 3 * se

    def test_samples_satisfy_invariants(self, prior):
        rng = np.random.default_rng(3)
        for _ in range(200):
            p = sample_params(prior, rng)
            assert p.pi_on + p.pi_g == pytest.approx(1.0, abs=1e-12)
            assert p.pi_off + p.pi_r == pytest.approx(1.0, abs=1e-12)
            assert 0.0 <= p.pi_g <= 1.0 and 0.0 <= p.pi_r <= 1.0


class TestParamValidation:
    def test_pairs_must_sum_to_one(self):
        with pytest.raises(ValueError):
            TransitionParams(pi_on=0.4, pi_g=0.5, pi_off=0.05, pi_r=0.95)

    def test_range_check(self):
        with pytest.raises(ValueError):
            TransitionParams(pi_on=1.2, pi_g=-0.2, pi_off=0.05, pi_r=0.95)

    def test_from_rates(self):
        p = TransitionParams.from_rates(pi_off=0.1, pi_g=0.2)
        assert (p.pi_on, p.pi_g, p.pi_off, p.pi_r) == (0.8, 0.2, 0.1, 0.9)
