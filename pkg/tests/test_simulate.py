import json

import numpy as np
import pytest

from gspvoice.engine import ChainConfig, init_chain, propose_trial
from gspvoice.errors import GspError, SpanError
from gspvoice.latent import PcaBasis, grid_value, slider_axis
from gspvoice.simulate import (
    ChainSpec,
    ConditionalSamplerAgent,
    Scenario,
    TargetSeekerAgent,
    agent_respond,
    gibbs_validation,
    run_chain,
    run_experiment,
    run_scenario,
)


def identity_basis(k, sigma=None):
    if sigma is None:
        sigma = np.linspace(2.0, 1.0, k)
    return PcaBasis(
        mean=np.zeros(k),
        components=np.eye(k),
        sigma=np.asarray(sigma, dtype=np.float64),
        explained_variance_ratio=np.full(k, 1.0 / k),
    )


def make_trial(basis, k=4, dim=0, seed=3):
    config = ChainConfig(k_dims=k, total_iterations=8, responses_per_iteration=1, rng_seed=seed)
    chain = init_chain(config, "t", "s", basis)
    trial = propose_trial(chain, basis)
    assert trial.dimension == dim
    return chain, trial


class TestTargetSeekerAgent:
    def test_noiseless_hits_nearest_grid_point(self):
        basis = identity_basis(4)
        chain, trial = make_trial(basis)
        target = np.array([1.234, 0.0, 0.0, 0.0])
        agent = TargetSeekerAgent("a", target)
        idx = agent.slider_answer(trial)
        expected = int(np.argmin(np.abs(np.asarray(trial.axis.grid) - 1.234)))
        assert idx == expected

    def test_grid_noise_scales_with_step(self):
        basis = identity_basis(4)
        _, trial = make_trial(basis)
        agent = TargetSeekerAgent(
            "a", np.zeros(4), noise_sigma=2.0, noise_unit="grid",
            rng=np.random.default_rng(0),
        )
        draws = np.array([agent.slider_answer(trial) for _ in range(4000)], dtype=np.float64)
        vals = np.array([grid_value(trial.axis, int(i)) for i in draws])
        # sd of responses should be near 2 grid steps (quantization inflates slightly)
        assert np.std(vals) == pytest.approx(2.0 * trial.axis.step, rel=0.1)

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            TargetSeekerAgent("a", np.zeros(2), noise_sigma=-1.0)

    def test_bad_noise_unit(self):
        with pytest.raises(ValueError):
            TargetSeekerAgent("a", np.zeros(2), noise_unit="furlongs")


class TestConditionalSamplerAgent:
    def test_requires_positive_definite(self):
        with pytest.raises(np.linalg.LinAlgError):
            ConditionalSamplerAgent("a", np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_requires_symmetric(self):
        with pytest.raises(ValueError):
            ConditionalSamplerAgent("a", np.zeros(2), np.array([[1.0, 0.3], [0.0, 1.0]]))

    def test_conditional_moments_match_formula(self):
        # rho=0.8 pair: x0 | x1=v ~ N(0.8 v, 1 - 0.64), checked within 3 SE.
        rho = 0.8
        cov = np.array([[1.0, rho], [rho, 1.0]])
        basis = identity_basis(2, sigma=[1.0, 1.0])
        config = ChainConfig(
            k_dims=2, total_iterations=4, responses_per_iteration=1,
            resolution=311, span_sigma=6.0, rng_seed=11,
        )
        chain = init_chain(config, "t", "s", basis)
        trial = propose_trial(chain, basis)
        frozen = trial.base_point.coords[1]
        agent = ConditionalSamplerAgent("a", np.zeros(2), cov, rng=np.random.default_rng(5))
        n = 6000
        vals = np.array(
            [grid_value(trial.axis, agent.slider_answer(trial)) for _ in range(n)]
        )
        cond_mean = rho * frozen
        cond_sd = np.sqrt(1 - rho**2)
        assert abs(vals.mean() - cond_mean) < 3 * cond_sd / np.sqrt(n) + trial.axis.step
        assert vals.std() == pytest.approx(cond_sd, rel=0.05)

    def test_single_dimension_uses_marginal(self):
        basis = identity_basis(1, sigma=[1.0])
        config = ChainConfig(
            k_dims=1, total_iterations=2, responses_per_iteration=1,
            resolution=311, span_sigma=6.0, rng_seed=2,
        )
        chain = init_chain(config, "t", "s", basis)
        trial = propose_trial(chain, basis)
        agent = ConditionalSamplerAgent(
            "a", np.array([0.5]), np.array([[0.25]]), rng=np.random.default_rng(9)
        )
        vals = np.array(
            [grid_value(trial.axis, agent.slider_answer(trial)) for _ in range(5000)]
        )
        assert vals.mean() == pytest.approx(0.5, abs=0.03)
        assert vals.std() == pytest.approx(0.5, rel=0.05)


class TestRunChain:
    def test_noiseless_chain_converges_to_target(self, toy_basis):
        config = ChainConfig(k_dims=4, total_iterations=8, responses_per_iteration=3, rng_seed=7)
        chain = init_chain(config, "t", "s", toy_basis)
        target = np.array([0.9, -0.6, 0.3, 0.0])
        agents = [TargetSeekerAgent(f"a{i}", target) for i in range(3)]
        run_chain(chain, toy_basis, agents)
        assert chain.status == "complete"
        # after each dimension has been visited, coords sit on the nearest grid value
        for d in range(4):
            axis = slider_axis(toy_basis, d, config.span_sigma, config.resolution)
            nearest = grid_value(axis, int(np.argmin(np.abs(np.asarray(axis.grid) - target[d]))))
            assert chain.point.coords[d] == pytest.approx(nearest, abs=1e-12)

    def test_too_few_agents(self, toy_basis):
        config = ChainConfig(k_dims=4, total_iterations=4, responses_per_iteration=3, rng_seed=1)
        chain = init_chain(config, "t", "s", toy_basis)
        with pytest.raises(GspError):
            run_chain(chain, toy_basis, [TargetSeekerAgent("a", np.zeros(4))])


class TestRunExperiment:
    def specs(self, n=4):
        rng = np.random.default_rng(0)
        return [
            ChainSpec(
                chain_id=f"chain-{i:03d}",
                target_ref=f"face-{i}",
                sentence_id=f"s{i % 2}",
                target=rng.normal(size=4) * 0.5,
                meta={"sex": "male" if i % 2 == 0 else "female"},
            )
            for i in range(n)
        ]

    def config(self):
        return ChainConfig(k_dims=4, total_iterations=8, responses_per_iteration=3, rng_seed=0)

    def test_structure_and_meta(self, toy_basis):
        chains = run_experiment(self.specs(), self.config(), toy_basis, seed=5)
        assert len(chains) == 4
        for chain, spec in zip(chains, self.specs()):
            assert chain.chain_id == spec.chain_id
            assert chain.status == "complete"
            assert len(chain.history) == 8
            assert chain.meta["target_coords"] == pytest.approx(spec.target)
            assert chain.meta["sex"] == spec.meta["sex"]

    def test_deterministic_across_runs(self, toy_basis):
        a = run_experiment(self.specs(), self.config(), toy_basis, seed=5)
        b = run_experiment(self.specs(), self.config(), toy_basis, seed=5)
        for ca, cb in zip(a, b):
            assert ca.to_dict() == cb.to_dict()

    def test_order_independent_per_chain(self, toy_basis):
        # chain results depend only on (seed, chain_id), not roster position
        full = run_experiment(self.specs(), self.config(), toy_basis, seed=5)
        solo = run_experiment(self.specs()[2:3], self.config(), toy_basis, seed=5)
        assert full[2].to_dict() == solo[0].to_dict()

    def test_seed_changes_results(self, toy_basis):
        a = run_experiment(self.specs(1), self.config(), toy_basis, seed=5)
        b = run_experiment(self.specs(1), self.config(), toy_basis, seed=6)
        assert a[0].to_dict() != b[0].to_dict()


class TestGibbsValidation:
    def test_small_diagonal_gaussian(self):
        cov = np.diag([1.0, 0.5])
        report = gibbs_validation(
            np.zeros(2), cov, burn_in=100, n_samples=3000,
            resolution=61, span_sigma=5.0, seed=1,
        )
        assert report.n_samples == 3000
        assert np.all(report.mean_error_sigma < 0.1)
        assert np.all(report.corr_error < 0.08)

    def test_correlated_pair_recovered(self):
        cov = np.array([[1.0, 0.8], [0.8, 1.0]])
        report = gibbs_validation(
            np.zeros(2), cov, burn_in=200, n_samples=3000,
            resolution=61, span_sigma=5.0, seed=2,
        )
        assert report.sample_corr[0, 1] == pytest.approx(0.8, abs=0.05)

    def test_unsorted_variances_allowed(self):
        # engine wants non-increasing sigma; validation must handle any order
        cov = np.diag([0.25, 4.0, 1.0])
        report = gibbs_validation(
            np.zeros(3), cov, burn_in=100, n_samples=1500,
            resolution=61, span_sigma=5.0, seed=3,
        )
        assert np.all(np.abs(report.sample_var - np.diag(cov)) < 0.3 * np.diag(cov))

    def test_span_must_cover_mean(self):
        with pytest.raises(SpanError):
            gibbs_validation(np.array([3.0]), np.array([[1.0]]), span_sigma=4.0)

    def test_dimension_cap(self):
        with pytest.raises(GspError):
            gibbs_validation(np.zeros(11), np.eye(11))


class TestScenario:
    def test_round_trip(self, tmp_path, toy_basis):
        config = ChainConfig(k_dims=4, total_iterations=4, responses_per_iteration=3, rng_seed=9)
        spec = ChainSpec("c0", "face", "s0", np.array([0.1, 0.2, 0.3, 0.4]), {"sex": "male"})
        scenario = Scenario(seed=3, config=config, noise_grid_steps=0.5, specs=(spec,))
        path = tmp_path / "scenario.json"
        scenario.save(path)
        loaded = Scenario.load(path)
        assert loaded.seed == 3
        assert loaded.config == config
        assert loaded.noise_grid_steps == 0.5
        assert loaded.specs[0].chain_id == "c0"
        assert np.array_equal(loaded.specs[0].target, spec.target)

    def test_run_scenario_matches_run_experiment(self, tmp_path, toy_basis):
        config = ChainConfig(k_dims=4, total_iterations=4, responses_per_iteration=3, rng_seed=9)
        spec = ChainSpec("c0", "face", "s0", np.array([0.1, 0.2, 0.3, 0.4]))
        scenario = Scenario(seed=3, config=config, noise_grid_steps=0.5, specs=(spec,))
        via_scenario = run_scenario(scenario, toy_basis)
        direct = run_experiment((spec,), config, toy_basis, seed=3, noise_grid_steps=0.5)
        assert via_scenario[0].to_dict() == direct[0].to_dict()

    def test_unknown_agent_kind(self):
        doc = {
            "seed": 0,
            "config": ChainConfig(k_dims=2, total_iterations=2).to_dict(),
            "agent": {"kind": "markov_troll"},
            "chains": [],
        }
        with pytest.raises(ValueError):
            Scenario.from_dict(doc)

    def test_json_is_plain_data(self, tmp_path):
        config = ChainConfig(k_dims=2, total_iterations=2)
        spec = ChainSpec("c0", "f", "s", np.array([0.0, 1.0]))
        scenario = Scenario(seed=1, config=config, noise_grid_steps=1.0, specs=(spec,))
        path = tmp_path / "sc.json"
        scenario.save(path)
        doc = json.loads(path.read_text())
        assert doc["chains"][0]["target"] == [0.0, 1.0]
