"""Simulated participants and desk-scale experiment runs.

Two agent models: a target seeker with Gaussian response noise (a
participant holding a fixed internal prototype) and an exact conditional
sampler over a multivariate Gaussian, used to verify that the chain
dynamics implement a Gibbs sampler.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .engine import (
    ChainConfig,
    ChainState,
    Trial,
    init_chain,
    propose_trial,
    record_response,
    response_from_index,
)
from .errors import GspError, SpanError
from .latent import LatentPoint, PcaBasis, discretize


@dataclass
class TargetSeekerAgent:
    """Answers every slider with (target coordinate + Gaussian noise).

    noise_sigma is interpreted in axis units by default, or in grid steps
    when noise_unit="grid" (one step = axis.step of the presented slider).
    """

    agent_id: str
    target: np.ndarray
    noise_sigma: float = 0.0
    noise_unit: str = "absolute"
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.noise_unit not in ("absolute", "grid"):
            raise ValueError("noise_unit must be 'absolute' or 'grid'")
        self.target = np.asarray(self.target, dtype=np.float64)

    def slider_answer(self, trial: Trial) -> int:
        d = trial.dimension
        sigma = self.noise_sigma
        if self.noise_unit == "grid":
            sigma *= trial.axis.step
        value = self.target[d] + (self.rng.normal(0.0, sigma) if sigma > 0 else 0.0)
        return discretize(trial.axis, value)


@dataclass
class ConditionalSamplerAgent:
    """Draws from the exact 1-D conditional of a multivariate Gaussian.

    Given the trial's frozen off-axis coordinates x_o, answers with a draw
    from p(x_d | x_o) discretized onto the slider grid.
    """

    agent_id: str
    mean: np.ndarray
    cov: np.ndarray
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(self.cov, self.cov.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        np.linalg.cholesky(self.cov)  # raises if not positive-definite
        self._cond_cache: dict = {}

    def _conditional(self, d: int):
        cached = self._cond_cache.get(d)
        if cached is None:
            k = self.mean.size
            others = [i for i in range(k) if i != d]
            if others:
                s_oo = self.cov[np.ix_(others, others)]
                s_do = self.cov[d, others]
                gain = np.linalg.solve(s_oo, s_do)
                var = float(self.cov[d, d] - s_do @ gain)
            else:
                gain = np.zeros(0)
                var = float(self.cov[d, d])
            cached = (others, gain, max(var, 0.0))
            self._cond_cache[d] = cached
        return cached

    def slider_answer(self, trial: Trial) -> int:
        d = trial.dimension
        others, gain, var = self._conditional(d)
        x = trial.base_point.coords
        cond_mean = self.mean[d]
        if others:
            cond_mean += gain @ (x[others] - self.mean[others])
        value = self.rng.normal(cond_mean, np.sqrt(var))
        return discretize(trial.axis, value)


def agent_respond(agent, trial: Trial, submitted_at: float = 0.0):
    """Materialize an agent's slider answer as an engine Response."""
    return response_from_index(trial, agent.agent_id, agent.slider_answer(trial), submitted_at)


# ---------------------------------------------------------------------------
# Experiment runner

@dataclass(frozen=True)
class ChainSpec:
    chain_id: str
    target_ref: str
    sentence_id: str
    target: np.ndarray  # prototype latent point shared by the chain's agents
    meta: dict = field(default_factory=dict)


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def run_chain(chain: ChainState, basis: PcaBasis, agents, clock_start: float = 0.0) -> ChainState:
    """Drive one chain to completion with a fixed agent roster."""
    quota = chain.config.responses_per_iteration
    if len(agents) < quota:
        raise GspError(f"need at least {quota} agents, got {len(agents)}")
    tick = clock_start
    while chain.is_active:
        trial = propose_trial(chain, basis)
        for agent in agents[:quota]:
            record_response(chain, agent_respond(agent, trial, tick), trial.iteration)
            tick += 1.0
    return chain


def run_experiment(
    specs,
    config: ChainConfig,
    basis: PcaBasis,
    seed: int = 0,
    noise_grid_steps: float = 1.0,
) -> list[ChainState]:
    """Run every chain to completion with per-chain target-seeker rosters.

    Deterministic given (specs, config, seed): per-chain RNG streams are
    derived from the seed and the chain id, so chains may be computed in
    any order (or in parallel) without changing the result.
    """
    chains = []
    for spec in specs:
        mix = np.random.SeedSequence([seed, _stable_int(spec.chain_id)])
        init_seed, *agent_seeds = mix.spawn(1 + config.responses_per_iteration)
        chain_config = ChainConfig(
            **{**config.to_dict(), "rng_seed": int(init_seed.generate_state(1)[0])}
        )
        meta = {
            **spec.meta,
            "target_coords": np.asarray(spec.target, dtype=np.float64).tolist(),
        }
        chain = init_chain(
            chain_config, spec.target_ref, spec.sentence_id, basis, spec.chain_id, meta
        )
        agents = [
            TargetSeekerAgent(
                agent_id=f"{spec.chain_id}/agent-{j}",
                target=spec.target,
                noise_sigma=noise_grid_steps,
                noise_unit="grid",
                rng=np.random.default_rng(s),
            )
            for j, s in enumerate(agent_seeds)
        ]
        chains.append(run_chain(chain, basis, agents))
    return chains


# ---------------------------------------------------------------------------
# Gibbs validation

@dataclass(frozen=True)
class MomentReport:
    sample_mean: np.ndarray
    sample_var: np.ndarray
    sample_corr: np.ndarray
    target_mean: np.ndarray
    target_cov: np.ndarray
    n_samples: int

    @property
    def mean_error_sigma(self) -> np.ndarray:
        """Per-dimension |sample mean - target mean| in target-sigma units."""
        sd = np.sqrt(np.diag(self.target_cov))
        return np.abs(self.sample_mean - self.target_mean) / sd

    @property
    def corr_error(self) -> np.ndarray:
        sd = np.sqrt(np.diag(self.target_cov))
        target_corr = self.target_cov / np.outer(sd, sd)
        return np.abs(self.sample_corr - target_corr)


def gibbs_validation(
    mean,
    cov,
    burn_in: int = 500,
    n_samples: int = 5000,
    resolution: int = 31,
    span_sigma: float = 4.0,
    seed: int = 0,
) -> MomentReport:
    """Run a 1-response-per-iteration chain of exact conditional samplers
    and compare its post-burn-in moments against the target Gaussian.

    The slider grid must cover at least 4 marginal standard deviations
    around the target mean on every dimension.
    """
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    k = mean.size
    if k > 10:
        raise GspError("validation supports at most 10 dimensions")
    marginal_sd = np.sqrt(np.diag(cov))
    if np.any(span_sigma * marginal_sd < np.abs(mean) + 4.0 * marginal_sd - 1e-12):
        raise SpanError("slider span does not cover mean +- 4 sigma on every dimension")

    # The engine requires a basis with non-increasing per-component sigma,
    # so run in a variance-sorted permutation of the dimensions.
    order = np.argsort(-marginal_sd, kind="stable")
    inv_order = np.argsort(order)
    basis = PcaBasis(
        mean=np.zeros(k),
        components=np.eye(k)[order],
        sigma=marginal_sd[order],
        explained_variance_ratio=np.full(k, 1.0 / k),
    )
    perm_mean = mean[order]
    perm_cov = cov[np.ix_(order, order)]

    ss = np.random.SeedSequence([seed, 0x67736276])
    init_seed, agent_seed = ss.spawn(2)
    config = ChainConfig(
        k_dims=k,
        total_iterations=burn_in + n_samples,
        responses_per_iteration=1,
        resolution=resolution,
        span_sigma=span_sigma,
        rng_seed=int(init_seed.generate_state(1)[0]),
    )
    chain = init_chain(config, "gibbs-validation", "s0", basis)
    agent = ConditionalSamplerAgent(
        agent_id="sampler",
        mean=perm_mean,
        cov=perm_cov,
        rng=np.random.default_rng(agent_seed),
    )
    tick = 0.0
    while chain.is_active:
        trial = propose_trial(chain, basis)
        record_response(chain, agent_respond(agent, trial, tick), trial.iteration)
        tick += 1.0

    samples = np.array([rec.point_after.coords for rec in chain.history[burn_in:]])
    samples = samples[:, inv_order]
    centered = samples - samples.mean(axis=0)
    sd = samples.std(axis=0, ddof=1)
    corr = (centered.T @ centered) / (samples.shape[0] - 1) / np.outer(sd, sd)
    return MomentReport(
        sample_mean=samples.mean(axis=0),
        sample_var=samples.var(axis=0, ddof=1),
        sample_corr=corr,
        target_mean=mean,
        target_cov=cov,
        n_samples=samples.shape[0],
    )


# ---------------------------------------------------------------------------
# Scenario files

@dataclass(frozen=True)
class Scenario:
    seed: int
    config: ChainConfig
    noise_grid_steps: float
    specs: tuple

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config.to_dict(),
            "agent": {"kind": "target_seeker", "noise_grid_steps": self.noise_grid_steps},
            "chains": [
                {
                    "chain_id": s.chain_id,
                    "target_ref": s.target_ref,
                    "sentence_id": s.sentence_id,
                    "target": np.asarray(s.target, dtype=np.float64).tolist(),
                    "meta": s.meta,
                }
                for s in self.specs
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        agent = doc.get("agent", {})
        if agent.get("kind", "target_seeker") != "target_seeker":
            raise ValueError(f"unsupported agent kind {agent.get('kind')!r}")
        specs = tuple(
            ChainSpec(
                chain_id=c["chain_id"],
                target_ref=c.get("target_ref", c["chain_id"]),
                sentence_id=c.get("sentence_id", "s0"),
                target=np.array(c["target"], dtype=np.float64),
                meta=c.get("meta", {}),
            )
            for c in doc["chains"]
        )
        return cls(
            seed=int(doc.get("seed", 0)),
            config=ChainConfig.from_dict(doc["config"]),
            noise_grid_steps=float(agent.get("noise_grid_steps", 1.0)),
            specs=specs,
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def run_scenario(scenario: Scenario, basis: PcaBasis) -> list[ChainState]:
    return run_experiment(
        scenario.specs,
        scenario.config,
        basis,
        seed=scenario.seed,
        noise_grid_steps=scenario.noise_grid_steps,
    )
