"""Chain state machine: dimension cycling, response collection, advancement.

Each chain walks the latent control space one slider dimension per
iteration; an iteration seals once the configured number of participant
responses arrives, and the arithmetic mean of their slider values becomes
the new coordinate. The mean is stored continuously (not re-snapped to the
grid): only stimuli presented to humans are grid-quantized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChainCompleteError,
    DimensionMismatchError,
    DuplicateResponseError,
    StaleTrialError,
)
from .latent import LatentPoint, PcaBasis, SliderAxis, grid_value, slider_axis

STATUS_ACTIVE = "active"
STATUS_COMPLETE = "complete"
STATUS_TERMINATED = "terminated"


@dataclass(frozen=True)
class ChainConfig:
    k_dims: int = 10
    total_iterations: int = 22
    responses_per_iteration: int = 3
    resolution: int = 31
    span_sigma: float = 3.0
    cycle_order: tuple = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")
        if self.responses_per_iteration < 1:
            raise ValueError("responses_per_iteration must be >= 1")
        order = self.cycle_order
        if order is None:
            order = tuple(range(self.k_dims))
        else:
            order = tuple(int(i) for i in order)
            if sorted(order) != list(range(self.k_dims)):
                raise ValueError("cycle_order must be a permutation of [0, k_dims)")
        object.__setattr__(self, "cycle_order", order)

    def to_dict(self) -> dict:
        return {
            "k_dims": self.k_dims,
            "total_iterations": self.total_iterations,
            "responses_per_iteration": self.responses_per_iteration,
            "resolution": self.resolution,
            "span_sigma": self.span_sigma,
            "cycle_order": list(self.cycle_order),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ChainConfig":
        doc = dict(doc)
        if "cycle_order" in doc and doc["cycle_order"] is not None:
            doc["cycle_order"] = tuple(doc["cycle_order"])
        return cls(**doc)


@dataclass(frozen=True)
class Response:
    participant_id: str
    slider_index: int
    continuous_value: float
    submitted_at: float

    def to_dict(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "slider_index": self.slider_index,
            "continuous_value": self.continuous_value,
            "submitted_at": self.submitted_at,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Response":
        return cls(
            participant_id=doc["participant_id"],
            slider_index=int(doc["slider_index"]),
            continuous_value=float(doc["continuous_value"]),
            submitted_at=float(doc["submitted_at"]),
        )


@dataclass(frozen=True)
class IterationRecord:
    dimension: int
    point_before: LatentPoint
    responses: tuple
    aggregated_value: float
    point_after: LatentPoint

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "point_before": self.point_before.coords.tolist(),
            "responses": [r.to_dict() for r in self.responses],
            "aggregated_value": self.aggregated_value,
            "point_after": self.point_after.coords.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "IterationRecord":
        return cls(
            dimension=int(doc["dimension"]),
            point_before=LatentPoint(np.array(doc["point_before"], dtype=np.float64)),
            responses=tuple(Response.from_dict(r) for r in doc["responses"]),
            aggregated_value=float(doc["aggregated_value"]),
            point_after=LatentPoint(np.array(doc["point_after"], dtype=np.float64)),
        )


@dataclass(frozen=True)
class Trial:
    """One slider task: the axis, the frozen off-axis point, and the
    pre-enumerated candidate points (one per grid position)."""

    chain_id: str
    iteration: int
    dimension: int
    axis: SliderAxis
    base_point: LatentPoint
    candidates: tuple
    sentence_id: str
    target_ref: str


class ChainState:
    """Mutable per-chain bookkeeping. Single-writer: callers must route all
    mutations for one chain_id through one logical owner."""

    def __init__(
        self,
        chain_id: str,
        config: ChainConfig,
        target_ref: str,
        sentence_id: str,
        point: LatentPoint,
        meta: dict | None = None,
    ):
        self.chain_id = chain_id
        self.config = config
        self.target_ref = target_ref
        self.sentence_id = sentence_id
        self.point = point
        self.iteration = 0
        self.status = STATUS_ACTIVE
        self.history: list[IterationRecord] = []
        self.pending: list[Response] = []
        self.meta = dict(meta or {})

    @property
    def is_active(self) -> bool:
        return self.status == STATUS_ACTIVE

    def terminate(self) -> None:
        """Freeze an incomplete chain, keeping its partial history."""
        if self.status == STATUS_ACTIVE:
            self.status = STATUS_TERMINATED

    def to_dict(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "config": self.config.to_dict(),
            "target_ref": self.target_ref,
            "sentence_id": self.sentence_id,
            "point": self.point.coords.tolist(),
            "iteration": self.iteration,
            "status": self.status,
            "history": [rec.to_dict() for rec in self.history],
            "pending": [r.to_dict() for r in self.pending],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ChainState":
        chain = cls(
            chain_id=doc["chain_id"],
            config=ChainConfig.from_dict(doc["config"]),
            target_ref=doc["target_ref"],
            sentence_id=doc["sentence_id"],
            point=LatentPoint(np.array(doc["point"], dtype=np.float64)),
            meta=doc.get("meta"),
        )
        chain.iteration = int(doc["iteration"])
        chain.status = doc["status"]
        chain.history = [IterationRecord.from_dict(r) for r in doc["history"]]
        chain.pending = [Response.from_dict(r) for r in doc.get("pending", [])]
        return chain


def init_chain(
    config: ChainConfig,
    target_ref: str,
    sentence_id: str,
    basis: PcaBasis,
    chain_id: str = "chain-0",
    meta: dict | None = None,
) -> ChainState:
    """Start a chain at a random grid point (uniform per dimension, seeded)."""
    if basis.k != config.k_dims:
        raise DimensionMismatchError(f"basis has {basis.k} components, config wants {config.k_dims}")
    rng = np.random.default_rng(config.rng_seed)
    coords = np.empty(config.k_dims)
    for d in range(config.k_dims):
        axis = slider_axis(basis, d, config.span_sigma, config.resolution)
        coords[d] = grid_value(axis, int(rng.integers(0, config.resolution)))
    return ChainState(chain_id, config, target_ref, sentence_id, LatentPoint(coords), meta)


def active_dimension(config: ChainConfig, iteration: int) -> int:
    """Dimension updated at `iteration` under the configured cycle order."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return config.cycle_order[iteration % config.k_dims]


def propose_trial(chain: ChainState, basis: PcaBasis) -> Trial:
    """Build the slider task for the chain's current iteration."""
    if not chain.is_active:
        raise ChainCompleteError(f"chain {chain.chain_id} is {chain.status}")
    dim = active_dimension(chain.config, chain.iteration)
    axis = slider_axis(basis, dim, chain.config.span_sigma, chain.config.resolution)
    candidates = tuple(
        chain.point.with_coord(dim, grid_value(axis, i)) for i in range(axis.resolution)
    )
    return Trial(
        chain_id=chain.chain_id,
        iteration=chain.iteration,
        dimension=dim,
        axis=axis,
        base_point=chain.point,
        candidates=candidates,
        sentence_id=chain.sentence_id,
        target_ref=chain.target_ref,
    )


def response_from_index(
    trial: Trial, participant_id: str, slider_index: int, submitted_at: float = 0.0
) -> Response:
    """Materialize a Response from a raw slider index on a trial's axis."""
    return Response(
        participant_id=participant_id,
        slider_index=slider_index,
        continuous_value=grid_value(trial.axis, slider_index),
        submitted_at=submitted_at,
    )


def record_response(
    chain: ChainState, response: Response, iteration: int | None = None
) -> ChainState:
    """Append one response; seals and advances once the quota is reached."""
    if not chain.is_active:
        raise ChainCompleteError(f"chain {chain.chain_id} is {chain.status}")
    if iteration is not None and iteration != chain.iteration:
        raise StaleTrialError(
            f"response targets iteration {iteration}, chain is at {chain.iteration}"
        )
    if any(r.participant_id == response.participant_id for r in chain.pending):
        raise DuplicateResponseError(
            f"participant {response.participant_id} already answered iteration {chain.iteration}"
        )
    chain.pending.append(response)
    if len(chain.pending) >= chain.config.responses_per_iteration:
        aggregate_and_advance(chain)
    return chain


def aggregate_and_advance(chain: ChainState) -> ChainState:
    """Seal the current iteration with the mean slider value and advance."""
    if len(chain.pending) < chain.config.responses_per_iteration:
        raise ValueError("iteration is not fully answered yet")
    dim = active_dimension(chain.config, chain.iteration)
    aggregated = float(np.mean([r.continuous_value for r in chain.pending]))
    before = chain.point
    after = before.with_coord(dim, aggregated)
    chain.history.append(
        IterationRecord(
            dimension=dim,
            point_before=before,
            responses=tuple(chain.pending),
            aggregated_value=aggregated,
            point_after=after,
        )
    )
    chain.pending = []
    chain.point = after
    chain.iteration += 1
    if chain.iteration >= chain.config.total_iterations:
        chain.status = STATUS_COMPLETE
    return chain


def export_chain(chain: ChainState) -> dict:
    """Export record consumed by the analysis module."""
    return chain.to_dict()
