"""Experiment coordinator: participants, trial allocation, ratings, export.

State is the fold of an append-only event log; every public mutation
validates, builds an event, then applies it through the same code path
replay uses, so a quiesced service replayed from its log exports
byte-identical state. All mutations serialize through one lock (chains
require a single writer each; one service-wide lock satisfies that).
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from .engine import (
    ChainConfig,
    ChainState,
    Response,
    init_chain,
    propose_trial,
)
from .errors import (
    DuplicateResponseError,
    GspError,
    NoWorkError,
    StaleTrialError,
    ValidationError,
)
from .latent import PcaBasis
from .render import StimulusCache, render_stub, stimulus_cache_key

DEFAULT_TRIAL_TTL_S = 600.0

PENDING = "pending"
SUBMITTED = "submitted"
EXPIRED = "expired"


@dataclass(frozen=True)
class ChainSetup:
    chain_id: str
    target_ref: str
    sentence_id: str
    meta: dict = field(default_factory=dict)


@dataclass
class Participant:
    participant_id: str
    registered_at: float
    completed_trial_count: int = 0


@dataclass
class TrialAssignment:
    trial_id: str
    chain_id: str
    iteration: int
    participant_id: str
    issued_at: float
    state: str = PENDING


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


class ExperimentService:
    """In-process coordinator behind the web API (and direct test harnesses)."""

    def __init__(
        self,
        basis: PcaBasis,
        chain_config: ChainConfig,
        chain_setups,
        mode: str = "gsp",
        log_path=None,
        now_fn=None,
        trial_ttl_s: float = DEFAULT_TRIAL_TTL_S,
        rated_chains=None,
        renderer=render_stub,
    ):
        if mode not in ("gsp", "rating"):
            raise ValidationError(f"unknown mode {mode!r}")
        self.basis = basis
        self.chain_config = chain_config
        self.chain_setups = list(chain_setups)
        self.mode = mode
        self.trial_ttl_s = trial_ttl_s
        self.now_fn = now_fn or (lambda: 0.0)
        self.renderer = renderer

        self._lock = threading.RLock()
        self._replaying = False
        self._log_path = log_path
        self._log_fh = open(log_path, "a") if log_path else None
        self.event_log: list[dict] = []
        self._seq = 0

        self.participants: dict[str, Participant] = {}
        self.assignments: dict[str, TrialAssignment] = {}
        self._idempotency: dict[str, dict] = {}
        self._trial_counter = 0

        self.chains: dict[str, ChainState] = {}
        for setup in sorted(self.chain_setups, key=lambda s: s.chain_id):
            seed = int(
                np.random.SeedSequence(
                    [chain_config.rng_seed, _stable_int(setup.chain_id)]
                ).generate_state(1)[0]
            )
            cfg = ChainConfig(**{**chain_config.to_dict(), "rng_seed": seed})
            self.chains[setup.chain_id] = init_chain(
                cfg, setup.target_ref, setup.sentence_id, self.basis, setup.chain_id, setup.meta
            )

        # Rating mode scores previously generated stimuli.
        self.ratings: list[dict] = []
        self._rated_pairs: set = set()
        self._rating_counts: dict = {}
        self.stimuli: list[tuple] = []
        if rated_chains is not None:
            for chain in rated_chains:
                points = [rec.point_before for rec in chain.history]
                points.append(chain.point)
                for it, point in enumerate(points):
                    ref = (chain.chain_id, it)
                    self.stimuli.append((ref, point, chain.sentence_id))
                    self._rating_counts[ref] = 0

        self._cache = StimulusCache()
        self._key_index: dict[str, tuple] = {}
        for ref, point, sentence_id in self.stimuli:
            self._key_index[stimulus_cache_key(point, sentence_id)] = (point, sentence_id)

    # -- event plumbing ------------------------------------------------------

    def _append_event(self, etype: str, payload: dict, fsync: bool = False) -> dict:
        self._seq += 1
        event = {"seq": self._seq, "type": etype, "at": payload.get("at", 0.0), **payload}
        self.event_log.append(event)
        if self._log_fh is not None:
            self._log_fh.write(json.dumps(event, sort_keys=True) + "\n")
            self._log_fh.flush()
            if fsync:
                os.fsync(self._log_fh.fileno())
        return event

    # -- participants ----------------------------------------------------------

    def register_participant(self, participant_id: str | None = None) -> Participant:
        with self._lock:
            now = self.now_fn()
            if participant_id is None:
                participant_id = f"p{len(self.participants):05d}"
            if participant_id in self.participants:
                return self.participants[participant_id]
            event = self._append_event(
                "participant_registered", {"participant_id": participant_id, "at": now}
            )
            return self._apply_participant_registered(event)

    def _apply_participant_registered(self, event: dict) -> Participant:
        p = Participant(participant_id=event["participant_id"], registered_at=event["at"])
        self.participants[p.participant_id] = p
        return p

    # -- trial allocation ------------------------------------------------------

    def _slot_fill(self, chain: ChainState) -> int:
        pending_here = sum(
            1
            for a in self.assignments.values()
            if a.state == PENDING and a.chain_id == chain.chain_id and a.iteration == chain.iteration
        )
        return len(chain.pending) + pending_here

    def _participant_blocked(self, chain: ChainState, participant_id: str) -> bool:
        if any(r.participant_id == participant_id for r in chain.pending):
            return True
        return any(
            a.participant_id == participant_id
            and a.chain_id == chain.chain_id
            and a.iteration == chain.iteration
            and a.state in (PENDING, SUBMITTED)
            for a in self.assignments.values()
        )

    def allocate_trial(self, participant_id: str) -> tuple[TrialAssignment, dict]:
        with self._lock:
            if participant_id not in self.participants:
                raise ValidationError(f"unknown participant {participant_id!r}")
            for a in self.assignments.values():
                if a.participant_id == participant_id and a.state == PENDING:
                    return a, self._manifest(a)

            candidates = []
            for chain in self.chains.values():
                if not chain.is_active:
                    continue
                if self._participant_blocked(chain, participant_id):
                    continue
                fill = self._slot_fill(chain)
                if fill >= chain.config.responses_per_iteration:
                    continue
                candidates.append((fill, chain.chain_id))
            if not candidates:
                raise NoWorkError("no eligible trial; retry later")
            # Least-filled iteration first, ties to the lowest chain id.
            fill, chain_id = min(candidates)
            chain = self.chains[chain_id]
            now = self.now_fn()
            trial_id = f"t{self._trial_counter:06d}"
            event = self._append_event(
                "trial_allocated",
                {
                    "trial_id": trial_id,
                    "chain_id": chain_id,
                    "iteration": chain.iteration,
                    "participant_id": participant_id,
                    "at": now,
                },
            )
            assignment = self._apply_trial_allocated(event)
            return assignment, self._manifest(assignment)

    def _apply_trial_allocated(self, event: dict) -> TrialAssignment:
        assignment = TrialAssignment(
            trial_id=event["trial_id"],
            chain_id=event["chain_id"],
            iteration=event["iteration"],
            participant_id=event["participant_id"],
            issued_at=event["at"],
        )
        self.assignments[assignment.trial_id] = assignment
        self._trial_counter = max(self._trial_counter, int(assignment.trial_id[1:]) + 1)
        return assignment

    def _manifest(self, assignment: TrialAssignment) -> dict:
        chain = self.chains[assignment.chain_id]
        trial = propose_trial(chain, self.basis)
        keys = []
        for candidate in trial.candidates:
            key = stimulus_cache_key(candidate, chain.sentence_id)
            self._key_index[key] = (candidate, chain.sentence_id)
            keys.append(key)
        return {
            "trial_id": assignment.trial_id,
            "chain_id": assignment.chain_id,
            "iteration": assignment.iteration,
            "face_ref": chain.target_ref,
            "sentence_id": chain.sentence_id,
            "stimulus_keys": keys,
            "slider": {
                "dimension": trial.dimension,
                "lo": trial.axis.lo,
                "hi": trial.axis.hi,
                "resolution": trial.axis.resolution,
            },
        }

    # -- response submission -----------------------------------------------------

    def submit_response(self, trial_id: str, slider_index: int, idempotency_key: str) -> dict:
        with self._lock:
            if idempotency_key in self._idempotency:
                return dict(self._idempotency[idempotency_key])
            assignment = self.assignments.get(trial_id)
            if assignment is None:
                raise ValidationError(f"unknown trial {trial_id!r}")
            if assignment.state == EXPIRED:
                raise StaleTrialError(f"trial {trial_id} expired")
            if assignment.state == SUBMITTED:
                raise DuplicateResponseError(f"trial {trial_id} already submitted")
            chain = self.chains[assignment.chain_id]
            if not (0 <= slider_index < chain.config.resolution):
                raise ValidationError(
                    f"slider_index {slider_index} outside [0, {chain.config.resolution})"
                )
            if assignment.iteration != chain.iteration:
                raise StaleTrialError(
                    f"trial targets iteration {assignment.iteration}, chain is at {chain.iteration}"
                )
            now = self.now_fn()
            event = self._append_event(
                "response_submitted",
                {
                    "trial_id": trial_id,
                    "chain_id": assignment.chain_id,
                    "iteration": assignment.iteration,
                    "participant_id": assignment.participant_id,
                    "slider_index": int(slider_index),
                    "idempotency_key": idempotency_key,
                    "at": now,
                },
            )
            return dict(self._apply_response_submitted(event))

    def _apply_response_submitted(self, event: dict) -> dict:
        assignment = self.assignments[event["trial_id"]]
        chain = self.chains[event["chain_id"]]
        trial = propose_trial(chain, self.basis)
        from .engine import record_response, response_from_index

        response = response_from_index(
            trial, event["participant_id"], event["slider_index"], event["at"]
        )
        record_response(chain, response, event["iteration"])
        assignment.state = SUBMITTED
        self.participants[event["participant_id"]].completed_trial_count += 1
        sealed = chain.iteration > event["iteration"]
        # During replay the seal marker is already present in the source log.
        if sealed and not self._replaying:
            self._append_event(
                "iteration_sealed",
                {
                    "chain_id": chain.chain_id,
                    "iteration": event["iteration"],
                    "dimension": chain.history[-1].dimension,
                    "aggregated_value": chain.history[-1].aggregated_value,
                    "at": event["at"],
                },
                fsync=True,
            )
        ack = {
            "trial_id": event["trial_id"],
            "iteration_sealed": sealed,
            "chain_status": chain.status,
        }
        self._idempotency[event["idempotency_key"]] = ack
        return ack

    # -- expiry --------------------------------------------------------------

    def expire_stale(self, now: float | None = None, ttl: float | None = None) -> int:
        with self._lock:
            now = self.now_fn() if now is None else now
            ttl = self.trial_ttl_s if ttl is None else ttl
            reclaimed = 0
            for a in sorted(self.assignments.values(), key=lambda a: a.trial_id):
                if a.state == PENDING and now - a.issued_at > ttl:
                    event = self._append_event(
                        "trial_expired", {"trial_id": a.trial_id, "at": now}
                    )
                    self._apply_trial_expired(event)
                    reclaimed += 1
            return reclaimed

    def _apply_trial_expired(self, event: dict) -> None:
        self.assignments[event["trial_id"]].state = EXPIRED

    # -- ratings ----------------------------------------------------------------

    def allocate_rating(self, rater_id: str) -> dict:
        with self._lock:
            if self.mode != "rating":
                raise ValidationError("service is not in rating mode")
            best = None
            for ref, point, sentence_id in self.stimuli:
                if (rater_id, ref) in self._rated_pairs:
                    continue
                count = self._rating_counts[ref]
                if best is None or count < best[0]:
                    best = (count, ref, point, sentence_id)
            if best is None:
                raise NoWorkError("no unrated stimulus left for this rater")
            _, ref, point, sentence_id = best
            key = stimulus_cache_key(point, sentence_id)
            self._key_index[key] = (point, sentence_id)
            return {
                "chain_id": ref[0],
                "iteration": ref[1],
                "stimulus_key": key,
                "labels": ["Bad match", "Poor", "Fair", "Good", "Excellent"],
            }

    def submit_rating(self, rater_id: str, chain_id: str, iteration: int, score: int) -> dict:
        with self._lock:
            if self.mode != "rating":
                raise ValidationError("service is not in rating mode")
            if score not in (1, 2, 3, 4, 5):
                raise ValidationError(f"score {score} outside 1..5")
            ref = (chain_id, int(iteration))
            if ref not in self._rating_counts:
                raise ValidationError(f"unknown stimulus {ref}")
            if (rater_id, ref) in self._rated_pairs:
                raise DuplicateResponseError(f"{rater_id} already rated {ref}")
            now = self.now_fn()
            event = self._append_event(
                "rating_submitted",
                {
                    "rater_id": rater_id,
                    "chain_id": chain_id,
                    "iteration": int(iteration),
                    "score": int(score),
                    "at": now,
                },
            )
            self._apply_rating_submitted(event)
            return {"recorded": True, "count": self._rating_counts[ref]}

    def _apply_rating_submitted(self, event: dict) -> None:
        ref = (event["chain_id"], event["iteration"])
        self._rated_pairs.add((event["rater_id"], ref))
        self._rating_counts[ref] = self._rating_counts.get(ref, 0) + 1
        self.ratings.append(
            {
                "rater_id": event["rater_id"],
                "chain_id": event["chain_id"],
                "iteration": event["iteration"],
                "score": event["score"],
                "at": event["at"],
            }
        )

    # -- stimuli ------------------------------------------------------------------

    def get_stimulus(self, key: str):
        entry = self._key_index.get(key)
        if entry is None:
            raise ValidationError(f"unknown stimulus key {key!r}")
        point, sentence_id = entry
        return self._cache.get_or_render(
            key, lambda: self.renderer(point, self.basis, sentence_id)
        )

    def chain_view(self, chain_id: str) -> dict:
        with self._lock:
            chain = self.chains.get(chain_id)
            if chain is None:
                raise ValidationError(f"unknown chain {chain_id!r}")
            return chain.to_dict()

    # -- export & replay -------------------------------------------------------------

    def export_experiment(self) -> dict:
        with self._lock:
            return {
                "mode": self.mode,
                "config": self.chain_config.to_dict(),
                "chain_setups": [
                    {
                        "chain_id": s.chain_id,
                        "target_ref": s.target_ref,
                        "sentence_id": s.sentence_id,
                        "meta": s.meta,
                    }
                    for s in sorted(self.chain_setups, key=lambda s: s.chain_id)
                ],
                "chains": [
                    self.chains[cid].to_dict() for cid in sorted(self.chains)
                ],
                "ratings": list(self.ratings),
                "participants": [
                    {
                        "participant_id": p.participant_id,
                        "registered_at": p.registered_at,
                        "completed_trial_count": p.completed_trial_count,
                    }
                    for p in sorted(self.participants.values(), key=lambda p: p.participant_id)
                ],
                "event_log": list(self.event_log),
            }

    def export_bytes(self) -> bytes:
        return json.dumps(self.export_experiment(), sort_keys=True).encode()

    @classmethod
    def replay(
        cls,
        basis: PcaBasis,
        chain_config: ChainConfig,
        chain_setups,
        events,
        mode: str = "gsp",
        rated_chains=None,
    ) -> "ExperimentService":
        """Rebuild a service purely from its event log."""
        svc = cls(basis, chain_config, chain_setups, mode=mode, rated_chains=rated_chains)
        svc._replaying = True
        for event in events:
            svc.event_log.append(dict(event))
            svc._seq = event["seq"]
            etype = event["type"]
            if etype == "participant_registered":
                svc._apply_participant_registered(event)
            elif etype == "trial_allocated":
                svc._apply_trial_allocated(event)
            elif etype == "response_submitted":
                svc._apply_response_submitted(event)
            elif etype == "iteration_sealed":
                pass  # derived marker; the response event already sealed the chain
            elif etype == "trial_expired":
                svc._apply_trial_expired(event)
            elif etype == "rating_submitted":
                svc._apply_rating_submitted(event)
            else:
                raise GspError(f"unknown event type {etype!r}")
        svc._replaying = False
        return svc

    def close(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None


def read_event_log(path) -> list[dict]:
    events = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    return events
