# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import pandas as pd

from ..agents.courier_model import MIN_ESTIMATE_SPEED, DeliveryTask
from ..logger import logger
from ..monitoring.stream_monitor import SituationVector
from ..prediction.delay_predictor import build_features
from ..prediction.hoeffding_tree import HoeffdingTree
from ..utils.geo import Location, distance

__all__ = [
    "Role",
    "RegistryEntry",
    "GlobalRegistry",
    "TransferRequest",
    "CandidateRanking",
    "TransferOutcome",
    "TransferSession",
    "TriggerState",
    "TransferParticipants",
    "TransferLog",
    "StaleTaskError",
    "StaleCandidateError",
    "trigger_check",
    "rank_candidates",
    "negotiate",
    "temporal_distance",
    "force_transfer",
]

STALE_AFTER_S = 600.0
TRIGGER_COOLDOWN_S = 60.0


class StaleTaskError(RuntimeError):
    """Raised when the task of a running session is no longer being delivered"""


class StaleCandidateError(LookupError):
    """Raised for a candidate without a fresh situation vector"""


class Role(str, Enum):
    """Role of a courier as seen by the logistics provider"""

    AVAILABLE = "available"
    DELIVERER = "deliverer"
    # waiting for a handover or heading home after a delivery
    BUSY = "busy"


@dataclass
class RegistryEntry:
    """Latest forwarded vector, role and travel speed of a courier"""

    vector: SituationVector
    role: Role
    speed: float


class GlobalRegistry:
    """
    The logistics provider's view on the couriers: latest forwarded situation vector and role per courier.

    Args:
        stale_after: float: Age in seconds after which an entry is ignored by candidate searches
    """

    def __init__(self, stale_after: float = STALE_AFTER_S):
        self.stale_after = stale_after
        self._entries: dict[str, RegistryEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, courier_id: str) -> bool:
        return courier_id in self._entries

    def update(self, sv: SituationVector, role: Role | None = None, speed: float | None = None) -> None:
        """Store the latest vector of a courier, keeping the known role and speed unless given"""
        entry = self._entries.get(sv.courier_id)
        if entry is None:
            self._entries[sv.courier_id] = RegistryEntry(
                sv, role or Role.AVAILABLE, sv.speed if speed is None else speed
            )
            return
        entry.vector = sv
        if role is not None:
            entry.role = role
        if speed is not None:
            entry.speed = speed

    def set_role(self, courier_id: str, role: Role, speed: float | None = None) -> None:
        entry = self._entries.get(courier_id)
        if entry is None:
            return
        entry.role = role
        if speed is not None:
            entry.speed = speed

    def remove(self, courier_id: str) -> None:
        self._entries.pop(courier_id, None)

    def get(self, courier_id: str) -> RegistryEntry | None:
        return self._entries.get(courier_id)

    def is_fresh(self, entry: RegistryEntry, now: float) -> bool:
        return now - entry.vector.timestamp <= self.stale_after

    def available(self, now: float) -> list[RegistryEntry]:
        """Fresh entries of couriers without a task, in courier id order"""
        return [
            self._entries[cid]
            for cid in sorted(self._entries)
            if self._entries[cid].role == Role.AVAILABLE and self.is_fresh(self._entries[cid], now)
        ]


@dataclass(frozen=True)
class TransferRequest:
    """A deliverer at risk of being late, as reported to the logistics provider"""

    task_id: str
    deliverer_id: str
    sigma_deliverer: float
    timestamp: float

    def __post_init__(self):
        if not 0.0 <= self.sigma_deliverer <= 1.0:
            raise ValueError(f"Success probability out of range: {self.sigma_deliverer}")


@dataclass
class CandidateRanking:
    """Candidates strictly more likely than the deliverer to finish on time, best first"""

    entries: list[tuple[str, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    @property
    def courier_ids(self) -> list[str]:
        return [cid for cid, _ in self.entries]


@dataclass(frozen=True)
class TransferOutcome:
    """Result of a session: the winning candidate and bid, if any"""

    transferred: bool
    courier_id: str | None = None
    bid: float | None = None

    @classmethod
    def no_agreement(cls) -> "TransferOutcome":
        return cls(False)


@dataclass
class TransferSession:
    """One negotiation instance for a task"""

    request: TransferRequest
    ranking: CandidateRanking
    bids: dict[str, float] = field(default_factory=dict)
    decisions: dict[str, bool] = field(default_factory=dict)
    outcome: TransferOutcome | None = None
    forced: bool = False

    @property
    def queried(self) -> list[str]:
        return list(self.bids)


class TriggerState:
    """
    Last transfer attempt per task and the tasks with a running session.

    Args:
        cooldown: float: Minimal seconds between two attempts for the same task
    """

    def __init__(self, cooldown: float = TRIGGER_COOLDOWN_S):
        self.cooldown = cooldown
        self.last_attempt: dict[str, float] = {}
        self.active_sessions: set[str] = set()

    def ready(self, task_id: str, now: float) -> bool:
        if task_id in self.active_sessions:
            return False
        last = self.last_attempt.get(task_id)
        return last is None or now - last >= self.cooldown

    def start(self, task_id: str, now: float) -> None:
        if task_id in self.active_sessions:
            raise RuntimeError(f"Task {task_id} already has an active transfer session")
        self.last_attempt[task_id] = now
        self.active_sessions.add(task_id)

    def finish(self, task_id: str) -> None:
        self.active_sessions.discard(task_id)

    def forget(self, task_id: str) -> None:
        self.last_attempt.pop(task_id, None)
        self.active_sessions.discard(task_id)


def trigger_check(sigma: float, threshold: float, trigger_state: TriggerState, task_id: str, now: float) -> bool:
    """
    Trigger policy: attempt a transfer when the deliverer's on-time probability falls below the threshold.

    Args:
        sigma: float: The deliverer's predicted on-time probability
        threshold: float: The trigger threshold
        trigger_state: TriggerState: Attempt history
        task_id: str: The deliverer's task
        now: float: Current time in seconds

    Returns:
        bool: True iff sigma < threshold and the task's cooldown has elapsed
    """
    return sigma < threshold and trigger_state.ready(task_id, now)


def rank_candidates(
    registry: GlobalRegistry,
    tree: HoeffdingTree,
    task: DeliveryTask,
    sigma_deliverer: float,
    now: float,
    pickup: Location | None = None,
    exclude: set[str] | None = None,
) -> CandidateRanking:
    """
    Rank available couriers by their predicted on-time probability for the task.

    Args:
        registry: GlobalRegistry: The situation registry
        tree: HoeffdingTree: The delay predictor
        task: DeliveryTask: The task up for transfer
        sigma_deliverer: float: The deliverer's on-time probability
        now: float: Current time in seconds
        pickup: Location | None: Where a substitute collects the parcel, the task origin if None
        exclude: set[str] | None: Couriers never to consider

    Returns:
        CandidateRanking: Candidates with sigma > sigma_deliverer, by descending sigma then courier id
    """
    pickup = task.origin if pickup is None else pickup
    scored = []
    for entry in registry.available(now):
        cid = entry.vector.courier_id
        if exclude and cid in exclude:
            continue
        sigma = tree.predict_on_time(build_features(entry.vector, task, now, pickup=pickup))
        if sigma > sigma_deliverer:
            scored.append((cid, sigma))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return CandidateRanking(scored)


def temporal_distance(
    registry: GlobalRegistry, candidate_id: str, deliverer_location: Location, now: float | None = None
) -> float:
    """
    Estimated seconds the candidate needs to reach the deliverer.

    Args:
        registry: GlobalRegistry: The situation registry
        candidate_id: str: The candidate
        deliverer_location: Location: Where the handover takes place
        now: float | None: Current time, used to reject stale entries

    Returns:
        float: Distance divided by the candidate's speed, clamped below at 0.3 m/s
    """
    entry = registry.get(candidate_id)
    if entry is None or (now is not None and not registry.is_fresh(entry, now)):
        logger.error(f"No fresh situation of candidate {candidate_id}")
        raise StaleCandidateError(f"Candidate {candidate_id} has no fresh situation vector")
    return distance(entry.vector.location, deliverer_location) / max(entry.speed, MIN_ESTIMATE_SPEED)


class TransferParticipants(Protocol):
    """Decision functions of the couriers involved in a session and the reassignment hook"""

    def task_active(self) -> bool: ...

    def candidate_bid(self, candidate_id: str) -> float: ...

    def temporal_distance(self, candidate_id: str) -> float: ...

    def deliverer_accepts(self, candidate_id: str, bid: float, delta: float) -> bool: ...

    def transfer(self, candidate_id: str, bid: float | None) -> None: ...


def negotiate(session: TransferSession, participants: TransferParticipants) -> TransferOutcome:
    """
    Offer the task to the ranked candidates in order until the deliverer accepts a bid.

    Args:
        session: TransferSession: The session, its bids and decisions are recorded in place
        participants: TransferParticipants: Courier decisions and the reassignment hook

    Returns:
        TransferOutcome: The winning candidate and bid, or no agreement once the ranking is exhausted
    """
    for candidate_id in session.ranking.courier_ids:
        if not participants.task_active():
            logger.warning(f"Task {session.request.task_id} finished during its transfer session")
            raise StaleTaskError(f"Task {session.request.task_id} is no longer being delivered")
        bid = participants.candidate_bid(candidate_id)
        session.bids[candidate_id] = bid
        if bid <= 0:
            continue
        delta = participants.temporal_distance(candidate_id)
        accepted = participants.deliverer_accepts(candidate_id, bid, delta)
        session.decisions[candidate_id] = accepted
        if accepted:
            participants.transfer(candidate_id, bid)
            session.outcome = TransferOutcome(True, candidate_id, bid)
            return session.outcome
    session.outcome = TransferOutcome.no_agreement()
    return session.outcome


def force_transfer(session: TransferSession, participants: TransferParticipants) -> TransferOutcome:
    """
    Hand the task to the top-ranked candidate without bids or acceptance checks.

    Args:
        session: TransferSession: The session
        participants: TransferParticipants: Only the reassignment hook is used

    Returns:
        TransferOutcome: Transferred to the best candidate, no agreement for an empty ranking
    """
    session.forced = True
    if not session.ranking:
        session.outcome = TransferOutcome.no_agreement()
        return session.outcome
    best = session.ranking.courier_ids[0]
    participants.transfer(best, None)
    session.outcome = TransferOutcome(True, best, None)
    return session.outcome


class TransferLog:
    """Record of every transfer session"""

    COLUMNS = ["timestamp", "task_id", "deliverer", "outcome", "winning_courier", "winning_bid", "candidates_queried"]

    def __init__(self):
        self.sessions: list[TransferSession] = []

    def __len__(self) -> int:
        return len(self.sessions)

    def append(self, session: TransferSession) -> None:
        self.sessions.append(session)

    @property
    def attempted(self) -> int:
        return len(self.sessions)

    @property
    def succeeded(self) -> int:
        return sum(1 for s in self.sessions if s.outcome is not None and s.outcome.transferred)

    def consent_violations(self) -> list[TransferSession]:
        """Consensual transfers lacking a positive bid or the deliverer's acceptance"""
        violations = []
        for s in self.sessions:
            if s.forced or s.outcome is None or not s.outcome.transferred:
                continue
            winner = s.outcome.courier_id
            if winner is None or s.bids.get(winner, 0.0) <= 0 or not s.decisions.get(winner, False):
                violations.append(s)
        return violations

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for s in self.sessions:
            outcome = s.outcome or TransferOutcome.no_agreement()
            rows.append({
                "timestamp": s.request.timestamp,
                "task_id": s.request.task_id,
                "deliverer": s.request.deliverer_id,
                "outcome": ("forced" if s.forced else "transferred") if outcome.transferred else "no_agreement",
                "winning_courier": outcome.courier_id or "",
                "winning_bid": "" if outcome.bid is None else round(outcome.bid, 6),
                "candidates_queried": ";".join(s.queried),
            })
        return pd.DataFrame(rows, columns=self.COLUMNS)
