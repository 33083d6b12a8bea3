"""Membership management: availability tracking and the booth queue.

The unit watches the node pool through ping latencies and explicit churn
notices, keeps a short queue of pre-provisioned booths sorted by their
worst-member smoothed round-trip time, and serves the head booth to
ordering and consensus instances. Booths are immutable once served; when
enough members fall away the booth is dropped from the queue and listeners
(in-flight instances pinned to it) are told to abort and re-book.

Booth composition slides a window over the latency-sorted vehicle list, so
adjacent queued booths overlap in membership; the proposer and the pivot
are mandatory members of every booth. Key material is dealt at composition
time and cached by member set, so a booth that re-forms after a flap keeps
its identity and keys.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from .booths import BoothProfile, build_profile
from .crypto import Identity, KeyService, setup_booth_keys
from .errors import InsufficientMembers, UnknownNode


@dataclass
class MmuConfig:
    booth_size: int = 4
    queue_depth: int = 4
    ewma_alpha: float = 0.2
    ping_period_ms: float = 20.0
    ping_miss_limit: int = 3


@dataclass
class NodeStatus:
    up: bool = True
    rtt_ewma_ms: float = 0.0
    have_rtt: bool = False
    missed_pings: int = 0


@dataclass
class QueuedBooth:
    profile: BoothProfile
    latency_ms: float = 0.0
    down_members: set[int] = field(default_factory=set)

    def valid(self, fault_budget: int) -> bool:
        return len(self.down_members) < max(fault_budget, 1)


class MembershipUnit:
    def __init__(self, instance_id: int, proposer_id: int, pivot_id: int,
                 pool: list[Identity], registry: KeyService,
                 config: MmuConfig, key_rng, now_us: Callable[[], int] = lambda: 0):
        self.instance_id = instance_id
        self.proposer_id = proposer_id
        self.pivot_id = pivot_id
        self.pool = {ident.node_id: ident for ident in pool}
        if proposer_id not in self.pool or pivot_id not in self.pool:
            raise UnknownNode("proposer and pivot must be in the pool")
        self.registry = registry
        self.config = config
        self._key_rng = key_rng
        self._now_us = now_us
        self._lock = threading.RLock()
        self.status: dict[int, NodeStatus] = {
            node_id: NodeStatus() for node_id in self.pool}
        self.queue: list[QueuedBooth] = []
        self._profile_cache: dict[frozenset, BoothProfile] = {}
        self._profiles_by_hash: dict[bytes, BoothProfile] = {}
        self._available_listeners: list[Callable[[], None]] = []
        self._invalidated_listeners: list[Callable[[bytes], None]] = []
        self.booth_changes = 0
        self._last_served: Optional[bytes] = None
        self.refill()

    # -- listeners ---------------------------------------------------------

    def on_booth_available(self, fn: Callable[[], None]) -> None:
        self._available_listeners.append(fn)

    def on_booth_invalidated(self, fn: Callable[[bytes], None]) -> None:
        self._invalidated_listeners.append(fn)

    # -- availability updates ---------------------------------------------

    def mark_availability(self, node_id: int, up: bool) -> None:
        with self._lock:
            status = self.status.get(node_id)
            if status is None:
                raise UnknownNode(f"node {node_id} is not in this pool")
            if status.up == up:
                return
            status.up = up
            status.missed_pings = 0
            if up:
                self._purge_and_refill()
            else:
                for booth in self.queue:
                    if node_id in booth.profile:
                        booth.down_members.add(node_id)
                self._purge_and_refill()

    def note_rtt(self, node_id: int, rtt_ms: float) -> None:
        """Feed one measured round trip; revives nodes marked down by misses."""
        with self._lock:
            status = self.status.get(node_id)
            if status is None:
                return
            alpha = self.config.ewma_alpha
            if status.have_rtt:
                status.rtt_ewma_ms = alpha * rtt_ms + (1 - alpha) * status.rtt_ewma_ms
            else:
                status.rtt_ewma_ms = rtt_ms
                status.have_rtt = True
            status.missed_pings = 0
            if not status.up:
                self.mark_availability(node_id, True)
            else:
                self._resort()

    def note_missed_ping(self, node_id: int) -> None:
        with self._lock:
            status = self.status.get(node_id)
            if status is None or not status.up:
                return
            status.missed_pings += 1
            if status.missed_pings >= self.config.ping_miss_limit:
                self.mark_availability(node_id, False)

    # -- queue maintenance -------------------------------------------------

    def up_members(self) -> list[int]:
        return [n for n, s in sorted(self.status.items()) if s.up]

    def _latency_of(self, profile: BoothProfile) -> float:
        return max(self.status[m].rtt_ewma_ms for m in profile.member_ids
                   if m in self.status)

    def _candidate_vehicles(self) -> list[int]:
        """Up vehicles sorted by smoothed latency, ties by id."""
        out = [
            node_id for node_id, status in self.status.items()
            if status.up and node_id not in (self.proposer_id, self.pivot_id)
        ]
        out.sort(key=lambda n: (self.status[n].rtt_ewma_ms, n))
        return out

    def _compositions(self) -> list[frozenset]:
        """Sliding-window member sets over the sorted vehicle list, nearest
        first. Raises InsufficientMembers when one booth cannot be seated."""
        size = self.config.booth_size
        anchors_up = (self.status[self.proposer_id].up
                      and self.status[self.pivot_id].up)
        vehicles = self._candidate_vehicles()
        need = size - 2
        if not anchors_up or len(vehicles) < need:
            raise InsufficientMembers(
                f"cannot seat a booth of {size}: pivot/proposer down or "
                f"only {len(vehicles)} vehicles up")
        return [
            frozenset([self.proposer_id, self.pivot_id, *vehicles[k:k + need]])
            for k in range(len(vehicles) - need + 1)
        ]

    def compose_booths(self) -> list[BoothProfile]:
        with self._lock:
            sets = self._compositions()[:self.config.queue_depth]
            return [self._provision(members) for members in sets]

    def _provision(self, members: frozenset) -> BoothProfile:
        profile = self._profile_cache.get(members)
        if profile is None:
            member_ids = sorted(members)
            fault_budget = (len(member_ids) - 1) // 3
            material = setup_booth_keys(member_ids, 2 * fault_budget, self._key_rng)
            profile = build_profile(
                members=[self.pool[m] for m in member_ids],
                proposer_id=self.proposer_id, pivot_id=self.pivot_id,
                threshold=material.threshold, directory=dict(material.directory),
                created_at_us=self._now_us(),
            )
            self.registry.install_booth(profile.booth_hash, material)
            self._profile_cache[members] = profile
            self._profiles_by_hash[profile.booth_hash] = profile
        return profile

    def refill(self) -> None:
        with self._lock:
            try:
                sets = self._compositions()
            except InsufficientMembers:
                sets = []
            queued = {frozenset(b.profile.member_ids) for b in self.queue}
            had_none = not self._valid_queue()
            filled = len(queued)
            for members in sets:
                if filled >= self.config.queue_depth:
                    break
                if members in queued:
                    continue
                profile = self._provision(members)
                booth = QueuedBooth(profile=profile,
                                    latency_ms=self._latency_of(profile),
                                    down_members=set())
                self.queue.append(booth)
                queued.add(members)
                filled += 1
            self._resort()
            if had_none and self._valid_queue():
                for fn in list(self._available_listeners):
                    fn()

    def _valid_queue(self) -> list[QueuedBooth]:
        return [b for b in self.queue if b.valid(b.profile.fault_budget)]

    def _purge_and_refill(self) -> None:
        invalid = [b for b in self.queue if not b.valid(b.profile.fault_budget)]
        self.queue = self._valid_queue()
        for booth in invalid:
            for fn in list(self._invalidated_listeners):
                fn(booth.profile.booth_hash)
        self.refill()

    def _resort(self) -> None:
        for booth in self.queue:
            booth.latency_ms = self._latency_of(booth.profile)
        self.queue.sort(key=lambda b: b.latency_ms)   # stable: ties keep order

    # -- serving booths ----------------------------------------------------

    def current_booth(self, kind: str = "ordering") -> Optional[BoothProfile]:
        """Head of the queue, or None when no valid booth exists (callers
        park their work and resume on the availability callback)."""
        with self._lock:
            valid = self._valid_queue()
            if self.queue != valid:
                self._purge_and_refill()
                valid = self._valid_queue()
            if not valid:
                return None
            profile = valid[0].profile
            if profile.booth_hash != self._last_served:
                self.booth_changes += 1
                self._last_served = profile.booth_hash
            return profile

    def profile(self, booth_hash: bytes) -> Optional[BoothProfile]:
        return self._profiles_by_hash.get(booth_hash)

    def booth_latency(self, booth_hash: bytes) -> float:
        profile = self._profiles_by_hash.get(booth_hash)
        if profile is None:
            return 0.0
        with self._lock:
            return self._latency_of(profile)

    def queue_snapshot(self) -> list[tuple[bytes, float, int]]:
        """(booth hash, latency, down members) per queued booth, for tests."""
        with self._lock:
            return [(b.profile.booth_hash, b.latency_ms, len(b.down_members))
                    for b in self.queue]
