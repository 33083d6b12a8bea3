"""Lifetime-bounded gossip of committed windows to off-booth vehicles.

Commits travel outside consensus booths over a fixed peer overlay on the
side radio channel. Every message carries a traverse list: one signed
(lifetime, signature) hop per forwarder, rooted at the proposer. A
receiver stores the commit only if it has not seen it, every hop signature
checks out, lifetimes strictly decrease along the list, and the last hop
still has budget. It then acks directly to the proposer and the pivot,
decrements the budget, and forwards while budget remains. The seen set is
an LRU over commit hashes and records only stored commits, so a rejected
message can be retried later with a fresh traverse.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional

from .crypto import KeyService, SigningKey, verify_raw
from .errors import RejectReason, UnknownCommit
from .ledger import CommitRecord
from .messages import CommitMsg, GossipAck, GossipMsg, TraverseHop, traverse_digest
from .storage import GOSSIPER, StorageMaster


@dataclass
class GossipConfig:
    initial_lifetime: int = 2
    fanout: int = 8
    seen_cap: int = 10_000


@dataclass
class GossipStats:
    stored: int = 0
    forwarded: int = 0
    acks_sent: int = 0
    acks_received: int = 0
    rejects: dict[str, int] = field(default_factory=dict)

    def reject(self, reason: RejectReason) -> None:
        self.rejects[reason.value] = self.rejects.get(reason.value, 0) + 1


class GossipAgent:
    def __init__(self, node_id: int, registry: KeyService, key: SigningKey,
                 peers: list[int], config: GossipConfig,
                 storage: Optional[StorageMaster],
                 send: Callable[[int, object], None]):
        self.node_id = node_id
        self.registry = registry
        self.key = key
        self.peers = sorted(p for p in peers if p != node_id)[:config.fanout]
        self.config = config
        self.storage = storage
        self.send = send
        self.seen: OrderedDict[bytes, bool] = OrderedDict()
        self.propagators: dict[bytes, list[int]] = {}
        self.stats = GossipStats()

    # -- origination -------------------------------------------------------

    def init_gossip(self, commit: CommitMsg, tx, exclude: set[int]) -> None:
        """Proposer entry point: push a fresh commit to peers outside the
        consensus booth with the full lifetime budget."""
        if self.config.initial_lifetime <= 0:
            return
        h = commit.commit_hash()
        self._remember(h)
        self.propagators.setdefault(h, [])
        hop = TraverseHop(
            lifetime=self.config.initial_lifetime,
            sig=self.key.sign(traverse_digest(h, self.config.initial_lifetime)),
            node_id=self.node_id,
        )
        msg = GossipMsg(instance_id=commit.instance_id, sender=self.node_id,
                        commit=commit, tx=tx, traverse=(hop,))
        for peer in self.peers:
            if peer in exclude:
                continue
            self.send(peer, msg)
            self.stats.forwarded += 1

    def expect_acks(self, commit_hash: bytes) -> None:
        """Pivot-side registration so acks for a known commit are accepted."""
        self.propagators.setdefault(commit_hash, [])

    # -- receive path ------------------------------------------------------

    def handle_gossip(self, src: int, msg: GossipMsg) -> bool:
        h = msg.commit.commit_hash()
        if h in self.seen:
            self.seen.move_to_end(h)
            self.stats.reject(RejectReason.DUPLICATE)
            return False
        if not msg.traverse:
            self.stats.reject(RejectReason.MALFORMED)
            return False
        if not self._traverse_ok(h, msg.traverse):
            return False
        if msg.tx.tx_hash != msg.commit.tx_hash:
            self.stats.reject(RejectReason.BAD_HASH)
            return False

        self._store(msg)
        self._remember(h)
        self.stats.stored += 1
        self._ack(msg, h)

        remaining = max(msg.traverse[-1].lifetime - 1, 0)
        if remaining > 0:
            hop = TraverseHop(lifetime=remaining,
                              sig=self.key.sign(traverse_digest(h, remaining)),
                              node_id=self.node_id)
            out = GossipMsg(instance_id=msg.instance_id, sender=self.node_id,
                            commit=msg.commit, tx=msg.tx,
                            traverse=msg.traverse + (hop,))
            for peer in self.peers:
                if peer == src:
                    continue
                self.send(peer, out)
                self.stats.forwarded += 1
        return True

    def _traverse_ok(self, commit_hash: bytes, hops) -> bool:
        prev = None
        for hop in hops:
            if hop.lifetime <= 0 or (prev is not None and hop.lifetime >= prev):
                self.stats.reject(RejectReason.NON_MONOTONE_LIFETIME)
                return False
            prev = hop.lifetime
            try:
                key = self.registry.verify_key(hop.node_id)
            except Exception:
                self.stats.reject(RejectReason.UNKNOWN_BOOTH)
                return False
            if not verify_raw(key, traverse_digest(commit_hash, hop.lifetime),
                              hop.sig):
                self.stats.reject(RejectReason.BAD_SIG)
                return False
        return True

    def _store(self, msg: GossipMsg) -> None:
        if self.storage is None:
            return
        record = CommitRecord(
            consensus_id=msg.commit.window_start_us,
            quorum=msg.commit.quorum,
            booth_hash=msg.commit.booth_hash,
            cert=msg.commit.cert,
            tx_hash=msg.commit.tx_hash,
            committed_at_us=0,
        )
        smi = self.storage.get(msg.instance_id, GOSSIPER)
        smi.register_to_temp(msg.tx, record, now_us=0)

    def _ack(self, msg: GossipMsg, commit_hash: bytes) -> None:
        proposer = msg.traverse[0].node_id
        targets = {proposer}
        if msg.tx.membership_links:
            targets.add(msg.tx.membership_links[0].booth.pivot_id)
        ack = GossipAck(instance_id=msg.instance_id, sender=self.node_id,
                        commit_hash=commit_hash, propagator=self.node_id)
        for dst in sorted(targets):
            if dst != self.node_id:
                self.send(dst, ack)
                self.stats.acks_sent += 1

    def handle_ack(self, src: int, msg: GossipAck) -> bool:
        bucket = self.propagators.get(msg.commit_hash)
        if bucket is None:
            self.stats.reject(RejectReason.UNKNOWN_COMMIT)
            return False
        if msg.propagator not in bucket:
            bucket.append(msg.propagator)
        self.stats.acks_received += 1
        return True

    def register_ack(self, commit_hash: bytes, propagator: int) -> None:
        """Direct form of handle_ack that raises on unknown commits."""
        if commit_hash not in self.propagators:
            raise UnknownCommit(f"no gossip initiated for {commit_hash.hex()[:12]}")
        bucket = self.propagators[commit_hash]
        if propagator not in bucket:
            bucket.append(propagator)

    def _remember(self, commit_hash: bytes) -> None:
        self.seen[commit_hash] = True
        self.seen.move_to_end(commit_hash)
        while len(self.seen) > self.config.seen_cap:
            self.seen.popitem(last=False)
