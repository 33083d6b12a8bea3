"""Node runtime: one process worth of protocol state.

A runtime owns a node's signing key, decodes incoming envelopes, and
routes them to per-instance engines. Proposer instances are declared up
front (membership unit, workload intake, window clock); validator state
is created lazily the first time an instance's traffic arrives, since any
pool member can be drafted into a booth at any time.

Byzantine nodes run the same runtime with a transform bolted onto the
send path, so their misbehavior is subject to exactly the checks honest
receivers apply.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .booths import BoothProfile
from .consensus import ConsensusCoordinator, ValidatorConsensus
from .crypto import KeyService, SigningKey, make_partial
from .errors import RejectReason
from .gossip import GossipAgent, GossipConfig
from .ledger import DataBatch, DataEntry, Ledger, TotalOrderLog, order_cert_digest
from .messages import (CommitMsg, CommitReply, GossipAck, GossipMsg, OrderMsg,
                       OrderReply, Ping, Pong, PreCommitSeen, PreCommitUnseen,
                       PreOrder, decode_message)
from .mmu import MembershipUnit
from .netsim import ByzantineBehavior, Category, NodeEnv
from .ordering import OrderingCoordinator, ValidatorOrdering
from .storage import StorageMaster


@dataclass(frozen=True)
class ProtocolConfig:
    delta_us: int = 100_000            # window length
    timeout_floor_ms: float = 25.0
    timeout_factor: float = 4.0
    max_retries: int = 50
    max_inflight: int = 8
    unseen_allowance_ms: float = 0.5   # extra wait per entry on the full path


class MetricSink:
    """Per-instance latency and throughput collection on the proposer."""

    def __init__(self):
        self.ordering_latency_us: list[int] = []
        self.commit_latency_us: list[int] = []
        self.ordered_batches = 0
        self.ordered_entries = 0
        self.committed_windows = 0
        self.committed_batches = 0
        self.committed_entries = 0
        self.abandoned_batches = 0
        self._submit_us: dict[int, int] = {}
        self.on_capacity: Optional[Callable[[], None]] = None

    def ordered(self, ordering_id: int, batch: DataBatch,
                submitted_at_us: int, now_us: int) -> None:
        self.ordering_latency_us.append(now_us - submitted_at_us)
        self._submit_us[ordering_id] = submitted_at_us
        self.ordered_batches += 1
        self.ordered_entries += len(batch)

    def committed(self, tx, now_us: int) -> None:
        self.committed_windows += 1
        for entry in tx.entries:
            self.committed_batches += 1
            self.committed_entries += len(entry.batch)
            submitted = self._submit_us.get(entry.ordering_id)
            if submitted is not None:
                self.commit_latency_us.append(now_us - submitted)

    def abandoned(self, batch: DataBatch) -> None:
        self.abandoned_batches += 1

    def capacity_freed(self) -> None:
        if self.on_capacity is not None:
            self.on_capacity()


@dataclass
class InstanceContext:
    """Everything an engine needs from its host node, bundled."""

    instance_id: int
    node_id: int
    env: NodeEnv
    registry: KeyService
    key: SigningKey
    config: ProtocolConfig
    send: Callable[[int, object, Category, object], None]
    log: TotalOrderLog
    ledger: Ledger
    booth_profiles: dict[bytes, BoothProfile]
    counters: Counter
    metrics: MetricSink
    storage: Optional[StorageMaster] = None
    gossip: Optional[GossipAgent] = None
    mmu: Optional[MembershipUnit] = None
    committed_hook: Optional[Callable] = None

    def diag(self, reason: RejectReason) -> None:
        self.counters[str(reason)] += 1


@dataclass
class ProposerInstance:
    ctx: InstanceContext
    ordering: OrderingCoordinator
    consensus: ConsensusCoordinator
    mmu: MembershipUnit


@dataclass
class ValidatorInstance:
    ctx: InstanceContext
    ordering: ValidatorOrdering
    consensus: ValidatorConsensus


class PingDaemon:
    """Proposer-side liveness probe per pool member. An unanswered probe
    counts as a miss when the next one fires; the membership unit decides
    when misses become a down mark."""

    def __init__(self, runtime: "NodeRuntime", mmu: MembershipUnit,
                 instance_id: int):
        self.runtime = runtime
        self.mmu = mmu
        self.instance_id = instance_id
        self.seq = 0
        self.outstanding: dict[int, Optional[int]] = {}

    def start(self) -> None:
        self.runtime.env.every(self.mmu.config.ping_period_ms, self.tick)

    def tick(self) -> None:
        env = self.runtime.env
        for target in sorted(self.mmu.pool):
            if target == self.runtime.node_id:
                continue
            if self.outstanding.get(target) is not None:
                self.mmu.note_missed_ping(target)
            self.seq += 1
            ping = Ping(instance_id=self.instance_id,
                        sender=self.runtime.node_id,
                        seq=self.seq, sent_at_us=env.now_us())
            self.outstanding[target] = self.seq
            self.runtime.send_msg(target, ping, Category.PING, None)

    def on_pong(self, src: int, msg: Pong) -> None:
        if self.outstanding.get(src) != msg.seq:
            return
        self.outstanding[src] = None
        rtt_ms = (self.runtime.env.now_us() - msg.sent_at_us) / 1000.0
        self.mmu.note_rtt(src, rtt_ms)


class ByzantineActor:
    """Rewrites outgoing traffic according to the configured behaviors.
    The actor holds the node's real key, so its forgeries are exactly as
    strong as a compromised vehicle's could be."""

    def __init__(self, runtime: "NodeRuntime",
                 behaviors: list[ByzantineBehavior]):
        self.runtime = runtime
        self.behaviors = set(behaviors)

    def transform(self, dst: int, msg) -> list[tuple[int, object]]:
        if (ByzantineBehavior.SILENT in self.behaviors
                and not isinstance(msg, (Ping, Pong))):
            return []
        if (ByzantineBehavior.EQUIVOCATE_ORDERING_ID in self.behaviors
                and isinstance(msg, PreOrder)):
            return [(dst, self._equivocate(dst, msg))]
        if (ByzantineBehavior.TAMPER_PAYLOAD in self.behaviors
                and isinstance(msg, PreOrder)):
            return [(dst, replace(msg, batch=_flip_first_byte(msg.batch)))]
        if ByzantineBehavior.FORGE_QUORUM in self.behaviors and isinstance(
                msg, (OrderMsg, CommitMsg)):
            foreign = 1_000_000 + self.runtime.node_id
            quorum = msg.quorum[:-1] + (foreign,)
            return [(dst, replace(msg, quorum=quorum))]
        if (ByzantineBehavior.MUTATE_GOSSIP_LIFETIME in self.behaviors
                and isinstance(msg, GossipMsg) and msg.traverse):
            return [(dst, self._inflate_lifetime(msg))]
        return [(dst, msg)]

    def _equivocate(self, dst: int, msg: PreOrder) -> PreOrder:
        """Two-branch split under one ordering id: the pivot alone gets the
        true batch, every other member a forged one. The forged branch can
        reach a plain countersignature count, but never one that includes
        the pivot; the true branch has the pivot and nobody else."""
        if dst == msg.booth.pivot_id:
            return msg
        forged = _flip_first_byte(msg.batch)
        digest = order_cert_digest(msg.ordering_id, forged.batch_hash,
                                   msg.booth_hash)
        share = self.runtime.registry.booth_share(msg.booth_hash,
                                                  self.runtime.node_id)
        partial = make_partial(self.runtime.key, digest, share)
        return replace(msg, batch=forged, batch_hash=forged.batch_hash,
                       proposer_partial=partial)

    def _inflate_lifetime(self, msg: GossipMsg) -> GossipMsg:
        from .messages import TraverseHop, traverse_digest
        last = msg.traverse[-1]
        if last.node_id != self.runtime.node_id:
            return msg
        lifted = last.lifetime + 1
        hop = TraverseHop(
            lifetime=lifted,
            sig=self.runtime.key.sign(
                traverse_digest(msg.commit.commit_hash(), lifted)),
            node_id=last.node_id)
        return replace(msg, traverse=msg.traverse[:-1] + (hop,))


def _flip_first_byte(batch: DataBatch) -> DataBatch:
    entry = batch.entries[0]
    payload = bytes([entry.payload[0] ^ 0xFF]) + entry.payload[1:]
    return DataBatch(entries=(DataEntry(entry.origin_seq, payload),
                              *batch.entries[1:]))


class NodeRuntime:
    def __init__(self, node_id: int, env: NodeEnv, registry: KeyService,
                 key: SigningKey, config: ProtocolConfig,
                 storage: Optional[StorageMaster] = None,
                 gossip_peers: Optional[list[int]] = None,
                 gossip_config: Optional[GossipConfig] = None):
        self.node_id = node_id
        self.env = env
        self.registry = registry
        self.key = key
        self.config = config
        self.storage = storage
        self.counters: Counter = Counter()
        self.proposers: dict[int, ProposerInstance] = {}
        self.validators: dict[int, ValidatorInstance] = {}
        self.pingers: dict[int, PingDaemon] = {}
        self.logs: dict[int, TotalOrderLog] = {}
        self.ledgers: dict[int, Ledger] = {}
        self.booth_profiles: dict[bytes, BoothProfile] = {}
        self.actor: Optional[ByzantineActor] = None
        self.gossip: Optional[GossipAgent] = None
        if gossip_config is not None and gossip_config.initial_lifetime > 0:
            self.gossip = GossipAgent(
                node_id=node_id, registry=registry, key=key,
                peers=gossip_peers or [], config=gossip_config,
                storage=storage, send=self._send_gossip)
        env.net.register(node_id, self.handle)
        behaviors = env.net.byzantine_behaviors(node_id)
        if behaviors:
            self.actor = ByzantineActor(self, behaviors)

    # -- transport ---------------------------------------------------------

    def send_msg(self, dst: int, msg, category: Category,
                 instance_key: object) -> None:
        pairs = [(dst, msg)] if self.actor is None else \
            self.actor.transform(dst, msg)
        for to, out in pairs:
            self.env.send(to, out.encode(), category, instance_key)

    def _send_gossip(self, dst: int, msg) -> None:
        category = Category.ACK if isinstance(msg, GossipAck) else Category.GOSSIP
        self.send_msg(dst, msg, category, ("gossip", msg.instance_id))

    # -- instance wiring ---------------------------------------------------

    def _shared_state(self, instance_id: int):
        log = self.logs.get(instance_id)
        if log is None:
            log = self.logs[instance_id] = TotalOrderLog()
            self.ledgers[instance_id] = Ledger(self.node_id,
                                               self.config.delta_us)
        return log, self.ledgers[instance_id]

    def add_proposer(self, instance_id: int, mmu: MembershipUnit) -> ProposerInstance:
        log, ledger = self._shared_state(instance_id)
        metrics = MetricSink()
        ctx = InstanceContext(
            instance_id=instance_id, node_id=self.node_id, env=self.env,
            registry=self.registry, key=self.key, config=self.config,
            send=lambda dst, msg, cat, sub: self.send_msg(
                dst, msg, cat, (instance_id, sub)),
            log=log, ledger=ledger, booth_profiles=self.booth_profiles,
            counters=self.counters, metrics=metrics, storage=self.storage,
            gossip=self.gossip, mmu=mmu)
        inst = ProposerInstance(
            ctx=ctx, ordering=OrderingCoordinator(ctx),
            consensus=ConsensusCoordinator(ctx), mmu=mmu)
        self.proposers[instance_id] = inst
        pinger = PingDaemon(self, mmu, instance_id)
        self.pingers[instance_id] = pinger
        self.env.net.on_availability_change(
            lambda node, up, _now: self._churn_notice(mmu, node, up))
        return inst

    def _churn_notice(self, mmu: MembershipUnit, node: int, up: bool) -> None:
        if node in mmu.pool:
            mmu.mark_availability(node, up)

    def start(self) -> None:
        for instance_id, inst in self.proposers.items():
            inst.consensus.start()
            self.pingers[instance_id].start()

    def _validator_instance(self, instance_id: int) -> ValidatorInstance:
        inst = self.validators.get(instance_id)
        if inst is None:
            log, ledger = self._shared_state(instance_id)
            ctx = InstanceContext(
                instance_id=instance_id, node_id=self.node_id, env=self.env,
                registry=self.registry, key=self.key, config=self.config,
                send=lambda dst, msg, cat, sub: self.send_msg(
                    dst, msg, cat, (instance_id, sub)),
                log=log, ledger=ledger, booth_profiles=self.booth_profiles,
                counters=self.counters, metrics=MetricSink(),
                storage=self.storage,
                committed_hook=self._on_validator_commit)
            inst = ValidatorInstance(ctx=ctx, ordering=ValidatorOrdering(ctx),
                                     consensus=ValidatorConsensus(ctx))
            self.validators[instance_id] = inst
        return inst

    def _on_validator_commit(self, commit: CommitMsg, tx) -> None:
        # the pivot fields acks from gossip receivers, so it must know the
        # commit hashes it may be acked for
        if self.gossip is None or not tx.membership_links:
            return
        if tx.membership_links[0].booth.pivot_id == self.node_id:
            self.gossip.expect_acks(commit.commit_hash())

    # -- dispatch ----------------------------------------------------------

    def handle(self, src: int, raw: bytes, category: Category) -> None:
        try:
            msg = decode_message(raw)
        except ValueError:
            self.counters[str(RejectReason.MALFORMED)] += 1
            return
        if isinstance(msg, Ping):
            pong = Pong(instance_id=msg.instance_id, sender=self.node_id,
                        seq=msg.seq, sent_at_us=msg.sent_at_us)
            self.send_msg(src, pong, Category.PING, None)
            return
        if isinstance(msg, Pong):
            pinger = self.pingers.get(msg.instance_id)
            if pinger is not None:
                pinger.on_pong(src, msg)
            return
        if isinstance(msg, GossipMsg):
            if self.gossip is not None:
                self.gossip.handle_gossip(src, msg)
            return
        if isinstance(msg, GossipAck):
            if self.gossip is not None:
                self.gossip.handle_ack(src, msg)
            return

        if isinstance(msg, (OrderReply, CommitReply)):
            prop = self.proposers.get(msg.instance_id)
            if prop is None:
                self.counters[str(RejectReason.UNKNOWN_INSTANCE)] += 1
                return
            if isinstance(msg, OrderReply):
                prop.ordering.handle_reply(src, msg)
            else:
                prop.consensus.handle_reply(src, msg)
            return

        inst = self._validator_instance(msg.instance_id)
        if isinstance(msg, PreOrder):
            inst.ordering.handle_pre_order(src, msg)
        elif isinstance(msg, OrderMsg):
            inst.ordering.handle_order(src, msg)
        elif isinstance(msg, PreCommitSeen):
            inst.consensus.handle_seen(src, msg)
        elif isinstance(msg, PreCommitUnseen):
            inst.consensus.handle_unseen(src, msg)
        elif isinstance(msg, CommitMsg):
            inst.consensus.handle_commit(src, msg)
        else:
            self.counters[str(RejectReason.MALFORMED)] += 1
