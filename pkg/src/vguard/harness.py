"""Benchmark harness: build a cluster, drive workload, report.

A run is described by a RunSpec, executed deterministically from its seed,
and summarized into a plain-dict report safe to serialize and diff: the
same spec always yields byte-identical reports, ledgers, and traces. The
harness wires the whole stack (simulated network, runtimes, membership
units, workload sources, churn and byzantine schedules), runs the clock,
audits every correct node's ledger, and aggregates throughput, latency
percentiles, message counts, and diagnostic counters.

Sweeps rerun a base spec across one varying dimension, deriving a fresh
seed per cell so cells are independent but reproducible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .crypto import Identity, KeyService, Role, SigningKey, make_identity
from .errors import ConfigInvalid, VerificationFailed
from .gossip import GossipConfig
from .ledger import ChainCheck, DataBatch, DataEntry, Ledger, verify_chain
from .mmu import MembershipUnit, MmuConfig
from .netsim import Category, ChurnEvent, Network, NodeEnv, SimConfig
from .node import MetricSink, NodeRuntime, ProtocolConfig
from .storage import RetentionPolicy, StorageMaster

PIVOT_ID = 1


@dataclass(frozen=True)
class RunSpec:
    booth_size: int = 4                  # 3f+1 members per booth
    pool: Optional[int] = None           # total vehicles; defaults to booth_size
    batch_size: int = 8                  # data entries per ordering round
    gamma: int = 1                       # co-located proposer instances
    delta_us: int = 100_000              # consensus window length
    lambda0: int = 0                     # gossip lifetime; 0 disables gossip
    tau_us: int = 24 * 3600 * 1_000_000  # temp storage age bound
    duration_ms: float = 1_000.0         # workload window
    grace_ms: float = 400.0              # drain time after workload stops
    rate_per_s: Optional[float] = 200.0  # batches per second; None saturates
    payload_bytes: int = 64
    seed: int = 1
    sim: SimConfig = field(default_factory=lambda: SimConfig(seed=0))
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    mmu: MmuConfig = field(default_factory=MmuConfig)
    churn: tuple[ChurnEvent, ...] = ()
    byzantine: tuple[tuple[int, tuple[str, ...]], ...] = ()
    overlay: Optional[tuple[tuple[int, tuple[int, ...]], ...]] = None
    strict_audit: bool = True
    label: str = ""

    def validate(self) -> "RunSpec":
        if self.booth_size < 4 or (self.booth_size - 1) % 3 != 0:
            raise ConfigInvalid(
                f"booth size must be 3f+1 with f >= 1, got {self.booth_size}")
        pool = self.pool if self.pool is not None else self.booth_size
        if pool < self.booth_size:
            raise ConfigInvalid(f"pool {pool} smaller than booth {self.booth_size}")
        if self.gamma < 1 or self.gamma > pool - 1:
            raise ConfigInvalid(f"gamma must be in [1, pool-1], got {self.gamma}")
        if self.batch_size < 1:
            raise ConfigInvalid("batch size must be positive")
        if self.delta_us <= 0:
            raise ConfigInvalid("window length must be positive")
        if self.lambda0 < 0:
            raise ConfigInvalid("gossip lifetime cannot be negative")
        if self.duration_ms <= 0 or self.grace_ms < 0:
            raise ConfigInvalid("duration must be positive, grace non-negative")
        if self.protocol.delta_us != self.delta_us:
            return replace(self, protocol=replace(self.protocol,
                                                  delta_us=self.delta_us))
        return self

    @property
    def pool_size(self) -> int:
        return self.pool if self.pool is not None else self.booth_size

    @property
    def fault_budget(self) -> int:
        return (self.booth_size - 1) // 3


@dataclass
class InstancePlan:
    instance_id: int
    proposer_id: int
    pivot_id: int


def plan_instances(spec: RunSpec) -> list[InstancePlan]:
    """Instance k's proposer is the k-th non-pivot node; the pivot is global."""
    return [InstancePlan(instance_id=k, proposer_id=PIVOT_ID + k,
                         pivot_id=PIVOT_ID)
            for k in range(1, spec.gamma + 1)]


def default_overlay(node_ids: list[int]) -> dict[int, list[int]]:
    """Ring plus second-neighbor chords; degree four, deterministic."""
    n = len(node_ids)
    out: dict[int, list[int]] = {}
    for idx, node in enumerate(node_ids):
        peers = {node_ids[(idx + d) % n] for d in (-2, -1, 1, 2)} - {node}
        out[node] = sorted(peers)
    return out


class Workload:
    """Feeds one proposer instance with fixed-size batches."""

    def __init__(self, runtime: NodeRuntime, instance, spec: RunSpec,
                 rng: np.random.Generator):
        self.runtime = runtime
        self.instance = instance
        self.spec = spec
        self.rng = rng
        self.origin_seq = 0
        self.submitted_batches = 0
        self.stopped = False

    def start(self) -> None:
        env = self.runtime.env
        if self.spec.rate_per_s is not None:
            period = 1000.0 / self.spec.rate_per_s
            env.every(period, self._submit_one, start_at_ms=period)
        else:
            self.instance.ctx.metrics.on_capacity = self._fill
            env.after(0.5, self._fill)

    def stop(self) -> None:
        self.stopped = True

    def _make_batch(self) -> DataBatch:
        entries = []
        for _ in range(self.spec.batch_size):
            self.origin_seq += 1
            entries.append(DataEntry(self.origin_seq,
                                     self.rng.bytes(self.spec.payload_bytes)))
        return DataBatch(tuple(entries))

    def _submit_one(self) -> None:
        if self.stopped:
            return
        self.submitted_batches += 1
        self.instance.ordering.submit(self._make_batch())

    def _fill(self) -> None:
        if self.stopped:
            return
        cap = self.spec.protocol.max_inflight * 2
        while self.instance.ordering.inflight() < cap:
            self.submitted_batches += 1
            self.instance.ordering.submit(self._make_batch())


@dataclass
class RunResult:
    spec: RunSpec
    report: dict
    net: Network
    runtimes: dict[int, NodeRuntime]
    workloads: dict[int, Workload]
    audits: dict[tuple[int, int], ChainCheck]
    identities: list[Identity]

    def ledger(self, instance_id: int, node_id: int) -> Optional[Ledger]:
        return self.runtimes[node_id].ledgers.get(instance_id)


def _build_identities(spec: RunSpec, seed_seq: np.random.SeedSequence
                      ) -> tuple[list[Identity], dict[int, SigningKey], KeyService]:
    registry = KeyService()
    rng = np.random.default_rng(seed_seq)
    proposer_ids = {p.proposer_id for p in plan_instances(spec)}
    identities, keys = [], {}
    for node_id in range(1, spec.pool_size + 1):
        if node_id == PIVOT_ID:
            role = Role.PIVOT
        elif node_id in proposer_ids:
            role = Role.PROPOSER
        else:
            role = Role.VEHICLE
        ident, key = make_identity(node_id, role, rng.bytes(32))
        registry.register(ident)
        identities.append(ident)
        keys[node_id] = key
    return identities, keys, registry


def run(spec: RunSpec, net=None) -> RunResult:
    """Execute one run. `net` defaults to a fresh simulated Network; pass a
    transport with the same surface (see bench.RealtimeNetwork) to reuse the
    setup, workload, and audit machinery over a different clock."""
    spec = spec.validate()
    master = np.random.SeedSequence(spec.seed)
    key_seq, net_seed_seq, workload_seq, mmu_seq = master.spawn(4)
    net_seed = int(net_seed_seq.generate_state(1)[0])

    identities, keys, registry = _build_identities(spec, key_seq)
    node_ids = [ident.node_id for ident in identities]
    if net is None:
        net = Network(replace(spec.sim, seed=net_seed))
    for node_id, behaviors in spec.byzantine:
        net.wrap_byzantine(node_id, list(behaviors))

    overlay = (dict((n, list(ps)) for n, ps in spec.overlay)
               if spec.overlay is not None else default_overlay(node_ids))
    gossip_cfg = (GossipConfig(initial_lifetime=spec.lambda0)
                  if spec.lambda0 > 0 else None)

    runtimes: dict[int, NodeRuntime] = {}
    for node_id in node_ids:
        env = NodeEnv(net, node_id)
        runtimes[node_id] = NodeRuntime(
            node_id, env, registry, keys[node_id], spec.protocol,
            storage=StorageMaster(node_id,
                                  RetentionPolicy(temp_ttl_us=spec.tau_us)),
            gossip_peers=overlay.get(node_id, []),
            gossip_config=gossip_cfg)

    workloads: dict[int, Workload] = {}
    mmu_children = mmu_seq.spawn(spec.gamma)
    wl_children = workload_seq.spawn(spec.gamma)
    for plan, mmu_child, wl_child in zip(plan_instances(spec), mmu_children,
                                         wl_children):
        runtime = runtimes[plan.proposer_id]
        mmu = MembershipUnit(
            instance_id=plan.instance_id, proposer_id=plan.proposer_id,
            pivot_id=plan.pivot_id, pool=identities, registry=registry,
            config=replace(spec.mmu, booth_size=spec.booth_size),
            key_rng=np.random.default_rng(mmu_child),
            now_us=runtime.env.now_us)
        instance = runtime.add_proposer(plan.instance_id, mmu)
        workloads[plan.instance_id] = Workload(
            runtime, instance, spec, np.random.default_rng(wl_child))

    for runtime in runtimes.values():
        runtime.start()
    for workload in workloads.values():
        workload.start()
    net.inject_churn(list(spec.churn))

    net.run_until(spec.duration_ms)
    for workload in workloads.values():
        workload.stop()
    net.run_until(spec.duration_ms + spec.grace_ms)
    quiesce = getattr(net, "quiesce", None)
    if quiesce is not None:
        quiesce()

    audits = _audit(spec, runtimes, registry)
    report = _report(spec, net, runtimes, workloads, audits)
    return RunResult(spec=spec, report=report, net=net, runtimes=runtimes,
                     workloads=workloads, audits=audits, identities=identities)


def _byzantine_nodes(spec: RunSpec) -> set[int]:
    return {node_id for node_id, _ in spec.byzantine}


def _audit(spec: RunSpec, runtimes: dict[int, NodeRuntime],
           registry: KeyService) -> dict[tuple[int, int], ChainCheck]:
    """verify_chain on every ledger every correct node holds. Proposer
    ledgers face the strict window-tiling audit when the run was clean."""
    bad = _byzantine_nodes(spec)
    audits: dict[tuple[int, int], ChainCheck] = {}
    for plan in plan_instances(spec):
        for node_id, runtime in runtimes.items():
            ledger = runtime.ledgers.get(plan.instance_id)
            if ledger is None:
                continue
            strict = (spec.strict_audit and node_id == plan.proposer_id
                      and not bad and not spec.churn)
            horizon = None
            if strict:
                prop = runtime.proposers[plan.instance_id]
                horizon = prop.consensus.release_next_us
            check = verify_chain(ledger, registry, strict=strict,
                                 horizon_us=horizon)
            audits[(plan.instance_id, node_id)] = check
            if not check.ok and node_id not in bad:
                raise VerificationFailed(
                    f"instance {plan.instance_id} node {node_id}: "
                    f"{check.first_violation}")
    return audits


def _percentiles_ms(values_us: list[int]) -> dict[str, float]:
    if not values_us:
        return {"p50": 0.0, "p95": 0.0, "p99": 0.0}
    arr = np.asarray(values_us, dtype=np.float64) / 1000.0
    return {"p50": round(float(np.percentile(arr, 50)), 3),
            "p95": round(float(np.percentile(arr, 95)), 3),
            "p99": round(float(np.percentile(arr, 99)), 3)}


def _ordering_message_stats(net: Network, instance_id: int) -> dict:
    per_round: dict[int, int] = {}
    for key, count in net.instance_counts(Category.ORDERING).items():
        if isinstance(key, tuple) and len(key) == 2 and key[0] == instance_id:
            per_round[key[1]] = per_round.get(key[1], 0) + count
    if not per_round:
        return {"rounds": 0, "mean_per_round": 0.0, "max_per_round": 0}
    counts = list(per_round.values())
    return {"rounds": len(counts),
            "mean_per_round": round(sum(counts) / len(counts), 3),
            "max_per_round": max(counts)}


def _report(spec: RunSpec, net: Network, runtimes: dict[int, NodeRuntime],
            workloads: dict[int, Workload],
            audits: dict[tuple[int, int], ChainCheck]) -> dict:
    duration_s = spec.duration_ms / 1000.0
    instances = []
    for plan in plan_instances(spec):
        runtime = runtimes[plan.proposer_id]
        inst = runtime.proposers[plan.instance_id]
        metrics: MetricSink = inst.ctx.metrics
        ledger = runtime.ledgers[plan.instance_id]
        instances.append({
            "instance": plan.instance_id,
            "proposer": plan.proposer_id,
            "submitted_batches": workloads[plan.instance_id].submitted_batches,
            "ordered_batches": metrics.ordered_batches,
            "ordered_entries": metrics.ordered_entries,
            "committed_windows": metrics.committed_windows,
            "committed_batches": metrics.committed_batches,
            "committed_entries": metrics.committed_entries,
            "abandoned_batches": metrics.abandoned_batches,
            "ordering_tps": round(metrics.ordered_entries / duration_s, 3),
            "consensus_tps": round(metrics.committed_entries / duration_s, 3),
            "ordering_latency_ms": _percentiles_ms(metrics.ordering_latency_us),
            "commit_latency_ms": _percentiles_ms(metrics.commit_latency_us),
            "booth_changes": inst.mmu.booth_changes,
            "covered_empty_windows": len(ledger.covered_empty),
            "ordering_messages": _ordering_message_stats(net, plan.instance_id),
        })
    gossip_stats = {}
    for node_id in sorted(runtimes):
        agent = runtimes[node_id].gossip
        if agent is not None:
            gossip_stats[str(node_id)] = {
                "stored": agent.stats.stored,
                "forwarded": agent.stats.forwarded,
                "acks_sent": agent.stats.acks_sent,
                "acks_received": agent.stats.acks_received,
            }
    return {
        "version": __version__,
        "label": spec.label,
        "seed": spec.seed,
        "config": {
            "booth_size": spec.booth_size,
            "pool": spec.pool_size,
            "batch_size": spec.batch_size,
            "gamma": spec.gamma,
            "delta_us": spec.delta_us,
            "lambda0": spec.lambda0,
            "duration_ms": spec.duration_ms,
            "rate_per_s": spec.rate_per_s,
            "gst_ms": spec.sim.gst_ms,
            "drop_rate": spec.sim.drop_rate,
        },
        "instances": instances,
        "messages_by_category": dict(sorted(net.totals_by_category().items())),
        "counters": {str(n): dict(sorted(runtimes[n].counters.items()))
                     for n in sorted(runtimes) if runtimes[n].counters},
        "gossip": gossip_stats,
        "audits": {f"{i}:{n}": bool(check.ok)
                   for (i, n), check in sorted(audits.items())},
        "storage": {str(n): runtimes[n].storage.totals()
                    for n in sorted(runtimes) if runtimes[n].storage},
    }


def write_artifacts(result: RunResult, outdir: Path) -> list[Path]:
    """report.json, report.csv, per-node ledgers, and the trace if taken."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    report_path = outdir / "report.json"
    report_path.write_text(json.dumps(result.report, indent=2, sort_keys=True)
                           + "\n", encoding="utf-8")
    written.append(report_path)

    csv_path = outdir / "report.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        rows = [_flatten(inst) for inst in result.report["instances"]]
        if rows:
            writer = csv.DictWriter(fh, fieldnames=sorted(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    written.append(csv_path)

    for plan in plan_instances(result.spec):
        for node_id, runtime in sorted(result.runtimes.items()):
            ledger = runtime.ledgers.get(plan.instance_id)
            if ledger is None:
                continue
            path = outdir / f"ledger-{plan.instance_id}-{node_id}.jsonl"
            ledger.export_jsonl(path, result.identities)
            written.append(path)

    if result.net.config.trace:
        trace_path = outdir / "trace.jsonl"
        with trace_path.open("w", encoding="utf-8") as fh:
            for event in result.net.trace:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
        written.append(trace_path)
    return written


def _flatten(obj: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in obj.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, f"{name}."))
        else:
            out[name] = value
    return out


def seed_for_cell(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def sweep(base: RunSpec, dimension: str, values: list) -> dict:
    """Rerun the base spec once per value of one RunSpec field."""
    cells = []
    for index, value in enumerate(values):
        cell_spec = replace(base, **{dimension: value},
                            seed=seed_for_cell(base.seed, index),
                            label=f"{dimension}={value}")
        result = run(cell_spec)
        cells.append({"value": value, "report": result.report})
    return {"dimension": dimension, "base_seed": base.seed, "cells": cells}


def load_spec_file(path: Path) -> RunSpec:
    """RunSpec from a JSON file; nested sim/protocol/mmu dicts supported."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return spec_from_dict(data)


def spec_from_dict(data: dict) -> RunSpec:
    kwargs = dict(data)
    if "sim" in kwargs and isinstance(kwargs["sim"], dict):
        kwargs["sim"] = SimConfig.from_dict({"seed": 0, **kwargs["sim"]})
    if "protocol" in kwargs and isinstance(kwargs["protocol"], dict):
        kwargs["protocol"] = ProtocolConfig(**kwargs["protocol"])
    if "mmu" in kwargs and isinstance(kwargs["mmu"], dict):
        kwargs["mmu"] = MmuConfig(**kwargs["mmu"])
    if "churn" in kwargs and kwargs["churn"]:
        kwargs["churn"] = tuple(
            ChurnEvent(**event) if isinstance(event, dict) else event
            for event in kwargs["churn"])
    if "byzantine" in kwargs and isinstance(kwargs["byzantine"], dict):
        kwargs["byzantine"] = tuple(
            (int(node), tuple(behaviors))
            for node, behaviors in sorted(kwargs["byzantine"].items()))
    unknown = set(kwargs) - set(RunSpec.__dataclass_fields__)
    if unknown:
        raise ConfigInvalid(f"unknown spec fields: {sorted(unknown)}")
    return RunSpec(**kwargs)
