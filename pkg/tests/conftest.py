"""Shared builders for protocol structures.

These construct booths, certified log entries, and committed windows by
following the signing contracts directly, independent of the engine code,
so engine outputs can be checked against independently built expectations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pytest

from vguard.booths import BoothProfile, build_profile
from vguard.crypto import (
    BoothKeyMaterial,
    Identity,
    KeyService,
    Role,
    SigningKey,
    aggregate,
    make_identity,
    make_partial,
    setup_booth_keys,
)
from vguard.ledger import (
    CommitRecord,
    DataBatch,
    DataEntry,
    LogEntry,
    MembershipLink,
    Transaction,
    TxEntry,
    commit_cert_digest,
    order_cert_digest,
    prune_memberships,
)


@dataclass
class Pool:
    """A registered node population with signing keys."""

    registry: KeyService
    keys: dict[int, SigningKey]
    rng: np.random.Generator
    identities: dict[int, Identity] = field(default_factory=dict)

    def identity(self, node_id: int) -> Identity:
        return self.identities[node_id]


def make_pool(node_ids, seed: int = 7, pivot_id: int | None = None,
              proposer_id: int | None = None) -> Pool:
    node_ids = list(node_ids)
    proposer_id = node_ids[0] if proposer_id is None else proposer_id
    pivot_id = node_ids[1] if pivot_id is None else pivot_id
    rng = np.random.Generator(np.random.PCG64(seed))
    registry = KeyService()
    keys: dict[int, SigningKey] = {}
    identities: dict[int, Identity] = {}
    for node_id in node_ids:
        if node_id == proposer_id:
            role = Role.PROPOSER
        elif node_id == pivot_id:
            role = Role.PIVOT
        else:
            role = Role.VEHICLE
        ident, key = make_identity(node_id, role, rng.bytes(32))
        registry.register(ident)
        keys[node_id] = key
        identities[node_id] = ident
    return Pool(registry=registry, keys=keys, rng=rng, identities=identities)


def make_booth(pool: Pool, member_ids, proposer_id: int, pivot_id: int,
               threshold: int | None = None, created_at_us: int = 0
               ) -> tuple[BoothProfile, BoothKeyMaterial]:
    member_ids = sorted(member_ids)
    f = (len(member_ids) - 1) // 3
    t = 2 * f if threshold is None else threshold
    material = setup_booth_keys(member_ids, t, pool.rng)
    profile = build_profile(
        members=[pool.identity(i) for i in member_ids],
        proposer_id=proposer_id, pivot_id=pivot_id,
        threshold=t, directory=dict(material.directory),
        created_at_us=created_at_us,
    )
    pool.registry.install_booth(profile.booth_hash, material)
    return profile, material


def make_batch(pool: Pool, size: int = 3, payload_len: int = 16,
               start_seq: int = 0) -> DataBatch:
    entries = tuple(
        DataEntry(start_seq + i, pool.rng.bytes(payload_len)) for i in range(size))
    return DataBatch(entries=entries)


def default_quorum(booth: BoothProfile) -> tuple[int, ...]:
    """Pivot plus the lowest-id vehicles, 2f signers total."""
    need = 2 * booth.fault_budget
    quorum = [booth.pivot_id]
    for member in booth.member_ids:
        if len(quorum) == need:
            break
        if member not in (booth.proposer_id, booth.pivot_id):
            quorum.append(member)
    return tuple(sorted(quorum))


def certify_entry(pool: Pool, booth: BoothProfile, material: BoothKeyMaterial,
                  ordering_id: int, batch: DataBatch,
                  quorum: tuple[int, ...] | None = None,
                  appended_at_us: int = 0) -> LogEntry:
    quorum = default_quorum(booth) if quorum is None else quorum
    payload = order_cert_digest(ordering_id, batch.batch_hash, booth.booth_hash)
    partials = [
        make_partial(pool.keys[m], payload,
                     pool.registry.booth_share(booth.booth_hash, m))
        for m in quorum
    ]
    cert = aggregate(partials, material)
    proposer_partial = make_partial(
        pool.keys[booth.proposer_id], payload,
        pool.registry.booth_share(booth.booth_hash, booth.proposer_id))
    return LogEntry(
        ordering_id=ordering_id, batch=batch, quorum=tuple(sorted(quorum)),
        booth_hash=booth.booth_hash, cert=cert, appended_at_us=appended_at_us,
        reply_set=tuple(partials) + (proposer_partial,),
    )


def commit_window(pool: Pool, booth: BoothProfile, material: BoothKeyMaterial,
                  window_start_us: int, window_len_us: int,
                  entries: list[LogEntry],
                  booth_lookup=None) -> tuple[CommitRecord, Transaction]:
    lookup = booth_lookup or (lambda h: booth)
    links = prune_memberships(entries, lookup)
    tx = Transaction(
        window_start_us=window_start_us, window_len_us=window_len_us,
        entries=tuple(TxEntry(e.ordering_id, e.batch, e.cert) for e in entries),
        membership_links=tuple(links),
    )
    quorum = default_quorum(booth)
    payload = commit_cert_digest(window_start_us, tx.tx_hash, booth.booth_hash)
    partials = [
        make_partial(pool.keys[m], payload,
                     pool.registry.booth_share(booth.booth_hash, m))
        for m in quorum
    ]
    record = CommitRecord(
        consensus_id=window_start_us, quorum=quorum,
        booth_hash=booth.booth_hash, cert=aggregate(partials, material),
        tx_hash=tx.tx_hash, committed_at_us=window_start_us + window_len_us,
    )
    return record, tx


@pytest.fixture
def pool4() -> Pool:
    return make_pool([1, 2, 3, 4])


@pytest.fixture
def booth4(pool4) -> tuple[BoothProfile, BoothKeyMaterial]:
    return make_booth(pool4, [1, 2, 3, 4], proposer_id=1, pivot_id=2)
