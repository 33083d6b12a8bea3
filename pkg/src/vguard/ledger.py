"""Log entries, windowed transactions, and the two-chain ledger.

The total order log holds what ordering produced: one certified entry per
ordering id. Consensus slices the proposer's log into fixed windows, prunes
repeated membership data into run-length links, and commits the result as a
transaction plus a commit record. A node's ledger is therefore two chains
that share links: the data chain (commit record + transaction per window)
and the membership chain (the pruned booth/quorum runs, in commit order).

The transaction hash deliberately covers only the agreed data: window
bounds and the ordered (ordering id, batch hash) pairs. Membership is
certified per-entry by the ordering certificate instead, which is what
lets two runs that shuttle across different booths commit byte-identical
transaction hashes for the same input stream.
"""

from __future__ import annotations

import json
import logging
from bisect import bisect_left, insort
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Optional, Sequence

from .booths import BoothProfile
from .codec import digest, pack, Reader
from .crypto import (
    AggregateSignature,
    Identity,
    KeyService,
    PartialSignature,
    Role,
    verify_aggregate,
    verify_partial_set,
)
from .errors import DuplicateOrderingId, WindowError

logger = logging.getLogger(__name__)


# -- data entries and batches --------------------------------------------

@dataclass(frozen=True)
class DataEntry:
    origin_seq: int
    payload: bytes

    def to_field(self) -> list:
        return [self.origin_seq, self.payload]


@dataclass(frozen=True)
class DataBatch:
    """Up to batch-size entries bound together by one hash."""

    entries: tuple[DataEntry, ...]

    @cached_property
    def batch_hash(self) -> bytes:
        return digest("batch", [e.to_field() for e in self.entries])

    def __len__(self) -> int:
        return len(self.entries)

    def to_field(self) -> list:
        return [[e.to_field() for e in self.entries]]

    @classmethod
    def read_from(cls, r: Reader) -> "DataBatch":
        if r.seq_len() != 1:
            raise ValueError("malformed batch")
        entries = []
        for _ in range(r.seq_len()):
            if r.seq_len() != 2:
                raise ValueError("malformed data entry")
            seq = r.u64()
            payload = r.bytes_()
            entries.append(DataEntry(seq, payload))
        return cls(entries=tuple(entries))


def order_cert_digest(ordering_id: int, batch_hash: bytes, booth_hash: bytes) -> bytes:
    """Digest certified by ordering: binds id, data, and ordering booth."""
    return digest("order-cert", ordering_id, batch_hash, booth_hash)


def commit_cert_digest(window_start_us: int, tx_hash: bytes, booth_hash: bytes) -> bytes:
    """Digest certified by consensus: binds window, data, consensus booth."""
    return digest("commit-cert", window_start_us, tx_hash, booth_hash)


# -- total order log ------------------------------------------------------

@dataclass(frozen=True)
class LogEntry:
    """One ordered batch with its certificate.

    reply_set is retained only where it was collected (the proposer); it
    includes the proposer's own endorsement, so it carries 2f+1 individually
    verifiable signatures for nodes outside the ordering booth.
    """

    ordering_id: int
    batch: DataBatch
    quorum: tuple[int, ...]
    booth_hash: bytes
    cert: AggregateSignature
    appended_at_us: int = 0
    reply_set: tuple[PartialSignature, ...] = ()

    @property
    def batch_hash(self) -> bytes:
        return self.batch.batch_hash

    def cert_digest(self) -> bytes:
        return order_cert_digest(self.ordering_id, self.batch_hash, self.booth_hash)


class TotalOrderLog:
    """Append-only map from ordering id to certified entry.

    Conflicting appends for one id raise DuplicateOrderingId; that exception
    firing on a correct node is the total-order violation signal the safety
    suites assert against. Re-appending identical content is a no-op so that
    duplicated deliveries stay harmless.
    """

    def __init__(self):
        self._entries: dict[int, LogEntry] = {}
        self._ids: list[int] = []          # sorted, for range scans
        self._by_time: list[tuple[int, int]] = []   # (appended_at_us, id), proposer side

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, ordering_id: int) -> bool:
        return ordering_id in self._entries

    def get(self, ordering_id: int) -> Optional[LogEntry]:
        return self._entries.get(ordering_id)

    def append(self, entry: LogEntry) -> bool:
        """Returns True if the entry was new, False for an identical replay."""
        existing = self._entries.get(entry.ordering_id)
        if existing is not None:
            if existing.batch_hash != entry.batch_hash:
                raise DuplicateOrderingId(
                    f"ordering id {entry.ordering_id} already bound to a different batch")
            return False
        self._entries[entry.ordering_id] = entry
        insort(self._ids, entry.ordering_id)
        insort(self._by_time, (entry.appended_at_us, entry.ordering_id))
        return True

    def max_id(self) -> int:
        return self._ids[-1] if self._ids else 0

    def id_range(self, first_id: int, last_id: int) -> Optional[list[LogEntry]]:
        """Entries first_id..last_id inclusive; None if any id is missing."""
        out = []
        for ordering_id in range(first_id, last_id + 1):
            entry = self._entries.get(ordering_id)
            if entry is None:
                return None
            out.append(entry)
        return out

    def window_slice(self, start_us: int, end_us: int) -> list[LogEntry]:
        """Entries appended in [start_us, end_us), in append order."""
        if end_us <= start_us:
            raise WindowError(f"empty or inverted window [{start_us}, {end_us})")
        lo = bisect_left(self._by_time, (start_us, -1))
        hi = bisect_left(self._by_time, (end_us, -1))
        return [self._entries[i] for _, i in self._by_time[lo:hi]]


# -- membership pruning ---------------------------------------------------

@dataclass(frozen=True)
class MembershipLink:
    """Run-length record: entries first_id..last_id share booth and quorum."""

    booth: BoothProfile
    quorum: tuple[int, ...]
    first_id: int
    last_id: int

    def to_field(self) -> list:
        return [self.booth.to_field(), list(self.quorum), self.first_id, self.last_id]

    @classmethod
    def read_from(cls, r: Reader) -> "MembershipLink":
        if r.seq_len() != 4:
            raise ValueError("malformed membership link")
        booth = BoothProfile.read_from(r)
        quorum = tuple(r.u64() for _ in range(r.seq_len()))
        first_id = r.u64()
        last_id = r.u64()
        return cls(booth=booth, quorum=quorum, first_id=first_id, last_id=last_id)


def prune_memberships(entries: Sequence[LogEntry],
                      booth_lookup: Callable[[bytes], BoothProfile]) -> list[MembershipLink]:
    """Collapse consecutive entries sharing (booth, quorum) into links."""
    links: list[MembershipLink] = []
    for entry in entries:
        if (links
                and links[-1].booth.booth_hash == entry.booth_hash
                and links[-1].quorum == entry.quorum
                and links[-1].last_id + 1 == entry.ordering_id):
            links[-1] = MembershipLink(
                booth=links[-1].booth,
                quorum=links[-1].quorum,
                first_id=links[-1].first_id,
                last_id=entry.ordering_id,
            )
        else:
            links.append(MembershipLink(
                booth=booth_lookup(entry.booth_hash),
                quorum=entry.quorum,
                first_id=entry.ordering_id,
                last_id=entry.ordering_id,
            ))
    return links


def expand_memberships(links: Sequence[MembershipLink]
                       ) -> dict[int, tuple[BoothProfile, tuple[int, ...]]]:
    """Invert pruning: ordering id -> (booth, quorum)."""
    out: dict[int, tuple[BoothProfile, tuple[int, ...]]] = {}
    for link in links:
        for ordering_id in range(link.first_id, link.last_id + 1):
            out[ordering_id] = (link.booth, link.quorum)
    return out


# -- transactions and commit records -------------------------------------

@dataclass(frozen=True)
class TxEntry:
    """Entry as carried inside a committed transaction."""

    ordering_id: int
    batch: DataBatch
    cert: AggregateSignature

    def to_field(self) -> list:
        return [self.ordering_id, self.batch.to_field(),
                _agg_to_field(self.cert)]

    @classmethod
    def read_from(cls, r: Reader) -> "TxEntry":
        if r.seq_len() != 3:
            raise ValueError("malformed tx entry")
        ordering_id = r.u64()
        batch = DataBatch.read_from(r)
        cert = _agg_read_from(r)
        return cls(ordering_id=ordering_id, batch=batch, cert=cert)


def _agg_to_field(agg: AggregateSignature) -> list:
    return [agg.threshold, agg.sig_bytes, agg.signer_set_digest]


def _agg_read_from(r: Reader) -> AggregateSignature:
    if r.seq_len() != 3:
        raise ValueError("malformed aggregate signature")
    return AggregateSignature(threshold=r.u64(), sig_bytes=r.bytes_(),
                              signer_set_digest=r.bytes_())


def _partial_to_field(p: PartialSignature) -> list:
    return [p.signer, p.payload_digest, p.sig_bytes]


def _partial_read_from(r: Reader) -> PartialSignature:
    if r.seq_len() != 3:
        raise ValueError("malformed partial signature")
    return PartialSignature(signer=r.u64(), payload_digest=r.bytes_(),
                            sig_bytes=r.bytes_())


def tx_hash_over(window_start_us: int, window_len_us: int,
                 id_hash_pairs: Iterable[tuple[int, bytes]]) -> bytes:
    return digest("tx", window_start_us, window_len_us,
                  [[i, h] for i, h in id_hash_pairs])


@dataclass(frozen=True)
class Transaction:
    """All entries a consensus window agreed on, memberships pruned."""

    window_start_us: int
    window_len_us: int
    entries: tuple[TxEntry, ...]
    membership_links: tuple[MembershipLink, ...]

    @cached_property
    def tx_hash(self) -> bytes:
        return tx_hash_over(
            self.window_start_us, self.window_len_us,
            [(e.ordering_id, e.batch.batch_hash) for e in self.entries])

    def entry_count(self) -> int:
        return sum(len(e.batch) for e in self.entries)

    def to_field(self) -> list:
        return [
            self.window_start_us,
            self.window_len_us,
            [e.to_field() for e in self.entries],
            [l.to_field() for l in self.membership_links],
        ]

    def encode(self) -> bytes:
        return pack(self.to_field())

    @classmethod
    def read_from(cls, r: Reader) -> "Transaction":
        if r.seq_len() != 4:
            raise ValueError("malformed transaction")
        start = r.u64()
        length = r.u64()
        entries = tuple(TxEntry.read_from(r) for _ in range(r.seq_len()))
        links = tuple(MembershipLink.read_from(r) for _ in range(r.seq_len()))
        return cls(window_start_us=start, window_len_us=length,
                   entries=entries, membership_links=links)

    @classmethod
    def decode(cls, raw: bytes) -> "Transaction":
        r = Reader(raw)
        tx = cls.read_from(r)
        r.expect_done()
        return tx


@dataclass(frozen=True)
class CommitRecord:
    consensus_id: int                  # window start, microseconds
    quorum: tuple[int, ...]
    booth_hash: bytes                  # consensus booth
    cert: AggregateSignature
    tx_hash: bytes
    committed_at_us: int = 0

    def cert_digest(self) -> bytes:
        return commit_cert_digest(self.consensus_id, self.tx_hash, self.booth_hash)


# -- the ledger -----------------------------------------------------------

@dataclass
class CommittedWindow:
    record: CommitRecord
    tx: Transaction
    reply_sets: dict[int, tuple[PartialSignature, ...]] = field(default_factory=dict)


class Ledger:
    """Per-node committed state: data chain plus membership chain."""

    def __init__(self, node_id: int, window_len_us: int):
        self.node_id = node_id
        self.window_len_us = window_len_us
        self._windows: dict[int, CommittedWindow] = {}
        self._order: list[int] = []                   # committed ts, sorted
        self.covered_empty: set[int] = set()          # proposer-side only
        self.booth_table: dict[bytes, BoothProfile] = {}
        self.membership_chain: list[MembershipLink] = []

    def __len__(self) -> int:
        return len(self._order)

    def committed_windows(self) -> list[int]:
        return list(self._order)

    def window(self, ts_us: int) -> Optional[CommittedWindow]:
        return self._windows.get(ts_us)

    def has_window(self, ts_us: int) -> bool:
        return ts_us in self._windows

    def note_booth(self, booth: BoothProfile) -> None:
        self.booth_table.setdefault(booth.booth_hash, booth)

    def append_commit(self, record: CommitRecord, tx: Transaction,
                      reply_sets: Optional[dict[int, tuple[PartialSignature, ...]]] = None
                      ) -> None:
        ts = record.consensus_id
        if ts in self._windows:
            if self._windows[ts].record.tx_hash != record.tx_hash:
                raise DuplicateOrderingId(
                    f"window {ts} already committed with a different transaction")
            return
        self._windows[ts] = CommittedWindow(record=record, tx=tx,
                                            reply_sets=dict(reply_sets or {}))
        insort(self._order, ts)
        for link in tx.membership_links:
            self.booth_table.setdefault(link.booth.booth_hash, link.booth)
            self.membership_chain.append(link)

    def mark_covered(self, ts_us: int) -> None:
        """Record a window that held no entries and needed no round."""
        if ts_us not in self._windows:
            self.covered_empty.add(ts_us)

    def all_entries(self) -> list[TxEntry]:
        out: list[TxEntry] = []
        for ts in self._order:
            out.extend(self._windows[ts].tx.entries)
        return out

    # -- export / import --------------------------------------------------

    def export_jsonl(self, path, identities: Optional[Iterable[Identity]] = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.export_lines(identities):
                fh.write(line)
                fh.write("\n")

    def export_lines(self, identities: Optional[Iterable[Identity]] = None) -> list[str]:
        def dump(obj) -> str:
            return json.dumps(obj, sort_keys=True, separators=(",", ":"))

        lines = [dump({"kind": "meta", "version": 1, "node": self.node_id,
                       "window_len_us": self.window_len_us})]
        for ident in identities or ():
            lines.append(dump({
                "kind": "identity", "node_id": ident.node_id,
                "role": ident.role.value, "verify_key": ident.verify_key.hex(),
                "net_addr": ident.net_addr,
            }))
        for booth_hash in sorted(self.booth_table):
            lines.append(dump({"kind": "booth",
                               "profile": _booth_to_json(self.booth_table[booth_hash])}))
        for ts in self._order:
            win = self._windows[ts]
            lines.append(dump({
                "kind": "commit",
                "record": _record_to_json(win.record),
                "tx": _tx_to_json(win.tx),
                "reply_sets": {
                    str(i): [_partial_to_json(p) for p in parts]
                    for i, parts in sorted(win.reply_sets.items())
                },
            }))
        if self.covered_empty:
            lines.append(dump({"kind": "covered", "ts": sorted(self.covered_empty)}))
        return lines

    @classmethod
    def import_jsonl(cls, path) -> tuple["Ledger", KeyService]:
        registry = KeyService()
        ledger: Optional[Ledger] = None
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                raw = raw.strip()
                if not raw:
                    continue
                obj = json.loads(raw)
                kind = obj.get("kind")
                if kind == "meta":
                    ledger = cls(obj["node"], obj["window_len_us"])
                elif ledger is None:
                    raise ValueError("ledger export must start with a meta line")
                elif kind == "identity":
                    registry.register(Identity(
                        node_id=obj["node_id"], role=Role(obj["role"]),
                        verify_key=bytes.fromhex(obj["verify_key"]),
                        net_addr=obj["net_addr"]))
                elif kind == "booth":
                    booth = _booth_from_json(obj["profile"])
                    ledger.note_booth(booth)
                elif kind == "commit":
                    record = _record_from_json(obj["record"])
                    tx = _tx_from_json(obj["tx"])
                    replies = {
                        int(i): tuple(_partial_from_json(p) for p in parts)
                        for i, parts in obj.get("reply_sets", {}).items()
                    }
                    ledger.append_commit(record, tx, replies)
                elif kind == "covered":
                    for ts in obj["ts"]:
                        ledger.mark_covered(ts)
                else:
                    raise ValueError(f"unknown ledger line kind {kind!r}")
        if ledger is None:
            raise ValueError("empty ledger export")
        return ledger, registry


# -- chain verification ---------------------------------------------------

@dataclass
class ChainCheck:
    ok: bool
    violations: list[str] = field(default_factory=list)
    windows_checked: int = 0
    entries_checked: int = 0

    def __bool__(self) -> bool:
        return self.ok

    @property
    def first_violation(self) -> Optional[str]:
        return self.violations[0] if self.violations else None


def verify_chain(ledger: Ledger, registry: Optional[KeyService] = None,
                 strict: bool = False, horizon_us: Optional[int] = None) -> ChainCheck:
    """Audit a ledger.

    Always checked: commit certificates (validity, quorum subset and size,
    pivot present, signer binding), transaction hashes, per-entry ordering
    certificates against their membership link, window monotonicity, and
    non-overlapping increasing ordering-id ranges. When reply sets were
    retained they are cross-checked with individually anchored signatures.

    strict adds the proposer/auditor view: ordering ids must be gapless
    starting at 1 across the whole chain, and committed plus covered-empty
    windows must tile [0, horizon_us) on the window grid.
    """
    check = ChainCheck(ok=True)

    def fail(msg: str) -> None:
        check.ok = False
        check.violations.append(msg)

    delta = ledger.window_len_us
    prev_ts = None
    prev_last_id = 0
    expected_next_id = 1
    for ts in ledger.committed_windows():
        win = ledger.window(ts)
        record, tx = win.record, win.tx
        check.windows_checked += 1
        if ts % delta != 0:
            fail(f"window {ts} not aligned to {delta}us grid")
        if prev_ts is not None and ts <= prev_ts:
            fail(f"window order violated at {ts}")
        prev_ts = ts
        if record.consensus_id != tx.window_start_us or tx.window_len_us != delta:
            fail(f"window {ts}: record/tx window mismatch")
        if record.tx_hash != tx.tx_hash:
            fail(f"window {ts}: recorded tx hash differs from transaction")
        booth = ledger.booth_table.get(record.booth_hash)
        if booth is None:
            fail(f"window {ts}: unknown consensus booth")
        else:
            need = 2 * booth.fault_budget
            if len(set(record.quorum)) != need:
                fail(f"window {ts}: commit quorum size {len(record.quorum)} != {need}")
            if not set(record.quorum) <= set(booth.member_ids):
                fail(f"window {ts}: commit quorum outside consensus booth")
            if booth.pivot_id not in record.quorum:
                fail(f"window {ts}: pivot missing from commit quorum")
            if not verify_aggregate(record.cert, record.cert_digest(),
                                    booth.directory_map, booth.threshold):
                fail(f"window {ts}: commit certificate invalid")
            elif set(record.cert.signers(booth.member_ids)) != set(record.quorum):
                fail(f"window {ts}: commit certificate signers differ from quorum")
        memberships = expand_memberships(tx.membership_links)
        for link in tx.membership_links:
            if link.booth.pivot_id not in link.quorum:
                fail(f"window {ts}: pivot missing from ordering quorum "
                     f"{link.first_id}..{link.last_id}")
        for entry in tx.entries:
            check.entries_checked += 1
            got = memberships.get(entry.ordering_id)
            if got is None:
                fail(f"entry {entry.ordering_id}: no membership link covers it")
                continue
            link_booth, quorum = got
            need = 2 * link_booth.fault_budget
            if len(set(quorum)) != need or not set(quorum) <= set(link_booth.member_ids):
                fail(f"entry {entry.ordering_id}: malformed ordering quorum")
            cert_digest = order_cert_digest(
                entry.ordering_id, entry.batch.batch_hash, link_booth.booth_hash)
            if not verify_aggregate(entry.cert, cert_digest,
                                    link_booth.directory_map, link_booth.threshold):
                fail(f"entry {entry.ordering_id}: ordering certificate invalid")
            elif set(entry.cert.signers(link_booth.member_ids)) != set(quorum):
                fail(f"entry {entry.ordering_id}: certificate signers differ from quorum")
            replies = win.reply_sets.get(entry.ordering_id)
            if replies and registry is not None:
                if not verify_partial_set(replies, cert_digest,
                                          2 * link_booth.fault_budget + 1, registry):
                    fail(f"entry {entry.ordering_id}: retained reply set under-signed")
        ids = [e.ordering_id for e in tx.entries]
        if ids:
            if ids != sorted(ids) or len(set(ids)) != len(ids):
                fail(f"window {ts}: entry ids not strictly increasing")
            if ids[0] <= prev_last_id:
                fail(f"window {ts}: ordering ids overlap an earlier window")
            if strict and ids[0] != expected_next_id:
                fail(f"window {ts}: ordering ids skip "
                     f"{expected_next_id}..{ids[0] - 1}")
            if any(b - a != 1 for a, b in zip(ids, ids[1:])) and strict:
                fail(f"window {ts}: gap inside window entry ids")
            prev_last_id = ids[-1]
            expected_next_id = ids[-1] + 1
    if strict:
        covered = set(ledger.committed_windows()) | set(ledger.covered_empty)
        horizon = horizon_us
        if horizon is None:
            horizon = (max(covered) + delta) if covered else 0
        expected = set(range(0, horizon, delta))
        missing = sorted(expected - covered)
        if missing:
            fail(f"coverage gap: windows {missing[:5]}"
                 f"{'...' if len(missing) > 5 else ''} neither committed nor covered")
    return check


# -- json helpers ---------------------------------------------------------

def _agg_to_json(agg: AggregateSignature) -> dict:
    return {"threshold": agg.threshold, "sig": agg.sig_bytes.hex(),
            "signers": agg.signer_set_digest.hex()}


def _agg_from_json(obj: dict) -> AggregateSignature:
    return AggregateSignature(threshold=obj["threshold"],
                              sig_bytes=bytes.fromhex(obj["sig"]),
                              signer_set_digest=bytes.fromhex(obj["signers"]))


def _partial_to_json(p: PartialSignature) -> dict:
    return {"signer": p.signer, "digest": p.payload_digest.hex(),
            "sig": p.sig_bytes.hex()}


def _partial_from_json(obj: dict) -> PartialSignature:
    return PartialSignature(signer=obj["signer"],
                            payload_digest=bytes.fromhex(obj["digest"]),
                            sig_bytes=bytes.fromhex(obj["sig"]))


def _booth_to_json(booth: BoothProfile) -> dict:
    return {
        "proposer": booth.proposer_id,
        "pivot": booth.pivot_id,
        "threshold": booth.threshold,
        "created_at_us": booth.created_at_us,
        "members": [
            {"node_id": m.node_id, "role": m.role.value,
             "verify_key": m.verify_key.hex(), "net_addr": m.net_addr}
            for m in booth.members
        ],
        "directory": {str(i): k.hex() for i, k in booth.directory},
    }


def _booth_from_json(obj: dict) -> BoothProfile:
    members = tuple(
        Identity(node_id=m["node_id"], role=Role(m["role"]),
                 verify_key=bytes.fromhex(m["verify_key"]), net_addr=m["net_addr"])
        for m in obj["members"]
    )
    return BoothProfile(
        members=members,
        proposer_id=obj["proposer"],
        pivot_id=obj["pivot"],
        threshold=obj["threshold"],
        directory=tuple((int(i), bytes.fromhex(k))
                        for i, k in sorted(obj["directory"].items(), key=lambda kv: int(kv[0]))),
        created_at_us=obj["created_at_us"],
    )


def _record_to_json(record: CommitRecord) -> dict:
    return {
        "consensus_id": record.consensus_id,
        "quorum": list(record.quorum),
        "booth": record.booth_hash.hex(),
        "cert": _agg_to_json(record.cert),
        "tx_hash": record.tx_hash.hex(),
        "committed_at_us": record.committed_at_us,
    }


def _record_from_json(obj: dict) -> CommitRecord:
    return CommitRecord(
        consensus_id=obj["consensus_id"],
        quorum=tuple(obj["quorum"]),
        booth_hash=bytes.fromhex(obj["booth"]),
        cert=_agg_from_json(obj["cert"]),
        tx_hash=bytes.fromhex(obj["tx_hash"]),
        committed_at_us=obj["committed_at_us"],
    )


def _link_to_json(link: MembershipLink) -> dict:
    return {"booth": _booth_to_json(link.booth), "quorum": list(link.quorum),
            "first": link.first_id, "last": link.last_id}


def _link_from_json(obj: dict) -> MembershipLink:
    return MembershipLink(booth=_booth_from_json(obj["booth"]),
                          quorum=tuple(obj["quorum"]),
                          first_id=obj["first"], last_id=obj["last"])


def _tx_to_json(tx: Transaction) -> dict:
    return {
        "window_start_us": tx.window_start_us,
        "window_len_us": tx.window_len_us,
        "entries": [
            {"ordering_id": e.ordering_id,
             "batch": [[d.origin_seq, d.payload.hex()] for d in e.batch.entries],
             "cert": _agg_to_json(e.cert)}
            for e in tx.entries
        ],
        "links": [_link_to_json(l) for l in tx.membership_links],
    }


def _tx_from_json(obj: dict) -> Transaction:
    entries = tuple(
        TxEntry(
            ordering_id=e["ordering_id"],
            batch=DataBatch(entries=tuple(
                DataEntry(seq, bytes.fromhex(payload)) for seq, payload in e["batch"])),
            cert=_agg_from_json(e["cert"]),
        )
        for e in obj["entries"]
    )
    links = tuple(_link_from_json(l) for l in obj["links"])
    return Transaction(window_start_us=obj["window_start_us"],
                       window_len_us=obj["window_len_us"],
                       entries=entries, membership_links=links)
