"""Immutable booth profiles.

A booth is one membership configuration: the proposer, the pivot validator
(the manufacturer's always-on presence), and enough vehicle validators to
reach size 3f+1. Profiles are value objects: the mutable bookkeeping that
decides when a booth is still usable lives in the membership unit, not here.
The profile digest pins members, roles, threshold, and the booth-local key
directory, so any two nodes naming the same digest mean the same booth.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

from .codec import digest, pack, Reader
from .crypto import Identity, Role


@dataclass(frozen=True)
class BoothProfile:
    members: tuple[Identity, ...]          # sorted by node_id
    proposer_id: int
    pivot_id: int
    threshold: int
    directory: tuple[tuple[int, bytes], ...]   # booth-local verify keys
    created_at_us: int = 0

    def __post_init__(self):
        ids = [m.node_id for m in self.members]
        if ids != sorted(set(ids)):
            raise ValueError("members must be unique and sorted by node_id")
        if self.proposer_id not in ids or self.pivot_id not in ids:
            raise ValueError("booth must contain its proposer and pivot")

    @cached_property
    def booth_hash(self) -> bytes:
        return digest(
            "booth",
            self.proposer_id,
            self.pivot_id,
            self.threshold,
            self.created_at_us,
            [[m.node_id, m.role.value, m.verify_key, m.net_addr] for m in self.members],
            [[node_id, key] for node_id, key in self.directory],
        )

    @cached_property
    def member_ids(self) -> tuple[int, ...]:
        return tuple(m.node_id for m in self.members)

    @cached_property
    def directory_map(self) -> dict[int, bytes]:
        return dict(self.directory)

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def fault_budget(self) -> int:
        return (self.size - 1) // 3

    def validators(self) -> tuple[int, ...]:
        """Member ids excluding the proposer."""
        return tuple(i for i in self.member_ids if i != self.proposer_id)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.member_ids

    # wire form -----------------------------------------------------------

    def to_field(self) -> list:
        return [
            self.proposer_id,
            self.pivot_id,
            self.threshold,
            self.created_at_us,
            [[m.node_id, m.role.value, m.verify_key, m.net_addr] for m in self.members],
            [[node_id, key] for node_id, key in self.directory],
        ]

    def encode(self) -> bytes:
        return pack(self.to_field())

    @classmethod
    def read_from(cls, r: Reader) -> "BoothProfile":
        if r.seq_len() != 6:
            raise ValueError("malformed booth profile")
        proposer_id = r.u64()
        pivot_id = r.u64()
        threshold = r.u64()
        created = r.u64()
        members = []
        for _ in range(r.seq_len()):
            if r.seq_len() != 4:
                raise ValueError("malformed booth member")
            node_id = r.u64()
            role = Role(r.str_())
            verify_key = r.bytes_()
            net_addr = r.str_()
            members.append(Identity(node_id, role, verify_key, net_addr))
        directory = []
        for _ in range(r.seq_len()):
            if r.seq_len() != 2:
                raise ValueError("malformed booth directory entry")
            directory.append((r.u64(), r.bytes_()))
        return cls(
            members=tuple(members),
            proposer_id=proposer_id,
            pivot_id=pivot_id,
            threshold=threshold,
            directory=tuple(directory),
            created_at_us=created,
        )

    @classmethod
    def decode(cls, raw: bytes) -> "BoothProfile":
        r = Reader(raw)
        profile = cls.read_from(r)
        r.expect_done()
        return profile


def build_profile(members: Sequence[Identity], proposer_id: int, pivot_id: int,
                  threshold: int, directory: dict[int, bytes],
                  created_at_us: int = 0) -> BoothProfile:
    ordered = tuple(sorted(members, key=lambda m: m.node_id))
    return BoothProfile(
        members=ordered,
        proposer_id=proposer_id,
        pivot_id=pivot_id,
        threshold=threshold,
        directory=tuple((m.node_id, directory[m.node_id]) for m in ordered),
        created_at_us=created_at_us,
    )
