"""Wire roundtrips for every message type, plus malformed-input rejection."""

from __future__ import annotations

import pytest

from conftest import (certify_entry, commit_window, default_quorum, make_batch,
                      make_booth, make_pool)
from vguard.crypto import make_partial
from vguard.ledger import commit_cert_digest, order_cert_digest
from vguard.messages import (WIRE_VERSION, CommitMsg, CommitReply, GossipAck,
                             GossipMsg, OrderMsg, OrderReply, Ping, Pong,
                             PreCommitSeen, PreCommitUnseen, PreOrder,
                             TraverseHop, decode_message, traverse_digest)


@pytest.fixture(scope="module")
def world():
    pool = make_pool([1, 2, 3, 4], seed=11)
    booth, material = make_booth(pool, [1, 2, 3, 4], proposer_id=1, pivot_id=2)
    return pool, booth, material


def _proposer_partial(pool, booth, payload):
    return make_partial(pool.keys[booth.proposer_id], payload,
                        pool.registry.booth_share(booth.booth_hash,
                                                  booth.proposer_id))


def _commit_msg(pool, booth, material, entries, window_start=0,
                window_len=100_000):
    record, tx = commit_window(pool, booth, material, window_start, window_len,
                               entries)
    return CommitMsg(instance_id=1, sender=booth.proposer_id,
                     window_start_us=record.consensus_id, quorum=record.quorum,
                     booth_hash=record.booth_hash, cert=record.cert,
                     tx_hash=record.tx_hash), tx


def roundtrip(msg):
    decoded = decode_message(msg.encode())
    assert decoded == msg
    return decoded


def test_pre_order_roundtrip(world):
    pool, booth, _ = world
    batch = make_batch(pool, size=2)
    payload = order_cert_digest(5, batch.batch_hash, booth.booth_hash)
    msg = PreOrder(instance_id=1, sender=1, ordering_id=5, batch=batch,
                   batch_hash=batch.batch_hash, booth=booth,
                   booth_hash=booth.booth_hash,
                   proposer_partial=_proposer_partial(pool, booth, payload))
    roundtrip(msg)


def test_order_reply_roundtrip(world):
    pool, booth, _ = world
    payload = order_cert_digest(5, b"\x00" * 32, booth.booth_hash)
    partial = make_partial(pool.keys[3], payload,
                           pool.registry.booth_share(booth.booth_hash, 3))
    roundtrip(OrderReply(instance_id=1, sender=3, ordering_id=5,
                         partial=partial))


def test_order_msg_roundtrip(world):
    pool, booth, material = world
    entry = certify_entry(pool, booth, material, 7, make_batch(pool))
    roundtrip(OrderMsg(instance_id=1, sender=1, ordering_id=7,
                       quorum=entry.quorum, cert=entry.cert))


def test_pre_commit_seen_roundtrip(world):
    pool, booth, material = world
    entry = certify_entry(pool, booth, material, 0, make_batch(pool))
    _, tx = commit_window(pool, booth, material, 0, 100_000, [entry])
    payload = commit_cert_digest(0, tx.tx_hash, booth.booth_hash)
    msg = PreCommitSeen(instance_id=1, sender=1, window_start_us=0,
                        window_len_us=100_000, tx_hash=tx.tx_hash, first_id=0,
                        last_id=0, booth=booth, booth_hash=booth.booth_hash,
                        proposer_partial=_proposer_partial(pool, booth, payload))
    roundtrip(msg)


def test_pre_commit_unseen_roundtrip(world):
    pool, booth, material = world
    entries = [certify_entry(pool, booth, material, i, make_batch(pool))
               for i in range(2)]
    _, tx = commit_window(pool, booth, material, 0, 100_000, entries)
    payload = commit_cert_digest(0, tx.tx_hash, booth.booth_hash)
    msg = PreCommitUnseen(
        instance_id=1, sender=1, window_start_us=0, window_len_us=100_000,
        tx_hash=tx.tx_hash, tx=tx, booth=booth, booth_hash=booth.booth_hash,
        reply_sets=tuple((e.ordering_id, e.reply_set) for e in entries),
        proposer_partial=_proposer_partial(pool, booth, payload))
    decoded = roundtrip(msg)
    assert decoded.reply_sets[1][0] == 1
    assert len(decoded.reply_sets[0][1]) == len(entries[0].reply_set)


def test_commit_reply_roundtrip(world):
    pool, booth, _ = world
    payload = commit_cert_digest(0, b"\x11" * 32, booth.booth_hash)
    partial = make_partial(pool.keys[4], payload,
                           pool.registry.booth_share(booth.booth_hash, 4))
    roundtrip(CommitReply(instance_id=2, sender=4, window_start_us=0,
                          partial=partial))


def test_commit_msg_roundtrip_and_hash(world):
    pool, booth, material = world
    entry = certify_entry(pool, booth, material, 0, make_batch(pool))
    msg, _ = _commit_msg(pool, booth, material, [entry])
    decoded = roundtrip(msg)
    assert decoded.commit_hash() == msg.commit_hash()
    other, _ = _commit_msg(pool, booth, material, [entry],
                           window_start=100_000)
    assert other.commit_hash() != msg.commit_hash()


def test_gossip_roundtrip(world):
    pool, booth, material = world
    entry = certify_entry(pool, booth, material, 0, make_batch(pool))
    commit, tx = _commit_msg(pool, booth, material, [entry])
    hop_payload = traverse_digest(commit.commit_hash(), 2)
    hop = TraverseHop(lifetime=2, sig=pool.keys[1].sign(hop_payload),
                      node_id=1)
    msg = GossipMsg(instance_id=1, sender=1, commit=commit, tx=tx,
                    traverse=(hop,))
    decoded = roundtrip(msg)
    assert decoded.traverse[0].lifetime == 2
    roundtrip(GossipAck(instance_id=1, sender=5,
                        commit_hash=commit.commit_hash(), propagator=5))


def test_ping_pong_roundtrip():
    roundtrip(Ping(instance_id=0, sender=2, seq=9, sent_at_us=123_456))
    roundtrip(Pong(instance_id=0, sender=3, seq=9, sent_at_us=123_456))


def test_decode_rejects_short_and_bad_header():
    with pytest.raises(ValueError):
        decode_message(b"")
    with pytest.raises(ValueError):
        decode_message(bytes((WIRE_VERSION,)))
    with pytest.raises(ValueError):
        decode_message(bytes((WIRE_VERSION + 1, 1)) + b"\x00" * 20)
    with pytest.raises(ValueError):
        decode_message(bytes((WIRE_VERSION, 200)) + b"\x00" * 20)


def test_decode_rejects_truncation_and_trailing(world):
    pool, booth, material = world
    entry = certify_entry(pool, booth, material, 3, make_batch(pool))
    raw = OrderMsg(instance_id=1, sender=1, ordering_id=3,
                   quorum=entry.quorum, cert=entry.cert).encode()
    with pytest.raises(ValueError):
        decode_message(raw[:-1])
    with pytest.raises(ValueError):
        decode_message(raw + b"\x00")


def test_decode_rejects_corrupt_interior(world):
    pool, booth, _ = world
    batch = make_batch(pool, size=2)
    payload = order_cert_digest(5, batch.batch_hash, booth.booth_hash)
    raw = bytearray(PreOrder(
        instance_id=1, sender=1, ordering_id=5, batch=batch,
        batch_hash=batch.batch_hash, booth=booth,
        booth_hash=booth.booth_hash,
        proposer_partial=_proposer_partial(pool, booth, payload)).encode())
    for cut in (len(raw) // 3, len(raw) // 2, len(raw) - 5):
        with pytest.raises(ValueError):
            decode_message(bytes(raw[:cut]))


def test_quorum_order_changes_encoding(world):
    pool, booth, material = world
    entry = certify_entry(pool, booth, material, 1, make_batch(pool))
    base = OrderMsg(instance_id=1, sender=1, ordering_id=1,
                    quorum=entry.quorum, cert=entry.cert)
    flipped = OrderMsg(instance_id=1, sender=1, ordering_id=1,
                       quorum=tuple(reversed(entry.quorum)), cert=entry.cert)
    assert base.encode() != flipped.encode()
