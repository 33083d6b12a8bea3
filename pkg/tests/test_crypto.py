"""Identity signatures, booth key material, and aggregate certificates."""

import itertools

import numpy as np
import pytest

from vguard.codec import digest
from vguard.crypto import (
    aggregate,
    make_identity,
    make_partial,
    setup_booth_keys,
    signer_set_digest,
    verify_aggregate,
    verify_partial,
    verify_partial_set,
    Role,
)
from vguard.errors import (
    InsufficientPartials,
    InvalidPartial,
    InvalidThreshold,
    MixedDigests,
    UnknownSigner,
)

from conftest import make_pool, make_booth

# Aggregates are certified multisigs, not a constant-size threshold scheme:
# the accepted size envelope is threshold * 64-byte signatures plus the
# signer bitmap (one bit per booth member, byte-padded).
AGGREGATE_SIZE_BOUND = lambda t, n: t * 64 + (n + 7) // 8


def _rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def test_sign_verify_roundtrip():
    ident, key = make_identity(5, Role.VEHICLE, _rng().bytes(32))
    payload = digest("t", b"hello")
    partial = make_partial(key, payload)
    assert partial.signer == 5
    assert verify_partial(partial, ident.verify_key)


def test_any_bit_flip_breaks_verification():
    ident, key = make_identity(5, Role.VEHICLE, _rng().bytes(32))
    payload = digest("t", b"hello")
    partial = make_partial(key, payload)
    flipped = bytes([payload[0] ^ 1]) + payload[1:]
    assert not verify_partial(partial, ident.verify_key, flipped)
    # tampering with the signature bytes must fail too
    bad = type(partial)(partial.signer, payload, partial.sig_bytes[:-1] + b"\x00")
    assert not verify_partial(bad, ident.verify_key) or partial.sig_bytes[-1] == 0


def test_partial_rejected_under_wrong_key():
    _, key = make_identity(5, Role.VEHICLE, _rng(1).bytes(32))
    other, _ = make_identity(6, Role.VEHICLE, _rng(2).bytes(32))
    payload = digest("t", b"x")
    partial = make_partial(key, payload)
    assert not verify_partial(partial, other.verify_key)


def test_threshold_bounds_rejected():
    with pytest.raises(InvalidThreshold):
        setup_booth_keys([1, 2, 3, 4], 5, _rng())       # above booth size
    with pytest.raises(InvalidThreshold):
        setup_booth_keys([1, 2, 3, 4], 1, _rng())       # below 2f
    setup_booth_keys([1, 2, 3, 4], 2, _rng())           # t = 2f is the floor


def test_aggregate_two_of_four_verifies(pool4, booth4):
    booth, material = booth4
    payload = digest("t", b"batch")
    partials = [
        make_partial(pool4.keys[m], payload, pool4.registry.booth_share(booth.booth_hash, m))
        for m in (2, 3)
    ]
    agg = aggregate(partials, material)
    assert verify_aggregate(agg, payload, booth.directory_map, booth.threshold)
    assert agg.signers(booth.member_ids) == [2, 3]
    assert agg.signer_set_digest == signer_set_digest([2, 3])


def test_every_subthreshold_subset_fails(pool4, booth4):
    # Oracle: enumerate every subset smaller than t; each must refuse to
    # aggregate, and a certificate truncated to it must refuse to verify.
    booth, material = booth4
    payload = digest("t", b"batch")
    all_partials = {
        m: make_partial(pool4.keys[m], payload,
                        pool4.registry.booth_share(booth.booth_hash, m))
        for m in booth.member_ids
    }
    t = material.threshold
    for size in range(t):
        for subset in itertools.combinations(booth.member_ids, size):
            with pytest.raises(InsufficientPartials):
                aggregate([all_partials[m] for m in subset], material)
    # duplicates of one signer never count twice
    with pytest.raises(InsufficientPartials):
        aggregate([all_partials[2], all_partials[2]], material)


def test_aggregate_rejects_foreign_and_mixed(pool4, booth4):
    booth, material = booth4
    pool_b = make_pool([1, 2, 3, 4, 5, 6], seed=11)
    booth_b, material_b = make_booth(pool_b, [1, 2, 5, 6], proposer_id=1, pivot_id=2)
    payload = digest("t", b"batch")
    other_payload = digest("t", b"other")
    good = make_partial(pool4.keys[2], payload,
                        pool4.registry.booth_share(booth.booth_hash, 2))
    mixed = make_partial(pool4.keys[3], other_payload,
                         pool4.registry.booth_share(booth.booth_hash, 3))
    with pytest.raises(MixedDigests):
        aggregate([good, mixed], material)
    foreign = make_partial(pool_b.keys[5], payload,
                           pool_b.registry.booth_share(booth_b.booth_hash, 5))
    with pytest.raises(UnknownSigner):
        aggregate([good, foreign], material)


def test_partial_without_share_cannot_aggregate(pool4, booth4):
    booth, material = booth4
    payload = digest("t", b"batch")
    no_share = make_partial(pool4.keys[2], payload, booth_key=None)
    with_share = make_partial(pool4.keys[3], payload,
                              pool4.registry.booth_share(booth.booth_hash, 3))
    with pytest.raises(InvalidPartial):
        aggregate([no_share, with_share], material)


def test_cross_booth_verification_fails(pool4):
    # Same members, two independently dealt booths: a certificate from one
    # must not verify against the other's directory.
    booth_a, material_a = make_booth(pool4, [1, 2, 3, 4], 1, 2, created_at_us=1)
    booth_b, _ = make_booth(pool4, [1, 2, 3, 4], 1, 2, created_at_us=2)
    assert booth_a.booth_hash != booth_b.booth_hash
    payload = digest("t", b"batch")
    partials = [
        make_partial(pool4.keys[m], payload,
                     pool4.registry.booth_share(booth_a.booth_hash, m))
        for m in (2, 3)
    ]
    agg = aggregate(partials, material_a)
    assert verify_aggregate(agg, payload, booth_a.directory_map, booth_a.threshold)
    assert not verify_aggregate(agg, payload, booth_b.directory_map, booth_b.threshold)


def test_aggregate_size_envelope_small_and_large():
    # Relaxed size contract: multisig certificates grow with t but stay
    # within AGGREGATE_SIZE_BOUND for both a minimal and a large booth.
    for n, seed in ((4, 3), (61, 4)):
        rng = _rng(seed)
        members = list(range(1, n + 1))
        pool = make_pool(members, seed=seed)
        f = (n - 1) // 3
        t = 2 * f
        material = setup_booth_keys(members, t, rng)
        payload = digest("t", b"batch")
        keyed = []
        for m in members[:t]:
            import cryptography.hazmat.primitives.asymmetric.ed25519 as ed
            booth_key = ed.Ed25519PrivateKey.from_private_bytes(material.share_seeds[m])
            keyed.append(make_partial(pool.keys[m], payload, booth_key))
        agg = aggregate(keyed, material)
        assert len(agg.sig_bytes) <= AGGREGATE_SIZE_BOUND(t, n)
        assert verify_aggregate(agg, payload, dict(material.directory), t)


def test_verify_partial_set_counts_distinct_valid_signers(pool4, booth4):
    booth, _ = booth4
    payload = digest("t", b"batch")
    partials = [make_partial(pool4.keys[m], payload) for m in (1, 2, 3)]
    assert verify_partial_set(partials, payload, required=3, registry=pool4.registry)
    # replays of one signer do not add weight
    assert not verify_partial_set(
        [partials[0], partials[0], partials[1]], payload,
        required=3, registry=pool4.registry)
    # a corrupted third signature drops the count below the requirement
    bad = type(partials[2])(partials[2].signer, payload, b"\x00" * len(partials[2].sig_bytes))
    assert not verify_partial_set(
        [partials[0], partials[1], bad], payload, required=3, registry=pool4.registry)


def test_setup_is_deterministic_per_seed():
    a = setup_booth_keys([1, 2, 3, 4], 2, _rng(42))
    b = setup_booth_keys([1, 2, 3, 4], 2, _rng(42))
    assert a.directory == b.directory
    assert a.share_seeds == b.share_seeds
    c = setup_booth_keys([1, 2, 3, 4], 2, _rng(43))
    assert c.directory != a.directory


def test_tampered_aggregate_rejected(pool4, booth4):
    booth, material = booth4
    payload = digest("t", b"batch")
    partials = [
        make_partial(pool4.keys[m], payload,
                     pool4.registry.booth_share(booth.booth_hash, m))
        for m in (2, 3)
    ]
    agg = aggregate(partials, material)
    # flip one signature bit
    raw = bytearray(agg.sig_bytes)
    raw[-1] ^= 1
    bad = type(agg)(agg.threshold, bytes(raw), agg.signer_set_digest)
    assert not verify_aggregate(bad, payload, booth.directory_map, booth.threshold)
    # claim a different signer set than the bitmap carries
    lied = type(agg)(agg.threshold, agg.sig_bytes, signer_set_digest([2, 4]))
    assert not verify_aggregate(lied, payload, booth.directory_map, booth.threshold)
