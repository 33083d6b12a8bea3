"""Simulator semantics: determinism, CPU queueing, faults, churn, timers.

Delay and cost parameters are chosen so expected arrival and service times
are exact float arithmetic, letting assertions use equality rather than
tolerances.
"""

from __future__ import annotations

import pytest

from vguard.errors import UnknownEndpoint
from vguard.netsim import (Category, ChurnEvent, CostModel, Network,
                           SimConfig)

FREE = CostModel(base_ms=0.0, sign_ms=0.0, verify_ms=0.0, hash_byte_ms=0.0,
                 wire_byte_ms=0.0, wire_byte_quad_ms=0.0)


def quiet(**over) -> SimConfig:
    base = dict(seed=1, delay_mean_ms=1.0, delay_sd_ms=0.0, drop_rate=0.0,
                dup_rate=0.0, bandwidth_bytes_per_ms=None, cost=FREE)
    base.update(over)
    return SimConfig(**base)


class Recorder:
    def __init__(self, net: Network):
        self.net = net
        self.events: list[tuple[float, int, bytes]] = []

    def __call__(self, src: int, payload: bytes, category: Category) -> None:
        self.events.append((self.net.now, src, payload))

    @property
    def times(self) -> list[float]:
        return [t for t, _, _ in self.events]


def wire(net: Network, node_ids) -> dict[int, Recorder]:
    recs = {}
    for node_id in node_ids:
        rec = Recorder(net)
        net.register(node_id, rec)
        recs[node_id] = rec
    return recs


def test_fixed_delay_delivery():
    net = Network(quiet())
    recs = wire(net, [1, 2])
    net.send(1, 2, b"hello", Category.CONTROL)
    net.run_until(10.0)
    assert recs[2].events == [(1.0, 1, b"hello")]


def test_bandwidth_term_adds_transfer_time():
    net = Network(quiet(bandwidth_bytes_per_ms=100.0))
    recs = wire(net, [1, 2])
    net.send(1, 2, b"x" * 250, Category.CONTROL)  # 250 bytes / 100 per ms
    net.run_until(10.0)
    assert recs[2].times == [1.0 + 2.5]


def test_cpu_queue_serializes_same_node():
    net = Network(quiet())
    times = []

    def slow_handler(src, payload, category):
        times.append(net.now)
        net.meter(2).charge_ms(5.0)

    net.register(1, lambda *a: None)
    net.register(3, lambda *a: None)
    net.register(2, slow_handler)
    net.send(1, 2, b"a", Category.CONTROL)
    net.send(3, 2, b"b", Category.CONTROL)
    net.run_until(20.0)
    # both arrive at 1.0; the second waits for the first's 5ms service
    assert times == [1.0, 6.0]


def test_sends_inside_handler_stamped_at_completion():
    net = Network(quiet())
    recs = wire(net, [1, 3])

    def relay(src, payload, category):
        net.meter(2).charge_ms(5.0)
        net.send(2, 3, b"relayed", Category.CONTROL)

    net.register(2, relay)
    net.send(1, 2, b"go", Category.CONTROL)
    net.run_until(20.0)
    # service ends at 1.0 + 5.0; relay rides one more 1.0ms link
    assert recs[3].events == [(7.0, 2, b"relayed")]


def test_timer_set_inside_handler_counts_from_completion():
    net = Network(quiet())
    fired = []

    def handler(src, payload, category):
        net.meter(2).charge_ms(5.0)
        net.schedule(2, 2.0, lambda: fired.append(net.now))

    net.register(1, lambda *a: None)
    net.register(2, handler)
    net.send(1, 2, b"go", Category.CONTROL)
    net.run_until(20.0)
    assert fired == [8.0]


def test_inbound_wire_preload_charges_service():
    cost = CostModel(base_ms=0.0, sign_ms=0.0, verify_ms=0.0,
                     hash_byte_ms=0.0, wire_byte_ms=0.001,
                     wire_byte_quad_ms=0.0)
    net = Network(quiet(cost=cost))
    times = []
    net.register(1, lambda *a: None)
    net.register(2, lambda *a: times.append(net.now))
    payload = b"x" * 1000  # 1.0ms of wire handling
    net.send(1, 2, payload, Category.CONTROL)
    net.send(1, 2, payload, Category.CONTROL)
    net.run_until(20.0)
    assert times == [1.0, 2.0]


def test_aux_lane_bypasses_cpu_queue():
    net = Network(quiet())
    times = []

    def gossip_handler(src, payload, category):
        # aux lane must not bill this anywhere
        net.meter(2).charge_ms(1000.0)

    def control_handler(src, payload, category):
        times.append(net.now)

    net.register(1, lambda *a: None)

    def dispatch(src, payload, category):
        if category is Category.GOSSIP:
            gossip_handler(src, payload, category)
        else:
            control_handler(src, payload, category)

    net.register(2, dispatch)
    net.send(1, 2, b"g", Category.GOSSIP)
    net.send(1, 2, b"c", Category.CONTROL)
    net.run_until(20.0)
    # the control message is not queued behind any phantom gossip cost
    assert times == [1.0]


def test_same_seed_identical_trace_different_seed_diverges():
    def storm(seed: int) -> list[dict]:
        net = Network(SimConfig(seed=seed, delay_mean_ms=2.0, delay_sd_ms=1.0,
                                drop_rate=0.3, dup_rate=0.2, trace=True,
                                bandwidth_bytes_per_ms=None, cost=FREE))
        wire(net, [1, 2, 3])
        for i in range(50):
            net.run_until(float(i))
            net.send(1 + i % 2, 3, bytes([i]), Category.CONSENSUS, ("k", i))
        net.run_until(200.0)
        return net.trace

    assert storm(42) == storm(42)
    assert storm(42) != storm(43)


def test_drops_and_dups_stop_at_gst_and_delay_clamps():
    cfg = quiet(seed=5, delay_mean_ms=50.0, drop_rate=0.5, dup_rate=0.5,
                gst_ms=100.0, gst_bound_ms=2.0)
    net = Network(cfg)
    recs = wire(net, [1, 2])
    for i in range(100):
        net.run_until(float(i))
        net.send(1, 2, b"pre", Category.CONSENSUS)
    pre_sent = 100

    net.run_until(200.0)
    pre_delivered = len(recs[2].events)
    assert pre_delivered < pre_sent  # at least one drop in 100 coin flips

    for i in range(100):
        net.run_until(200.0 + i)
        net.send(1, 2, b"post", Category.CONSENSUS)
    net.run_until(400.0)
    post = [(t, p) for t, _, p in recs[2].events if p == b"post"]
    assert len(post) == 100          # no drops, no dups after stabilization
    sent_times = [200.0 + i for i in range(100)]
    for (arrived, _), sent in zip(post, sent_times):
        assert arrived == sent + 2.0  # 50ms mean clamped to the 2ms bound


def test_fifo_per_link_when_reorder_disabled():
    def arrivals(reorder: bool) -> list[int]:
        net = Network(SimConfig(seed=9, delay_mean_ms=5.0, delay_sd_ms=4.0,
                                reorder=reorder, bandwidth_bytes_per_ms=None,
                                cost=FREE))
        recs = wire(net, [1, 2])
        for i in range(40):
            net.run_until(float(i) * 0.1)
            net.send(1, 2, bytes([i]), Category.CONSENSUS)
        net.run_until(500.0)
        return [p[0] for _, _, p in recs[2].events]

    ordered = arrivals(reorder=False)
    assert ordered == sorted(ordered)
    free = arrivals(reorder=True)
    assert sorted(free) == list(range(40))
    assert free != sorted(free)  # seed 9 exhibits at least one inversion


def test_down_node_neither_sends_nor_receives():
    net = Network(quiet(trace=True))
    recs = wire(net, [1, 2, 3])
    net.set_up(2, False)
    net.send(1, 2, b"to-down", Category.CONTROL)
    net.send(2, 3, b"from-down", Category.CONTROL)
    net.run_until(10.0)
    assert recs[2].events == []
    assert recs[3].events == []
    kinds = [e["kind"] for e in net.trace]
    assert "send_suppressed" in kinds
    assert "drop_down" in kinds


def test_availability_listeners_and_churn_schedule():
    net = Network(quiet())
    wire(net, [1, 2])
    seen = []
    net.on_availability_change(lambda node, up, now: seen.append((node, up, now)))
    net.inject_churn([ChurnEvent(at_ms=35.0, node_id=2, up=False),
                      ChurnEvent(at_ms=70.0, node_id=2, up=True)])
    net.run_until(100.0)
    assert seen == [(2, False, 35.0), (2, True, 70.0)]


def test_every_skips_body_while_down_but_keeps_phase():
    net = Network(quiet())
    wire(net, [1])
    ticks = []
    net.every(1, 10.0, lambda: ticks.append(net.now))
    net.inject_churn([ChurnEvent(at_ms=5.0, node_id=1, up=False),
                      ChurnEvent(at_ms=35.0, node_id=1, up=True)])
    net.run_until(61.0)
    assert ticks == [40.0, 50.0, 60.0]


def test_one_shot_timer_skipped_when_down():
    net = Network(quiet())
    wire(net, [1])
    fired = []
    net.schedule(1, 5.0, lambda: fired.append(net.now))
    net.set_up(1, False)
    net.run_until(20.0)
    assert fired == []


def test_timer_cancel():
    net = Network(quiet())
    wire(net, [1])
    fired = []
    timer = net.schedule(1, 5.0, lambda: fired.append(net.now))
    timer.cancel()
    net.every(1, 3.0, lambda: fired.append(-net.now)).cancel()
    net.run_until(30.0)
    assert fired == []


def test_negative_delay_clamps_to_now():
    net = Network(quiet())
    wire(net, [1])
    fired = []
    net.run_until(4.0)
    net.schedule(1, -10.0, lambda: fired.append(net.now))
    net.run_until(5.0)
    assert fired == [4.0]


def test_send_to_unknown_endpoint_raises():
    net = Network(quiet())
    wire(net, [1])
    with pytest.raises(UnknownEndpoint):
        net.send(1, 99, b"?", Category.CONTROL)


def test_counters_track_sends_by_instance_key():
    net = Network(quiet(drop_rate=0.9, seed=3))
    wire(net, [1, 2])
    for i in range(20):
        net.send(1, 2, b"m", Category.ORDERING, ("inst", i % 2))
    net.send(1, 2, b"m", Category.CONTROL)
    net.run_until(50.0)
    counts = net.instance_counts(Category.ORDERING)
    assert counts == {("inst", 0): 10, ("inst", 1): 10}  # drops still count
    assert net.messages_for(Category.ORDERING, ("inst", 0)) == 10
    totals = net.totals_by_category()
    assert totals["ordering"] == 20
    assert totals["control"] == 1


def test_byzantine_registration_lookup():
    net = Network(quiet())
    net.wrap_byzantine(4, ["silent"])
    assert [str(b) for b in net.byzantine_behaviors(4)] == ["silent"]
    assert net.byzantine_behaviors(5) == []
