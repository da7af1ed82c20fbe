import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from migrasim.simnet import (
    Link, LivelockError, MessageKind, NetMessage, Network, RoutingError, SchedulingError,
    SimError, Simulator, deliver, seconds, to_seconds,
)


def test_seconds_round_trip():
    assert seconds(1.5) == 1_500_000_000
    assert seconds(1e-9) == 1
    assert to_seconds(seconds(0.123456789)) == pytest.approx(0.123456789)


def test_control_message_arrival():
    # 168 B at 200 Mbit/s is 6.72 us on the wire, plus 1 ms latency
    link = Link("C", "D", int(200e6), seconds(0.001))
    arrival = deliver(NetMessage.control(), link, 0)
    assert to_seconds(arrival) == pytest.approx(0.00100672, abs=1e-12)


def test_gigabyte_transfer_time():
    link = Link("C", "E", int(100e6), seconds(0.001))
    arrival = deliver(NetMessage(MessageKind.STATE, 10**9), link, 0)
    assert to_seconds(arrival) == pytest.approx(80.001, abs=1e-9)


def test_messages_on_one_link_serialize():
    link = Link("a", "b", 8_000, 0)  # 1 byte per ms
    first = deliver(NetMessage(MessageKind.DATA, 10), link, 0)
    second = deliver(NetMessage(MessageKind.DATA, 10), link, 0)
    assert first == seconds(0.010)
    assert second == seconds(0.020)
    # a later send on an idle link starts immediately
    third = deliver(NetMessage(MessageKind.DATA, 10), link, seconds(1.0))
    assert third == seconds(1.010)


def test_opposite_directions_are_independent():
    sim = Simulator()
    _register(sim, "a", "b")
    net = Network(sim)
    net.add_link("a", "b", 8_000, 0.0)
    a = net.send("a", "b", NetMessage(MessageKind.DATA, 10))
    b = net.send("b", "a", NetMessage(MessageKind.DATA, 10))
    assert a == b == seconds(0.010)


def _register(sim, *names):
    for n in names:
        sim.register(n, lambda p: None)
    return True


def test_invalid_messages_and_links():
    with pytest.raises(ValueError):
        NetMessage("carrier-pigeon", 1)
    with pytest.raises(ValueError):
        NetMessage(MessageKind.DATA, -1)
    with pytest.raises(ValueError):
        Link("a", "b", 0, 0)
    with pytest.raises(ValueError):
        Link("a", "b", 1, -1)


def test_missing_link_is_routing_error():
    sim = Simulator()
    net = Network(sim)
    with pytest.raises(RoutingError):
        net.send("a", "b", NetMessage.control())


def test_scheduling_in_the_past_fails():
    sim = Simulator()
    sim.register("x", lambda p: None)
    sim.schedule(10, "x", None)
    sim.run_until_quiescent()
    with pytest.raises(SchedulingError):
        sim.schedule(5, "x", None)
    with pytest.raises(RoutingError):
        sim.schedule(20, "nobody", None)
    with pytest.raises(SimError):
        sim.register("x", lambda p: None)


def test_event_limit_raises_livelock():
    sim = Simulator(max_events=100)

    def again(_):
        sim.schedule(sim.now, "x", None)

    sim.register("x", again)
    sim.schedule(0, "x", None)
    with pytest.raises(LivelockError):
        sim.run_until_quiescent()


def test_down_link_drops():
    sim = Simulator()
    _register(sim, "a", "b")
    net = Network(sim)
    net.add_link("a", "b", 1e6, 0.0, down=[(0.0, 1.0)])
    assert net.send("a", "b", NetMessage.control()) is None
    assert len(net.dropped) == 1
    sim.register("tick", lambda p: net.send("a", "b", NetMessage.control()))
    sim.schedule(seconds(1.0), "tick", None)
    sim.run_until_quiescent()
    assert len(net.dropped) == 1


def test_run_until_stops_at_bound():
    sim = Simulator()
    seen = []
    sim.register("x", seen.append)
    for t in (1, 5, 9):
        sim.schedule(t, "x", t)
    sim.run_until(5)
    assert seen == [1, 5] and sim.now == 5
    sim.run_until_quiescent()
    assert seen == [1, 5, 9]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**6), st.integers(0, 9)), min_size=1, max_size=60))
def test_events_fire_in_time_then_insertion_order(items):
    sim = Simulator()
    fired = []
    sim.register("x", fired.append)
    for i, (t, _) in enumerate(items):
        sim.schedule(t, "x", (t, i))
    sim.run_until_quiescent()
    assert fired == sorted(fired)
    assert len(fired) == len(items)


@settings(max_examples=200, deadline=None)
@given(bw=st.integers(1_000, 10**10), lat=st.integers(0, 10**8),
       sizes=st.lists(st.integers(0, 10**6), min_size=1, max_size=30),
       gaps=st.lists(st.integers(0, 10**7), min_size=30, max_size=30))
def test_link_is_fifo_and_never_early(bw, lat, sizes, gaps):
    link = Link("a", "b", bw, lat)
    t, last = 0, -1
    for size, gap in zip(sizes, gaps):
        t += gap
        arrival = deliver(NetMessage(MessageKind.DATA, size), link, t)
        assert arrival >= t + lat + link.transmission_ns(size)
        assert arrival >= last
        last = arrival


def test_replay_is_deterministic():
    def run():
        sim = Simulator(trace=True)
        net = Network(sim)
        _register(sim, "a", "b")
        net.add_link("a", "b", 1e6, 0.002)
        for i in range(20):
            net.send("a", "b", NetMessage(MessageKind.DATA, 100 + i))
        sim.run_until_quiescent()
        return sim.event_trace

    assert run() == run()
