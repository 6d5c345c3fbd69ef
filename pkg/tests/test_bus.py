import pytest

from parley.bus import (
    BusError,
    ClockModeError,
    ClockRegressionError,
    EngineConfig,
    EventBus,
    UnknownTopicError,
)


@pytest.fixture
def bus():
    b = EventBus()
    b.register_topic("user-angle")
    b.register_topic("other")
    return b


def collect(bus, topic):
    seen = []
    bus.subscribe(topic, seen.append)
    return seen


class TestPublish:
    def test_delivery_in_timestamp_order(self, bus):
        seen = collect(bus, "user-angle")
        bus.publish("user-angle", {"deg": 90}, ts=1000)
        bus.publish("user-angle", {"deg": 95}, ts=1100)
        bus.advance_clock(2000)
        assert [e.ts for e in seen] == [1000, 1100]

    def test_same_ts_delivered_in_publish_order(self, bus):
        seen = collect(bus, "user-angle")
        bus.publish("user-angle", "a", ts=500)
        bus.publish("user-angle", "b", ts=500)
        bus.advance_clock(500)
        payloads = [e.payload for e in seen]
        assert payloads == ["a", "b"]
        assert seen[0].seq < seen[1].seq

    def test_clock_regression_rejected(self, bus):
        bus.publish("user-angle", 1, ts=1000)
        with pytest.raises(ClockRegressionError):
            bus.publish("user-angle", 2, ts=900)

    def test_unknown_topic_rejected(self, bus):
        with pytest.raises(UnknownTopicError):
            bus.publish("nope", 1)
        with pytest.raises(UnknownTopicError):
            bus.subscribe("nope", lambda e: None)

    def test_publish_returns_increasing_seq(self, bus):
        s1 = bus.publish("user-angle", 1)
        s2 = bus.publish("other", 2)
        assert s2 > s1


class TestSubscribe:
    def test_handler_called_once_per_event_in_order(self, bus):
        seen = collect(bus, "user-angle")
        for i in range(3):
            bus.publish("user-angle", i)
        assert [e.payload for e in seen] == [0, 1, 2]

    def test_unsubscribe_stops_delivery(self, bus):
        seen = []
        sub = bus.subscribe("user-angle", seen.append)
        bus.publish("user-angle", 1)
        bus.unsubscribe(sub)
        bus.publish("user-angle", 2)
        assert [e.payload for e in seen] == [1]

    def test_two_subscribers_both_receive(self, bus):
        a = collect(bus, "user-angle")
        b = collect(bus, "user-angle")
        bus.publish("user-angle", 7)
        assert len(a) == 1 and len(b) == 1

    def test_no_event_loss_counts_match(self, bus):
        seen = collect(bus, "user-angle")
        n = 50
        for i in range(n):
            bus.publish("user-angle", i)
        assert len(seen) == n


class TestClock:
    def test_timer_fires_at_exact_deadline(self, bus):
        fired = []
        bus.schedule(1500, lambda: fired.append(bus.now()))
        assert bus.advance_clock(1499) == 0
        assert fired == []
        assert bus.advance_clock(1) == 1
        assert fired == [1500]

    def test_periodic_poll_once_per_interval(self, bus):
        ticks = []
        bus.schedule_periodic(100, lambda: ticks.append(bus.now()))
        assert bus.advance_clock(100) == 1
        assert ticks == [100]
        bus.advance_clock(250)
        assert ticks == [100, 200, 300]

    def test_advance_zero_rejected(self, bus):
        with pytest.raises(ValueError):
            bus.advance_clock(0)

    def test_advance_rejected_in_wall_mode(self):
        b = EventBus(mode=EventBus.WALL)
        with pytest.raises(ClockModeError):
            b.advance_clock(10)

    def test_run_pending_rejected_in_virtual_mode(self, bus):
        with pytest.raises(ClockModeError):
            bus.run_pending()

    def test_cancelled_timer_does_not_fire(self, bus):
        fired = []
        handle = bus.schedule(100, lambda: fired.append(1))
        handle.cancel()
        bus.advance_clock(200)
        assert fired == []

    def test_advance_inside_handler_rejected(self, bus):
        def handler(event):
            with pytest.raises(BusError):
                bus.advance_clock(10)

        bus.subscribe("user-angle", handler)
        bus.publish("user-angle", 1)


class TestOrdering:
    def test_handler_publishes_carry_non_regressing_ts(self, bus):
        order = []

        def reactor(event):
            order.append(("in", event.payload))
            if event.payload == "first":
                bus.publish("other", "reaction")

        bus.subscribe("user-angle", reactor)
        bus.subscribe("other", lambda e: order.append(("out", e.payload, e.ts)))
        bus.publish("user-angle", "first", ts=0)
        assert order == [("in", "first"), ("out", "reaction", 0)]

    def test_event_beats_timer_at_same_ts(self, bus):
        order = []
        bus.schedule(100, lambda: order.append("timer"))
        bus.subscribe("user-angle", lambda e: order.append("event"))
        bus.publish("user-angle", 1, ts=100)
        bus.advance_clock(100)
        assert order == ["event", "timer"]

    def test_timers_fire_in_scheduling_order_at_same_deadline(self, bus):
        order = []
        bus.schedule(100, lambda: order.append("a"))
        bus.schedule(100, lambda: order.append("b"))
        bus.advance_clock(100)
        assert order == ["a", "b"]

    def test_determinism_same_script_same_delivery(self):
        def run_once():
            b = EventBus()
            b.register_topic("t")
            log = []
            b.subscribe("t", lambda e: log.append((e.topic, e.ts, e.seq, e.payload)))
            b.schedule(50, lambda: b.publish("t", "timer-pub"))
            b.publish("t", "now")
            b.advance_clock(200)
            return log

        assert run_once() == run_once()


class TestConfig:
    def test_defaults_validate(self):
        EngineConfig().validate()

    def test_paper_constants(self):
        cfg = EngineConfig()
        assert cfg.doa_poll_ms == 100
        assert cfg.user_switch_deg == 20
        assert cfg.robot_region == (180, 360)
        assert cfg.resume_silence_ms == 1500
        assert cfg.suppress_after_interrupt_ms == 2000
        assert cfg.suppress_after_speech_ms == 1000
        assert cfg.diar_window_ms == 3000
        assert cfg.face_frame_ms == 2000
        assert cfg.doa_ignore_deg == 30
        assert cfg.wait_diarisation_ms == 800
        assert cfg.wait_any_identity_ms == 2000
        assert cfg.sentence_terminators == {".", "!", "?"}

    def test_bad_durations_rejected(self):
        cfg = EngineConfig(doa_poll_ms=0)
        with pytest.raises(ValueError):
            cfg.validate()

    def test_switch_threshold_must_undercut_hysteresis(self):
        cfg = EngineConfig(user_switch_deg=30)
        with pytest.raises(ValueError):
            cfg.validate()

    def test_robot_region_must_avoid_user_half(self):
        cfg = EngineConfig(robot_region=(90, 360))
        with pytest.raises(ValueError):
            cfg.validate()
