import pytest

from parley.bus import EventBus
from parley.gateway import GatewaySession, Outbox


@pytest.fixture
def session():
    return GatewaySession(bus=EventBus(), session_id="s-test")


def drain(session):
    return session.outbox.drain()


def join_two(session):
    session.handle({"type": "join", "body": {"name": "Alice", "angle_deg": 60}})
    session.handle({"type": "join", "body": {"name": "Bob", "angle_deg": 120}})
    drain(session)


def types(messages):
    return [m["type"] for m in messages]


class TestJoin:
    def test_join_emits_state(self, session):
        session.handle({"type": "join", "body": {"name": "Alice", "angle_deg": 60}})
        out = drain(session)
        assert types(out) == ["state"]
        assert out[0]["session"] == "s-test"
        assert out[0]["body"]["listening"] is True

    def test_duplicate_name_rejected(self, session):
        session.handle({"type": "join", "body": {"name": "Alice", "angle_deg": 60}})
        session.handle({"type": "join", "body": {"name": "Alice", "angle_deg": 120}})
        out = drain(session)
        assert types(out) == ["state", "error"]
        assert "already taken" in out[1]["body"]["message"]

    def test_seat_outside_user_region_rejected(self, session):
        session.handle({"type": "join", "body": {"name": "Alice", "angle_deg": 200}})
        (msg,) = drain(session)
        assert msg["type"] == "error"


class TestUtterance:
    def test_round_trip_produces_transcript_turn_and_reply(self, session):
        join_two(session)
        session.handle({"type": "utterance",
                        "body": {"participant": "Alice", "text": "Hello robot!",
                                 "facing_robot": True}})
        # face frame at 2000 makes Alice fusable; utterance lands before that,
        # so advance far enough for the echo reply (header+body at 600 ms each).
        session.bus.advance_clock(5000)
        out = drain(session)
        kinds = types(out)
        assert "transcript" in kinds
        assert "turn" in kinds
        assert "robot_say" in kinds
        transcript = next(m for m in out if m["type"] == "transcript")
        assert transcript["body"]["text"] == "Hello robot!"
        say = next(m for m in out if m["type"] == "robot_say")
        assert say["body"]["addressee"] == "Alice"
        assert say["body"]["onset_ms"] > 0

    def test_turn_trigger_is_gaze_handoff_when_facing(self, session):
        join_two(session)
        session.handle({"type": "utterance",
                        "body": {"participant": "Alice", "text": "Hi!",
                                 "facing_robot": True}})
        session.bus.advance_clock(1000)
        turn = next(m for m in drain(session) if m["type"] == "turn")
        assert turn["body"]["trigger"] == "gaze-handoff"

    def test_long_pause_trigger_when_not_facing(self, session):
        join_two(session)
        session.handle({"type": "utterance",
                        "body": {"participant": "Bob", "text": "Hmm, let me think.",
                                 "facing_robot": False}})
        session.bus.advance_clock(2000)
        assert not any(m["type"] == "turn" for m in drain(session))
        session.bus.advance_clock(4000)
        turn = next(m for m in drain(session) if m["type"] == "turn")
        assert turn["body"]["trigger"] == "long-pause"

    def test_unknown_participant_errors(self, session):
        session.handle({"type": "utterance",
                        "body": {"participant": "Ghost", "text": "boo"}})
        (msg,) = drain(session)
        assert msg["type"] == "error"


class TestSpeechHold:
    def test_barge_in_pauses_robot(self, session):
        join_two(session)
        session.handle({"type": "utterance",
                        "body": {"participant": "Alice",
                                 "text": "Tell me a very long story now please!",
                                 "facing_robot": True}})
        # first utterance resolves its label via the 800 ms relative
        # fallback, then the echo reply streams: speech starts ~2110 ms
        session.bus.advance_clock(2300)
        assert session.engine.output.is_robot_speaking
        session.handle({"type": "speech", "body": {"participant": "Bob", "state": "start"}})
        session.bus.advance_clock(200)
        assert not session.engine.output.is_robot_speaking
        session.handle({"type": "speech", "body": {"participant": "Bob", "state": "end"}})
        session.bus.advance_clock(2000)  # 1.5 s of silence resumes
        assert session.engine.output.is_robot_speaking

    def test_speech_bad_state_errors(self, session):
        join_two(session)
        session.handle({"type": "speech", "body": {"participant": "Bob", "state": "hold"}})
        assert types(drain(session)) == ["error"]


class TestConfigAndErrors:
    def test_unknown_type_keeps_session_alive(self, session):
        session.handle({"type": "bogus", "body": {}})
        (msg,) = drain(session)
        assert msg["type"] == "error"
        session.handle({"type": "join", "body": {"name": "Alice", "angle_deg": 60}})
        assert types(drain(session)) == ["state"]

    def test_noise_override(self, session):
        join_two(session)
        session.handle({"type": "config", "body": {"noise": {"voice_id_blank_p": 1.0}}})
        out = drain(session)
        assert types(out) == ["state"]

    def test_bad_noise_field_errors(self, session):
        session.handle({"type": "config", "body": {"noise": {"volume": 9}}})
        (msg,) = drain(session)
        assert msg["type"] == "error"


class TestOutbox:
    def test_drop_oldest_state_under_pressure(self):
        box = Outbox(cap=3)
        box.put({"type": "state", "n": 1})
        box.put({"type": "robot_say", "n": 2})
        box.put({"type": "state", "n": 3})
        box.put({"type": "transcript", "n": 4})
        items = box.drain()
        assert {m["n"] for m in items} == {2, 3, 4}  # oldest state dropped

    def test_dialogue_messages_never_dropped(self):
        box = Outbox(cap=2)
        for n in range(5):
            box.put({"type": "robot_say", "n": n})
        assert len(box.drain()) == 5


class TestStateMirrorsBus:
    def test_led_and_gaze_reflected(self, session):
        join_two(session)
        session.handle({"type": "utterance",
                        "body": {"participant": "Alice", "text": "Hello there!",
                                 "facing_robot": True}})
        session.bus.advance_clock(5000)
        states = [m["body"] for m in drain(session) if m["type"] == "state"]
        assert any(s["listening"] is False for s in states)  # while speaking
        assert states[-1]["listening"] is True  # back to listening at the end
