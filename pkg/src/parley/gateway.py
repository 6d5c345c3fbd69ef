"""Session gateway: the engine behind a bidirectional message channel.

A session owns one engine. Inbound wire messages impersonate perfect
sensors: a ``join`` enrols a participant at a declared seat, an
``utterance`` is injected as a speech-start / ASR-final / speech-end
triple with DOA at that seat, and ``speech`` start/end messages hold the
floor for hold-to-speak barge-ins. Outbound messages mirror bus events
one-to-one: nothing exists on the wire that did not happen on the bus.

The session core is transport-free and clock-agnostic, so tests drive it
on a virtual clock; ``serve`` runs sessions on the wall clock behind a
WebSocket endpoint. The wire schema is documented in docs/wire-schema.md.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import logging
from typing import Callable, Optional

from parley.backends import DoaSample, PushMicBackend
from parley.bus import EngineConfig, EventBus
from parley.diarisation import EnrolmentRecord
from parley.engine import Engine
from parley.scenario import NoiseConfig, ScenarioError
from parley.simulator import NoiseModel

logger = logging.getLogger(__name__)

OUTBOX_CAP = 256
_session_ids = itertools.count(1)


class Outbox:
    """Bounded outbound buffer: under pressure the oldest ``state``
    message is dropped first; dialogue messages are never dropped."""

    def __init__(self, cap: int = OUTBOX_CAP):
        self._cap = cap
        self._items: list = []

    def put(self, message: dict) -> None:
        self._items.append(message)
        if len(self._items) > self._cap:
            for i, item in enumerate(self._items):
                if item["type"] == "state":
                    del self._items[i]
                    return

    def drain(self) -> list:
        items, self._items = self._items, []
        return items


class GatewayVisionBackend:
    """Every joined participant is visible at their declared seat; the
    per-session noise model may blank or swap identities."""

    def __init__(self, noise_fn: Callable[[], Optional[NoiseModel]]):
        self._noise_fn = noise_fn
        self._seats: dict[str, int] = {}

    def join(self, absolute_id: str, angle_deg: int) -> None:
        self._seats[absolute_id] = angle_deg

    def sample_frame(self, ts: int) -> list:
        noise = self._noise_fn()
        out = []
        for pid, angle in self._seats.items():
            predicted = noise.face_outcome(pid) if noise else pid
            if predicted is not None:
                out.append((predicted, angle, 0.95))
        return out


class GatewaySpeakerIdBackend:
    """The gateway knows who is talking (messages say so); identity
    queries return that truth through the noise model after a latency."""

    def __init__(self, bus: EventBus, truth_fn: Callable[[], Optional[str]],
                 noise_fn: Callable[[], Optional[NoiseModel]], latency_ms: int = 400):
        self._bus = bus
        self._truth_fn = truth_fn
        self._noise_fn = noise_fn
        self._latency_ms = latency_ms

    def identify(self, window, callback) -> None:
        truth = self._truth_fn()
        noise = self._noise_fn()
        predicted = noise.voice_outcome(truth) if noise else truth
        confidence = 0.9 if predicted is not None else 0.0
        self._bus.schedule(
            self._latency_ms,
            lambda wid=window.window_id: callback(wid, predicted, confidence),
        )


class EchoLlmBackend:
    """Deterministic stand-in for a live model: addresses the last
    speaker and cycles a few open questions. Streams header then body."""

    TEMPLATES = (
        "That sounds interesting! Tell me more?",
        "I see what you mean. What happened next?",
        "Lovely! How does that make you feel?",
        "Good point. What do you both think about it?",
    )

    def __init__(self, bus: EventBus, last_speaker_fn: Callable[[], Optional[str]],
                 delay_ms: int = 600):
        self._bus = bus
        self._last_speaker_fn = last_speaker_fn
        self._delay_ms = delay_ms
        self._calls = 0

    def generate(self, prompt, turn_index, on_chunk, on_done, on_error) -> None:
        body = self.TEMPLATES[self._calls % len(self.TEMPLATES)]
        self._calls += 1
        speaker = self._last_speaker_fn()
        chunks = ([f"Addressee: {speaker}; Response: "] if speaker else []) + [body]
        for k, chunk in enumerate(chunks):
            self._bus.schedule((k + 1) * self._delay_ms,
                               lambda ti=turn_index, ci=k, c=chunk: on_chunk(ti, ci, c))
        self._bus.schedule(len(chunks) * self._delay_ms, lambda ti=turn_index: on_done(ti))


class _OutboxEmbodiment:
    """Embodiment adapter that turns robot actions into wire messages."""

    def __init__(self, session: "GatewaySession"):
        self._session = session

    def say(self, text, utterance_id, turn_index, sentence_index, addressee_id):
        self._session.robot_speaking = True
        self._session.send("robot_say", {
            "text": text,
            "addressee": self._session.display_name(addressee_id),
            "onset_ms": self._session.bus.now(),
        })

    def pause_speech(self, utterance_id):
        self._session.robot_speaking = False
        self._session.send_state()

    def resume_speech(self, utterance_id, remainder):
        self._session.robot_speaking = True
        self._session.send_state()

    def gesture(self, name):
        pass  # visible on a robot face, not in the playground

    def gaze(self, angle_deg):
        self._session.gaze_angle = angle_deg
        self._session.send_state()

    def attend_user(self, absolute_id):
        self._session.send_state()

    def set_led(self, on):
        self._session.listening = on
        if not on:
            self._session.robot_speaking = True
        self._session.send_state()


class GatewaySession:
    """One engine session driven by wire messages.

    Pass a virtual-clock bus for deterministic tests; ``serve`` uses the
    wall clock. Outbound messages accumulate in the outbox until drained
    by the transport.
    """

    def __init__(self, bus: Optional[EventBus] = None,
                 config: Optional[EngineConfig] = None,
                 noise: Optional[NoiseConfig] = None,
                 llm=None, session_id: Optional[str] = None):
        self.bus = bus or EventBus(mode=EventBus.WALL)
        self.config = config or EngineConfig()
        self.session_id = session_id or f"session-{next(_session_ids)}"
        self.outbox = Outbox()
        self.listening = True
        self.robot_speaking = False
        self.gaze_angle: Optional[int] = None
        self._participants: dict[str, dict] = {}  # id -> {name, angle}
        self._current_voice: Optional[str] = None
        self._last_speaker_name: Optional[str] = None
        self._speech_hold_timers: dict[str, object] = {}
        self._hold_start: dict[str, int] = {}
        self._noise_cfg = noise
        self._noise_model = (
            NoiseModel(noise, []) if noise is not None else None
        )
        self._mic = PushMicBackend(now_fn=self.bus.now,
                                   robot_voice_angle=self.config.robot_voice_angle)
        self._vision = GatewayVisionBackend(lambda: self._noise_model)
        speaker_id = GatewaySpeakerIdBackend(
            self.bus, lambda: self._current_voice, lambda: self._noise_model
        )
        llm = llm or EchoLlmBackend(self.bus, lambda: self._last_speaker_name)
        self.engine = Engine(
            self.bus, self.config, [], mic=self._mic, speaker_id=speaker_id,
            vision=self._vision, llm=llm, embodiment=_OutboxEmbodiment(self),
        )
        self.bus.subscribe("transcribed", self._on_transcribed)
        self.bus.subscribe("turn", self._on_turn)
        self.bus.subscribe("face-id", lambda e: self.send_state())
        self.bus.subscribe("spoken-text", self._on_spoken_text)

    # ----- outbound -----

    def send(self, msg_type: str, body: dict) -> None:
        self.outbox.put({"type": msg_type, "session": self.session_id, "body": body})

    def send_state(self) -> None:
        engine = getattr(self, "engine", None)
        if engine is None:
            return  # constructor-time LED init; first join sends state anyway
        current = engine.faces.current_speaker
        self.send("state", {
            "listening": self.listening,
            "current_speaker": current.display_name if current else None,
            "gaze_angle": self.gaze_angle,
        })

    def display_name(self, absolute_id: Optional[str]) -> Optional[str]:
        info = self._participants.get(absolute_id)
        return info["name"] if info else None

    def _on_transcribed(self, event) -> None:
        segment = event.payload
        if segment.resolved_speaker and segment.resolved_speaker in self._participants:
            label = self._participants[segment.resolved_speaker]["name"]
        elif segment.relative_speaker:
            label = segment.relative_speaker
        else:
            label = "user"
        self.send("transcript", {"participant": label, "text": segment.text})

    def _on_turn(self, event) -> None:
        if event.payload.take_turn:
            self.send("turn", {"trigger": event.payload.trigger.value})

    def _on_spoken_text(self, event) -> None:
        # An interrupted utterance re-announces itself truncated to the
        # words actually spoken; onset_ms correlates it with the original
        # robot_say so the client can replace the text in place.
        payload = event.payload
        if not payload["complete"]:
            self.send("robot_say", {
                "text": payload["text"],
                "addressee": self.display_name(payload.get("addressee_id")),
                "onset_ms": payload["onset_ts"],
            })

    # ----- inbound -----

    def handle(self, message: dict) -> None:
        msg_type = message.get("type")
        body = message.get("body", {})
        handlers = {
            "join": self._handle_join,
            "utterance": self._handle_utterance,
            "speech": self._handle_speech,
            "config": self._handle_config,
        }
        handler = handlers.get(msg_type)
        if handler is None:
            self.send("error", {"message": f"unknown message type: {msg_type!r}"})
            return
        try:
            handler(body)
        except (KeyError, TypeError, ValueError, ScenarioError) as exc:
            self.send("error", {"message": f"bad {msg_type} message: {exc}"})

    def _handle_join(self, body: dict) -> None:
        name = body["name"]
        angle = int(body["angle_deg"])
        if not 0 <= angle < 180:
            self.send("error", {"message": f"seat angle {angle} outside the user region"})
            return
        if any(p["name"] == name for p in self._participants.values()):
            self.send("error", {"message": f"participant name already taken: {name}"})
            return
        absolute_id = name.lower().replace(" ", "-")
        self._participants[absolute_id] = {"name": name, "angle": angle}
        self.engine.enrol(EnrolmentRecord(absolute_id, name))
        self._vision.join(absolute_id, angle)
        if self._noise_cfg is not None:
            self._noise_model = NoiseModel(self._noise_cfg, sorted(self._participants))
        self.send_state()

    def _participant_id(self, name: str) -> str:
        for pid, info in self._participants.items():
            if info["name"] == name or pid == name:
                return pid
        raise ValueError(f"unknown participant: {name}")

    def _handle_utterance(self, body: dict) -> None:
        pid = self._participant_id(body["participant"])
        text = body["text"]
        facing = bool(body.get("facing_robot", False))
        info = self._participants[pid]
        now = self.bus.now()
        self._current_voice = pid
        self._last_speaker_name = info["name"]
        self.bus.publish("gaze", {"facing_robot": facing})
        held = pid in self._speech_hold_timers
        start_ts = now if not held else self._hold_start[pid]
        self._mic.push(DoaSample(info["angle"], now))
        # Let the next DOA poll classify the voice before the ASR result
        # lands, mirroring how recognition trails speech.
        delay = self.config.doa_poll_ms + 10
        self.bus.schedule(delay, lambda: self.engine.transcription.on_asr_result(
            text, start_ts, now, self._relative_label(pid)))

    def _relative_label(self, pid: str) -> str:
        return f"S{sorted(self._participants).index(pid) + 1}"

    def _handle_speech(self, body: dict) -> None:
        pid = self._participant_id(body["participant"])
        state = body["state"]
        if state == "start":
            if pid in self._speech_hold_timers:
                return
            self._current_voice = pid
            angle = self._participants[pid]["angle"]
            self._mic.push(DoaSample(angle, self.bus.now()))
            timer = self.bus.schedule_periodic(
                self.config.doa_poll_ms,
                lambda: self._mic.push(DoaSample(angle, self.bus.now())),
            )
            self._speech_hold_timers[pid] = timer
            self._hold_start[pid] = self.bus.now()
        elif state == "end":
            timer = self._speech_hold_timers.pop(pid, None)
            if timer is not None:
                timer.cancel()
        else:
            raise ValueError(f"speech state must be start or end, got {state!r}")

    def _handle_config(self, body: dict) -> None:
        overrides = dict(body.get("noise", {}))
        base = self._noise_cfg or NoiseConfig()
        unknown = set(overrides) - set(vars(base))
        if unknown:
            raise ValueError(f"unknown noise fields: {sorted(unknown)}")
        for key, value in overrides.items():
            setattr(base, key, value)
        base.validate()
        self._noise_cfg = base
        self._noise_model = NoiseModel(base, sorted(self._participants))
        self.send_state()


async def _pump(session: GatewaySession, websocket) -> None:
    while True:
        session.bus.run_pending()
        for message in session.outbox.drain():
            await websocket.send(json.dumps(message))
        await asyncio.sleep(0.025)


async def _serve_connection(websocket, config: EngineConfig, noise: Optional[NoiseConfig]):
    session = GatewaySession(config=config, noise=noise)
    logger.info("session %s connected", session.session_id)
    pump = asyncio.create_task(_pump(session, websocket))
    try:
        async for raw in websocket:
            try:
                message = json.loads(raw)
            except json.JSONDecodeError as exc:
                session.send("error", {"message": f"not valid JSON: {exc}"})
                continue
            session.handle(message)
            session.bus.run_pending()
    finally:
        pump.cancel()
        logger.info("session %s closed", session.session_id)


async def serve(port: int, config: Optional[EngineConfig] = None,
                noise: Optional[NoiseConfig] = None) -> None:
    """Run the WebSocket gateway until cancelled."""
    import websockets

    config = config or EngineConfig()

    async def handler(websocket):
        await _serve_connection(websocket, config, noise)

    async with websockets.serve(handler, "0.0.0.0", port):
        logger.info("gateway listening on port %d", port)
        await asyncio.Future()
