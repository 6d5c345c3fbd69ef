"""Capability-level backend interfaces and their in-process adapters.

The engine never talks to hardware or cloud services directly; it sees
only these small interfaces. The simulator and the gateway provide
scripted or impersonated implementations, and live adapters (real
microphone array, ASR service, robot API) are extension points that
plug in behind the same surface.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

logger = logging.getLogger(__name__)


class BackendDisconnected(Exception):
    """Raised when a required backend is not attached or has gone away."""


class BackendUnavailable(Exception):
    """Raised by a backend that is attached but cannot serve the request."""


@dataclass(frozen=True)
class DoaSample:
    """One direction-of-arrival measurement: 0 degrees at the robot's
    right, increasing counter-clockwise."""

    angle_deg: int
    ts: int


class MicBackend(Protocol):
    def read(self) -> Optional[DoaSample]:
        """Most recent sample since the last read, or None."""
        ...


class SpeakerIdBackend(Protocol):
    def identify(self, window, callback: Callable[[int, Optional[str], float], None]) -> None:
        """Identify the voice captured by ``window``; the result arrives
        later through ``callback(window_id, absolute_id_or_None, confidence)``."""
        ...


class VisionBackend(Protocol):
    def sample_frame(self, ts: int) -> list:
        """Observations for the current camera frame as
        ``(absolute_id, angle_deg, confidence)`` tuples."""
        ...


class LlmBackend(Protocol):
    def generate(
        self,
        prompt: str,
        turn_index: int,
        on_chunk: Callable[[int, int, str], None],
        on_done: Callable[[int], None],
        on_error: Callable[[int, Exception], None],
    ) -> None:
        """Stream a response for ``prompt``; chunks re-enter through the
        bus clock so module logic stays single-threaded."""
        ...


class EmbodimentBackend(Protocol):
    def say(self, text: str, utterance_id: int, turn_index: Optional[int],
            sentence_index: Optional[int], addressee_id: Optional[str]) -> None: ...
    def pause_speech(self, utterance_id: int) -> None: ...
    def resume_speech(self, utterance_id: int, remainder: str) -> None: ...
    def gesture(self, name: str) -> None: ...
    def gaze(self, angle_deg: int) -> None: ...
    def attend_user(self, absolute_id: str) -> None: ...
    def set_led(self, on: bool) -> None: ...


class PushMicBackend:
    """Mic adapter fed by pushes (scripted stimuli or gateway messages).

    Keeps only the most recent unread sample per poll window. When the
    robot itself is speaking and no external sample arrived, it reports
    the robot's own voice from the robot direction, which is what a
    front-mounted microphone physically hears.
    """

    def __init__(self, now_fn: Callable[[], int], robot_voice_angle: int = 270):
        self._now_fn = now_fn
        self._robot_voice_angle = robot_voice_angle
        self._pending: Optional[DoaSample] = None
        self.robot_speaking_fn: Callable[[], bool] = lambda: False

    def push(self, sample: DoaSample) -> None:
        if self._pending is None or sample.ts >= self._pending.ts:
            self._pending = sample

    def read(self) -> Optional[DoaSample]:
        sample = self._pending
        self._pending = None
        if sample is not None:
            return sample
        if self.robot_speaking_fn():
            return DoaSample(self._robot_voice_angle, self._now_fn())
        return None


class CannedLlmBackend:
    """LLM adapter replaying canned responses, one per generation call.

    ``responses`` is a list of chunk lists in turn order. Chunk ``k`` of
    a response arrives ``(k + 1) * delay_ms`` after the request, followed
    by the stream-end callback, so generation latency is scripted rather
    than real. Requests beyond the canned list fail, exercising the
    caller's degradation path.
    """

    def __init__(self, bus, responses: list, delay_ms: int = 500):
        self._bus = bus
        self._responses = list(responses)
        self._delay_ms = delay_ms
        self._calls = 0

    def generate(self, prompt, turn_index, on_chunk, on_done, on_error) -> None:
        call = self._calls
        self._calls += 1
        if call >= len(self._responses):
            on_error(turn_index, BackendUnavailable(f"no canned response for call {call}"))
            return
        chunks = self._responses[call]
        for k, chunk in enumerate(chunks):
            self._bus.schedule(
                (k + 1) * self._delay_ms,
                lambda ti=turn_index, ci=k, c=chunk: on_chunk(ti, ci, c),
            )
        self._bus.schedule(
            max(1, len(chunks)) * self._delay_ms,
            lambda ti=turn_index: on_done(ti),
        )


class QueueSpeakerIdBackend:
    """Speaker-ID adapter that answers from a configured outcome queue.

    Each outcome is ``(absolute_id_or_None, confidence, latency_ms)``;
    outcomes are consumed in submission order. An empty queue answers
    blank immediately.
    """

    def __init__(self, bus, outcomes: Optional[list] = None, default_latency_ms: int = 400):
        self._bus = bus
        self._outcomes = list(outcomes or [])
        self._default_latency_ms = default_latency_ms

    def enqueue(self, absolute_id: Optional[str], confidence: float = 0.9,
                latency_ms: Optional[int] = None) -> None:
        self._outcomes.append((absolute_id, confidence, latency_ms))

    def identify(self, window, callback) -> None:
        if self._outcomes:
            absolute_id, confidence, latency = self._outcomes.pop(0)
        else:
            absolute_id, confidence, latency = None, 0.0, None
        if latency is None:
            latency = self._default_latency_ms
        self._bus.schedule(
            latency,
            lambda: callback(window.window_id, absolute_id, confidence),
        )


class RecordingEmbodiment:
    """Embodiment adapter that records actions instead of moving a robot.

    Used by the simulator (actions land in the trace) and by tests.
    ``sink`` is called with one dict per action.
    """

    def __init__(self, sink: Callable[[dict], None]):
        self._sink = sink

    def say(self, text, utterance_id, turn_index, sentence_index, addressee_id):
        self._sink({
            "action": "say", "text": text, "utterance_id": utterance_id,
            "turn_index": turn_index, "sentence_index": sentence_index,
            "addressee_id": addressee_id,
        })

    def pause_speech(self, utterance_id):
        self._sink({"action": "pause", "utterance_id": utterance_id})

    def resume_speech(self, utterance_id, remainder):
        self._sink({"action": "resume", "utterance_id": utterance_id, "remainder": remainder})

    def gesture(self, name):
        self._sink({"action": "gesture", "name": name})

    def gaze(self, angle_deg):
        self._sink({"action": "gaze", "angle_deg": angle_deg})

    def attend_user(self, absolute_id):
        self._sink({"action": "attend", "absolute_id": absolute_id})

    def set_led(self, on):
        self._sink({"action": "led", "on": on})
