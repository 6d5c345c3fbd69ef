"""Interaction output: the robot's voice, gaze, gesture, and listening LED.

Sentences arriving on ``text`` are spoken through the embodiment
backend. Synthesis is simulated word by word at a constant per-word
duration so pause points are deterministic; a live robot substitutes
real synthesis callbacks behind the same interface.

Barge-in handling follows the floor-yielding rule: if a user starts
talking while the robot is talking, the robot pauses with the spoken
prefix frozen at a word boundary. After ``resume_silence_ms`` with no
user voice activity it resumes from where it stopped; if instead a full
new user segment completes while paused, the utterance is abandoned.
Either way, exactly the words actually rendered are published on
``spoken-text``.

A sentence is not spoken at all if an interruption happened less than
``suppress_after_interrupt_ms`` before, or a user transcription arrived
less than ``suppress_after_speech_ms`` before ("less than": the exact
boundary value is not suppressed).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from parley.awareness import SwitchKind
from parley.backends import EmbodimentBackend
from parley.bus import EngineConfig, EventBus

logger = logging.getLogger(__name__)


class UtteranceState(Enum):
    QUEUED = "queued"
    SPEAKING = "speaking"
    PAUSED = "paused"
    FINISHED = "finished"
    ABANDONED = "abandoned"


class EnqueueResult(Enum):
    EMITTED = "emitted"
    SUPPRESSED = "suppressed"


@dataclass
class RobotUtterance:
    utterance_id: int
    full_text: str
    addressee_id: Optional[str]
    turn_index: Optional[int]
    sentence_index: Optional[int]
    enqueue_ts: int
    state: UtteranceState = UtteranceState.QUEUED
    onset_ts: Optional[int] = None
    end_ts: Optional[int] = None
    words: list = field(default_factory=list)
    words_done: int = 0

    @property
    def spoken_prefix(self) -> str:
        return " ".join(self.words[: self.words_done])

    @property
    def remainder(self) -> str:
        return " ".join(self.words[self.words_done:])


class InteractionOutput:
    def __init__(self, bus: EventBus, config: EngineConfig, embodiment: EmbodimentBackend):
        self._bus = bus
        self._config = config
        self._embodiment = embodiment
        self._ids = itertools.count(1)
        self._current: Optional[RobotUtterance] = None
        self._queue: list[RobotUtterance] = []
        self._word_timer = None
        self._resume_timer = None
        self._listening = True
        self._gaze_angle: Optional[int] = None
        self._gaze_user: Optional[str] = None
        self.last_interrupt_ts: Optional[int] = None
        self.last_user_speech_ts: Optional[int] = None
        self._last_user_doa_ts: Optional[int] = None
        embodiment.set_led(True)
        bus.subscribe("text", self._on_text)
        bus.subscribe("robot-user-switch", self._on_switch)
        bus.subscribe("transcribed", self._on_transcribed)
        bus.subscribe("user-angle", self._on_user_angle)
        bus.subscribe("face-position", self._on_face_position)
        bus.subscribe("face-id", self._on_face_id)

    @property
    def listening_indicator(self) -> bool:
        return self._listening

    @property
    def is_robot_speaking(self) -> bool:
        return self._current is not None and self._current.state is UtteranceState.SPEAKING

    @property
    def current_utterance(self) -> Optional[RobotUtterance]:
        return self._current

    # ----- speech pipeline -----

    def _on_text(self, event) -> None:
        p = event.payload
        self.enqueue_robot_text(
            p["sentence"],
            addressee_id=p.get("addressee_id"),
            turn_index=p.get("turn_index"),
            sentence_index=p.get("sentence_index"),
        )

    def enqueue_robot_text(
        self,
        sentence: str,
        addressee_id: Optional[str] = None,
        turn_index: Optional[int] = None,
        sentence_index: Optional[int] = None,
    ) -> EnqueueResult:
        if not sentence:
            raise ValueError("cannot enqueue an empty sentence")
        now = self._bus.now()
        if (
            self.last_interrupt_ts is not None
            and now - self.last_interrupt_ts < self._config.suppress_after_interrupt_ms
        ):
            logger.debug("suppressed (interrupt %d ms ago): %r",
                         now - self.last_interrupt_ts, sentence)
            return EnqueueResult.SUPPRESSED
        if (
            self.last_user_speech_ts is not None
            and now - self.last_user_speech_ts < self._config.suppress_after_speech_ms
        ):
            logger.debug("suppressed (user spoke %d ms ago): %r",
                         now - self.last_user_speech_ts, sentence)
            return EnqueueResult.SUPPRESSED
        utterance = RobotUtterance(
            utterance_id=next(self._ids),
            full_text=sentence,
            addressee_id=addressee_id,
            turn_index=turn_index,
            sentence_index=sentence_index,
            enqueue_ts=now,
            words=sentence.split(),
        )
        self._queue.append(utterance)
        if self._current is None:
            self._start_next()
        return EnqueueResult.EMITTED

    def _start_next(self) -> None:
        if not self._queue:
            return
        utterance = self._queue.pop(0)
        self._current = utterance
        utterance.state = UtteranceState.SPEAKING
        utterance.onset_ts = self._bus.now()
        self._set_listening(False)
        self._embodiment.say(
            utterance.full_text, utterance.utterance_id, utterance.turn_index,
            utterance.sentence_index, utterance.addressee_id,
        )
        self._schedule_word()

    def _schedule_word(self) -> None:
        self._word_timer = self._bus.schedule(self._config.word_ms, self._word_done)

    def _word_done(self) -> None:
        utterance = self._current
        if utterance is None or utterance.state is not UtteranceState.SPEAKING:
            return
        utterance.words_done += 1
        if utterance.words_done >= len(utterance.words):
            self._finish(utterance)
        else:
            self._schedule_word()

    def _finish(self, utterance: RobotUtterance) -> None:
        utterance.state = UtteranceState.FINISHED
        utterance.end_ts = self._bus.now()
        self._current = None
        self.finalize_utterance(utterance)
        if self._queue:
            self._start_next()
        else:
            self._set_listening(True)

    def finalize_utterance(self, utterance: RobotUtterance) -> None:
        """Publish the interruption-safe spoken prefix, exactly once.

        An utterance abandoned before any word was rendered publishes
        nothing: there is no speech to account for.
        """
        assert utterance.state in (UtteranceState.FINISHED, UtteranceState.ABANDONED)
        prefix = utterance.spoken_prefix
        if not prefix:
            return
        self._bus.publish("spoken-text", {
            "text": prefix,
            "utterance_id": utterance.utterance_id,
            "turn_index": utterance.turn_index,
            "sentence_index": utterance.sentence_index,
            "addressee_id": utterance.addressee_id,
            "onset_ts": utterance.onset_ts,
            "complete": utterance.state is UtteranceState.FINISHED,
        })

    # ----- barge-in -----

    def _on_switch(self, event) -> None:
        if event.payload.kind is SwitchKind.ROBOT_TO_USER:
            self.on_user_speech_start(self._bus.now())

    def on_user_speech_start(self, now: int) -> None:
        self.last_user_speech_ts = now
        self._last_user_doa_ts = now
        utterance = self._current
        if utterance is None:
            return
        if utterance.state is UtteranceState.SPEAKING:
            if self._word_timer is not None:
                self._word_timer.cancel()
                self._word_timer = None
            utterance.state = UtteranceState.PAUSED
            self.last_interrupt_ts = now
            self._embodiment.pause_speech(utterance.utterance_id)
            self._schedule_resume_check()
        elif utterance.state is UtteranceState.PAUSED:
            self.last_interrupt_ts = now
            self._schedule_resume_check()

    def _schedule_resume_check(self) -> None:
        if self._resume_timer is not None:
            self._resume_timer.cancel()
        self._resume_timer = self._bus.schedule(
            self._config.resume_silence_ms, self._resume_if_silent
        )

    def _resume_if_silent(self) -> None:
        self._resume_timer = None
        utterance = self._current
        if utterance is None or utterance.state is not UtteranceState.PAUSED:
            return
        now = self._bus.now()
        silence = now - (self._last_user_doa_ts if self._last_user_doa_ts is not None else 0)
        self.on_silence_elapsed(silence)

    def on_silence_elapsed(self, duration_ms: int) -> None:
        utterance = self._current
        if utterance is None or utterance.state is not UtteranceState.PAUSED:
            return
        if duration_ms < self._config.resume_silence_ms:
            return
        utterance.state = UtteranceState.SPEAKING
        self._embodiment.resume_speech(utterance.utterance_id, utterance.remainder)
        self._schedule_word()

    def _abandon(self) -> None:
        utterance = self._current
        if utterance is None:
            return
        utterance.state = UtteranceState.ABANDONED
        utterance.end_ts = self._bus.now()
        self._current = None
        if self._resume_timer is not None:
            self._resume_timer.cancel()
            self._resume_timer = None
        # The user took over; the rest of this response is stale.
        self._queue.clear()
        self.finalize_utterance(utterance)
        self._set_listening(True)

    # ----- feedback and gaze -----

    def _on_transcribed(self, event) -> None:
        now = self._bus.now()
        self.last_user_speech_ts = now
        self.on_transcribed_feedback()
        if self._current is not None and self._current.state is UtteranceState.PAUSED:
            self._abandon()

    def on_transcribed_feedback(self) -> None:
        self._embodiment.gesture("brow_raise")

    def _on_user_angle(self, event) -> None:
        self._last_user_doa_ts = self._bus.now()
        if self._current is not None and self._current.state is UtteranceState.PAUSED:
            self._schedule_resume_check()

    def _on_face_position(self, event) -> None:
        self.on_face_position(event.payload)

    def on_face_position(self, angle_deg: int) -> None:
        if not 0 <= angle_deg < 180:
            logger.warning("ignoring gaze target outside the user region: %d", angle_deg)
            return
        if angle_deg == self._gaze_angle:
            return
        self._gaze_angle = angle_deg
        self._embodiment.gaze(angle_deg)

    def _on_face_id(self, event) -> None:
        absolute_id = event.payload["absolute_id"]
        if absolute_id == self._gaze_user:
            return
        self._gaze_user = absolute_id
        self._embodiment.attend_user(absolute_id)

    def _set_listening(self, listening: bool) -> None:
        if listening == self._listening:
            return
        self._listening = listening
        self._embodiment.set_led(listening)
