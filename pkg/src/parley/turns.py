"""Turn-taking: when does the robot take the floor.

Two triggers, both anchored to the end of a user utterance: the speaker
faces the robot (gaze handoff, immediate) or nobody speaks for
``long_pause_ms`` afterwards. Any user voice activity or a new
transcription cancels the pending long-pause timer. Only take decisions
are published on ``turn``; the robot never takes twice without an
intervening user utterance or a completed robot utterance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from parley.bus import EngineConfig, EventBus
from parley.transcription import TranscriptSegment

logger = logging.getLogger(__name__)


class TurnTrigger(Enum):
    GAZE_HANDOFF = "gaze-handoff"
    LONG_PAUSE = "long-pause"
    NONE = "none"


@dataclass(frozen=True)
class TurnDecision:
    take_turn: bool
    trigger: TurnTrigger
    segment_id: Optional[int]
    ts: int


class TurnTaking:
    def __init__(self, bus: EventBus, config: EngineConfig):
        self._bus = bus
        self._config = config
        self._facing_robot = False
        self._pause_timer = None
        self._armed_at: Optional[int] = None
        self._can_take = True
        bus.subscribe("transcribed", self._on_transcribed)
        bus.subscribe("user-angle", self._on_user_angle)
        bus.subscribe("gaze", self._on_gaze)
        bus.subscribe("spoken-text", self._on_spoken_text)

    @property
    def facing_robot(self) -> bool:
        return self._facing_robot

    def _on_gaze(self, event) -> None:
        self._facing_robot = bool(event.payload["facing_robot"])

    def _on_transcribed(self, event) -> None:
        self.on_transcribed(event.payload, self._facing_robot)

    def on_transcribed(self, segment: TranscriptSegment, facing_robot: bool) -> TurnDecision:
        """Decide at utterance end; returns the immediate decision.

        With ``facing_robot`` false the decision is deferred to the
        long-pause timer, so the immediate return is a no-take.
        """
        self._cancel_pause_timer()
        self._can_take = True  # a new user utterance re-opens the floor
        if facing_robot:
            decision = TurnDecision(True, TurnTrigger.GAZE_HANDOFF, segment.segment_id,
                                    ts=segment.end_ts)
            self._take(decision)
            return decision
        self._armed_at = self._bus.now()
        self._pause_timer = self._bus.schedule(
            self._config.long_pause_ms,
            lambda seg_id=segment.segment_id: self._on_long_pause(seg_id),
        )
        return TurnDecision(False, TurnTrigger.NONE, segment.segment_id, ts=self._bus.now())

    def _on_long_pause(self, segment_id: int) -> None:
        self._pause_timer = None
        if not self._can_take:
            return
        self._take(TurnDecision(True, TurnTrigger.LONG_PAUSE, segment_id, ts=self._bus.now()))

    def _take(self, decision: TurnDecision) -> None:
        self._can_take = False
        self._cancel_pause_timer()
        self._bus.publish("turn", decision)

    def _on_user_angle(self, event) -> None:
        self.on_user_angle(event.payload)

    def on_user_angle(self, doa_deg: int) -> None:
        # New user voice means the silence never happened. Measurements
        # still trickling in from the utterance that armed the timer
        # (same tick) are not new speech.
        if self._pause_timer is not None and self._bus.now() > self._armed_at:
            self._cancel_pause_timer()

    def _on_spoken_text(self, event) -> None:
        # A completed robot utterance yields the floor again.
        self._can_take = True

    def _cancel_pause_timer(self) -> None:
        if self._pause_timer is not None:
            self._pause_timer.cancel()
            self._pause_timer = None
