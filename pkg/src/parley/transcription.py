"""Transcription: wraps the ASR backend and publishes ``transcribed`` events.

The ASR backend pushes final results here; each one becomes a
TranscriptSegment with the session-relative speaker label the recogniser
assigned. The module pauses while the turn belongs to the robot so the
system does not transcribe its own speech, and resumes when the turn
switches back to a user.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Optional

from parley.awareness import SwitchKind
from parley.bus import EngineConfig, EventBus

logger = logging.getLogger(__name__)


@dataclass
class TranscriptSegment:
    """One user utterance. ``relative_speaker`` is stable within a
    session only; ``resolved_speaker`` is filled in later by identity
    fusion or diarisation."""

    segment_id: int
    text: str
    start_ts: int
    end_ts: int
    relative_speaker: Optional[str]
    resolved_speaker: Optional[str] = None


class Transcription:
    def __init__(self, bus: EventBus, config: EngineConfig):
        self._bus = bus
        self._config = config
        self._paused = False
        self._paused_since: Optional[int] = None
        self._ids = itertools.count(1)
        bus.subscribe("robot-user-switch", self._on_switch)

    @property
    def paused(self) -> bool:
        return self._paused

    def set_paused(self, paused: bool) -> None:
        """Idempotent; records when the pause began for the straddle rule."""
        if paused and not self._paused:
            self._paused_since = self._bus.now()
        self._paused = paused
        if not paused:
            self._paused_since = None

    def _on_switch(self, event) -> None:
        if event.payload.kind is SwitchKind.USER_TO_ROBOT:
            self.set_paused(True)
        elif event.payload.kind is SwitchKind.ROBOT_TO_USER:
            self.set_paused(False)

    def on_asr_result(
        self,
        text: str,
        start_ts: int,
        end_ts: int,
        relative_speaker: Optional[str],
    ) -> Optional[TranscriptSegment]:
        """Publish one ``transcribed`` event per final ASR result.

        Empty results are dropped. Results arriving while paused are
        dropped only if they started after the pause began: the pause
        exists to avoid self-transcription, not to censor user speech
        already in flight.
        """
        if not text.strip():
            return None
        if self._paused and self._paused_since is not None and start_ts >= self._paused_since:
            logger.debug("dropping ASR result inside paused interval: %r", text)
            return None
        segment = TranscriptSegment(
            segment_id=next(self._ids),
            text=text,
            start_ts=start_ts,
            end_ts=end_ts,
            relative_speaker=relative_speaker,
        )
        self._bus.publish("transcribed", segment)
        return segment
