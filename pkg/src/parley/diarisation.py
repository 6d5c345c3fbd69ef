"""Diarisation: absolute speaker identity from short recording windows.

A window opens when the turn switches from the robot to a user and is
restarted on user-user switches. A window closes when a transcription
arrives, when another switch restarts it, or at its 3 second deadline,
whichever comes first; on close it is submitted to the speaker-ID
backend, whose (possibly slow) result resolves the window in the
background.

Segments are bound to the window that overlaps their start time. If no
window overlaps, the most recent resolution still fresh within
``wait_any_identity_ms`` is used. A resolved binding publishes one
``speaker`` event; interrupted-window results never overwrite a binding
already made for a segment.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from parley.awareness import SwitchKind
from parley.backends import BackendUnavailable, SpeakerIdBackend
from parley.bus import EngineConfig, EventBus
from parley.transcription import TranscriptSegment

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnrolmentRecord:
    """A participant registered before the session: stable absolute ID
    plus backend-opaque voice and face references."""

    absolute_id: str
    display_name: str
    voiceprint_ref: Optional[str] = None
    faceprint_ref: Optional[str] = None


class WindowState(Enum):
    RECORDING = "recording"
    STOPPED = "stopped"
    RESOLVED = "resolved"


@dataclass
class IdentityWindow:
    window_id: int
    started_ts: int
    deadline_ts: int
    state: WindowState = WindowState.RECORDING
    stopped_ts: Optional[int] = None
    result_id: Optional[str] = None
    result_confidence: float = 0.0
    resolved_ts: Optional[int] = None
    pending_segments: list = field(default_factory=list)

    def covers(self, ts: int) -> bool:
        end = self.stopped_ts if self.stopped_ts is not None else self.deadline_ts
        return self.started_ts <= ts <= end


@dataclass(frozen=True)
class SpeakerBinding:
    """Payload of a ``speaker`` event: a segment bound to an enrolled ID."""

    segment_id: int
    absolute_id: str
    confidence: float


class Diarisation:
    def __init__(
        self,
        bus: EventBus,
        config: EngineConfig,
        enrolments: list,
        backend: Optional[SpeakerIdBackend],
    ):
        self._bus = bus
        self._config = config
        self._backend = backend
        self._enrolled_ids = {e.absolute_id for e in enrolments}
        self._ids = itertools.count(1)
        self._windows: list[IdentityWindow] = []
        self._current: Optional[IdentityWindow] = None
        self._deadline_timer = None
        self._emitted: set[int] = set()
        bus.subscribe("robot-user-switch", self._on_robot_user_switch)
        bus.subscribe("user-user-switch", self._on_user_user_switch)
        bus.subscribe("transcribed", self._on_transcribed)

    @property
    def windows(self) -> list:
        return list(self._windows)

    def enrol(self, record: EnrolmentRecord) -> None:
        self._enrolled_ids.add(record.absolute_id)

    # ----- window lifecycle -----

    def _start_window(self, now: int) -> IdentityWindow:
        window = IdentityWindow(
            window_id=next(self._ids),
            started_ts=now,
            deadline_ts=now + self._config.diar_window_ms,
        )
        self._windows.append(window)
        self._current = window
        self._deadline_timer = self._bus.schedule(
            self._config.diar_window_ms, lambda w=window: self._on_deadline(w)
        )
        return window

    def _stop_window(self, window: IdentityWindow, now: int) -> None:
        if window.state is not WindowState.RECORDING:
            return
        window.state = WindowState.STOPPED
        window.stopped_ts = now
        if self._deadline_timer is not None and window is self._current:
            self._deadline_timer.cancel()
            self._deadline_timer = None
        if window is self._current:
            self._current = None
        self._submit(window)

    def _on_deadline(self, window: IdentityWindow) -> None:
        # Nothing stopped the window in time; submit what was captured.
        if window.state is WindowState.RECORDING:
            self._stop_window(window, self._bus.now())

    def _submit(self, window: IdentityWindow) -> None:
        if self._backend is None:
            logger.warning("no speaker-ID backend; window %d unresolved", window.window_id)
            self._resolve(window.window_id, None, 0.0)
            return
        try:
            self._backend.identify(window, self._resolve)
        except BackendUnavailable as exc:
            logger.warning("speaker-ID backend unavailable: %s", exc)
            self._resolve(window.window_id, None, 0.0)

    def _resolve(self, window_id: int, absolute_id: Optional[str], confidence: float) -> None:
        window = next((w for w in self._windows if w.window_id == window_id), None)
        if window is None:
            return
        if absolute_id is not None and absolute_id not in self._enrolled_ids:
            logger.warning("backend returned un-enrolled ID %r; treating as blank", absolute_id)
            absolute_id = None
        window.state = WindowState.RESOLVED
        window.result_id = absolute_id
        window.result_confidence = confidence
        window.resolved_ts = self._bus.now()
        if absolute_id is not None:
            for segment in window.pending_segments:
                self._emit(segment, absolute_id, confidence)
        window.pending_segments = []

    # ----- event handlers -----

    def on_turn_switch(self, kind: SwitchKind) -> None:
        now = self._bus.now()
        if kind is SwitchKind.ROBOT_TO_USER:
            if self._current is None:
                self._start_window(now)
        elif kind is SwitchKind.USER_USER:
            if self._current is not None:
                self._stop_window(self._current, now)
            self._start_window(now)
        # USER_TO_ROBOT: the robot taking the floor is not a new voice.

    def _on_robot_user_switch(self, event) -> None:
        self.on_turn_switch(event.payload.kind)

    def _on_user_user_switch(self, event) -> None:
        self.on_turn_switch(event.payload.kind)

    def _on_transcribed(self, event) -> None:
        self.on_transcribed(event.payload)

    def on_transcribed(self, segment: TranscriptSegment) -> None:
        now = self._bus.now()
        window = self._window_for(segment.start_ts)
        if window is not None:
            if window.state is WindowState.RESOLVED:
                if window.result_id is not None:
                    self._emit(segment, window.result_id, window.result_confidence)
            else:
                window.pending_segments.append(segment)
        else:
            recent = self._recent_resolution(now)
            if recent is not None:
                self._emit(segment, recent.result_id, recent.result_confidence)
        if self._current is not None and self._current.state is WindowState.RECORDING:
            self._stop_window(self._current, now)

    # ----- helpers -----

    def _window_for(self, start_ts: int) -> Optional[IdentityWindow]:
        covering = [w for w in self._windows if w.covers(start_ts)]
        return covering[-1] if covering else None

    def _recent_resolution(self, now: int) -> Optional[IdentityWindow]:
        fresh = [
            w for w in self._windows
            if w.state is WindowState.RESOLVED
            and w.result_id is not None
            and w.resolved_ts is not None
            and now - w.resolved_ts <= self._config.wait_any_identity_ms
        ]
        return fresh[-1] if fresh else None

    def _emit(self, segment: TranscriptSegment, absolute_id: str, confidence: float) -> None:
        if segment.segment_id in self._emitted:
            return
        self._emitted.add(segment.segment_id)
        self._bus.publish(
            "speaker", SpeakerBinding(segment.segment_id, absolute_id, confidence)
        )
