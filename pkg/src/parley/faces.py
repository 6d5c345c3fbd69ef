"""Face tracking and identity fusion: who is talking, and where.

Samples the vision backend every ``face_frame_ms`` for enrolled-face
observations and fuses face positions with the voice direction of
arrival to maintain the current speaker. On conflicts between the two
modalities, the face-based choice wins: vision proved far more reliable
than voice identification.

Publishes ``users`` (recognised participants per frame), and
``face-id`` / ``face-position`` whenever the current speaker or their
location is updated. DOA variations smaller than ``doa_ignore_deg`` are
ignored; turn-switch events bypass that hysteresis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from parley.awareness import SwitchKind
from parley.bus import EngineConfig, EventBus
from parley.backends import VisionBackend

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FaceObservation:
    absolute_id: str
    angle_deg: int  # bounding-box centre mapped into the DOA frame
    confidence: float
    frame_ts: int


@dataclass
class ParticipantRecord:
    absolute_id: str
    display_name: str
    last_angle_deg: Optional[int] = None
    last_face_ts: Optional[int] = None
    last_confidence: float = 0.0
    voice_id: Optional[str] = None
    is_current_speaker: bool = False


class FaceTracking:
    def __init__(self, bus: EventBus, config: EngineConfig, enrolments: list,
                 vision: Optional[VisionBackend]):
        self._bus = bus
        self._config = config
        self._vision = vision
        self.records: dict[str, ParticipantRecord] = {
            e.absolute_id: ParticipantRecord(e.absolute_id, e.display_name)
            for e in enrolments
        }
        self._last_acted_doa: Optional[int] = None
        bus.subscribe("user-angle", self._on_user_angle)
        bus.subscribe("user-user-switch", self._on_switch)
        bus.subscribe("robot-user-switch", self._on_switch)
        bus.subscribe("transcribed", self._on_transcribed)
        bus.subscribe("speaker", self._on_speaker)
        bus.subscribe("addressee", self._on_addressee)
        if vision is not None:
            bus.schedule_periodic(config.face_frame_ms, self._frame_tick)

    def enrol(self, record) -> None:
        if record.absolute_id not in self.records:
            self.records[record.absolute_id] = ParticipantRecord(
                record.absolute_id, record.display_name
            )

    @property
    def current_speaker(self) -> Optional[ParticipantRecord]:
        for record in self.records.values():
            if record.is_current_speaker:
                return record
        return None

    # ----- frame sampling -----

    def _frame_tick(self) -> None:
        now = self._bus.now()
        raw = self._vision.sample_frame(now)
        observations = [
            FaceObservation(pid, angle, conf, now) for pid, angle, conf in raw
        ]
        self.on_frame_tick(observations)

    def on_frame_tick(self, observations: list) -> None:
        """Update participant records and publish one ``users`` event."""
        listed = []
        for obs in observations:
            record = self.records.get(obs.absolute_id)
            if record is None:
                logger.debug("ignoring un-enrolled face %r", obs.absolute_id)
                continue
            if obs.confidence < self._config.face_confidence_min:
                continue
            record.last_angle_deg = obs.angle_deg
            record.last_face_ts = obs.frame_ts
            record.last_confidence = obs.confidence
            listed.append({
                "absolute_id": record.absolute_id,
                "name": record.display_name,
                "angle_deg": record.last_angle_deg,
            })
        self._bus.publish("users", listed)

    # ----- fusion -----

    def fuse_current_speaker(self, doa_deg: int) -> Optional[ParticipantRecord]:
        """Pick the participant whose face is nearest the voice direction.

        Only faces seen within the staleness horizon take part. Ties
        break on higher face confidence, then lexicographic ID, so
        replays are deterministic. The diarised voice identity never
        overrides the face-based choice.
        """
        now = self._bus.now()
        fresh = [
            r for r in self.records.values()
            if r.last_angle_deg is not None
            and r.last_face_ts is not None
            and now - r.last_face_ts <= self._config.face_stale_ms
        ]
        if not fresh:
            return None
        best = min(
            fresh,
            key=lambda r: (abs(r.last_angle_deg - doa_deg), -r.last_confidence, r.absolute_id),
        )
        self._set_current(best)
        return best

    def _set_current(self, record: ParticipantRecord) -> None:
        for other in self.records.values():
            other.is_current_speaker = other is record

    def _refuse_and_announce(self, doa_deg: int) -> None:
        best = self.fuse_current_speaker(doa_deg)
        if best is None:
            return
        self._last_acted_doa = doa_deg
        self._bus.publish("face-id", {"absolute_id": best.absolute_id})
        self._bus.publish("face-position", best.last_angle_deg)

    # ----- event handlers -----

    def _on_user_angle(self, event) -> None:
        self.on_user_angle(event.payload)

    def on_user_angle(self, doa_deg: int) -> None:
        if (
            self._last_acted_doa is not None
            and abs(doa_deg - self._last_acted_doa) < self._config.doa_ignore_deg
        ):
            return
        self._refuse_and_announce(doa_deg)

    def _on_switch(self, event) -> None:
        # A turn switch is strong evidence of a new speaker; re-estimate
        # without the 30-degree hysteresis.
        switch = event.payload
        if switch.kind is SwitchKind.USER_TO_ROBOT or switch.new_angle_deg is None:
            return
        self._refuse_and_announce(switch.new_angle_deg)

    def _on_transcribed(self, event) -> None:
        self.on_transcribed(event.payload)

    def on_transcribed(self, segment) -> None:
        current = self.current_speaker
        if current is not None and segment.resolved_speaker is None:
            segment.resolved_speaker = current.absolute_id

    def _on_speaker(self, event) -> None:
        binding = event.payload
        record = self.records.get(binding.absolute_id)
        if record is not None:
            record.voice_id = binding.absolute_id

    def _on_addressee(self, event) -> None:
        self.on_addressee(event.payload["absolute_id"])

    def on_addressee(self, absolute_id: str) -> None:
        """Aim the robot's reply: a known addressee position becomes the
        current user location."""
        record = self.records.get(absolute_id)
        if record is None or record.last_angle_deg is None:
            return
        self._set_current(record)
        self._bus.publish("face-position", record.last_angle_deg)
