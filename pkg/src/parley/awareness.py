"""Speaker awareness: classifies voice direction and detects turn switches.

Polls the microphone backend every ``doa_poll_ms`` and publishes:

* ``user-angle``        -- integer angle of user speech, user region only
* ``user-user-switch``  -- the user-region angle moved by more than
                           ``user_switch_deg`` since the previous
                           user-region measurement
* ``robot-user-switch`` -- the source region changed between user and
                           robot since the previous measurement

Speech from the robot region never produces a ``user-angle`` event; the
downstream modules use the switch events to pause transcription and to
handle barge-ins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from parley.backends import DoaSample, MicBackend
from parley.bus import EngineConfig, EventBus

logger = logging.getLogger(__name__)


class SourceClass(Enum):
    USER = "user"
    ROBOT = "robot"


class SwitchKind(Enum):
    USER_USER = "user-user"
    ROBOT_TO_USER = "robot-to-user"
    USER_TO_ROBOT = "user-to-robot"


@dataclass(frozen=True)
class TurnSwitch:
    kind: SwitchKind
    ts: int
    new_angle_deg: Optional[int] = None


def classify_source(angle_deg: int, config: EngineConfig) -> SourceClass:
    """Robot region is the half-open interval config.robot_region."""
    if not 0 <= angle_deg < 360:
        raise ValueError(f"angle out of range [0, 360): {angle_deg}")
    lo, hi = config.robot_region
    if lo <= angle_deg < hi:
        return SourceClass.ROBOT
    return SourceClass.USER


class SpeakerAwareness:
    def __init__(self, bus: EventBus, config: EngineConfig, mic: Optional[MicBackend]):
        self._bus = bus
        self._config = config
        self._mic = mic
        self._last_class: Optional[SourceClass] = None
        self._last_user_angle: Optional[int] = None
        self._poll_timer = bus.schedule_periodic(config.doa_poll_ms, self._poll)

    # The first-ever sample establishes the baseline without emitting a
    # switch: there is no previous measurement to have switched from.

    def mic_backend_read(self) -> Optional[DoaSample]:
        from parley.backends import BackendDisconnected

        if self._mic is None:
            raise BackendDisconnected("no microphone backend attached")
        return self._mic.read()

    def _poll(self) -> None:
        for topic, payload in self.on_poll_tick(self.mic_backend_read()):
            self._bus.publish(topic, payload)

    def on_poll_tick(self, latest: Optional[DoaSample]) -> list:
        """Events for one poll tick: (topic, payload) pairs in emission order."""
        if latest is None:
            return []
        now = self._bus.now()
        cls = classify_source(latest.angle_deg, self._config)
        out: list = []

        if self._last_class is not None and cls is not self._last_class:
            kind = (
                SwitchKind.ROBOT_TO_USER if cls is SourceClass.USER
                else SwitchKind.USER_TO_ROBOT
            )
            new_angle = latest.angle_deg if cls is SourceClass.USER else None
            out.append(("robot-user-switch", TurnSwitch(kind, now, new_angle)))

        if cls is SourceClass.USER:
            out.append(("user-angle", latest.angle_deg))
            if (
                self._last_user_angle is not None
                and abs(latest.angle_deg - self._last_user_angle)
                > self._config.user_switch_deg
            ):
                out.append(
                    ("user-user-switch",
                     TurnSwitch(SwitchKind.USER_USER, now, latest.angle_deg))
                )
            self._last_user_angle = latest.angle_deg

        self._last_class = cls
        return out
