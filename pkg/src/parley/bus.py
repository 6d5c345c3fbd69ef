"""In-process publish/subscribe event bus with a dual-mode clock.

Every session runs on exactly one bus. All module communication, all
timers, and all timing rules share the same clock, which comes in two
modes:

* virtual  -- time advances only through ``advance_clock``; used by the
  scenario simulator so every timing rule is deterministic and replayable.
* wall     -- time is read from the monotonic OS clock; used by live
  gateway sessions, where ``run_pending`` is pumped by the session loop.

Delivery model: a single logical dispatcher per session. Handlers never
run re-entrantly; anything published from inside a handler is queued and
delivered after the current event finishes, ordered by (ts, seq). Timers
are scheduled against the same clock and fire through the same dispatch
loop, so both clock modes share one code path. At equal timestamps,
queued events are delivered before timers fire, and timers fire in the
order they were scheduled.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

logger = logging.getLogger(__name__)


class BusError(Exception):
    """Base class for bus usage errors."""


class UnknownTopicError(BusError):
    """Publish or subscribe against a topic that was never registered."""


class ClockRegressionError(BusError):
    """An event was published with a timestamp behind the virtual clock."""


class ClockModeError(BusError):
    """A clock operation was used in the wrong bus mode."""


@dataclass(frozen=True)
class Event:
    """Timestamped, topic-tagged envelope carried on the bus.

    (ts, seq) totally orders all events within a session; seq is unique.
    """

    topic: str
    ts: int
    seq: int
    payload: Any


@dataclass
class EngineConfig:
    """Shared configuration constants for one engine session.

    Durations are integer milliseconds, angles integer degrees. The
    timing and threshold fields drive the perception and turn-taking
    rules; the remaining fields are artifact-level knobs (speech
    rendering speed, staleness limits, persona strings).
    """

    doa_poll_ms: int = 100
    user_switch_deg: int = 20
    robot_region: tuple[int, int] = (180, 360)  # half-open [lo, hi)
    resume_silence_ms: int = 1500
    suppress_after_interrupt_ms: int = 2000
    suppress_after_speech_ms: int = 1000
    diar_window_ms: int = 3000
    face_frame_ms: int = 2000
    doa_ignore_deg: int = 30
    wait_diarisation_ms: int = 800
    wait_any_identity_ms: int = 2000
    sentence_terminators: frozenset = frozenset({".", "!", "?"})
    long_pause_ms: int = 3000

    # Speech rendering and fusion knobs.
    word_ms: int = 330
    face_confidence_min: float = 0.5
    face_stale_frames: int = 3
    history_limit: int = 40
    robot_voice_angle: int = 270

    # Persona fields used when building prompts.
    robot_name: str = "Furhat"
    language: str = "English"
    location: str = "the lab"
    session_datetime: str = "2025-05-20 14:00"

    @property
    def face_stale_ms(self) -> int:
        return self.face_stale_frames * self.face_frame_ms

    def validate(self) -> None:
        durations = {
            "doa_poll_ms": self.doa_poll_ms,
            "resume_silence_ms": self.resume_silence_ms,
            "suppress_after_interrupt_ms": self.suppress_after_interrupt_ms,
            "suppress_after_speech_ms": self.suppress_after_speech_ms,
            "diar_window_ms": self.diar_window_ms,
            "face_frame_ms": self.face_frame_ms,
            "wait_diarisation_ms": self.wait_diarisation_ms,
            "wait_any_identity_ms": self.wait_any_identity_ms,
            "long_pause_ms": self.long_pause_ms,
            "word_ms": self.word_ms,
        }
        for name, value in durations.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.user_switch_deg >= self.doa_ignore_deg:
            raise ValueError(
                "user_switch_deg must be smaller than doa_ignore_deg "
                f"({self.user_switch_deg} >= {self.doa_ignore_deg})"
            )
        lo, hi = self.robot_region
        if not (0 <= lo < hi <= 360):
            raise ValueError(f"robot_region must be within [0, 360], got {self.robot_region}")
        if lo < 180:
            raise ValueError("robot_region must not overlap the user region [0, 180)")
        if not 0 <= self.robot_voice_angle < 360:
            raise ValueError(f"robot_voice_angle out of range: {self.robot_voice_angle}")


@dataclass
class Subscription:
    """Handle returned by ``subscribe``; pass to ``unsubscribe``."""

    topic: str
    handler: Callable[[Event], None]
    active: bool = True


@dataclass
class TimerHandle:
    deadline: int
    callback: Callable[[], None] = field(repr=False)
    interval: Optional[int] = None
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


class EventBus:
    """Single-dispatcher pub/sub bus; see module docstring for semantics."""

    VIRTUAL = "virtual"
    WALL = "wall"

    def __init__(self, mode: str = VIRTUAL):
        if mode not in (self.VIRTUAL, self.WALL):
            raise ValueError(f"unknown bus mode: {mode}")
        self.mode = mode
        self._origin = time.monotonic()
        self._now = 0
        self._topics: set[str] = set()
        self._subs: dict[str, list[Subscription]] = {}
        # Heaps of (ts, tie_break, item). Events and timers use separate
        # tie-break counters; at equal ts events are popped first.
        self._events: list[tuple[int, int, Event]] = []
        self._timers: list[tuple[int, int, TimerHandle]] = []
        self._event_seq = itertools.count()
        self._timer_seq = itertools.count()
        self._last_pub_ts = 0
        self._dispatching = False
        self._ingress: "queue.Queue[tuple[str, Any]]" = queue.Queue()
        self._lock = threading.Lock()

    # ----- clock -----

    def now(self) -> int:
        if self.mode == self.WALL:
            return int((time.monotonic() - self._origin) * 1000)
        return self._now

    def advance_clock(self, delta_ms: int) -> int:
        """Advance the virtual clock, firing everything due on the way.

        Returns the number of events delivered plus timers fired. Only
        permitted in virtual mode, and never from inside a handler.
        """
        if self.mode != self.VIRTUAL:
            raise ClockModeError("advance_clock is only available in virtual mode")
        if delta_ms <= 0:
            raise ValueError(f"delta_ms must be positive, got {delta_ms}")
        if self._dispatching:
            raise BusError("advance_clock called from inside a handler")
        limit = self._now + delta_ms
        fired = self._run_due(limit)
        self._now = limit
        return fired

    # ----- topics and subscriptions -----

    def register_topic(self, topic: str) -> None:
        self._topics.add(topic)
        self._subs.setdefault(topic, [])

    def topics(self) -> set:
        return set(self._topics)

    def subscribe(self, topic: str, handler: Callable[[Event], None]) -> Subscription:
        if topic not in self._topics:
            raise UnknownTopicError(topic)
        sub = Subscription(topic, handler)
        self._subs[topic].append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        sub.active = False
        subs = self._subs.get(sub.topic, [])
        if sub in subs:
            subs.remove(sub)

    # ----- publishing -----

    def publish(self, topic: str, payload: Any, ts: Optional[int] = None) -> int:
        """Queue an event for delivery; returns its sequence number.

        In virtual mode the timestamp must not regress behind the clock
        or behind any previously published event.
        """
        if topic not in self._topics:
            raise UnknownTopicError(topic)
        now = self.now()
        if ts is None:
            ts = now
        if self.mode == self.VIRTUAL and ts < max(self._last_pub_ts, now):
            raise ClockRegressionError(
                f"publish at ts={ts} behind clock (now={now}, last={self._last_pub_ts})"
            )
        self._last_pub_ts = max(self._last_pub_ts, ts)
        seq = next(self._event_seq)
        heapq.heappush(self._events, (ts, seq, Event(topic, ts, seq, payload)))
        if not self._dispatching:
            # Outside a handler, anything already due is delivered
            # synchronously; inside one, the dispatch loop picks it up.
            self._run_due(self.now())
        return seq

    def post(self, topic: str, payload: Any) -> None:
        """Thread-safe ingress for external producers (wall mode)."""
        self._ingress.put((topic, payload))

    def drain_ingress(self) -> int:
        """Publish queued ingress messages; call from the dispatcher thread."""
        moved = 0
        while True:
            try:
                topic, payload = self._ingress.get_nowait()
            except queue.Empty:
                break
            self.publish(topic, payload)
            moved += 1
        return moved

    # ----- timers -----

    def schedule(self, delay_ms: int, callback: Callable[[], None]) -> TimerHandle:
        if delay_ms < 0:
            raise ValueError(f"delay_ms must be >= 0, got {delay_ms}")
        handle = TimerHandle(self.now() + delay_ms, callback)
        heapq.heappush(self._timers, (handle.deadline, next(self._timer_seq), handle))
        return handle

    def schedule_periodic(self, interval_ms: int, callback: Callable[[], None]) -> TimerHandle:
        """Fire ``callback`` every ``interval_ms``, first at now+interval."""
        if interval_ms <= 0:
            raise ValueError(f"interval_ms must be positive, got {interval_ms}")
        handle = TimerHandle(self.now() + interval_ms, callback, interval=interval_ms)
        heapq.heappush(self._timers, (handle.deadline, next(self._timer_seq), handle))
        return handle

    def cancel(self, handle: TimerHandle) -> None:
        handle.cancel()

    # ----- wall-mode pumping -----

    def run_pending(self) -> int:
        """Deliver everything due by the wall clock; returns count fired."""
        if self.mode != self.WALL:
            raise ClockModeError("run_pending is only available in wall mode")
        self.drain_ingress()
        return self._run_due(self.now())

    def next_deadline(self, skip_periodic: bool = False) -> Optional[int]:
        """Earliest pending event or timer deadline, or None if idle."""
        best: Optional[int] = None
        if self._events:
            best = self._events[0][0]
        for deadline, _, handle in self._timers:
            if handle.cancelled:
                continue
            if skip_periodic and handle.interval is not None:
                continue
            if best is None or deadline < best:
                best = deadline
        return best

    # ----- dispatch core -----

    def _pop_due(self, limit: int):
        while self._timers and self._timers[0][2].cancelled:
            heapq.heappop(self._timers)
        ev = self._events[0] if self._events else None
        tm = self._timers[0] if self._timers else None
        if ev is not None and (tm is None or ev[0] <= tm[0]):
            if ev[0] <= limit:
                return heapq.heappop(self._events)[2]
            return None
        if tm is not None and tm[0] <= limit:
            return heapq.heappop(self._timers)[2]
        return None

    def _run_due(self, limit: int) -> int:
        if self._dispatching:
            return 0
        self._dispatching = True
        fired = 0
        try:
            while True:
                item = self._pop_due(limit)
                if item is None:
                    break
                if self.mode == self.VIRTUAL:
                    self._now = max(self._now, item.ts if isinstance(item, Event) else item.deadline)
                if isinstance(item, Event):
                    fired += 1
                    for sub in list(self._subs.get(item.topic, [])):
                        if sub.active:
                            sub.handler(item)
                else:
                    if item.cancelled:
                        continue
                    fired += 1
                    if item.interval is not None:
                        item.deadline += item.interval
                        heapq.heappush(
                            self._timers, (item.deadline, next(self._timer_seq), item)
                        )
                    item.callback()
        finally:
            self._dispatching = False
        return fired
