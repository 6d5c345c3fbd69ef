"""Deterministic discrete-event driver for scenario scripts.

``run`` builds a virtual-clock engine wired to scripted backends, injects
every script stimulus at its timestamp (ASR results shifted by the
configured recognition delay), applies the seeded noise model, and
records everything that happens into a flat trace: bus events, backend
actions, injected stimuli, and recognition queries with their ground
truth. Equal scripts, seeds, and configs give byte-identical traces.

Noise draws are taken from per-modality substreams derived from the
scenario seed and consumed in event order, so inserting events of one
modality does not reshuffle the outcomes of another (stream-ordered
reproducibility, not per-event independence).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from parley.backends import CannedLlmBackend, DoaSample, PushMicBackend, RecordingEmbodiment
from parley.bus import EngineConfig, EventBus
from parley.engine import TOPICS, Engine, register_topics
from parley.scenario import NoiseConfig, ScenarioScript

logger = logging.getLogger(__name__)

MAX_DRAIN_STEPS = 100_000


def _jsonable(value):
    if isinstance(value, Enum):
        return value.value
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(value).items()}
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, frozenset):
        return sorted(value)
    return value


@dataclass
class EventTrace:
    """Replayable record of one simulation run."""

    scenario_id: str
    seed: int
    config: dict
    records: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        header = {"kind": "header", "scenario_id": self.scenario_id,
                  "seed": self.seed, "config": self.config}
        lines = [json.dumps(header, ensure_ascii=True)]
        lines.extend(json.dumps(r, ensure_ascii=True) for r in self.records)
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EventTrace":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:] if line]
        return cls(header.get("scenario_id", "?"), header.get("seed", 0),
                   header.get("config", {}), records)


class TraceRecorder:
    """Collects trace records with one monotonic sequence counter."""

    def __init__(self, bus: EventBus):
        self._bus = bus
        self._seq = 0
        self.records: list = []

    def subscribe_all(self, topics) -> None:
        for topic in topics:
            self._bus.subscribe(topic, self._on_event)

    def _on_event(self, event) -> None:
        self.record("event", topic=event.topic, payload=_jsonable(event.payload))

    def record(self, kind: str, **fields) -> None:
        entry = {"ts": self._bus.now(), "seq": self._seq, "kind": kind}
        entry.update(fields)
        self._seq += 1
        self.records.append(entry)


class NoiseModel:
    """Seeded error injection for the three perception modalities."""

    def __init__(self, cfg: NoiseConfig, enrolled_ids: list):
        self.cfg = cfg
        self._ids = sorted(enrolled_ids)
        base = random.Random(cfg.seed)
        self._voice = random.Random(base.getrandbits(64))
        self._face = random.Random(base.getrandbits(64))
        self._doa = random.Random(base.getrandbits(64))

    def _perturb(self, rng: random.Random, truth: Optional[str],
                 blank_p: float, wrong_p: float) -> Optional[str]:
        if truth is None:
            return None
        draw = rng.random()
        if draw < blank_p:
            return None
        if draw < blank_p + wrong_p:
            others = [i for i in self._ids if i != truth]
            if not others:
                return truth
            return others[rng.randrange(len(others))]
        return truth

    def voice_outcome(self, truth: Optional[str]) -> Optional[str]:
        return self._perturb(self._voice, truth,
                             self.cfg.voice_id_blank_p, self.cfg.voice_id_wrong_p)

    def face_outcome(self, truth: Optional[str]) -> Optional[str]:
        return self._perturb(self._face, truth,
                             self.cfg.face_blank_p, self.cfg.face_wrong_p)

    def doa_angle(self, angle_deg: int) -> int:
        if self.cfg.doa_jitter_deg == 0:
            return angle_deg
        jitter = self._doa.randint(-self.cfg.doa_jitter_deg, self.cfg.doa_jitter_deg)
        return (angle_deg + jitter) % 360


class ScriptedVisionBackend:
    """Samples the current visible-face set (as last set by the script)
    with face noise applied per observation; every (frame, true face)
    pair is recorded as one recognition query."""

    def __init__(self, noise: NoiseModel, recorder: TraceRecorder):
        self._noise = noise
        self._recorder = recorder
        self._visible: list = []  # [{"id", "angle_deg", "confidence"}]

    def set_visible(self, faces: list) -> None:
        self._visible = list(faces)

    def sample_frame(self, ts: int) -> list:
        observations = []
        for face in self._visible:
            predicted = self._noise.face_outcome(face["id"])
            self._recorder.record(
                "query", modality="face", frame_ts=ts,
                truth=face["id"], predicted=predicted,
            )
            if predicted is None:
                continue
            observations.append((predicted, face["angle_deg"], face.get("confidence", 0.95)))
        return observations


class ScriptedSpeakerIdBackend:
    """Resolves identity windows against the script.

    The true speaker of a window is the actor whose speech span covers
    the window start (or the first span starting inside the window).
    Scenarios with overlapping speech can bypass the inference with an
    explicit outcome list, consumed in submission order.
    """

    def __init__(self, bus: EventBus, spans: list, noise: NoiseModel,
                 recorder: TraceRecorder, latency_ms: int = 400,
                 explicit_outcomes: Optional[list] = None):
        self._bus = bus
        self._spans = spans
        self._noise = noise
        self._recorder = recorder
        self._latency_ms = latency_ms
        self._explicit = list(explicit_outcomes) if explicit_outcomes else None

    def _truth_for(self, window) -> Optional[str]:
        covering = [s for s in self._spans if s.contains(window.started_ts)]
        if covering:
            return covering[-1].actor
        stop = window.stopped_ts if window.stopped_ts is not None else window.deadline_ts
        inside = [s for s in self._spans if window.started_ts <= s.start_ms <= stop]
        if inside:
            return inside[0].actor
        return None

    def identify(self, window, callback: Callable) -> None:
        latency = self._latency_ms
        truth = self._truth_for(window)
        if self._explicit is not None and self._explicit:
            outcome = self._explicit.pop(0)
            predicted = outcome.get("id")
            confidence = outcome.get("confidence", 0.9)
            latency = outcome.get("latency_ms", latency)
        else:
            predicted = self._noise.voice_outcome(truth)
            confidence = 0.9 if predicted is not None else 0.0
        self._recorder.record(
            "query", modality="voice", window_id=window.window_id,
            window_start=window.started_ts, truth=truth, predicted=predicted,
        )
        self._bus.schedule(
            latency,
            lambda wid=window.window_id: callback(wid, predicted, confidence),
        )


def run(script: ScenarioScript, config: Optional[EngineConfig] = None,
        seed: Optional[int] = None) -> EventTrace:
    """Drive one scenario to quiescence and return the full trace.

    The clock advances stimulus by stimulus and then keeps going until
    no one-shot work remains (LLM chunks, speech rendering, label waits,
    resume and window timers); only the periodic perception ticks are
    left standing. Engine errors are recorded, not raised.
    """
    trace, _ = run_with_engine(script, config, seed)
    return trace


def run_with_engine(script: ScenarioScript, config: Optional[EngineConfig] = None,
                    seed: Optional[int] = None):
    """Like ``run`` but also returns the quiesced Engine for inspection
    of end-of-run state (conversation history, participant records)."""
    config = config or EngineConfig()
    noise_cfg = dataclasses.replace(script.noise)
    if seed is not None:
        noise_cfg.seed = seed

    bus = EventBus()
    register_topics(bus)
    recorder = TraceRecorder(bus)
    noise = NoiseModel(noise_cfg, [p.absolute_id for p in script.participants])

    mic = PushMicBackend(now_fn=bus.now, robot_voice_angle=config.robot_voice_angle)
    vision = ScriptedVisionBackend(noise, recorder)
    spans = script.speech_spans()
    speaker_id = ScriptedSpeakerIdBackend(
        bus, spans, noise, recorder, explicit_outcomes=script.voice_outcomes
    )
    llm = CannedLlmBackend(
        bus, [r.stream_chunks for r in script.responses],
        delay_ms=noise_cfg.llm_delay_ms_per_chunk,
    )
    embodiment = RecordingEmbodiment(lambda action: recorder.record("action", **action))

    # Segment start/end come from the enclosing scripted speech span;
    # arrival at the engine is shifted by the configured ASR delay.
    span_for_asr: dict[int, tuple] = {}
    open_starts: dict[str, int] = {}
    for index, ev in enumerate(script.events):
        if ev.kind == "speech_start":
            open_starts[ev.actor] = ev.t_ms
        elif ev.kind == "asr_final":
            span_for_asr[index] = (open_starts[ev.actor], ev.t_ms)

    engine_ref: dict = {}

    def inject(index: int, ev) -> None:
        engine = engine_ref["engine"]
        recorder.record("stimulus", event=ev.to_dict())
        if ev.kind == "doa":
            mic.push(DoaSample(noise.doa_angle(ev.angle_deg), bus.now()))
        elif ev.kind == "gaze":
            bus.publish("gaze", {"facing_robot": ev.facing_robot})
        elif ev.kind == "face_frame":
            vision.set_visible(ev.faces or [])
        elif ev.kind == "asr_final":
            start, end = span_for_asr[index]
            engine.transcription.on_asr_result(ev.text, start, end, ev.relative_id)
        # speech_start / speech_end are trace-only: they mark ground-truth
        # spans; the engine perceives speech through DOA and ASR.

    # Stimuli are scheduled before the engine exists so that, at equal
    # timestamps, pushes land before the engine's periodic polls read.
    for index, ev in enumerate(script.events):
        delay = ev.t_ms + (noise_cfg.asr_delay_ms if ev.kind == "asr_final" else 0)
        bus.schedule(delay, lambda i=index, e=ev: inject(i, e))

    engine = Engine(
        bus, config, script.enrolments(),
        mic=mic, speaker_id=speaker_id, vision=vision, llm=llm, embodiment=embodiment,
    )
    engine_ref["engine"] = engine
    # Last subscriber: event snapshots include mutations made by the
    # engine's own handlers (e.g. the fused speaker on a segment).
    recorder.subscribe_all(TOPICS)

    steps = 0
    while True:
        deadline = bus.next_deadline(skip_periodic=True)
        if deadline is None:
            break
        steps += 1
        if steps > MAX_DRAIN_STEPS:
            recorder.record("error", message="drain step limit exceeded")
            logger.error("scenario %s did not quiesce", script.scenario_id)
            break
        try:
            bus.advance_clock(max(1, deadline - bus.now()))
        except Exception as exc:  # engine errors land in the trace, not the caller
            recorder.record("error", message=f"{type(exc).__name__}: {exc}")
            logger.exception("engine error while running %s", script.scenario_id)
            break

    config_snapshot = _jsonable(dataclasses.asdict(config))
    trace = EventTrace(script.scenario_id, noise_cfg.seed, config_snapshot, recorder.records)
    return trace, engine
