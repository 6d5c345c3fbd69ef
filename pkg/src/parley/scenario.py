"""Scenario scripts: the simulator's input format.

A scenario is a structured JSON document describing enrolled
participants with seating angles, a time-ordered list of perception
stimuli (speech spans, DOA samples, ASR finals, gaze flags, camera
frames), canned LLM responses in turn order, a noise configuration, and
ground-truth annotations for scoring.

``load_scenario`` validates the document and reports the offending
field; ``ScriptBuilder`` builds the same structure programmatically and
is what the test suite and the bundled scenarios use.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from parley.diarisation import EnrolmentRecord

EVENT_KINDS = ("speech_start", "speech_end", "asr_final", "gaze", "face_frame", "doa")
MIN_SEATING_GAP_DEG = 20


class ScenarioError(Exception):
    """A scenario document violates the schema; message names the field."""


@dataclass
class NoiseConfig:
    voice_id_blank_p: float = 0.0
    voice_id_wrong_p: float = 0.0
    face_blank_p: float = 0.0
    face_wrong_p: float = 0.0
    doa_jitter_deg: int = 0
    asr_delay_ms: int = 0
    llm_delay_ms_per_chunk: int = 500
    seed: int = 0

    def validate(self) -> None:
        for name in ("voice_id_blank_p", "voice_id_wrong_p", "face_blank_p", "face_wrong_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ScenarioError(f"noise.{name} must be a probability, got {p}")
        if self.voice_id_blank_p + self.voice_id_wrong_p > 1.0:
            raise ScenarioError("noise: voice blank + wrong probabilities exceed 1")
        if self.face_blank_p + self.face_wrong_p > 1.0:
            raise ScenarioError("noise: face blank + wrong probabilities exceed 1")
        if self.doa_jitter_deg < 0:
            raise ScenarioError(f"noise.doa_jitter_deg must be >= 0, got {self.doa_jitter_deg}")
        if self.asr_delay_ms < 0:
            raise ScenarioError(f"noise.asr_delay_ms must be >= 0, got {self.asr_delay_ms}")
        if self.llm_delay_ms_per_chunk <= 0:
            raise ScenarioError("noise.llm_delay_ms_per_chunk must be positive")


@dataclass
class Participant:
    absolute_id: str
    name: str
    angle_deg: int

    def enrolment(self) -> EnrolmentRecord:
        return EnrolmentRecord(self.absolute_id, self.name,
                               f"vp-{self.absolute_id}", f"fp-{self.absolute_id}")


@dataclass
class ScriptEvent:
    t_ms: int
    kind: str
    actor: Optional[str] = None
    text: Optional[str] = None
    relative_id: Optional[str] = None
    facing_robot: Optional[bool] = None
    faces: Optional[list] = None
    angle_deg: Optional[int] = None

    def to_dict(self) -> dict:
        out = {"t_ms": self.t_ms, "kind": self.kind}
        for key in ("actor", "text", "relative_id", "facing_robot", "faces", "angle_deg"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


@dataclass
class CannedResponse:
    turn_index: int
    chunks: list
    addressee_header: Optional[str] = None

    @property
    def stream_chunks(self) -> list:
        if self.addressee_header:
            return [self.addressee_header] + list(self.chunks)
        return list(self.chunks)


@dataclass
class GroundTruth:
    segments: list = field(default_factory=list)   # [{"segment_index", "speaker"}]
    responses: list = field(default_factory=list)  # [{"turn_index", "intended", "goal_coherent"?}]


@dataclass
class SpeechSpan:
    actor: str
    start_ms: int
    end_ms: int

    def contains(self, ts: int) -> bool:
        return self.start_ms <= ts <= self.end_ms


@dataclass
class ScenarioScript:
    scenario_id: str
    participants: list
    events: list
    responses: list
    noise: NoiseConfig
    truth: GroundTruth
    violates_assumptions: bool = False
    voice_outcomes: Optional[list] = None

    def enrolments(self) -> list:
        return [p.enrolment() for p in self.participants]

    def speech_spans(self) -> list:
        """Closed speech spans per actor, in start order."""
        spans = []
        open_spans: dict[str, int] = {}
        for ev in self.events:
            if ev.kind == "speech_start":
                open_spans[ev.actor] = ev.t_ms
            elif ev.kind == "speech_end":
                spans.append(SpeechSpan(ev.actor, open_spans.pop(ev.actor), ev.t_ms))
        spans.sort(key=lambda s: (s.start_ms, s.actor))
        return spans

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "participants": [
                {"id": p.absolute_id, "name": p.name, "angle_deg": p.angle_deg}
                for p in self.participants
            ],
            "events": [ev.to_dict() for ev in self.events],
            "responses": [
                {k: v for k, v in (
                    ("turn_index", r.turn_index),
                    ("addressee_header", r.addressee_header),
                    ("chunks", r.chunks),
                ) if v is not None}
                for r in self.responses
            ],
            "noise": vars(self.noise).copy(),
            "ground_truth": {
                "segments": self.truth.segments,
                "responses": self.truth.responses,
            },
            **({"violates_assumptions": True} if self.violates_assumptions else {}),
            **({"voice_outcomes": self.voice_outcomes} if self.voice_outcomes else {}),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _require(doc: dict, key: str, context: str):
    if key not in doc:
        raise ScenarioError(f"{context}: missing required field '{key}'")
    return doc[key]


def load_scenario(source: Union[str, Path, dict]) -> ScenarioScript:
    """Parse and validate a scenario document (path or already-parsed dict)."""
    if isinstance(source, (str, Path)):
        try:
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{source}: not valid JSON ({exc})") from exc
    else:
        doc = source
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")

    scenario_id = doc.get("scenario_id", "scenario")
    violates = bool(doc.get("violates_assumptions", False))

    participants = []
    seen_ids = set()
    for i, p in enumerate(_require(doc, "participants", "scenario")):
        pid = _require(p, "id", f"participants[{i}]")
        name = _require(p, "name", f"participants[{i}]")
        angle = _require(p, "angle_deg", f"participants[{i}]")
        if pid in seen_ids:
            raise ScenarioError(f"participants[{i}]: duplicate id '{pid}'")
        seen_ids.add(pid)
        if not 0 <= angle < 180:
            raise ScenarioError(
                f"participants[{i}].angle_deg: seating must be in the user region "
                f"[0, 180), got {angle}"
            )
        participants.append(Participant(pid, name, angle))
    if not violates:
        for a in participants:
            for b in participants:
                if a.absolute_id < b.absolute_id and abs(a.angle_deg - b.angle_deg) < MIN_SEATING_GAP_DEG:
                    raise ScenarioError(
                        f"participants '{a.absolute_id}' and '{b.absolute_id}' sit "
                        f"{abs(a.angle_deg - b.angle_deg)} degrees apart; speakers are "
                        f"assumed at least {MIN_SEATING_GAP_DEG} degrees apart "
                        "(set violates_assumptions to override)"
                    )

    events = []
    last_t = None
    open_spans: dict[str, int] = {}
    segment_count = 0
    for i, raw in enumerate(_require(doc, "events", "scenario")):
        t_ms = _require(raw, "t_ms", f"events[{i}]")
        kind = _require(raw, "kind", f"events[{i}]")
        if kind not in EVENT_KINDS:
            raise ScenarioError(f"events[{i}].kind: unknown kind '{kind}'")
        if last_t is not None and t_ms < last_t:
            raise ScenarioError(
                f"events[{i}]: unsorted-events (t_ms {t_ms} after {last_t})"
            )
        last_t = t_ms
        actor = raw.get("actor")
        if actor is not None and actor not in seen_ids:
            raise ScenarioError(f"events[{i}].actor: unenrolled-actor '{actor}'")
        ev = ScriptEvent(
            t_ms=t_ms, kind=kind, actor=actor,
            text=raw.get("text"), relative_id=raw.get("relative_id"),
            facing_robot=raw.get("facing_robot"), faces=raw.get("faces"),
            angle_deg=raw.get("angle_deg"),
        )
        if kind in ("speech_start", "speech_end", "asr_final"):
            if actor is None:
                raise ScenarioError(f"events[{i}]: '{kind}' requires an actor")
        if kind == "speech_start":
            if actor in open_spans:
                raise ScenarioError(f"events[{i}]: speech_start for '{actor}' while already speaking")
            open_spans[actor] = t_ms
        elif kind == "speech_end":
            if actor not in open_spans:
                raise ScenarioError(f"events[{i}]: speech_end for '{actor}' without speech_start")
            del open_spans[actor]
        elif kind == "asr_final":
            if ev.text is None:
                raise ScenarioError(f"events[{i}]: asr_final requires 'text'")
            if actor not in open_spans:
                raise ScenarioError(
                    f"events[{i}]: asr_final at {t_ms} falls outside its actor's speech span"
                )
            segment_count += 1
        elif kind == "gaze":
            if ev.facing_robot is None:
                raise ScenarioError(f"events[{i}]: gaze requires 'facing_robot'")
        elif kind == "doa":
            if ev.angle_deg is None or not 0 <= ev.angle_deg < 360:
                raise ScenarioError(f"events[{i}]: doa requires angle_deg in [0, 360)")
        elif kind == "face_frame":
            for j, f in enumerate(ev.faces or []):
                if f.get("id") not in seen_ids:
                    raise ScenarioError(f"events[{i}].faces[{j}]: unenrolled-actor '{f.get('id')}'")
                if not 0 <= f.get("angle_deg", -1) < 180:
                    raise ScenarioError(f"events[{i}].faces[{j}]: angle_deg outside user region")
                if not 0.0 <= f.get("confidence", 0.9) <= 1.0:
                    raise ScenarioError(f"events[{i}].faces[{j}]: confidence outside [0, 1]")
        events.append(ev)
    if open_spans:
        actor = sorted(open_spans)[0]
        raise ScenarioError(f"speech span for '{actor}' never closed")

    responses = []
    seen_turns = set()
    for i, raw in enumerate(doc.get("responses", [])):
        turn_index = _require(raw, "turn_index", f"responses[{i}]")
        chunks = _require(raw, "chunks", f"responses[{i}]")
        if turn_index in seen_turns:
            raise ScenarioError(f"responses[{i}]: duplicate turn_index {turn_index}")
        seen_turns.add(turn_index)
        responses.append(CannedResponse(turn_index, list(chunks), raw.get("addressee_header")))
    responses.sort(key=lambda r: r.turn_index)

    noise_doc = doc.get("noise", {})
    unknown = set(noise_doc) - set(vars(NoiseConfig()))
    if unknown:
        raise ScenarioError(f"noise: unknown fields {sorted(unknown)}")
    noise = NoiseConfig(**noise_doc)
    noise.validate()

    truth_doc = doc.get("ground_truth", {})
    truth = GroundTruth(
        segments=list(truth_doc.get("segments", [])),
        responses=list(truth_doc.get("responses", [])),
    )
    for i, entry in enumerate(truth.segments):
        speaker = _require(entry, "speaker", f"ground_truth.segments[{i}]")
        _require(entry, "segment_index", f"ground_truth.segments[{i}]")
        if speaker not in seen_ids:
            raise ScenarioError(f"ground_truth.segments[{i}].speaker: unenrolled-actor '{speaker}'")
    for i, entry in enumerate(truth.responses):
        _require(entry, "turn_index", f"ground_truth.responses[{i}]")
        intended = _require(entry, "intended", f"ground_truth.responses[{i}]")
        if intended != "inclusive" and intended not in seen_ids:
            raise ScenarioError(
                f"ground_truth.responses[{i}].intended: must be a participant id or 'inclusive'"
            )

    voice_outcomes = doc.get("voice_outcomes")

    return ScenarioScript(
        scenario_id=scenario_id,
        participants=participants,
        events=events,
        responses=responses,
        noise=noise,
        truth=truth,
        violates_assumptions=violates,
        voice_outcomes=voice_outcomes,
    )


class ScriptBuilder:
    """Programmatic scenario construction with the bookkeeping automated.

    ``utterance`` expands to the stimuli a live sensor stack would
    produce: a speech span, DOA samples every ``doa_every_ms`` at the
    speaker's seat, an optional gaze flag, and the final ASR result at
    the utterance end. Ground truth is accumulated as the script grows.
    """

    def __init__(self, scenario_id: str, doa_every_ms: int = 100):
        self.scenario_id = scenario_id
        self._doa_every_ms = doa_every_ms
        self._participants: list[Participant] = []
        self._events: list[ScriptEvent] = []
        self._responses: list[CannedResponse] = []
        self._truth = GroundTruth()
        self._noise = NoiseConfig()
        self._relative_ids: dict[str, str] = {}
        self._segment_count = 0
        self._violates = False
        self._voice_outcomes: Optional[list] = None

    def participant(self, absolute_id: str, name: str, angle_deg: int) -> "ScriptBuilder":
        self._participants.append(Participant(absolute_id, name, angle_deg))
        self._relative_ids[absolute_id] = f"S{len(self._participants)}"
        return self

    def _angle_of(self, actor: str) -> int:
        for p in self._participants:
            if p.absolute_id == actor:
                return p.angle_deg
        raise ScenarioError(f"unknown actor '{actor}'")

    def add_event(self, event: ScriptEvent) -> "ScriptBuilder":
        self._events.append(event)
        return self

    def speech(self, actor: str, start_ms: int, end_ms: int, doa: bool = True) -> "ScriptBuilder":
        """A speech span with DOA samples but no transcription (an
        interjection the ASR never finalises)."""
        self.add_event(ScriptEvent(start_ms, "speech_start", actor=actor))
        if doa:
            angle = self._angle_of(actor)
            for t in range(start_ms, end_ms + 1, self._doa_every_ms):
                self.add_event(ScriptEvent(t, "doa", actor=actor, angle_deg=angle))
        self.add_event(ScriptEvent(end_ms, "speech_end", actor=actor))
        return self

    def utterance(self, actor: str, start_ms: int, end_ms: int, text: str,
                  facing_robot: Optional[bool] = None) -> "ScriptBuilder":
        self.add_event(ScriptEvent(start_ms, "speech_start", actor=actor))
        angle = self._angle_of(actor)
        for t in range(start_ms, end_ms + 1, self._doa_every_ms):
            self.add_event(ScriptEvent(t, "doa", actor=actor, angle_deg=angle))
        if facing_robot is not None:
            self.add_event(ScriptEvent(end_ms, "gaze", actor=actor, facing_robot=facing_robot))
        self.add_event(ScriptEvent(
            end_ms, "asr_final", actor=actor, text=text,
            relative_id=self._relative_ids[actor],
        ))
        self.add_event(ScriptEvent(end_ms, "speech_end", actor=actor))
        self._truth.segments.append(
            {"segment_index": self._segment_count, "speaker": actor}
        )
        self._segment_count += 1
        return self

    def face_frame(self, t_ms: int, faces: dict, confidence: float = 0.95) -> "ScriptBuilder":
        """``faces`` maps participant id to angle (or to (angle, confidence))."""
        entries = []
        for pid, value in faces.items():
            if isinstance(value, tuple):
                angle, conf = value
            else:
                angle, conf = value, confidence
            entries.append({"id": pid, "angle_deg": angle, "confidence": conf})
        return self.add_event(ScriptEvent(t_ms, "face_frame", faces=entries))

    def gaze(self, t_ms: int, actor: str, facing_robot: bool) -> "ScriptBuilder":
        return self.add_event(ScriptEvent(t_ms, "gaze", actor=actor, facing_robot=facing_robot))

    def doa(self, t_ms: int, angle_deg: int) -> "ScriptBuilder":
        return self.add_event(ScriptEvent(t_ms, "doa", angle_deg=angle_deg))

    def response(self, chunks: list, intended: str, addressee: Optional[str] = None,
                 goal_coherent: Optional[bool] = None) -> "ScriptBuilder":
        """Canned response; ``addressee`` defaults to the intended
        participant's display name (pass "" to omit the header)."""
        turn_index = len(self._responses)
        header: Optional[str]
        if addressee == "":
            header = None
        elif addressee is not None:
            header = f"Addressee: {addressee}; Response: "
        elif intended != "inclusive":
            name = next(p.name for p in self._participants if p.absolute_id == intended)
            header = f"Addressee: {name}; Response: "
        else:
            header = None
        self._responses.append(CannedResponse(turn_index, list(chunks), header))
        annotation = {"turn_index": turn_index, "intended": intended}
        if goal_coherent is not None:
            annotation["goal_coherent"] = goal_coherent
        self._truth.responses.append(annotation)
        return self

    def noise(self, **kwargs) -> "ScriptBuilder":
        for key, value in kwargs.items():
            if not hasattr(self._noise, key):
                raise ScenarioError(f"noise: unknown field '{key}'")
            setattr(self._noise, key, value)
        return self

    def violates_assumptions(self) -> "ScriptBuilder":
        self._violates = True
        return self

    def voice_outcomes(self, outcomes: list) -> "ScriptBuilder":
        self._voice_outcomes = list(outcomes)
        return self

    def build(self) -> ScenarioScript:
        events = sorted(
            enumerate(self._events), key=lambda pair: (pair[1].t_ms, pair[0])
        )
        script = ScenarioScript(
            scenario_id=self.scenario_id,
            participants=list(self._participants),
            events=[ev for _, ev in events],
            responses=list(self._responses),
            noise=self._noise,
            truth=self._truth,
            violates_assumptions=self._violates,
            voice_outcomes=self._voice_outcomes,
        )
        # Round-trip through the validator so builder output and files
        # obey the same rules.
        return load_scenario(script.to_dict())
