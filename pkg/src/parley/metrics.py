"""Metrics: score a simulation trace against its ground truth.

Produces the evaluation tables: voice and face recognition accuracy
(correct / incorrect / blank), addressee detection (correct / inclusive
/ incorrect / blank), response latency with the generation share,
per-participant turn counts, and interruption/overlap counts.

Conventions, pinned here because the numbers depend on them:

* Recognition queries carry their own ground truth, stamped by the
  scripted backends at query time; queries whose truth could not be
  derived (nobody was speaking in the window) are excluded from tables.
* Latency is measured from the arrival of the triggering transcription
  to the onset of the robot's first spoken sentence for that response,
  so the configured ASR delay never leaks into it. Responses with no
  spoken onset (suppressed or abandoned before speaking) are excluded.
* The standard deviation is the population SD.
* Inclusive addressee detection uses the ground-truth annotation, not
  text analysis.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from typing import Optional

from parley.simulator import EventTrace


class AlignmentError(Exception):
    """Trace and ground truth do not line up."""


class CoverageGapError(AlignmentError):
    def __init__(self, items):
        self.items = list(items)
        super().__init__("ground truth missing for: " + ", ".join(self.items))


class AmbiguousAnnotationError(AlignmentError):
    pass


@dataclass
class RecognitionTable:
    modality: str
    correct_pct: float
    incorrect_pct: float
    blank_pct: float
    total: int


@dataclass
class AddresseeTable:
    correct_pct: float
    inclusive_pct: float
    incorrect_pct: float
    blank_pct: float
    total: int


@dataclass
class LatencyStats:
    mean_ms: float
    sd_ms: float
    max_ms: int
    generation_mean_ms: float
    n: int


@dataclass
class ResponseView:
    """Everything the trace knows about one robot response."""

    turn_index: int
    request_ts: int
    segment_id: Optional[int]
    first_chunk_ts: Optional[int] = None
    parsed_addressee: Optional[str] = None
    onset_ts: Optional[int] = None
    spoke: bool = False


@dataclass
class Alignment:
    segments: list = field(default_factory=list)        # (segment_record, truth_speaker)
    voice_queries: list = field(default_factory=list)   # (query_record, truth)
    face_queries: list = field(default_factory=list)
    responses: list = field(default_factory=list)       # (ResponseView, annotation)


@dataclass
class MetricsReport:
    scenario_id: str
    seed: int
    voice: RecognitionTable
    face: RecognitionTable
    addressee: AddresseeTable
    latency: Optional[LatencyStats]
    turn_counts: dict
    robot_responses: int
    interruptions: int
    duration_ms: int
    goal_annotated: int = 0
    goal_coherent: int = 0


# ----- trace digestion -----

def _events(trace: EventTrace, topic: str) -> list:
    return [r for r in trace.records if r["kind"] == "event" and r["topic"] == topic]

def _queries(trace: EventTrace, modality: str) -> list:
    return [r for r in trace.records
            if r["kind"] == "query" and r["modality"] == modality]

def _actions(trace: EventTrace, action: str) -> list:
    return [r for r in trace.records if r["kind"] == "action" and r["action"] == action]


def collect_responses(trace: EventTrace) -> list:
    views: dict[int, ResponseView] = {}
    for r in _events(trace, "gen-request"):
        p = r["payload"]
        views[p["turn_index"]] = ResponseView(
            turn_index=p["turn_index"], request_ts=r["ts"], segment_id=p.get("segment_id"),
        )
    for r in _events(trace, "gen-chunk"):
        view = views.get(r["payload"]["turn_index"])
        if view is not None and view.first_chunk_ts is None:
            view.first_chunk_ts = r["ts"]
    for r in _events(trace, "addressee"):
        view = views.get(r["payload"]["turn_index"])
        if view is not None:
            view.parsed_addressee = r["payload"]["absolute_id"]
    for r in _actions(trace, "say"):
        view = views.get(r.get("turn_index"))
        if view is not None:
            view.spoke = True
            if view.onset_ts is None:
                view.onset_ts = r["ts"]
    return [views[k] for k in sorted(views)]


def user_speech_spans(trace: EventTrace) -> list:
    spans = []
    open_spans: dict[str, int] = {}
    for r in trace.records:
        if r["kind"] != "stimulus":
            continue
        ev = r["event"]
        if ev["kind"] == "speech_start":
            open_spans[ev["actor"]] = ev["t_ms"]
        elif ev["kind"] == "speech_end":
            start = open_spans.pop(ev["actor"], None)
            if start is not None:
                spans.append((ev["actor"], start, ev["t_ms"]))
    return spans


# ----- alignment -----

def align(trace: EventTrace, truth) -> Alignment:
    """Mechanically join trace items with their annotations.

    ``truth`` is a GroundTruth (or anything with ``segments`` and
    ``responses`` lists in the documented shape). Raises
    AmbiguousAnnotationError on duplicate annotations and
    CoverageGapError when a trace item has none.
    """
    seg_truth: dict[int, str] = {}
    for entry in truth.segments:
        idx = entry["segment_index"]
        if idx in seg_truth:
            raise AmbiguousAnnotationError(f"duplicate annotation for segment {idx}")
        seg_truth[idx] = entry["speaker"]
    resp_truth: dict[int, dict] = {}
    for entry in truth.responses:
        idx = entry["turn_index"]
        if idx in resp_truth:
            raise AmbiguousAnnotationError(f"duplicate annotation for response {idx}")
        resp_truth[idx] = entry

    alignment = Alignment()
    gaps = []
    for order, record in enumerate(_events(trace, "transcribed")):
        if order not in seg_truth:
            gaps.append(f"segment {order}")
            continue
        alignment.segments.append((record, seg_truth[order]))
    for view in collect_responses(trace):
        if view.turn_index not in resp_truth:
            gaps.append(f"response {view.turn_index}")
            continue
        alignment.responses.append((view, resp_truth[view.turn_index]))
    if gaps:
        raise CoverageGapError(gaps)

    alignment.voice_queries = [(q, q["truth"]) for q in _queries(trace, "voice")]
    alignment.face_queries = [(q, q["truth"]) for q in _queries(trace, "face")]
    return alignment


# ----- scoring -----

def _pct(count: int, total: int) -> float:
    return 100.0 * count / total if total else 0.0


def score_recognition(alignment: Alignment, modality: str) -> RecognitionTable:
    pairs = alignment.voice_queries if modality == "voice" else alignment.face_queries
    scored = [(q["predicted"], truth) for q, truth in pairs if truth is not None]
    correct = sum(1 for predicted, truth in scored if predicted == truth)
    blank = sum(1 for predicted, _ in scored if predicted is None)
    incorrect = len(scored) - correct - blank
    total = len(scored)
    return RecognitionTable(
        modality=modality,
        correct_pct=_pct(correct, total),
        incorrect_pct=_pct(incorrect, total),
        blank_pct=_pct(blank, total),
        total=total,
    )


def score_addressee(alignment: Alignment) -> AddresseeTable:
    correct = inclusive = incorrect = blank = 0
    for view, annotation in alignment.responses:
        intended = annotation["intended"]
        if intended == "inclusive":
            inclusive += 1
        elif view.parsed_addressee is None:
            blank += 1
        elif view.parsed_addressee == intended:
            correct += 1
        else:
            incorrect += 1
    total = len(alignment.responses)
    return AddresseeTable(
        correct_pct=_pct(correct, total),
        inclusive_pct=_pct(inclusive, total),
        incorrect_pct=_pct(incorrect, total),
        blank_pct=_pct(blank, total),
        total=total,
    )


def latency_stats(trace: EventTrace) -> Optional[LatencyStats]:
    transcribed_ts = {
        r["payload"]["segment_id"]: r["ts"] for r in _events(trace, "transcribed")
    }
    latencies = []
    generations = []
    for view in collect_responses(trace):
        if not view.spoke or view.onset_ts is None:
            continue
        trigger_ts = transcribed_ts.get(view.segment_id)
        if trigger_ts is None:
            continue
        latencies.append(view.onset_ts - trigger_ts)
        if view.first_chunk_ts is not None:
            generations.append(view.first_chunk_ts - view.request_ts)
    if not latencies:
        return None
    return LatencyStats(
        mean_ms=statistics.fmean(latencies),
        sd_ms=statistics.pstdev(latencies),
        max_ms=max(latencies),
        generation_mean_ms=statistics.fmean(generations) if generations else 0.0,
        n=len(latencies),
    )


def count_overlaps(trace: EventTrace) -> int:
    """Barge-in pauses plus overlapping user-user speech span pairs."""
    pauses = len(_actions(trace, "pause"))
    spans = user_speech_spans(trace)
    overlaps = 0
    for i in range(len(spans)):
        for j in range(i + 1, len(spans)):
            a_actor, a_start, a_end = spans[i]
            b_actor, b_start, b_end = spans[j]
            if a_actor == b_actor:
                continue
            if max(a_start, b_start) < min(a_end, b_end):
                overlaps += 1
    return pauses + overlaps


def build_report(trace: EventTrace, truth) -> MetricsReport:
    alignment = align(trace, truth)
    turn_counts: dict[str, int] = {}
    for _, speaker in alignment.segments:
        turn_counts[speaker] = turn_counts.get(speaker, 0) + 1
    annotated = [a for _, a in alignment.responses if "goal_coherent" in a]
    duration = trace.records[-1]["ts"] - trace.records[0]["ts"] if trace.records else 0
    return MetricsReport(
        scenario_id=trace.scenario_id,
        seed=trace.seed,
        voice=score_recognition(alignment, "voice"),
        face=score_recognition(alignment, "face"),
        addressee=score_addressee(alignment),
        latency=latency_stats(trace),
        turn_counts=turn_counts,
        robot_responses=sum(1 for v, _ in alignment.responses if v.spoke),
        interruptions=count_overlaps(trace),
        duration_ms=duration,
        goal_annotated=len(annotated),
        goal_coherent=sum(1 for a in annotated if a["goal_coherent"]),
    )


# ----- rendering -----

def render_structured(report: MetricsReport) -> str:
    def table(t):
        return {k: round(v, 1) if isinstance(v, float) else v for k, v in vars(t).items()}

    doc = {
        "scenario_id": report.scenario_id,
        "seed": report.seed,
        "sd_convention": "population",
        "recognition": {"voice": table(report.voice), "face": table(report.face)},
        "addressee": table(report.addressee),
        "latency": None if report.latency is None else {
            "mean_ms": round(report.latency.mean_ms, 1),
            "sd_ms": round(report.latency.sd_ms, 1),
            "max_ms": report.latency.max_ms,
            "generation_mean_ms": round(report.latency.generation_mean_ms, 1),
            "n": report.latency.n,
        },
        "turn_counts": report.turn_counts,
        "robot_responses": report.robot_responses,
        "interruptions": report.interruptions,
        "duration_ms": report.duration_ms,
        "goal_coherence": {
            "annotated": report.goal_annotated, "coherent": report.goal_coherent,
        },
    }
    return json.dumps(doc, indent=2, ensure_ascii=True) + "\n"


def render_tabular(report: MetricsReport) -> str:
    lines = []
    lines.append(f"Scenario: {report.scenario_id} (seed {report.seed})")
    lines.append("")
    lines.append("Recognition accuracy (percentages)")
    lines.append(f"{'Type':<8}{'Correct':>10}{'Incorrect':>12}{'Blank':>9}{'N':>6}")
    for t in (report.voice, report.face):
        lines.append(
            f"{t.modality.capitalize():<8}{t.correct_pct:>10.1f}"
            f"{t.incorrect_pct:>12.1f}{t.blank_pct:>9.1f}{t.total:>6}"
        )
    lines.append("")
    lines.append("Addressee detection (percentages)")
    a = report.addressee
    lines.append(f"{'Correct':>10}{'Inclusive':>12}{'Incorrect':>12}{'Blank':>9}{'N':>6}")
    lines.append(
        f"{a.correct_pct:>10.1f}{a.inclusive_pct:>12.1f}"
        f"{a.incorrect_pct:>12.1f}{a.blank_pct:>9.1f}{a.total:>6}"
    )
    lines.append("")
    if report.latency is None:
        lines.append("Latency: no scored robot responses")
    else:
        l = report.latency
        lines.append(
            f"Latency (ms): mean {l.mean_ms:.1f}, sd {l.sd_ms:.1f} (population), "
            f"max {l.max_ms}, generation mean {l.generation_mean_ms:.1f}, n {l.n}"
        )
    counts = ", ".join(f"{k}: {v}" for k, v in sorted(report.turn_counts.items()))
    lines.append(f"User turns: {counts or 'none'}; robot responses: {report.robot_responses}")
    lines.append(f"Interruptions/overlaps: {report.interruptions}")
    lines.append(f"Conversation duration: {report.duration_ms} ms")
    if report.goal_annotated:
        lines.append(
            f"Goal coherence: {report.goal_coherent}/{report.goal_annotated} annotated coherent"
        )
    return "\n".join(lines) + "\n"
