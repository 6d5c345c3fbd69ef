"""Conversation manager: history, prompt assembly, and streamed responses.

The single module that knows what was said. User utterances enter the
history with the best speaker label available: the fused absolute
identity immediately when known, otherwise the entry waits up to
``wait_diarisation_ms`` for diarisation, falls back to the
session-relative ASR label, and after ``wait_any_identity_ms`` total is
labelled with the generic "user". Labels only ever upgrade.

On a take-turn decision the manager builds the prompt from the template
and streams the model's response, splitting it into sentences as soon as
they complete (terminators ``. ! ?``) and parsing the addressee header
off the front of the stream. Robot text reaches the history only through
``spoken-text`` events, so an interrupted answer is remembered exactly
as far as it was actually spoken.
"""

from __future__ import annotations

import bisect
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Optional

from parley.backends import LlmBackend
from parley.bus import EngineConfig, EventBus
from parley.transcription import TranscriptSegment
from parley.turns import TurnDecision

logger = logging.getLogger(__name__)

LABEL_ABSOLUTE = 2
LABEL_RELATIVE = 1
LABEL_GENERIC = 0

_HEADER_RE = re.compile(r"^Addressee:\s*(?P<name>[^;]*?)\s*;\s*Response:\s*", re.DOTALL)
_HEADER_LITERAL = "Addressee:"


class EntrySource(Enum):
    USER = "user"
    ROBOT = "robot"


@dataclass
class HistoryEntry:
    speaker_label: str
    text: str
    ts: int
    source: EntrySource
    label_quality: int = LABEL_ABSOLUTE

    def render(self) -> str:
        return f"{self.speaker_label}: {self.text}"


@dataclass
class PromptContext:
    robot_name: str
    language: str
    location: str
    datetime: str
    participants: list
    history: list


@dataclass(frozen=True)
class AddresseeResult:
    addressee: Optional[str]
    response_text: str
    parse_ok: bool


def load_template() -> str:
    return resources.files("parley").joinpath("prompt_template.txt").read_text(encoding="utf-8")


class ResponseStreamParser:
    """Chunking-invariant incremental parser for one streamed response.

    Strips the ``Addressee: X; Response:`` header if the stream opens
    with one, then emits every sentence as soon as its terminator
    arrives. All decisions depend only on the accumulated text, never on
    chunk boundaries, so any chunking of the same response yields the
    same header result and the same sentence sequence.
    """

    def __init__(self, terminators=frozenset({".", "!", "?"})):
        self._terminators = terminators
        self._buffer = ""
        self._header_decided = False
        self.header_name: Optional[str] = None
        self.finished = False

    @property
    def header_decided(self) -> bool:
        return self._header_decided

    def feed(self, chunk: str) -> list:
        self._buffer += chunk
        if not self._header_decided:
            self._try_decide_header(at_end=False)
            if not self._header_decided:
                return []
        return self._drain_sentences()

    def finish(self) -> list:
        """Flush at stream end: decide a still-pending header and release
        any trailing text without a terminator as a final sentence."""
        self.finished = True
        if not self._header_decided:
            self._try_decide_header(at_end=True)
        out = self._drain_sentences()
        tail = self._buffer.strip()
        self._buffer = ""
        if tail and not all(c in self._terminators for c in tail):
            out.append(tail)
        return out

    def _try_decide_header(self, at_end: bool) -> None:
        match = _HEADER_RE.match(self._buffer)
        if match:
            self._header_decided = True
            name = match.group("name").strip()
            self.header_name = name if name else None
            self._buffer = self._buffer[match.end():]
            return
        prefix_possible = (
            self._buffer.startswith(_HEADER_LITERAL)
            or _HEADER_LITERAL.startswith(self._buffer)
        )
        if at_end or not prefix_possible:
            # Provably not a header; everything is response text.
            self._header_decided = True
            self.header_name = None

    def _drain_sentences(self) -> list:
        out = []
        while True:
            cut = None
            for i, ch in enumerate(self._buffer):
                if ch in self._terminators:
                    cut = i
                    break
            if cut is None:
                break
            candidate = self._buffer[: cut + 1].strip()
            self._buffer = self._buffer[cut + 1:]
            # Consecutive terminators produce empty-bodied candidates.
            if candidate and not all(c in self._terminators for c in candidate):
                out.append(candidate)
        return out


def parse_addressee(text: str, participants: list) -> AddresseeResult:
    """One-shot addressee parse over a complete response string.

    A header naming an unknown participant is stripped but not trusted.
    """
    match = _HEADER_RE.match(text)
    if match:
        name = match.group("name").strip()
        remainder = text[match.end():]
        if name in participants:
            return AddresseeResult(name, remainder, True)
        return AddresseeResult(None, remainder, False)
    return AddresseeResult(None, text, False)


@dataclass
class _PendingEntry:
    segment: TranscriptSegment
    arrival_ts: int
    timers: list = field(default_factory=list)


class ConversationManager:
    def __init__(self, bus: EventBus, config: EngineConfig, enrolments: list,
                 llm: Optional[LlmBackend]):
        self._bus = bus
        self._config = config
        self._llm = llm
        self._names = {e.absolute_id: e.display_name for e in enrolments}
        self.history: list[HistoryEntry] = []
        self._order_keys: list = []  # parallel to history, for ts-ordered insertion
        self._entries_by_segment: dict[int, HistoryEntry] = {}
        self._pending: dict[int, _PendingEntry] = {}
        self._participants: dict[str, str] = {}  # absolute_id -> display name, seen order
        self._in_flight = False
        self._waiting_turn: Optional[TurnDecision] = None
        self._turn_counter = 0
        self._parser: Optional[ResponseStreamParser] = None
        self._addressee_done = False
        self._sentence_index = 0
        self._template = load_template()
        bus.subscribe("transcribed", self._on_transcribed)
        bus.subscribe("speaker", self._on_speaker)
        bus.subscribe("users", self._on_users)
        bus.subscribe("turn", self._on_turn)
        bus.subscribe("spoken-text", self._on_spoken_text)

    # ----- participants -----

    @property
    def participants(self) -> list:
        return list(self._participants.values())

    def enrol(self, record) -> None:
        self._names[record.absolute_id] = record.display_name

    def _on_users(self, event) -> None:
        for user in event.payload:
            if user["absolute_id"] not in self._participants:
                self._participants[user["absolute_id"]] = user["name"]

    def _display(self, absolute_id: str) -> str:
        return self._names.get(absolute_id, absolute_id)

    # ----- history -----

    def _insert_entry(self, entry: HistoryEntry, segment_id: Optional[int] = None) -> None:
        key = (entry.ts, segment_id if segment_id is not None else 1 << 30)
        idx = bisect.bisect_right(self._order_keys, key)
        self._order_keys.insert(idx, key)
        self.history.insert(idx, entry)
        if segment_id is not None:
            self._entries_by_segment[segment_id] = entry

    def _on_transcribed(self, event) -> None:
        self.append_user_text(event.payload, self._bus.now())

    def append_user_text(self, segment: TranscriptSegment, now: int) -> Optional[HistoryEntry]:
        """Label-and-append, deferring the label while identity resolves."""
        if segment.resolved_speaker is not None:
            entry = HistoryEntry(
                self._display(segment.resolved_speaker), segment.text, now,
                EntrySource.USER, LABEL_ABSOLUTE,
            )
            self._insert_entry(entry, segment.segment_id)
            return entry
        pending = _PendingEntry(segment, now)
        pending.timers.append(self._bus.schedule(
            self._config.wait_diarisation_ms,
            lambda sid=segment.segment_id: self._fallback_relative(sid),
        ))
        pending.timers.append(self._bus.schedule(
            self._config.wait_any_identity_ms,
            lambda sid=segment.segment_id: self._fallback_generic(sid),
        ))
        self._pending[segment.segment_id] = pending
        return None

    def _fallback_relative(self, segment_id: int) -> None:
        pending = self._pending.get(segment_id)
        if pending is None:
            return
        if pending.segment.resolved_speaker is not None:
            self._finalize(segment_id, self._display(pending.segment.resolved_speaker),
                           LABEL_ABSOLUTE)
        elif pending.segment.relative_speaker:
            self._finalize(segment_id, pending.segment.relative_speaker, LABEL_RELATIVE)
        # else: keep waiting for the 2 s generic fallback

    def _fallback_generic(self, segment_id: int) -> None:
        if segment_id in self._pending:
            self._finalize(segment_id, "user", LABEL_GENERIC)

    def _finalize(self, segment_id: int, label: str, quality: int) -> None:
        pending = self._pending.pop(segment_id, None)
        if pending is None:
            return
        for timer in pending.timers:
            timer.cancel()
        entry = HistoryEntry(label, pending.segment.text, pending.arrival_ts,
                             EntrySource.USER, quality)
        self._insert_entry(entry, segment_id)
        if self._waiting_turn is not None and self._waiting_turn.segment_id == segment_id:
            decision, self._waiting_turn = self._waiting_turn, None
            self._request_generation(decision)

    def _on_speaker(self, event) -> None:
        binding = event.payload
        name = self._display(binding.absolute_id)
        if binding.segment_id in self._pending:
            pending = self._pending[binding.segment_id]
            if pending.segment.resolved_speaker is None:
                pending.segment.resolved_speaker = binding.absolute_id
            self._finalize(binding.segment_id, name, LABEL_ABSOLUTE)
            return
        entry = self._entries_by_segment.get(binding.segment_id)
        if entry is not None and entry.label_quality < LABEL_ABSOLUTE:
            # Late diarisation upgrades the label in place; never downgrade.
            entry.speaker_label = name
            entry.label_quality = LABEL_ABSOLUTE

    def _on_spoken_text(self, event) -> None:
        self.commit_spoken(event.payload["text"], event.ts)

    def commit_spoken(self, spoken_text: str, ts: int) -> Optional[HistoryEntry]:
        """Only text the robot actually spoke enters the history."""
        if not spoken_text:
            return None
        entry = HistoryEntry(self._config.robot_name, spoken_text, ts, EntrySource.ROBOT)
        self._insert_entry(entry)
        return entry

    # ----- prompting and generation -----

    def build_prompt(self, ctx: PromptContext) -> str:
        history = "\n".join(entry.render() for entry in ctx.history)
        return self._template.format(
            robot_name=ctx.robot_name,
            datetime=ctx.datetime,
            language=ctx.language,
            location=ctx.location,
            history=history,
            users=", ".join(ctx.participants),
        )

    def prompt_context(self) -> PromptContext:
        return PromptContext(
            robot_name=self._config.robot_name,
            language=self._config.language,
            location=self._config.location,
            datetime=self._config.session_datetime,
            participants=self.participants,
            history=self.history[-self._config.history_limit:],
        )

    def _on_turn(self, event) -> None:
        self.on_turn(event.payload)

    def on_turn(self, decision: TurnDecision) -> None:
        if not decision.take_turn:
            return
        if self._in_flight:
            logger.debug("generation already in flight; dropping take-turn")
            return
        if decision.segment_id in self._pending:
            # The triggering utterance has no label yet; the prompt waits
            # for it (bounded by the 2 s generic fallback).
            self._waiting_turn = decision
            return
        self._request_generation(decision)

    def _request_generation(self, decision: TurnDecision) -> None:
        if self._llm is None:
            logger.warning("no LLM backend; yielding the turn")
            return
        self._in_flight = True
        turn_index = self._turn_counter
        self._turn_counter += 1
        self._parser = ResponseStreamParser(self._config.sentence_terminators)
        self._addressee_done = False
        self._sentence_index = 0
        prompt = self.build_prompt(self.prompt_context())
        self._bus.publish("gen-request", {
            "turn_index": turn_index,
            "segment_id": decision.segment_id,
            "trigger": decision.trigger.value,
        })
        self._llm.generate(prompt, turn_index,
                           on_chunk=self._on_chunk, on_done=self._on_done,
                           on_error=self._on_error)

    def _on_chunk(self, turn_index: int, chunk_index: int, chunk: str) -> None:
        self._bus.publish("gen-chunk", {"turn_index": turn_index, "chunk_index": chunk_index})
        sentences = self.consume_stream_chunk(chunk)
        self._emit_parsed(turn_index, sentences)

    def consume_stream_chunk(self, chunk: str) -> list:
        if self._parser is None:
            self._parser = ResponseStreamParser(self._config.sentence_terminators)
        return self._parser.feed(chunk)

    def _emit_parsed(self, turn_index: int, sentences: list) -> None:
        if self._parser.header_decided and not self._addressee_done:
            self._addressee_done = True
            self.publish_addressee(self._parser.header_name, turn_index)
        addressee_name = self._parser.header_name
        addressee_id = self._id_for_name(addressee_name)
        for sentence in sentences:
            self._bus.publish("text", {
                "sentence": sentence,
                "addressee_name": addressee_name,
                "addressee_id": addressee_id,
                "turn_index": turn_index,
                "sentence_index": self._sentence_index,
            })
            self._sentence_index += 1

    def publish_addressee(self, name: Optional[str], turn_index: int) -> None:
        """Resolve the parsed name against known participants; unknown
        names publish nothing."""
        absolute_id = self._id_for_name(name)
        if absolute_id is None:
            if name is not None:
                logger.debug("addressee %r is not a recognised participant", name)
            return
        self._bus.publish("addressee", {
            "absolute_id": absolute_id,
            "display_name": self._participants[absolute_id],
            "turn_index": turn_index,
        })

    def _id_for_name(self, name: Optional[str]) -> Optional[str]:
        if name is None:
            return None
        for absolute_id, display in self._participants.items():
            if display == name:
                return absolute_id
        return None

    def _on_done(self, turn_index: int) -> None:
        sentences = self._parser.finish() if self._parser is not None else []
        self._emit_parsed(turn_index, sentences)
        self._parser = None
        self._in_flight = False

    def _on_error(self, turn_index: int, error: Exception) -> None:
        logger.warning("generation failed for turn %d: %s", turn_index, error)
        self._parser = None
        self._in_flight = False
