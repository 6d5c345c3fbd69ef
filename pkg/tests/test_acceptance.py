"""Acceptance suite: one test per release criterion, at pinned tolerances.

Run with ``pytest tests/test_acceptance.py -s`` to see one PASS line per
criterion. Tolerances are fixed here, not configurable.
"""

import random
import time
from pathlib import Path

import pytest

from oracles import (
    brute_force_latency,
    brute_force_tables,
    fusion_oracle,
    single_pass_sentences,
)
from parley import metrics
from parley.awareness import SpeakerAwareness, SwitchKind, TurnSwitch, classify_source
from parley.backends import DoaSample, RecordingEmbodiment
from parley.bus import EngineConfig, EventBus
from parley.conversation import ConversationManager, ResponseStreamParser
from parley.diarisation import Diarisation, EnrolmentRecord, SpeakerBinding, WindowState
from parley.engine import register_topics
from parley.faces import FaceObservation, FaceTracking
from parley.output import EnqueueResult, InteractionOutput
from parley.scenario import NoiseConfig, ScriptBuilder, load_scenario
from parley.simulator import EventTrace, NoiseModel, run, run_with_engine
from parley.transcription import TranscriptSegment

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
ENROLLED = [EnrolmentRecord("alice", "Alice"), EnrolmentRecord("bob", "Bob")]


def fresh_bus():
    bus = EventBus()
    register_topics(bus)
    return bus


def report_line(n, text):
    print(f"\nPASS  criterion {n}: {text}")


# ---------------------------------------------------------------------------
# Criterion 1: deterministic replay of the bundled scenarios
# ---------------------------------------------------------------------------

def test_criterion_1_deterministic_replay(tmp_path):
    for name in ("parallel", "group"):
        script = load_scenario(SCENARIOS / f"{name}.scenario")
        started = time.monotonic()
        first = run(script, seed=42)
        elapsed = time.monotonic() - started
        assert elapsed < 5.0, f"{name} took {elapsed:.2f}s"
        second = run(script, seed=42)
        a, b = tmp_path / f"{name}-a.jsonl", tmp_path / f"{name}-b.jsonl"
        first.save(a)
        second.save(b)
        assert a.read_bytes() == b.read_bytes(), f"{name} traces differ"
    report_line(1, "parallel and group traces byte-identical at seed 42, < 5 s each")


# ---------------------------------------------------------------------------
# Criterion 2: threshold exactness at every boundary
# ---------------------------------------------------------------------------

def _switch_emitted(prev_deg, new_deg):
    bus = fresh_bus()
    aw = SpeakerAwareness(bus, EngineConfig(), None)
    aw.on_poll_tick(DoaSample(prev_deg, 0))
    events = aw.on_poll_tick(DoaSample(new_deg, 100))
    return any(t == "user-user-switch" for t, _ in events)


def _hysteresis_acts(first_deg, second_deg):
    bus = fresh_bus()
    ft = FaceTracking(bus, EngineConfig(), ENROLLED, None)
    ft.on_frame_tick([FaceObservation("alice", 60, 0.9, 0),
                      FaceObservation("bob", 120, 0.9, 0)])
    acted = []
    bus.subscribe("face-position", lambda e: acted.append(e.payload))
    bus.publish("user-angle", first_deg)
    n = len(acted)
    bus.publish("user-angle", second_deg)
    return len(acted) > n


def _suppressed(interrupt_gap=None, speech_gap=None):
    bus = fresh_bus()
    out = InteractionOutput(bus, EngineConfig(), RecordingEmbodiment(lambda a: None))
    bus.advance_clock(10_000)
    if interrupt_gap is not None:
        out.last_interrupt_ts = 10_000 - interrupt_gap
    if speech_gap is not None:
        out.last_user_speech_ts = 10_000 - speech_gap
    return out.enqueue_robot_text("Hello.") is EnqueueResult.SUPPRESSED


def _resumes_after(silence_ms):
    bus = fresh_bus()
    out = InteractionOutput(bus, EngineConfig(), RecordingEmbodiment(lambda a: None))
    out.enqueue_robot_text("one two three four five.")
    bus.advance_clock(660)
    out.on_user_speech_start(bus.now())
    out.on_silence_elapsed(silence_ms)
    return out.is_robot_speaking


def _window_recording_after(elapsed_ms):
    bus = fresh_bus()
    diar = Diarisation(bus, EngineConfig(), ENROLLED, None)
    bus.advance_clock(1000)
    bus.publish("robot-user-switch", TurnSwitch(SwitchKind.ROBOT_TO_USER, 1000, 90))
    bus.advance_clock(elapsed_ms)
    return diar.windows[0].state is WindowState.RECORDING


def _frame_ticks_after(elapsed_ms):
    bus = fresh_bus()
    ticks = []
    bus.schedule_periodic(EngineConfig().face_frame_ms, lambda: ticks.append(bus.now()))
    bus.advance_clock(elapsed_ms)
    return len(ticks)


def _label_after(resolve_at_ms, relative, wait_ms):
    bus = fresh_bus()
    cm = ConversationManager(bus, EngineConfig(), ENROLLED, None)
    seg = TranscriptSegment(1, "hi", 0, 0, relative)
    bus.publish("transcribed", seg)
    if resolve_at_ms is not None:
        bus.schedule(resolve_at_ms,
                     lambda: bus.publish("speaker", SpeakerBinding(1, "alice", 0.9)))
    bus.advance_clock(wait_ms)
    return cm.history[0].speaker_label if cm.history else None


def test_criterion_2_threshold_exactness():
    cfg = EngineConfig()
    cases = [
        ("user-user switch at 25 deg fires", _switch_emitted(60, 85) is True),
        ("user-user switch at exactly 20 deg does not fire", _switch_emitted(60, 80) is False),
        ("user-user switch at 15 deg does not fire", _switch_emitted(60, 75) is False),
        ("angle 179 is user", classify_source(179, cfg).value == "user"),
        ("angle 180 is robot (half-open boundary)", classify_source(180, cfg).value == "robot"),
        ("angle 359 is robot", classify_source(359, cfg).value == "robot"),
        ("angle 0 is user", classify_source(0, cfg).value == "user"),
        ("29 deg DOA variation ignored", _hysteresis_acts(60, 89) is False),
        ("30 deg DOA variation acts", _hysteresis_acts(60, 90) is True),
        ("resume blocked at 1499 ms silence", _resumes_after(1499) is False),
        ("resume at exactly 1500 ms silence", _resumes_after(1500) is True),
        ("suppressed 1999 ms after interrupt", _suppressed(interrupt_gap=1999) is True),
        ("not suppressed at exactly 2000 ms after interrupt",
         _suppressed(interrupt_gap=2000) is False),
        ("suppressed 999 ms after user speech", _suppressed(speech_gap=999) is True),
        ("not suppressed at exactly 1000 ms after user speech",
         _suppressed(speech_gap=1000) is False),
        ("identity window still recording at 2999 ms", _window_recording_after(2999) is True),
        ("identity window stopped at exactly 3000 ms", _window_recording_after(3000) is False),
        ("no camera frame before 2000 ms", _frame_ticks_after(1999) == 0),
        ("first camera frame at exactly 2000 ms", _frame_ticks_after(2000) == 1),
        ("diarised name used when it lands at 799 ms", _label_after(799, "S1", 800) == "Alice"),
        ("relative ID fallback at exactly 800 ms", _label_after(None, "S1", 800) == "S1"),
        ("no label before 2000 ms without any identity", _label_after(None, None, 1999) is None),
        ("generic label at exactly 2000 ms", _label_after(None, None, 2000) == "user"),
    ]
    failures = [label for label, ok in cases if not ok]
    assert not failures, f"boundary cases failed: {failures}"
    report_line(2, f"all {len(cases)} boundary cases exact")


# ---------------------------------------------------------------------------
# Criterion 3: noiseless correctness of the parallel scenario
# ---------------------------------------------------------------------------

def test_criterion_3_noiseless_correctness():
    script = load_scenario(SCENARIOS / "parallel.scenario")
    assert script.noise.voice_id_blank_p == 0.0 and script.noise.face_blank_p == 0.0
    report = metrics.build_report(run(script), script.truth)
    assert report.addressee.correct_pct == 100.0
    assert report.voice.correct_pct == 100.0
    assert report.face.correct_pct == 100.0
    assert report.voice.blank_pct == 0.0
    assert report.face.blank_pct == 0.0
    assert report.addressee.blank_pct == 0.0
    report_line(3, "parallel scenario scores 100 / 100 / 100 with zero blanks")


# ---------------------------------------------------------------------------
# Criterion 4: noise calibration against the configured regime
# ---------------------------------------------------------------------------

def test_criterion_4_noise_calibration():
    cfg = NoiseConfig(voice_id_blank_p=0.728, voice_id_wrong_p=0.004, seed=7)
    model = NoiseModel(cfg, ["alice", "bob"])
    n = 10_000
    counts = {"correct": 0, "incorrect": 0, "blank": 0}
    records = []
    for i in range(n):
        outcome = model.voice_outcome("alice")
        if outcome is None:
            counts["blank"] += 1
        elif outcome == "alice":
            counts["correct"] += 1
        else:
            counts["incorrect"] += 1
        records.append({"ts": i, "seq": i, "kind": "query", "modality": "voice",
                        "truth": "alice", "predicted": outcome})
    # empirical rates within one percentage point of the configured regime
    assert abs(counts["correct"] / n * 100 - 26.8) <= 1.0
    assert abs(counts["incorrect"] / n * 100 - 0.4) <= 1.0
    assert abs(counts["blank"] / n * 100 - 72.8) <= 1.0
    # the metrics table reports the same empirical counts within 0.1
    trace = EventTrace("calibration", 7, {}, records)
    alignment = metrics.Alignment(voice_queries=[(r, r["truth"]) for r in records])
    table = metrics.score_recognition(alignment, "voice")
    assert abs(table.correct_pct - counts["correct"] / n * 100) <= 0.1
    assert abs(table.incorrect_pct - counts["incorrect"] / n * 100) <= 0.1
    assert abs(table.blank_pct - counts["blank"] / n * 100) <= 0.1
    report_line(4, "26.8 / 0.4 / 72.8 regime reproduced over 10,000 queries within 1.0 pp")


# ---------------------------------------------------------------------------
# Criterion 5: interruption semantics over randomised barge-in timings
# ---------------------------------------------------------------------------

STORY = ("Once upon a time a curious robot set out to map every corner "
         "of the lab and befriend all visitors along the way.")


def _barge_script(case_seed):
    rng = random.Random(case_seed)
    b = ScriptBuilder(f"barge-{case_seed}")
    b.participant("alice", "Alice", 60)
    b.participant("bob", "Bob", 120)
    b.face_frame(0, {"alice": 60, "bob": 120})
    b.noise(seed=case_seed, llm_delay_ms_per_chunk=760)
    b.utterance("alice", 1000, 2600, "Please tell one of your long stories now!",
                facing_robot=True)
    b.response([STORY], intended="alice")
    onset = 2600 + 2 * 760  # header chunk + body chunk
    duration = len(STORY.split()) * EngineConfig().word_ms
    barge_at = onset + rng.randrange(200, duration - 400)
    takes_over = rng.random() < 0.5
    if takes_over:
        b.utterance("bob", barge_at, barge_at + rng.randrange(400, 1500),
                    "Hold on, what about the charging dock?", facing_robot=False)
    else:
        b.speech("bob", barge_at, barge_at + rng.randrange(300, 1200))
    return b.build(), takes_over


def _speaking_intervals(trace):
    intervals = []
    active_since = None
    for r in trace.records:
        if r["kind"] == "action" and r["action"] in ("say", "resume"):
            active_since = r["ts"]
        elif r["kind"] == "action" and r["action"] == "pause":
            intervals.append((active_since, r["ts"]))
            active_since = None
        elif r["kind"] == "event" and r["topic"] == "spoken-text":
            if active_since is not None:
                intervals.append((active_since, r["ts"]))
                active_since = None
    return intervals


def test_criterion_5_interruption_semantics():
    resumed = abandoned = 0
    for case_seed in range(200):
        script, takes_over = _barge_script(case_seed)
        trace, engine = run_with_engine(script)
        records = trace.records

        spoken = [r["payload"] for r in records
                  if r["kind"] == "event" and r["topic"] == "spoken-text"]
        story_spoken = [s for s in spoken if s["turn_index"] == 0]
        pauses = [r for r in records if r["kind"] == "action" and r["action"] == "pause"]
        assert len(pauses) == 1, f"case {case_seed}: expected exactly one pause"

        if takes_over:
            abandoned += 1
            if story_spoken:  # abandoned before the first word publishes nothing
                text = story_spoken[0]["text"]
                assert story_spoken[0]["complete"] is False
                assert STORY.startswith(text), f"case {case_seed}: not a prefix"
                assert STORY == text or STORY[len(text)] == " ", \
                    f"case {case_seed}: prefix not on a word boundary"
        else:
            resumed += 1
            resumes = [r for r in records if r["kind"] == "action" and r["action"] == "resume"]
            assert len(resumes) == 1, f"case {case_seed}: expected one resume"
            assert len(story_spoken) == 1 and story_spoken[0]["complete"] is True
            assert story_spoken[0]["text"] == STORY, f"case {case_seed}: lost words on resume"
            remainder = resumes[0]["remainder"]
            prefix = STORY[: len(STORY) - len(remainder)].rstrip()
            reconstructed = f"{prefix} {remainder}" if prefix else remainder
            assert reconstructed == STORY, \
                f"case {case_seed}: prefix + remainder != full text"

        robot_entries = [e.text for e in engine.conversation.history
                         if e.source.value == "robot"]
        assert robot_entries == [s["text"] for s in spoken], \
            f"case {case_seed}: history diverges from spoken-text payloads"

        # After the engine perceives the barge-in, the robot is not
        # Speaking until the user's span closes.
        spans = [(r["event"]["actor"], r["event"]["t_ms"])
                 for r in records if r["kind"] == "stimulus"
                 and r["event"]["kind"] in ("speech_start", "speech_end")]
        bob_spans = [t for actor, t in spans if actor == "bob"]
        span_start, span_end = bob_spans[0], bob_spans[1]
        detections = [r["ts"] for r in records
                      if r["kind"] == "event" and r["topic"] == "robot-user-switch"
                      and r["payload"]["kind"] == "robot-to-user"
                      and span_start <= r["ts"] <= span_end + 100]
        assert detections, f"case {case_seed}: barge-in never detected"
        detect = detections[0]
        for a, b in _speaking_intervals(trace):
            assert not (max(a, detect) < min(b, span_end)), \
                f"case {case_seed}: robot speaking in [{a},{b}] inside user span"
    assert resumed > 50 and abandoned > 50  # both paths well exercised
    report_line(5, f"200 randomised barge-ins hold prefix, history, and exclusivity "
                   f"({resumed} resumed, {abandoned} abandoned)")


# ---------------------------------------------------------------------------
# Criterion 6: streaming parser invariant under re-chunking
# ---------------------------------------------------------------------------

def _parser_fixtures():
    rng = random.Random(99)
    names = ["Alice", "Bob", "Carol", ""]
    bodies = [
        "Nice to meet you! What brings you here today?",
        "One. Two! Three? Four",
        "Well... that is a thought. Truly!",
        "No terminator at all in this answer",
        "Short.",
        "What do you both think? I would love to hear more! Really.",
    ]
    fixtures = []
    for i in range(50):
        body = bodies[i % len(bodies)]
        shape = i % 5
        if shape == 0:
            fixtures.append(f"Addressee: {names[i % 3]}; Response: {body}")
        elif shape == 1:
            fixtures.append(body)
        elif shape == 2:
            fixtures.append(f"Addressee: {names[i % 4]}; Response: {body}")
        elif shape == 3:
            fixtures.append(f"Addressee {names[i % 3]} Response {body}")  # malformed
        else:
            fixtures.append(f"Addressee: {names[i % 3]}; Respond: {body}")  # broken keyword
    return fixtures


def test_criterion_6_streaming_parser_property():
    fixtures = _parser_fixtures()
    rng = random.Random(424242)
    participants = ["Alice", "Bob"]
    chunkings = 0
    for text in fixtures:
        oracle_name, oracle_sentences = single_pass_sentences(text)
        for _ in range(20):
            parser = ResponseStreamParser()
            out = []
            i = 0
            while i < len(text):
                j = min(len(text), i + rng.randint(1, 9))
                out.extend(parser.feed(text[i:j]))
                i = j
            out.extend(parser.finish())
            assert out == oracle_sentences, f"sentences diverge for {text!r}"
            assert parser.header_name == oracle_name, f"header diverges for {text!r}"
            resolved = parser.header_name if parser.header_name in participants else None
            oracle_resolved = oracle_name if oracle_name in participants else None
            assert resolved == oracle_resolved
            chunkings += 1
    assert chunkings == 1000
    report_line(6, "1,000 random chunkings of 50 responses match single-pass splitting")


# ---------------------------------------------------------------------------
# Criterion 7: metrics pipeline equals the brute-force scorer
# ---------------------------------------------------------------------------

def _noisy_small_script():
    b = ScriptBuilder("noisy-small")
    b.participant("alice", "Alice", 60)
    b.participant("bob", "Bob", 120)
    b.face_frame(0, {"alice": 60, "bob": 120})
    b.noise(seed=13, voice_id_blank_p=0.5, voice_id_wrong_p=0.2,
            face_blank_p=0.3, face_wrong_p=0.2, llm_delay_ms_per_chunk=760)
    b.utterance("alice", 1000, 2600, "Let us test the noisy path.", facing_robot=True)
    b.response(["A noisy reply for Alice!"], intended="alice")
    b.utterance("bob", 9000, 10600, "And what about me over here?", facing_robot=True)
    b.response(["Bob gets the wrong header."], intended="bob", addressee="Alice")
    b.utterance("alice", 17000, 18600, "One more for good measure.", facing_robot=True)
    b.response(["No header this time at all."], intended="alice", addressee="")
    return b.build()


def test_criterion_7_metrics_oracle_equivalence():
    scripts = [
        load_scenario(SCENARIOS / "parallel.scenario"),
        load_scenario(SCENARIOS / "group.scenario"),
        _noisy_small_script(),
    ]
    for script in scripts:
        trace = run(script)
        segments = [r for r in trace.records
                    if r["kind"] == "event" and r["topic"] == "transcribed"]
        assert len(segments) <= 10
        alignment = metrics.align(trace, script.truth)
        voice, face, addr = brute_force_tables(trace, script.truth)

        vt = metrics.score_recognition(alignment, "voice")
        ft = metrics.score_recognition(alignment, "face")
        at = metrics.score_addressee(alignment)
        for table, oracle in ((vt, voice), (ft, face)):
            total = sum(oracle.values())
            assert table.total == total
            assert table.correct_pct == (100.0 * oracle["correct"] / total if total else 0.0)
            assert table.incorrect_pct == (100.0 * oracle["incorrect"] / total if total else 0.0)
            assert table.blank_pct == (100.0 * oracle["blank"] / total if total else 0.0)
        a_total = sum(addr.values())
        assert at.total == a_total
        assert at.correct_pct == (100.0 * addr["correct"] / a_total if a_total else 0.0)
        assert at.inclusive_pct == (100.0 * addr["inclusive"] / a_total if a_total else 0.0)
        assert at.incorrect_pct == (100.0 * addr["incorrect"] / a_total if a_total else 0.0)
        assert at.blank_pct == (100.0 * addr["blank"] / a_total if a_total else 0.0)

        pipeline = metrics.latency_stats(trace)
        oracle_pairs = brute_force_latency(trace)
        if pipeline is None:
            assert not oracle_pairs
        else:
            latencies = [p[0] for p in oracle_pairs]
            assert pipeline.n == len(latencies)
            assert pipeline.mean_ms == sum(latencies) / len(latencies)
            assert pipeline.max_ms == max(latencies)
    report_line(7, "pipeline tables equal the brute-force scorer on all small scenarios")


# ---------------------------------------------------------------------------
# Criterion 8: latency accounting with scripted generation delay
# ---------------------------------------------------------------------------

def _latency_script(asr_delay):
    b = ScriptBuilder("latency")
    b.participant("alice", "Alice", 60)
    b.participant("bob", "Bob", 120)
    b.face_frame(0, {"alice": 60, "bob": 120})
    b.noise(seed=5, llm_delay_ms_per_chunk=760, asr_delay_ms=asr_delay)
    b.utterance("alice", 1000, 2600, "First question for you!", facing_robot=True)
    b.response(["A first answer arrives."], intended="alice")
    b.utterance("bob", 9000, 10600, "Second question for you!", facing_robot=True)
    b.response(["A second answer arrives."], intended="bob")
    b.utterance("alice", 17000, 18600, "Third question for you!", facing_robot=True)
    b.response(["A third answer arrives."], intended="alice")
    return b.build()


def test_criterion_8_latency_accounting():
    baseline = metrics.latency_stats(run(_latency_script(0)))
    assert baseline is not None and baseline.n == 3
    assert abs(baseline.generation_mean_ms - 760) <= 1
    for delay in (500, 1000):
        shifted = metrics.latency_stats(run(_latency_script(delay)))
        assert shifted.mean_ms - baseline.mean_ms == 0
        assert shifted.max_ms == baseline.max_ms
        assert abs(shifted.generation_mean_ms - 760) <= 1
    report_line(8, "generation mean 760 +/- 1 ms; ASR delay shifts change latency by 0 ms")


# ---------------------------------------------------------------------------
# Criterion 9: fusion equals the brute-force oracle on random triples
# ---------------------------------------------------------------------------

def test_criterion_9_fusion_oracle():
    rng = random.Random(31337)
    trio = [EnrolmentRecord("alice", "Alice"), EnrolmentRecord("bob", "Bob"),
            EnrolmentRecord("carol", "Carol")]
    for case in range(500):
        bus = fresh_bus()
        ft = FaceTracking(bus, EngineConfig(), trio, None)
        faces = {}
        for record in trio:
            if rng.random() < 0.8:
                faces[record.absolute_id] = (
                    rng.randrange(0, 180),
                    rng.choice([0.55, 0.7, 0.85, 0.85, 0.95]),
                )
        if faces:
            ft.on_frame_tick([
                FaceObservation(pid, angle, conf, 0)
                for pid, (angle, conf) in faces.items()
            ])
        # a possibly-conflicting diarised voice identity must not matter
        voice_id = rng.choice([None, "alice", "bob", "carol"])
        if voice_id is not None:
            bus.publish("speaker", SpeakerBinding(case, voice_id, 0.9))
        doa = rng.randrange(0, 180)
        got = ft.fuse_current_speaker(doa)
        expected = fusion_oracle(faces, doa)
        assert (got.absolute_id if got else None) == expected, \
            f"case {case}: fusion {got} != oracle {expected} for {faces} at {doa}"
    report_line(9, "500 random (DOA, faces, voice-ID) triples match the oracle exactly")


# ---------------------------------------------------------------------------
# Criterion 10: prompt golden file
# ---------------------------------------------------------------------------

def test_criterion_10_prompt_golden_file():
    from parley.conversation import EntrySource, HistoryEntry, PromptContext

    bus = fresh_bus()
    cm = ConversationManager(bus, EngineConfig(), ENROLLED, None)
    ctx = PromptContext(
        robot_name="Furhat", language="English", location="the lab",
        datetime="2025-05-20 14:00", participants=["Alice", "Bob"],
        history=[
            HistoryEntry("Alice", "I have gotten into cycling lately.", 0, EntrySource.USER),
            HistoryEntry("Furhat", "Cycling sounds wonderful! How far do you ride?", 1,
                         EntrySource.ROBOT),
            HistoryEntry("Bob", "I prefer cooking to cycling.", 2, EntrySource.USER),
        ],
    )
    golden = (ROOT / "tests" / "data" / "prompt_golden.txt").read_text(encoding="utf-8")
    assert cm.build_prompt(ctx) == golden
    report_line(10, "prompt is byte-identical to the checked-in golden rendering")
