#!/usr/bin/env python3
"""Regenerate the bundled scenario files in scenarios/.

Timing assumes the default config: 330 ms per rendered word, canned
responses streamed as [header, body] with 760 ms per chunk, so a robot
answer starts 1520 ms after the take-turn decision. User turns are
spaced so the parallel scenario never overlaps, while the group scenario
deliberately contains a barge-in with resume and a user-user overlap.
"""

from pathlib import Path

from parley.scenario import ScriptBuilder

OUT = Path(__file__).resolve().parent.parent / "scenarios"


def parallel():
    b = ScriptBuilder("parallel")
    b.participant("alice", "Alice", 60)
    b.participant("bob", "Bob", 120)
    b.face_frame(0, {"alice": 60, "bob": 120})
    b.noise(seed=42, llm_delay_ms_per_chunk=760)

    b.utterance("alice", 1000, 2600,
                "I have gotten into cycling lately, mostly weekend rides.",
                facing_robot=True)
    b.response(["Cycling sounds wonderful! How far do you ride?"], intended="alice",
               goal_coherent=True)

    b.utterance("bob", 8500, 10100,
                "I have been learning to cook Thai food at home.",
                facing_robot=True)
    b.response(["Thai food is a great choice! What dish came out best?"], intended="bob",
               goal_coherent=True)

    b.utterance("alice", 16000, 17600,
                "Last Sunday I rode forty kilometres along the coast.",
                facing_robot=True)
    b.response(["Forty kilometres is impressive! Was the coast windy?"], intended="alice",
               goal_coherent=True)

    b.utterance("bob", 23500, 25100,
                "My green curry finally tasted like the restaurant one.",
                facing_robot=True)
    b.response(["That is real progress! Will you cook it for friends soon?"], intended="bob",
               goal_coherent=True)
    return b.build()


def group():
    b = ScriptBuilder("group")
    b.participant("alice", "Alice", 60)
    b.participant("bob", "Bob", 120)
    b.face_frame(0, {"alice": 60, "bob": 120})
    b.noise(seed=42, llm_delay_ms_per_chunk=760)

    b.utterance("alice", 1000, 2600,
                "What should we plan for the weekend trip?",
                facing_robot=True)
    # Deliberately inclusive: the annotation marks it addressed to both.
    b.response(["How about hiking? Bob, would you join too?"], intended="inclusive",
               addressee="Alice", goal_coherent=True)

    # Bob interjects while the robot is talking; no transcription results,
    # so the robot resumes from where it stopped after 1.5 s of silence.
    b.speech("bob", 5500, 6000)

    b.utterance("bob", 9500, 11100,
                "I would love to go hiking!",
                facing_robot=False)  # turn passes via the long pause
    b.response(["Great, let us go hiking together. What will you bring along?"],
               intended="bob", goal_coherent=True)

    # Overlapping user speech inside alice's turn.
    b.utterance("alice", 20300, 21900,
                "We will need boots and a tent.",
                facing_robot=True)
    b.speech("bob", 21100, 21700)
    b.response(["Boots and a tent sound perfect for the trip!"], intended="alice")
    return b.build()


def main():
    OUT.mkdir(exist_ok=True)
    for script in (parallel(), group()):
        path = OUT / f"{script.scenario_id}.scenario"
        script.save(path)
        print(f"wrote {path} ({len(script.events)} events)")


if __name__ == "__main__":
    main()
