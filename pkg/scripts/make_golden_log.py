#!/usr/bin/env python3
"""Record the golden wire-message log for the playground round-trip test.

Drives one gateway session on the virtual clock: two joins, three
utterances with mixed facing flags, and one hold-to-speak barge-in.
The interleaved log of client and server messages is frozen into
frontend/test/fixtures/golden-log.json; the frontend test replays the
server side through its view model.
"""

import json
from pathlib import Path

from parley.bus import EventBus
from parley.gateway import GatewaySession

OUT = Path(__file__).resolve().parent.parent / "frontend" / "test" / "fixtures"


def main():
    bus = EventBus()
    session = GatewaySession(bus=bus, session_id="golden")
    log = []

    def send(message, advance_ms):
        log.append({"direction": "sent", "message": message})
        session.handle(message)
        bus.advance_clock(advance_ms)
        for outbound in session.outbox.drain():
            log.append({"direction": "received", "message": outbound})

    send({"type": "join", "session": "golden",
          "body": {"name": "Alice", "angle_deg": 60}}, 100)
    send({"type": "join", "session": "golden",
          "body": {"name": "Bob", "angle_deg": 120}}, 100)
    send({"type": "utterance", "session": "golden",
          "body": {"participant": "Alice", "text": "Hello robot, how are you?",
                   "facing_robot": True}}, 4000)
    send({"type": "utterance", "session": "golden",
          "body": {"participant": "Bob", "text": "I have a question about space.",
                   "facing_robot": False}}, 8000)
    # Third utterance: robot replies, then Bob barges in mid-speech and
    # takes over with a full utterance, abandoning the robot's sentence.
    send({"type": "utterance", "session": "golden",
          "body": {"participant": "Alice", "text": "Tell us a very long story please!",
                   "facing_robot": True}}, 2400)
    send({"type": "speech", "session": "golden",
          "body": {"participant": "Bob", "state": "start"}}, 600)
    send({"type": "utterance", "session": "golden",
          "body": {"participant": "Bob", "text": "Wait, what about dessert?",
                   "facing_robot": False}}, 300)
    send({"type": "speech", "session": "golden",
          "body": {"participant": "Bob", "state": "end"}}, 8000)

    OUT.mkdir(parents=True, exist_ok=True)
    out_path = OUT / "golden-log.json"
    out_path.write_text(json.dumps(log, indent=2) + "\n", encoding="utf-8")
    received = sum(1 for e in log if e["direction"] == "received")
    print(f"wrote {out_path} ({len(log)} entries, {received} server messages)")


if __name__ == "__main__":
    main()
