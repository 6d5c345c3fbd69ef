"""Engine: wires all modules onto one bus for a session.

Construction order fixes the subscription order, which fixes delivery
order for subscribers of the same topic. Face tracking must see
``transcribed`` before the conversation manager so segments already
carry the fused identity when the history entry is labelled.
"""

from __future__ import annotations

from parley.awareness import SpeakerAwareness
from parley.bus import EngineConfig, EventBus
from parley.conversation import ConversationManager
from parley.diarisation import Diarisation
from parley.faces import FaceTracking
from parley.output import InteractionOutput
from parley.transcription import Transcription
from parley.turns import TurnTaking

TOPICS = (
    "user-angle",
    "user-user-switch",
    "robot-user-switch",
    "transcribed",
    "speaker",
    "users",
    "face-id",
    "face-position",
    "turn",
    "text",
    "addressee",
    "spoken-text",
    "gaze",
    "gen-request",
    "gen-chunk",
)


def register_topics(bus: EventBus) -> None:
    for topic in TOPICS:
        bus.register_topic(topic)


class Engine:
    def __init__(
        self,
        bus: EventBus,
        config: EngineConfig,
        enrolments: list,
        mic,
        speaker_id,
        vision,
        llm,
        embodiment,
    ):
        config.validate()
        register_topics(bus)
        self.bus = bus
        self.config = config
        self.enrolments = list(enrolments)
        self.awareness = SpeakerAwareness(bus, config, mic)
        self.transcription = Transcription(bus, config)
        self.faces = FaceTracking(bus, config, self.enrolments, vision)
        self.diarisation = Diarisation(bus, config, self.enrolments, speaker_id)
        # Output before turn-taking: an utterance abandoned by this very
        # transcription publishes its spoken prefix before the take-turn
        # decision, so the next prompt already contains it.
        self.output = InteractionOutput(bus, config, embodiment)
        self.turns = TurnTaking(bus, config)
        self.conversation = ConversationManager(bus, config, self.enrolments, llm)
        # The simulated microphone hears the robot's own voice from the
        # robot region while it is speaking.
        if hasattr(mic, "robot_speaking_fn"):
            mic.robot_speaking_fn = lambda: self.output.is_robot_speaking

    def enrol(self, record) -> None:
        """Register a participant after construction (gateway sessions
        enrol at join time)."""
        self.enrolments.append(record)
        self.faces.enrol(record)
        self.diarisation.enrol(record)
        self.conversation.enrol(record)
