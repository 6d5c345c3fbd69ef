"""parley: a multi-party spoken-interaction engine.

Orchestrates two users and one robot voice: speaker localisation,
identity fusion, turn-taking, barge-in handling, and streamed response
generation with addressee selection. Ships with a deterministic
scenario simulator, a metrics pipeline, and a live session gateway.
"""

from parley.bus import EngineConfig, Event, EventBus

__all__ = ["EngineConfig", "Event", "EventBus"]
__version__ = "0.1.0"
