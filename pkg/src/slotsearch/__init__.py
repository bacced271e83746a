"""Multi-turn text-to-scene retrieval with a slot-state query memory."""

__version__ = "0.1.0"
