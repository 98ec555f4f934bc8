"""Knowledge oracles: scripted fixtures, a live chat endpoint, and record/replay."""

from .base import LOGPROB_FLOOR, InitError, KnowledgeOracle, OracleError, OracleRequest, build_initial_program
from .live import LiveOracle, render, yes_logprob
from .recording import RecordingOracle, replay
from .scripted import ScriptedOracle

__all__ = [
    "LOGPROB_FLOOR",
    "InitError",
    "KnowledgeOracle",
    "LiveOracle",
    "OracleError",
    "OracleRequest",
    "RecordingOracle",
    "ScriptedOracle",
    "build_initial_program",
    "render",
    "replay",
    "yes_logprob",
]
