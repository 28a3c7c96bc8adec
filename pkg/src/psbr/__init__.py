"""Posterior-sampling best response agents for repeated two-player games."""
from __future__ import annotations

from ._accel import backend
from .engine import MatchConfig, MatchRecord, run_match, run_suite
from .games import get_game
from .strategies import menu_for, strategy_by_label

__all__ = [
    "MatchConfig",
    "MatchRecord",
    "backend",
    "get_game",
    "menu_for",
    "run_match",
    "run_suite",
    "strategy_by_label",
]
__version__ = "0.1.0"
