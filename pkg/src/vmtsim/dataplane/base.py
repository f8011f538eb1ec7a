"""Base class for clocked data-plane units.

Every unit advances once per pipeline cycle, reports whether it holds any
work, and exposes its queue occupancies for deadlock diagnostics.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any


class ClockedUnit(ABC):
    """Base class for units driven by the engine tick loop."""

    @property
    @abstractmethod
    def unit_name(self) -> str:
        """Human-readable unit name (e.g., 'pmu3')."""
        pass

    @abstractmethod
    def idle(self) -> bool:
        """True when the unit holds no queued or in-flight work."""
        pass

    @abstractmethod
    def diagnostics(self) -> dict[str, Any]:
        """Queue occupancies and state for deadlock reports."""
        pass

    def stats(self) -> dict[str, Any]:
        """Counters exported to the metrics summary."""
        return {}
