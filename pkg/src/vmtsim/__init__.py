"""vmtsim - A cycle-accurate simulator for virtualized match tables."""

__version__ = "0.4.0"
__all__ = ["__version__"]
