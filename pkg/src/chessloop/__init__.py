"""Chess move-selection harness: move generation, engine critics, inference loops and metrics."""

__version__ = "0.1.0"
