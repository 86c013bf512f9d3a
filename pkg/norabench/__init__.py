"""Generate, solve, measure and export non-path relational reasoning benchmarks."""

from .config import TOOL_VERSION as __version__

__all__ = ["__version__"]
