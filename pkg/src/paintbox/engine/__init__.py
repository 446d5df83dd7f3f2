"""Interactive engine: frame loop, HTTP server and CLI."""

from .config import EngineConfig, load_config
from .session import FrameReport, Mode, Session

__all__ = ["EngineConfig", "load_config", "FrameReport", "Mode", "Session"]
