"""Infrastructure shared by the HEI toolkit: config, logging, errors, validation."""
from app.config import Config

__version__ = Config.TOOL_VERSION
