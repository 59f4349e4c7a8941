"""HTTP sidecar serving OCR and VLM engines on the finparse wire protocols."""

from .app import create_app
from .config import AdapterConfig, load_config

__version__ = "0.1.0"
__all__ = ["AdapterConfig", "create_app", "load_config"]
