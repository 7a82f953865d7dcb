"""Per-patch ViT feature export to VCFT tensor files."""

from .extract import MODEL_TABLE, ExtractorSpec, extract, verify
from .vcft import read_vcft, write_vcft

__version__ = "0.1.0"

__all__ = ["MODEL_TABLE", "ExtractorSpec", "extract", "verify",
           "read_vcft", "write_vcft"]
