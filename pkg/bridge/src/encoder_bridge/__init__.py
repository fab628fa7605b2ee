"""Entity-marker relation encoding and engine-format export."""

from .encoders import HashedTokenEncoder, MarkerLostError, RelationEncoder, TorchEncoder
from .export import ExportResult, encode_and_export, load_examples_jsonl, representation
from .markers import MarkedExample, MarkerError, insert_markers

__version__ = "0.1.0"
