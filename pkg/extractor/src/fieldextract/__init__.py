"""fieldextract: offline adapter turning posed RGB-D captures into the field
engine's dataset format, with per-pixel 512-d vision-language feature maps
and label embeddings."""

from .backends import EMBED_DIM, ClipBackend, HashedProjectionBackend, make_backend
from .extract import ExtractionManifest, encode_labels, extract_features
from .formats import ExtractError, ModelLoadError

__version__ = "0.1.0"
