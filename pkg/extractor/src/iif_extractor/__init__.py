"""Encoder-backed artifact extraction for the iif engine."""

from .errors import ExtractorError, NoGradParams
from .extract import (
    ExtractionSpec,
    extract_gradients,
    extract_sentence,
    extract_tokens,
)
from .lora import LoraLinear, attach_value_adapters, fine_tune
from .records import Example, load_examples

__version__ = "0.1.0"
