"""Robot actions as plain integer text: codec, prompts, temporal ensembling,
masked augmentation, toy closed-loop harness and an inference gateway."""

from .codec import (
    ActionParseError,
    CodecConfig,
    ParseErrorKind,
    QuantizedChunk,
    decode_text,
    dequantize,
    encode_chunk,
    encode_text,
    fit_bounds,
    parse_text,
    quantize,
)
from .ensembling import EnsembleBuffer, NoCoveringPrediction
from .prompting import Layout, PromptBundle, build_prompt, build_system_prompt, tile_images

__version__ = "0.1.0"

__all__ = [
    "ActionParseError",
    "CodecConfig",
    "EnsembleBuffer",
    "Layout",
    "NoCoveringPrediction",
    "ParseErrorKind",
    "PromptBundle",
    "QuantizedChunk",
    "build_prompt",
    "build_system_prompt",
    "decode_text",
    "dequantize",
    "encode_chunk",
    "encode_text",
    "fit_bounds",
    "parse_text",
    "quantize",
    "tile_images",
]
