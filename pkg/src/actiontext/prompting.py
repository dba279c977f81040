"""System prompt, instruction and image assembly for the action-as-text model."""

from __future__ import annotations

import base64
import enum
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .codec import CodecConfig

SYSTEM_PROMPT_TEMPLATE = (
    "Analyze the input image and predict robot actions for the next {H} timesteps. "
    "Each action has {D} dimensions. "
    "Output a single sequence of {HD} integers (0 - {B} each), "
    "representing the {H} timesteps sequentially. "
    "Provide only space-separated numbers. Nothing else."
)


class Layout(str, enum.Enum):
    SEPARATE = "separate"
    TILED = "tiled"


@dataclass
class PromptBundle:
    system_prompt: str
    instruction: str
    images: list[np.ndarray] = field(default_factory=list)
    layout: Layout = Layout.SEPARATE


def build_system_prompt(H: int, D: int, B: int) -> str:
    if min(H, D, B) < 1:
        raise ValueError(f"H, D and B must be positive, got {(H, D, B)}")
    return SYSTEM_PROMPT_TEMPLATE.format(H=int(H), D=int(D), HD=int(H) * int(D), B=int(B))


def as_rgb(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"expected an HxWx3 uint8 image, got shape {arr.shape} dtype {arr.dtype}")
    return arr


def tile_images(images: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate images left to right; shorter ones are padded with black rows at the bottom."""
    if len(images) == 0:
        raise ValueError("tile_images needs at least one image")
    arrays = [as_rgb(im) for im in images]
    height = max(a.shape[0] for a in arrays)
    width = sum(a.shape[1] for a in arrays)
    out = np.zeros((height, width, 3), dtype=np.uint8)
    x = 0
    for a in arrays:
        out[: a.shape[0], x : x + a.shape[1]] = a
        x += a.shape[1]
    return out


def build_prompt(cfg: CodecConfig, instruction: str, images: Sequence[np.ndarray] = (), layout=Layout.SEPARATE) -> PromptBundle:
    layout = Layout(layout)
    instruction = instruction.strip()
    if not instruction:
        raise ValueError("instruction must be non-empty")
    images = [as_rgb(im) for im in images]
    if layout is Layout.TILED:
        if not images:
            raise ValueError("tiled layout needs at least one image")
        images = [tile_images(images)]
    return PromptBundle(
        system_prompt=build_system_prompt(cfg.horizon, cfg.dims, cfg.resolution),
        instruction=instruction,
        images=images,
        layout=layout,
    )


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(image: np.ndarray, path: str | Path) -> None:
    Image.fromarray(as_rgb(image)).save(path, format="PNG")


def image_from_rgb_buffer(buf: bytes, width: int, height: int) -> np.ndarray:
    if len(buf) != width * height * 3:
        raise ValueError(f"buffer has {len(buf)} bytes, expected {width * height * 3} for {width}x{height} RGB8")
    return np.frombuffer(buf, dtype=np.uint8).reshape(height, width, 3).copy()


def png_bytes(image: np.ndarray) -> bytes:
    bio = io.BytesIO()
    Image.fromarray(as_rgb(image)).save(bio, format="PNG")
    return bio.getvalue()


def encode_png_base64(image: np.ndarray) -> str:
    return base64.b64encode(png_bytes(image)).decode("ascii")


def decode_png_base64(data: str) -> np.ndarray:
    if data.startswith("data:"):
        data = data.split(",", 1)[1]
    with Image.open(io.BytesIO(base64.b64decode(data, validate=True))) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def image_data_url(image: np.ndarray) -> str:
    return "data:image/png;base64," + encode_png_base64(image)
