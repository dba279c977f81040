"""Conversion between continuous action chunks and integer action text.

A chunk is an ``H x D`` float array. Each dimension is normalized with its own
``(lo, hi)`` bounds onto the integer range ``[0, B]`` and the integers are
written timestep-major as a single space-separated line::

    chunk (H x D floats) -> QuantizedChunk (H x D ints) -> "512 0 1000 ..."

Parsing is tolerant of whatever a language model emits: runs of whitespace,
a leading minus sign, leading zeros and out-of-range integers are accepted
(the latter clamped and flagged); anything else raises :class:`ActionParseError`.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

CONSTANT_DIM_EPS = 1e-6

# one optional ASCII or unicode minus, then ASCII digits only
_TOKEN_RE = re.compile(r"[-−]?([0-9]+)")


@dataclass(frozen=True)
class CodecConfig:
    horizon: int
    dims: int
    resolution: int
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if int(self.dims) < 1:
            raise ValueError(f"dims must be >= 1, got {self.dims}")
        if int(self.resolution) < 2:
            raise ValueError(f"resolution must be >= 2, got {self.resolution}")
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(bounds) != self.dims:
            raise ValueError(f"expected {self.dims} bound pairs, got {len(bounds)}")
        for d, (lo, hi) in enumerate(bounds):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ValueError(f"bounds for dim {d} are not finite: ({lo}, {hi})")
            if not lo < hi:
                raise ValueError(f"bounds for dim {d} need lo < hi, got ({lo}, {hi})")
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "dims", int(self.dims))
        object.__setattr__(self, "resolution", int(self.resolution))
        object.__setattr__(self, "bounds", bounds)

    @property
    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    @property
    def n_tokens(self) -> int:
        return self.horizon * self.dims

    def max_roundtrip_error(self) -> np.ndarray:
        """Per-dimension worst case ``(hi - lo) / (2B)`` for in-bounds values."""
        return (self.hi - self.lo) / (2 * self.resolution)

    def with_resolution(self, resolution: int) -> "CodecConfig":
        return CodecConfig(self.horizon, self.dims, resolution, self.bounds)

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "bounds": [list(b) for b in self.bounds],
            "resolution": self.resolution,
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CodecConfig":
        try:
            return cls(
                horizon=data["horizon"],
                dims=data["dims"],
                resolution=data["resolution"],
                bounds=tuple(tuple(b) for b in data["bounds"]),
            )
        except KeyError as exc:
            raise ValueError(f"bounds document is missing key {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CodecConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class QuantizedChunk:
    values: np.ndarray
    clamped: bool = False

    def __eq__(self, other):
        if not isinstance(other, QuantizedChunk):
            return NotImplemented
        return self.clamped == other.clamped and np.array_equal(self.values, other.values)


class ParseErrorKind(str, enum.Enum):
    TOKEN_COUNT_MISMATCH = "TokenCountMismatch"
    NON_NUMERIC_TOKEN = "NonNumericToken"
    EMPTY_OUTPUT = "EmptyOutput"


class ActionParseError(ValueError):
    """Model output that cannot be read as ``H * D`` integers."""

    def __init__(self, kind: ParseErrorKind, detail: str, index: int | None = None, token: str | None = None):
        super().__init__(f"{kind.value}: {detail}")
        self.kind = kind
        self.detail = detail
        self.index = index
        self.token = token


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _as_chunk(chunk, cfg: CodecConfig) -> np.ndarray:
    arr = np.asarray(chunk, dtype=np.float64)
    if arr.shape != (cfg.horizon, cfg.dims):
        raise ValueError(f"chunk shape {arr.shape} does not match ({cfg.horizon}, {cfg.dims})")
    return arr


def fit_bounds(dataset: Sequence[np.ndarray], padding_fraction: float = 0.0) -> list[tuple[float, float]]:
    """Per-dimension min/max over every timestep of every chunk, widened by
    ``padding_fraction`` of the span. Constant dimensions get +-1e-6."""
    if padding_fraction < 0:
        raise ValueError("padding_fraction must be >= 0")
    if len(dataset) == 0:
        raise ValueError("cannot fit bounds on an empty dataset")
    arrays = [np.atleast_2d(np.asarray(c, dtype=np.float64)) for c in dataset]
    dims = {a.shape[1] for a in arrays}
    if len(dims) != 1:
        raise ValueError(f"chunks disagree on action dimension: {sorted(dims)}")
    stacked = np.concatenate(arrays, axis=0)
    if not np.all(np.isfinite(stacked)):
        raise ValueError("dataset contains non-finite values")
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    out = []
    for a, b in zip(lo, hi):
        span = b - a
        if span == 0:
            out.append((float(a - CONSTANT_DIM_EPS), float(b + CONSTANT_DIM_EPS)))
        else:
            out.append((float(a - padding_fraction * span), float(b + padding_fraction * span)))
    return out


def quantize(chunk, cfg: CodecConfig) -> QuantizedChunk:
    x = _as_chunk(chunk, cfg)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite action values")
    lo, hi = cfg.lo, cfg.hi
    scaled = round_half_away((x - lo) / (hi - lo) * cfg.resolution)
    clipped = np.clip(scaled, 0, cfg.resolution)
    return QuantizedChunk(clipped.astype(np.int64), bool(np.any(clipped != scaled)))


def dequantize(q: QuantizedChunk | np.ndarray, cfg: CodecConfig) -> np.ndarray:
    values = q.values if isinstance(q, QuantizedChunk) else np.asarray(q)
    if values.shape != (cfg.horizon, cfg.dims):
        raise ValueError(f"quantized shape {values.shape} does not match ({cfg.horizon}, {cfg.dims})")
    lo, hi = cfg.lo, cfg.hi
    return lo + (values / cfg.resolution) * (hi - lo)


def encode_text(q: QuantizedChunk | np.ndarray) -> str:
    values = q.values if isinstance(q, QuantizedChunk) else np.asarray(q)
    return " ".join(str(int(v)) for v in values.reshape(-1))


def encode_chunk(chunk, cfg: CodecConfig) -> str:
    return encode_text(quantize(chunk, cfg))


def parse_text(s: str | bytes, cfg: CodecConfig) -> QuantizedChunk:
    """Read model output into a :class:`QuantizedChunk`.

    Raises :class:`ActionParseError` for empty output, a token that is not an
    optionally signed decimal integer, or the wrong number of tokens.
    """
    if isinstance(s, (bytes, bytearray)):
        s = s.decode("utf-8", errors="replace")
    tokens = s.split()
    if not tokens:
        raise ActionParseError(ParseErrorKind.EMPTY_OUTPUT, "no tokens in output")

    B = cfg.resolution
    max_digits = len(str(B))
    values = []
    clamped = False
    for i, tok in enumerate(tokens):
        m = _TOKEN_RE.fullmatch(tok)
        if m is None:
            raise ActionParseError(
                ParseErrorKind.NON_NUMERIC_TOKEN, f"token {i} is not an integer: {tok[:40]!r}", i, tok
            )
        negative = tok[0] != m.group(1)[0]
        digits = m.group(1).lstrip("0") or "0"
        if negative and digits != "0":
            values.append(0)
            clamped = True
        elif len(digits) > max_digits:
            # int() refuses very long digit strings; anything this long is > B anyway
            values.append(B)
            clamped = True
        else:
            v = int(digits)
            if v > B:
                v, clamped = B, True
            values.append(v)

    if len(values) != cfg.n_tokens:
        raise ActionParseError(
            ParseErrorKind.TOKEN_COUNT_MISMATCH, f"expected {cfg.n_tokens} integers, got {len(values)}"
        )
    return QuantizedChunk(np.array(values, dtype=np.int64).reshape(cfg.horizon, cfg.dims), clamped)


def decode_text(s: str, cfg: CodecConfig) -> np.ndarray:
    return dequantize(parse_text(s, cfg), cfg)


def canonicalize(s: str) -> str:
    return " ".join(s.split())

