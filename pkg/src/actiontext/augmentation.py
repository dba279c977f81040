"""Masked action augmentation.

Digit characters in the conditioning copy of a target action string are
replaced by a mask character at random, so a model trained on the pair cannot
simply auto-complete a number it has started. Spaces and minus signs are
never touched, so token boundaries survive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codec import CodecConfig, encode_text, quantize
from .data import Episode
from .prompting import Layout, PromptBundle, build_prompt


@dataclass(frozen=True)
class MaskConfig:
    p: float = 0.0
    mask_char: str = "#"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"mask probability must be in [0, 1], got {self.p}")
        if len(self.mask_char) != 1 or self.mask_char.isdigit() or self.mask_char in " -−":
            raise ValueError(f"invalid mask character {self.mask_char!r}")


@dataclass
class TrainingSample:
    prompt: PromptBundle
    target_text: str
    masked_text: str
    start: int = 0
    image_paths: Sequence[str] = ()


def mask_action_text(text: str, cfg: MaskConfig, rng: np.random.Generator | None = None) -> str:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    chars = np.array(list(text), dtype="<U1")
    if chars.size == 0:
        return text
    is_digit = (chars >= "0") & (chars <= "9")
    # one draw per character keeps the stream aligned with positions
    draws = rng.random(chars.size)
    chars[is_digit & (draws < cfg.p)] = cfg.mask_char
    return "".join(chars.tolist())


def sample_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def make_training_samples(
    episode: Episode,
    cfg: CodecConfig,
    mask: MaskConfig,
    images: Sequence[np.ndarray] = (),
    layout: Layout = Layout.SEPARATE,
) -> list[TrainingSample]:
    """One sample per start index (stride 1) with a full ``H``-step window ahead."""
    H = cfg.horizon
    if len(episode) < H:
        raise ValueError(f"episode of length {len(episode)} is shorter than the horizon {H}")
    prompt = build_prompt(cfg, episode.instruction or "complete the task", images, layout)
    samples = []
    for i in range(len(episode) - H + 1):
        target = encode_text(quantize(episode.actions[i : i + H], cfg))
        masked = mask_action_text(target, mask, rng=sample_seed(mask.seed, i))
        samples.append(TrainingSample(prompt=prompt, target_text=target, masked_text=masked, start=i))
    return samples


def export_samples_jsonl(samples: Iterable[TrainingSample], path: str | Path) -> int:
    count = 0
    with open(path, "w") as f:
        for s in samples:
            row = {
                "instruction": s.prompt.instruction,
                "images": list(s.image_paths),
                "target_text": s.target_text,
                "masked_text": s.masked_text,
            }
            f.write(json.dumps(row) + "\n")
            count += 1
    return count
