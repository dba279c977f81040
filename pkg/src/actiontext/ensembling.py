"""Temporal ensembling over overlapping action chunks.

Every inference step emits a chunk of ``H`` future actions. For timestep ``t``
the chunk emitted at ``t - k`` holds a prediction for ``t`` in row ``k``
(as long as ``k < H``). The executed action is the plain mean of the rows
from the last ``n`` emissions that still cover ``t``. Averaging happens on
dequantized (continuous) chunks.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


class NoCoveringPrediction(LookupError):
    pass


@dataclass(frozen=True)
class EnsembleConfig:
    n: int
    horizon: int

    def __post_init__(self):
        if not 1 <= self.n <= self.horizon:
            raise ValueError(f"ensemble size must satisfy 1 <= n <= H, got n={self.n}, H={self.horizon}")


class EnsembleBuffer:
    """Holds at most ``n`` ``(emit_timestep, chunk)`` pairs for one control loop.

    Not safe for concurrent mutation; one loop owns a buffer.
    """

    def __init__(self, n: int, horizon: int):
        self.config = EnsembleConfig(n, horizon)
        self.entries: deque[tuple[int, np.ndarray]] = deque()
        self.current_timestep: int | None = None

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, chunk, t: int) -> "EnsembleBuffer":
        chunk = np.array(chunk, dtype=np.float64)
        if chunk.ndim != 2 or chunk.shape[0] != self.horizon:
            raise ValueError(f"chunk must have {self.horizon} rows, got shape {chunk.shape}")
        if self.entries and t <= self.entries[-1][0]:
            raise ValueError(f"push timestep {t} is not after last emission {self.entries[-1][0]}")
        if self.entries and chunk.shape[1] != self.entries[0][1].shape[1]:
            raise ValueError("chunk action dimension differs from buffered chunks")
        self.entries.append((int(t), chunk))
        self.current_timestep = int(t)
        while self.entries and t - self.entries[0][0] >= self.horizon:
            self.entries.popleft()
        while len(self.entries) > self.n:
            self.entries.popleft()
        return self

    def covering(self, t: int) -> list[tuple[int, np.ndarray]]:
        return [(e, c) for e, c in self.entries if e <= t < e + self.horizon]

    def current_action(self, t: int | None = None) -> np.ndarray:
        if t is None:
            t = self.current_timestep
        rows = [c[t - e] for e, c in self.covering(t)] if t is not None else []
        if not rows:
            raise NoCoveringPrediction(f"no buffered chunk covers timestep {t}")
        # offset by the first row so identical rows average to themselves bit-exactly
        base = rows[0]
        return base + np.mean(np.asarray(rows) - base, axis=0)

    def reset(self) -> "EnsembleBuffer":
        self.entries.clear()
        self.current_timestep = None
        return self
