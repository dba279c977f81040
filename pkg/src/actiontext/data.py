"""Episode containers and their JSONL file format.

A dataset file holds one or more episodes. Each episode starts with a header
line ``{"env": ..., "dims": D, "seed": s, ...}`` followed by one line per step
``{"state": [...], "action": [...], "t": k}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


@dataclass
class Episode:
    env: str
    seed: int
    instruction: str
    states: np.ndarray  # (T, S) observation features, before each action
    actions: np.ndarray  # (T, D)
    success: bool = True

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=np.float64))
        if len(self.states) != len(self.actions):
            raise ValueError(f"{len(self.states)} states but {len(self.actions)} actions")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def dims(self) -> int:
        return self.actions.shape[1]


@dataclass
class StepRecord:
    t: int
    state: list[float]
    raw_text: str = ""
    parse_ok: bool = True
    parse_error: str | None = None
    clamped: bool = False
    action: list[float] = field(default_factory=list)
    latency_ms: float = 0.0


def _floats(arr) -> list[float]:
    return [float(v) for v in np.asarray(arr).reshape(-1)]


def episode_lines(ep: Episode) -> Iterable[str]:
    header = {
        "env": ep.env,
        "dims": ep.dims,
        "seed": int(ep.seed),
        "instruction": ep.instruction,
        "length": len(ep),
        "success": bool(ep.success),
    }
    yield json.dumps(header)
    for k, (s, a) in enumerate(zip(ep.states, ep.actions)):
        yield json.dumps({"state": _floats(s), "action": _floats(a), "t": k})


def write_episodes(episodes: Iterable[Episode], path: str | Path) -> None:
    with open(path, "w") as f:
        for ep in episodes:
            for line in episode_lines(ep):
                f.write(line + "\n")


def read_episodes(path: str | Path) -> list[Episode]:
    episodes: list[Episode] = []
    header = None
    states: list = []
    actions: list = []

    def flush():
        if header is not None:
            episodes.append(
                Episode(
                    env=header["env"],
                    seed=header["seed"],
                    instruction=header.get("instruction", ""),
                    states=np.array(states).reshape(len(states), -1),
                    actions=np.array(actions).reshape(len(actions), header["dims"]),
                    success=header.get("success", True),
                )
            )

    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "env" in obj:
                flush()
                header, states, actions = obj, [], []
            elif header is None:
                raise ValueError(f"{path}:{lineno}: step line before any episode header")
            else:
                states.append(obj["state"])
                actions.append(obj["action"])
    flush()
    return episodes
