"""Closed-loop evaluation and ablation grids on the toy environments.

Each step runs observe -> policy -> parse -> (dequantize, push, ensemble) -> env
step. A parse failure never ends an episode: the previously executed action
is repeated and the failure is counted.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import ActionParseError, CodecConfig, dequantize, fit_bounds, parse_text
from .data import Episode, StepRecord, read_episodes
from .ensembling import EnsembleBuffer
from .policy import CorruptionConfig, NearestNeighborPolicy, Observation, OraclePolicy, RemoteEndpointConfig, RemotePolicy
from .prompting import Layout
from .simenv import generate_demos, make_env

log = logging.getLogger(__name__)

CSV_COLUMNS = ["config_id", "success_rate", "jitter", "parse_fail_rate", "clamp_rate", "latency_ms", "delta_success"]
DEFAULT_RESOLUTIONS = (250, 1000, 4000)


@dataclass
class RunConfig:
    config_id: str = "baseline"
    env: str = "pointmass"
    policy: str = "nn"  # oracle | nn | remote
    horizon: int = 8
    resolution: int = 1000
    bounds: list | None = None  # fitted on the demonstrations when None
    bounds_padding: float = 0.05
    ensemble_n: int = 8  # 1 disables ensembling
    mask_p: float = 0.0  # recorded for the dataset build; closed loop does not use it
    tiled: bool = True
    episodes: int = 50
    seed: int = 0
    demos: int = 100
    demo_seed: int = 1
    dataset: str | None = None  # JSONL demonstrations; generated from demo_seed when None
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    endpoint: RemoteEndpointConfig | None = None

    def __post_init__(self):
        if isinstance(self.corruption, dict):
            self.corruption = CorruptionConfig(**self.corruption)
        if isinstance(self.endpoint, dict):
            self.endpoint = RemoteEndpointConfig(**self.endpoint)
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not 1 <= self.ensemble_n <= self.horizon:
            raise ValueError(f"ensemble_n must be in [1, horizon], got {self.ensemble_n}")
        if self.resolution < 2:
            raise ValueError(f"resolution must be >= 2, got {self.resolution}")
        if self.policy not in ("oracle", "nn", "remote"):
            raise ValueError(f"unknown policy kind {self.policy!r}")
        if self.policy == "remote" and self.endpoint is None:
            raise ValueError("remote policy needs an endpoint")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    parse_failures: int
    clamp_events: int
    jitter: float
    latency_ms: float = 0.0
    trajectory: list[StepRecord] = field(default_factory=list)


@dataclass
class SuiteReport:
    rows: list[dict]
    configs: list[dict]
    baseline: str
    episode_seeds: list[int]

    def row(self, config_id: str) -> dict:
        for r in self.rows:
            if r["config_id"] == config_id:
                return r
        raise KeyError(config_id)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=CSV_COLUMNS, extrasaction="ignore")
            w.writeheader()
            for r in self.rows:
                w.writerow(r)

    def to_json(self) -> dict:
        return {"baseline": self.baseline, "episode_seeds": self.episode_seeds, "rows": self.rows, "configs": self.configs}

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


def compute_jitter(actions: Sequence) -> float:
    """Mean squared Euclidean distance between consecutive executed actions."""
    a = np.asarray(actions, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if len(a) < 2:
        raise ValueError("jitter needs at least two actions")
    return float(np.mean(np.sum(np.diff(a, axis=0) ** 2, axis=1)))


def episode_seeds(seed: int, count: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


@lru_cache(maxsize=16)
def cached_demos(env: str, count: int, seed: int) -> tuple[Episode, ...]:
    return tuple(generate_demos(make_env(env), count, seed))


@lru_cache(maxsize=16)
def _load_dataset(path: str, mtime: float) -> tuple[Episode, ...]:
    return tuple(read_episodes(path))


def demos_for(cfg: RunConfig) -> tuple[Episode, ...]:
    if cfg.dataset is None:
        return cached_demos(cfg.env, cfg.demos, cfg.demo_seed)
    path = Path(cfg.dataset)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    demos = _load_dataset(str(path.resolve()), path.stat().st_mtime)
    wrong = {ep.env for ep in demos} - {cfg.env}
    if wrong:
        raise ValueError(f"dataset {path} holds {sorted(wrong)} episodes, config wants {cfg.env!r}")
    return demos


def codec_for(cfg: RunConfig, demos: Sequence[Episode] | None = None) -> CodecConfig:
    env = make_env(cfg.env)
    if cfg.bounds is not None:
        bounds = cfg.bounds
    else:
        demos = demos if demos is not None else demos_for(cfg)
        bounds = fit_bounds([ep.actions for ep in demos], cfg.bounds_padding)
    return CodecConfig(cfg.horizon, env.action_dims, cfg.resolution, tuple(map(tuple, bounds)))


def build_policy(cfg: RunConfig, codec: CodecConfig):
    if cfg.policy == "oracle":
        return OraclePolicy(cfg.env, codec)
    if cfg.policy == "nn":
        demos = demos_for(cfg)
        return NearestNeighborPolicy(codec, cfg.corruption).fit(demos)
    layout = Layout.TILED if cfg.tiled else Layout.SEPARATE
    return RemotePolicy(cfg.endpoint, codec, layout)


def run_episode(cfg: RunConfig, episode_seed: int, policy=None, codec: CodecConfig | None = None, keep_trajectory: bool = False) -> EpisodeResult:
    env = make_env(cfg.env)
    codec = codec or codec_for(cfg)
    policy = policy or build_policy(cfg, codec)
    buf = EnsembleBuffer(cfg.ensemble_n, codec.horizon)
    render = cfg.policy == "remote"

    state = env.reset(episode_seed)
    previous = env.hold_action(np.zeros(env.action_dims))
    executed: list[np.ndarray] = []
    trajectory: list[StepRecord] = []
    failures = clamps = 0
    latency = 0.0
    done = False
    t = 0
    while not done:
        obs = Observation(env.observe(state), env.render(state) if render else [], t, sim_state=state)
        out = policy.act(obs, env.instruction)
        latency += out.latency_ms
        error = None
        try:
            q = parse_text(out.raw_text, codec)
        except ActionParseError as exc:
            failures += 1
            error = exc.kind.value
            action = previous
        else:
            clamps += int(q.clamped)
            buf.push(dequantize(q, codec), t)
            action = buf.current_action(t)
        if keep_trajectory:
            trajectory.append(
                StepRecord(t, obs.state.tolist(), out.raw_text, error is None, error,
                           error is None and q.clamped, np.asarray(action).tolist(), out.latency_ms)
            )
        state, done = env.step(state, action)
        executed.append(np.asarray(action))
        previous = action
        t += 1

    return EpisodeResult(
        success=env.is_success(state),
        steps=t,
        parse_failures=failures,
        clamp_events=clamps,
        jitter=compute_jitter(executed) if len(executed) > 1 else 0.0,
        latency_ms=latency / t,
        trajectory=trajectory,
    )


def evaluate(cfg: RunConfig, seeds: Sequence[int]) -> dict:
    codec = codec_for(cfg)
    policy = build_policy(cfg, codec)
    results = [run_episode(cfg, s, policy, codec) for s in seeds]
    steps = sum(r.steps for r in results)
    return {
        "config_id": cfg.config_id,
        "episodes": len(results),
        "success_rate": float(np.mean([r.success for r in results])),
        "jitter": float(np.mean([r.jitter for r in results])),
        "parse_fail_rate": sum(r.parse_failures for r in results) / steps,
        "clamp_rate": sum(r.clamp_events for r in results) / steps,
        "latency_ms": float(np.mean([r.latency_ms for r in results])),
        "mean_steps": steps / len(results),
    }


def run_suite(grid: Sequence[RunConfig], baseline: int = 0, seed: int | None = None, out_dir: str | Path | None = None) -> SuiteReport:
    """Evaluate every config on the same episode seeds and report deltas against ``grid[baseline]``."""
    if not grid:
        raise ValueError("empty grid")
    ids = [c.config_id for c in grid]
    if len(set(ids)) != len(ids):
        raise ValueError(f"config ids must be unique: {ids}")
    base = grid[baseline]
    seeds = episode_seeds(base.seed if seed is None else seed, base.episodes)
    rows = []
    for cfg in grid:
        start = time.perf_counter()
        row = evaluate(cfg, seeds[: cfg.episodes] if cfg.episodes <= len(seeds) else episode_seeds(base.seed if seed is None else seed, cfg.episodes))
        log.info("%s: success %.3f jitter %.3g (%.1fs)", cfg.config_id, row["success_rate"], row["jitter"], time.perf_counter() - start)
        rows.append(row)
    ref = rows[baseline]
    for r in rows:
        r["delta_success"] = r["success_rate"] - ref["success_rate"]
        r["delta_jitter"] = r["jitter"] - ref["jitter"]
    report = SuiteReport(rows, [c.to_dict() for c in grid], base.config_id, seeds)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "report.csv")
        report.write_json(out / "report.json")
    return report


def ablation_grid(base: RunConfig, resolutions: Sequence[int] = DEFAULT_RESOLUTIONS, mask_p: float = 0.3) -> list[RunConfig]:
    """Six rows: baseline, no ensembling, no masking, high resolution, low resolution, untiled."""
    res = sorted(set(int(r) for r in resolutions))
    if len(res) != 3 or res[0] < 2:
        raise ValueError(f"resolution axis needs three distinct values >= 2, got {list(resolutions)}")
    low, mid, high = res
    if base.ensemble_n < 2:
        raise ValueError("the baseline row must have ensembling enabled (ensemble_n >= 2)")
    row0 = replace(base, config_id="row0_baseline", resolution=mid, mask_p=mask_p, tiled=True)
    return [
        row0,
        replace(row0, config_id="row1_no_ensemble", ensemble_n=1),
        replace(row0, config_id="row2_no_mask", mask_p=0.0),
        replace(row0, config_id=f"row3_res{high}", resolution=high),
        replace(row0, config_id=f"row4_res{low}", resolution=low),
        replace(row0, config_id="row5_untiled", tiled=False),
    ]


def check_ensemble_direction(report: SuiteReport, with_id: str, without_id: str) -> list[str]:
    """Return the violated directional claims (empty when ensembling helps or ties)."""
    on, off = report.row(with_id), report.row(without_id)
    problems = []
    if on["success_rate"] < off["success_rate"]:
        problems.append(f"success with ensembling {on['success_rate']:.3f} < without {off['success_rate']:.3f}")
    if not on["jitter"] < off["jitter"]:
        problems.append(f"jitter with ensembling {on['jitter']:.4g} is not below without {off['jitter']:.4g}")
    return problems
