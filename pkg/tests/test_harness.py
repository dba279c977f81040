import json
from dataclasses import replace

import numpy as np
import pytest

from actiontext.harness import (
    CSV_COLUMNS,
    RunConfig,
    ablation_grid,
    check_ensemble_direction,
    compute_jitter,
    episode_seeds,
    evaluate,
    run_episode,
    run_suite,
)
from actiontext.policy import CorruptionConfig

NOISY = CorruptionConfig(perturb_digit_prob=0.1, seed=3)


def strip_latency(rows):
    return [{k: v for k, v in r.items() if k != "latency_ms"} for r in rows]


class TestJitter:
    def test_constant_is_zero(self):
        assert compute_jitter(np.ones((20, 3))) == 0.0

    def test_alternating(self):
        u = np.array([0.3, -0.1])
        seq = [u if k % 2 == 0 else -u for k in range(11)]
        assert compute_jitter(seq) == pytest.approx(4 * float(u @ u))

    def test_random_walk_matches_loop(self, rng):
        a = np.cumsum(rng.normal(size=(50, 4)), axis=0)
        brute = sum(sum((a[k + 1][i] - a[k][i]) ** 2 for i in range(4)) for k in range(49)) / 49
        assert compute_jitter(a) == pytest.approx(brute, rel=1e-12)

    def test_too_short(self):
        with pytest.raises(ValueError):
            compute_jitter([[1.0]])


class TestEpisodes:
    @pytest.mark.parametrize("env", ["pointmass", "arm"])
    def test_oracle_succeeds_without_parse_failures(self, env):
        cfg = RunConfig(env=env, policy="oracle", ensemble_n=1, episodes=5)
        for s in episode_seeds(0, 5):
            r = run_episode(cfg, s)
            assert r.success and r.parse_failures == 0

    def test_garbage_policy_holds_every_step(self):
        cfg = RunConfig(policy="nn", corruption=CorruptionConfig(garbage_prob=1.0, seed=0), demos=20)
        r = run_episode(cfg, 123, keep_trajectory=True)
        assert r.parse_failures == r.steps == 200
        assert not r.success
        assert all(not rec.parse_ok for rec in r.trajectory)
        assert all(rec.action == [0.0, 0.0] for rec in r.trajectory)

    def test_trajectory_records(self):
        cfg = RunConfig(policy="oracle", ensemble_n=4)
        r = run_episode(cfg, 7, keep_trajectory=True)
        assert [rec.t for rec in r.trajectory] == list(range(r.steps))
        assert all(rec.parse_ok for rec in r.trajectory)

    def test_ensembling_reduces_jitter(self):
        seeds = episode_seeds(5, 40)
        on = evaluate(RunConfig(ensemble_n=8, corruption=NOISY), seeds)
        off = evaluate(RunConfig(ensemble_n=1, corruption=NOISY), seeds)
        assert on["jitter"] < off["jitter"]
        assert on["success_rate"] >= off["success_rate"]


class TestRunConfig:
    def test_round_trip(self):
        cfg = RunConfig(corruption=NOISY, bounds=[[-1, 1], [-1, 1]])
        assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    @pytest.mark.parametrize(
        "kw",
        [{"episodes": 0}, {"ensemble_n": 9}, {"ensemble_n": 0}, {"resolution": 1}, {"policy": "magic"}, {"policy": "remote"}],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            RunConfig(**kw)

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            RunConfig.from_dict({"episode": 3})

    def test_dataset_env_mismatch(self, tmp_path):
        from actiontext.data import write_episodes
        from actiontext.simenv import ArmEnv, generate_demos

        path = tmp_path / "arm.jsonl"
        write_episodes(generate_demos(ArmEnv(), 2, seed=0), path)
        with pytest.raises(ValueError):
            evaluate(RunConfig(dataset=str(path)), [0])
        with pytest.raises(FileNotFoundError):
            evaluate(RunConfig(dataset=str(tmp_path / "missing.jsonl")), [0])


class TestSuite:
    def test_baseline_delta_and_identical_configs(self):
        base = RunConfig(config_id="a", episodes=20, corruption=NOISY)
        report = run_suite([base, replace(base, config_id="b")])
        a, b = report.rows
        assert a["delta_success"] == 0.0
        assert a["success_rate"] == b["success_rate"] and a["jitter"] == b["jitter"]

    def test_deterministic_except_latency(self, tmp_path):
        grid = [RunConfig(config_id="x", episodes=15, corruption=NOISY), RunConfig(config_id="y", episodes=15, ensemble_n=1, corruption=NOISY)]
        r1 = run_suite(grid, out_dir=tmp_path / "one")
        r2 = run_suite(grid, out_dir=tmp_path / "two")
        assert strip_latency(r1.rows) == strip_latency(r2.rows)
        assert r1.episode_seeds == r2.episode_seeds
        header = (tmp_path / "one" / "report.csv").read_text().splitlines()[0]
        assert header.split(",") == CSV_COLUMNS
        data = json.loads((tmp_path / "one" / "report.json").read_text())
        assert data["baseline"] == "x" and len(data["rows"]) == 2

    def test_duplicate_ids(self):
        with pytest.raises(ValueError):
            run_suite([RunConfig(), RunConfig()])

    def test_resolution_axis_wide_bounds(self):
        # wide bounds make the coarse grid step (10/250 = 0.04) comparable to the 0.02 success radius
        base = RunConfig(policy="oracle", bounds=[[-5, 5], [-5, 5]], episodes=60)
        grid = [replace(base, config_id=f"B{b}", resolution=b) for b in (250, 1000, 4000)]
        report = run_suite(grid)
        s = {r["config_id"]: r["success_rate"] for r in report.rows}
        assert s["B250"] <= s["B1000"]
        assert abs(s["B1000"] - s["B4000"]) <= 0.05


class TestAblation:
    def test_grid_shape(self):
        grid = ablation_grid(RunConfig())
        assert [g.config_id for g in grid] == [
            "row0_baseline", "row1_no_ensemble", "row2_no_mask", "row3_res4000", "row4_res250", "row5_untiled",
        ]
        assert grid[1].ensemble_n == 1 and grid[2].mask_p == 0.0 and not grid[5].tiled
        assert grid[0].mask_p == 0.3

    @pytest.mark.parametrize("res", [(250, 1000), (250, 250, 1000), (1, 10, 100)])
    def test_bad_axis(self, res):
        with pytest.raises(ValueError):
            ablation_grid(RunConfig(), resolutions=res)

    def test_needs_ensembling_baseline(self):
        with pytest.raises(ValueError):
            ablation_grid(RunConfig(ensemble_n=1))

    def test_direction_check(self):
        report = run_suite(ablation_grid(RunConfig(episodes=20, corruption=NOISY))[:2])
        assert check_ensemble_direction(report, "row0_baseline", "row1_no_ensemble") == []
        assert check_ensemble_direction(report, "row1_no_ensemble", "row0_baseline") != []
