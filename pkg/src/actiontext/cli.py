"""Command-line entry point.

Exit codes: 0 success, 1 a checked property or threshold failed, 2 bad usage
or unreadable input files. ``eval`` and ``ablate`` take an optional TOML or
JSON config file whose keys are :class:`~actiontext.harness.RunConfig` fields;
explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

log = logging.getLogger("actiontext")


class UsageError(Exception):
    pass


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(p.read_text())
    return json.loads(p.read_text())


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _probability(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {v}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_codec(path: str):
    from .codec import CodecConfig

    p = Path(path)
    if not p.is_file():
        raise UsageError(f"bounds file not found: {p}")
    try:
        return CodecConfig.load(p)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid bounds file {p}: {exc}") from None


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_demos(args) -> int:
    from .data import write_episodes
    from .simenv import generate_demos, make_env

    episodes = generate_demos(make_env(args.env), args.count, args.seed)
    out = Path(args.out or f"demos_{args.env}_seed{args.seed}.jsonl")
    write_episodes(episodes, out)
    lengths = [len(ep) for ep in episodes]
    print(f"wrote {len(episodes)} {args.env} episodes to {out} (steps: mean {np.mean(lengths):.1f}, max {max(lengths)})")
    return 0


def cmd_fit_bounds(args) -> int:
    from .codec import CodecConfig, fit_bounds
    from .data import read_episodes

    if not Path(args.demos).is_file():
        raise UsageError(f"dataset file not found: {args.demos}")
    episodes = read_episodes(args.demos)
    bounds = fit_bounds([ep.actions for ep in episodes], args.padding)
    codec = CodecConfig(args.horizon, len(bounds), args.resolution, tuple(bounds))
    codec.save(args.out)
    print(f"wrote bounds for {codec.dims} dims (H={codec.horizon}, B={codec.resolution}) to {args.out}")
    return 0


def cmd_export_samples(args) -> int:
    from .augmentation import MaskConfig, TrainingSample, export_samples_jsonl, make_training_samples
    from .data import read_episodes
    from .prompting import save_png
    from .simenv import make_env, replay_states

    if not Path(args.demos).is_file():
        raise UsageError(f"dataset file not found: {args.demos}")
    codec = _load_codec(args.bounds_file)
    episodes = read_episodes(args.demos)
    image_dir = Path(args.image_dir) if args.image_dir else None
    if image_dir:
        image_dir.mkdir(parents=True, exist_ok=True)

    samples: list[TrainingSample] = []
    skipped = 0
    for i, ep in enumerate(episodes):
        if len(ep) < codec.horizon:
            skipped += 1
            continue
        mask = MaskConfig(args.mask_p, args.mask_char, seed=int(np.random.SeedSequence([args.seed, i]).generate_state(1)[0]))
        ep_samples = make_training_samples(ep, codec, mask)
        if image_dir:
            env = make_env(ep.env)
            states = replay_states(env, ep)
            for s in ep_samples:
                paths = []
                for v, im in enumerate(env.render(states[s.start])):
                    path = image_dir / f"ep{i:04d}_t{s.start:03d}_view{v}.png"
                    save_png(im, path)
                    paths.append(str(path))
                s.image_paths = paths
        samples.extend(ep_samples)
    n = export_samples_jsonl(samples, args.out)
    print(f"wrote {n} samples from {len(episodes) - skipped} episodes to {args.out} (skipped {skipped} shorter than H)")
    return 0


def _run_config(args, base: dict):
    from .harness import RunConfig
    from .policy import CorruptionConfig

    data = dict(base)
    data.pop("ablation", None)
    flag_map = {
        "env": args.env,
        "policy": args.policy,
        "episodes": args.episodes,
        "seed": args.seed,
        "horizon": args.horizon,
        "resolution": args.resolution,
        "ensemble_n": args.ensemble_n,
        "demos": args.demo_count,
        "demo_seed": args.demo_seed,
        "dataset": args.demos,
        "mask_p": args.mask_p,
    }
    data.update({k: v for k, v in flag_map.items() if v is not None})
    corruption = dict(data.get("corruption") or {})
    for key, value in (("drop_token_prob", args.drop_p), ("perturb_digit_prob", args.perturb_p), ("garbage_prob", args.garbage_p)):
        if value is not None:
            corruption[key] = value
    data["corruption"] = CorruptionConfig(**corruption)
    if args.bounds_file:
        data["bounds"] = [list(b) for b in _load_codec(args.bounds_file).bounds]
    if data.get("dataset") and not Path(data["dataset"]).is_file():
        raise UsageError(f"dataset file not found: {data['dataset']}")
    try:
        return RunConfig.from_dict(data)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def cmd_eval(args) -> int:
    from .harness import run_suite

    cfg = _run_config(args, _load_config_file(args.config))
    report = run_suite([cfg], out_dir=args.out)
    row = report.rows[0]
    print(
        f"{row['config_id']}: success {row['success_rate']:.3f} over {row['episodes']} episodes, "
        f"jitter {row['jitter']:.4g}, parse failures {row['parse_fail_rate']:.3%}, clamps {row['clamp_rate']:.3%}, "
        f"latency {row['latency_ms']:.3f} ms"
    )
    print(f"reports in {args.out}")
    if args.min_success is not None and row["success_rate"] < args.min_success:
        print(f"FAIL: success rate {row['success_rate']:.3f} below required {args.min_success}")
        return 1
    return 0


def cmd_ablate(args) -> int:
    from .harness import DEFAULT_RESOLUTIONS, ablation_grid, check_ensemble_direction, run_suite

    file_cfg = _load_config_file(args.config)
    axes = file_cfg.get("ablation", {})
    resolutions = args.resolutions or axes.get("resolutions", list(DEFAULT_RESOLUTIONS))
    mask_p = args.mask_p if args.mask_p is not None else axes.get("mask_p", 0.3)
    base = _run_config(args, file_cfg)
    try:
        grid = ablation_grid(base, resolutions, mask_p)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = run_suite(grid, out_dir=args.out)
    print(f"{'config':<22}{'success':>9}{'delta':>9}{'jitter':>12}{'parse_fail':>12}")
    for r in report.rows:
        print(f"{r['config_id']:<22}{r['success_rate']:>9.3f}{r['delta_success']:>+9.3f}{r['jitter']:>12.4g}{r['parse_fail_rate']:>12.3%}")
    print(f"reports in {args.out}")
    if args.check_directions:
        problems = check_ensemble_direction(report, grid[0].config_id, grid[1].config_id)
        for p in problems:
            print(f"FAIL: {p}")
        if problems:
            return 1
    return 0


def cmd_serve(args) -> int:
    import os

    from .codec import CodecConfig
    from .policy import API_KEY_ENV, RemoteEndpointConfig
    from .service.server import serve

    if args.bounds_file:
        codec = _load_codec(args.bounds_file)
        overrides = {"horizon": args.horizon, "resolution": args.resolution}
        codec = CodecConfig(
            overrides["horizon"] or codec.horizon, codec.dims, overrides["resolution"] or codec.resolution, codec.bounds
        )
        if args.dims is not None and args.dims != codec.dims:
            raise UsageError(f"--dims {args.dims} disagrees with {codec.dims} bounds in {args.bounds_file}")
    else:
        dims = args.dims or 7
        codec = CodecConfig(args.horizon or 8, dims, args.resolution or 1000, tuple((-1.0, 1.0) for _ in range(dims)))
    if not 1 <= args.ensemble_n <= codec.horizon:
        raise UsageError(f"--ensemble-n must be in [1, {codec.horizon}]")
    endpoint = RemoteEndpointConfig(
        base_url=args.backend_url,
        model=args.model,
        timeout_ms=args.timeout_ms,
        max_tokens=args.max_tokens,
        temperature=args.temperature,
        api_key=args.api_key if args.api_key is not None else os.environ.get(API_KEY_ENV),
    )
    try:
        serve(args.bind, endpoint, codec, args.ensemble_n, args.layout, health_check=not args.skip_health_check)
    except ConnectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return 0


def cmd_stub_vlm(args) -> int:
    import uvicorn

    from .service.server import parse_bind
    from .service.stub_vlm import create_stub_app

    script = list(args.text or [])
    if args.script:
        p = Path(args.script)
        if not p.is_file():
            raise UsageError(f"script file not found: {p}")
        if p.suffix == ".json":
            script.extend(json.loads(p.read_text()))
        else:
            script.extend(line.rstrip("\n") for line in p.read_text().splitlines())
    if not script:
        raise UsageError("give at least one --text or a --script file")
    host, port = parse_bind(args.bind)
    uvicorn.run(create_stub_app(script, args.delay_ms), host=host, port=port, log_level="info")
    return 0


def cmd_codec_check(args) -> int:
    from .codec import CodecConfig, dequantize, quantize

    if args.bounds_file:
        codec = _load_codec(args.bounds_file)
        if args.resolution is not None:
            codec = codec.with_resolution(args.resolution)
    else:
        try:
            codec = CodecConfig(1, args.dims, args.resolution or 1000, tuple((-1.0, 1.0) for _ in range(args.dims)))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    rng = np.random.default_rng(args.seed)
    lo, hi = codec.lo, codec.hi
    bound = codec.max_roundtrip_error()
    H = codec.horizon

    x = rng.uniform(lo, hi, size=(args.trials, H, codec.dims))
    x[0, 0], x[-1, -1] = lo, hi
    flat = x.reshape(-1, codec.dims)
    # quantize works per chunk; reshape the whole batch into one tall chunk
    tall = replace(codec, horizon=len(flat)) if len(flat) != H else codec
    q = quantize(flat, tall)
    err = np.abs(dequantize(q, tall) - flat).max(axis=0)
    roundtrip_ok = bool(np.all(err <= bound))

    grid = np.linspace(lo, hi, 20001)
    gq = quantize(grid, replace(codec, horizon=len(grid))).values
    monotone_ok = bool(np.all(np.diff(gq, axis=0) >= 0))
    range_ok = bool(gq.min() >= 0 and gq.max() <= codec.resolution)

    for d in range(codec.dims):
        print(f"dim {d}: bounds [{lo[d]:.6g}, {hi[d]:.6g}]  max error {err[d]:.3e}  allowed {bound[d]:.3e}")
    print(f"round trip: {'pass' if roundtrip_ok else 'FAIL'}; monotone: {'pass' if monotone_ok else 'FAIL'}; range: {'pass' if range_ok else 'FAIL'}")
    return 0 if roundtrip_ok and monotone_ok and range_ok else 1


def cmd_mask_preview(args) -> int:
    from .augmentation import MaskConfig, mask_action_text

    try:
        cfg = MaskConfig(args.p, args.mask_char, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    texts = args.text or []
    if args.samples:
        if not Path(args.samples).is_file():
            raise UsageError(f"samples file not found: {args.samples}")
        with open(args.samples) as f:
            texts += [json.loads(line)["target_text"] for line in f if line.strip()][: args.limit]
    if not texts:
        raise UsageError("give --text or --samples")
    for i, text in enumerate(texts):
        masked = mask_action_text(text, replace(cfg, seed=int(np.random.SeedSequence([args.seed, i]).generate_state(1)[0])))
        print(text)
        print(masked)
    return 0


# --------------------------------------------------------------------------
# parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON file with RunConfig keys")
    p.add_argument("--env", choices=["pointmass", "arm"])
    p.add_argument("--policy", choices=["oracle", "nn"])
    p.add_argument("--episodes", type=_positive_int)
    p.add_argument("--seed", type=int, help="evaluation seed shared by every config (paired episodes)")
    p.add_argument("--horizon", type=_positive_int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--ensemble-n", type=_positive_int)
    p.add_argument("--demos", help="JSONL demonstrations from gen-demos (generated in memory when omitted)")
    p.add_argument("--demo-count", type=_positive_int)
    p.add_argument("--demo-seed", type=int)
    p.add_argument("--bounds-file")
    p.add_argument("--mask-p", type=_probability)
    p.add_argument("--perturb-p", type=_probability, help="per-digit perturbation probability for the nn policy")
    p.add_argument("--drop-p", type=_probability, help="per-token drop probability for the nn policy")
    p.add_argument("--garbage-p", type=_probability, help="per-step probability of non-numeric output")
    p.add_argument("--out", default="reports")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="actiontext", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="scripted demonstrations as JSONL")
    p.add_argument("--env", choices=["pointmass", "arm"], default="pointmass")
    p.add_argument("--count", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("fit-bounds", help="per-dimension action bounds from a dataset")
    p.add_argument("--demos", required=True)
    p.add_argument("--horizon", type=_positive_int, default=8)
    p.add_argument("--resolution", type=int, default=1000)
    p.add_argument("--padding", type=float, default=0.0)
    p.add_argument("--out", default="bounds.json")
    p.set_defaults(func=cmd_fit_bounds)

    p = sub.add_parser("export-samples", help="training pairs with masked action text as JSONL")
    p.add_argument("--demos", required=True)
    p.add_argument("--bounds-file", required=True)
    p.add_argument("--mask-p", type=_probability, default=0.3)
    p.add_argument("--mask-char", default="#")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-dir", help="also render PNG observations here")
    p.add_argument("--out", default="samples.jsonl")
    p.set_defaults(func=cmd_export_samples)

    p = sub.add_parser("eval", help="closed-loop evaluation of one config")
    _add_run_flags(p)
    p.add_argument("--min-success", type=float, help="exit 1 when the success rate is below this")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="six-row ablation grid")
    _add_run_flags(p)
    p.add_argument("--resolutions", type=_int_list, help="three resolutions, e.g. 250,1000,4000")
    p.add_argument("--check-directions", action="store_true", help="exit 1 if ensembling does not help")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", help="run the action gateway")
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--backend-url", required=True, help="chat-completion base URL, e.g. http://host:port/v1")
    p.add_argument("--model", default="default")
    p.add_argument("--horizon", type=_positive_int)
    p.add_argument("--dims", type=_positive_int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--bounds-file")
    p.add_argument("--ensemble-n", type=_positive_int, default=1)
    p.add_argument("--timeout-ms", type=float, default=10_000)
    p.add_argument("--max-tokens", type=_positive_int, default=512)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--layout", choices=["separate", "tiled"], default="separate")
    p.add_argument("--api-key", help="overrides the ACTIONTEXT_API_KEY environment variable")
    p.add_argument("--skip-health-check", action="store_true")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("stub-vlm", help="scripted chat-completion server for tests")
    p.add_argument("--bind", default="127.0.0.1:8001")
    p.add_argument("--text", action="append", help="scripted reply; repeat for a sequence")
    p.add_argument("--script", help="file with one reply per line, or a JSON list")
    p.add_argument("--delay-ms", type=float, default=0.0)
    p.set_defaults(func=cmd_stub_vlm)

    p = sub.add_parser("codec-check", help="round-trip, monotonicity and range checks")
    p.add_argument("--bounds-file")
    p.add_argument("--dims", type=_positive_int, default=7)
    p.add_argument("-B", "--resolution", type=int)
    p.add_argument("--trials", type=_positive_int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_codec_check)

    p = sub.add_parser("mask-preview", help="show masked copies of action strings")
    p.add_argument("--text", action="append")
    p.add_argument("--samples", help="JSONL from export-samples")
    p.add_argument("--limit", type=_positive_int, default=5)
    p.add_argument("-p", type=_probability, default=0.3)
    p.add_argument("--mask-char", default="#")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mask_preview)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.exit(2, f"{parser.prog} {args.command}: error: {exc}\n")
    except FileNotFoundError as exc:
        parser.exit(2, f"{parser.prog} {args.command}: error: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
