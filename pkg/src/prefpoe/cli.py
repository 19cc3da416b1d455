"""``prefpoe`` command line: train, eval, compare and verify."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .config import DEFAULT_SEEDS, MODES, ConfigError, TrainConfig, load_config
from .trainer import TrainingAborted, evaluate, evaluate_checkpoint, train

log = logging.getLogger("prefpoe")

EVAL_SEED_OFFSET = 10_000


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _finite(obj):
    """Replace non-finite floats by ``None`` so the output stays strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(_finite(payload), indent=2, sort_keys=True) + "\n")


def _fail(msg: str, code: int = 2) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


# -- train ------------------------------------------------------------------------


def cmd_train(config_path: str, overrides: list[str] | None = None, seed: int | None = None, out: str = "runs/train") -> int:
    try:
        config, raw = load_config(config_path, overrides)
        if seed is not None:
            config = config.replace(seed=seed)
            config.validate()
    except (OSError, ConfigError) as exc:
        return _fail(str(exc))

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path, ckpt_path = out_dir / "metrics.jsonl", out_dir / "final.ckpt.json"
    manifest = {
        "version": __version__,
        "config_path": str(config_path),
        "config_snapshot": raw,
        "overrides": list(overrides or []),
        "effective_config": config.to_dict(),
        "seeds": [config.seed],
        "out_dir": str(out_dir),
        "runs": {str(config.seed): {"metrics": str(metrics_path), "checkpoint": str(ckpt_path)}},
        "started": _now(),
    }
    _write_json(out_dir / "manifest.json", manifest)
    status = 0
    try:
        result = train(config, metrics_path=metrics_path, checkpoint_path=ckpt_path)
        last = result.metrics[-1]["episodic_return"] if result.metrics else {}
        print(f"trained {config.env} mode={config.mode} seed={config.seed}: last mean return {last.get('mean')}")
    except TrainingAborted as exc:
        manifest["aborted"] = str(exc)
        status = _fail(f"training aborted: {exc}", 3)
    manifest["finished"] = _now()
    _write_json(out_dir / "manifest.json", manifest)
    return status


# -- eval -------------------------------------------------------------------------


def cmd_eval(
    checkpoint: str, episodes: int = 100, deterministic: bool = True, seed: int = 0, policy: str | None = None, out: str | None = None
) -> int:
    if episodes < 1:
        return _fail("--episodes must be >= 1")
    try:
        stats = evaluate_checkpoint(checkpoint, episodes, deterministic, seed, policy)
    except (OSError, ValueError, ConfigError) as exc:
        return _fail(str(exc))
    payload = stats.to_dict(include_returns=False)
    text = json.dumps(_finite(payload), sort_keys=True)
    print(text)
    if out:
        Path(out).write_text(text + "\n")
    return 0


# -- compare ----------------------------------------------------------------------


def _run_cell(config_dict: dict[str, Any], out_dir: str | None) -> dict[str, Any]:
    """Train and evaluate one (mode, seed) cell; picklable for worker processes."""
    config = TrainConfig.from_dict(config_dict)
    tag = f"{config.mode}_seed{config.seed}"
    metrics_path = ckpt_path = None
    if out_dir:
        metrics_path = Path(out_dir) / f"{tag}.metrics.jsonl"
        ckpt_path = Path(out_dir) / f"{tag}.ckpt.json"
    record: dict[str, Any] = {"mode": config.mode, "seed": config.seed, "env": config.env}
    t0 = time.perf_counter()
    try:
        result = train(config, metrics_path, ckpt_path)
    except TrainingAborted as exc:
        record.update(aborted=True, reason=str(exc), final_return=None)
        return record
    eval_seed = EVAL_SEED_OFFSET + config.seed
    stats = evaluate(result.net, config, config.eval_episodes, True, eval_seed)
    # the other policy's mode on the same episodes, for reference only
    other = "fused" if config.eval_policy == "main" else "main"
    alt = evaluate(result.net, config, config.eval_episodes, True, eval_seed, policy=other)
    entropy_ok = all(m["entropies"]["fused"] <= m["entropies"]["main"] + 1e-12 for m in result.metrics)
    record.update(
        aborted=False,
        final_return=stats.mean,
        eval=stats.to_dict(include_returns=False),
        eval_policy=config.eval_policy,
        **{f"eval_{other}_policy": alt.to_dict(include_returns=False)},
        fused_entropy_le_main=entropy_ok,
        seconds=round(time.perf_counter() - t0, 2),
        metrics=str(metrics_path) if metrics_path else None,
        checkpoint=str(ckpt_path) if ckpt_path else None,
    )
    return record


def summarize(records: list[dict[str, Any]], modes: list[str], baseline: str = "ppo_baseline") -> dict[str, Any]:
    """Per-mode mean/std/CV of final returns plus improvement over ``baseline``."""
    per_mode: dict[str, Any] = {}
    for mode in modes:
        cell = [r for r in records if r["mode"] == mode]
        vals = np.array([r["final_return"] for r in cell if not r.get("aborted")], dtype=np.float64)
        mean = float(vals.mean()) if vals.size else None
        std = float(vals.std()) if vals.size else None
        cv = None
        if vals.size and mean != 0:
            cv = std / abs(mean) * 100.0
        per_mode[mode] = {
            "mean": mean,
            "std": std,
            "cv_percent": cv,
            "seeds": [r["seed"] for r in cell],
            "completed": int(vals.size),
            "aborted": len(cell) - int(vals.size),
        }
    base = per_mode.get(baseline, {}).get("mean")
    for mode, s in per_mode.items():
        if mode == baseline or base is None or s["mean"] is None or base == 0:
            s["improvement_percent"] = None
        else:
            s["improvement_percent"] = (s["mean"] - base) / abs(base) * 100.0
    return {
        "modes": per_mode,
        "baseline": baseline,
        "partial": any(r.get("aborted") for r in records),
    }


def compare(config: TrainConfig, seeds: list[int], modes: list[str], out_dir: str | None = None, workers: int = 1) -> dict[str, Any]:
    cells = [config.replace(mode=m, seed=s).to_dict() for m in modes for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell, cells, [out_dir] * len(cells)))
    else:
        records = [_run_cell(c, out_dir) for c in cells]
    return {"records": records, "summary": summarize(records, modes)}


def format_summary(summary: dict[str, Any]) -> str:
    lines = [f"{'mode':24s} {'mean':>10s} {'std':>10s} {'CV%':>8s} {'vs base':>9s}  runs"]
    for mode, s in summary["modes"].items():

        def f(x, spec):
            return format(x, spec) if x is not None else "-"

        lines.append(
            f"{mode:24s} {f(s['mean'], '10.3f'):>10s} {f(s['std'], '10.3f'):>10s} {f(s['cv_percent'], '8.1f'):>8s} "
            f"{f(s['improvement_percent'], '+8.1f'):>9s}  {s['completed']}/{len(s['seeds'])}"
        )
    if summary["partial"]:
        lines.append("WARNING: partial report, some runs aborted")
    return "\n".join(lines)


def cmd_compare(
    config_path: str,
    seeds: list[int] | None = None,
    modes: list[str] | None = None,
    out: str = "runs/compare",
    overrides: list[str] | None = None,
) -> int:
    seeds = list(seeds if seeds is not None else DEFAULT_SEEDS)
    modes = list(modes or ["prefpoe", "ppo_baseline"])
    if len(seeds) < 2:
        return _fail("compare needs at least 2 seeds")
    bad = [m for m in modes if m not in MODES]
    if bad:
        return _fail(f"unknown mode(s) {bad}; choose from {MODES}")
    try:
        config, raw = load_config(config_path, overrides)
    except (OSError, ConfigError) as exc:
        return _fail(str(exc))
    workers = max(1, int(os.environ.get("PREFPOE_THREADS", "1")))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _now()
    result = compare(config, seeds, modes, str(out_dir), workers)
    result["manifest"] = {
        "version": __version__,
        "config_path": str(config_path),
        "config_snapshot": raw,
        "overrides": list(overrides or []),
        "seeds": seeds,
        "modes": modes,
        "eval_seed_offset": EVAL_SEED_OFFSET,
        "started": started,
        "finished": _now(),
    }
    _write_json(out_dir / "compare.json", result)
    print(format_summary(result["summary"]))
    return 0


# -- verify -----------------------------------------------------------------------


def cmd_verify(out: str | None = None, inject_fault: str | None = None, seed: int = 0) -> int:
    from .verify import format_table, run_all, write_jsonl

    reports = run_all(seed=seed, fault=inject_fault)
    print(format_table(reports))
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        write_jsonl(reports, out)
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefpoe", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-update progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/train")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stochastic", action="store_true", help="sample the fused policy instead of playing the mode")
    p.add_argument("--policy", choices=["main", "fused"])
    p.add_argument("--out")

    p = sub.add_parser("compare", help="train several modes over several seeds and summarise")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
    p.add_argument("--modes", nargs="+", default=["prefpoe", "ppo_baseline"], choices=MODES)
    p.add_argument("--out", default="runs/compare")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("verify", help="run the numerical oracle suite")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", help=argparse.SUPPRESS)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "train":
        return cmd_train(args.config, args.overrides, args.seed, args.out)
    if args.command == "eval":
        return cmd_eval(args.checkpoint, args.episodes, not args.stochastic, args.seed, args.policy, args.out)
    if args.command == "compare":
        return cmd_compare(args.config, args.seeds, args.modes, args.out, args.overrides)
    return cmd_verify(args.out, args.inject_fault, args.seed)


if __name__ == "__main__":
    sys.exit(main())
