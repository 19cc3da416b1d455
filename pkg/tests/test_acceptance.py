"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -v tests/test_acceptance.py -s`` or directly as
``python tests/test_acceptance.py``.  The desk-scale comparisons (7-9, 11)
train 40 agents in total and take the better part of an hour on one core.
Set ``PREFPOE_ACCEPTANCE_OUT`` to keep their artifacts.
"""

from __future__ import annotations

import json
import math
import os
import sys
import tempfile
import time
from functools import lru_cache
from importlib.resources import files
from pathlib import Path

import numpy as np
import pytest

from prefpoe import cli
from prefpoe import verify as V
from prefpoe.config import DEFAULT_SEEDS, load_config
from prefpoe.networks import load_checkpoint, save_checkpoint
from prefpoe.trainer import evaluate, evaluate_checkpoint, train

CONFIGS = files("prefpoe") / "configs"
OUT = Path(os.environ.get("PREFPOE_ACCEPTANCE_OUT") or tempfile.mkdtemp(prefix="prefpoe-acceptance-"))


RESULTS: list[str] = []  # echoed in the terminal summary by conftest.py


def report(num: int, title: str, passed: bool, detail: str) -> None:
    line = f"[criterion {num:2d}] {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)


def oracle(num, title, name, limit_s):
    t0 = time.perf_counter()
    rep = V.run_all(only=[name])[0]
    secs = time.perf_counter() - t0
    ok = rep.passed and secs < limit_s
    report(num, title, ok, f"{rep.cases} cases, max err {rep.max_abs_error:.2e} (tol {rep.tolerance:.0e}), "
           f"{secs:.2f}s (limit {limit_s}s) {rep.detail}")
    return ok


@lru_cache(maxsize=None)
def compare_run(env: str, modes: tuple[str, ...]):
    """Run the CLI compare once per (env, modes) and return its JSON output and wall time."""
    out = OUT / f"compare_{env}"
    t0 = time.perf_counter()
    code = cli.cmd_compare(str(CONFIGS / f"{env}.json"), list(DEFAULT_SEEDS), list(modes), str(out))
    secs = time.perf_counter() - t0
    assert code == 0
    return json.loads((out / "compare.json").read_text()), secs


def fused_means(data) -> str:
    """Mean of the fused-policy evaluation per mode (reported, not asserted)."""
    out = []
    for mode in data["summary"]["modes"]:
        vals = [r["eval_fused_policy"]["mean"] for r in data["records"] if r["mode"] == mode and not r["aborted"]]
        out.append(f"{mode} {np.mean(vals):.3g}")
    return "fused-mode eval (info): " + ", ".join(out)


def mode_mean(data, mode):
    vals = [r["final_return"] for r in data["records"] if r["mode"] == mode and not r["aborted"]]
    return float(np.mean(vals)) if len(vals) == len(DEFAULT_SEEDS) else math.nan, vals


# -- numerical properties ------------------------------------------------------------


def test_criterion_01_poe_variance_contraction():
    assert oracle(1, "fused variance positive, trace bound, entropy below main", "poe_variance_contraction", 1.0)


def test_criterion_02_gaussian_fusion_vs_integration():
    assert oracle(2, "closed-form Gaussian fusion vs grid integration", "gaussian_fusion_vs_grid_integration", 30.0)


def test_criterion_03_boltzmann_convergence():
    assert oracle(3, "preference loss minimiser equals softmax(beta1*A/alpha)", "preference_boltzmann_convergence", 60.0)


def test_criterion_04_gradients():
    assert oracle(4, "autodiff vs central differences (clip, value, pref, cons, total, network)",
                  "autodiff_vs_finite_differences", 120.0)


def test_criterion_05_gae():
    assert oracle(5, "recursive GAE vs direct sum", "gae_recursion_vs_direct_sum", 1.0)


def test_criterion_06_categorical_fusion():
    assert oracle(6, "logit-space fusion vs probability product", "categorical_fusion_equivalence", 1.0)


# -- desk-scale learning ---------------------------------------------------------------


def test_criterion_07_cartpole():
    data, secs = compare_run("cartpole", ("prefpoe", "ppo_baseline", "linear_fusion_ablation"))
    pref, pv = mode_mean(data, "prefpoe")
    base, bv = mode_mean(data, "ppo_baseline")
    ok = pref >= base and pref >= 300.0
    report(7, "CartPole 150k steps, 5 seeds", ok,
           f"PrefPoE {pref:.1f} {np.round(pv, 1).tolist()} vs PPO {base:.1f} {np.round(bv, 1).tolist()} "
           f"(need PrefPoE >= PPO and >= 300); compare wall time {secs:.0f}s for 3 modes; " + fused_means(data))
    assert ok


def test_criterion_08_frozenlake():
    data, secs = compare_run("frozenlake", ("prefpoe", "ppo_baseline"))
    pref, pv = mode_mean(data, "prefpoe")
    base, bv = mode_mean(data, "ppo_baseline")
    ok = pref >= base
    report(8, "FrozenLake 300k steps, 5 seeds", ok,
           f"success rate PrefPoE {pref:.3f} {np.round(pv, 2).tolist()} vs PPO {base:.3f} {np.round(bv, 2).tolist()}; "
           f"{secs:.0f}s (target 900s); " + fused_means(data))
    assert ok


def test_criterion_09_pointmass():
    data, secs = compare_run("pointmass", ("prefpoe", "ppo_baseline"))
    pref, pv = mode_mean(data, "prefpoe")
    base, bv = mode_mean(data, "ppo_baseline")
    entropy_ok = all(r["fused_entropy_le_main"] for r in data["records"] if r["mode"] == "prefpoe")
    ok = pref >= base and entropy_ok
    report(9, "PointMass 100k steps, 5 seeds", ok,
           f"PrefPoE {pref:.2f} {np.round(pv, 2).tolist()} vs PPO {base:.2f} {np.round(bv, 2).tolist()}; "
           f"fused entropy <= main at every update: {entropy_ok}; {secs:.0f}s (target 600s); " + fused_means(data))
    assert ok


# -- plumbing ------------------------------------------------------------------------------


def test_criterion_10_determinism_and_round_trip():
    cfg_path = str(CONFIGS / "cartpole.json")
    runs = [OUT / "det_a", OUT / "det_b"]
    codes = [cli.cmd_train(cfg_path, [], 42, str(r)) for r in runs]
    same_metrics = (runs[0] / "metrics.jsonl").read_bytes() == (runs[1] / "metrics.jsonl").read_bytes()

    config, _ = load_config(cfg_path)
    config = config.replace(seed=42)
    result = train(config)
    live = evaluate(result.net, config, 100, True, 7)
    ckpt = runs[0] / "final.ckpt.json"
    from_disk = evaluate_checkpoint(ckpt, 100, True, 7)
    net, cfg = load_checkpoint(ckpt)
    save_checkpoint(OUT / "resaved.ckpt.json", net, cfg)
    resaved = evaluate_checkpoint(OUT / "resaved.ckpt.json", 100, True, 7)
    same_params = np.array_equal(net.flat_parameters(), result.net.flat_parameters())
    ok = codes == [0, 0] and same_metrics and same_params and live == from_disk == resaved
    report(10, "byte-identical metrics and checkpoint round trip", ok,
           f"metrics identical: {same_metrics}; params identical: {same_params}; "
           f"eval live/ckpt/resaved means {live.mean:.2f}/{from_disk.mean:.2f}/{resaved.mean:.2f}")
    assert ok


def test_criterion_11_ablation_harness():
    data, secs = compare_run("cartpole", ("prefpoe", "ppo_baseline", "linear_fusion_ablation"))
    modes = data["summary"]["modes"]
    cells = {(r["mode"], r["seed"]) for r in data["records"]}
    expected = {(m, s) for m in ("prefpoe", "ppo_baseline", "linear_fusion_ablation") for s in DEFAULT_SEEDS}
    ok = cells == expected and all(modes[m]["mean"] is not None for m in modes) and not data["summary"]["partial"]
    summary = ", ".join(
        f"{m} {s['mean']:.1f}+-{s['std']:.1f} (CV {s['cv_percent'] or 0.0:.1f}%)" for m, s in modes.items() if s["mean"] is not None
    )
    report(11, "three-mode compare on CartPole", ok, f"{len(cells)} cells; {summary}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
