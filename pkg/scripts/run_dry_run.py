#!/usr/bin/env python3
"""Offline end-to-end dry run of the whole toolkit (no network, no GPU).

Stages, all deterministic for a fixed --seed:

  1. synthesize a smooth-vs-textured corpus (see make_synthetic_dataset.py)
  2. train an FFTTool expert on the training split, report train accuracy
  3. score the manifest images with that expert -> AUC / EER / HTER
  4. run the annotation pipeline against a scripted mock endpoint,
     including a few deliberate fail-then-pass and hopeless samples
  5. score the accepted trajectories with both reward modes and compute
     group-relative advantages over the dual-tool totals

Prints one JSON summary per stage and a final roll-up.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))
from make_synthetic_dataset import build_corpus  # noqa: E402

from fastools.cli import main as fastools_cli  # noqa: E402
from fastools.expert import TrainConfig, predict, train_expert  # noqa: E402
from fastools.imaging import load_image  # noqa: E402
from fastools.metrics import ScoredSample, eer_threshold, far_frr, auc  # noqa: E402
from fastools.annotator import read_manifest  # noqa: E402
from fastools.reward import group_advantages  # noqa: E402
from fastools.trajectory import Label  # noqa: E402
from fastools.vistools import ToolId  # noqa: E402


def _fast(cls: str) -> str:
    return f"<{cls}><reason>glossy highlights and flat depth cues</reason>"

def _tool(name: str, args: dict | None = None) -> str:
    call = json.dumps({"name": name, "arguments": args or {}})
    return f"<think>inspect the {name} render</think><tool_call>{call}</tool_call>"

def _answer(cls: str) -> str:
    return f"<think>the evidence is consistent</think><answer><{cls}></answer>"


def _script_book(samples, rng: np.random.Generator) -> dict:
    """Per-sample scripts: mostly correct, some fail-then-pass, a few hopeless."""
    tools = ["FFTTool", "LBPTool", "EdgeDetectionTool", "WaveletTransformTool", "HOGTool"]
    book: dict[str, dict[str, list[str]]] = {}
    for i, sample in enumerate(samples):
        cls = sample.label.value
        wrong_cls = "Real" if cls == "Spoof" else "Spoof"
        good = [
            _fast(cls),
            _tool(tools[i % len(tools)]),
            _tool("ZoomInTool", {"bbox": [0.25, 0.25, 0.75, 0.75]}),
            _answer(cls),
        ]
        wrong = [_fast(cls), _answer(wrong_cls)]
        if i % 10 == 7:
            book[sample.id] = {"1": wrong, "2": good}   # recovered on retry
        elif i % 25 == 13:
            book[sample.id] = {"1": wrong, "2": wrong}  # hopeless -> badcase
        else:
            book[sample.id] = {"1": good}
    return {"samples": book}


def _cli(argv: list[str]) -> tuple[int, str]:
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = fastools_cli(argv)
    return code, buf.getvalue()


def _stage(name: str, payload: dict) -> None:
    print(f"--- {name} ---")
    print(json.dumps(payload, indent=2))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="working directory")
    parser.add_argument("--n", type=int, default=50, help="manifest size (default 50)")
    parser.add_argument("--seed", type=int, default=20240817)
    args = parser.parse_args(argv)

    t0 = time.perf_counter()
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)

    # 1. corpus ---------------------------------------------------------
    corpus = build_corpus(out / "data", args.n, size=64, seed=args.seed)
    _stage("corpus", corpus)
    samples = read_manifest(corpus["manifest"])

    # 2. expert ---------------------------------------------------------
    expert_dir = Path(corpus["expert_dir"])
    examples = []
    for split, label in (("real", 0), ("spoof", 1)):
        for path in sorted((expert_dir / split).iterdir()):
            examples.append((load_image(path), label))
    result = train_expert(ToolId.FFT, examples, TrainConfig(seed=args.seed))
    _stage("expert", {
        "examples": len(examples),
        "train_accuracy": result.train_accuracy,
        "initial_loss": result.loss_history[0],
        "final_loss": result.loss_history[-1],
    })

    # 3. expert-as-detector metrics --------------------------------------
    # Real-face score convention: high = genuine, so invert p(spoof trace).
    scored = [
        ScoredSample(id=s.id, score=1.0 - predict(result.model, load_image(s.image)),
                     label=s.label)
        for s in samples
    ]
    threshold, eer = eer_threshold(scored)
    far, frr = far_frr(scored, threshold)
    _stage("metrics", {
        "auc": auc(scored), "eer": eer, "threshold": threshold,
        "far": far, "frr": frr,
    })

    # 4. scripted annotation run -----------------------------------------
    script_path = out / "scripts.json"
    script_path.write_text(json.dumps(_script_book(samples, rng)), encoding="utf-8")
    ann_dir = out / "annotation"
    code, stdout = _cli([
        "annotate", "run",
        "--manifest", corpus["manifest"],
        "--out", str(ann_dir),
        "--mock-script", str(script_path),
    ])
    if code != 0:
        raise SystemExit(f"annotate run failed with exit code {code}")
    stats = json.loads(stdout)
    _stage("annotation", stats)

    # 5. rewards + advantages --------------------------------------------
    reward_summary = {}
    for mode in ("dt", "st"):
        scored_path = out / f"rewards_{mode}.jsonl"
        code, _ = _cli([
            "reward", "score",
            "--traj", str(ann_dir / "accepted.jsonl"),
            "--mode", mode,
            "--out", str(scored_path),
        ])
        if code != 0:
            raise SystemExit(f"reward score --mode {mode} failed with exit code {code}")
        rewards = [json.loads(l)["reward"] for l in scored_path.read_text().splitlines()]
        reward_summary[mode] = {
            "trajectories": len(rewards),
            "mean": float(np.mean(rewards)),
            "min": float(np.min(rewards)),
            "max": float(np.max(rewards)),
        }

    dt_rewards = [json.loads(l)["reward"]
                  for l in (out / "rewards_dt.jsonl").read_text().splitlines()]
    group = 4
    usable = len(dt_rewards) - len(dt_rewards) % group
    advantages = [
        group_advantages(np.asarray(dt_rewards[i:i + group]))
        for i in range(0, usable, group)
    ]
    degenerate = sum(1 for a in advantages if not a.any())
    reward_summary["advantages"] = {
        "group_size": group,
        "groups": len(advantages),
        "degenerate_groups": degenerate,
    }
    _stage("rewards", reward_summary)

    _stage("summary", {
        "elapsed_seconds": round(time.perf_counter() - t0, 2),
        "accepted": stats["accepted"],
        "badcase": stats["badcase"],
        "reannotated": stats["reannotated"],
        "tool_usage": stats["tool_usage"],
    })
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
