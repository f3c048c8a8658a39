"""Command-line interface: one binary, eight subcommands.

    fastools tool apply        run one visual tool on an image file
    fastools annotate run      annotate a manifest (live endpoint or mock)
    fastools annotate verify   re-run verification over a trajectory file
    fastools reward score      score trajectories (DT or ST mode)
    fastools reward advantages group-normalize reward files
    fastools expert train      fit an expert model on labeled tool renders
    fastools expert predict    score one image with an expert model
    fastools metrics eval      FAR/FRR/HTER/AUC (+ EER) over a score file

Exit codes: 0 success, 1 domain error (message on stderr), 2 usage error.
Data goes to stdout or ``--out``; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .annotator import (
    AnnotateConfig,
    PipelineConfig,
    Sample,
    VerificationRules,
    default_synonyms,
    load_synonyms,
    read_manifest,
    run_pipeline,
    verify,
)
from .config import AppConfig, load_app_config
from .errors import ToolkitError
from .expert import (
    TrainConfig,
    expert_to_json,
    guidance_text,
    load_expert,
    predict,
    save_expert,
    train_expert,
    zero_expert,
)
from .imaging import encode_png, load_image
from .metrics import auc, eer_threshold, far_frr, read_scores
from .mllm_client import HttpChatClient, ScriptBook
from .reward import RewardConfig, group_advantages, st_grpo_reward, total_reward
from .trajectory import Label, read_trajectories
from .vistools import ANALYSIS_TOOLS, TOOLS_BY_NAME, dispatch

log = logging.getLogger("fastools")


def _open_out(path: str | None):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


def _emit_lines(lines, out_path: str | None) -> None:
    fh, owned = _open_out(out_path)
    try:
        for line in lines:
            fh.write(line + "\n")
    finally:
        if owned:
            fh.close()


# --------------------------------------------------------------------------
# Subcommand implementations


def _cmd_tool_apply(args) -> int:
    tool = TOOLS_BY_NAME[args.tool]
    call_args: dict = {}
    if args.bbox is not None:
        coords = [float(v) for v in args.bbox.split(",")]
        if len(coords) != 4:
            raise ToolkitError(f"--bbox needs 4 comma-separated numbers, got {args.bbox!r}")
        call_args["bbox"] = coords
    img = load_image(getattr(args, "in"))
    out = dispatch(tool, call_args, img)
    encode_png(out, args.out)
    log.info("wrote %s (%dx%d)", args.out, out.width, out.height)
    return 0


def _load_experts(experts_dir: str | None):
    experts = {}
    for tool in ANALYSIS_TOOLS:
        path = Path(experts_dir or "") / f"{tool.value}.json" if experts_dir else None
        if path is not None and path.exists():
            experts[tool] = load_expert(path)
        else:
            experts[tool] = zero_expert(tool)
            if experts_dir:
                log.warning("no model for %s under %s; using the zero expert", tool.value, experts_dir)
    if not experts_dir:
        log.warning("no --experts directory; all guidance uses uninformative 50%% experts")
    return experts


def _cmd_annotate_run(args) -> int:
    cfg: AppConfig = load_app_config(args.config)
    l_max = args.l_max if args.l_max is not None else cfg.annotate.l_max
    workers = args.workers if args.workers is not None else cfg.annotate.workers
    manual_gate = args.manual_gate or cfg.annotate.manual_gate
    synonyms_path = args.hint_synonyms or cfg.annotate.hint_synonyms
    synonyms = load_synonyms(synonyms_path) if synonyms_path else default_synonyms()

    if args.mock_script:
        try:
            with open(args.mock_script, "r", encoding="utf-8") as fh:
                book = ScriptBook.from_obj(json.load(fh))
        except OSError as exc:
            raise ToolkitError(f"cannot read {args.mock_script}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ToolkitError(f"{args.mock_script}: not valid JSON: {exc}") from exc
        client_factory = book.client_factory()
    else:
        if cfg.client is None:
            raise ToolkitError("annotate run needs either --mock-script or a config with a client section")
        base = cfg.client
        seed = args.seed
        # precedence: --temperature flag, then config, then the 0.3 annotation default
        if args.temperature is not None:
            temperature = args.temperature
        elif base.temperature is not None:
            temperature = base.temperature
        else:
            temperature = 0.3

        def client_factory(sample_id: str, attempt: int) -> HttpChatClient:
            extra = dict(base.extra_params)
            if seed is not None:
                # new seed per attempt so re-annotation actually resamples
                extra["seed"] = seed + attempt * 1_000_003 + (hash(sample_id) & 0xFFFF)
            from dataclasses import replace

            return HttpChatClient(replace(base, extra_params=extra, temperature=temperature))

    pipeline_cfg = PipelineConfig(
        annotate=AnnotateConfig(
            l_max=l_max,
            format_retry=cfg.annotate.format_retry,
            render_dir=args.render_dir,
        ),
        workers=workers,
    )
    rules = VerificationRules(synonyms=synonyms, manual_gate=manual_gate)
    experts = _load_experts(args.experts)
    stats = run_pipeline(args.manifest, client_factory, experts, args.out,
                         cfg=pipeline_cfg, rules=rules)
    json.dump(stats.to_json(), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def _cmd_annotate_verify(args) -> int:
    synonyms = load_synonyms(args.hint_synonyms) if args.hint_synonyms else default_synonyms()
    rules = VerificationRules(synonyms=synonyms, manual_gate=args.manual_gate)
    samples = {s.id: s for s in read_manifest(args.manifest)}
    lines = []
    for traj in read_trajectories(args.traj):
        sample = samples.get(traj.sample_id)
        if sample is None:
            raise ToolkitError(f"trajectory sample {traj.sample_id!r} is not in the manifest")
        report = verify(traj, sample, rules)
        lines.append(json.dumps({"sample_id": traj.sample_id, **report.to_json()}))
    _emit_lines(lines, args.out)
    return 0


def _reward_config_from(args) -> RewardConfig:
    return load_app_config(args.config).reward


def _cmd_reward_score(args) -> int:
    cfg = _reward_config_from(args)
    labels: dict[str, Label] = {}
    if args.labels:
        labels = {s.id: s.label for s in read_manifest(args.labels)}
    lines = []
    for traj in read_trajectories(args.traj):
        label = labels.get(traj.sample_id, traj.label)
        if args.mode == "st":
            record = {"sample_id": traj.sample_id, "mode": "st",
                      "reward": st_grpo_reward(traj, label)}
        else:
            b = total_reward(traj, label, cfg)
            record = {
                "sample_id": traj.sample_id,
                "mode": "dt",
                "r_fast": b.r_fast,
                "r_rsn": b.r_rsn,
                "f_tool": b.f_tool,
                "r_tool": b.r_tool,
                "total": b.total,
                "reward": b.total,
                "final_cls": b.final_cls.value if b.final_cls else None,
                "tool_counts": {t.value: c for t, c in b.per_tool_counts.items() if c},
            }
        lines.append(json.dumps(record))
    _emit_lines(lines, args.out)
    return 0


def _cmd_reward_advantages(args) -> int:
    rewards = []
    try:
        fh = open(args.rewards, "r", encoding="utf-8")
    except OSError as exc:
        raise ToolkitError(f"cannot read {args.rewards}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rewards.append(float(obj[args.key]))
            except (ValueError, KeyError, TypeError) as exc:
                raise ToolkitError(f"{args.rewards}:{lineno}: {exc}") from exc
    g = args.group_size
    if g < 2:
        raise ToolkitError(f"--group-size must be >= 2, got {g}")
    if len(rewards) == 0 or len(rewards) % g != 0:
        raise ToolkitError(f"{len(rewards)} rewards do not divide into groups of {g}")
    lines = []
    for start in range(0, len(rewards), g):
        adv = group_advantages(rewards[start : start + g], std_epsilon=args.std_epsilon)
        for offset, (r, a) in enumerate(zip(rewards[start : start + g], adv)):
            lines.append(json.dumps({
                "index": start + offset,
                "group": start // g,
                "reward": r,
                "advantage": float(a),
            }))
    _emit_lines(lines, args.out)
    return 0


def _cmd_expert_train(args) -> int:
    data_dir = Path(args.data)
    examples = []
    for label_name, label in (("real", 0), ("spoof", 1)):
        sub = data_dir / label_name
        if not sub.is_dir():
            raise ToolkitError(f"--data must contain a {label_name}/ subdirectory, missing in {data_dir}")
        for path in sorted(sub.iterdir()):
            if path.suffix.lower() in (".png", ".ppm", ".pgm"):
                examples.append((load_image(path), label))
    result = train_expert(
        TOOLS_BY_NAME[args.tool],
        examples,
        TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed, batch_size=args.batch_size),
    )
    save_expert(result.model, args.out)
    json.dump({
        "tool": args.tool,
        "examples": len(examples),
        "train_accuracy": result.train_accuracy,
        "initial_loss": result.loss_history[0],
        "final_loss": result.loss_history[-1],
        "model": args.out,
    }, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def _cmd_expert_predict(args) -> int:
    model = load_expert(args.model)
    img = load_image(getattr(args, "in"))
    p = predict(model, img)
    json.dump({
        "tool": model.tool.value,
        "p_spoof": p,
        "guidance": guidance_text(model.tool, p),
    }, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def _cmd_metrics_eval(args) -> int:
    samples = read_scores(args.scores)
    result: dict = {"auc": auc(samples)}
    if args.eer:
        threshold, eer = eer_threshold(samples)
        result["threshold"] = threshold
        result["eer"] = eer
    else:
        result["threshold"] = args.threshold
    far, frr = far_frr(samples, result["threshold"])
    result["far"] = far
    result["frr"] = frr
    result["hter"] = (far + frr) / 2.0
    json.dump(result, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


# --------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastools",
        description="Visual-tool operators, trajectories, rewards, and metrics "
                    "for tool-augmented face anti-spoofing.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    # tool -------------------------------------------------------------
    tool = sub.add_parser("tool", help="visual tool operators").add_subparsers(
        dest="subcommand", required=True, metavar="subcommand")
    apply_p = tool.add_parser("apply", help="run one tool on an image file")
    apply_p.add_argument("--tool", required=True, choices=sorted(TOOLS_BY_NAME),
                         help="wire name of the tool to run")
    apply_p.add_argument("--in", required=True, metavar="IMAGE", help="input PNG/PPM/PGM")
    apply_p.add_argument("--out", required=True, metavar="PNG", help="output PNG path")
    apply_p.add_argument("--bbox", metavar="X0,Y0,X1,Y1",
                         help="normalized crop box (ZoomInTool only)")
    apply_p.set_defaults(func=_cmd_tool_apply)

    # annotate ----------------------------------------------------------
    annotate = sub.add_parser("annotate", help="annotation pipeline").add_subparsers(
        dest="subcommand", required=True, metavar="subcommand")
    run_p = annotate.add_parser("run", help="annotate a sample manifest")
    run_p.add_argument("--manifest", required=True, help="sample JSONL manifest")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--workers", type=int, default=None, help="worker pool size")
    run_p.add_argument("--l-max", type=int, default=None, help="reasoning turn budget")
    run_p.add_argument("--manual-gate", action="store_true",
                       help="route accepted items to review.jsonl for manual check")
    run_p.add_argument("--config", help="AppConfig JSON")
    run_p.add_argument("--mock-script", help="ScriptBook JSON; run offline against the scripted mock")
    run_p.add_argument("--experts", help="directory of per-tool expert model JSON files")
    run_p.add_argument("--hint-synonyms", help="synonym table JSON for the leak scan")
    run_p.add_argument("--render-dir", help="directory for rendered tool-result PNGs")
    run_p.add_argument("--seed", type=int, default=None,
                       help="decoding seed passed to the endpoint (varied per attempt)")
    run_p.add_argument("--temperature", type=float, default=None,
                       help="decoding temperature (default: config value, else 0.3)")
    run_p.set_defaults(func=_cmd_annotate_run)

    verify_p = annotate.add_parser("verify", help="re-run verification offline")
    verify_p.add_argument("--traj", required=True, help="trajectory JSONL")
    verify_p.add_argument("--manifest", required=True, help="sample JSONL manifest")
    verify_p.add_argument("--hint-synonyms", help="synonym table JSON for the leak scan")
    verify_p.add_argument("--manual-gate", action="store_true",
                          help="report NeedsManualReview instead of Accepted")
    verify_p.add_argument("--out", help="report JSONL path (default stdout)")
    verify_p.set_defaults(func=_cmd_annotate_verify)

    # reward --------------------------------------------------------------
    reward = sub.add_parser("reward", help="reward scoring and advantages").add_subparsers(
        dest="subcommand", required=True, metavar="subcommand")
    score_p = reward.add_parser("score", help="score a trajectory file")
    score_p.add_argument("--traj", required=True, help="trajectory JSONL")
    score_p.add_argument("--labels", help="manifest JSONL overriding trajectory labels")
    score_p.add_argument("--config", help="AppConfig JSON (reward section)")
    score_p.add_argument("--mode", choices=("dt", "st"), default="dt",
                         help="dt = diverse-tool decomposition, st = single-tool baseline")
    score_p.add_argument("--out", help="breakdown JSONL path (default stdout)")
    score_p.set_defaults(func=_cmd_reward_score)

    adv_p = reward.add_parser("advantages", help="group-normalize a reward file")
    adv_p.add_argument("--rewards", required=True, help="reward JSONL (consecutive groups)")
    adv_p.add_argument("--group-size", type=int, default=8, help="rollouts per group")
    adv_p.add_argument("--key", default="reward", help="JSON field holding the reward")
    adv_p.add_argument("--std-epsilon", type=float, default=1e-8,
                       help="below this std a group is degenerate (zero advantages)")
    adv_p.add_argument("--out", help="advantage JSONL path (default stdout)")
    adv_p.set_defaults(func=_cmd_reward_advantages)

    # expert --------------------------------------------------------------
    expert = sub.add_parser("expert", help="expert model training/prediction").add_subparsers(
        dest="subcommand", required=True, metavar="subcommand")
    train_p = expert.add_parser("train", help="fit an expert on labeled tool renders")
    train_p.add_argument("--tool", required=True,
                         choices=sorted(t.value for t in ANALYSIS_TOOLS))
    train_p.add_argument("--data", required=True,
                         help="directory with real/ and spoof/ image subdirectories")
    train_p.add_argument("--out", required=True, help="model JSON path")
    train_p.add_argument("--epochs", type=int, default=10)
    train_p.add_argument("--lr", type=float, default=0.001)
    train_p.add_argument("--seed", type=int, default=0)
    train_p.add_argument("--batch-size", type=int, default=32)
    train_p.set_defaults(func=_cmd_expert_train)

    predict_p = expert.add_parser("predict", help="score one image")
    predict_p.add_argument("--model", required=True, help="model JSON path")
    predict_p.add_argument("--in", required=True, metavar="IMAGE", help="input image")
    predict_p.set_defaults(func=_cmd_expert_predict)

    # metrics -----------------------------------------------------------
    metrics = sub.add_parser("metrics", help="evaluation metrics").add_subparsers(
        dest="subcommand", required=True, metavar="subcommand")
    eval_p = metrics.add_parser("eval", help="FAR/FRR/HTER/AUC over a score file")
    eval_p.add_argument("--scores", required=True, help="score JSONL {id, score, label}")
    group = eval_p.add_mutually_exclusive_group()
    group.add_argument("--threshold", type=float, default=0.5,
                       help="decision threshold (Real iff score >= threshold)")
    group.add_argument("--eer", action="store_true", help="operate at the EER threshold")
    eval_p.set_defaults(func=_cmd_metrics_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:  # console_scripts hook
    sys.exit(main())


if __name__ == "__main__":
    entry()
