"""Acceptance gate: nine numbered criteria, each a single test.

Every criterion is checked at its pinned tolerance against independent
oracles (brute-force reimplementations, hand-derived values, or wall-clock
budgets). The terminal summary prints one PASS/FAIL line per criterion.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from fastools.annotator import (
    AnnotateConfig,
    Sample,
    annotate_sample,
    default_synonyms,
    run_pipeline,
    verify,
)
from fastools.cli import main as cli_main
from fastools.expert import TrainConfig, predict, train_expert, zero_expert
from fastools.imaging import Raster, encode_png
from fastools.metrics import ScoredSample, auc, eer_threshold, far_frr, hter
from fastools.mllm_client import ScriptBook, ScriptedClient
from fastools.reward import (
    ClampMode,
    RewardConfig,
    group_advantages,
    st_grpo_reward,
    total_reward,
)
from fastools.trajectory import (
    Label,
    parse_fast,
    parse_trajectory,
    parse_turn,
    read_trajectories,
    serialize_trajectory,
)
from fastools.vistools import (
    ToolId,
    fft2,
    haar_wavelet,
    ifft2,
    laplacian_edge,
    lbp_map,
)
from reward_oracle import oracle_breakdown, oracle_st_grpo
from test_vistools import haar_oracle, laplacian_oracle, lbp_oracle, quantize_oracle
from traj_texts import (
    BAD_FAST,
    BAD_TURN,
    INVALID_CALL,
    answer_text,
    fast_text,
    tool_text,
    traj_from_texts,
)

SEED = 20240817

EXPERTS = {t: zero_expert(t) for t in ToolId if t is not ToolId.ZOOM_IN}


# ---------------------------------------------------------------------------
# 1. reward oracle equivalence (exhaustive, 0 tolerance, < 5 s)


def test_criterion_01_reward_oracle_equivalence():
    """Exhaustively enumerate short sessions and compare against the naive scorer.

    Turn vocabulary is a superset of the required {FFT, LBP, Answer,
    InvalidCall}: answers of both classes, a schema-invalid call, and a
    parse-violation turn. Both clamp modes are checked component-by-component
    with exact (==) comparison.
    """
    start = time.perf_counter()
    turn_vocab = [
        tool_text("FFTTool"),
        tool_text("LBPTool"),
        answer_text("Real"),
        answer_text("Spoof"),
        INVALID_CALL,
        BAD_TURN,
    ]
    fast_vocab = [fast_text("Real", "r"), fast_text("Spoof", "s"), BAD_FAST]
    configs = [RewardConfig(), RewardConfig(clamp_mode=ClampMode.LITERAL_MAX)]

    checked = 0
    for n_turns in range(5):  # 0..4 turns
        for turns in itertools.product(turn_vocab, repeat=n_turns):
            for fast in fast_vocab:
                for label in (Label.REAL, Label.SPOOF):
                    traj = traj_from_texts(fast, list(turns), label=label)
                    for cfg in configs:
                        got = total_reward(traj, label, cfg)
                        want = oracle_breakdown(traj, cfg)
                        assert got.r_fast == want["r_fast"]
                        assert got.r_rsn == want["r_rsn"]
                        assert got.f_tool == want["f_tool"]
                        assert got.r_tool == want["r_tool"]
                        assert got.total == want["total"]
                    assert st_grpo_reward(traj, label) == oracle_st_grpo(traj)
                    checked += 1
    elapsed = time.perf_counter() - start
    assert checked == (1 + 6 + 36 + 216 + 1296) * 3 * 2
    assert elapsed < 5.0, f"enumeration took {elapsed:.2f}s (budget 5s)"


# ---------------------------------------------------------------------------
# 2. worked reward values


def test_criterion_02_worked_reward_values():
    capped = RewardConfig()
    literal = RewardConfig(clamp_mode=ClampMode.LITERAL_MAX)

    perfect = traj_from_texts(
        fast_text("Spoof", "flat highlights"),
        [tool_text("FFTTool"), tool_text("LBPTool"), answer_text("Spoof")],
        label=Label.SPOOF,
    )
    assert abs(total_reward(perfect, Label.SPOOF, capped).total - 0.76) < 1e-12

    broken = traj_from_texts(BAD_FAST, [BAD_TURN], label=Label.SPOOF)
    assert abs(total_reward(broken, Label.SPOOF, capped).total - (-0.6)) < 1e-12

    tool_free = traj_from_texts(
        fast_text("Spoof", "r"), [answer_text("Spoof")], label=Label.SPOOF
    )
    assert abs(total_reward(tool_free, Label.SPOOF, literal).f_tool - 1.2) < 1e-12


# ---------------------------------------------------------------------------
# 3. advantage normalization (1000 seeded groups, G = 8)


def test_criterion_03_advantage_normalization():
    rng = np.random.default_rng(SEED)
    for i in range(1000):
        if i % 50 == 0:  # every 50th group is exactly degenerate
            group = np.full(8, float(rng.uniform(-2, 2)))
            assert np.array_equal(group_advantages(group), np.zeros(8))
            continue
        group = rng.uniform(-2.0, 2.0, 8)
        adv = group_advantages(group)
        assert abs(adv.mean()) < 1e-12
        assert abs(adv.std() - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# 4. operator oracles (>=100 exact 8x8 cases; FFT Parseval/round-trip; < 10 s)


def test_criterion_04_operator_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    for _ in range(100):
        img = Raster(rng.integers(0, 256, (8, 8)).astype(np.uint8))
        assert np.array_equal(lbp_map(img).data, lbp_oracle(img.data))
        assert np.array_equal(laplacian_edge(img).data, laplacian_oracle(img.data))
        ll, lh, hl, hh = haar_oracle(img.data.astype(np.float64))
        mosaic = np.vstack(
            [
                np.hstack([quantize_oracle(ll), quantize_oracle(lh)]),
                np.hstack([quantize_oracle(hl), quantize_oracle(hh)]),
            ]
        )
        assert np.array_equal(haar_wavelet(img).data, mosaic)

    for _ in range(10):
        field = rng.normal(size=(32, 32))
        spectrum = fft2(field)
        spatial_energy = float(np.sum(field * field))
        spectral_energy = float(np.sum(np.abs(spectrum) ** 2)) / field.size
        assert abs(spatial_energy - spectral_energy) <= 1e-6 * abs(spatial_energy)
        assert np.max(np.abs(ifft2(spectrum) - field)) < 1e-9

    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"operator oracles took {elapsed:.2f}s (budget 10s)"


# ---------------------------------------------------------------------------
# 5. parser totality + round-trip


def test_criterion_05_parser_totality_and_roundtrip():
    rng = np.random.default_rng(SEED)
    lengths = rng.integers(0, 64, 100_000)
    for n in lengths:
        blob = rng.integers(0, 256, int(n), dtype=np.uint8).tobytes().decode("latin-1")
        assert parse_fast(blob) is not None  # a violation object, never an exception
        assert parse_turn(blob) is not None

    tools = ["ZoomInTool", "LBPTool", "FFTTool", "WaveletTransformTool",
             "EdgeDetectionTool", "HOGTool"]
    for i in range(100):
        n_turns = int(rng.integers(0, 5))
        turns = []
        for _ in range(n_turns):
            name = tools[int(rng.integers(0, len(tools)))]
            args = {"bbox": [0.0, 0.0, 0.5, 0.5]} if name == "ZoomInTool" else {}
            turns.append(tool_text(name, args, think=f"look {i}"))
        turns.append(answer_text("Real" if rng.integers(0, 2) else "Spoof"))
        traj = traj_from_texts(
            fast_text("Real" if rng.integers(0, 2) else "Spoof", f"case {i}"),
            turns,
            label=Label.REAL if rng.integers(0, 2) else Label.SPOOF,
            sample_id=f"rt{i}",
            hint="Hint: this is a real face." if rng.integers(0, 2) else None,
        )
        assert parse_trajectory(serialize_trajectory(traj)) == traj


# ---------------------------------------------------------------------------
# 6. annotation state machine + leak catching


def _write_manifest(tmp_path, rng, n, prefix="s"):
    manifest = tmp_path / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for i in range(n):
            img_path = tmp_path / f"{prefix}{i}.png"
            encode_png(Raster(rng.integers(0, 256, (24, 24, 3)).astype(np.uint8)), img_path)
            fh.write(json.dumps({
                "id": f"{prefix}{i}",
                "image": str(img_path),
                "label": "Spoof",
                "spoof_type": "photo attack",
            }) + "\n")
    return manifest


GOOD_SCRIPT = [
    fast_text("Spoof", "odd glare"),
    tool_text("FFTTool"),
    answer_text("Spoof", think="periodic grid"),
]
WRONG_SCRIPT = [fast_text("Spoof", "odd glare"), answer_text("Real", think="seems fine")]


def test_criterion_06_annotation_state_machine_and_leaks(tmp_path):
    rng = np.random.default_rng(SEED)
    img_path = tmp_path / "probe.png"
    encode_png(Raster(rng.integers(0, 256, (24, 24, 3)).astype(np.uint8)), img_path)
    sample = Sample(id="p0", image=str(img_path), label=Label.SPOOF, spoof_type="photo attack")

    # (a) immediate answer -> single-turn trajectory
    traj = annotate_sample(
        sample, ScriptedClient([fast_text("Spoof", "s"), answer_text("Spoof")]), EXPERTS
    )
    assert len(traj.turns) == 1 and not traj.unterminated

    # (b) six tool calls at L_max = 6 -> unterminated
    script = [fast_text("Spoof", "s")] + [tool_text("FFTTool")] * 6
    traj = annotate_sample(sample, ScriptedClient(script), EXPERTS, AnnotateConfig(l_max=6))
    assert traj.unterminated and len(traj.turns) == 6

    # (c) fail-then-pass over N samples -> stats.reannotated == N, all accepted
    n = 4
    (tmp_path / "c").mkdir()
    manifest = _write_manifest(tmp_path / "c", rng, n)
    book = ScriptBook(default={"1": WRONG_SCRIPT, "2": GOOD_SCRIPT})
    stats = run_pipeline(manifest, book.client_factory(), EXPERTS, tmp_path / "c" / "out")
    assert stats.reannotated == n and stats.accepted == n and stats.badcase == 0

    # (d) fail-twice -> 100% badcase
    (tmp_path / "d").mkdir()
    manifest = _write_manifest(tmp_path / "d", rng, 3)
    book = ScriptBook(default={"1": WRONG_SCRIPT, "2": WRONG_SCRIPT})
    stats = run_pipeline(manifest, book.client_factory(), EXPERTS, tmp_path / "d" / "out")
    assert stats.badcase == 3 and stats.accepted == 0
    assert len(read_trajectories(tmp_path / "d" / "out" / "badcase.jsonl")) == 3

    # leak fixtures: 50 seeded injections, all must be caught
    synonyms = default_synonyms()
    spoof_types = sorted(synonyms)
    caught = 0
    for i in range(50):
        spoof_type = spoof_types[int(rng.integers(0, len(spoof_types)))]
        mode = int(rng.integers(0, 3))
        if mode == 0:  # the spoof type itself, random casing
            phrase = spoof_type.upper() if rng.integers(0, 2) else spoof_type
        elif mode == 1:  # a configured synonym
            options = synonyms[spoof_type]
            phrase = options[int(rng.integers(0, len(options)))]
        else:  # echoed guidance phrasing
            phrase = f"predicts {int(rng.integers(0, 101))}% there's spoof trace"
        filler_a = "the texture " * int(rng.integers(0, 4))
        filler_b = " near the jawline" * int(rng.integers(0, 3))
        think = f"{filler_a}{phrase}{filler_b}".strip()
        leaky = traj_from_texts(
            fast_text("Spoof", "glare"),
            [answer_text("Spoof", think=think)],
            label=Label.SPOOF,
            sample_id=f"leak{i}",
        )
        fixture = Sample(
            id=f"leak{i}", image=str(img_path), label=Label.SPOOF, spoof_type=spoof_type
        )
        report = verify(leaky, fixture)
        if not report.leakage_ok:
            caught += 1
    assert caught == 50, f"only {caught}/50 leak fixtures caught"


# ---------------------------------------------------------------------------
# 7. expert substitute on smooth-vs-noise


def _smooth_vs_noise(rng, n_per_class, size=24):
    data = []
    for _ in range(n_per_class):
        ramp = np.tile(np.linspace(0, 200, size), (size, 1)) + rng.uniform(0, 40)
        data.append((Raster(np.clip(ramp, 0, 255).astype(np.uint8)), 0))
        noise = rng.integers(0, 256, (size, size), dtype=np.uint8)
        data.append((Raster(noise), 1))
    return data


def test_criterion_07_expert_substitute():
    rng = np.random.default_rng(SEED)
    train = _smooth_vs_noise(rng, 200)
    held_out = _smooth_vs_noise(rng, 200)

    result = train_expert(ToolId.FFT, train, TrainConfig(seed=SEED))
    assert result.train_accuracy >= 0.95

    hits = sum(
        1
        for img, label in held_out
        if (predict(result.model, img) >= 0.5) == bool(label)
    )
    assert hits / len(held_out) >= 0.90

    retrain = train_expert(ToolId.FFT, train, TrainConfig(seed=SEED))
    assert np.array_equal(result.model.weights, retrain.model.weights)
    assert result.model.bias == retrain.model.bias
    assert result.loss_history == retrain.loss_history


# ---------------------------------------------------------------------------
# 8. metrics against oracles and hand cases


def test_criterion_08_metrics():
    rng = np.random.default_rng(SEED)

    # AUC == all-pairs Mann-Whitney within 1e-12 on random sets of <= 200
    for _ in range(30):
        n = int(rng.integers(4, 201))
        scores = np.round(rng.uniform(0, 1, n), 2)  # rounding forces ties
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            continue
        samples = [
            ScoredSample(id=str(i), score=float(s), label=Label.REAL if l else Label.SPOOF)
            for i, (s, l) in enumerate(zip(scores, labels))
        ]
        reals = scores[labels == 1]
        spoofs = scores[labels == 0]
        pair_total = 0.0
        for r in reals:
            for s in spoofs:
                pair_total += 1.0 if r > s else (0.5 if r == s else 0.0)
        want = pair_total / (len(reals) * len(spoofs))
        assert abs(auc(samples) - want) < 1e-12

    # strictly-increasing-transform invariance on 100 seeded cases
    for _ in range(100):
        n = int(rng.integers(4, 64))
        scores = np.round(rng.normal(size=n), 1)
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        ranks = {s: i for i, s in enumerate(sorted(set(scores.tolist())))}
        base, warped = [], []
        for i, (s, l) in enumerate(zip(scores.tolist(), labels)):
            lab = Label.REAL if l else Label.SPOOF
            base.append(ScoredSample(id=str(i), score=s, label=lab))
            warped.append(ScoredSample(id=str(i), score=math.exp(0.5 * ranks[s]), label=lab))
        assert abs(auc(base) - auc(warped)) < 1e-12

    # hand-derived four-point cases, exact
    four = [
        ScoredSample(id="a", score=0.9, label=Label.REAL),
        ScoredSample(id="b", score=0.8, label=Label.SPOOF),
        ScoredSample(id="c", score=0.4, label=Label.REAL),
        ScoredSample(id="d", score=0.2, label=Label.SPOOF),
    ]
    assert far_frr(four, 0.65) == (0.5, 0.5)
    assert hter(four, 0.65) == 0.5
    assert auc(four) == 0.75

    separable = [
        ScoredSample(id="a", score=5.0, label=Label.REAL),
        ScoredSample(id="b", score=4.0, label=Label.REAL),
        ScoredSample(id="c", score=2.0, label=Label.SPOOF),
        ScoredSample(id="d", score=1.0, label=Label.SPOOF),
    ]
    assert eer_threshold(separable) == (3.0, 0.0)

    # the guidance string, verbatim
    from fastools.expert import guidance_text

    assert guidance_text(ToolId.FFT, 0.87) == (
        "This is the result of FFTTool. The expert predicts 87% there's spoof trace"
    )


# ---------------------------------------------------------------------------
# 9. end-to-end dry run (50 samples, mock, < 60 s, valid JSONL throughout)


def test_criterion_09_end_to_end_dry_run(tmp_path, capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)

    # 50-sample synthetic manifest with mixed labels and per-sample scripts
    manifest = tmp_path / "manifest.jsonl"
    scripts: dict[str, dict[str, list[str]]] = {}
    tool_cycle = ["FFTTool", "LBPTool", "EdgeDetectionTool", "WaveletTransformTool", "HOGTool"]
    with open(manifest, "w", encoding="utf-8") as fh:
        for i in range(50):
            sid = f"dry{i:02d}"
            img_path = tmp_path / f"{sid}.png"
            encode_png(Raster(rng.integers(0, 256, (32, 32, 3)).astype(np.uint8)), img_path)
            spoof = i % 2 == 0
            row = {"id": sid, "image": str(img_path), "label": "Spoof" if spoof else "Real"}
            if spoof:
                row["spoof_type"] = "photo attack"
            fh.write(json.dumps(row) + "\n")

            cls = "Spoof" if spoof else "Real"
            good = [
                fast_text(cls, "first impression"),
                tool_text(tool_cycle[i % len(tool_cycle)]),
                tool_text("ZoomInTool", {"bbox": [0.25, 0.25, 0.75, 0.75]}),
                answer_text(cls, think="evidence settled"),
            ]
            wrong = [
                fast_text(cls, "first impression"),
                answer_text("Real" if spoof else "Spoof", think="hasty call"),
            ]
            if i % 10 == 7:  # a handful of fail-then-pass samples
                scripts[sid] = {"1": wrong, "2": good}
            elif i % 25 == 13:  # and a couple of hopeless ones
                scripts[sid] = {"1": wrong, "2": wrong}
            else:
                scripts[sid] = {"1": good}
    script_path = tmp_path / "scripts.json"
    script_path.write_text(json.dumps({"samples": scripts}), encoding="utf-8")

    out_dir = tmp_path / "out"
    code = cli_main([
        "annotate", "run",
        "--manifest", str(manifest),
        "--out", str(out_dir),
        "--mock-script", str(script_path),
    ])
    stats_stdout = capsys.readouterr().out
    assert code == 0
    stats = json.loads(stats_stdout)
    assert stats["total"] == 50
    assert stats["accepted"] + stats["badcase"] == 50
    assert stats["tool_usage"], "tool-usage histogram must be nonzero"
    assert sum(stats["tool_usage"].values()) > 0

    # every stage emits valid JSONL
    for name in ("accepted.jsonl", "badcase.jsonl"):
        path = out_dir / name
        for traj in read_trajectories(path):  # parses and validates every line
            assert traj.sample_id.startswith("dry")
    for name in ("journal.jsonl", "reports.jsonl"):
        for lineno, line in enumerate((out_dir / name).read_text().splitlines(), 1):
            obj = json.loads(line)
            assert "sample_id" in obj, f"{name}:{lineno}"
    json.loads((out_dir / "stats.json").read_text())

    # reward scoring over the produced trajectories, both modes
    for mode in ("dt", "st"):
        scored_path = tmp_path / f"rewards_{mode}.jsonl"
        code = cli_main([
            "reward", "score",
            "--traj", str(out_dir / "accepted.jsonl"),
            "--mode", mode,
            "--out", str(scored_path),
        ])
        capsys.readouterr()
        assert code == 0
        records = [json.loads(l) for l in scored_path.read_text().splitlines()]
        assert len(records) == stats["accepted"]
        assert all(isinstance(r["reward"], float) for r in records)

    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"dry run took {elapsed:.2f}s (budget 60s)"
