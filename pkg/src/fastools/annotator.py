"""Expert-guided multi-turn annotation: session loop, verification, pipeline.

One annotation session interleaves the chat client with tool execution:

1. system prompt, then the first-round query (image + query text + hint) and
   the model's *fast* answer;
2. a bridge message (tool guidance + format declaration) opening the
   reasoning round;
3. up to ``l_max`` reasoning turns. A tool call is dispatched against the
   *original* image; for analysis tools the matching expert converts the
   render into a guidance line, and the next user message carries the
   rendered image, that guidance, and the format declaration (ZoomIn
   renders go out without a guidance line). A final answer stops the loop;
   hitting the budget marks the trajectory unterminated.

A malformed reply earns one re-prompt with the format declaration (a
client-side stand-in for constrained decoding, ``format_retry``); a second
malformed reply ends the session. A tool call that fails validation is
recorded as invalid and the loop continues with an error notice.

Verification is three automated checks — final-answer correctness, strict
format, and hint/expert leakage scanning of the think/reason texts — plus a
manual gate that is never auto-passed: with ``manual_gate`` on, accepted
trajectories are routed to the review file instead.

The pipeline annotates a manifest of samples with a bounded worker pool,
re-annotates each failing sample exactly once, discards second failures as
bad cases, and journals every attempt so an interrupted run resumes without
ever exceeding two attempts per sample.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .errors import ClientError, DecodeError, ImageTooSmall, InvalidArgument, IoError
from .expert import ExpertModel, guidance_text, predict
from .imaging import Raster, encode_png, load_image
from .mllm_client import ChatClient, Message, assistant_message, system_message, user_message
from .trajectory import (
    FORMAT_DECL_TEXT,
    SYSTEM_PROMPT_TEXT,
    FastAnswer,
    FinalAnswer,
    FormatViolation,
    PromptContext,
    PromptStage,
    SubAnnotation,
    TextPart,
    ToolResultRef,
    Trajectory,
    Turn,
    build_prompts,
    parse_fast,
    parse_turn,
    serialize_trajectory,
)
from .trajectory import Label
from .vistools import ANALYSIS_TOOLS, ToolId, dispatch

__all__ = [
    "Sample",
    "AnnotateConfig",
    "VerificationRules",
    "VerificationReport",
    "Disposition",
    "annotate_sample",
    "verify",
    "run_pipeline",
    "PipelineConfig",
    "PipelineStats",
    "read_manifest",
    "default_synonyms",
    "hint_text",
    "scan_leaks",
]


@dataclass(frozen=True)
class Sample:
    id: str
    image: str
    label: Label
    spoof_type: str | None = None

    def __post_init__(self):
        if self.label is Label.REAL and self.spoof_type is not None:
            raise ValueError(f"sample {self.id!r}: real samples carry no spoof_type")


def hint_text(sample: Sample) -> str:
    """The ground-truth hint appended to the annotation first prompt."""
    if sample.label is Label.SPOOF:
        if sample.spoof_type:
            return f"Hint: this is a spoof face ({sample.spoof_type})."
        return "Hint: this is a spoof face."
    return "Hint: this is a real face."


@dataclass(frozen=True)
class AnnotateConfig:
    l_max: int = 6
    #: One re-prompt with the format declaration after a malformed reply.
    format_retry: bool = True
    #: Directory for rendered tool PNGs; None keeps hash-only references.
    render_dir: str | None = None
    system_prompt: str = SYSTEM_PROMPT_TEXT


def _render_ref(sample_id: str, turn_index: int, tool: ToolId, render: Raster,
                render_dir: str | None) -> ToolResultRef:
    header = f"{render.width}x{render.height}x{render.channels}:".encode("ascii")
    digest = hashlib.sha256(header + render.tobytes()).hexdigest()
    path = None
    if render_dir is not None:
        out = Path(render_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = str(out / f"{sample_id}_turn{turn_index}_{tool.value}.png")
        encode_png(render, path)
    return ToolResultRef(sha256=digest, path=path)


def render_hash(render: Raster) -> str:
    """Content hash used for tool-result provenance (dims + raw pixels)."""
    header = f"{render.width}x{render.height}x{render.channels}:".encode("ascii")
    return hashlib.sha256(header + render.tobytes()).hexdigest()


def annotate_sample(
    sample: Sample,
    client: ChatClient,
    experts: Mapping[ToolId, ExpertModel],
    cfg: AnnotateConfig | None = None,
) -> Trajectory:
    """Run one full annotation session; client errors propagate to the caller."""
    cfg = cfg or AnnotateConfig()
    missing = [t.value for t in ANALYSIS_TOOLS if t not in experts]
    if missing:
        raise ValueError(f"experts missing for tools: {missing}")
    image = load_image(sample.image)
    hint = hint_text(sample)

    history: list[Message] = [system_message(cfg.system_prompt)]
    history.append(
        user_message(build_prompts(PromptStage.FIRST_QUERY, PromptContext(image=image, hint=hint)))
    )
    fast_raw = client.chat(history)
    history.append(assistant_message(fast_raw))
    traj = Trajectory(
        sample_id=sample.id,
        label=sample.label,
        fast_raw=fast_raw,
        fast=parse_fast(fast_raw),
        hint=hint,
    )

    bridge = build_prompts(PromptStage.TOOL_GUIDANCE) + build_prompts(PromptStage.FORMAT_DECL)
    history.append(user_message(bridge))

    retried = False
    answered = False
    for _ in range(cfg.l_max):
        raw = client.chat(history)
        history.append(assistant_message(raw))
        parsed = parse_turn(raw)
        turn = Turn(raw=raw, parsed=parsed)
        traj.turns.append(turn)

        if isinstance(parsed, FormatViolation):
            if cfg.format_retry and not retried:
                retried = True
                history.append(user_message(build_prompts(PromptStage.FORMAT_DECL)))
                continue
            answered = True  # terminated by repeated violation, not by budget
            break

        if isinstance(parsed.action, FinalAnswer):
            answered = True
            break

        call = parsed.action
        try:
            render = dispatch(call.tool, call.args, image)
        except (InvalidArgument, ImageTooSmall) as exc:
            turn.tool_valid = False
            turn.error = str(exc)
            notice = f"Tool call failed: {exc}"
            history.append(user_message([TextPart(notice), TextPart(FORMAT_DECL_TEXT)]))
            continue
        turn.tool_valid = True
        turn.tool_result = _render_ref(sample.id, len(traj.turns) - 1, call.tool, render, cfg.render_dir)
        guidance = None
        if call.tool is not ToolId.ZOOM_IN:
            guidance = guidance_text(call.tool, predict(experts[call.tool], render))
        parts = build_prompts(
            PromptStage.TOOL_RESULT, PromptContext(image=render, guidance=guidance)
        ) + build_prompts(PromptStage.FORMAT_DECL)
        history.append(user_message(parts))
    if not answered:
        traj.unterminated = True
    return traj


# --------------------------------------------------------------------------
# Verification


class Disposition(Enum):
    ACCEPTED = "Accepted"
    NEEDS_REANNOTATION = "NeedsReannotation"
    BAD_CASE = "BadCase"
    NEEDS_MANUAL_REVIEW = "NeedsManualReview"


@dataclass(frozen=True)
class VerificationRules:
    #: spoof_type -> additional strings that count as hint leaks.
    synonyms: Mapping[str, Sequence[str]] = field(default_factory=dict)
    #: Route automation-accepted trajectories to manual review instead.
    manual_gate: bool = False


@dataclass
class VerificationReport:
    correctness: bool
    format_ok: bool
    format_violations: list[str]
    leakage_ok: bool
    leakage_spans: list[str]
    disposition: Disposition

    def to_json(self) -> dict:
        return {
            "correctness": self.correctness,
            "format_ok": self.format_ok,
            "format_violations": self.format_violations,
            "leakage_ok": self.leakage_ok,
            "leakage_spans": self.leakage_spans,
            "disposition": self.disposition.value,
        }


def default_synonyms() -> dict[str, list[str]]:
    """The shipped, editable hint-synonym table."""
    payload = resources.files("fastools.data").joinpath("hint_synonyms.json").read_text("utf-8")
    return json.loads(payload)


def load_synonyms(path: str | Path) -> dict[str, list[str]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or not all(
        isinstance(k, str) and isinstance(v, list) for k, v in obj.items()
    ):
        raise ValueError(f"{path}: synonym table must map spoof types to string lists")
    return obj


_PERCENT_RE = re.compile(r"\d+(?:\.\d+)?\s*%")
_EXPERT_RE = re.compile(r"expert", re.IGNORECASE)
_EXPERT_WINDOW = 40
_PREDICTS_RE = re.compile(
    r"predicts\s+\d+(?:\.\d+)?\s*%\s+there'?s\s+spoof\s+trace", re.IGNORECASE
)


def _spans_near(a: re.Match, b: re.Match, window: int) -> bool:
    gap = max(a.start() - b.end(), b.start() - a.end())
    return gap <= window


def scan_leaks(texts: Sequence[str], spoof_type: str | None,
               synonyms: Mapping[str, Sequence[str]]) -> list[str]:
    """Case-insensitive leak scan over think/reason texts.

    Flags (a) the sample's spoof type or any configured synonym, (b) the
    word "expert" within 40 characters of a percent figure, and (c) the
    guidance phrase "predicts N% there's spoof trace". Returns matched-span
    descriptors (empty = clean).
    """
    needles: list[str] = []
    if spoof_type:
        needles.append(spoof_type.lower())
        needles.extend(s.lower() for s in synonyms.get(spoof_type, ()))
    hits: list[str] = []
    for i, text in enumerate(texts):
        low = text.lower()
        for needle in needles:
            at = low.find(needle)
            if at >= 0:
                hits.append(f"text[{i}]@{at}: hint {needle!r}")
        experts = list(_EXPERT_RE.finditer(text))
        percents = list(_PERCENT_RE.finditer(text))
        for em in experts:
            if any(_spans_near(em, pm, _EXPERT_WINDOW) for pm in percents):
                hits.append(f"text[{i}]@{em.start()}: expert confidence near percent figure")
                break
        pm = _PREDICTS_RE.search(text)
        if pm:
            hits.append(f"text[{i}]@{pm.start()}: guidance phrase {pm.group(0)!r}")
    return hits


def _format_violations(traj: Trajectory) -> list[str]:
    from .reward import _turn_validity  # same validity rule as the scorer

    problems: list[str] = []
    if isinstance(traj.fast, FormatViolation):
        problems.append(f"fast answer malformed: {traj.fast.kind.value}")
    validity = _turn_validity(traj)
    answer_positions = []
    for i, turn in enumerate(traj.turns):
        parsed = turn.parsed
        if isinstance(parsed, FormatViolation):
            problems.append(f"turn {i} malformed: {parsed.kind.value}")
        elif isinstance(parsed.action, FinalAnswer):
            answer_positions.append(i)
        elif not validity[i]:
            problems.append(f"turn {i} invalid tool call: {turn.error or 'bad arguments'}")
    if traj.unterminated:
        problems.append("unterminated: turn budget exhausted without a final answer")
    elif len(answer_positions) != 1 or answer_positions[0] != len(traj.turns) - 1:
        problems.append("final answer missing or not the single last turn")
    return problems


def _leak_texts(traj: Trajectory) -> list[str]:
    texts = []
    if isinstance(traj.fast, FastAnswer):
        texts.append(traj.fast.reason)
    else:
        texts.append(traj.fast_raw)
    for turn in traj.turns:
        if isinstance(turn.parsed, SubAnnotation):
            texts.append(turn.parsed.think)
        else:
            texts.append(turn.raw)
    return texts


def verify(traj: Trajectory, sample: Sample, rules: VerificationRules | None = None) -> VerificationReport:
    """The three automated checks plus disposition (never raises)."""
    rules = rules or VerificationRules(synonyms=default_synonyms())
    correctness = traj.final_answer() == sample.label
    violations = _format_violations(traj)
    format_ok = not violations
    spans = scan_leaks(_leak_texts(traj), sample.spoof_type, rules.synonyms)
    leakage_ok = not spans
    if correctness and format_ok and leakage_ok:
        disposition = Disposition.NEEDS_MANUAL_REVIEW if rules.manual_gate else Disposition.ACCEPTED
    else:
        disposition = Disposition.NEEDS_REANNOTATION
    return VerificationReport(
        correctness=correctness,
        format_ok=format_ok,
        format_violations=violations,
        leakage_ok=leakage_ok,
        leakage_spans=spans,
        disposition=disposition,
    )


# --------------------------------------------------------------------------
# Pipeline


@dataclass(frozen=True)
class PipelineConfig:
    annotate: AnnotateConfig = field(default_factory=AnnotateConfig)
    workers: int = 1
    max_attempts: int = 2  # annotate once, re-annotate once


@dataclass
class PipelineStats:
    total: int = 0
    accepted: int = 0
    review: int = 0
    badcase: int = 0
    errors: int = 0
    reannotated: int = 0
    skipped: int = 0
    tool_usage: dict[str, int] = field(default_factory=dict)
    mean_turns: float = 0.0

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "accepted": self.accepted,
            "review": self.review,
            "badcase": self.badcase,
            "errors": self.errors,
            "reannotated": self.reannotated,
            "skipped": self.skipped,
            "tool_usage": self.tool_usage,
            "mean_turns": self.mean_turns,
        }


_MANIFEST_KEYS = {"id", "image", "label", "spoof_type"}


def read_manifest(path: str | Path) -> list[Sample]:
    """Sample JSONL: {"id", "image", "label", "spoof_type"?} per line."""
    samples = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("manifest line must be a JSON object")
                unknown = set(obj) - _MANIFEST_KEYS
                if unknown:
                    raise ValueError(f"unknown manifest keys {sorted(unknown)}")
                samples.append(
                    Sample(
                        id=str(obj["id"]),
                        image=str(obj["image"]),
                        label=Label(obj["label"]),
                        spoof_type=obj.get("spoof_type"),
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise IoError(f"{path}:{lineno}: {exc}") from exc
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise IoError(f"{path}: duplicate sample ids")
    return samples


class _Journal:
    """Append-only attempt log; the resume and at-most-two-attempts authority."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self.attempts: dict[str, list[tuple[int, str]]] = {}
        if path.exists():
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    obj = json.loads(line)
                    self.attempts.setdefault(obj["sample_id"], []).append(
                        (int(obj["attempt"]), str(obj["disposition"]))
                    )
        self._fh = open(path, "a", encoding="utf-8")

    def record(self, sample_id: str, attempt: int, disposition: str) -> None:
        line = json.dumps(
            {"sample_id": sample_id, "attempt": attempt, "disposition": disposition}
        )
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()
            self.attempts.setdefault(sample_id, []).append((attempt, disposition))

    def close(self) -> None:
        self._fh.close()

    def state(self, sample_id: str) -> list[tuple[int, str]]:
        return self.attempts.get(sample_id, [])


_TERMINAL = {Disposition.ACCEPTED.value, Disposition.NEEDS_MANUAL_REVIEW.value,
             Disposition.BAD_CASE.value}

ClientFactory = Callable[[str, int], ChatClient]


@dataclass
class _SampleOutcome:
    sample: Sample
    #: (attempt, trajectory or None, report or None, effective disposition)
    events: list[tuple[int, Trajectory | None, VerificationReport | None, str]]


def _run_sample(
    sample: Sample,
    attempts: Sequence[int],
    client_factory: ClientFactory,
    experts: Mapping[ToolId, ExpertModel],
    cfg: PipelineConfig,
    rules: VerificationRules,
    journal: _Journal,
) -> _SampleOutcome:
    events: list[tuple[int, Trajectory | None, VerificationReport | None, str]] = []
    last_allowed = attempts[-1] if attempts else 0
    for attempt in attempts:
        try:
            client = client_factory(sample.id, attempt)
            traj = annotate_sample(sample, client, experts, cfg.annotate)
        except (ClientError, IoError, DecodeError) as exc:
            journal.record(sample.id, attempt, "Error")
            events.append((attempt, None, None, f"Error: {exc}"))
            continue
        report = verify(traj, sample, rules)
        effective = report.disposition
        if effective is Disposition.NEEDS_REANNOTATION and attempt >= last_allowed:
            effective = Disposition.BAD_CASE
        journal.record(sample.id, attempt, effective.value)
        events.append((attempt, traj, report, effective.value))
        if effective is not Disposition.NEEDS_REANNOTATION:
            break
    return _SampleOutcome(sample=sample, events=events)


def run_pipeline(
    manifest_path: str | Path,
    client_factory: ClientFactory,
    experts: Mapping[ToolId, ExpertModel],
    out_dir: str | Path,
    cfg: PipelineConfig | None = None,
    rules: VerificationRules | None = None,
) -> PipelineStats:
    """Annotate every manifest sample; returns stats (also written to stats.json).

    Outputs under ``out_dir``: accepted.jsonl / review.jsonl / badcase.jsonl
    (trajectory records), reports.jsonl (per-attempt verification),
    journal.jsonl (attempt log, the resume authority), stats.json.
    """
    cfg = cfg or PipelineConfig()
    rules = rules or VerificationRules(synonyms=default_synonyms())
    samples = read_manifest(manifest_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    journal = _Journal(out / "journal.jsonl")
    stats = PipelineStats(total=len(samples))

    work: list[tuple[Sample, list[int]]] = []
    for sample in samples:
        prior = journal.state(sample.id)
        if any(d in _TERMINAL for _, d in prior) or len(prior) >= cfg.max_attempts:
            stats.skipped += 1
            continue
        next_attempt = max((a for a, _ in prior), default=0) + 1
        work.append((sample, list(range(next_attempt, cfg.max_attempts + 1))))

    routes = {
        Disposition.ACCEPTED.value: out / "accepted.jsonl",
        Disposition.NEEDS_MANUAL_REVIEW.value: out / "review.jsonl",
        Disposition.BAD_CASE.value: out / "badcase.jsonl",
    }
    sinks = {name: open(path, "a", encoding="utf-8") for name, path in routes.items()}
    reports_fh = open(out / "reports.jsonl", "a", encoding="utf-8")
    try:
        def handle(outcome: _SampleOutcome) -> None:
            final_traj: Trajectory | None = None
            final_disposition: str | None = None
            for attempt, traj, report, disposition in outcome.events:
                if report is not None:
                    reports_fh.write(json.dumps({
                        "sample_id": outcome.sample.id,
                        "attempt": attempt,
                        **report.to_json(),
                        "disposition": disposition,
                    }) + "\n")
                if traj is not None:
                    final_traj = traj
                final_disposition = disposition
            reports_fh.flush()
            if final_disposition in routes and final_traj is not None:
                sink = sinks[final_disposition]
                sink.write(serialize_trajectory(final_traj) + "\n")
                sink.flush()

        if cfg.workers <= 1:
            for sample, attempts in work:
                handle(_run_sample(sample, attempts, client_factory, experts, cfg, rules, journal))
        else:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [
                    pool.submit(_run_sample, sample, attempts, client_factory, experts,
                                cfg, rules, journal)
                    for sample, attempts in work
                ]
                for fut in as_completed(futures):
                    handle(fut.result())
    finally:
        for fh in sinks.values():
            fh.close()
        reports_fh.close()
        journal.close()

    _finalize_stats(stats, samples, out)
    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats.to_json(), fh, indent=2)
        fh.write("\n")
    return stats


def _finalize_stats(stats: PipelineStats, samples: Sequence[Sample], out: Path) -> None:
    from .reward import per_tool_counts
    from .trajectory import read_trajectories

    journal_state: dict[str, list[tuple[int, str]]] = {}
    journal_path = out / "journal.jsonl"
    if journal_path.exists():
        with open(journal_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    journal_state.setdefault(obj["sample_id"], []).append(
                        (int(obj["attempt"]), str(obj["disposition"]))
                    )

    manifest_ids = {s.id for s in samples}
    for sample_id, entries in journal_state.items():
        if sample_id not in manifest_ids:
            continue
        dispositions = [d for _, d in entries]
        if Disposition.ACCEPTED.value in dispositions:
            stats.accepted += 1
        elif Disposition.NEEDS_MANUAL_REVIEW.value in dispositions:
            stats.review += 1
        elif Disposition.BAD_CASE.value in dispositions:
            stats.badcase += 1
        elif all(d == "Error" for d in dispositions) and len(entries) >= 2:
            stats.errors += 1
        if any(a >= 2 for a, _ in entries):
            stats.reannotated += 1

    usage: dict[str, int] = {}
    turn_counts: list[int] = []
    for name in ("accepted.jsonl", "review.jsonl", "badcase.jsonl"):
        path = out / name
        if not path.exists():
            continue
        for traj in read_trajectories(path):
            turn_counts.append(len(traj.turns))
            for tool, count in per_tool_counts(traj).items():
                if count:
                    usage[tool.value] = usage.get(tool.value, 0) + count
    stats.tool_usage = dict(sorted(usage.items()))
    stats.mean_turns = float(sum(turn_counts) / len(turn_counts)) if turn_counts else 0.0
