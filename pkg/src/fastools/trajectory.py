"""Wire format for multi-turn tool-call trajectories.

A trajectory records one annotation/rollout session for one image:

* a *fast* first-round answer ``<CLS><reason>...</reason>`` with
  ``CLS in {<Real>, <Spoof>}`` (case-sensitive), followed by
* up to ``L_max`` *reasoning* turns, each ``<think>...</think>`` plus either
  one ``<tool_call>{JSON}</tool_call>`` or one terminating
  ``<answer><Real></answer>`` / ``<answer><Spoof></answer>``.

Parsing is *total*: malformed text never raises, it yields a
:class:`FormatViolation` value (kinds BadTags / BadJson / InvalidTool /
BadAnswerToken) so reward code can score bad formats instead of crashing.
The grammar is strict — unknown tags, prose outside the blocks, nested
grammar tags inside ``think``/``reason`` bodies, or more than one action
block all reject. Whitespace *between* blocks is tolerated; the canonical
serialized form emits none.

Tool-call JSON is ``{"name": <wire tool name>, "arguments": {...}}``; a
missing ``"arguments"`` defaults to ``{}``; any other top-level key, a
non-string name, or a non-object arguments value is BadJson; a well-formed
object naming an unknown tool is InvalidTool (argument *schema* validation
is the dispatcher's job, not the parser's).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Union

from .errors import IoError, MissingContext
from .imaging import Raster
from .vistools import TOOLS_BY_NAME, ToolId


class Label(Enum):
    REAL = "Real"
    SPOOF = "Spoof"


class ViolationKind(Enum):
    BAD_TAGS = "BadTags"
    BAD_JSON = "BadJson"
    INVALID_TOOL = "InvalidTool"
    BAD_ANSWER_TOKEN = "BadAnswerToken"


@dataclass(frozen=True)
class FormatViolation:
    """First-class parse failure; scored, never raised."""

    kind: ViolationKind
    detail: str = ""


@dataclass(frozen=True)
class FastAnswer:
    cls: Label
    reason: str


@dataclass(frozen=True)
class ToolCall:
    tool: ToolId
    args: dict


@dataclass(frozen=True)
class FinalAnswer:
    cls: Label


@dataclass(frozen=True)
class SubAnnotation:
    """One parse-valid reasoning turn: a think segment plus its action."""

    think: str
    action: Union[ToolCall, FinalAnswer]


@dataclass(frozen=True)
class ToolResultRef:
    """Pointer to a rendered tool output (PNG path and/or content hash)."""

    sha256: str
    path: str | None = None


@dataclass
class Turn:
    """A raw reasoning turn plus everything the session learned about it."""

    raw: str
    parsed: Union[SubAnnotation, FormatViolation]
    #: For tool-call turns: did the call validate *and* execute? None for
    #: non-tool turns. Recorded at annotation time; offline scorers fall
    #: back to schema validation when absent.
    tool_valid: bool | None = None
    tool_result: ToolResultRef | None = None
    #: Human-readable execution error for invalid calls, if any.
    error: str | None = None


@dataclass
class Trajectory:
    sample_id: str
    label: Label
    fast_raw: str
    fast: Union[FastAnswer, FormatViolation]
    turns: list[Turn] = field(default_factory=list)
    hint: str | None = None
    #: Set when the turn budget ran out before a final answer.
    unterminated: bool = False

    def final_answer(self) -> Label | None:
        """CLS_final: the class of the first parse-valid final-answer turn.

        Reward code gates on this; reasoning-format scoring additionally
        requires that turn to be the last and only answer.
        """
        for turn in self.turns:
            if isinstance(turn.parsed, SubAnnotation) and isinstance(turn.parsed.action, FinalAnswer):
                return turn.parsed.action.cls
        return None


# --------------------------------------------------------------------------
# Parsing

_CLS_TOKENS = {label.value: label for label in Label}

# any grammar tag; used to reject tag soup nested inside free-text bodies
_GRAMMAR_TAG_RE = re.compile(r"</?(?:Real|Spoof|reason|think|answer|tool_call)>")

_FAST_RE = re.compile(r"\A\s*<([A-Za-z]+)>\s*<reason>(.*?)</reason>\s*\Z", re.DOTALL)
_THINK_RE = re.compile(r"\A\s*<think>(.*?)</think>\s*(.*?)\s*\Z", re.DOTALL)
_TOOL_BLOCK_RE = re.compile(r"\A<tool_call>(.*?)</tool_call>\Z", re.DOTALL)
_ANSWER_BLOCK_RE = re.compile(r"\A<answer>(.*?)</answer>\Z", re.DOTALL)
_ANSWER_TOKEN_RE = re.compile(r"\A<([A-Za-z]+)>\Z")


def parse_fast(text: str) -> Union[FastAnswer, FormatViolation]:
    """Parse a first-round fast answer. Total: returns FormatViolation on bad input."""
    if not isinstance(text, str):
        return FormatViolation(ViolationKind.BAD_TAGS, "not a string")
    m = _FAST_RE.match(text)
    if m is None:
        return FormatViolation(ViolationKind.BAD_TAGS, "expected <CLS><reason>...</reason>")
    token, reason = m.group(1), m.group(2)
    if token not in _CLS_TOKENS:
        return FormatViolation(ViolationKind.BAD_ANSWER_TOKEN, f"unknown class token <{token}>")
    if _GRAMMAR_TAG_RE.search(reason):
        return FormatViolation(ViolationKind.BAD_TAGS, "grammar tag inside reason body")
    return FastAnswer(_CLS_TOKENS[token], reason)


def _parse_tool_json(payload: str) -> Union[ToolCall, FormatViolation]:
    try:
        obj = json.loads(payload)
    except (json.JSONDecodeError, ValueError):
        return FormatViolation(ViolationKind.BAD_JSON, "tool_call body is not valid JSON")
    if not isinstance(obj, dict):
        return FormatViolation(ViolationKind.BAD_JSON, "tool_call JSON must be an object")
    extra = set(obj) - {"name", "arguments"}
    if extra:
        return FormatViolation(ViolationKind.BAD_JSON, f"unexpected keys {sorted(extra)}")
    name = obj.get("name")
    if not isinstance(name, str):
        return FormatViolation(ViolationKind.BAD_JSON, "missing or non-string tool name")
    args = obj.get("arguments", {})
    if not isinstance(args, dict):
        return FormatViolation(ViolationKind.BAD_JSON, "arguments must be an object")
    tool = TOOLS_BY_NAME.get(name)
    if tool is None:
        return FormatViolation(ViolationKind.INVALID_TOOL, f"unknown tool {name!r}")
    return ToolCall(tool, args)


def parse_turn(text: str) -> Union[SubAnnotation, FormatViolation]:
    """Parse one reasoning turn. Total: returns FormatViolation on bad input."""
    if not isinstance(text, str):
        return FormatViolation(ViolationKind.BAD_TAGS, "not a string")
    m = _THINK_RE.match(text)
    if m is None:
        return FormatViolation(ViolationKind.BAD_TAGS, "expected <think>...</think> then one action block")
    think, rest = m.group(1), m.group(2)
    if not think.strip():
        return FormatViolation(ViolationKind.BAD_TAGS, "empty think segment")
    if _GRAMMAR_TAG_RE.search(think):
        return FormatViolation(ViolationKind.BAD_TAGS, "grammar tag inside think body")

    tm = _TOOL_BLOCK_RE.match(rest)
    if tm is not None:
        parsed = _parse_tool_json(tm.group(1))
        if isinstance(parsed, FormatViolation):
            return parsed
        return SubAnnotation(think, parsed)

    am = _ANSWER_BLOCK_RE.match(rest)
    if am is not None:
        inner = am.group(1).strip()
        tok = _ANSWER_TOKEN_RE.match(inner)
        if tok is None or tok.group(1) not in _CLS_TOKENS:
            return FormatViolation(
                ViolationKind.BAD_ANSWER_TOKEN,
                f"answer body must be exactly <Real> or <Spoof>, got {inner!r}",
            )
        return SubAnnotation(think, FinalAnswer(_CLS_TOKENS[tok.group(1)]))

    return FormatViolation(ViolationKind.BAD_TAGS, "trailing content is not a single action block")


# --------------------------------------------------------------------------
# Canonical text (generation side of the grammar)


def canonical_fast_text(fast: FastAnswer) -> str:
    return f"<{fast.cls.value}><reason>{fast.reason}</reason>"


def canonical_tool_json(call: ToolCall) -> str:
    return json.dumps({"name": call.tool.value, "arguments": call.args}, separators=(", ", ": "))


def canonical_turn_text(sub: SubAnnotation) -> str:
    if isinstance(sub.action, ToolCall):
        block = f"<tool_call>{canonical_tool_json(sub.action)}</tool_call>"
    else:
        block = f"<answer><{sub.action.cls.value}></answer>"
    return f"<think>{sub.think}</think>{block}"


# --------------------------------------------------------------------------
# JSONL (de)serialization


def _fast_to_json(traj: Trajectory) -> dict:
    d: dict[str, Any] = {"raw": traj.fast_raw}
    if isinstance(traj.fast, FastAnswer):
        d.update(cls=traj.fast.cls.value, reason=traj.fast.reason)
    else:
        d.update(violation=traj.fast.kind.value, detail=traj.fast.detail)
    return d


def _turn_to_json(turn: Turn) -> dict:
    d: dict[str, Any] = {"raw": turn.raw}
    parsed = turn.parsed
    if isinstance(parsed, FormatViolation):
        d.update(violation=parsed.kind.value, detail=parsed.detail)
    elif isinstance(parsed.action, ToolCall):
        d.update(think=parsed.think, tool=parsed.action.tool.value, arguments=parsed.action.args)
    else:
        d.update(think=parsed.think, answer=parsed.action.cls.value)
    if turn.tool_valid is not None:
        d["tool_valid"] = turn.tool_valid
    if turn.tool_result is not None:
        ref: dict[str, Any] = {"sha256": turn.tool_result.sha256}
        if turn.tool_result.path is not None:
            ref["path"] = turn.tool_result.path
        d["tool_result"] = ref
    if turn.error is not None:
        d["error"] = turn.error
    return d


def serialize_trajectory(traj: Trajectory) -> str:
    """One JSON line; raw texts are preserved verbatim alongside parse results."""
    record = {
        "sample_id": traj.sample_id,
        "label": traj.label.value,
        "hint": traj.hint,
        "fast": _fast_to_json(traj),
        "turns": [_turn_to_json(t) for t in traj.turns],
        "unterminated": traj.unterminated,
    }
    return json.dumps(record, ensure_ascii=False)


def _fast_from_json(d: dict) -> tuple[str, Union[FastAnswer, FormatViolation]]:
    raw = d["raw"]
    if "violation" in d:
        return raw, FormatViolation(ViolationKind(d["violation"]), d.get("detail", ""))
    return raw, FastAnswer(Label(d["cls"]), d["reason"])


def _turn_from_json(d: dict) -> Turn:
    raw = d["raw"]
    if "violation" in d:
        parsed: Union[SubAnnotation, FormatViolation] = FormatViolation(
            ViolationKind(d["violation"]), d.get("detail", "")
        )
    elif "tool" in d:
        parsed = SubAnnotation(d["think"], ToolCall(TOOLS_BY_NAME[d["tool"]], d["arguments"]))
    else:
        parsed = SubAnnotation(d["think"], FinalAnswer(Label(d["answer"])))
    ref = None
    if "tool_result" in d:
        ref = ToolResultRef(sha256=d["tool_result"]["sha256"], path=d["tool_result"].get("path"))
    return Turn(
        raw=raw,
        parsed=parsed,
        tool_valid=d.get("tool_valid"),
        tool_result=ref,
        error=d.get("error"),
    )


_TRAJ_KEYS = {"sample_id", "label", "hint", "fast", "turns", "unterminated"}


def parse_trajectory(line: str) -> Trajectory:
    """Inverse of :func:`serialize_trajectory`. Raises ValueError on bad records."""
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"not valid JSON: {exc}") from exc
    if not isinstance(record, dict):
        raise ValueError("trajectory record must be a JSON object")
    unknown = set(record) - _TRAJ_KEYS
    if unknown:
        raise ValueError(f"unknown trajectory keys {sorted(unknown)}")
    try:
        fast_raw, fast = _fast_from_json(record["fast"])
        return Trajectory(
            sample_id=record["sample_id"],
            label=Label(record["label"]),
            hint=record.get("hint"),
            fast_raw=fast_raw,
            fast=fast,
            turns=[_turn_from_json(t) for t in record["turns"]],
            unterminated=bool(record.get("unterminated", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed trajectory record: {exc}") from exc


def read_trajectories(path) -> list[Trajectory]:
    """Read a trajectory JSONL file; error messages carry 1-based line numbers."""
    out = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(parse_trajectory(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out


# --------------------------------------------------------------------------
# Prompt assembly


FIRST_QUERY_TEXT = "Is this photo of a real person? (Do not use any tools)"

TOOL_GUIDANCE_TEXT = (
    "Wait, you should re-examine the image and give the final answer (use tools if needed)."
)

FORMAT_DECL_TEXT = (
    "Think first, call tools if needed, then answer. Format strictly as: "
    "<think> ... </think> <tool_call> ... </tool_call> (if tools needed) "
    "<answer>(<Spoof>/<Real>)</answer>"
)

SYSTEM_PROMPT_TEXT = (
    "## Role & Mission\n"
    "You are a face forensics expert. Your mission is to classify an image as "
    "either 'Real' or 'Spoof' by analyzing evidence strictly within the "
    "**facial region**, focusing only on physical presentation attack."
)


class PromptStage(Enum):
    FIRST_QUERY = "first_query"
    TOOL_RESULT = "tool_result"
    TOOL_GUIDANCE = "tool_guidance"
    FORMAT_DECL = "format_decl"


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    image: Raster


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class PromptContext:
    """Inputs a prompt stage may need; builders reject stages missing theirs."""

    image: Raster | None = None
    hint: str | None = None
    guidance: str | None = None


def build_prompts(stage: PromptStage, ctx: PromptContext | None = None) -> list[Part]:
    """Assemble the ordered message parts for one protocol stage.

    FIRST_QUERY: the investigated image plus the fixed first-round query;
    annotation mode appends the hint text as a further part, training /
    inference mode passes no hint. TOOL_RESULT: the rendered tool image plus
    the expert guidance line when one exists (ZoomIn results carry none).
    TOOL_GUIDANCE / FORMAT_DECL: fixed text only.
    """
    ctx = ctx or PromptContext()
    if stage is PromptStage.FIRST_QUERY:
        if ctx.image is None:
            raise MissingContext("FIRST_QUERY needs the image under investigation")
        parts: list[Part] = [ImagePart(ctx.image), TextPart(FIRST_QUERY_TEXT)]
        if ctx.hint is not None:
            parts.append(TextPart(ctx.hint))
        return parts
    if stage is PromptStage.TOOL_RESULT:
        if ctx.image is None:
            raise MissingContext("TOOL_RESULT needs the rendered tool image")
        parts = [ImagePart(ctx.image)]
        if ctx.guidance is not None:
            parts.append(TextPart(ctx.guidance))
        return parts
    if stage is PromptStage.TOOL_GUIDANCE:
        return [TextPart(TOOL_GUIDANCE_TEXT)]
    if stage is PromptStage.FORMAT_DECL:
        return [TextPart(FORMAT_DECL_TEXT)]
    raise MissingContext(f"unknown prompt stage {stage!r}")  # pragma: no cover


def iter_tool_calls(traj: Trajectory) -> Iterable[tuple[int, ToolCall, Turn]]:
    """Yield (turn_index, call, turn) for every parse-valid tool call."""
    for i, turn in enumerate(traj.turns):
        if isinstance(turn.parsed, SubAnnotation) and isinstance(turn.parsed.action, ToolCall):
            yield i, turn.parsed.action, turn
