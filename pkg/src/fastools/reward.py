"""Reward shaping for diverse-tool group-relative policy optimization.

The total reward for one rollout decomposes into three weighted parts::

    R = beta_fast * R_fast + beta_rsn * R_rsn + beta_tool * R_tool

* ``R_fast``  — first-round answer: format penalty (-1) for a malformed fast
  answer, else a correctness indicator (1 correct / 0 wrong).
* ``R_rsn``   — reasoning round: format term is -1 if any turn is malformed,
  any tool call is invalid, or the final answer is missing (or not the
  single last turn); otherwise 0 plus the final-correctness indicator.
* ``R_tool``  — tool-diversity score ``F_tool`` gated by final correctness.
  ``F_tool = sum_k gamma_k * clamp(count_k)`` where ``count_k`` counts
  *valid* calls of tool k and ``clamp`` depends on the mode:
  ``LiteralMax`` uses ``max(count_k, 1)`` (every tool contributes at least
  ``gamma_k``, repetition keeps earning); ``CappedMin`` — the default —
  uses ``min(count_k, 1)`` (one credit per distinct tool), which matches
  the diversity intent. Both modes are kept selectable.

``CLS_final`` is the class of the first parse-valid answer turn; when no
such turn exists every indicator comparing against it is 0. A tool call
counts as valid only if it parsed *and* executed; execution outcomes are
read from the recorded per-turn flags when present, otherwise schema
validation of the arguments is used as the offline fallback.

Group advantages follow the GRPO convention: per-group standardization with
the population standard deviation, and identically zero advantages when the
group is (numerically) degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .errors import GroupTooSmall, InvalidArgument, NonFiniteError
from .trajectory import (
    FastAnswer,
    FinalAnswer,
    FormatViolation,
    Label,
    SubAnnotation,
    ToolCall,
    Trajectory,
    Turn,
)
from .vistools import TOOL_ORDER, ToolId, validate_tool_args


class ClampMode(Enum):
    LITERAL_MAX = "literal_max"
    CAPPED_MIN = "capped_min"


@dataclass(frozen=True)
class RewardConfig:
    beta_fast: float = 0.1
    beta_rsn: float = 0.5
    beta_tool: float = 0.4
    gamma: tuple[float, ...] = (0.2,) * len(TOOL_ORDER)
    clamp_mode: ClampMode = ClampMode.CAPPED_MIN
    group_size: int = 8
    std_epsilon: float = 1e-8

    def __post_init__(self):
        if len(self.gamma) != len(TOOL_ORDER):
            raise ValueError(f"gamma must have {len(TOOL_ORDER)} entries, got {len(self.gamma)}")
        for name in ("beta_fast", "beta_rsn", "beta_tool"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if any((not np.isfinite(g)) or g < 0 for g in self.gamma):
            raise ValueError(f"gamma entries must be finite and >= 0, got {self.gamma}")
        if self.group_size < 2:
            raise ValueError(f"group_size must be >= 2, got {self.group_size}")


@dataclass
class RewardBreakdown:
    r_fast: float
    r_rsn: float
    f_tool: float
    r_tool: float
    total: float
    fast_fmt_ok: bool
    rsn_fmt_ok: bool
    per_tool_counts: dict[ToolId, int] = field(default_factory=dict)
    valid_flags: list[bool] = field(default_factory=list)
    final_cls: Label | None = None


def _call_is_valid(turn: Turn, action: ToolCall) -> bool:
    """Recorded execution outcome if present, else offline schema validation."""
    if turn.tool_valid is not None:
        return bool(turn.tool_valid)
    try:
        validate_tool_args(action.tool, action.args)
    except InvalidArgument:
        return False
    return True


def _turn_validity(traj: Trajectory) -> list[bool]:
    """v^(l) per turn: True only for parse-valid tool calls that are valid."""
    flags = []
    for turn in traj.turns:
        if isinstance(turn.parsed, SubAnnotation) and isinstance(turn.parsed.action, ToolCall):
            flags.append(_call_is_valid(turn, turn.parsed.action))
        else:
            flags.append(False)
    return flags


def _reasoning_format_ok(traj: Trajectory, validity: list[bool]) -> bool:
    """Strict reasoning format: every turn parses, every call valid, exactly
    one final answer and it is the last turn."""
    answer_positions = []
    for i, turn in enumerate(traj.turns):
        parsed = turn.parsed
        if isinstance(parsed, FormatViolation):
            return False
        if isinstance(parsed.action, ToolCall):
            if not validity[i]:
                return False
        else:
            answer_positions.append(i)
    if len(answer_positions) != 1 or answer_positions[0] != len(traj.turns) - 1:
        return False
    return True


def score_fast(fast: Union[FastAnswer, FormatViolation], label: Label) -> float:
    """First-round reward: -1 malformed; else the correctness indicator."""
    if isinstance(fast, FormatViolation):
        return -1.0
    return 1.0 if fast.cls == label else 0.0


def score_reasoning(traj: Trajectory, label: Label) -> float:
    """Reasoning reward: fmt in {-1, 0} plus the gated correctness indicator."""
    validity = _turn_validity(traj)
    if not _reasoning_format_ok(traj, validity):
        return -1.0
    return 1.0 if traj.final_answer() == label else 0.0


def per_tool_counts(traj: Trajectory) -> dict[ToolId, int]:
    """count_k: number of *valid* calls per tool (all reasoning turns)."""
    validity = _turn_validity(traj)
    counts = {tool: 0 for tool in TOOL_ORDER}
    for i, turn in enumerate(traj.turns):
        if validity[i]:
            counts[turn.parsed.action.tool] += 1
    return counts


def tool_diversity(traj: Trajectory, cfg: RewardConfig | None = None) -> float:
    """F_tool under the configured clamp mode (ungated)."""
    cfg = cfg or RewardConfig()
    counts = per_tool_counts(traj)
    total = 0.0
    for k, tool in enumerate(TOOL_ORDER):
        c = counts[tool]
        clamped = max(c, 1) if cfg.clamp_mode is ClampMode.LITERAL_MAX else min(c, 1)
        total += cfg.gamma[k] * clamped
    return total


def score_tool(traj: Trajectory, label: Label, cfg: RewardConfig | None = None) -> float:
    """R_tool: diversity score gated by final correctness (0 when CLS_final
    is undefined or wrong)."""
    cfg = cfg or RewardConfig()
    if traj.final_answer() != label:
        return 0.0
    return tool_diversity(traj, cfg)


def total_reward(traj: Trajectory, label: Label, cfg: RewardConfig | None = None) -> RewardBreakdown:
    """Full weighted reward with its component breakdown."""
    cfg = cfg or RewardConfig()
    validity = _turn_validity(traj)
    r_fast = score_fast(traj.fast, label)
    rsn_ok = _reasoning_format_ok(traj, validity)
    final = traj.final_answer()
    r_rsn = (-1.0) if not rsn_ok else (1.0 if final == label else 0.0)
    f_tool = tool_diversity(traj, cfg)
    r_tool = f_tool if final == label else 0.0
    total = cfg.beta_fast * r_fast + cfg.beta_rsn * r_rsn + cfg.beta_tool * r_tool
    return RewardBreakdown(
        r_fast=r_fast,
        r_rsn=r_rsn,
        f_tool=f_tool,
        r_tool=r_tool,
        total=total,
        fast_fmt_ok=not isinstance(traj.fast, FormatViolation),
        rsn_fmt_ok=rsn_ok,
        per_tool_counts=per_tool_counts(traj),
        valid_flags=validity,
        final_cls=final,
    )


def group_advantages(rewards: Sequence[float], std_epsilon: float = 1e-8) -> np.ndarray:
    """Standardize one rollout group: A_i = (R_i - mean) / population std.

    Degenerate groups (std below ``std_epsilon``) get all-zero advantages
    rather than amplified noise.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1:
        raise ValueError(f"rewards must be a flat vector, got shape {r.shape}")
    if r.size < 2:
        raise GroupTooSmall(f"advantage normalization needs G >= 2, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise NonFiniteError("rewards contain non-finite values")
    mean = r.mean()
    std = r.std()  # population (ddof=0)
    if std < std_epsilon:
        return np.zeros_like(r)
    return (r - mean) / std


def st_grpo_reward(traj: Trajectory, label: Label) -> float:
    """Single-tool baseline reward: R = fmt + acc + 1{valid ZoomIn} * 1{acc>0}.

    Only ZoomIn is permitted: any call of another tool is an invalid call
    and drives fmt to -1. Note ``acc`` is *not* gated by fmt here — a
    correct final answer still earns its point under a format penalty.
    """
    fmt = 0.0
    has_valid_zoom = False
    answer_positions = []
    for i, turn in enumerate(traj.turns):
        parsed = turn.parsed
        if isinstance(parsed, FormatViolation):
            fmt = -1.0
            continue
        if isinstance(parsed.action, ToolCall):
            if parsed.action.tool is not ToolId.ZOOM_IN:
                fmt = -1.0
            elif _call_is_valid(turn, parsed.action):
                has_valid_zoom = True
            else:
                fmt = -1.0
        else:
            answer_positions.append(i)
    if len(answer_positions) != 1 or answer_positions[0] != len(traj.turns) - 1:
        fmt = -1.0
    acc = 1.0 if traj.final_answer() == label else 0.0
    bonus = 1.0 if (has_valid_zoom and acc > 0) else 0.0
    return fmt + acc + bonus


def max_total_reward(cfg: RewardConfig, l_max: int) -> float:
    """Tight upper bound on the total reward for trajectories of <= l_max turns.

    CappedMin: at most one credit per distinct tool, but only
    ``min(l_max - 1, K)`` distinct tools fit before the mandatory answer
    turn. LiteralMax: unused tools still contribute gamma_k, and stacking
    all ``l_max - 1`` calls on the highest-gamma tool maximizes the sum.
    """
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    calls = l_max - 1  # last turn must be the final answer
    gammas = sorted(cfg.gamma, reverse=True)
    if cfg.clamp_mode is ClampMode.CAPPED_MIN:
        f_max = sum(gammas[: min(calls, len(gammas))])
    else:
        f_max = sum(cfg.gamma) + (max(cfg.gamma) * max(calls - 1, 0) if calls >= 1 else 0.0)
    return cfg.beta_fast * 1.0 + cfg.beta_rsn * 1.0 + cfg.beta_tool * f_max
