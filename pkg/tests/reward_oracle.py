"""A deliberately naive re-statement of the reward rules, used as an oracle.

Written as a direct transcription of the scoring contract — plain loops,
no shared helpers with the package — so that agreement with
``fastools.reward`` is a meaningful check rather than a tautology.
"""

from fastools.errors import InvalidArgument
from fastools.reward import ClampMode, RewardConfig
from fastools.trajectory import (
    FastAnswer,
    FinalAnswer,
    FormatViolation,
    SubAnnotation,
    ToolCall,
    Trajectory,
)
from fastools.vistools import TOOL_ORDER, validate_tool_args


def oracle_fast(traj: Trajectory) -> float:
    if not isinstance(traj.fast, FastAnswer):
        return -1.0
    return 1.0 if traj.fast.cls == traj.label else 0.0


def _oracle_call_valid(turn) -> bool:
    if turn.tool_valid is not None:
        return bool(turn.tool_valid)
    try:
        validate_tool_args(turn.parsed.action.tool, turn.parsed.action.args)
        return True
    except InvalidArgument:
        return False


def oracle_breakdown(traj: Trajectory, cfg: RewardConfig | None = None) -> dict:
    """Score one trajectory from first principles; returns every component."""
    cfg = cfg or RewardConfig()
    label = traj.label

    r_fast = oracle_fast(traj)

    # one pass over the reasoning turns, tracking everything the rules need
    counts = {tool: 0 for tool in TOOL_ORDER}
    answer_indices = []
    first_answer_cls = None
    any_violation = False
    any_invalid_call = False
    for i, turn in enumerate(traj.turns):
        parsed = turn.parsed
        if isinstance(parsed, FormatViolation):
            any_violation = True
        elif isinstance(parsed, SubAnnotation) and isinstance(parsed.action, ToolCall):
            if _oracle_call_valid(turn):
                counts[parsed.action.tool] += 1
            else:
                any_invalid_call = True
        elif isinstance(parsed, SubAnnotation) and isinstance(parsed.action, FinalAnswer):
            answer_indices.append(i)
            if first_answer_cls is None:
                first_answer_cls = parsed.action.cls

    answer_is_single_last = len(answer_indices) == 1 and answer_indices[0] == len(traj.turns) - 1
    rsn_fmt_bad = any_violation or any_invalid_call or not answer_is_single_last
    if rsn_fmt_bad:
        r_rsn = -1.0
    else:
        r_rsn = 1.0 if first_answer_cls == label else 0.0

    f_tool = 0.0
    for k, tool in enumerate(TOOL_ORDER):
        c = counts[tool]
        if cfg.clamp_mode is ClampMode.LITERAL_MAX:
            f_tool += cfg.gamma[k] * (c if c > 1 else 1)
        else:
            f_tool += cfg.gamma[k] * (1 if c >= 1 else 0)

    correct_final = first_answer_cls is not None and first_answer_cls == label
    r_tool = f_tool if correct_final else 0.0

    total = cfg.beta_fast * r_fast + cfg.beta_rsn * r_rsn + cfg.beta_tool * r_tool
    return {
        "r_fast": r_fast,
        "r_rsn": r_rsn,
        "f_tool": f_tool,
        "r_tool": r_tool,
        "total": total,
    }


def oracle_st_grpo(traj: Trajectory) -> float:
    """Single-tool baseline reward transcription."""
    fmt = 0.0
    saw_valid_zoom = False
    answer_indices = []
    for i, turn in enumerate(traj.turns):
        parsed = turn.parsed
        if isinstance(parsed, FormatViolation):
            fmt = -1.0
        elif isinstance(parsed.action, ToolCall):
            if parsed.action.tool.value != "ZoomInTool":
                fmt = -1.0
            elif _oracle_call_valid(turn):
                saw_valid_zoom = True
            else:
                fmt = -1.0
        else:
            answer_indices.append(i)
    if not (len(answer_indices) == 1 and answer_indices[0] == len(traj.turns) - 1):
        fmt = -1.0
    first = None
    for turn in traj.turns:
        if isinstance(turn.parsed, SubAnnotation) and isinstance(turn.parsed.action, FinalAnswer):
            first = turn.parsed.action.cls
            break
    acc = 1.0 if first == traj.label else 0.0
    bonus = 1.0 if saw_valid_zoom and acc > 0 else 0.0
    return fmt + acc + bonus
