"""FAS evaluation metrics over (score, label) pairs.

Scores are real-face confidences (higher = more Real); the decision rule at
a threshold is ``Real iff score >= threshold`` (ties accepted as Real).
FAR is the fraction of spoofs accepted, FRR the fraction of reals rejected,
HTER their mean. AUC is the Mann-Whitney pair statistic
``P(real > spoof) + 0.5 * P(tie)``, which equals the trapezoidal ROC area
and is exact under ties. The EER threshold scan evaluates midpoints between
adjacent distinct scores plus the two infinities, breaking |FAR-FRR| ties
toward smaller HTER and then smaller threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IoError, MissingClass, NonFiniteError
from .trajectory import Label


@dataclass(frozen=True)
class ScoredSample:
    id: str
    score: float
    label: Label

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise NonFiniteError(f"sample {self.id!r}: score must be finite, got {self.score!r}")


def _split(samples: Sequence[ScoredSample]) -> tuple[np.ndarray, np.ndarray]:
    reals = np.array([s.score for s in samples if s.label is Label.REAL], dtype=np.float64)
    spoofs = np.array([s.score for s in samples if s.label is Label.SPOOF], dtype=np.float64)
    if reals.size == 0 or spoofs.size == 0:
        raise MissingClass("metrics need at least one sample of each class")
    return reals, spoofs


def far_frr(samples: Sequence[ScoredSample], threshold: float) -> tuple[float, float]:
    """(FAR, FRR) at the given threshold (Real iff score >= threshold)."""
    reals, spoofs = _split(samples)
    far = float(np.count_nonzero(spoofs >= threshold)) / spoofs.size
    frr = float(np.count_nonzero(reals < threshold)) / reals.size
    return far, frr


def hter(samples: Sequence[ScoredSample], threshold: float) -> float:
    """Half total error rate: (FAR + FRR) / 2."""
    far, frr = far_frr(samples, threshold)
    return (far + frr) / 2.0


def auc(samples: Sequence[ScoredSample]) -> float:
    """ROC area by pair counting: wins + half-ties over all real/spoof pairs."""
    reals, spoofs = _split(samples)
    spoofs_sorted = np.sort(spoofs)
    # for each real score: #spoofs strictly below, and #spoofs equal
    below = np.searchsorted(spoofs_sorted, reals, side="left")
    below_or_equal = np.searchsorted(spoofs_sorted, reals, side="right")
    wins = float(below.sum())
    ties = float((below_or_equal - below).sum())
    return (wins + 0.5 * ties) / (reals.size * spoofs_sorted.size)


def eer_threshold(samples: Sequence[ScoredSample]) -> tuple[float, float]:
    """(threshold, eer) minimizing |FAR - FRR| over the candidate grid.

    ``eer`` is reported as the HTER at the chosen threshold (the midpoint
    of FAR/FRR is the standard EER estimate on a finite grid).
    """
    reals, spoofs = _split(samples)
    scores = np.unique(np.concatenate([reals, spoofs]))
    # midpoints between adjacent distinct scores cover every achievable
    # confusion matrix except reject-all (+inf); -inf is accept-all
    candidates = [-math.inf]
    candidates.extend(((scores[:-1] + scores[1:]) / 2.0).tolist())
    candidates.append(math.inf)

    best: tuple[float, float, float] | None = None  # |far-frr|, hter, threshold
    for thr in candidates:
        far = float(np.count_nonzero(spoofs >= thr)) / spoofs.size
        frr = float(np.count_nonzero(reals < thr)) / reals.size
        key = (abs(far - frr), (far + frr) / 2.0, thr)
        if best is None or key < best:
            best = key
    assert best is not None
    return best[2], best[1]


# --------------------------------------------------------------------------
# Score files


def read_scores(path: str | Path) -> list[ScoredSample]:
    """Score JSONL: {"id", "score", "label"} per line."""
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
                obj = json.loads(line)
                unknown = set(obj) - {"id", "score", "label"}
                if unknown:
                    raise ValueError(f"unknown keys {sorted(unknown)}")
                out.append(ScoredSample(str(obj["id"]), float(obj["score"]), Label(obj["label"])))
            except (ValueError, KeyError, TypeError, NonFiniteError) as exc:
                raise IoError(f"{path}:{lineno}: {exc}") from exc
    return out
