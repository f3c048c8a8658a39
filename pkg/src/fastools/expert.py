"""Per-tool expert scorers and the guidance-text generator.

An expert maps one tool-result raster to the probability that it shows
spoof-related artifacts. Here the expert is a logistic regression over a
fixed 84-dimensional texture/frequency feature vector:

* 64-bin intensity histogram, L1-normalized;
* mean and population variance of |gx| and |gy| (central differences with
  edge replication), 4 values;
* 16-bin gradient-magnitude histogram over [0, 255*sqrt(2)], L1-normalized.

Training is full-batch-shuffled mini-batch Adam, seeded and deterministic:
the same seed and data reproduce bitwise-identical weights. Prediction is
``sigmoid(w . phi(x) + b)`` clipped to the open interval (0, 1).

The expert's verdict reaches the model only as text::

    This is the result of {ToolName}. The expert predicts {P}% there's spoof trace

with P = round-half-up(100 p). ZoomIn has no expert: it relocates pixels
rather than exposing artifacts, so its results carry no guidance line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateLabels,
    FeatureSpecMismatch,
    ImageTooSmall,
    InsufficientData,
    InvalidArgument,
    InvalidProbability,
    IoError,
)
from .imaging import Raster
from .vistools import ANALYSIS_TOOLS, ToolId, central_gradients

FEATURE_SPEC_V1 = "intensity64-gradstats4-maghist16/v1"
FEATURE_DIM = 84

_MAG_MAX = 255.0 * np.sqrt(2.0)
_PROB_FLOOR = 1e-12


def extract_features(img: Raster) -> np.ndarray:
    """84-dim feature vector of a grayscale raster (see module docstring)."""
    if img.channels != 1:
        raise ValueError("expert features are defined on grayscale rasters only")
    if img.height < 3 or img.width < 3:
        raise ImageTooSmall(f"expert features need at least 3x3, got {img.width}x{img.height}")
    pixels = img.data
    n = pixels.size

    intensity = np.bincount((pixels >> 2).ravel(), minlength=64).astype(np.float64) / n

    gx, gy = central_gradients(pixels.astype(np.float64))
    ax, ay = np.abs(gx), np.abs(gy)
    grad_stats = np.array([ax.mean(), ax.var(), ay.mean(), ay.var()], dtype=np.float64)

    mag = np.hypot(gx, gy)
    bins = np.minimum((mag / _MAG_MAX * 16.0).astype(np.intp), 15)
    mag_hist = np.bincount(bins.ravel(), minlength=16).astype(np.float64) / n

    return np.concatenate([intensity, grad_stats, mag_hist])


def _sigmoid(z: np.ndarray | float) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True, eq=False)
class ExpertModel:
    tool: ToolId
    weights: np.ndarray
    bias: float
    feature_spec: str = FEATURE_SPEC_V1

    def __post_init__(self):
        if self.tool is ToolId.ZOOM_IN:
            raise ValueError("ZoomIn has no expert")
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 0.001
    seed: int = 0
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class TrainResult:
    model: ExpertModel
    train_accuracy: float
    #: BCE before training, then after each epoch (epochs + 1 entries).
    loss_history: list[float]


def _bce(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float) -> float:
    p = np.clip(_sigmoid(X @ w + b), _PROB_FLOOR, 1.0 - _PROB_FLOOR)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def train_expert(
    tool: ToolId,
    data: Sequence[tuple[Raster, int]],
    cfg: TrainConfig | None = None,
) -> TrainResult:
    """Fit a logistic-regression expert for ``tool`` on (raster, label) pairs.

    Labels are 1 = spoof trace present, 0 = absent. Needs both classes
    (DegenerateLabels) with at least two examples each (InsufficientData).
    Deterministic for a fixed (data, cfg.seed).
    """
    cfg = cfg or TrainConfig()
    if tool is ToolId.ZOOM_IN:
        raise InvalidArgument("ZoomIn has no expert")
    if not data:
        raise InsufficientData("no training examples")
    labels = [int(lab) for _, lab in data]
    if any(lab not in (0, 1) for lab in labels):
        raise ValueError(f"labels must be 0/1, got {sorted(set(labels))}")
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("training data contains a single class")
    if n_pos < 2 or n_neg < 2:
        raise InsufficientData(f"need >= 2 examples per class, got {n_neg} neg / {n_pos} pos")

    X = np.stack([extract_features(img) for img, _ in data])
    y = np.asarray(labels, dtype=np.float64)
    n = X.shape[0]

    rng = np.random.default_rng(cfg.seed)
    w = np.zeros(X.shape[1], dtype=np.float64)
    b = 0.0
    m_w = np.zeros_like(w)
    v_w = np.zeros_like(w)
    m_b = 0.0
    v_b = 0.0
    step = 0
    losses = [_bce(X, y, w, b)]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            g = _sigmoid(X[idx] @ w + b) - y[idx]
            grad_w = X[idx].T @ g / idx.size
            grad_b = float(g.mean())
            step += 1
            m_w = cfg.beta1 * m_w + (1.0 - cfg.beta1) * grad_w
            v_w = cfg.beta2 * v_w + (1.0 - cfg.beta2) * grad_w**2
            m_b = cfg.beta1 * m_b + (1.0 - cfg.beta1) * grad_b
            v_b = cfg.beta2 * v_b + (1.0 - cfg.beta2) * grad_b**2
            bc1 = 1.0 - cfg.beta1**step
            bc2 = 1.0 - cfg.beta2**step
            w = w - cfg.lr * (m_w / bc1) / (np.sqrt(v_w / bc2) + cfg.adam_eps)
            b = b - cfg.lr * (m_b / bc1) / (np.sqrt(v_b / bc2) + cfg.adam_eps)
        losses.append(_bce(X, y, w, b))

    accuracy = float(np.mean((_sigmoid(X @ w + b) >= 0.5) == (y == 1.0)))
    model = ExpertModel(tool=tool, weights=w, bias=float(b))
    return TrainResult(model=model, train_accuracy=accuracy, loss_history=losses)


def predict(model: ExpertModel, img: Raster) -> float:
    """Spoof-trace probability in the open interval (0, 1)."""
    if model.feature_spec != FEATURE_SPEC_V1:
        raise FeatureSpecMismatch(f"unsupported feature spec {model.feature_spec!r}")
    phi = extract_features(img)
    if model.weights.shape != phi.shape:
        raise FeatureSpecMismatch(
            f"model expects {model.weights.shape[0]} features, extractor produced {phi.shape[0]}"
        )
    p = float(_sigmoid(float(np.dot(model.weights, phi)) + model.bias))
    return float(np.clip(p, _PROB_FLOOR, 1.0 - _PROB_FLOOR))


def guidance_text(tool: ToolId, p: float) -> str:
    """The verbatim guidance line, percent rounded half up."""
    if tool not in ANALYSIS_TOOLS:
        raise InvalidArgument(f"{tool.value} results carry no expert guidance")
    if not np.isfinite(p) or p < 0.0 or p > 1.0:
        raise InvalidProbability(f"p must be finite in [0, 1], got {p!r}")
    pct = int(np.floor(100.0 * p + 0.5))
    return f"This is the result of {tool.value}. The expert predicts {pct}% there's spoof trace"


def zero_expert(tool: ToolId) -> ExpertModel:
    """An uninformative expert (predicts exactly 0.5 everywhere)."""
    return ExpertModel(tool=tool, weights=np.zeros(FEATURE_DIM), bias=0.0)


# --------------------------------------------------------------------------
# Model files


def expert_to_json(model: ExpertModel) -> dict:
    return {
        "tool": model.tool.value,
        "feature_spec": model.feature_spec,
        "weights": [float(v) for v in model.weights],
        "bias": float(model.bias),
    }


def expert_from_json(obj: dict) -> ExpertModel:
    try:
        tool = ToolId(obj["tool"])
        return ExpertModel(
            tool=tool,
            weights=np.asarray(obj["weights"], dtype=np.float64),
            bias=float(obj["bias"]),
            feature_spec=str(obj["feature_spec"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed expert model record: {exc}") from exc


def save_expert(model: ExpertModel, path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(expert_to_json(model), fh)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_expert(path: str | Path) -> ExpertModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    return expert_from_json(obj)
