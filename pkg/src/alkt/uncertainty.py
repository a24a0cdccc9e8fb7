"""Teacher/student disagreement scores, classic baselines and temperature scaling."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .distill import transfer_loss_per_sample
from .nets import ForwardResult, concat_activations

METRICS = ("kl-posterior", "mse-posterior", "mse-feature", "l1-feature", "attention-distance")
BASELINES = ("entropy", "margin", "least-confidence")
KL_EPS = 1e-12


class UncertaintyScore(NamedTuple):
    index: int
    value: float


@dataclass(frozen=True)
class CalibrationModel:
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    def apply(self, logits: np.ndarray) -> np.ndarray:
        return logits / self.temperature


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    return T._softmax_np(np.asarray(logits, dtype=np.float64), axis)


def kl_divergence(p, q, eps: float = KL_EPS) -> np.ndarray:
    """KL(p || q) along the last axis, flooring both arguments at ``eps``.

    Accepts single vectors or stacks of rows.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"kl_divergence: length mismatch {p.shape} vs {q.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    pf = np.maximum(p, eps)
    qf = np.maximum(q, eps)
    return (p * (np.log(pf) - np.log(qf))).sum(axis=-1)


def probability_mse(p, q, class_axis: int = 1) -> np.ndarray:
    """Per-sample mean squared difference of two posterior arrays.

    Works for (B, K) posteriors and for (B, K, H, W) per-pixel probability
    maps alike; the mean runs over every non-sample axis.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"probability_mse: shape mismatch {p.shape} vs {q.shape}")
    d = (p - q) ** 2
    return d.reshape(d.shape[0], -1).mean(axis=1)


def _logits(x) -> np.ndarray:
    if isinstance(x, ForwardResult):
        x = x.logits
    return x.data if isinstance(x, T.Tensor) else np.asarray(x, dtype=np.float64)


def score(
    teacher_out: ForwardResult,
    student_out: ForwardResult,
    metric: str = "kl-posterior",
    calibration: tuple[CalibrationModel, CalibrationModel] | None = None,
    eps: float = KL_EPS,
) -> np.ndarray:
    """Disagreement of a paired teacher/student forward pass, one value per sample.

    ``kl-posterior`` is KL(teacher || student) over softmax outputs.
    ``calibration`` is a (teacher, student) pair of temperatures applied to
    each model's logits before the softmax; it only affects the posterior
    metrics.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown uncertainty metric {metric!r}; choose from {METRICS}")
    if metric in ("kl-posterior", "mse-posterior"):
        zt, zs = _logits(teacher_out), _logits(student_out)
        if calibration is not None:
            zt, zs = calibration[0].apply(zt), calibration[1].apply(zs)
        pt, ps = softmax(zt), softmax(zs)
        if metric == "kl-posterior":
            return kl_divergence(pt, ps, eps)
        return probability_mse(pt, ps)
    if metric == "attention-distance":
        with T.no_grad():
            return transfer_loss_per_sample(
                student_out.activations, teacher_out.activations, "attention"
            ).data.copy()
    ft = concat_activations(teacher_out.activations)
    fs = concat_activations(student_out.activations)
    if ft.shape != fs.shape:
        raise ValueError(f"score: feature shapes differ {ft.shape} vs {fs.shape}")
    if metric == "mse-feature":
        return ((ft - fs) ** 2).mean(axis=1)
    return np.abs(ft - fs).mean(axis=1)


def baseline_scores(posteriors, kind: str) -> np.ndarray:
    """Single-model uncertainty, oriented so larger means more uncertain."""
    p = np.asarray(posteriors, dtype=np.float64)
    if kind == "entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        return -terms.sum(axis=-1)
    if kind == "margin":
        top2 = np.sort(p, axis=-1)[..., -2:]
        return -(top2[..., 1] - top2[..., 0])
    if kind == "least-confidence":
        return 1.0 - p.max(axis=-1)
    raise ValueError(f"unknown baseline {kind!r}; choose from {BASELINES}")


DEFAULT_GRID = np.round(np.arange(1, 101) * 0.05, 10)


def mean_nll(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def fit_temperature(logits, labels, grid: Sequence[float] | None = None) -> CalibrationModel:
    """Grid search for the temperature minimizing validation NLL.

    Ties go to the smallest temperature.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if len(logits) == 0:
        raise ValueError("fit_temperature: validation set is empty")
    grid = DEFAULT_GRID if grid is None else np.sort(np.asarray(grid, dtype=np.float64))
    nll = np.array([mean_nll(logits, labels, t) for t in grid])
    return CalibrationModel(float(grid[int(np.argmin(nll))]))


def write_scores_csv(path, indices, scores, metric: str) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "score", "metric"])
        for i, s in zip(indices, scores):
            w.writerow([int(i), repr(float(s)), metric])


def read_scores_csv(path) -> list[UncertaintyScore]:
    with open(Path(path), newline="") as fh:
        return [UncertaintyScore(int(r["index"]), float(r["score"])) for r in csv.DictReader(fh)]
