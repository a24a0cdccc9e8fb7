"""Attention-transfer loss and joint teacher/student training."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .nets import BlockModel
from .optim import SGD, SgdConfig
from .tensor import Tensor

TRANSFER_METRICS = ("attention", "mse-feature", "l1-feature", "kl-posterior")


@dataclass(frozen=True)
class DistillConfig:
    lam: float = 100.0
    transfer_metric: str = "attention"
    epochs: int = 60
    batch_size: int = 32
    sgd: SgdConfig = field(default_factory=SgdConfig)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.transfer_metric not in TRANSFER_METRICS:
            raise ValueError(
                f"unknown transfer metric {self.transfer_metric!r}; choose from {TRANSFER_METRICS}"
            )
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


class TrainingDivergedError(FloatingPointError):
    pass


def attention_map(act: Tensor) -> Tensor:
    """Per-location sum of squared channel activations, flattened per sample.

    ``act`` is (B, C, *spatial) for conv features; a 2-D (B, units) input
    is read as one channel per unit location, so the map is the elementwise
    square.
    """
    if act.ndim == 2:
        return T.square(act)
    if act.ndim < 3:
        raise T.ShapeError(f"attention_map: expected (B, C, ...) input, got shape {act.shape}")
    return T.flatten(T.sum(T.square(act), axis=1))


def _per_block_distance(s: Tensor, t: Tensor, metric: str) -> Tensor:
    if metric == "attention":
        vs = T.l2_normalize(attention_map(s))
        vt = T.l2_normalize(attention_map(t))
        return T.l2_norm(vs - vt, axis=1)
    diff = T.flatten(s - t)
    n = diff.shape[1]
    if metric == "mse-feature":
        return T.sum(T.square(diff), axis=1) * (1.0 / n)
    if metric == "l1-feature":
        return T.sum(_abs(diff), axis=1) * (1.0 / n)
    raise ValueError(f"unknown transfer metric {metric!r}")


def _abs(x: Tensor) -> Tensor:
    s = np.sign(x.data)
    return Tensor._from_op(np.abs(x.data), (x,), lambda g: (g * s,))


def transfer_loss_per_sample(
    student_acts: Sequence[Tensor],
    teacher_acts: Sequence[Tensor],
    metric: str = "attention",
) -> Tensor:
    """Sum over matched blocks of the per-sample block distance, shape (B,).

    For ``attention`` the block distance is the L2 distance between the
    L2-normalized attention vectors, so each block contributes at most 2.
    """
    if len(student_acts) != len(teacher_acts):
        raise T.ShapeError(
            f"transfer_loss: block counts differ ({len(student_acts)} vs {len(teacher_acts)})"
        )
    total = None
    for s, t in zip(student_acts, teacher_acts):
        if s.shape != t.shape:
            raise T.ShapeError(f"transfer_loss: incompatible shapes {s.shape} and {t.shape}")
        d = _per_block_distance(s, t, metric)
        total = d if total is None else total + d
    return total


def transfer_loss(student_acts, teacher_acts, metric: str = "attention") -> Tensor:
    """Batch mean of :func:`transfer_loss_per_sample`."""
    return T.mean(transfer_loss_per_sample(student_acts, teacher_acts, metric))


def kl_posterior_loss(student_logits: Tensor, teacher_logits: np.ndarray) -> Tensor:
    p_t = T._softmax_np(teacher_logits)
    log_t = np.log(np.maximum(p_t, 1e-12))
    log_s = T.log_softmax(student_logits)
    per = T.sum((log_s * -1.0 + log_t) * p_t, axis=1)
    return T.mean(per)


@dataclass
class TrainReport:
    teacher_loss: list[float] = field(default_factory=list)
    student_loss: list[float] = field(default_factory=list)
    transfer_loss: list[float] = field(default_factory=list)
    teacher_accuracy: list[float] = field(default_factory=list)
    student_accuracy: list[float] = field(default_factory=list)
    final_teacher_accuracy: float = float("nan")
    final_student_accuracy: float = float("nan")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> TrainReport:
        return cls(**json.loads(text))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_cycle(
    teacher: BlockModel,
    student: BlockModel | None,
    x: np.ndarray,
    y: np.ndarray,
    cfg: DistillConfig,
    seed: int,
) -> TrainReport:
    """Train the teacher on cross-entropy and the student on CE + lambda * transfer.

    Both models see the same shuffled batches.  Teacher features enter the
    transfer term detached, so no gradient reaches the teacher from it.
    Passing ``student=None`` trains the teacher alone along the identical
    trajectory.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if len(x) == 0:
        raise ValueError("train_cycle: labeled set is empty")
    if len(x) != len(y):
        raise T.ShapeError(f"train_cycle: incompatible shapes {x.shape} and {y.shape}")
    if student is not None and len(student.blocks) != len(teacher.blocks):
        raise T.ShapeError("train_cycle: teacher and student block counts differ")

    rng = np.random.default_rng(seed)
    opt_t = SGD(teacher.parameters(), cfg.sgd)
    opt_s = SGD(student.parameters(), cfg.sgd) if student is not None else None
    report = TrainReport()

    for epoch in range(cfg.epochs):
        sums = np.zeros(5)
        for b, idx in enumerate(_batches(len(x), cfg.batch_size, rng)):
            xb, yb = Tensor(x[idx]), y[idx]
            out_t = teacher.forward(xb)
            loss_t = T.cross_entropy(T.log_softmax(out_t.logits), yb)
            _check(loss_t, "teacher", epoch, b)
            loss_t.backward()
            opt_t.step(epoch, cfg.epochs)
            k = len(idx)
            sums[0] += loss_t.item() * k
            sums[3] += (out_t.logits.data.argmax(1) == yb).sum()

            if student is None:
                continue
            out_s = student.forward(xb)
            task = T.cross_entropy(T.log_softmax(out_s.logits), yb)
            if cfg.lam == 0:
                trans = None
                loss_s = task
            else:
                if cfg.transfer_metric == "kl-posterior":
                    trans = kl_posterior_loss(out_s.logits, out_t.logits.data)
                else:
                    frozen = [a.detach() for a in out_t.activations]
                    trans = transfer_loss(out_s.activations, frozen, cfg.transfer_metric)
                loss_s = task + trans * cfg.lam
            _check(loss_s, "student", epoch, b)
            loss_s.backward()
            opt_s.step(epoch, cfg.epochs)
            sums[1] += loss_s.item() * k
            sums[2] += (trans.item() if trans is not None else 0.0) * k
            sums[4] += (out_s.logits.data.argmax(1) == yb).sum()

        n = len(x)
        report.teacher_loss.append(sums[0] / n)
        report.teacher_accuracy.append(sums[3] / n)
        if student is not None:
            report.student_loss.append(sums[1] / n)
            report.transfer_loss.append(sums[2] / n)
            report.student_accuracy.append(sums[4] / n)

    report.final_teacher_accuracy = float((teacher.predict(x) == y).mean())
    if student is not None:
        report.final_student_accuracy = float((student.predict(x) == y).mean())
    return report


def train_supervised(model: BlockModel, x, y, cfg: DistillConfig, seed: int) -> TrainReport:
    return train_cycle(model, None, x, y, cfg, seed)


def _check(loss: Tensor, who: str, epoch: int, batch: int) -> None:
    if not math.isfinite(loss.item()):
        raise TrainingDivergedError(f"{who} loss is not finite at epoch {epoch}, batch {batch}")
