"""Labeled/unlabeled pool bookkeeping and the selection strategies."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .nets import BlockModel, forward_mc_dropout
from .uncertainty import CalibrationModel, baseline_scores, score

STRATEGIES = (
    "proposed",
    "random",
    "entropy",
    "margin",
    "least-confidence",
    "mc-dropout-entropy",
    "coreset-kcenter",
)

SUBSET_FACTOR = 10


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class BudgetSchedule:
    initial: float = 0.10
    final: float = 0.40
    step: float = 0.05

    def __post_init__(self):
        if not 0 < self.initial <= self.final <= 1:
            raise ValueError(f"need 0 < initial <= final <= 1, got {self.initial}, {self.final}")
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        k = (self.final - self.initial) / self.step
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"(final - initial) / step = {k} is not integral")

    @property
    def num_cycles(self) -> int:
        """Number of selection rounds (budget points minus one)."""
        return int(round((self.final - self.initial) / self.step))

    def points(self) -> list[float]:
        return [round(self.initial + c * self.step, 10) for c in range(self.num_cycles + 1)]

    def quota(self, n: int) -> int:
        return round_half_up(self.step * n)

    def initial_count(self, n: int) -> int:
        return round_half_up(self.initial * n)


@dataclass
class PoolState:
    """Partition of ``range(n)`` into labeled and unlabeled index sets."""

    n: int
    labeled: np.ndarray
    unlabeled: np.ndarray
    initial: np.ndarray
    history: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        lab, unl = self.labeled, self.unlabeled
        if np.intersect1d(lab, unl).size:
            raise AssertionError("labeled and unlabeled sets overlap")
        if lab.size + unl.size != self.n or not np.array_equal(
            np.union1d(lab, unl), np.arange(self.n)
        ):
            raise AssertionError("labeled and unlabeled do not cover the dataset")
        added = np.concatenate([self.initial, *self.history]) if self.history else self.initial
        if not np.array_equal(np.sort(added), lab):
            raise AssertionError("history does not account for the labeled set")


def init_pool(n: int, initial_fraction: float, seed: int) -> PoolState:
    if n <= 0:
        raise ValueError("init_pool: dataset is empty")
    if not 0 < initial_fraction <= 1:
        raise ValueError(f"initial_fraction must lie in (0, 1], got {initial_fraction}")
    k = round_half_up(initial_fraction * n)
    rng = np.random.default_rng(seed)
    lab = np.sort(rng.choice(n, size=k, replace=False))
    unl = np.setdiff1d(np.arange(n), lab)
    return PoolState(n, lab, unl, lab.copy())


def draw_subset(pool: PoolState, m: int, seed) -> np.ndarray:
    """Candidate set of size min(10 m, |unlabeled|), sorted ascending."""
    if m < 1:
        raise ValueError(f"draw_subset: quota must be >= 1, got {m}")
    if pool.unlabeled.size == 0:
        raise ValueError("draw_subset: unlabeled pool is empty")
    size = min(SUBSET_FACTOR * m, pool.unlabeled.size)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(pool.unlabeled, size=size, replace=False))


def select_top(indices, scores, m: int) -> np.ndarray:
    """The ``m`` highest-scoring indices; ties prefer the smaller index."""
    indices = np.asarray(indices, dtype=np.intp)
    scores = np.asarray(scores, dtype=np.float64)
    if indices.shape != scores.shape:
        raise ValueError(f"select_top: {indices.size} indices but {scores.size} scores")
    if m > indices.size:
        raise ValueError(f"select_top: asked for {m} of {indices.size} candidates")
    order = np.lexsort((indices, -scores))
    return np.sort(indices[order[:m]])


def annotate(pool: PoolState, selected) -> PoolState:
    """Move ``selected`` to the labeled side.

    The labels themselves come from the dataset oracle; this only tracks
    which indices have been revealed.
    """
    sel = np.asarray(selected, dtype=np.intp)
    if np.unique(sel).size != sel.size:
        raise ValueError("annotate: selected indices contain duplicates")
    if not np.isin(sel, pool.unlabeled).all():
        bad = sel[~np.isin(sel, pool.unlabeled)]
        raise ValueError(f"annotate: indices not in the unlabeled pool: {bad.tolist()}")
    if sel.size == 0:
        return pool
    return PoolState(
        pool.n,
        np.union1d(pool.labeled, sel),
        np.setdiff1d(pool.unlabeled, sel),
        pool.initial,
        pool.history + [np.sort(sel)],
    )


def kcenter_greedy(labeled_feats, cand_feats, cand_indices, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Farthest-first traversal over the candidates.

    Returns the picked indices in pick order and the min-distance each had
    when picked.
    """
    cand = np.asarray(cand_feats, dtype=np.float64)
    cand = cand.reshape(len(cand), -1)
    idx = np.asarray(cand_indices, dtype=np.intp)
    lab = np.asarray(labeled_feats, dtype=np.float64).reshape(-1, cand.shape[1])
    if m > len(idx):
        raise ValueError(f"kcenter_greedy: asked for {m} of {len(idx)} candidates")
    if len(lab):
        mind = np.full(len(cand), np.inf)
        for start in range(0, len(lab), 512):
            chunk = lab[start : start + 512]
            d = np.sqrt(((cand[:, None, :] - chunk[None, :, :]) ** 2).sum(-1))
            mind = np.minimum(mind, d.min(axis=1))
    else:
        mind = np.full(len(cand), np.inf)
    # candidates are scanned in ascending index order so argmax breaks ties low
    order = np.argsort(idx, kind="stable")
    cand, idx, mind = cand[order], idx[order], mind[order]
    taken = np.zeros(len(idx), dtype=bool)
    picks, dists = [], []
    for _ in range(m):
        masked = np.where(taken, -np.inf, mind)
        j = int(np.argmax(masked))
        picks.append(idx[j])
        dists.append(mind[j])
        taken[j] = True
        mind = np.minimum(mind, np.sqrt(((cand - cand[j]) ** 2).sum(-1)))
    return np.array(picks, dtype=np.intp), np.array(dists)


@dataclass
class SelectionContext:
    """Everything a strategy may need for one cycle.

    ``features`` are the raw inputs of the training pool, indexed by pool
    position.
    """

    pool: PoolState
    subset: np.ndarray
    m: int
    features: np.ndarray
    teacher: BlockModel | None = None
    student: BlockModel | None = None
    seed: int = 0
    metric: str = "kl-posterior"
    calibration: tuple[CalibrationModel, CalibrationModel] | None = None
    mc_passes: int = 10
    mc_drop_prob: float = 0.25


def _forward(model: BlockModel, x: np.ndarray):
    with T.no_grad():
        return model.forward(x)


def strategy_scores(kind: str, ctx: SelectionContext) -> np.ndarray:
    """Per-candidate uncertainty over ``ctx.subset`` for score-based strategies."""
    x = ctx.features[ctx.subset]
    if kind == "proposed":
        return score(_forward(ctx.teacher, x), _forward(ctx.student, x), ctx.metric, ctx.calibration)
    if kind in ("entropy", "margin", "least-confidence"):
        return baseline_scores(ctx.teacher.predict_proba(x), kind)
    if kind == "mc-dropout-entropy":
        rng = np.random.default_rng(ctx.seed)
        post = forward_mc_dropout(ctx.teacher, x, ctx.mc_passes, ctx.mc_drop_prob, rng)
        return baseline_scores(post.mean(axis=0), "entropy")
    raise ValueError(f"strategy {kind!r} has no score function")


def select(kind: str, ctx: SelectionContext) -> tuple[np.ndarray, np.ndarray]:
    """Pick ``ctx.m`` indices from ``ctx.subset``.

    Returns (selected indices ascending, score of each selected index).
    Random selection carries NaN scores.
    """
    if kind not in STRATEGIES:
        raise ValueError(f"unknown strategy {kind!r}; choose from {STRATEGIES}")
    if ctx.m == 0:
        return np.array([], dtype=np.intp), np.array([])
    if kind == "random":
        rng = np.random.default_rng(ctx.seed)
        sel = np.sort(rng.choice(ctx.subset, size=ctx.m, replace=False))
        return sel, np.full(ctx.m, np.nan)
    if kind == "coreset-kcenter":
        with T.no_grad():
            lab = ctx.teacher.forward(ctx.features[ctx.pool.labeled]).features.data
            cand = ctx.teacher.forward(ctx.features[ctx.subset]).features.data
        picks, dists = kcenter_greedy(lab, cand, ctx.subset, ctx.m)
        order = np.argsort(picks)
        return picks[order], dists[order]
    s = strategy_scores(kind, ctx)
    sel = select_top(ctx.subset, s, ctx.m)
    lookup = dict(zip(ctx.subset.tolist(), s.tolist()))
    return sel, np.array([lookup[i] for i in sel.tolist()])


TRACE_HEADER = ["cycle", "index", "score", "strategy"]


def write_trace_csv(path, rows) -> None:
    """``rows`` are (cycle, index, score, strategy) tuples."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for cycle, index, sc, strat in rows:
            w.writerow([int(cycle), int(index), repr(float(sc)), strat])


def read_trace_csv(path) -> list[tuple[int, int, float, str]]:
    with open(Path(path), newline="") as fh:
        return [
            (int(r["cycle"]), int(r["index"]), float(r["score"]), r["strategy"])
            for r in csv.DictReader(fh)
        ]
