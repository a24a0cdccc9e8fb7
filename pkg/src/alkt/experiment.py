"""Active-learning cycle driver, evaluation and diagnostics."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .datasets import Dataset
from .distill import DistillConfig, train_cycle, train_supervised
from .nets import ArchConfig, BlockModel, build_model, build_pair
from .optim import SgdConfig
from .selection import (
    STRATEGIES,
    BudgetSchedule,
    PoolState,
    SelectionContext,
    annotate,
    draw_subset,
    init_pool,
    select,
    write_trace_csv,
)
from .uncertainty import METRICS, fit_temperature

log = logging.getLogger(__name__)

BOUND_NOTE = (
    "bound columns are L2 distances between softmax posteriors and one-hot labels; "
    "selection itself ranks by KL(teacher || student)"
)


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    arch: ArchConfig = field(default_factory=ArchConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    schedule: BudgetSchedule = field(default_factory=BudgetSchedule)
    strategy: str = "proposed"
    metric: str = "kl-posterior"
    calibrate: bool = False
    validation_fraction: float = 0.1
    warm_start: bool = False
    use_subset: bool = True
    data_seed: int = 0
    init_seed: int = 0
    strategy_seed: int = 0
    mc_passes: int = 10
    mc_drop_prob: float = 0.25

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown uncertainty metric {self.metric!r}; choose from {METRICS}")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")


# -- evaluation ----------------------------------------------------------------


@dataclass
class EvalResult:
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray


def evaluate(model: BlockModel, x, y, num_classes: int | None = None) -> EvalResult:
    """Top-1 accuracy, per-class accuracy (NaN for absent classes) and confusion counts."""
    y = np.asarray(y, dtype=np.intp)
    if len(y) == 0:
        raise ValueError("evaluate: split is empty")
    k = num_classes or model.arch.num_classes
    pred = model.predict(x)
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    counts = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per = np.where(counts > 0, np.diag(conf) / np.maximum(counts, 1), np.nan)
    return EvalResult(float(np.trace(conf) / len(y)), per, conf)


# -- bound diagnostic ----------------------------------------------------------


@dataclass(frozen=True)
class BoundRecord:
    index: int
    d_teacher_student: float
    student_to_label: float
    teacher_to_label: float

    @property
    def holds(self) -> bool:
        return self.teacher_to_label <= self.d_teacher_student + self.student_to_label + 1e-9


@dataclass
class BoundReport:
    records: list[BoundRecord]
    pearson: float
    violations: int


def bound_from_posteriors(pt, ps, y, indices=None) -> BoundReport:
    """Check ||p_T - y|| <= ||p_T - p_S|| + ||p_S - y|| per sample.

    Also reports the Pearson correlation between the teacher/student
    distance and the bound it induces.
    """
    pt = np.asarray(pt, dtype=np.float64)
    ps = np.asarray(ps, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    idx = np.arange(len(y)) if indices is None else np.asarray(indices)
    onehot = np.eye(pt.shape[1])[y]
    d = np.linalg.norm(pt - ps, axis=1)
    s2l = np.linalg.norm(ps - onehot, axis=1)
    t2l = np.linalg.norm(pt - onehot, axis=1)
    recs = [BoundRecord(int(i), float(a), float(b), float(c)) for i, a, b, c in zip(idx, d, s2l, t2l)]
    bound = d + s2l
    if len(d) > 1 and d.std() > 0 and bound.std() > 0:
        r = float(np.corrcoef(d, bound)[0, 1])
    else:
        r = float("nan")
    return BoundReport(recs, r, sum(not b.holds for b in recs))


def bound_diagnostic(teacher: BlockModel, student: BlockModel, x, y, indices=None) -> BoundReport:
    return bound_from_posteriors(teacher.predict_proba(x), student.predict_proba(x), y, indices)


# -- the cycle driver ----------------------------------------------------------


@dataclass
class CycleRecord:
    cycle: int
    budget: float
    labeled: int
    train_accuracy: float
    test_accuracy: float
    gap: float  # percentage points
    per_class: list[float]
    selected: list[int]
    wall_time: float = 0.0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[CycleRecord] = field(default_factory=list)
    bounds: list[tuple[int, BoundRecord]] = field(default_factory=list)
    trace: list[tuple[int, int, float, str]] = field(default_factory=list)
    pool: PoolState | None = None
    pool_indices: np.ndarray | None = None  # pool position -> train-pool index
    temperatures: list[tuple[float, float]] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def labeled_train_indices(self) -> np.ndarray:
        return self.pool_indices[self.pool.labeled]


def _split_validation(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    k = int(np.floor(fraction * n + 0.5))
    val = np.sort(rng.choice(n, size=k, replace=False))
    return np.setdiff1d(np.arange(n), val), val


def run_experiment(dataset: Dataset, cfg: ExperimentConfig, out_dir=None, extra_manifest=None) -> ExperimentResult:
    """Run every budget point of ``cfg.schedule``.

    One CycleRecord per budget point, including the initial one.  When
    ``out_dir`` is given the artifacts are written there, also if a cycle
    raises part-way through.
    """
    train, test = dataset.train_pool(), dataset.test()
    if len(train) == 0 or len(test) == 0:
        raise ValueError("run_experiment: dataset needs both train-pool and test samples")
    x_test, y_test = test.features, test.eval_labels()

    if cfg.calibrate:
        pool_pos, val_pos = _split_validation(len(train), cfg.validation_fraction, derive_seed(cfg.data_seed, 7))
    else:
        pool_pos, val_pos = np.arange(len(train)), np.array([], dtype=np.intp)
    x_pool = train.features[pool_pos]
    n = len(pool_pos)
    sched = cfg.schedule
    m = sched.quota(n)
    if sched.initial_count(n) + sched.num_cycles * m > n:
        raise ValueError(f"schedule needs more than the {n} available pool samples")

    pool = init_pool(n, sched.initial, cfg.data_seed)
    result = ExperimentResult(cfg, pool=pool, pool_indices=pool_pos)
    result.manifest = {
        "config": config_to_dict(cfg),
        "dataset": dataset.manifest(),
        "bound_note": BOUND_NOTE,
        **(extra_manifest or {}),
    }
    teacher = student = None
    try:
        for c, budget in enumerate(sched.points()):
            t0 = time.perf_counter()
            lab = pool.labeled
            x_lab = x_pool[lab]
            y_lab = train.oracle(pool_pos[lab])
            if teacher is None or not cfg.warm_start:
                teacher, student = build_pair(cfg.arch, derive_seed(cfg.init_seed, c, 0))
            train_cycle(teacher, student, x_lab, y_lab, cfg.distill, derive_seed(cfg.init_seed, c, 1))

            tr = evaluate(teacher, x_lab, y_lab, dataset.num_classes)
            te = evaluate(teacher, x_test, y_test, dataset.num_classes)

            calibration = None
            if cfg.calibrate and cfg.strategy == "proposed":
                xv = train.features[val_pos]
                yv = train.oracle(val_pos)
                calibration = (
                    fit_temperature(_logits(teacher, xv), yv),
                    fit_temperature(_logits(student, xv), yv),
                )
                result.temperatures.append((calibration[0].temperature, calibration[1].temperature))

            selected = np.array([], dtype=np.intp)
            if c < sched.num_cycles:
                if cfg.use_subset:
                    subset = draw_subset(pool, m, derive_seed(cfg.strategy_seed, c, 0))
                else:
                    subset = pool.unlabeled.copy()
                ctx = SelectionContext(
                    pool=pool,
                    subset=subset,
                    m=m,
                    features=x_pool,
                    teacher=teacher,
                    student=student,
                    seed=derive_seed(cfg.strategy_seed, c, 1),
                    metric=cfg.metric,
                    calibration=calibration,
                    mc_passes=cfg.mc_passes,
                    mc_drop_prob=cfg.mc_drop_prob,
                )
                selected, scores = select(cfg.strategy, ctx)
                y_sel = train.oracle(pool_pos[selected])
                rep = bound_diagnostic(teacher, student, x_pool[selected], y_sel, selected)
                result.bounds += [(c, r) for r in rep.records]
                result.trace += [(c, int(i), float(s), cfg.strategy) for i, s in zip(selected, scores)]
                pool = annotate(pool, selected)
                result.pool = pool

            result.records.append(
                CycleRecord(
                    cycle=c,
                    budget=budget,
                    labeled=int(lab.size),
                    train_accuracy=tr.accuracy,
                    test_accuracy=te.accuracy,
                    gap=100.0 * (tr.accuracy - te.accuracy),
                    per_class=te.per_class.tolist(),
                    selected=selected.tolist(),
                    wall_time=time.perf_counter() - t0,
                )
            )
            log.info(
                "%s cycle %d budget %.2f: train %.4f test %.4f",
                cfg.strategy, c, budget, tr.accuracy, te.accuracy,
            )
    finally:
        if out_dir is not None:
            write_run(result, out_dir)
    return result


def _logits(model: BlockModel, x) -> np.ndarray:
    with T.no_grad():
        return model.forward(x).logits.data


# -- studies -------------------------------------------------------------------


@dataclass
class StudyEntry:
    selected: list[int]
    selected_accuracy: float  # current model on the newly selected samples
    retrained_test_accuracy: float  # fresh model on initial + selected


@dataclass
class StudyReport:
    baseline_test_accuracy: float  # fresh model on the initial split alone
    entries: dict[str, StudyEntry]


def selected_data_study(
    dataset: Dataset,
    initial_fraction: float,
    extra_quota: int,
    strategies: Sequence[str],
    cfg: ExperimentConfig,
    seed: int,
    use_subset: bool = True,
) -> StudyReport:
    """Train on a random initial split, let each strategy add ``extra_quota`` samples.

    Reports how well the initial model classifies what each strategy chose,
    and how well a model retrained on initial + chosen does on the test split.
    """
    train, test = dataset.train_pool(), dataset.test()
    n = len(train)
    pool = init_pool(n, initial_fraction, seed)
    if pool.labeled.size + extra_quota > n:
        raise ValueError("selected_data_study: initial + extra exceeds the train pool")
    x_test, y_test = test.features, test.eval_labels()
    lab = pool.labeled
    teacher, student = build_pair(cfg.arch, derive_seed(seed, 0))
    train_cycle(teacher, student, train.features[lab], train.oracle(lab), cfg.distill, derive_seed(seed, 1))

    def retrain(indices) -> float:
        model = build_model(cfg.arch, cfg.arch.teacher_depth, derive_seed(seed, 2))
        train_supervised(model, train.features[indices], train.oracle(indices), cfg.distill, derive_seed(seed, 3))
        return evaluate(model, x_test, y_test, dataset.num_classes).accuracy

    baseline = retrain(lab)
    entries = {}
    for strat in strategies:
        if extra_quota == 0:
            entries[strat] = StudyEntry([], float("nan"), baseline)
            continue
        subset = draw_subset(pool, extra_quota, derive_seed(seed, 4)) if use_subset else pool.unlabeled
        ctx = SelectionContext(
            pool=pool,
            subset=subset,
            m=extra_quota,
            features=train.features,
            teacher=teacher,
            student=student,
            seed=derive_seed(seed, 5),
            metric=cfg.metric,
            mc_passes=cfg.mc_passes,
            mc_drop_prob=cfg.mc_drop_prob,
        )
        sel, _ = select(strat, ctx)
        acc_sel = evaluate(teacher, train.features[sel], train.oracle(sel), dataset.num_classes).accuracy
        entries[strat] = StudyEntry(sel.tolist(), acc_sel, retrain(np.union1d(lab, sel)))
    return StudyReport(baseline, entries)


def transfer_to_deeper_study(
    dataset: Dataset,
    labeled_sets: dict[str, np.ndarray],
    deeper_arch: ArchConfig,
    distill: DistillConfig,
    seed: int,
) -> dict[str, float]:
    """Test accuracy of ``deeper_arch`` trained on each strategy's final labeled set.

    ``labeled_sets`` maps strategy name to train-pool indices.
    """
    train, test = dataset.train_pool(), dataset.test()
    out = {}
    for strat, idx in labeled_sets.items():
        idx = np.sort(np.asarray(idx, dtype=np.intp))
        model = build_model(deeper_arch, deeper_arch.teacher_depth, derive_seed(seed, 0))
        train_supervised(model, train.features[idx], train.oracle(idx), distill, derive_seed(seed, 1))
        out[strat] = evaluate(model, test.features, test.eval_labels(), dataset.num_classes).accuracy
    return out


# -- artifacts -----------------------------------------------------------------

RECORD_HEADER = [
    "cycle", "budget", "labeled", "train_accuracy", "test_accuracy", "gap_pp",
    "per_class_accuracy", "num_selected",
]
BOUND_HEADER = ["cycle", "index", "d_teacher_student", "student_to_label", "teacher_to_label", "holds"]


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["arch"] = cfg.arch.to_dict()
    return d


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    distill = dict(d["distill"])
    distill["sgd"] = SgdConfig(**distill["sgd"])
    d["distill"] = DistillConfig(**distill)
    d["arch"] = ArchConfig.from_dict(d["arch"])
    d["schedule"] = BudgetSchedule(**d["schedule"])
    return ExperimentConfig(**d)


def write_run(result: ExperimentResult, out_dir) -> None:
    """records.csv, timing.csv, bounds.csv, selection_trace.csv and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_HEADER)
        for r in result.records:
            w.writerow([
                r.cycle, repr(r.budget), r.labeled, repr(r.train_accuracy), repr(r.test_accuracy),
                repr(r.gap), ";".join(repr(float(v)) for v in r.per_class), len(r.selected),
            ])
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle", "wall_seconds"])
        for r in result.records:
            w.writerow([r.cycle, f"{r.wall_time:.6f}"])
    with open(out / "bounds.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BOUND_HEADER)
        for c, b in result.bounds:
            w.writerow([c, b.index, repr(b.d_teacher_student), repr(b.student_to_label),
                        repr(b.teacher_to_label), int(b.holds)])
    write_trace_csv(out / "selection_trace.csv", result.trace)
    (out / "manifest.json").write_text(json.dumps(result.manifest, indent=2, sort_keys=True))


def read_records(run_dir) -> list[dict]:
    with open(Path(run_dir) / "records.csv", newline="") as fh:
        return list(csv.DictReader(fh))
