"""Run configuration: TOML file + ``--section.key value`` overrides.

Grammar: a TOML document with the sections ``[dataset]``, ``[arch]``,
``[schedule]``, ``[distill]``, ``[sgd]`` and ``[run]``, each a flat table
of scalars or arrays.  Overrides address a key as ``section.key``; the
``run`` keys may also be given bare (``--seed 3``).  Override values are
parsed as TOML values, falling back to plain strings.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .datasets import Dataset, load_csv, load_idx, make_blobs, make_imbalanced
from .distill import DistillConfig
from .experiment import ExperimentConfig
from .nets import ArchConfig
from .optim import SgdConfig
from .selection import STRATEGIES, BudgetSchedule


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "dataset": {
        "kind": "blobs",
        "num_classes": 4,
        "per_class": 500,
        "dims": 2,
        "spread": 0.5,
        "test_fraction": 0.2,
    },
    "arch": {
        "kind": "mlp",
        "num_blocks": 3,
        "widths": [64, 64, 64],
        "teacher_depth": 2,
        "student_depth": 1,
        "kernel_size": 3,
    },
    "schedule": {"initial": 0.10, "final": 0.40, "step": 0.05},
    "distill": {"lambda": 100.0, "transfer_metric": "attention", "epochs": 60, "batch_size": 32},
    "sgd": {"lr": 0.01, "momentum": 0.9, "weight_decay": 5e-4, "decay_fraction": 0.8, "decay_factor": 0.1},
    "run": {
        "strategy": ["proposed"],
        "metric": "kl-posterior",
        "calibrate": False,
        "warm_start": False,
        "use_subset": True,
        "seed": 0,
        "repeat": 1,
        "output": "runs",
        "mc_passes": 10,
        "mc_drop_prob": 0.25,
    },
}

_DATASET_KINDS = ("blobs", "idx", "csv")


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load_config(path=None, overrides: dict[str, str] | None = None) -> dict:
    """Defaults, then the file, then overrides; validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        for section, table in data.items():
            if section not in cfg or not isinstance(table, dict):
                raise ConfigError(f"{p}: unknown section [{section}]")
            cfg[section].update(table)
    for key, raw in (overrides or {}).items():
        section, _, name = key.rpartition(".")
        section = section or "run"
        if section not in cfg:
            raise ConfigError(f"unknown override --{key}")
        cfg[section][name] = _parse_value(raw) if isinstance(raw, str) else raw
    if isinstance(cfg["run"]["strategy"], str):
        cfg["run"]["strategy"] = [s.strip() for s in cfg["run"]["strategy"].split(",") if s.strip()]
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    for s in cfg["run"]["strategy"]:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; choose from {', '.join(STRATEGIES)}")
    if cfg["dataset"]["kind"] not in _DATASET_KINDS:
        raise ConfigError(f"unknown dataset kind {cfg['dataset']['kind']!r}")
    if int(cfg["run"]["repeat"]) < 1:
        raise ConfigError("run.repeat must be >= 1")
    if not cfg["run"]["strategy"]:
        raise ConfigError("run.strategy is empty")
    # the real input shape is only known once the dataset is built
    probe = (1, 8, 8) if cfg["arch"]["kind"] == "cnn" else (2,)
    try:
        experiment_config(cfg, cfg["run"]["strategy"][0], 0, 2, probe)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class Seeds:
    data: int
    init: int
    strategy: int


def seeds_for(cfg: dict, rep: int) -> Seeds:
    """Repeat ``rep`` offsets every base seed by ``rep``."""
    run = cfg["run"]
    base = int(run["seed"])
    return Seeds(
        int(run.get("data_seed", base)) + rep,
        int(run.get("init_seed", base)) + rep,
        int(run.get("strategy_seed", base)) + rep,
    )


def build_dataset(cfg: dict, data_seed: int) -> Dataset:
    d = cfg["dataset"]
    kind = d["kind"]
    if kind == "blobs":
        ds = make_blobs(
            int(d["num_classes"]), d["per_class"], int(d["dims"]), float(d["spread"]),
            data_seed, float(d["test_fraction"]),
        )
    elif kind == "idx":
        ds = load_idx(
            d["images"], d["labels"], d.get("num_classes"), d.get("normalization", "minmax"),
            float(d["test_fraction"]), data_seed,
        )
    else:
        shape = tuple(d["shape"]) if "shape" in d else None
        ds = load_csv(
            d["path"], d.get("num_classes"), shape, d.get("normalization", "minmax"),
            float(d["test_fraction"]), data_seed,
        )
    if "class_fractions" in d:
        ds = make_imbalanced(ds, d["class_fractions"], data_seed)
    return ds


def experiment_config(cfg: dict, strategy: str, seeds: Seeds | int, num_classes: int, input_shape=None) -> ExperimentConfig:
    if isinstance(seeds, int):
        seeds = Seeds(seeds, seeds, seeds)
    a = cfg["arch"]
    if input_shape is None:
        input_shape = (int(cfg["dataset"].get("dims", 2)),)
    arch = ArchConfig(
        kind=a["kind"],
        num_blocks=int(a["num_blocks"]),
        widths=tuple(a["widths"]),
        num_classes=int(num_classes),
        input_shape=tuple(input_shape),
        teacher_depth=int(a["teacher_depth"]),
        student_depth=int(a["student_depth"]),
        kernel_size=int(a["kernel_size"]),
    )
    dis = cfg["distill"]
    distill = DistillConfig(
        lam=float(dis["lambda"]),
        transfer_metric=dis["transfer_metric"],
        epochs=int(dis["epochs"]),
        batch_size=int(dis["batch_size"]),
        sgd=SgdConfig(**{k: float(v) for k, v in cfg["sgd"].items()}),
    )
    run = cfg["run"]
    return ExperimentConfig(
        arch=arch,
        distill=distill,
        schedule=BudgetSchedule(**{k: float(v) for k, v in cfg["schedule"].items()}),
        strategy=strategy,
        metric=run["metric"],
        calibrate=bool(run["calibrate"]),
        warm_start=bool(run["warm_start"]),
        use_subset=bool(run["use_subset"]),
        data_seed=seeds.data,
        init_seed=seeds.init,
        strategy_seed=seeds.strategy,
        mc_passes=int(run["mc_passes"]),
        mc_drop_prob=float(run["mc_drop_prob"]),
    )
