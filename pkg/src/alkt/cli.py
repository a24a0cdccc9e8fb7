"""``alkt`` command line: run, compare, selftest."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, build_dataset, experiment_config, load_config, seeds_for
from .experiment import config_from_dict, read_records, run_experiment
from .selftest import run_selftest
from .uncertainty import KL_EPS

log = logging.getLogger("alkt")


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def _split_overrides(extra: list[str]) -> dict[str, str]:
    out = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument {tok!r}; overrides look like --section.key value")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            try:
                val = next(it)
            except StopIteration:
                raise ConfigError(f"override --{key} is missing a value") from None
        out[key] = val
    return out


def _run_job(cfg: dict, strategy: str, rep: int, out_dir: str, describe: str) -> tuple[str, int, float]:
    seeds = seeds_for(cfg, rep)
    ds = build_dataset(cfg, seeds.data)
    ecfg = experiment_config(cfg, strategy, seeds, ds.num_classes, ds.input_shape)
    run_cfg = json.loads(json.dumps(cfg))
    run_cfg["run"]["strategy"] = [strategy]
    manifest_extra = {
        "run_config": run_cfg,
        "repeat_index": rep,
        "seeds": {"data": seeds.data, "init": seeds.init, "strategy": seeds.strategy},
        "git": describe,
    }
    res = run_experiment(ds, ecfg, out_dir=out_dir, extra_manifest=manifest_extra)
    return strategy, rep, res.records[-1].test_accuracy


def cmd_run(args, extra: list[str]) -> int:
    if args.manifest:
        return _rerun_manifest(Path(args.manifest), args.output)
    overrides = _split_overrides(extra)
    for name in ("strategy", "seed", "repeat", "output"):
        val = getattr(args, name)
        if val is not None:
            overrides[name] = str(val) if name != "output" else json.dumps(val)
    if "strategy" in overrides and not overrides["strategy"].startswith("["):
        overrides["strategy"] = json.dumps(overrides["strategy"])
    cfg = load_config(args.config, overrides)
    if isinstance(cfg["run"]["strategy"], str):
        cfg["run"]["strategy"] = [cfg["run"]["strategy"]]

    out_root = Path(cfg["run"]["output"])
    describe = git_describe()
    jobs = []
    for strategy in cfg["run"]["strategy"]:
        for rep in range(int(cfg["run"]["repeat"])):
            seed = seeds_for(cfg, rep).data
            jobs.append((strategy, rep, str(out_root / strategy / f"seed-{seed}")))

    workers = max(1, int(os.environ.get("ALKT_THREADS", "1")))
    results = []
    if workers == 1:
        for strategy, rep, out_dir in jobs:
            results.append(_run_job(cfg, strategy, rep, out_dir, describe))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_job, cfg, s, r, d, describe) for s, r, d in jobs]
            results = [f.result() for f in futs]

    print(f"{'strategy':<20} {'repeat':>6} {'final test acc':>15}")
    for strategy, rep, acc in results:
        print(f"{strategy:<20} {rep:>6} {acc:>15.4f}")
    return 0


def _rerun_manifest(path: Path, output: str | None) -> int:
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    man = json.loads(path.read_text())
    if "run_config" not in man:
        raise ConfigError(f"{path}: manifest lacks run_config")
    cfg = man["run_config"]
    ecfg = config_from_dict(man["config"])
    ds = build_dataset(cfg, ecfg.data_seed)
    if ds.checksum() != man["dataset"]["checksum"]:
        raise ConfigError(f"{path}: dataset checksum differs from the recorded one")
    out_dir = Path(output) if output else path.parent
    extra = {k: man[k] for k in ("run_config", "repeat_index", "seeds") if k in man}
    extra["git"] = git_describe()
    res = run_experiment(ds, ecfg, out_dir=out_dir, extra_manifest=extra)
    print(f"{ecfg.strategy}: final test accuracy {res.records[-1].test_accuracy:.4f}")
    return 0


def _find_runs(paths: list[str]) -> list[Path]:
    runs = []
    for p in paths:
        root = Path(p)
        if not root.is_dir():
            raise ConfigError(f"not a directory: {root}")
        found = sorted(m.parent for m in root.rglob("manifest.json") if (m.parent / "records.csv").is_file())
        if not found:
            raise ConfigError(f"no completed runs under {root}")
        runs += found
    return runs


def compare_runs(run_dirs: list[Path]) -> list[dict]:
    """Mean and population std of test accuracy per (strategy, budget)."""
    by_strategy: dict[str, list[list[dict]]] = {}
    schedule = None
    for d in run_dirs:
        man = json.loads((d / "manifest.json").read_text())
        recs = read_records(d)
        budgets = [r["budget"] for r in recs]
        if schedule is None:
            schedule = budgets
        elif budgets != schedule:
            raise ConfigError(f"{d}: budget points {budgets} do not align with {schedule}")
        by_strategy.setdefault(man["config"]["strategy"], []).append(recs)
    rows = []
    for strategy, runs in by_strategy.items():
        for i, budget in enumerate(schedule):
            accs = np.array([float(r[i]["test_accuracy"]) for r in runs])
            rows.append({
                "strategy": strategy,
                "budget": budget,
                "runs": len(accs),
                "mean_test_accuracy": repr(float(accs.mean())),
                "std_test_accuracy": repr(float(accs.std())),
            })
    return rows


def cmd_compare(args, extra: list[str]) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments: {' '.join(extra)}")
    rows = compare_runs(_find_runs(args.run_dirs))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"{'strategy':<20} {'budget':>7} {'runs':>5} {'mean':>8} {'std':>8}")
    for r in rows:
        print(
            f"{r['strategy']:<20} {float(r['budget']):>7.2f} {r['runs']:>5} "
            f"{float(r['mean_test_accuracy']):>8.4f} {float(r['std_test_accuracy']):>8.4f}"
        )
    return 0


def cmd_selftest(args, extra: list[str]) -> int:
    results = run_selftest(kl_eps=args.kl_eps)
    failed = [name for name, (ok, _) in results.items() if not ok]
    for name, (ok, msg) in results.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {msg}" if msg else ""))
    if failed:
        print(f"failed checks: {', '.join(failed)}")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alkt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser(
        "run",
        help="run active-learning experiments",
        description="Run one experiment per strategy x repeat. Any further "
        "--section.key value pair overrides the config (e.g. --distill.epochs 30). "
        "ALKT_THREADS sets the number of worker processes (default 1).",
    )
    r.add_argument("--config", help="TOML config file")
    r.add_argument("--manifest", help="re-run exactly the run recorded in this manifest.json")
    r.add_argument("--strategy", help="strategy name or comma-separated list")
    r.add_argument("--seed", type=int, help="base seed; repeat i uses seed + i")
    r.add_argument("--repeat", type=int, help="number of repeats")
    r.add_argument("--output", help="output root directory")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="aggregate completed runs into compare.csv")
    c.add_argument("run_dirs", nargs="+", help="run directories (searched recursively)")
    c.add_argument("--output", default="compare.csv", help="output CSV path")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("selftest", help="run the fast invariant checks")
    s.add_argument("--kl-eps", type=float, default=KL_EPS, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        return args.func(args, extra)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
