import csv
import json
from pathlib import Path

import pytest

from alkt.cli import main
from alkt.config import ConfigError, load_config, seeds_for

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "blobs.toml"
QUICK = ["--dataset.per_class", "40", "--distill.epochs", "2"]


def _run(tmp_path, *args):
    return main(["run", "--config", str(CONFIG), "--output", str(tmp_path / "out"), *QUICK, *args])


def test_run_writes_seven_records(tmp_path, capsys):
    assert _run(tmp_path, "--strategy", "proposed", "--seed", "1", "--repeat", "1") == 0
    run_dir = tmp_path / "out" / "proposed" / "seed-1"
    with open(run_dir / "records.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 7
    assert "final test acc" in capsys.readouterr().out


def test_repeat_derives_consecutive_seeds(tmp_path):
    assert _run(tmp_path, "--strategy", "random", "--seed", "10", "--repeat", "5") == 0
    manifests = sorted((tmp_path / "out" / "random").glob("seed-*/manifest.json"))
    assert len(manifests) == 5
    seeds = sorted(json.loads(m.read_text())["seeds"]["data"] for m in manifests)
    assert seeds == [10, 11, 12, 13, 14]


def test_manifest_records_overrides_and_reproduces(tmp_path):
    assert _run(tmp_path, "--strategy", "entropy", "--repeat", "1", "--schedule.final", "0.2") == 0
    run_dir = tmp_path / "out" / "entropy" / "seed-0"
    man = json.loads((run_dir / "manifest.json").read_text())
    assert man["run_config"]["distill"]["epochs"] == 2
    assert man["run_config"]["schedule"]["final"] == 0.2
    assert man["config"]["distill"]["epochs"] == 2
    assert "git" in man and man["dataset"]["checksum"]

    again = tmp_path / "again"
    assert main(["run", "--manifest", str(run_dir / "manifest.json"), "--output", str(again)]) == 0
    for name in ("records.csv", "selection_trace.csv"):
        assert (again / name).read_bytes() == (run_dir / name).read_bytes()


def test_parallel_repeats_match_serial(tmp_path, monkeypatch):
    assert _run(tmp_path, "--strategy", "random", "--repeat", "2") == 0
    monkeypatch.setenv("ALKT_THREADS", "2")
    par = tmp_path / "par"
    assert main(["run", "--config", str(CONFIG), "--output", str(par), *QUICK, "--strategy", "random", "--repeat", "2"]) == 0
    for seed in (0, 1):
        a = (tmp_path / "out" / "random" / f"seed-{seed}" / "records.csv").read_bytes()
        assert a == (par / "random" / f"seed-{seed}" / "records.csv").read_bytes()


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2
    assert main(["run", "--strategy", "vaal"]) == 2
    assert main(["run", "--bogus.key", "1"]) == 2
    assert main(["run", "--distill.epochs"]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[nonsense]\nx = 1\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


def test_runtime_failure_exits_1(tmp_path):
    # an IDX path that does not exist only fails once the dataset is loaded
    code = main([
        "run", "--output", str(tmp_path / "o"), "--dataset.kind", "idx",
        "--dataset.images", json.dumps(str(tmp_path / "x.idx")),
        "--dataset.labels", json.dumps(str(tmp_path / "y.idx")),
    ])
    assert code == 1


def test_compare(tmp_path):
    assert _run(tmp_path, "--strategy", "random", "--repeat", "3") == 0
    assert _run(tmp_path, "--strategy", "proposed", "--repeat", "1") == 0
    out = tmp_path / "compare.csv"
    assert main(["compare", str(tmp_path / "out"), "--output", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    rand = [r for r in rows if r["strategy"] == "random"]
    prop = [r for r in rows if r["strategy"] == "proposed"]
    assert len(rand) == len(prop) == 7
    assert all(r["runs"] == "3" for r in rand)
    assert all(float(r["std_test_accuracy"]) == 0.0 for r in prop)

    accs = []
    for seed in (0, 1, 2):
        with open(tmp_path / "out" / "random" / f"seed-{seed}" / "records.csv") as fh:
            accs.append(float(list(csv.DictReader(fh))[-1]["test_accuracy"]))
    assert float(rand[-1]["mean_test_accuracy"]) == pytest.approx(sum(accs) / 3, abs=1e-15)


def test_compare_errors(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["compare", str(tmp_path / "empty")]) == 2
    assert main(["compare", str(tmp_path / "nope")]) == 2
    assert _run(tmp_path, "--strategy", "random", "--repeat", "1") == 0
    other = tmp_path / "other"
    code = main(["run", "--config", str(CONFIG), "--output", str(other), *QUICK,
                 "--strategy", "random", "--repeat", "1", "--schedule.final", "0.3"])
    assert code == 0
    assert main(["compare", str(tmp_path / "out"), str(other), "--output", str(tmp_path / "c.csv")]) == 2


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    for name in ("gradient-check", "softmax-invariants", "kl-oracle", "transfer-loss-oracle",
                 "selection-oracle", "bound-check"):
        assert f"PASS {name}" in out


def test_selftest_catches_corrupted_kl_eps(capsys):
    assert main(["selftest", "--kl-eps", "0.2"]) == 1
    assert "FAIL kl-oracle" in capsys.readouterr().out


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit):
        main(["run", "--help"])
    out = capsys.readouterr().out
    for flag in ("--config", "--strategy", "--seed", "--repeat", "--output", "--manifest", "ALKT_THREADS"):
        assert flag in out


def test_load_config_layers():
    cfg = load_config(CONFIG, {"distill.epochs": "7", "seed": "3", "strategy": "margin,random"})
    assert cfg["distill"]["epochs"] == 7
    assert cfg["run"]["strategy"] == ["margin", "random"]
    assert seeds_for(cfg, 2).data == 5
    assert load_config()["distill"]["lambda"] == 100.0
    with pytest.raises(ConfigError):
        load_config(None, {"arch.widths": "[4, 4]"})
