import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from iamseq import cli
from iamseq.config import load_config, parse_config
from iamseq.data import load_csv
from iamseq.errors import ConfigError, DivergenceError

SMALL = {
    "seed": 0,
    "synth": {"num_classes": 3, "windows_per_class": 30},
    "model": {"num_classes": 3, "hidden": 6, "fc1": 8, "fc2": 8},
    "train": {"epochs": 3, "batch_size": 16, "lr": 0.005},
}


def write_cfg(path, **over):
    cfg = {**SMALL, **over}
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def run(argv, capsys):
    code = cli.main(argv + ["-q"])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def trained(workdir, capsys):
    cfg = write_cfg(workdir / "small.yaml")
    assert run(["synth", "--config", cfg], capsys)[0] == 0
    assert run(["train", "--config", cfg], capsys)[0] == 0
    return workdir, cfg


# ---------------------------------------------------------------- config


def test_config_defaults_and_overrides(tmp_path):
    cfg = load_config(write_cfg(tmp_path / "exp.yaml"), seed=9, out="elsewhere")
    assert cfg.seed == 9 and cfg.out == "elsewhere"
    assert load_config(write_cfg(tmp_path / "exp.yaml")).out.endswith("exp")
    assert cfg.model.num_features == 52 and cfg.train_config().epochs == 3


@pytest.mark.parametrize("raw, where", [
    ({"seed": -1}, "seed"),
    ({"seed": 0, "model": {"hidden": 0}}, "model/hidden"),
    ({"seed": 0, "train": {"lr": "fast"}}, "train/lr"),
    ({"seed": 0, "model": {"pooling": "max"}}, "model/pooling"),
    ({"seed": 0, "extra": 1}, "<root>"),
])
def test_schema_rejects(raw, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(raw)


def test_cross_field_rejects():
    with pytest.raises(ConfigError):
        parse_config({"seed": 0, "train": {"lr": 1e-5, "lr_floor": 1e-4}})
    with pytest.raises(ConfigError, match="seed"):
        parse_config({}).train_config()


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("seed: [1,\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(tmp_path / "bad.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(tmp_path / "list.yaml")


# ---------------------------------------------------------------- synth


def test_synth_files_and_manifest(workdir, capsys):
    cfg = write_cfg(workdir / "s.yaml", synth={"num_classes": 5, "windows_per_class": 200})
    code, out, _ = run(["synth", "--config", cfg], capsys)
    assert code == 0
    data = workdir / "runs" / "s" / "data"
    files = sorted(p.relative_to(data).as_posix() for p in data.rglob("*.csv"))
    assert len(files) == 10
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["num_classes"] == 5
    assert sorted(f["path"] for f in manifest["files"]) == files
    assert manifest["signature_channels"]["1"] == [4, 21]
    series = load_csv(data / "train" / "class_03.csv")
    assert series.num_samples == 209 and series.label == 3


def test_synth_rerun_byte_identical(workdir, capsys):
    cfg = write_cfg(workdir / "s.yaml")
    snaps = []
    for _ in range(2):
        assert run(["synth", "--config", cfg], capsys)[0] == 0
        snaps.append({p: p.read_bytes() for p in sorted((workdir / "runs").rglob("*")) if p.is_file()})
    assert snaps[0] == snaps[1]
    assert run(["synth", "--config", cfg, "--seed", "1", "--out", "other"], capsys)[0] == 0
    assert (workdir / "other/data/train/class_00.csv").read_bytes() != \
        (workdir / "runs/s/data/train/class_00.csv").read_bytes()


def test_synth_rejects_22_classes(workdir, capsys):
    cfg = write_cfg(workdir / "s.yaml", synth={"num_classes": 22})
    code, _, err = run(["synth", "--config", cfg], capsys)
    assert code == 2 and err.startswith("ERR:parameter:") and "21" in err


def test_synth_needs_seed(workdir, capsys):
    (workdir / "n.yaml").write_text("synth: {num_classes: 2}\n")
    code, _, err = run(["synth", "--config", "n.yaml"], capsys)
    assert code == 2 and err.startswith("ERR:config:") and "seed" in err
    assert run(["synth", "--config", "n.yaml", "--seed", "3"], capsys)[0] == 0


def test_synth_unwritable(workdir, capsys):
    (workdir / "blocker").write_text("")
    cfg = write_cfg(workdir / "s.yaml")
    code, _, err = run(["synth", "--config", cfg, "--out", "blocker"], capsys)
    assert code == 3 and err.startswith("ERR:io:")


# ---------------------------------------------------------------- train / eval / explain


def test_train_artifacts(trained):
    root, _ = trained
    run_dir = root / "runs" / "small"
    for name in ("best.ckpt", "last.ckpt", "history.csv", "normalizer.json", "config.yaml"):
        assert (run_dir / name).is_file()
    stats = json.loads((run_dir / "normalizer.json").read_text())
    assert len(stats["mean"]) == 52


def test_train_missing_dir(workdir, capsys):
    cfg = write_cfg(workdir / "m.yaml", data={"train_dir": "no/such/dir"})
    code, _, err = run(["train", "--config", cfg], capsys)
    assert code == 3 and "no/such/dir" in err and err.startswith("ERR:data:")
    assert err.count("\n") == 1


def test_train_zero_epochs(workdir, capsys):
    cfg = write_cfg(workdir / "z.yaml", train={"epochs": 0})
    run(["synth", "--config", cfg], capsys)
    code, out, _ = run(["train", "--config", cfg], capsys)
    assert code == 0 and "initial checkpoint" in out
    assert (workdir / "runs/z/best.ckpt").is_file()


def test_train_divergence_exit_code(workdir, capsys, monkeypatch):
    cfg = write_cfg(workdir / "d.yaml")
    run(["synth", "--config", cfg], capsys)

    def boom(*a, **k):
        raise DivergenceError("epoch 1, step 0: non-finite gradient")

    monkeypatch.setattr(cli, "train", boom)
    code, _, err = run(["train", "--config", cfg], capsys)
    assert code == 4 and err.startswith("ERR:numeric:epoch 1, step 0")


def test_eval_matches_history(trained, capsys):
    root, cfg = trained
    code, out, _ = run(["eval", "--config", cfg], capsys)
    assert code == 0 and "accuracy=" in out
    metrics = json.loads((root / "runs/small/eval/metrics.json").read_text())
    rows = list(csv.DictReader((root / "runs/small/history.csv").open()))
    best = min(rows, key=lambda r: float(r["test_loss"]))
    assert abs(metrics["accuracy"] - float(best["test_acc"])) <= 1e-9


def test_eval_explicit_paths(trained, capsys, tmp_path_factory):
    root, _ = trained
    out = tmp_path_factory.mktemp("reports")
    code, _, _ = run(["eval", "--checkpoint", "runs/small/last.ckpt", "--test-dir", "runs/small/data/test",
                      "--out", str(out)], capsys)
    assert code == 0 and (out / "eval" / "confusion.csv").is_file()


def test_eval_feature_mismatch(trained, capsys):
    root, cfg = trained
    narrow = root / "narrow"
    narrow.mkdir()
    rng = np.random.default_rng(0)
    with (narrow / "a.csv").open("w") as fh:
        fh.write(",".join([f"f{i:02d}" for i in range(10)] + ["label"]) + "\n")
        for _ in range(12):
            fh.write(",".join(str(v) for v in rng.normal(size=10)) + ",0\n")
    code, _, err = run(["eval", "--config", cfg, "--test-dir", "narrow"], capsys)
    assert code == 3 and err.startswith("ERR:contract:") and "52" in err


def test_eval_missing_sidecar(trained, capsys):
    root, cfg = trained
    (root / "runs/small/normalizer.json").unlink()
    code, _, err = run(["eval", "--config", cfg], capsys)
    assert code == 3 and "normalizer" in err


def test_eval_corrupt_checkpoint(trained, capsys):
    root, cfg = trained
    ck = root / "runs/small/best.ckpt"
    raw = bytearray(ck.read_bytes())
    raw[-3] ^= 0x55
    ck.write_bytes(bytes(raw))
    code, _, err = run(["eval", "--config", cfg], capsys)
    assert code == 3 and err.startswith("ERR:checkpoint:")


def test_explain_top_k(trained, capsys):
    root, cfg = trained
    code, out, _ = run(["explain", "--config", cfg, "--top-k", "3"], capsys)
    assert code == 0
    for row in csv.DictReader((root / "runs/small/explain/cause_summary.csv").open()):
        if row["top_features"] != "omitted":
            assert len(row["top_features"].split()) == 3


# ---------------------------------------------------------------- prep


def test_prep_converts_feature_major_dat(workdir, capsys):
    rng = np.random.default_rng(0)
    values = rng.normal(size=(52, 30))
    np.savetxt(workdir / "d01.dat", values)
    code, out, _ = run(["prep", "d01.dat", "--label", "1", "--fault-start", "20", "--out", "conv"], capsys)
    assert code == 0 and "30 rows" in out
    s = load_csv(workdir / "conv/d01.csv", per_row=True)
    np.testing.assert_allclose(s.values, values.T, rtol=1e-15)
    assert s.labels.tolist() == [0] * 20 + [1] * 10


def test_prep_dat_needs_label(workdir, capsys):
    np.savetxt(workdir / "d.dat", np.zeros((5, 52)))
    code, _, err = run(["prep", "d.dat"], capsys)
    assert code == 2 and "--label" in err


def test_prep_reports_bad_csv(workdir, capsys):
    (workdir / "x.csv").write_text("f00,f01,label\n1,2,0\n3,nan,0\n")
    code, _, err = run(["prep", "x.csv", "--num-features", "2"], capsys)
    assert code == 3 and "row 2, column f01" in err


def test_usage_error(capsys):
    code = None
    with pytest.raises(SystemExit) as exc:
        cli.main(["bogus"])
    assert exc.value.code == 2
    assert capsys.readouterr().err.startswith("ERR:usage:")
    with pytest.raises(SystemExit):
        cli.main(["synth", "--seed", "-4"])


def test_module_entry_point(workdir):
    proc = subprocess.run([sys.executable, "-m", "iamseq", "train", "--config", "nope.yaml"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr.strip().startswith("ERR:config:") and "nope.yaml" in proc.stderr
