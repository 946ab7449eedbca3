import csv
import json

import numpy as np
import pytest

from cli_helpers import TINY, tiny_table, write_toml
from subspace_inference.cli.datasets import save_csv_dataset
from subspace_inference.cli.main import main
from subspace_inference.cli.serialize import load_checkpoint, load_samples, load_subspace


@pytest.fixture
def workdir(tmp_path):
    save_csv_dataset(tiny_table(), tmp_path / "tiny.csv")
    write_toml(tmp_path / "tiny.toml", TINY)
    return tmp_path


def run(workdir, *argv, extra=()):
    sets = [a for s in extra for a in ("--set", s)]
    return main([argv[0], "--config", str(workdir / "tiny.toml"), *sets, *argv[1:]])


def test_full_pipeline(workdir, capsys):
    w = workdir
    assert run(w, "train", "--out", str(w / "sgd.json")) == 0
    assert run(w, "swa", "--checkpoint", str(w / "sgd.json"), "--out", str(w / "swa.json")) == 0
    _, _, meta, buf = load_checkpoint(w / "swa.json")
    assert len(buf) == 5 and meta["stage"] == "swa"
    assert run(w, "subspace", "--checkpoint", str(w / "swa.json"), "--out", str(w / "sub.json")) == 0
    sub, arch = load_subspace(w / "sub.json")
    assert sub.dim == 2 and arch.input_dim == 2
    assert run(w, "sample-ess", "--subspace", str(w / "sub.json"), "--out", str(w / "ess.json")) == 0
    assert load_samples(w / "ess.json").samples.shape == (6, 2)
    assert run(w, "fit-vi", "--subspace", str(w / "sub.json"), "--out", str(w / "vi.json")) == 0
    assert load_samples(w / "vi.json").provenance == "vi"
    args = ("--subspace", str(w / "sub.json"), "--samples", str(w / "ess.json"))
    assert run(w, "predict", *args, "--out", str(w / "pred.csv")) == 0
    rows = list(csv.DictReader((w / "pred.csv").open()))
    assert len(rows) == 8 and all(float(r["std"]) > 0 for r in rows)
    capsys.readouterr()
    assert run(w, "eval", *args, "--interval", "mixture") == 0
    metrics = json.loads(capsys.readouterr().out)
    assert set(metrics) >= {"nll_norm", "rmse", "coverage95"}
    assert run(w, "spectrum", "--checkpoint", str(w / "swa.json"), "--lanczos-iters", "4", "--out", str(w / "spec.csv")) == 0
    assert (w / "spec.csv").read_text().strip()


def test_curve_commands(workdir):
    w = workdir
    for name, seed in (("a", "1"), ("b", "2")):
        assert run(w, "train", "--out", str(w / f"{name}0.json"), extra=[f"protocol.seed={seed}"]) == 0
        assert run(w, "swa", "--checkpoint", str(w / f"{name}0.json"), "--out", str(w / f"{name}.json")) == 0
    ends = ("--checkpoint", str(w / "a.json"), "--other", str(w / "b.json"))
    assert run(w, "curve-find", *ends, "--out", str(w / "mid.json")) == 0
    assert run(w, "subspace", *ends, "--midpoint", str(w / "mid.json"), "--out", str(w / "cs.json"),
               extra=["subspace.kind=curve"]) == 0
    assert load_subspace(w / "cs.json")[0].kind == "curve"


def test_uci_and_sweep(workdir, capsys):
    w = workdir
    assert run(w, "uci", "--out", str(w / "uci.csv"), "--report", str(w / "uci.json")) == 0
    report = json.loads((w / "uci.json").read_text())
    assert report["n_completed"] == 2 and len(report["trials"][0]["test_index"]) == 8
    assert run(w, "temp-sweep", "--grid", "1,10", "--out", str(w / "sweep.csv")) == 0
    temps = [float(r["temperature"]) for r in csv.DictReader((w / "sweep.csv").open())]
    assert temps == [1.0, 10.0]


def test_synth_writes_curves(workdir, capsys):
    w = workdir
    extra = ["data.source=synthetic", "data.n_points=60", "model.augment_square_input=true"]
    assert run(w, "synth", "--grid-points", "31", "--out-dir", str(w / "out"), extra=extra) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out["gap_to_data_std_ratio"]) == {"pca", "random"}
    data = np.loadtxt(w / "out" / "predictive_pca.csv", delimiter=",", skiprows=1)
    assert data.shape == (31, 3 + 6)


def test_usage_errors_exit_1(workdir, capsys):
    with pytest.raises(SystemExit) as info:
        main(["train"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 1
    assert run(workdir, "train", "--out", str(workdir / "x.json"), extra=["subspace.rank=99"]) == 1
    assert run(workdir, "train", "--out", str(workdir / "x.json"), extra=["model.colour=red"]) == 1


def test_data_errors_exit_2(workdir, capsys):
    w = workdir
    (w / "tiny.csv").write_text("a,b,y\n1,2,3\n4,five,6\n")
    assert run(w, "train", "--out", str(w / "x.json")) == 2
    assert "line 3" in capsys.readouterr().err
    assert run(w, "swa", "--checkpoint", str(w / "missing.json"), "--out", str(w / "y.json")) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exits_3(workdir, capsys):
    assert run(workdir, "train", "--out", str(workdir / "x.json"), extra=["train.learning_rate=1e8"]) == 3
    assert "non-finite" in capsys.readouterr().err
