import csv
import json

import pytest

from rama.cli import main
from rama.config import TrainConfig
from rama.volume import read_manifest

from test_training import SMALL


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--subjects", "10", "--prevalence", "0.4",
                 "--dims", "16x16x16", "--seed", "2"]) == 0
    (root / "cfg.json").write_text(json.dumps(SMALL.replace(epochs=1).to_dict()))
    return root


def test_synth(workspace):
    rows = read_manifest(workspace / "data")
    assert len(rows) == 10 and sum(r.label for r in rows) == 4


def test_extract_radiomics(workspace):
    out = workspace / "rad.csv"
    assert main(["extract-radiomics", "--data", str(workspace / "data"), "--out", str(out)]) == 0
    with open(out) as f:
        rows = list(csv.reader(f))
    assert rows[0][0] == "subject_id" and len(rows[0]) == 51
    assert rows[0][1] == "dce_voxel_count" and rows[0][26] == "adc_voxel_count"
    assert len(rows) == 11


def test_train_eval_heatmap(workspace, capsys):
    run = workspace / "run"
    assert main(["train", "--data", str(workspace / "data"), "--config", str(workspace / "cfg.json"),
                 "--out", str(run)]) == 0
    assert main(["eval", "--run", str(run), "--out", str(workspace / "pred.csv")]) == 0
    report = json.loads(capsys.readouterr().out.split("\n", 1)[1])
    assert len(report["folds"]) == 2
    sid = read_manifest(workspace / "data")[0].subject_id
    out = workspace / "hm"
    assert main(["heatmap", "--run", str(run), "--subject", sid, "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    for mod in ("DCE", "ADC"):
        for view in ("axial", "sagittal", "coronal"):
            assert f"{sid}_{mod}_{view}.png" in names
        assert f"{sid}_{mod}_heatmap.rvol" in names and f"{sid}_{mod}_heatmap_up.rvol" in names
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["heatmap", "--run", str(run), "--subject", sid, "--out", str(out)]) == 0
    assert first == {p.name: p.read_bytes() for p in out.iterdir()}


def test_ablate_subset(workspace):
    out = workspace / "abl.csv"
    assert main(["ablate", "--data", str(workspace / "data"), "--config", str(workspace / "cfg.json"),
                 "--out", str(out), "--variants", "t2_plain", "t1_adc_rad"]) == 0
    assert len(out.read_text().splitlines()) == 3


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--probes", "10"]) == 0
    assert json.loads(capsys.readouterr().out)["max_relative_error"] <= 1e-4


def test_exit_codes(workspace, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"lr": -1}')
    assert main(["train", "--data", str(workspace / "data"), "--config", str(bad), "--out", str(tmp_path / "r")]) == 2
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == 3
    assert main(["heatmap", "--run", str(workspace / "run"), "--subject", "nobody", "--out", str(tmp_path)]) == 3
    assert main(["ablate", "--data", str(workspace / "data"), "--out", str(tmp_path / "a.csv"),
                 "--variants", "nope"]) == 2
