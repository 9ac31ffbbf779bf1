import json

import numpy as np
import pytest

from ilash import surrogate
from ilash.cli import main
from ilash.encoding import CSV_HEADER


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "d1"), "--samples", "120", "--seed", "0"]) == 0
    assert main(["gen-data", "--out", str(root / "d2"), "--samples", "120", "--seed", "1"]) == 0
    for name, data, seed in (("h1", "d1", "0"), ("h2", "d2", "1")):
        assert main(["run-heu", "--data", str(root / data), "--out", str(root / name),
                     "--epochs", "1", "--seed", seed]) == 0
    assert main(["fit-surrogate", "--csv", f"h1={root / 'h1' / 'ilash_dataset.csv'}",
                 "--csv", f"h2={root / 'h2' / 'ilash_dataset.csv'}", "--hold-out", "h2",
                 "--out", str(root / "s")]) == 0
    assert main(["run-pred", "--surrogate", str(root / "s" / "surrogate.json"),
                 "--data", str(root / "d1"), "--out", str(root / "p1"), "--epochs", "1",
                 "--g-th", "0.4"]) == 0
    return root


def read(path):
    return json.loads(path.read_text())


def test_gen_data_layout(workspace):
    meta = read(workspace / "d1" / "meta.json")
    assert len(meta["tasks"]) == 3
    assert [len(meta["splits"][s]) for s in ("train", "val", "test")] == [84, 12, 24]


def test_gen_data_deterministic_and_errors(tmp_path):
    for d in ("a", "b"):
        assert main(["gen-data", "--out", str(tmp_path / d), "--samples", "50"]) == 0
    for name in ("meta.json", "inputs.bin", "task_1.bin", "task_2.bin", "task_3.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["gen-data", "--out", str(tmp_path / "c"), "--samples", "0"]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen-data", "--out", str(blocker / "sub"), "--samples", "10"]) == 3


def test_run_heu_artifacts(workspace):
    rep = read(workspace / "h1" / "report.json")
    assert rep["schema_version"] == 1
    assert all(t["chosen_depth"] >= 2 for t in rep["tasks"][1:])
    header = (workspace / "h1" / "ilash_dataset.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_HEADER)
    meta = read(workspace / "h1" / "report.meta.json")
    assert meta["energy"]["profile"] == "desk"
    assert read(workspace / "h1" / "model.json")["task_order"] == [1, 2, 3]


def test_fit_surrogate_outputs(workspace):
    metrics = read(workspace / "s" / "metrics.json")
    assert metrics["kind"] == "decision_tree"
    assert metrics["train_sources"] == ["h1"]
    assert {"mae", "mse", "rmse", "r2", "schema_version"} <= set(metrics)


def test_fit_surrogate_errors(workspace, capsys):
    csv = str(workspace / "h1" / "ilash_dataset.csv")
    with pytest.raises(SystemExit):
        main(["fit-surrogate", "--csv", csv, "--csv", csv, "--out", "x"])
    args = ["fit-surrogate", "--csv", f"a={csv}", "--csv", f"b={csv}", "--out",
            str(workspace / "x")]
    assert main(args + ["--hold-out", "a", "--kind", "svr"]) == 2
    assert main(args + ["--hold-out", "zzz"]) == 2


def test_run_pred_report(workspace):
    rep = read(workspace / "p1" / "report.json")
    assert rep["trainer_calls"] == 1 and rep["g_th"] == 0.4
    assert rep["surrogate_kind"] == "decision_tree"


def test_run_pred_rejects_wrong_width(workspace, tmp_path):
    m = surrogate.LinearSurrogate().fit(np.eye(4), np.arange(4.0))
    surrogate.save(m, tmp_path / "narrow.json")
    rc = main(["run-pred", "--surrogate", str(tmp_path / "narrow.json"), "--data",
               str(workspace / "d1"), "--out", str(tmp_path / "o"), "--epochs", "1"])
    assert rc == 3


def test_compare(workspace, tmp_path):
    out = tmp_path / "cmp.json"
    h, p = workspace / "h1" / "report.json", workspace / "p1" / "report.json"
    assert main(["compare", "--heu", str(h), "--pred", str(p), "--out", str(out)]) == 0
    cmp = read(out)
    assert cmp["schema_version"] == 1 and cmp["ratios"]["trainer_calls"] == 19
    assert main(["compare", "--heu", str(h), "--pred", str(h), "--out", str(out)]) == 0
    assert all(v == 1.0 for v in read(out)["ratios"].values())
    assert main(["compare", "--heu", str(h), "--pred", str(tmp_path / "none.json"),
                 "--out", str(out)]) == 3


def test_config_file_and_errors(workspace, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 1\nll = 4\nul = 5\n")
    out = tmp_path / "h"
    assert main(["run-heu", "--data", str(workspace / "d1"), "--out", str(out),
                 "--config", str(cfg), "--ul", "6", "--threads", "2"]) == 0
    rep = read(out / "report.json")
    assert (rep["ll"], rep["ul"]) == (4, 6)
    cfg.write_text("epochs = 1\ng_th = 7\n")
    assert main(["run-heu", "--data", str(workspace / "d1"), "--out", str(out),
                 "--config", str(cfg)]) == 2
    assert main(["run-heu", "--data", str(tmp_path / "missing"), "--out", str(out),
                 "--epochs", "1"]) == 3
    assert main(["run-heu", "--data", str(workspace / "d1"), "--out", str(out),
                 "--epochs", "1", "--ll", "9", "--ul", "3"]) == 4
    assert main(["run-heu", "--data", str(workspace / "d1"), "--out", str(out),
                 "--epochs", "1", "--power-profile", "nope"]) == 2


def test_custom_profiles_and_template(workspace, tmp_path):
    prof = tmp_path / "profiles.json"
    prof.write_text(json.dumps([{"name": "lab", "p_c": 10, "p_r": 2, "p_g": 0, "g": 0}]))
    tpl = tmp_path / "tpl.json"
    tpl.write_text(json.dumps([{"kind": "Conv2D", "units_or_channels": 4, "kernel_size": 3,
                                "stride": 1, "padding": "same", "activation": "relu"},
                               {"kind": "Pool"}, {"kind": "Flatten"},
                               {"kind": "Dense", "units_or_channels": 8, "activation": "relu"}]))
    out = tmp_path / "h"
    assert main(["run-heu", "--data", str(workspace / "d1"), "--out", str(out), "--epochs", "1",
                 "--profiles", str(prof), "--power-profile", "lab", "--template", str(tpl),
                 "--ll", "0"]) == 0
    assert read(out / "report.meta.json")["energy"]["profile"] == "lab"
    # 4-layer template: candidates at depths 0..3 for each of two later tasks
    assert read(out / "report.json")["trainer_calls"] == 1 + 2 * 4


def test_help_lists_every_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run-heu", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--g-th", "--ll", "--ul", "--epochs", "--batch-size", "--learning-rate",
                 "--seed", "--power-profile", "--pue", "--profiles", "--threads", "--config",
                 "--template", "--freeze-shared"):
        assert flag in text
