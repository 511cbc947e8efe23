import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from ncg import autodiff as ad
from ncg import cli
from ncg import gradcheck
from ncg import model as M
from ncg import signals as S
from ncg.autodiff import Tensor

ROOT = Path(__file__).resolve().parents[1]
SMOKE = ROOT / "configs" / "smoke.json"


@pytest.fixture(autouse=True)
def deterministic(monkeypatch):
    monkeypatch.setenv("NCG_DETERMINISTIC", "1")


def write_config(tmp_path, **sections):
    cfg = json.loads(SMOKE.read_text())
    for k, v in sections.items():
        cfg[k] = {**cfg.get(k, {}), **v} if isinstance(v, dict) else v
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


# -- generate --------------------------------------------------------------------------

def test_generate_writes_dataset_files(tmp_path):
    assert run("generate", "--config", SMOKE, "--out", tmp_path / "o") == 0
    d = tmp_path / "o" / "data"
    assert sorted(p.name for p in d.iterdir()) == ["meta.json", "test.csv", "train.csv", "truth.csv"]
    assert len((d / "train.csv").read_text().splitlines()) == 10_001
    meta = json.loads((d / "meta.json").read_text())
    assert meta["seed"] == 0 and meta["tau"] == 2000


def test_generate_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("generate", "--config", SMOKE, "--out", tmp_path / name) == 0
    for f in ("train.csv", "test.csv", "truth.csv", "meta.json"):
        assert (tmp_path / "a/data" / f).read_bytes() == (tmp_path / "b/data" / f).read_bytes()


def test_seed_flag_changes_data(tmp_path):
    run("generate", "--config", SMOKE, "--out", tmp_path / "a")
    run("generate", "--config", SMOKE, "--out", tmp_path / "b", "--seed", 1)
    assert (tmp_path / "a/data/train.csv").read_bytes() != (tmp_path / "b/data/train.csv").read_bytes()


def test_default_config_dataset_size():
    from ncg import config as C
    cfg = C.load(None)
    assert cfg["data"]["n"] == 500_000 and cfg["data"]["tau"] == 2000


def test_invalid_tau_is_a_schema_error_before_writing(tmp_path, capsys):
    p = write_config(tmp_path, data={"tau": 0})
    assert run("generate", "--config", p, "--out", tmp_path / "o") == 1
    assert "tau" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unknown_key_is_rejected(tmp_path):
    p = write_config(tmp_path, train={"learning_rate": 0.1})
    assert run("generate", "--config", p, "--out", tmp_path / "o") == 1


def test_usage_errors_exit_1():
    assert run("frobnicate") == 1
    assert run() == 1


# -- train / eval ------------------------------------------------------------------------

def test_train_without_data_fails_before_building(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(M, "build", lambda *a, **k: pytest.fail("model built without data"))
    assert run("train", "--config", SMOKE, "--out", tmp_path / "o") == 2
    assert "missing data file" in capsys.readouterr().err


def test_smoke_pipeline(tmp_path):
    out = tmp_path / "o"
    assert run("generate", "--config", SMOKE, "--out", out) == 0
    assert run("train", "--config", SMOKE, "--out", out) == 0
    rows = list(csv.DictReader((out / "runlog.csv").open()))
    assert [int(r["epoch"]) for r in rows] == list(range(5))
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 0 and summary["final_epoch"] == 5
    assert run("eval", "--config", SMOKE, "--out", out) == 0
    for f in ("correlation.json", "transitions.json", "transitions.dot", "overlay.svg", "training_curve.svg"):
        assert (out / f).exists(), f
    svg = (out / "overlay.svg").read_text()
    labels = [l.split('"')[0] for l in svg.split('data-label="')[1:]]
    assert labels == ["class 0", "class 1", "truth"]


def test_resume_continues_epoch_counter(tmp_path):
    out = tmp_path / "o"
    p = write_config(tmp_path, train={"epochs": 2})
    run("generate", "--config", p, "--out", out)
    assert run("train", "--config", p, "--out", out) == 0
    assert run("train", "--config", p, "--out", out, "--resume") == 0
    rows = list(csv.DictReader((out / "runlog.csv").open()))
    assert [int(r["epoch"]) for r in rows] == [0, 1, 2, 3]
    assert M.load(out / "checkpoint.npz").epoch == 4


def test_resume_without_checkpoint_fails(tmp_path):
    out = tmp_path / "o"
    run("generate", "--config", SMOKE, "--out", out)
    assert run("train", "--config", SMOKE, "--out", out, "--resume") == 2


def _oracle_checkpoint(path):
    spec = M.ModelSpec(transformer=(M.LayerSpec(1, 2),), predictor=(M.LayerSpec(1, 2),), K=2, delta=1,
                       allow_overlap=True)
    state = M.build(spec, np.random.default_rng(0))
    state.params["T.0.kernel"] = Tensor(np.array([[[1.0]], [[-1.0]]]), requires_grad=True)
    M.save(state, path)


def test_eval_oracle_checkpoint_reports_one(tmp_path):
    # softmax([z, -z]) at z = logit(psi) / 2 is exactly psi
    psi = S.envelope(np.arange(4000), 400)
    x = 0.5 * np.log(psi / (1 - psi))
    sig = S.Signal(x, truth=psi)
    S.save_dataset(tmp_path / "data", sig, sig, {})
    p = write_config(tmp_path, data={"dir": str(tmp_path / "data")})
    _oracle_checkpoint(tmp_path / "oracle.npz")
    assert run("eval", "--config", p, "--out", tmp_path / "o", "--checkpoint", tmp_path / "oracle.npz") == 0
    corr = json.loads((tmp_path / "o" / "correlation.json").read_text())
    assert corr["max_abs_pearson"] == pytest.approx(1.0, abs=1e-12)


def test_eval_without_truth_writes_transitions_only(tmp_path):
    (tmp_path / "x.csv").write_text("v\n" + "\n".join(str(v) for v in np.sin(np.arange(500) / 10)) + "\n")
    p = write_config(tmp_path, data={"csv": str(tmp_path / "x.csv"), "column": "v"})
    _oracle_checkpoint(tmp_path / "oracle.npz")
    with pytest.warns(UserWarning, match="no ground truth"):
        assert run("eval", "--config", p, "--out", tmp_path / "o", "--checkpoint", tmp_path / "oracle.npz") == 0
    files = sorted(f.name for f in (tmp_path / "o").iterdir())
    assert files == ["transitions.dot", "transitions.json"]


def test_eval_missing_checkpoint(tmp_path):
    assert run("eval", "--config", SMOKE, "--out", tmp_path / "o") == 2


# -- sweep ----------------------------------------------------------------------------------

def test_sweep_emits_one_row_per_cell(tmp_path):
    p = write_config(tmp_path, data={"n": 2000}, train={"epochs": 1, "batch_size": 2000})
    out = tmp_path / "sw"
    assert run("sweep", "--config", p, "--out", out, "--param", "cos_theta",
               "--values", "0.2,0.4,0.6,0.8,0.95", "--seeds", "0,1,2") == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert len(rows) == 15
    assert {float(r["value"]) for r in rows} == {0.2, 0.4, 0.6, 0.8, 0.95}
    assert all(r["error"] == "" and r["pearson"] for r in rows)


def test_sweep_failed_cell_does_not_abort(tmp_path):
    p = write_config(tmp_path, data={"n": 2000}, train={"epochs": 1, "batch_size": 2000})
    out = tmp_path / "sw"
    # chunk_length 10 is below the model window, so that cell fails
    assert run("sweep", "--config", p, "--out", out, "--param", "train.chunk_length",
               "--values", "1000,10", "--seeds", "0") == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert rows[0]["error"] == "" and "minimum window" in rows[1]["error"]


def test_sweep_empty_values_is_an_error(tmp_path):
    assert run("sweep", "--config", SMOKE, "--out", tmp_path, "--param", "cos_theta", "--values", "") == 1


# -- gradcheck --------------------------------------------------------------------------------

def test_gradcheck_command_passes(capsys):
    assert run("gradcheck", "--instances", 3) == 0
    text = capsys.readouterr().out
    assert "ALL PASS" in text
    for op in gradcheck.CASES:
        assert op in text
    assert "max_rel_err=" in text


def test_gradcheck_detects_sign_bug_in_conv_backward(monkeypatch, capsys):
    real = ad.conv1d

    def buggy(x, kernel, bias):
        out = real(x, kernel, bias)
        node = out._tape.nodes[-1] if out._tape is not None else None
        if node is not None:
            fn = node.grad_fn
            node.grad_fn = lambda g: tuple(None if gi is None else -gi for gi in fn(g))
        return out

    monkeypatch.setattr(ad, "conv1d", buggy)
    assert run("gradcheck", "--instances", 2) == 2
    text = capsys.readouterr().out
    assert "FAIL conv1d" in text
