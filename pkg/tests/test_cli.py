import csv
import json

import numpy as np
import pytest

from plate import cli
from plate.envgen import Dataset
from plate.training import load_checkpoint

DATA_FLAGS = ["--dataset.num_states", "10", "--dataset.num_actions", "4", "--dataset.obs_dim", "6",
              "--dataset.num_trajectories", "30"]
MODEL_FLAGS = ["--model.latent_dim", "4", "--model.encoder_hidden", "8", "--model.d_model", "8",
               "--model.heads", "2", "--model.layers", "1", "--model.fc_hidden", "8",
               "--training.batch_size", "8", "--training.lr", "0.001"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["generate", *DATA_FLAGS, "--out", str(d)]) == 0
    assert cli.main(["train", "--dataset", str(d / "dataset.plte"), "--out", str(d), *DATA_FLAGS,
                     *MODEL_FLAGS, "--training.epochs", "2"]) == 0
    return d


def test_generate_writes_dataset_and_config(workdir):
    ds = Dataset.load(workdir / "dataset.plte")
    assert len(ds.trajectories) == 30 and ds.num_actions == 4
    stored = json.loads((workdir / "config.json").read_text())
    assert stored["config"]["dataset"]["num_states"] == 10
    assert stored["dataset_fingerprint"] == ds.fingerprint()


def test_train_outputs(workdir):
    state, meta = load_checkpoint(workdir / "checkpoint_last.plte")
    assert state.epoch == 2 and state.step > 0
    assert meta["dataset_fingerprint"] == Dataset.load(workdir / "dataset.plte").fingerprint()
    assert (workdir / "checkpoint_best.plte").exists()
    rows = list(csv.DictReader((workdir / "loss_curve.csv").open()))
    assert [int(r["epoch"]) for r in rows] == [1, 2]


def test_eval_and_plan(workdir, capsys):
    args = ["--dataset", str(workdir / "dataset.plte"), "--checkpoint",
            str(workdir / "checkpoint_last.plte"), "--out", str(workdir / "eval")]
    assert cli.main(["eval", *args, "--baselines", *DATA_FLAGS, *MODEL_FLAGS]) == 0
    rows = list(csv.DictReader((workdir / "eval" / "report.csv").open()))
    methods = {r["method"] for r in rows}
    assert {"random", "retrieval", "plate/greedy"} <= methods
    meta = json.loads((workdir / "eval" / "report.meta.json").read_text())
    assert meta["dataset_fingerprint"]
    capsys.readouterr()
    assert cli.main(["plan", *args[:4], "--decode", "greedy", "--index", "0", "1", "2"]) == 0
    out = capsys.readouterr().out
    assert out.count("traj ") == 3 and "reaches_goal=" in out


def test_ablate_runs_sweep(workdir, capsys):
    assert cli.main(["ablate", "--dataset", str(workdir / "dataset.plte"), "--checkpoint",
                     str(workdir / "checkpoint_last.plte"), "--out", str(workdir / "abl"),
                     "--widths", "1,2", *DATA_FLAGS, *MODEL_FLAGS, "--training.epochs", "1",
                     "--compounding-horizon", "3"]) == 0
    rows = list(csv.DictReader((workdir / "abl" / "ablation.csv").open()))
    methods = {r["method"] for r in rows}
    assert {"plate/greedy", "plate/beam(k=1,N=1)", "plate/beam(k=2,N=3)", "fc/greedy"} <= methods
    assert any(r["metric"] == "compounding_error_t3" for r in rows)
    assert "non-decreasing" in capsys.readouterr().out


def test_resume_matches_uninterrupted_run(workdir, tmp_path):
    ds = str(workdir / "dataset.plte")
    common = [*DATA_FLAGS, *MODEL_FLAGS, "--dataset", ds]
    assert cli.main(["train", *common, "--training.epochs", "3", "--out", str(tmp_path / "full")]) == 0
    assert cli.main(["train", *common, "--training.epochs", "3", "--out", str(tmp_path / "res"),
                     "--resume", str(workdir / "checkpoint_last.plte")]) == 0
    full, _ = load_checkpoint(tmp_path / "full" / "checkpoint_last.plte")
    res, _ = load_checkpoint(tmp_path / "res" / "checkpoint_last.plte")
    assert res.step == full.step and res.epoch == full.epoch == 3
    for k, v in full.model.state_dict().items():
        assert np.array_equal(v, res.model.state_dict()[k])
    assert [r["train_loss"] for r in res.history] == [r["train_loss"] for r in full.history]


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"model": {"depth": 3}}))
    assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "model.depth" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"num_states": 8, "num_actions": 3, "obs_dim": 4,
                                           "num_trajectories": 10, "horizons": [2]}}))
    assert cli.main(["generate", "--config", str(cfg), "--dataset.num_trajectories", "12",
                     "--out", str(tmp_path)]) == 0
    ds = Dataset.load(tmp_path / "dataset.plte")
    assert ds.graph.num_states == 8 and len(ds.trajectories) == 12


def test_invalid_values_exit_2(tmp_path):
    assert cli.main(["generate", "--dataset.num_states", "many", "--out", str(tmp_path)]) == 2
    assert cli.main(["generate", "--model.d_model", "10", "--model.heads", "4",
                     "--out", str(tmp_path)]) == 2


def test_missing_or_corrupt_data_exits_3(workdir, tmp_path):
    ck = str(workdir / "checkpoint_last.plte")
    assert cli.main(["eval", "--dataset", str(tmp_path / "nope.plte"), "--checkpoint", ck]) == 3
    bad = tmp_path / "bad.plte"
    bad.write_bytes((workdir / "dataset.plte").read_bytes()[:100])
    assert cli.main(["eval", "--dataset", str(bad), "--checkpoint", ck]) == 3


def test_lineage_mismatch_exits_3_unless_forced(workdir, tmp_path):
    assert cli.main(["generate", *DATA_FLAGS, "--dataset.seed", "9", "--out", str(tmp_path)]) == 0
    args = ["eval", "--dataset", str(tmp_path / "dataset.plte"), "--checkpoint",
            str(workdir / "checkpoint_last.plte"), "--out", str(tmp_path)]
    assert cli.main(args) == 3
    assert cli.main(args + ["--force"]) == 0
    assert cli.main(["generate", "--dataset.num_actions", "5", "--dataset.num_states", "10",
                     "--dataset.obs_dim", "6", "--dataset.num_trajectories", "10",
                     "--out", str(tmp_path / "five")]) == 0
    assert cli.main(["eval", "--dataset", str(tmp_path / "five" / "dataset.plte"), "--checkpoint",
                     str(workdir / "checkpoint_last.plte"), "--force"]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_4(workdir, tmp_path):
    assert cli.main(["train", "--dataset", str(workdir / "dataset.plte"), *DATA_FLAGS, *MODEL_FLAGS,
                     "--training.lr", "1e300", "--training.epochs", "2", "--out", str(tmp_path)]) == 4
