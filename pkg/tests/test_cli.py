import os

import numpy as np
import pytest

from winflownets.checkpoint import load
from winflownets.cli import main
from winflownets.training import load_run_state

SMALL = ["--env", "point", "-q",
         "--set", "train.warmup_steps=24", "--set", "train.total_steps=96",
         "--set", "train.hidden=8,8", "--set", "train.batch_size=8",
         "--set", "train.retrieval_batch_size=8", "--set", "train.eval_interval=24",
         "--set", "train.eval_episodes=2", "--set", "train.pretrain_transitions=100",
         "--set", "train.pretrain_epochs=1", "--set", "flow.M=8", "--set", "flow.K=4"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    assert main(["train", "--out", str(out), "--seed", "3"] + SMALL) == 0
    return out / "winflownets_point_sparse_none_seed3"


def test_train_layout(trained):
    names = set(os.listdir(trained))
    assert {"config.txt", "events.log", "final.ckpt", "metrics.csv", "summary.csv",
            "checkpoints"} <= names
    assert len(os.listdir(trained / "checkpoints")) == 3
    lines = (trained / "metrics.csv").read_text().splitlines()
    assert lines[0] == "timestep,mean_reward,std_reward,ci_width,n"
    assert [int(ln.split(",")[0]) for ln in lines[1:]] == [48, 72, 96]


def test_eval_and_dump(trained, tmp_path, capsys):
    csv = tmp_path / "traj.csv"
    assert main(["eval", str(trained / "final.ckpt"), "--episodes", "3",
                 "--dump-trajectory", str(csv), "-q"]) == 0
    out = capsys.readouterr().out
    assert "n=3" in out
    rows = csv.read_text().splitlines()
    assert len(rows) == 1 + 12


def test_inspect(trained, capsys):
    assert main(["inspect", str(trained / "final.ckpt")]) == 0
    out = capsys.readouterr().out
    assert "winflownets" in out


def test_transfer_zero_steps(trained, tmp_path):
    ckpt = str(trained / "final.ckpt")
    assert main(["transfer", ckpt, "--fault", "ad", "--steps", "0", "--out", str(tmp_path),
                 "-q"]) == 0
    (run,) = os.listdir(tmp_path)
    before = load_run_state(ckpt)
    after = load_run_state(os.path.join(tmp_path, run, "final.ckpt"))
    assert np.array_equal(before.flow.params.values, after.flow.params.values)
    assert after.config.env.fault == "ad"


def test_missing_checkpoint_exits_2(tmp_path, capsys):
    assert main(["transfer", str(tmp_path / "nope.ckpt")]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_arguments_exit_2(capsys):
    assert main(["train", "--bogus"]) == 2
    assert main(["train", "--fault", "melted"]) == 2
    assert main(["train", "--set", "train.nonexistent=1"]) == 2
    assert main(["train", "--variant", "v9"]) == 2
    assert main([]) == 2


def test_numeric_abort_exits_3(tmp_path, capsys):
    rc = main(["train", "--out", str(tmp_path), "--set", "train.lr_flow=1e300"] + SMALL)
    assert rc == 3
    (run,) = os.listdir(tmp_path)
    assert os.path.exists(os.path.join(tmp_path, run, "abort_diagnostics.json"))
    entries = load(os.path.join(tmp_path, run, "abort.ckpt"))
    assert "flow.values" in entries or any(k.startswith("flow") for k in entries)
