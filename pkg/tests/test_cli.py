import json
import subprocess
import sys

import numpy as np
import pytest

from lpn.checkpoint import load_checkpoint, save_checkpoint
from lpn.cli import main
from lpn.experiments import read_columns
from lpn.icnn import IcnnArch, zero_params


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_train_then_eval_prior(tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    code = main(["train", "--hidden", "6,6", "--alpha", "0.1", "--batch-size", "32", "--pretrain", "20:1e-2",
                 "--schedule", "10:0.5:1e-3;10:0.3:1e-3", "--out", str(ckpt), "--log", str(tmp_path / "log.csv")])
    assert code == 0
    summary = _json_out(capsys)
    assert summary["iterations"] == 40 and summary["ok"]
    params, header = load_checkpoint(ckpt)
    assert params.arch.hidden_widths == (6, 6) and header["meta"]["source"] == "laplacian"
    assert len(read_columns(tmp_path / "log.csv")["iteration"]) == 40

    code = main(["eval-prior", "--checkpoint", str(ckpt), "--grid", "-2", "2", "9", "--out", str(tmp_path / "R.csv")])
    assert code == 0
    cols = read_columns(tmp_path / "R.csv")
    assert len(cols["x"]) == 9 and cols["R_normalized"].min() == 0.0


def test_eval_prior_points_file(tmp_path, capsys):
    ckpt = tmp_path / "z.ckpt"
    save_checkpoint(zero_params(IcnnArch(2, (3,), alpha=0.5)), ckpt)
    pts = np.array([[1.0, 0.0], [1.0, 2.0]])
    np.save(tmp_path / "p.npy", pts)
    assert main(["eval-prior", "--checkpoint", str(ckpt), "--points", str(tmp_path / "p.npy"),
                 "--out", str(tmp_path / "R.csv")]) == 0
    cols = read_columns(tmp_path / "R.csv")
    assert np.allclose(cols["R"], [0.5, 2.5], atol=1e-8)
    assert _json_out(capsys)["failed_inversions"] == 0


def test_eval_prior_flags_failed_inversion(tmp_path, capsys):
    ckpt = tmp_path / "z.ckpt"
    save_checkpoint(zero_params(IcnnArch(1, (3,), alpha=0.5)), ckpt)
    code = main(["eval-prior", "--checkpoint", str(ckpt), "--max-iters", "0", "--out", str(tmp_path / "R.csv")])
    assert code == 1
    assert _json_out(capsys)["ok"] is False


def test_solve_and_sweeps(tmp_path, capsys):
    assert main(["solve", "--problem", "deblur", "--scale", "0.01", "--max-iters", "300",
                 "--out", str(tmp_path / "d")]) in (0, 1)
    summary = _json_out(capsys)
    assert summary["solver_meta"]["rho_bound_ok"]
    assert (tmp_path / "d" / "history.csv").is_file()

    # a step size beyond the bound is flagged through the exit code
    with pytest.warns(UserWarning):
        code = main(["solve", "--solver", "pgd", "--eta", "5", "--max-iters", "3", "--checkpoint",
                     str(tmp_path / "d" / "lpn_signal.ckpt"), "--out", str(tmp_path / "e")])
    assert code == 1
    capsys.readouterr()

    code = main(["prior-sweep", "--scale", "0.01", "--samples", "10", "--lambdas", "0,0.5,1",
                 "--out", str(tmp_path / "s")])
    assert code in (0, 1)
    assert len(read_columns(tmp_path / "s" / "mix_sweep.csv")["lambda"]) == 3
    capsys.readouterr()

    code = main(["demo-laplacian", "--scale", "0.002", "--batch-size", "32", "--out", str(tmp_path / "l")])
    assert code in (0, 1)
    assert set(_json_out(capsys)["metrics"]) == {"l2", "l1", "pm"}


def test_usage_errors(tmp_path, capsys):
    assert main(["train", "--alpha", "1.5", "--out", str(tmp_path / "x.ckpt")]) == 2
    assert main(["eval-prior", "--checkpoint", str(tmp_path / "nope.ckpt"), "--out", str(tmp_path / "R.csv")]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["solve", "--solver", "fista", "--out", str(tmp_path)])


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "lpn.cli", "--help"], capture_output=True, text=True, check=True)
    for cmd in ("train", "eval-prior", "solve", "demo-laplacian", "prior-sweep"):
        assert cmd in out.stdout
