import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from lpn.icnn import IcnnArch, zero_params
from lpn.experiments import (ExperimentSpec, MetricReport, laplace_posterior_mean, laplacian_metrics, mixture_source,
                             prior_sweep, psnr, read_columns, run_experiment, smooth_signal_source, soft_threshold,
                             write_columns)


# ---------------------------------------------------------------- oracles

def test_soft_threshold_examples():
    assert soft_threshold(2.5) == 1.5
    assert soft_threshold(-0.5) == 0.0
    assert soft_threshold(-3.0, 0.5) == -2.5
    assert np.array_equal(soft_threshold(np.array([-2.0, 0.0, 2.0])), [-1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        soft_threshold(1.0, 0.0)


def _closed_form_posterior_mean(y, s):
    # Gaussian-times-exponential integrals on each half line, written with Phi and phi
    c = s * math.sqrt(2 * math.pi)
    mp, mm = y - s * s, y + s * s
    ap, am = math.exp(s * s / 2 - y) * c, math.exp(s * s / 2 + y) * c
    mass = ap * norm.cdf(mp / s) + am * norm.cdf(-mm / s)
    first = ap * (mp * norm.cdf(mp / s) + s * norm.pdf(mp / s)) + am * (mm * norm.cdf(-mm / s) - s * norm.pdf(mm / s))
    return first / mass


# frozen from the closed form above, cross-checked by composite Simpson on a 5e-4 grid
FROZEN_POSTERIOR_MEANS = [
    (2.0, 1.0, 1.1610889078431457),
    (0.5, 1.0, 0.2410185509650142),
    (-1.0, 0.5, -0.773432066755194),
    (3.0, 2.0, 0.8658518014561685),
]


@pytest.mark.parametrize("y,sigma,expected", FROZEN_POSTERIOR_MEANS)
def test_posterior_mean_frozen_values(y, sigma, expected):
    assert laplace_posterior_mean(y, sigma) == pytest.approx(expected, abs=1e-10)
    assert _closed_form_posterior_mean(y, sigma) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(y=st.floats(-6, 6), sigma=st.floats(0.2, 2.0))
def test_posterior_mean_shape(y, sigma):
    m = laplace_posterior_mean(y, sigma)
    assert laplace_posterior_mean(-y, sigma) == pytest.approx(-m, abs=1e-10)
    # shrinks toward 0 but keeps the sign of y
    assert abs(m) <= abs(y) + 1e-12
    assert m * y >= -1e-12
    assert m == pytest.approx(_closed_form_posterior_mean(y, sigma), abs=1e-8)


def test_posterior_mean_vectorized_and_errors():
    ys = np.array([[0.5, 2.0]])
    assert laplace_posterior_mean(ys).shape == (1, 2)
    with pytest.raises(ValueError):
        laplace_posterior_mean(1.0, 0.0)


def test_psnr():
    x = np.zeros(10)
    assert psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-12)
    assert psnr(x, x + 0.1, peak=10.0) == pytest.approx(40.0, abs=1e-12)
    assert psnr(x, x) == 300.0
    with pytest.raises(ValueError):
        psnr(x, np.zeros(3))
    rep = MetricReport.compare(x, x + np.array([0.2] + [0.0] * 9))
    assert rep.sup_error == pytest.approx(0.2) and rep.mse == pytest.approx(0.004)


# ---------------------------------------------------------------- specs and files

def test_spec_validation_and_roundtrip(tmp_path):
    spec = ExperimentSpec("deblur", out_dir=str(tmp_path), pnp={"max_iters": 5}, lambdas=(0.0, 0.5, 1.0))
    assert ExperimentSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
    assert spec.noise == 0.0
    assert ExperimentSpec("compressed_sensing").noise == 1e-3
    assert ExperimentSpec("compressed_sensing", measurement_noise=0.0).noise == 0.0
    with pytest.raises(ValueError):
        ExperimentSpec("mnist")
    with pytest.raises(ValueError):
        ExperimentSpec("deblur", solver="fista")
    with pytest.raises(FileNotFoundError):
        ExperimentSpec("deblur", checkpoint=str(tmp_path / "missing.ckpt"))


def test_columns_roundtrip(tmp_path):
    cols = {"x": np.array([0.1, 1 / 3]), "n": np.array([1, 2]), "tag": np.array(["a", "b"])}
    write_columns(tmp_path / "c.csv", cols)
    back = read_columns(tmp_path / "c.csv")
    assert np.array_equal(back["x"], cols["x"])
    assert list(back["tag"]) == ["a", "b"]
    with pytest.raises(ValueError):
        write_columns(tmp_path / "d.csv", {"a": [1, 2], "b": [1]})


def test_toy_sources():
    sig = smooth_signal_source(64)
    x = sig.sample(np.random.default_rng(0), 50)
    assert x.shape == (50, 64) and 0.1 < x.min() and x.max() < 0.9
    mix = mixture_source(8)
    assert np.linalg.norm(np.asarray(mix.means)[0] - np.asarray(mix.means)[1]) == pytest.approx(3.0)


# ---------------------------------------------------------------- analytic harness checks

def test_laplacian_metrics_on_half_shrinkage():
    # f(y) = y / 2 and R(x) = x^2 / 2: both sup errors are 0.5, attained at |y| = 1 and |y| = 3
    curves, metrics = laplacian_metrics({"half": zero_params(IcnnArch(1, (3,), alpha=0.5))})
    m = metrics["half"]
    assert m["sup_error_soft_threshold"] == pytest.approx(0.5, abs=1e-12)
    assert m["sup_error_prior_abs"] == pytest.approx(0.5, abs=1e-8)
    assert m["inversion_ok"]
    assert np.allclose(curves["f_half"], curves["x"] / 2)


def test_prior_sweep_on_quadratic_prior():
    # R(x) = ||x||^2 / 2 grows with noise and is lowest at the midpoint of two antipodal means
    params = zero_params(IcnnArch(8, (3,), alpha=0.5))
    out = prior_sweep(params, mixture_source(8), (0.0, 0.1, 0.2, 0.4), np.linspace(0, 1, 11), 50, seed=0)
    assert np.all(np.diff(out["noise_mean_R"]) > 0)
    assert np.argmin(out["mix_mean_R"]) == 5
    assert out["inversion_ok"]


# ---------------------------------------------------------------- short end-to-end runs

def test_run_prior_sweep_writes_outputs(tmp_path):
    summary = run_experiment(ExperimentSpec("prior_sweep", out_dir=str(tmp_path), iteration_scale=0.01,
                                            n_samples=20))
    for name in ("noise_sweep.csv", "mix_sweep.csv", "summary.json", "lpn_mixture.ckpt", "train.csv"):
        assert (tmp_path / name).is_file()
    assert set(read_columns(tmp_path / "mix_sweep.csv")) == {"lambda", "mean_R", "std_R"}
    assert json.loads((tmp_path / "summary.json").read_text())["experiment"] == "prior_sweep"
    assert isinstance(summary["interior_maximum"], bool)


@pytest.mark.parametrize("name,solver", [("deblur", "admm"), ("compressed_sensing", "pgd")])
def test_run_inverse_problem_writes_outputs(tmp_path, name, solver):
    summary = run_experiment(ExperimentSpec(name, out_dir=str(tmp_path), solver=solver, iteration_scale=0.01,
                                            pnp={"max_iters": 50}))
    assert (tmp_path / "history.csv").is_file() and (tmp_path / "signals.csv").is_file()
    assert len(read_columns(tmp_path / "history.csv")["iteration"]) == summary["solver_meta"]["iterations"]
    assert ("kkt" in summary["metrics"]) == (solver == "admm")
    # the saved model reproduces the run when passed back in as a checkpoint
    again = run_experiment(ExperimentSpec(name, out_dir=str(tmp_path / "again"), solver=solver,
                                          checkpoint=str(tmp_path / "lpn_signal.ckpt"), pnp={"max_iters": 50}))
    assert again["metrics"]["reconstruction"] == summary["metrics"]["reconstruction"]


def test_run_laplacian_writes_outputs(tmp_path):
    summary = run_experiment(ExperimentSpec("laplacian", out_dir=str(tmp_path), iteration_scale=0.005,
                                            train={"batch_size": 64}, grid=(-3.0, 3.0, 13)))
    cols = read_columns(tmp_path / "curves.csv")
    assert len(cols["x"]) == 13
    assert {"f_l2", "f_l1", "f_pm", "R_pm", "psi_l2", "posterior_mean"} <= set(cols)
    assert set(summary["metrics"]) == {"l2", "l1", "pm"}
    for loss in ("l2", "l1", "pm"):
        assert (tmp_path / f"lpn_{loss}.ckpt").is_file() and (tmp_path / f"train_{loss}.csv").is_file()
