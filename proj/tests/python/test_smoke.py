import math

import numpy as np
import pytest

import saii


def test_reflectivity_and_ricker():
    r = saii.reflectivity(np.array([2000.0, 3000.0]))
    assert r[0] == 0.2 and r[1] == 0.0
    w = saii.ricker(30.0)
    h = len(w) // 2
    assert w[h] == pytest.approx(1.0)
    np.testing.assert_array_equal(w, w[::-1])


def test_forward_model_and_gradient():
    z = saii.random_layered_model(32, 8, seed=3)
    d = saii.synthesize(z)
    assert d.shape == z.shape
    value, grad = saii.misfit(z, d)
    assert value == 0.0
    assert not grad.any()
    noisy = saii.add_noise(d, 15.0, seed=1)
    snr = 10 * math.log10((d**2).sum() / ((noisy - d) ** 2).sum())
    assert snr == pytest.approx(15.0, abs=1e-9)


def test_haar_energy():
    x = np.random.default_rng(0).normal(size=(16, 12))
    bands = saii.haar(x)
    assert sum((b**2).sum() for b in bands) == pytest.approx((x**2).sum(), rel=1e-12)


def test_metrics_identity_and_errors():
    z = saii.random_layered_model(40, 30, seed=2)
    report = saii.evaluate(z, z)
    assert (report["psnr_db"], report["ssim"], report["pcc"], report["rre"]) == (200.0, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        saii.psnr(z, z[:, :5])


def test_schedule_helpers():
    ab = saii.alpha_bar(1000)
    assert len(ab) == 1000 and ab[-1] < 1e-4
    w0, wt, var = saii.resample_moments(400, 1e12)
    assert w0 == pytest.approx(math.sqrt(ab[399]), abs=1e-6)
    assert saii.ddim_timesteps(30)[0] == 1000


def test_tv_invert_improves_on_prior():
    z = saii.random_layered_model(64, 16, seed=5)
    d = saii.synthesize(z)
    low = saii.lowpass(z, 6.0)
    est, log = saii.tv_invert(d, low, config={"mu1": 0.001, "mu2": 0.01})
    assert est.shape == z.shape
    assert saii.rre(est, z) < saii.rre(low, z)
    assert log[-1]["gap"] < log[0]["gap"]


def test_config_resolution():
    cfg = saii.resolve_config({"sampler.num_steps": 12})
    assert cfg["sampler"]["num_steps"] == 12
    assert cfg == saii.resolve_config({"sampler.num_steps": 12})
    with pytest.raises(ValueError):
        saii.resolve_config({"sampler.bogus": 1})
    assert "lowfreq-sweep" in saii.experiment_names()
