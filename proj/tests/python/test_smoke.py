import json
import math
from pathlib import Path

import numpy as np
import pytest

import tfm

ROOT = Path(__file__).resolve().parents[2]


def test_metrics_identities():
    rng = np.random.default_rng(0)
    a = rng.random((2, 16, 16), dtype=np.float32)
    b = rng.random((2, 16, 16), dtype=np.float32)
    assert tfm.ssim(a, a) == 1.0
    assert math.isinf(tfm.psnr(a, a))
    assert tfm.mse(a, b) == tfm.mse(b, a)
    assert tfm.nrmse(4 * a, 4 * b) == tfm.nrmse(a, b)
    assert tfm.mse(a, b) == pytest.approx(float(np.mean((a.astype(np.float64) - b) ** 2)), rel=1e-9)


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        tfm.mse(np.zeros(4, np.float32), np.zeros(5, np.float32))


def test_sparsity_fill_copies_nearest_earlier_frame():
    frames = np.arange(4, dtype=np.float32).reshape(4, 1, 1, 1) + 1
    filled, source = tfm.sparsity_fill(frames, [False, True, False, True])
    assert source == [1, 1, 1, 3]
    assert filled.ravel().tolist() == [2, 2, 2, 4]


def test_flow_path_endpoints():
    x0 = np.zeros((3, 2, 2), np.float32)
    x1 = np.ones((3, 2, 2), np.float32)
    assert np.array_equal(tfm.interpolate(x0, x1, 0.0), x0)
    assert np.array_equal(tfm.interpolate(x0, x1, 1.0), x1)
    assert np.array_equal(tfm.true_velocity(x0, x1), x1 - x0)


def test_integrate_python_field():
    x0 = np.zeros(3)
    x1 = np.array([1.0, -2.0, 0.5])
    out = tfm.integrate(lambda x, tau: x1 - x0, x0, "rk4", 4)
    assert np.allclose(out, x1, rtol=0, atol=1e-12)
    half = tfm.integrate(lambda x, tau: np.full_like(x, tau), np.zeros(1), "euler", 10)
    assert half[0] == pytest.approx(0.45)


def test_cohort_is_deterministic():
    spec = tfm.default_dynamics_spec()
    spec["shape"] = [3, 4, 16, 16]
    spec.update(radius=2.0, growth_rate=0.5, center_jitter=0.5)
    a = tfm.generate_cohort(spec, 2)
    b = tfm.generate_cohort(spec, 2)
    assert len(a) == 2
    assert a[0]["frames"].shape == (3, 4, 16, 16)
    assert np.array_equal(a[1]["target"], b[1]["target"])
    with pytest.raises(ValueError):
        tfm.generate_cohort({**spec, "radious": 1}, 1)


def test_paradox_table():
    t = tfm.paradox_table()
    assert t == {"full_image_mse": "12/64", "lci_mse": "4/64", "difference_mse": "0/64"}
    ok, text = tfm.paradox_report()
    assert ok and "#" in text


def test_pipeline_roundtrip(tmp_path):
    cfg = json.loads((ROOT / "configs" / "smoke.json").read_text())
    cfg["train"]["epochs"] = 1
    tfm.generate(cfg, str(tmp_path))
    tfm.train(cfg, str(tmp_path))
    tfm.evaluate(cfg, str(tmp_path))
    first = (tmp_path / "metrics.csv").read_text()
    tfm.evaluate(cfg, str(tmp_path))
    assert (tmp_path / "metrics.csv").read_text() == first
    assert first.startswith("# config_hash=" + tfm.config_hash(cfg))
