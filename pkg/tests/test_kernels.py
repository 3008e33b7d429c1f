"""Backend parity and selection tests for the hot kernels."""

import os
import subprocess
import sys

import numpy as np
import pytest

from rcmcalib import kernels

BACKENDS = kernels.available_backends()
MODEL_PTS = np.array(
    [[-20, 0, 0], [0, 0, 0], [0, 0, 0], [9.6, 0, 0], [9.6, 0, 0]], dtype=float
)
CODES = np.array([0, 0, 1, 2, 3], dtype=np.int32)


def random_args(rng, labeled=False, with_rcm=True):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    t = rng.normal(scale=40, size=3) + [0, 0, 130]
    det = rng.uniform(0, 640, size=(rng.integers(4, 8), 2))
    match = None
    if labeled:
        det = det[:5]
        match = rng.permutation(5).astype(np.int32)[: det.shape[0]]
    p_rcm = rng.normal(scale=30, size=3) + [0, 0, 180] if with_rcm else None
    return (
        q, t, rng.uniform(-1, 1), rng.uniform(0, 1), rng.uniform(-1, 0),
        CODES, MODEL_PTS, 9.1,
        800.0, 805.0, 320.0, 256.0,
        det, match, p_rcm, 1.0, 10.0,
    )


def test_python_backend_always_available():
    assert "python" in BACKENDS


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernel not built")
def test_backends_agree_on_random_inputs():
    rng = np.random.default_rng(60)
    for trial in range(300):
        args = random_args(rng, labeled=bool(trial % 3 == 2), with_rcm=bool(trial % 2))
        r_py, j_py, d_py = BACKENDS["python"].frame_residuals(*args, True)
        r_cy, j_cy, d_cy = BACKENDS["cython"].frame_residuals(*args, True)
        scale = max(1.0, float(np.abs(r_py).max(initial=0.0)))
        assert r_py.shape == r_cy.shape
        assert np.allclose(r_py, r_cy, rtol=1e-12, atol=1e-12 * scale)
        jscale = max(1.0, float(np.abs(j_py).max(initial=0.0)))
        assert np.allclose(j_py, j_cy, rtol=1e-12, atol=1e-12 * jscale)
        assert abs(d_py - d_cy) < 1e-12


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernel not built")
def test_backends_agree_without_jacobian():
    rng = np.random.default_rng(61)
    for _ in range(50):
        args = random_args(rng)
        r_py, j_py, _ = BACKENDS["python"].frame_residuals(*args, False)
        r_cy, j_cy, _ = BACKENDS["cython"].frame_residuals(*args, False)
        assert j_py is None and j_cy is None
        assert np.allclose(r_py, r_cy, rtol=1e-12, atol=1e-10)


def test_residuals_define_reported_loss():
    rng = np.random.default_rng(62)
    args = random_args(rng)
    loss, grad, _ = kernels.loss_and_grad(*args)
    resid, jac, _ = kernels.frame_residuals(*args, True)
    assert loss == pytest.approx(float(resid @ resid))
    assert np.allclose(grad, 2.0 * jac.T @ resid)


def test_empty_detections_rejected_when_keypoint_term_active():
    rng = np.random.default_rng(63)
    args = list(random_args(rng))
    args[12] = np.empty((0, 2))
    for backend in BACKENDS.values():
        with pytest.raises(ValueError):
            backend.frame_residuals(*args, False)


def test_env_var_forces_pure_python():
    code = (
        "import rcmcalib.kernels as k; print(k.active_backend())"
    )
    env = dict(os.environ, RCMCALIB_PURE_PY="1")
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, env=env
    )
    assert out.stdout.strip() == "python"


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernel not built")
def test_default_selection_prefers_compiled():
    env = dict(os.environ)
    env.pop("RCMCALIB_PURE_PY", None)
    out = subprocess.run(
        [sys.executable, "-c", "import rcmcalib.kernels as k; print(k.active_backend())"],
        capture_output=True, text=True, env=env,
    )
    assert out.stdout.strip() == "cython"
