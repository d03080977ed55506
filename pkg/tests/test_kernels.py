import numpy as np
import pytest

from conftest import central_diff, rel_err
from imel import _kernels_py, kernels
from oracles import returns_brute

BACKENDS = [pytest.param(_kernels_py, id="python")]
if kernels.compiled_backend is not None:
    BACKENDS.append(pytest.param(kernels.compiled_backend, id="cython"))


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")
    assert kernels.mki_interp is (kernels.compiled_backend or _kernels_py).mki_interp


@pytest.mark.parametrize("impl", BACKENDS)
def test_discounted_cumsum(impl, rng):
    x = rng.normal(size=17)
    np.testing.assert_allclose(impl.discounted_cumsum(x, 0.8), returns_brute(x, 0.8), rtol=0, atol=1e-13)
    np.testing.assert_array_equal(impl.discounted_cumsum(np.array([2.0]), 0.5), [2.0])


def _instance(rng, n=6, m=9, dz=3, dy=2):
    return (rng.normal(size=(n, dz)), rng.normal(size=(m, dz)), 0.6 * rng.normal(size=(dz, dz)),
            rng.normal(size=(m, dy)), rng.normal(size=(n, dy)))


@pytest.mark.parametrize("impl", BACKENDS)
@pytest.mark.parametrize("normalize", [True, False])
def test_interp_matches_direct_formula(impl, normalize, rng):
    zt, zc, L, yc, _ = _instance(rng)
    pred, w = impl.mki_interp(zt, zc, L, yc, normalize)
    W = -L @ L.T
    k = np.array([[np.exp((a - b) @ W @ (a - b)) for b in zc] for a in zt])
    if normalize:
        k = k / k.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(w, k, rtol=1e-12)
    np.testing.assert_allclose(pred, k @ yc, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("impl", BACKENDS)
@pytest.mark.parametrize("normalize", [True, False])
def test_interp_gradients(impl, normalize, rng):
    zt, zc, L, yc, g = _instance(rng)
    pred, w = impl.mki_interp(zt, zc, L, yc, normalize)
    d_zt, d_zc, dL = impl.mki_interp_grad(zt, zc, L, yc, w, pred, g, normalize)

    def f(zt_, zc_, L_):
        return np.sum(g * impl.mki_interp(zt_, zc_, L_, yc, normalize)[0])

    assert rel_err(d_zt, central_diff(lambda v: f(v.reshape(zt.shape), zc, L), zt.ravel())) < 1e-7
    assert rel_err(d_zc, central_diff(lambda v: f(zt, v.reshape(zc.shape), L), zc.ravel())) < 1e-7
    assert rel_err(dL, central_diff(lambda v: f(zt, zc, v.reshape(L.shape)), L.ravel())) < 1e-7


@pytest.mark.skipif(kernels.compiled_backend is None, reason="compiled extension not built")
@pytest.mark.parametrize("normalize", [True, False])
def test_backends_agree(normalize, rng):
    c = kernels.compiled_backend
    for _ in range(20):
        zt, zc, L, yc, g = _instance(rng, *rng.integers(1, 12, size=2), *rng.integers(1, 5, size=2))
        p1, w1 = _kernels_py.mki_interp(zt, zc, L, yc, normalize)
        p2, w2 = c.mki_interp(zt, zc, L, yc, normalize)
        np.testing.assert_allclose(p2, p1, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(w2, w1, rtol=1e-12, atol=1e-300)
        for a, b in zip(_kernels_py.mki_interp_grad(zt, zc, L, yc, w1, p1, g, normalize),
                        c.mki_interp_grad(zt, zc, L, yc, w2, p2, g, normalize)):
            np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-13)


def test_pure_python_switch():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-c", "import imel.kernels as k; print(k.BACKEND)"],
                         env={"IMEL_PURE_PYTHON": "1", "PATH": ""}, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
