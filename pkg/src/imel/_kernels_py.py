"""Pure numpy implementations of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def discounted_cumsum(x, factor):
    """``y[t] = x[t] + factor * y[t + 1]`` with ``y[T] = 0``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    acc = 0.0
    for t in range(len(x) - 1, -1, -1):
        acc = x[t] + factor * acc
        out[t] = acc
    return out


def mki_interp(zt, zc, L, yc, normalize):
    """Kernel interpolation of ``yc`` at target features ``zt``.

    Log-weights are ``-|L^T (zt_i - zc_j)|^2``. Returns ``(pred, w)`` where
    ``w`` holds the normalized weights, or raw kernel values when
    ``normalize`` is false.
    """
    diff = zt[:, None, :] - zc[None, :, :]
    u = diff @ L
    s = -np.einsum("ijk,ijk->ij", u, u)
    if normalize:
        w = np.exp(s - s.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
    else:
        w = np.exp(s)
    return w @ yc, w


def mki_interp_grad(zt, zc, L, yc, w, pred, dpred, normalize):
    """Backward pass of :func:`mki_interp`: ``(d_zt, d_zc, d_L)``."""
    if normalize:
        ds = w * (dpred @ yc.T - np.sum(dpred * pred, axis=1, keepdims=True))
    else:
        ds = w * (dpred @ yc.T)
    diff = zt[:, None, :] - zc[None, :, :]
    u = diff @ L
    dL = -2.0 * np.einsum("ij,ija,ijk->ak", ds, diff, u)
    lu = u @ L.T
    d_zt = -2.0 * np.einsum("ij,ija->ia", ds, lu)
    d_zc = 2.0 * np.einsum("ij,ija->ja", ds, lu)
    return d_zt, d_zc, dL
