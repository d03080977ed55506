"""Mean Kernel Interpolation.

A feature net projects states to ``z``; context targets are averaged with
weights ``exp(dz^T W dz)``, ``W = -L L^T``, so weights lie in (0, 1] and decay
with feature distance. Normalized mode divides by the weight sum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels, nn
from .errors import ShapeError

log = logging.getLogger(__name__)

UNDERFLOW = 1e-300


def default_feature_dim(x_dim: int) -> int:
    return x_dim if x_dim <= 2 else min(x_dim - 1, 8)


@dataclass(frozen=True)
class MkiModel:
    features: nn.NetParams
    kernel_factor: np.ndarray
    normalize: bool = True

    def __post_init__(self):
        L = np.array(self.kernel_factor, dtype=np.float64)
        dz = self.features.out_dim
        if L.shape != (dz, dz):
            raise ShapeError(f"kernel factor must be {dz}x{dz}")
        object.__setattr__(self, "kernel_factor", L)

    @classmethod
    def create(cls, x_dim, z_dim=None, hidden=(64, 64), seed=0, normalize=True) -> "MkiModel":
        z_dim = default_feature_dim(x_dim) if not z_dim else z_dim
        if x_dim > 2 and z_dim >= x_dim:
            raise ShapeError("feature dimension must be below the input dimension")
        return cls(nn.mlp([x_dim, *hidden, z_dim], seed), np.eye(z_dim), normalize)

    @property
    def z_dim(self) -> int:
        return self.features.out_dim

    @property
    def kernel_matrix(self) -> np.ndarray:
        return -self.kernel_factor @ self.kernel_factor.T

    def flat(self) -> np.ndarray:
        return np.concatenate([self.features.values, self.kernel_factor.ravel()])

    def with_flat(self, values) -> "MkiModel":
        n = self.features.size
        return MkiModel(self.features.replace(values[:n]),
                        np.reshape(values[n:], self.kernel_factor.shape), self.normalize)

    def networks(self) -> dict:
        return {"features": self.features}

    def loss_and_grad(self, context, targets, rng=None):
        return mki_loss(self, context.states, context.targets, targets.states, targets.targets)

    def predictor(self, context, rng=None):
        """Frozen policy-mean function; context features are computed once."""
        zc = features(self, context.states)
        yc = np.asarray(context.targets, dtype=np.float64)

        def predict(x):
            x = np.asarray(x, dtype=np.float64)
            zt = np.atleast_2d(features(self, x))
            pred, w = kernels.mki_interp(zt, zc, self.kernel_factor, yc, self.normalize)
            _check_underflow(self, zt, zc, w)
            return (pred[0] if x.ndim == 1 else pred), None
        return predict


def features(model: MkiModel, x) -> np.ndarray:
    return nn.forward(model.features, x)


def kernel_weight(model: MkiModel, z_n, z_i) -> float:
    u = (np.asarray(z_n, dtype=np.float64) - np.asarray(z_i, dtype=np.float64)) @ model.kernel_factor
    return float(np.exp(-u @ u))


def _check_underflow(model, zt, zc, w):
    # Normalized weights are computed in the log domain, which already tends
    # to the nearest context point's value when every raw weight underflows.
    if model.normalize and len(zc) and log.isEnabledFor(logging.DEBUG):
        u = (zt[:, None, :] - zc[None, :, :]) @ model.kernel_factor
        if np.any(np.exp(-np.einsum("ijk,ijk->ij", u, u)).sum(axis=1) < UNDERFLOW):
            log.debug("kernel weights underflowed; prediction follows the nearest context point")


def mki_predict(model: MkiModel, x_n, context_x, context_y) -> np.ndarray:
    x_n = np.asarray(x_n, dtype=np.float64)
    cy = np.asarray(context_y, dtype=np.float64)
    if len(cy) == 0:
        raise ValueError("context must be nonempty")
    cy = cy.reshape(len(cy), -1)
    zc = features(model, context_x)
    zt = np.atleast_2d(features(model, x_n))
    pred, w = kernels.mki_interp(zt, np.atleast_2d(zc), model.kernel_factor, cy, model.normalize)
    _check_underflow(model, zt, np.atleast_2d(zc), w)
    return pred[0] if x_n.ndim == 1 else pred


def mki_loss(model: MkiModel, cx, cy, tx, ty):
    """Mean squared error of interpolated targets and its gradient.

    The gradient is w.r.t. ``model.flat()`` (feature net, then ``L``
    row-major). Returns ``(loss, grad)``.
    """
    cx, tx = np.atleast_2d(cx), np.atleast_2d(tx)
    nc, nt = len(cx), len(tx)
    if nc == 0 or nt == 0:
        raise ValueError("context and targets must be nonempty")
    cy = np.asarray(cy, dtype=np.float64).reshape(nc, -1)
    ty = np.asarray(ty, dtype=np.float64).reshape(nt, -1)
    x_all = np.concatenate([cx, tx])
    z_all, cache = nn.forward_with_cache(model.features, x_all)
    zc, zt = z_all[:nc], z_all[nc:]
    L = model.kernel_factor
    pred, w = kernels.mki_interp(zt, zc, L, cy, model.normalize)
    resid = pred - ty
    loss = float(np.mean(resid ** 2))
    dpred = 2.0 * resid / resid.size
    d_zt, d_zc, dL = kernels.mki_interp_grad(zt, zc, L, cy, w, pred, dpred, model.normalize)
    g_feat, _ = nn.backward(model.features, x_all, np.concatenate([d_zc, d_zt]), cache)
    return loss, np.concatenate([g_feat, dL.ravel()])
