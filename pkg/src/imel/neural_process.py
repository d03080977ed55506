"""Neural Process interpolator over (state, improved mean) pairs.

An encoder maps each pair to a representation, the representations are
averaged, and a latent head turns the average into a diagonal Gaussian over
a global latent ``z``. A decoder maps ``(z, x)`` to a predictive Gaussian
over ``y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .policy import LOG_SQRT_2PI, GaussianStats, gaussian_kl

LATENT_MIN_STD = 1e-3
OUTPUT_MIN_STD = 1e-2


@dataclass(frozen=True)
class LatentPosterior:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class NpModel:
    encoder: nn.NetParams
    latent: nn.NetParams
    decoder: nn.NetParams
    x_dim: int
    y_dim: int
    z_dim: int

    NETS = ("encoder", "latent", "decoder")

    @classmethod
    def create(cls, x_dim, y_dim, r_dim=32, z_dim=32, hidden=(64, 64), seed=0, output_scale=0.01) -> "NpModel":
        """Fresh model; the decoder's output weights are scaled by ``output_scale``.

        A small output layer makes the untrained model predict a mean near
        zero everywhere instead of an arbitrary offset.
        """
        rng = np.random.default_rng(seed)
        decoder = nn.mlp([z_dim + x_dim, *hidden, 2 * y_dim], rng)
        values = decoder.values.copy()
        values[-(2 * y_dim * hidden[-1] + 2 * y_dim):] *= output_scale
        return cls(
            encoder=nn.mlp([x_dim + y_dim, *hidden, r_dim], rng),
            latent=nn.mlp([r_dim, hidden[-1], 2 * z_dim], rng),
            decoder=decoder.replace(values),
            x_dim=x_dim, y_dim=y_dim, z_dim=z_dim,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.encoder.values, self.latent.values, self.decoder.values])

    def with_flat(self, values) -> "NpModel":
        a = self.encoder.size
        b = a + self.latent.size
        return NpModel(self.encoder.replace(values[:a]), self.latent.replace(values[a:b]),
                       self.decoder.replace(values[b:]), self.x_dim, self.y_dim, self.z_dim)

    def networks(self) -> dict:
        return {name: getattr(self, name) for name in self.NETS}

    def loss_and_grad(self, context, targets, rng):
        xi = rng.standard_normal(self.z_dim)
        loss, grad, _ = elbo_loss(self, context.states, context.targets, targets.states, targets.targets, xi)
        return loss, grad

    def predictor(self, context, rng=None, z_mode="mean"):
        """Frozen policy-mean function over a fixed context."""
        post = encode(self, context.states, context.targets)
        z = _pick_z(post, z_mode, rng)

        def predict(x):
            stats = decode(self, z, x)
            return stats.mean, stats.std
        return predict


def _column_mean(r):
    # exactly rounded per-column sums keep the mean invariant to ordering
    # and duplication of the rows, bit for bit
    n = r.shape[0]
    return np.array([math.fsum(col) for col in r.T.tolist()]) / n


def _positive(raw, floor):
    return floor + nn.softplus(raw)


def _split_gaussian(out, dim, floor):
    return out[..., :dim], _positive(out[..., dim:], floor)


def _pick_z(post: LatentPosterior, z_mode, rng):
    if z_mode == "mean":
        return post.mean
    if z_mode == "sample":
        if rng is None:
            raise ValueError("z_mode='sample' needs a random stream")
        return post.mean + post.std * rng.standard_normal(post.mean.shape)
    raise ValueError(f"unknown z_mode {z_mode!r}")


def _pairs(x, y):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    y = y.reshape(len(x), -1)
    return np.concatenate([x, y], axis=1)


def encode(model: NpModel, cx, cy) -> LatentPosterior:
    if len(cx) == 0:
        raise ValueError("cannot encode an empty context")
    # BLAS rounding can depend on a row's position in the batch, so encode
    # each distinct pair once in sorted order and weight by multiplicity
    pairs, counts = np.unique(_pairs(cx, cy), axis=0, return_counts=True)
    r = np.repeat(nn.forward(model.encoder, pairs), counts, axis=0)
    out = nn.forward(model.latent, _column_mean(r))
    mean, std = _split_gaussian(out, model.z_dim, LATENT_MIN_STD)
    return LatentPosterior(mean, std)


def decode(model: NpModel, z, x) -> GaussianStats:
    """Predictive Gaussian over y at state(s) ``x`` for latent ``z``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    inp = np.concatenate([np.broadcast_to(z, (len(x2), model.z_dim)), x2], axis=1)
    mean, std = _split_gaussian(nn.forward(model.decoder, inp), model.y_dim, OUTPUT_MIN_STD)
    if single:
        mean, std = mean[0], std[0]
    return GaussianStats(mean, std)


def gaussian_nll(y, mean, std) -> float:
    z = (y - mean) / std
    return float(np.sum(0.5 * z * z + np.log(std) + LOG_SQRT_2PI))


def elbo_loss(model: NpModel, cx, cy, tx, ty, xi):
    """One-sample ELBO loss and its gradient w.r.t. ``model.flat()``.

    The latent is drawn from the posterior over context plus targets via
    ``z = mu + std * xi``; the loss is the target negative log-likelihood
    plus KL(full posterior || context posterior). Returns
    ``(loss, grad, (nll, kl))``.
    """
    cx = np.atleast_2d(cx)
    tx = np.atleast_2d(tx)
    nc, nt = len(cx), len(tx)
    if nc < 1 or nt < 1:
        raise ValueError("need at least one context and one target point")
    ty = np.asarray(ty, dtype=np.float64).reshape(nt, model.y_dim)
    pairs = np.concatenate([_pairs(cx, cy), _pairs(tx, ty)])
    r, enc_cache = nn.forward_with_cache(model.encoder, pairs)
    agg = np.stack([_column_mean(r), _column_mean(r[:nc])])
    head, head_cache = nn.forward_with_cache(model.latent, agg)
    zd = model.z_dim
    mu, raw_sd = head[:, :zd], head[:, zd:]
    sd = _positive(raw_sd, LATENT_MIN_STD)
    mu_f, sd_f, mu_c, sd_c = mu[0], sd[0], mu[1], sd[1]

    z = mu_f + sd_f * xi
    dec_in = np.concatenate([np.broadcast_to(z, (nt, zd)), tx], axis=1)
    out, dec_cache = nn.forward_with_cache(model.decoder, dec_in)
    yd = model.y_dim
    y_mu, raw_ysd = out[:, :yd], out[:, yd:]
    y_sd = _positive(raw_ysd, OUTPUT_MIN_STD)
    nll = gaussian_nll(ty, y_mu, y_sd)
    kl = float(gaussian_kl(mu_f, sd_f, mu_c, sd_c))

    resid = y_mu - ty
    d_ymu = resid / y_sd ** 2
    d_ysd = 1.0 / y_sd - resid ** 2 / y_sd ** 3
    d_out = np.concatenate([d_ymu, d_ysd * nn.sigmoid(raw_ysd)], axis=1)
    g_dec, d_dec_in = nn.backward(model.decoder, dec_in, d_out, dec_cache)
    dz = d_dec_in[:, :zd].sum(axis=0)

    diff = mu_f - mu_c
    d_mu_f = diff / sd_c ** 2 + dz
    d_sd_f = -1.0 / sd_f + sd_f / sd_c ** 2 + dz * xi
    d_mu_c = -diff / sd_c ** 2
    d_sd_c = 1.0 / sd_c - (sd_f ** 2 + diff ** 2) / sd_c ** 3
    d_head = np.stack([
        np.concatenate([d_mu_f, d_sd_f * nn.sigmoid(raw_sd[0])]),
        np.concatenate([d_mu_c, d_sd_c * nn.sigmoid(raw_sd[1])]),
    ])
    g_lat, d_agg = nn.backward(model.latent, agg, d_head, head_cache)

    d_r = np.broadcast_to(d_agg[0] / len(r), r.shape).copy()
    d_r[:nc] += d_agg[1] / nc
    g_enc, _ = nn.backward(model.encoder, pairs, d_r, enc_cache)
    return nll + kl, np.concatenate([g_enc, g_lat, g_dec]), (nll, kl)


def np_predict(model: NpModel, state, context_x, context_y, z_mode="mean", rng=None) -> GaussianStats:
    post = encode(model, context_x, context_y)
    return decode(model, _pick_z(post, z_mode, rng), state)
