"""Quick property checks runnable from an installed package, without pytest."""

from __future__ import annotations

import numpy as np

from . import improve, nn
from .kernels import BACKEND, discounted_cumsum
from .memory import Episode
from .mki import MkiModel, mki_loss, mki_predict
from .neural_process import NpModel, encode


def _central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def check_kl_budget(rng, n=100):
    worst = 0.0
    for _ in range(n):
        T, d = int(rng.integers(1, 65)), int(rng.integers(1, 7))
        means = rng.normal(size=(T, d))
        stds = rng.uniform(0.1, 2.0, size=(T, d))
        ep = Episode(rng.normal(size=(T, 2)), means + stds * rng.normal(size=(T, d)), means, stds,
                     rng.normal(size=T))
        ep, _ = improve.annotate_episode(ep, None, improve.ImproveConfig(epsilon=0.05))
        kl = np.mean(np.sum((ep.improved_means - means) ** 2 / (2 * stds ** 2), axis=1))
        worst = max(worst, abs(kl - 0.05) / 0.05)
    return worst < 1e-9, f"max relative KL error {worst:.2e}"


def check_returns(rng, n=100):
    worst = 0.0
    for _ in range(n):
        r = rng.normal(size=int(rng.integers(1, 7)))
        brute = np.array([sum(0.9 ** (j - t) * r[j] for j in range(t, len(r))) for t in range(len(r))])
        worst = max(worst, float(np.max(np.abs(discounted_cumsum(r, 0.9) - brute))))
    return worst < 1e-12, f"max abs error {worst:.2e}"


def check_mki(rng, n=200):
    ok = True
    for _ in range(n):
        m = MkiModel(nn.mlp([2, 5, 2], rng), 5 * rng.normal(size=(2, 2)))
        cx, cy = rng.normal(size=(8, 2)), rng.normal(size=(8, 1))
        pred = mki_predict(m, rng.normal(size=(3, 2)), cx, cy)
        ok &= bool(np.all(pred >= cy.min() - 1e-12) and np.all(pred <= cy.max() + 1e-12))
    m = MkiModel(nn.mlp([2, 4, 2], rng), rng.normal(size=(2, 2)))
    cx, cy, tx, ty = rng.normal(size=(5, 2)), rng.normal(size=(5, 1)), rng.normal(size=(3, 2)), rng.normal(size=(3, 1))
    _, grad = mki_loss(m, cx, cy, tx, ty)
    err = _rel(grad, _central_diff(lambda v: mki_loss(m.with_flat(v), cx, cy, tx, ty)[0], m.flat()))
    return ok and err < 1e-4, f"convex bounds {'hold' if ok else 'violated'}, gradient error {err:.1e}"


def check_np_invariance(rng, n=50):
    model = NpModel.create(2, 1, r_dim=8, z_dim=4, hidden=(16,), seed=rng)
    ok = True
    for _ in range(n):
        cx, cy = rng.normal(size=(10, 2)), rng.normal(size=(10, 1))
        a = encode(model, cx, cy)
        p = rng.permutation(10)
        b = encode(model, cx[p], cy[p])
        ok &= bool(np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std))
    return ok, "bitwise permutation invariance " + ("holds" if ok else "violated")


CHECKS = {
    "kl-budget": check_kl_budget,
    "discounted-returns": check_returns,
    "mki-interpolation": check_mki,
    "np-encoder": check_np_invariance,
}


def run(seed=0, out=print) -> bool:
    out(f"kernel backend: {BACKEND}")
    all_ok = True
    for name, check in CHECKS.items():
        ok, detail = check(np.random.default_rng([seed, len(name)]))
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        all_ok &= ok
    return all_ok

