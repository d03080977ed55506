"""Builders shared by several test modules."""

import numpy as np

from imel.memory import Episode


def random_episode(rng, T=5, ds=2, da=1, iteration=1, annotate=True, sigma=None):
    states = rng.normal(size=(T, ds))
    means = rng.normal(size=(T, da))
    stds = np.full((T, da), 0.3) if sigma is None else np.broadcast_to(sigma, (T, da))
    actions = means + stds * rng.standard_normal((T, da))
    ep = Episode(states, actions, means, stds, rng.normal(size=T), iteration=iteration)
    if annotate:
        ep.annotate(np.zeros(T), np.zeros(T), means + 0.1)
    return ep
