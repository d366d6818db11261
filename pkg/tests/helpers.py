"""Shared builders for random mixtures and ensembles used across test modules."""

import numpy as np

from ensdens.mixture import EnsembleDensity, GaussianComponent, GaussianMixture

M1_COV = np.array([[1.25, 0.75], [0.75, 1.25]])
M2_MEANS = (np.array([-0.53, -0.53]), np.array([0.53, 0.53]))
M2_COV = np.array([[0.68, -0.41], [-0.41, 0.68]])


def random_spd(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T + d * np.eye(d))


def random_mixture(rng, d=2, k=None, mean_spread=3.0):
    if k is None:
        k = int(rng.integers(1, 4))
    comps = tuple(
        GaussianComponent(rng.normal(scale=mean_spread, size=d), random_spd(rng, d))
        for _ in range(k)
    )
    w = rng.dirichlet(np.ones(k))
    w = np.clip(w, 1e-6, None)
    return GaussianMixture(components=comps, weights=w / w.sum())


def random_ensemble(rng, d=2, n_models=None):
    if n_models is None:
        n_models = int(rng.integers(1, 5))
    models = tuple(random_mixture(rng, d=d) for _ in range(n_models))
    a = rng.dirichlet(np.ones(n_models))
    a = np.clip(a, 1e-6, None)
    return EnsembleDensity(models=models, alpha=a / a.sum())


def m2_mixture():
    comps = tuple(GaussianComponent(m, M2_COV) for m in M2_MEANS)
    return GaussianMixture(components=comps, weights=np.array([0.5, 0.5]))
