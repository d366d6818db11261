"""Densities 101: components, mixtures, and convex ensembles of mixtures.

Shows that an ensemble of mixtures is itself one big mixture: evaluating
the convex combination directly and evaluating the flattened model give
the same density everywhere.
"""

import numpy as np

from ensdens import (
    EnsembleDensity,
    GaussianComponent,
    GaussianMixture,
    flatten_ensemble,
)

rng = np.random.default_rng(0)

# two hand-built bivariate mixtures
tight = GaussianMixture(
    components=(
        GaussianComponent([-1.0, 0.0], [[0.5, 0.1], [0.1, 0.4]]),
        GaussianComponent([1.2, 0.3], [[0.6, -0.2], [-0.2, 0.5]]),
    ),
    weights=[0.45, 0.55],
)
broad = GaussianMixture(
    components=(GaussianComponent([0.0, 0.0], [[2.5, 0.0], [0.0, 2.5]]),),
    weights=[1.0],
)

ens = EnsembleDensity(models=(tight, broad), alpha=[0.7, 0.3])
flat = flatten_ensemble(ens)
print(f"ensemble of {ens.n_models} models flattens to {flat.n_components} components")

pts = rng.normal(scale=2, size=(5, 2))
for p in pts:
    direct = ens.log_density(p)
    via_flat = flat.log_density(p)
    print(f"  x={np.round(p, 2)}  log f = {direct:+.6f}  (flattened: {via_flat:+.6f})")

# the ensemble is a proper density: integrate it over a wide box
mean, cov = ens.moments()
sd = np.sqrt(np.diag(cov))
xs = np.linspace(mean[0] - 8 * sd[0], mean[0] + 8 * sd[0], 400)
ys = np.linspace(mean[1] - 8 * sd[1], mean[1] + 8 * sd[1], 400)
gx, gy = np.meshgrid(xs, ys, indexing="ij")
vals = np.exp(ens.log_density(np.column_stack([gx.ravel(), gy.ravel()])))
total = np.trapezoid(np.trapezoid(vals.reshape(400, 400), ys, axis=1), xs)
print(f"integral over +-8 sd box: {total:.6f}")
