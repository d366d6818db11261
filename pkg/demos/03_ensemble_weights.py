"""How the penalty strength shapes the ensemble weights.

The weight vector maximizes the penalized log-likelihood on the simplex:
larger penalties push mass from complex models toward parsimonious ones,
and the rule-of-thumb strengths (AIC-type = 1, BIC-type = log(n)/2) sit
between no penalty and cross-validated selection.
"""

import numpy as np

from ensdens import (
    CvConfig,
    FitConfig,
    PenaltySpec,
    fit_grid,
    fit_weights,
    lambda_aic,
    lambda_bic,
    lambda_cv,
    log_density_matrix,
    scenario,
)

spec = scenario("M2")
data, _ = spec.sample(500, seed=11)
pool = fit_grid(data, FitConfig(seed=11), ensemble_size=30)
dm = log_density_matrix(data, pool.models)
nu = np.array([m.nu for m in pool.models], dtype=float)

lam_cv, table = lambda_cv(data, pool, CvConfig(folds=5, seed=11))
print("lambda  source      kept>=1e-6  top-3 weights (K, structure)")
for label, lam in [
    ("0", 0.0),
    (f"{lambda_aic():.3f}", lambda_aic()),
    (f"{lambda_bic(len(data)):.3f}", lambda_bic(len(data))),
    (f"{lam_cv:.3f}", lam_cv),
]:
    wf = fit_weights(dm, PenaltySpec(lam=lam, nu=nu))
    top = np.argsort(wf.alpha)[::-1][:3]
    tops = ", ".join(
        f"{wf.alpha[i]:.2f} (K={pool.models[i].n_components}, "
        f"{pool.models[i].structure.value})"
        for i in top
    )
    kept = int(np.sum(wf.alpha >= 1e-6))
    source = {0.0: "none", lambda_aic(): "aic", lambda_bic(len(data)): "bic"}.get(lam, "cv")
    print(f"{label:>6}  {source:10s}  {kept:10d}  {tops}")

print("\ncross-validated test log-likelihood by lambda (first/best/last):")
best = max(table, key=lambda r: r["test_loglik"])
for row in (table[0], best, table[-1]):
    marker = " <- selected" if row["lambda"] == lam_cv else ""
    print(f"  lambda={row['lambda']:8.3f}  test loglik={row['test_loglik']:.2f}{marker}")
