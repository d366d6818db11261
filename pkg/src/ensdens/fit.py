"""EM fitting of the candidate-model grid and BIC-based ranking.

Every (K, covariance structure) cell of the grid is fitted by EM with
k-means++ restarts, scored by BIC (``2*loglik - nu*log(n)``, larger is
better), and the best `ensemble_size` survivors form the candidate pool
for ensemble weighting.

Cells that collapse (a component weight below ``1/(2n)`` or a covariance
that stays non-factorizable after one regularization retry) fail
individually without taking the grid down; spurious singular components
would otherwise poison the ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mixture import (
    CovarianceStructure,
    GaussianComponent,
    GaussianMixture,
    free_parameter_count,
    log_sum_exp,
    model_from_dict,
    model_to_dict,
)
from .modal import Mode, Partition

__all__ = [
    "FitConfig",
    "CandidatePool",
    "FitFailure",
    "PipelineError",
    "DEFAULT_STRUCTURES",
    "em_fit",
    "bic",
    "fit_grid",
    "occam_window",
    "map_classify",
    "pool_to_dict",
    "pool_from_dict",
]

DEFAULT_STRUCTURES = (
    CovarianceStructure.EII,
    CovarianceStructure.VII,
    CovarianceStructure.EEI,
    CovarianceStructure.VVI,
    CovarianceStructure.EEE,
    CovarianceStructure.VVV,
)


class FitFailure(Exception):
    """A single (K, structure) cell could not be fitted."""


class PipelineError(Exception):
    """No usable result at all (e.g. every grid cell failed)."""


@dataclass(frozen=True)
class FitConfig:
    """Settings for the candidate-model grid.

    `seed` drives a SeedSequence; each (K, structure) cell and each
    restart gets an independent, reproducible stream via spawn keys, so
    cells may be fitted in any order (or in parallel) with identical
    results.
    """

    k_range: tuple = tuple(range(1, 10))
    structures: tuple = DEFAULT_STRUCTURES
    max_iter: int = 500
    rel_tol: float = 1e-8
    n_init: int = 5
    seed: int = 0
    # a component whose smallest covariance eigenvalue drops below this
    # fraction of the data's geometric-mean variance has collapsed onto a
    # handful of near-duplicate points; the restart counts as degenerate
    var_floor_rel: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "k_range", tuple(int(k) for k in self.k_range))
        object.__setattr__(
            self, "structures", tuple(CovarianceStructure(s) for s in self.structures)
        )
        if not self.k_range:
            raise ValueError("k_range must be non-empty")
        if min(self.k_range) < 1:
            raise ValueError("k_range values must be >= 1")
        if not self.structures:
            raise ValueError("structures must be non-empty")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iter < 1 or self.n_init < 1:
            raise ValueError("max_iter and n_init must be positive")
        if self.var_floor_rel < 0:
            raise ValueError("var_floor_rel must be nonnegative")


@dataclass(frozen=True)
class CandidatePool:
    """BIC-ranked fitted models, best first."""

    models: tuple
    ensemble_size: int
    grid_report: tuple = field(default=(), compare=False)

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise ValueError("pool must contain at least one model")
        bics = [m.bic for m in models]
        if any(b is None for b in bics):
            raise ValueError("pool models must carry BIC values")
        if any(bics[i] < bics[i + 1] for i in range(len(bics) - 1)):
            raise ValueError("pool models must be sorted by descending BIC")
        if not 1 <= self.ensemble_size <= len(models):
            raise ValueError("ensemble_size must be in 1..len(models)")
        object.__setattr__(self, "models", models)


def bic(model: GaussianMixture, n: int) -> float:
    """Bayesian information criterion, ``2*loglik - nu*log(n)`` (larger is better)."""
    if model.loglik is None:
        raise ValueError("model has no log-likelihood")
    return 2.0 * model.loglik - model.nu * np.log(n)


# ---------------------------------------------------------------------------
# EM internals
# ---------------------------------------------------------------------------

class _DegenerateFit(Exception):
    pass


def _kmeans_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding plus 10 Lloyd iterations; returns hard labels."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = x[rng.integers(n)]
        else:
            centers[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    labels = np.zeros(n, dtype=int)
    sq = (x**2).sum(axis=1)
    for _ in range(10):
        dist = sq[:, None] - 2.0 * (x @ centers.T) + (centers**2).sum(axis=1)
        labels = dist.argmin(axis=1)
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
    return labels


def _structure_covariances(structure, w, nk, n):
    k, d, _ = w.shape
    eye = np.eye(d)
    if structure is CovarianceStructure.VVV:
        return w / nk[:, None, None]
    if structure is CovarianceStructure.EEE:
        pooled = w.sum(axis=0) / n
        return np.broadcast_to(pooled, (k, d, d)).copy()
    if structure is CovarianceStructure.VVI:
        diags = np.einsum("kii->ki", w) / nk[:, None]
        return np.stack([np.diag(v) for v in diags])
    if structure is CovarianceStructure.EEI:
        diag = np.einsum("kii->ki", w).sum(axis=0) / n
        return np.broadcast_to(np.diag(diag), (k, d, d)).copy()
    if structure is CovarianceStructure.VII:
        lam = np.einsum("kii->k", w) / (d * nk)
        return lam[:, None, None] * eye
    if structure is CovarianceStructure.EII:
        lam = np.einsum("kii->k", w).sum() / (d * n)
        return np.broadcast_to(lam * eye, (k, d, d)).copy()
    raise ValueError(f"unknown structure {structure!r}")


def _factor(covs, var_floor=0.0):
    """Precisions and log-determinants via Cholesky, with one regularization retry each.

    The all-good case factors the whole stack in one batched call. A
    component whose smallest covariance eigenvalue falls below
    `var_floor` marks the restart degenerate: such components collapse
    onto a handful of near-duplicate points and put density spikes into
    the ensemble while still being numerically factorizable.
    """
    k, d, _ = covs.shape
    if var_floor > 0.0 and float(np.linalg.eigvalsh(covs)[:, 0].min()) < var_floor:
        raise _DegenerateFit("component covariance collapsed")
    out = covs
    try:
        chols = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        out = covs.copy()
        chols = np.empty_like(covs)
        for j in range(k):
            try:
                chols[j] = np.linalg.cholesky(out[j])
            except np.linalg.LinAlgError:
                ridge = 1e-8 * np.trace(out[j]) / d
                out[j] = out[j] + ridge * np.eye(d)
                try:
                    chols[j] = np.linalg.cholesky(out[j])
                except np.linalg.LinAlgError:
                    raise _DegenerateFit("covariance factorization failed") from None
    logdets = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
    inv_chols = np.linalg.inv(chols)
    precisions = np.einsum("kji,kjl->kil", inv_chols, inv_chols)
    return out, precisions, logdets


def _em_loop(x, k, structure, labels0, max_iter, rel_tol, var_floor_rel=1e-3):
    """Run EM from a hard initial assignment; returns params, loglik and its history.

    The inner loop works entirely in matrix products on globally centered
    data: quadratic features ``xx`` are built once, giving the E-step
    Mahalanobis matrix and the M-step scatter as single GEMMs each.
    """
    n, d = x.shape
    center = x.mean(axis=0)
    xc = x - center
    xx = np.einsum("ni,nj->nij", xc, xc).reshape(n, d * d)
    # collapse guard scale: relative to the data's typical marginal variance
    var_floor = var_floor_rel * float(np.exp(np.mean(np.log(xc.var(axis=0)))))
    # slightly smoothed one-hot responsibilities keep every initial
    # covariance positive definite even for singleton clusters
    tau = np.full((n, k), 1e-3 / k)
    tau[np.arange(n), labels0] += 1.0 - 1e-3
    weights, means, covs, precisions, logdets = _m_step(xc, xx, tau, structure, n, var_floor)

    history = []
    prev = -np.inf
    for _ in range(max_iter):
        weighted = _component_log_densities(xc, xx, means, precisions, logdets) \
            + np.log(weights)
        row_max = weighted.max(axis=1, keepdims=True)
        row_lse = np.log(np.exp(weighted - row_max).sum(axis=1, keepdims=True)) + row_max
        loglik = float(row_lse.sum())
        history.append(loglik)
        if abs(loglik - prev) < rel_tol * (1.0 + abs(loglik)):
            break
        prev = loglik
        tau = np.exp(weighted - row_lse)
        weights, means, covs, precisions, logdets = _m_step(xc, xx, tau, structure, n, var_floor)
    else:
        weighted = _component_log_densities(xc, xx, means, precisions, logdets) \
            + np.log(weights)
        loglik = float(log_sum_exp(weighted, axis=1).sum())
        history.append(loglik)
    return weights, means + center, covs, loglik, history


def _m_step(xc, xx, tau, structure, n, var_floor=0.0):
    d = xc.shape[1]
    nk = tau.sum(axis=0)
    weights = nk / n
    if np.any(weights < 1.0 / (2 * n)):
        raise _DegenerateFit("component weight collapsed")
    means = (tau.T @ xc) / nk[:, None]
    second = (tau.T @ xx).reshape(-1, d, d)
    w = second - nk[:, None, None] * np.einsum("ki,kj->kij", means, means)
    w = (w + np.transpose(w, (0, 2, 1))) / 2
    covs = _structure_covariances(structure, w, nk, n)
    covs, precisions, logdets = _factor(covs, var_floor)
    return weights, means, covs, precisions, logdets


def _component_log_densities(xc, xx, means, precisions, logdets):
    # (x-mu)' P (x-mu) expanded so each term is one matrix product
    k, d, _ = precisions.shape
    pm = np.einsum("kij,kj->ki", precisions, means)
    maha = xx @ precisions.reshape(k, d * d).T
    maha -= 2.0 * (xc @ pm.T)
    maha += np.einsum("ki,ki->k", pm, means)
    return -0.5 * (d * np.log(2 * np.pi) + logdets + maha)


def em_fit(data, k: int, structure, config: FitConfig | None = None) -> GaussianMixture:
    """Fit one K-component mixture under a covariance structure.

    Runs `config.n_init` EM restarts from k-means++ initializations and
    keeps the best log-likelihood. The observed log-likelihood is
    nondecreasing across EM iterations; iteration stops when its
    relative change falls below `config.rel_tol`.

    Raises
    ------
    ValueError
        If ``n <= k`` or the data contain non-finite values.
    FitFailure
        If every restart degenerates (weight collapse or factorization
        failure after the regularization retry).
    """
    config = config or FitConfig()
    structure = CovarianceStructure(structure)
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ValueError("data must be a 2-d array")
    if not np.all(np.isfinite(x)):
        raise ValueError("data must be finite")
    n, d = x.shape
    if n <= k:
        raise ValueError(f"need more observations than components (n={n}, K={k})")

    s_idx = DEFAULT_STRUCTURES.index(structure)
    cell = np.random.SeedSequence(config.seed, spawn_key=(k, s_idx))
    best = None
    for child in cell.spawn(config.n_init):
        rng = np.random.default_rng(child)
        try:
            labels0 = _kmeans_init(x, k, rng)
            weights, means, covs, loglik, _ = _em_loop(
                x, k, structure, labels0, config.max_iter, config.rel_tol,
                config.var_floor_rel,
            )
        except _DegenerateFit:
            continue
        if best is None or loglik > best[3]:
            best = (weights, means, covs, loglik)
    if best is None:
        raise FitFailure(f"all {config.n_init} restarts degenerated for K={k}, {structure.value}")

    weights, means, covs, loglik = best
    comps = tuple(GaussianComponent(means[j], covs[j]) for j in range(k))
    model = GaussianMixture(
        components=comps,
        weights=weights / weights.sum(),
        structure=structure,
        loglik=loglik,
    )
    return GaussianMixture(
        components=model.components,
        weights=model.weights,
        structure=structure,
        nu=model.nu,
        loglik=loglik,
        bic=bic(model, n),
    )


def fit_grid(data, config: FitConfig | None = None, ensemble_size: int = 30) -> CandidatePool:
    """Fit every (K, structure) cell and rank the survivors by BIC.

    Failed cells are dropped; ties in BIC are broken toward the earlier
    cell in (K, structure) grid order. At most `ensemble_size` models
    are retained.

    Raises
    ------
    PipelineError
        If every cell fails.
    """
    config = config or FitConfig()
    if ensemble_size < 1:
        raise ValueError("ensemble_size must be >= 1")
    x = np.asarray(data, dtype=float)
    fitted = []
    report = []
    for k in config.k_range:
        for structure in config.structures:
            entry = {"K": k, "structure": structure.value}
            try:
                model = em_fit(x, k, structure, config)
            except (FitFailure, ValueError) as exc:
                entry["status"] = "failed"
                entry["reason"] = str(exc)
            else:
                entry["status"] = "ok"
                entry["bic"] = model.bic
                entry["loglik"] = model.loglik
                entry["nu"] = model.nu
                fitted.append(model)
            report.append(entry)
    if not fitted:
        raise PipelineError("every grid cell failed to fit")
    order = sorted(range(len(fitted)), key=lambda i: (-fitted[i].bic, i))
    kept = tuple(fitted[i] for i in order[: min(ensemble_size, len(fitted))])
    return CandidatePool(models=kept, ensemble_size=len(kept), grid_report=tuple(report))


def occam_window(pool: CandidatePool, width: float = 10.0) -> CandidatePool:
    """Drop models whose BIC is more than `width` below the best one."""
    best = pool.models[0].bic
    kept = tuple(m for m in pool.models if best - m.bic <= width)
    return CandidatePool(models=kept, ensemble_size=len(kept), grid_report=pool.grid_report)


def map_classify(data, model: GaussianMixture) -> Partition:
    """Assign each observation to its maximum-a-posteriori component.

    Returns a Partition whose "modes" are the component means (centers),
    in component order; ties go to the lowest component index.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.d:
        raise ValueError("data dimension does not match the model")
    weighted = model.component_log_densities(x) + np.log(model.weights)
    labels = weighted.argmax(axis=1) + 1
    counts = np.bincount(labels - 1, minlength=model.n_components)
    modes = tuple(
        Mode(
            location=comp.mean,
            log_density=float(model.log_density(comp.mean)),
            basin_size=int(counts[j]),
        )
        for j, comp in enumerate(model.components)
    )
    return Partition(labels=labels, modes=modes, method_tag="map")


def pool_to_dict(pool: CandidatePool) -> dict:
    """JSON-ready pool: ranked model objects plus ranking metadata."""
    return {
        "schema_version": 1,
        "ensemble_size": pool.ensemble_size,
        "models": [
            dict(model_to_dict(m), rank=i + 1) for i, m in enumerate(pool.models)
        ],
        "grid_report": list(pool.grid_report),
    }


def pool_from_dict(obj: dict) -> CandidatePool:
    models = tuple(model_from_dict(m) for m in obj["models"])
    return CandidatePool(
        models=models,
        ensemble_size=int(obj["ensemble_size"]),
        grid_report=tuple(obj.get("grid_report", ())),
    )
