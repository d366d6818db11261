"""Gaussian mixture densities and their convex ensembles.

All density arithmetic is carried out in the log domain: a convex
combination of 30 mixtures evaluated on thousands of points underflows
quickly in the linear domain, so every sum of densities goes through
:func:`log_sum_exp`.

The types defined here are immutable after construction (arrays are
frozen), so they can be shared freely across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = math.log(2.0 * math.pi)

__all__ = [
    "CovarianceStructure",
    "GaussianComponent",
    "GaussianMixture",
    "EnsembleDensity",
    "log_sum_exp",
    "gaussian_log_density",
    "mixture_log_density",
    "ensemble_log_density",
    "flatten_ensemble",
    "model_to_dict",
    "model_from_dict",
]


def log_sum_exp(values, axis=None):
    """Compute ``log(sum(exp(values)))`` without overflow or underflow.

    Parameters
    ----------
    values : array_like
        Log-domain terms. Must be non-empty (along `axis` if given).
    axis : int, optional
        Axis along which to reduce; default reduces over all entries.

    Returns
    -------
    float or ndarray
        ``log(sum(exp(values)))``, exact up to floating error for any
        finite shift of the inputs.
    """
    v = np.asarray(values, dtype=float)
    if axis is None:
        if v.size == 0:
            raise ValueError("log_sum_exp of an empty collection")
        vmax = float(np.max(v))
        if not math.isfinite(vmax):
            return vmax
        return float(np.log(np.sum(np.exp(v - vmax))) + vmax)
    if v.shape[axis] == 0:
        raise ValueError("log_sum_exp of an empty collection")
    vmax = np.max(v, axis=axis, keepdims=True)
    # -inf slices stay -inf instead of producing nan from (-inf) - (-inf)
    shift = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - shift), axis=axis)) + np.squeeze(shift, axis=axis)
    return out


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


class CovarianceStructure(str, Enum):
    """Constraint code for mixture component covariances.

    Three letters give volume/shape/orientation equality across
    components: E = equal, V = varying, I = identity (axis aligned,
    spherical/diagonal). The implemented set spans spherical, diagonal
    and full covariances, each in an equal and a varying flavour.
    """

    EII = "EII"  # equal spherical: sigma^2 I
    VII = "VII"  # varying spherical: sigma_k^2 I
    EEI = "EEI"  # equal diagonal
    VVI = "VVI"  # varying diagonal
    EEE = "EEE"  # equal full covariance
    VVV = "VVV"  # unconstrained

    def cov_param_count(self, d: int, k: int) -> int:
        """Number of free covariance parameters for dimension `d`, `k` components."""
        full = d * (d + 1) // 2
        return {
            CovarianceStructure.EII: 1,
            CovarianceStructure.VII: k,
            CovarianceStructure.EEI: d,
            CovarianceStructure.VVI: k * d,
            CovarianceStructure.EEE: full,
            CovarianceStructure.VVV: k * full,
        }[self]


def free_parameter_count(structure: CovarianceStructure, d: int, k: int) -> int:
    """Total free parameters of a K-component mixture: weights + means + covariances."""
    return (k - 1) + k * d + structure.cov_param_count(d, k)


@dataclass(frozen=True)
class GaussianComponent:
    """A single Gaussian density with cached Cholesky factor.

    Parameters
    ----------
    mean : (d,) ndarray
    covariance : (d, d) ndarray
        Must be symmetric (to 1e-12 relative) and strictly positive
        definite; the Cholesky factorization is taken at construction
        and reused by every density evaluation.
    """

    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)
    log_det: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = _freeze(np.atleast_1d(self.mean))
        cov = np.array(self.covariance, dtype=float)
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got {cov.shape}")
        asym = np.max(np.abs(cov - cov.T))
        scale = max(1.0, float(np.max(np.abs(cov))))
        if asym > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")
        cov = _freeze((cov + cov.T) / 2.0)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "chol", _freeze(chol))
        object.__setattr__(self, "log_det", float(2.0 * np.sum(np.log(np.diag(chol)))))

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def log_density(self, x):
        """Log N(x | mean, covariance); accepts one point (d,) or a batch (n, d)."""
        return gaussian_log_density(x, self)


def _as_batch(x, d: int):
    """Coerce to (n, d); returns (batch, was_single_point)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != d:
            raise ValueError(f"point has dimension {arr.shape[0]}, expected {d}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ValueError(f"data must be (n, {d}), got {arr.shape}")
    return arr, False


def gaussian_log_density(x, comp: GaussianComponent):
    """Log density of a Gaussian component via its Cholesky factor.

    Parameters
    ----------
    x : (d,) or (n, d) array_like
    comp : GaussianComponent

    Returns
    -------
    float or (n,) ndarray
    """
    batch, single = _as_batch(x, comp.d)
    z = solve_triangular(comp.chol, (batch - comp.mean).T, lower=True, check_finite=False)
    maha = np.einsum("dn,dn->n", z, z)
    out = -0.5 * (comp.d * LOG_2PI + comp.log_det + maha)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class GaussianMixture:
    """A finite Gaussian mixture with covariance-structure bookkeeping.

    Parameters
    ----------
    components : tuple of GaussianComponent
    weights : (K,) ndarray
        Strictly positive, summing to one (1e-10 tolerance).
    structure : CovarianceStructure
        Constraint under which the model was (or would be) fitted; the
        free-parameter count `nu` follows from it.
    nu : int, optional
        Free-parameter count; derived from `structure` when omitted,
        validated against it when given.
    loglik, bic : float, optional
        Set on fitted models; `None` for hand-built densities.
    """

    components: tuple
    weights: np.ndarray
    structure: CovarianceStructure = CovarianceStructure.VVV
    nu: int | None = None
    loglik: float | None = None
    bic: float | None = None

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        d = comps[0].d
        if any(c.d != d for c in comps):
            raise ValueError("components have mismatched dimensions")
        w = _freeze(np.atleast_1d(self.weights))
        if w.shape != (len(comps),):
            raise ValueError("weights length must match component count")
        if np.any(w <= 0.0):
            raise ValueError("mixture weights must be strictly positive")
        if abs(float(w.sum()) - 1.0) > 1e-10:
            raise ValueError("mixture weights must sum to 1")
        structure = CovarianceStructure(self.structure)
        expected_nu = free_parameter_count(structure, d, len(comps))
        if self.nu is None:
            object.__setattr__(self, "nu", expected_nu)
        elif int(self.nu) != expected_nu:
            raise ValueError(
                f"nu={self.nu} inconsistent with structure {structure.value}: "
                f"expected {expected_nu}"
            )
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "structure", structure)

    @property
    def d(self) -> int:
        return self.components[0].d

    @property
    def n_components(self) -> int:
        return len(self.components)

    @cached_property
    def _log_weights(self) -> np.ndarray:
        return _freeze(np.log(self.weights))

    def component_log_densities(self, x) -> np.ndarray:
        """Matrix of log phi_k(x_i) with shape (n, K)."""
        batch, _ = _as_batch(x, self.d)
        out = np.empty((batch.shape[0], self.n_components))
        for k, comp in enumerate(self.components):
            out[:, k] = gaussian_log_density(batch, comp)
        return out

    def log_density(self, x):
        """Mixture log density log sum_k pi_k phi_k(x)."""
        batch, single = _as_batch(x, self.d)
        lse = log_sum_exp(self.component_log_densities(batch) + self._log_weights, axis=1)
        return float(lse[0]) if single else lse

    def moments(self):
        """Analytic mean vector and covariance matrix of the mixture."""
        means = np.stack([c.mean for c in self.components])
        covs = np.stack([c.covariance for c in self.components])
        w = self.weights
        mean = w @ means
        second = np.einsum("k,kij->ij", w, covs + np.einsum("ki,kj->kij", means, means))
        return mean, second - np.outer(mean, mean)


def mixture_log_density(x, model: GaussianMixture):
    """Log density of `model` at `x` ((d,) point or (n, d) batch)."""
    return model.log_density(x)


@dataclass(frozen=True)
class EnsembleDensity:
    """Convex combination ``sum_m alpha_m f_m`` of fitted mixtures.

    The ensemble is itself a mixture model: :meth:`flatten` returns the
    equivalent single mixture whose component (m, k) carries weight
    ``alpha_m * pi_mk``.
    """

    models: tuple
    alpha: np.ndarray

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise ValueError("ensemble needs at least one model")
        d = models[0].d
        if any(m.d != d for m in models):
            raise ValueError("ensemble models have mismatched dimensions")
        a = _freeze(np.atleast_1d(self.alpha))
        if a.shape != (len(models),):
            raise ValueError("alpha length must match model count")
        if np.any(a <= 0.0):
            raise ValueError("ensemble weights must be strictly positive")
        if abs(float(a.sum()) - 1.0) > 1e-10:
            raise ValueError("ensemble weights must sum to 1")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "alpha", a)

    @property
    def d(self) -> int:
        return self.models[0].d

    @property
    def n_models(self) -> int:
        return len(self.models)

    def log_density(self, x):
        """Ensemble log density log sum_m alpha_m f_m(x)."""
        batch, single = _as_batch(x, self.d)
        per_model = np.empty((batch.shape[0], self.n_models))
        for m, model in enumerate(self.models):
            per_model[:, m] = model.log_density(batch)
        lse = log_sum_exp(per_model + np.log(self.alpha), axis=1)
        return float(lse[0]) if single else lse

    def flatten(self) -> GaussianMixture:
        """Collapse to one mixture over all component densities."""
        comps = []
        weights = []
        for a, model in zip(self.alpha, self.models):
            comps.extend(model.components)
            weights.extend(a * model.weights)
        weights = np.asarray(weights)
        return GaussianMixture(
            components=tuple(comps),
            weights=weights / weights.sum(),
            structure=CovarianceStructure.VVV,
        )

    def moments(self):
        """Analytic mean and covariance of the ensemble density."""
        return self.flatten().moments()


def ensemble_log_density(x, ens: EnsembleDensity):
    """Log density of the ensemble at `x` ((d,) point or (n, d) batch)."""
    return ens.log_density(x)


def flatten_ensemble(ens: EnsembleDensity) -> GaussianMixture:
    """Equivalent single mixture of an ensemble; see :meth:`EnsembleDensity.flatten`."""
    return ens.flatten()


def model_to_dict(model: GaussianMixture) -> dict:
    """JSON-ready representation of a mixture (full covariance matrices, row-major)."""
    return {
        "d": model.d,
        "K": model.n_components,
        "structure": model.structure.value,
        "weights": model.weights.tolist(),
        "means": [c.mean.tolist() for c in model.components],
        "covariances": [c.covariance.tolist() for c in model.components],
        "nu": model.nu,
        "loglik": model.loglik,
        "bic": model.bic,
    }


def model_from_dict(obj: dict) -> GaussianMixture:
    """Inverse of :func:`model_to_dict`."""
    comps = tuple(
        GaussianComponent(np.asarray(m, dtype=float), np.asarray(c, dtype=float))
        for m, c in zip(obj["means"], obj["covariances"])
    )
    return GaussianMixture(
        components=comps,
        weights=np.asarray(obj["weights"], dtype=float),
        structure=CovarianceStructure(obj["structure"]),
        nu=obj.get("nu"),
        loglik=obj.get("loglik"),
        bic=obj.get("bic"),
    )
