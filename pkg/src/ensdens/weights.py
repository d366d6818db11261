"""Penalized maximum-likelihood weighting of an ensemble of fitted mixtures.

Given the fixed log-density matrix ``L[i, m] = log f_m(x_i)``, the
simplex weight vector maximizes

    sum_i log sum_m alpha_m exp(L[i, m])  -  lam * sum_m alpha_m nu_m

by EM: the E-step computes model responsibilities, the M-step maximizes
the expected complete-data penalized log-likelihood over the simplex.
The complexity vector `nu` holds each model's free-parameter count, so
larger `lam` pushes weight toward simpler models; ``lam = 0`` recovers
plain maximum likelihood, with the familiar closed-form M-step.

No closed form exists for the penalized M-step. It is solved on the
unconstrained softmax parametrization ``alpha = softmax(beta)`` (last
coordinate pinned at 0) by gradient ascent with backtracking line
search, warm-started at the solution of the dual equation
``sum_m T_m / (c + lam * nu_m) = 1``, which the ascent then verifies and
polishes. Weights are floored at 1e-12 so every log stays finite; a
model is reported dropped when its final weight falls below 1e-6.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .mixture import log_sum_exp

__all__ = [
    "PenaltySpec",
    "WeightFit",
    "CvConfig",
    "ALPHA_FLOOR",
    "DROP_THRESHOLD",
    "log_density_matrix",
    "loglik_alpha",
    "penalized_loglik",
    "e_step",
    "m_step",
    "fit_weights",
    "lambda_aic",
    "lambda_bic",
    "lambda_cv",
    "default_lambda_grid",
    "penalty_from_models",
    "weight_fit_to_dict",
]

ALPHA_FLOOR = 1e-12
DROP_THRESHOLD = 1e-6


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty strength `lam` and per-model complexities `nu` (free-parameter counts)."""

    lam: float
    nu: np.ndarray

    def __post_init__(self):
        nu = np.array(self.nu, dtype=float)
        nu.flags.writeable = False
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if nu.ndim != 1 or nu.size == 0 or np.any(nu < 1):
            raise ValueError("nu must be a vector of counts >= 1")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "nu", nu)

    def value(self, alpha: np.ndarray) -> float:
        """The penalty term ``lam * sum_m alpha_m nu_m``."""
        return self.lam * float(alpha @ self.nu)


@dataclass(frozen=True)
class WeightFit:
    """Result of the penalized weight EM."""

    alpha: np.ndarray
    penalized_loglik: float
    loglik: float
    iterations: int
    lam: float
    converged: bool

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float)
        a.flags.writeable = False
        if np.any(a < ALPHA_FLOOR) or abs(float(a.sum()) - 1.0) > 1e-10:
            raise ValueError("alpha must lie on the floored simplex")
        object.__setattr__(self, "alpha", a)

    @property
    def dropped_models(self) -> list:
        """1-based indices of models whose weight fell below the drop threshold."""
        return [int(i) + 1 for i in np.where(self.alpha < DROP_THRESHOLD)[0]]


@dataclass(frozen=True)
class CvConfig:
    """V-fold cross-validation settings for choosing the penalty strength."""

    folds: int = 5
    lambda_grid: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if self.lambda_grid is not None:
            g = np.array(self.lambda_grid, dtype=float)
            g.flags.writeable = False
            if g.size == 0:
                raise ValueError("lambda grid must be non-empty")
            if np.any(np.diff(g) <= 0):
                raise ValueError("lambda grid must be strictly increasing")
            object.__setattr__(self, "lambda_grid", g)


def log_density_matrix(data, models) -> np.ndarray:
    """The n x M matrix ``L[i, m] = log f_m(x_i)`` shared by all weight fits."""
    data = np.asarray(data, dtype=float)
    out = np.empty((data.shape[0], len(models)))
    for m, model in enumerate(models):
        out[:, m] = model.log_density(data)
    return out


def _check_alpha(alpha, m: int) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    if a.shape != (m,):
        raise ValueError(f"alpha must have length {m}")
    if np.any(a < 0) or abs(float(a.sum()) - 1.0) > 1e-8:
        raise ValueError("alpha must lie on the simplex")
    return np.clip(a, ALPHA_FLOOR, None)


def loglik_alpha(alpha, density_matrix) -> float:
    """Observed log-likelihood of the ensemble weights on a fixed density matrix."""
    dm = np.asarray(density_matrix, dtype=float)
    a = _check_alpha(alpha, dm.shape[1])
    return float(np.sum(log_sum_exp(np.log(a) + dm, axis=1)))


def penalized_loglik(alpha, density_matrix, penalty: PenaltySpec) -> float:
    """``loglik_alpha`` minus the complexity penalty."""
    dm = np.asarray(density_matrix, dtype=float)
    a = _check_alpha(alpha, dm.shape[1])
    return loglik_alpha(a, dm) - penalty.value(a)


def e_step(alpha_prev, density_matrix) -> np.ndarray:
    """Model responsibilities: rows of ``softmax(log alpha + L)``, each summing to 1."""
    dm = np.asarray(density_matrix, dtype=float)
    a = _check_alpha(alpha_prev, dm.shape[1])
    logp = np.log(a) + dm
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


def _q_objective(alpha, totals, penalty):
    # expected complete-data penalized log-likelihood, dropping the
    # tau * L term that does not depend on alpha
    return float(totals @ np.log(alpha) - penalty.lam * (alpha @ penalty.nu))


def _dual_start(totals, penalty):
    """Exact maximizer of the M-step objective via its scalar dual equation."""
    lam, nu = penalty.lam, penalty.nu
    pos = totals > 0
    if not np.any(pos):
        raise ValueError("responsibilities sum to zero")

    def surplus(c):
        return float(np.sum(totals[pos] / (c + lam * nu[pos]))) - 1.0

    c_min = -lam * float(nu[pos].min())
    hi = float(totals.sum())  # surplus(sum T) < 0 whenever lam > 0
    span = max(hi - c_min, 1.0)
    lo = None
    for shrink in range(1, 60):
        cand = c_min + span * 2.0 ** (-shrink)
        if surplus(cand) > 0:
            lo = cand
            break
    if lo is None:
        # penalty overwhelmingly dominates: all mass on the simplest model
        alpha = np.full(totals.shape, ALPHA_FLOOR)
        alpha[np.argmin(np.where(pos, nu, np.inf))] = 1.0
        return alpha / alpha.sum()
    c = brentq(surplus, lo, hi, xtol=1e-13, rtol=8.9e-16, maxiter=200)
    alpha = np.where(pos, totals / (c + lam * nu), 0.0)
    alpha = np.clip(alpha, ALPHA_FLOOR, None)
    return alpha / alpha.sum()


def _softmax(beta):
    b = beta - beta.max()
    e = np.exp(b)
    return e / e.sum()


def _ascend_q(alpha0, totals, penalty, tol=1e-10, max_inner=200):
    """Gradient ascent with backtracking on alpha = softmax(beta), beta[-1] = 0.

    Stationarity is measured by the KKT-projected gradient: coordinates
    sitting at the weight floor with a downhill gradient are optimal
    there and do not count (nor get pushed further down).
    """
    lam, nu = penalty.lam, penalty.nu
    beta = np.log(np.clip(alpha0, ALPHA_FLOOR, None))
    beta -= beta[-1]
    alpha = _softmax(beta)
    q = _q_objective(alpha, totals, penalty)
    n_t = float(totals.sum())
    for _ in range(max_inner):
        grad = totals - alpha * n_t - lam * alpha * (nu - float(alpha @ nu))
        grad[-1] = 0.0
        grad[(alpha <= 4 * ALPHA_FLOOR) & (grad < 0)] = 0.0
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return alpha, True
        step = 1.0 / max(n_t, 1.0)
        improved = False
        while step > 1e-18:
            trial = beta + step * grad
            trial_alpha = _softmax(trial)
            trial_q = _q_objective(trial_alpha, totals, penalty)
            if trial_q >= q + 1e-4 * step * gnorm**2:
                improved = trial_q > q
                beta, alpha, q = trial, trial_alpha, trial_q
                break
            step /= 2.0
        if not improved:
            # no representable ascent step left: converged at float resolution
            return alpha, True
    return alpha, False


def m_step(tau, density_matrix, penalty: PenaltySpec, init_alpha=None) -> np.ndarray:
    """Maximize the expected complete-data penalized log-likelihood over the simplex.

    With ``lam = 0`` (or all complexities equal) the penalty is constant
    on the simplex and the classical closed form ``alpha_m = sum_i
    tau_im / n`` is returned exactly. Otherwise the softmax gradient
    ascent runs from the dual-equation warm start (and from `init_alpha`
    when that scores higher); if it somehow fails to converge the
    unpenalized closed form is returned with a warning.
    """
    tau = np.asarray(tau, dtype=float)
    dm = np.asarray(density_matrix, dtype=float)
    if tau.shape != dm.shape:
        raise ValueError("tau and density matrix shapes differ")
    n = tau.shape[0]
    totals = tau.sum(axis=0)
    closed_form = np.clip(totals / n, ALPHA_FLOOR, None)
    closed_form = closed_form / closed_form.sum()
    if penalty.lam == 0.0 or np.all(penalty.nu == penalty.nu[0]):
        return closed_form

    start = _dual_start(totals, penalty)
    if init_alpha is not None:
        init_alpha = np.clip(np.asarray(init_alpha, dtype=float), ALPHA_FLOOR, None)
        init_alpha = init_alpha / init_alpha.sum()
        if _q_objective(init_alpha, totals, penalty) > _q_objective(start, totals, penalty):
            start = init_alpha
    alpha, ok = _ascend_q(start, totals, penalty)
    if not ok:
        warnings.warn(
            "penalized M-step did not converge; falling back to the unpenalized closed form",
            RuntimeWarning,
        )
        return closed_form
    alpha = np.clip(alpha, ALPHA_FLOOR, None)
    return alpha / alpha.sum()


def fit_weights(density_matrix, penalty: PenaltySpec, init="uniform",
                rel_tol: float = 1e-8, max_iter: int = 1000) -> WeightFit:
    """Estimate ensemble weights by the penalized EM.

    Alternates responsibilities and penalized M-steps from a uniform
    start until the relative change of the penalized log-likelihood
    drops below `rel_tol`. The penalized log-likelihood is nondecreasing
    across iterations; if `max_iter` is reached the best iterate is
    returned flagged ``converged=False``.
    """
    dm = np.asarray(density_matrix, dtype=float)
    if dm.ndim != 2 or dm.shape[0] < 1 or dm.shape[1] < 1:
        raise ValueError("density matrix must be n x M with n, M >= 1")
    n, m = dm.shape
    if penalty.nu.shape != (m,):
        raise ValueError("penalty.nu length must match the number of models")

    if isinstance(init, str):
        if init != "uniform":
            raise ValueError(f"unknown init {init!r}")
        alpha = np.full(m, 1.0 / m)
    else:
        alpha = _check_alpha(init, m)
        alpha = alpha / alpha.sum()

    if m == 1:
        alpha = np.array([1.0])
        ll = loglik_alpha(alpha, dm)
        return WeightFit(
            alpha=alpha,
            penalized_loglik=ll - penalty.value(alpha),
            loglik=ll,
            iterations=0,
            lam=penalty.lam,
            converged=True,
        )

    plp = penalized_loglik(alpha, dm, penalty)
    best_alpha, best_plp = alpha, plp
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        tau = e_step(alpha, dm)
        alpha = m_step(tau, dm, penalty, init_alpha=alpha)
        new_plp = penalized_loglik(alpha, dm, penalty)
        if new_plp >= best_plp:
            best_alpha, best_plp = alpha, new_plp
        if abs(new_plp - plp) < rel_tol * (1.0 + abs(new_plp)):
            plp = new_plp
            converged = True
            break
        plp = new_plp

    alpha = best_alpha if not converged else alpha
    alpha = np.clip(alpha / alpha.sum(), ALPHA_FLOOR, None)
    ll = loglik_alpha(alpha, dm)
    return WeightFit(
        alpha=alpha,
        penalized_loglik=ll - penalty.value(alpha),
        loglik=ll,
        iterations=iterations,
        lam=penalty.lam,
        converged=converged,
    )


def lambda_aic() -> float:
    """Penalty strength matching an AIC-type penalized log-likelihood."""
    return 1.0


def lambda_bic(n: int) -> float:
    """Penalty strength matching a BIC-type penalized log-likelihood: log(n)/2."""
    if n < 1:
        raise ValueError("n must be positive")
    return float(np.log(n) / 2.0)


def default_lambda_grid(n: int, size: int = 25) -> np.ndarray:
    """Log-spaced grid from 0.01 to 4*log(n), bracketing both rule-of-thumb penalties."""
    upper = max(4.0 * np.log(max(n, 2)), 0.02)
    return np.geomspace(0.01, upper, size)


def penalty_from_models(models, lam: float) -> PenaltySpec:
    """PenaltySpec with `nu` read off the models' free-parameter counts."""
    return PenaltySpec(lam=lam, nu=np.array([m.nu for m in models], dtype=float))


def _fold_assignment(n: int, folds: int, seed) -> list:
    """Seeded shuffle then contiguous split; remainder spread over leading folds."""
    order = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, folds)
    sizes = [base + (1 if v < extra else 0) for v in range(folds)]
    out = []
    at = 0
    for s in sizes:
        out.append(np.sort(order[at:at + s]))
        at += s
    return out


def lambda_cv(data, pool, cv: CvConfig | None = None, rel_tol: float = 1e-8,
              max_iter: int = 1000):
    """Choose the penalty strength by V-fold cross-validated test log-likelihood.

    The pool models stay fixed (fitted once on the full data); only the
    weights are refitted on each training fold. Returns the maximizing
    penalty (ties broken toward the larger value) together with the
    per-lambda test log-likelihood table.

    Parameters
    ----------
    data : (n, d) array_like
    pool : CandidatePool or sequence of GaussianMixture
    cv : CvConfig, optional
        `lambda_grid=None` uses :func:`default_lambda_grid`.

    Returns
    -------
    (float, list of dict)
        The selected lambda and rows ``{"lambda":, "test_loglik":}``.
    """
    cv = cv or CvConfig()
    models = getattr(pool, "models", pool)
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if n < cv.folds:
        raise ValueError(f"need at least folds={cv.folds} observations, got {n}")
    grid = cv.lambda_grid if cv.lambda_grid is not None else default_lambda_grid(n)
    if len(grid) == 0:
        raise ValueError("lambda grid is empty")

    m = len(models)
    dm = log_density_matrix(data, models)
    nu = np.array([mod.nu for mod in models], dtype=float)
    folds = _fold_assignment(n, cv.folds, cv.seed)
    if any(len(f) < m for f in folds):
        warnings.warn(
            f"some folds hold fewer than M={m} observations; proceeding anyway",
            RuntimeWarning,
        )

    mask = np.zeros(n, dtype=bool)
    test_loglik = np.zeros(len(grid))
    for fold in folds:
        mask[:] = True
        mask[fold] = False
        train, test = dm[mask], dm[fold]
        for j, lam in enumerate(grid):
            wf = fit_weights(train, PenaltySpec(lam=lam, nu=nu),
                             rel_tol=rel_tol, max_iter=max_iter)
            test_loglik[j] += float(
                np.sum(log_sum_exp(np.log(wf.alpha) + test, axis=1))
            )

    best = 0
    for j in range(1, len(grid)):
        if test_loglik[j] >= test_loglik[best]:
            best = j
    table = [
        {"lambda": float(lam), "test_loglik": float(tl)}
        for lam, tl in zip(grid, test_loglik)
    ]
    return float(grid[best]), table


def weight_fit_to_dict(fit: WeightFit) -> dict:
    """JSON-ready representation of a weight fit."""
    return {
        "schema_version": 1,
        "alpha": fit.alpha.tolist(),
        "lambda": fit.lam,
        "loglik": fit.loglik,
        "penalized_loglik": fit.penalized_loglik,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "dropped_models": fit.dropped_models,
    }
