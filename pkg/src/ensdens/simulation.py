"""Benchmark scenario densities, samplers, and the Monte Carlo harness.

Five built-in bivariate scenarios (M1..M5) cover a single Gaussian, two-
and three-component Gaussian mixtures, and one- and two-component
skew-normal mixtures. Their parameters are fixed constants; samplers and
exact log-densities are exposed so estimation error can be measured
against the generating truth.

Skew-normal convention: a component is parametrized by location `xi`,
scale matrix `omega_mat` and slant vector `slant`, with density

    2 * phi_d(x; xi, Omega) * Phi(slant' diag(omega)^-1 (x - xi))

(`omega` = marginal scales). Sampling uses the conditioning
representation: draw (z0, z) jointly normal with the correlation implied
by the slant, reflect z on the sign of z0, then map affinely. The slant
is unconstrained; the implied latent correlation vector is always
admissible, and the analytic mean shift is sqrt(2/pi) * omega * delta
with delta the latent correlation.

Reproducibility: all randomness flows from numpy SeedSequence streams.
A replicate job for (scenario index s, sample-size index j, replicate b)
draws from ``SeedSequence(plan.seed, spawn_key=(s, j, b))``, split into
independent child streams for sampling, grid fitting and CV folding, so
replicates can run concurrently in any order with identical results.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.stats import norm

from .evaluation import IseGrid, adjusted_rand_index, ise
from .fit import FitConfig, PipelineError, fit_grid, map_classify
from .mixture import EnsembleDensity, GaussianComponent, log_sum_exp
from .modal import find_partition
from .weights import (
    CvConfig,
    PenaltySpec,
    fit_weights,
    lambda_aic,
    lambda_bic,
    lambda_cv,
    log_density_matrix,
)

__all__ = [
    "SkewNormalComponent",
    "ScenarioSpec",
    "ExperimentPlan",
    "SCENARIO_IDS",
    "METHODS",
    "scenario",
    "sample_scenario",
    "true_log_density",
    "run_experiment",
]

SCENARIO_IDS = ("M1", "M2", "M3", "M4", "M5")
METHODS = ("sb", "sb-np", "aic", "bic", "cv")


@dataclass(frozen=True)
class SkewNormalComponent:
    """One skew-normal density in the (location, scale, slant) parametrization."""

    xi: np.ndarray
    omega_mat: np.ndarray
    slant: np.ndarray

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float)
        om = np.array(self.omega_mat, dtype=float)
        slant = np.array(self.slant, dtype=float)
        for a in (xi, om, slant):
            a.flags.writeable = False
        if xi.ndim != 1 or slant.shape != xi.shape:
            raise ValueError("xi and slant must be vectors of equal length")
        d = xi.shape[0]
        if om.shape != (d, d) or np.max(np.abs(om - om.T)) > 1e-12 * max(1.0, np.abs(om).max()):
            raise ValueError("omega_mat must be symmetric")
        np.linalg.cholesky(om)  # positive definiteness
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "omega_mat", om)
        object.__setattr__(self, "slant", slant)
        # admissibility of the conditioning representation: the extended
        # correlation matrix must factor
        np.linalg.cholesky(self._extended_corr)

    @property
    def d(self) -> int:
        return self.xi.shape[0]

    @cached_property
    def _omega(self) -> np.ndarray:
        return np.sqrt(np.diag(self.omega_mat))

    @cached_property
    def _corr(self) -> np.ndarray:
        return self.omega_mat / np.outer(self._omega, self._omega)

    @cached_property
    def _latent_delta(self) -> np.ndarray:
        """Correlation between the latent truncation variable and each margin."""
        ra = self._corr @ self.slant
        return ra / np.sqrt(1.0 + float(self.slant @ ra))

    @cached_property
    def _extended_corr(self) -> np.ndarray:
        d = self.d
        c = np.empty((d + 1, d + 1))
        c[0, 0] = 1.0
        c[0, 1:] = self._latent_delta
        c[1:, 0] = self._latent_delta
        c[1:, 1:] = self._corr
        return c

    @cached_property
    def _gauss(self) -> GaussianComponent:
        return GaussianComponent(self.xi, self.omega_mat)

    def log_density(self, x):
        arr = np.atleast_2d(np.asarray(x, dtype=float))
        proj = (arr - self.xi) / self._omega @ self.slant
        out = np.log(2.0) + self._gauss.log_density(arr) + norm.logcdf(proj)
        return float(out[0]) if np.asarray(x).ndim == 1 else out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        chol = np.linalg.cholesky(self._extended_corr)
        z = rng.standard_normal((n, self.d + 1)) @ chol.T
        signed = z[:, 1:] * np.sign(z[:, :1])
        return self.xi + signed * self._omega

    def moments(self):
        shift = np.sqrt(2.0 / np.pi) * self._omega * self._latent_delta
        return self.xi + shift, self.omega_mat - np.outer(shift, shift)


def _gaussian_sample(comp: GaussianComponent, rng: np.random.Generator, n: int) -> np.ndarray:
    return comp.mean + rng.standard_normal((n, comp.d)) @ comp.chol.T


@dataclass(frozen=True)
class ScenarioSpec:
    """A generating density: weighted Gaussian or skew-normal components.

    The true label of a draw is the 1-based index of the component it
    was drawn from.
    """

    id: str
    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.flags.writeable = False
        comps = tuple(self.components)
        if w.shape != (len(comps),) or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if len({c.d for c in comps}) != 1:
            raise ValueError("components must share a dimension")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return self.components[0].d

    @property
    def n_components(self) -> int:
        return len(self.components)

    def log_density(self, x):
        arr = np.atleast_2d(np.asarray(x, dtype=float))
        cols = np.stack([c.log_density(arr) for c in self.components], axis=1)
        out = log_sum_exp(cols + np.log(self.weights), axis=1)
        return float(out[0]) if np.asarray(x).ndim == 1 else out

    def sample(self, n: int, seed) -> tuple:
        """Draw ``n`` observations; returns (data, 1-based component labels)."""
        rng = np.random.default_rng(seed)
        idx = rng.choice(self.n_components, size=n, p=self.weights)
        data = np.empty((n, self.d))
        for k, comp in enumerate(self.components):
            rows = np.where(idx == k)[0]
            if rows.size == 0:
                continue
            if isinstance(comp, SkewNormalComponent):
                data[rows] = comp.sample(rng, rows.size)
            else:
                data[rows] = _gaussian_sample(comp, rng, rows.size)
        return data, idx + 1

    def moments(self):
        """Analytic mean and covariance of the scenario density."""
        means, covs = zip(*(c.moments() if isinstance(c, SkewNormalComponent)
                            else (c.mean, c.covariance) for c in self.components))
        means = np.stack(means)
        covs = np.stack(covs)
        mean = self.weights @ means
        second = np.einsum("k,kij->ij", self.weights,
                           covs + np.einsum("ki,kj->kij", means, means))
        return mean, second - np.outer(mean, mean)


def _build_scenarios() -> dict:
    cross_neg = np.array([[0.68, -0.41], [-0.41, 0.68]])
    skew_scale = np.array([[0.8, -0.4], [-0.4, 0.8]])
    return {
        "M1": ScenarioSpec(
            id="M1",
            components=(
                GaussianComponent(np.zeros(2), np.array([[1.25, 0.75], [0.75, 1.25]])),
            ),
            weights=np.array([1.0]),
        ),
        "M2": ScenarioSpec(
            id="M2",
            components=(
                GaussianComponent(np.array([-0.53, -0.53]), cross_neg),
                GaussianComponent(np.array([0.53, 0.53]), cross_neg),
            ),
            weights=np.array([0.5, 0.5]),
        ),
        "M3": ScenarioSpec(
            id="M3",
            components=(
                GaussianComponent(np.array([-0.85, -0.85]),
                                  np.array([[0.58, -0.35], [-0.35, 0.58]])),
                GaussianComponent(np.array([0.85, 0.85]),
                                  np.array([[0.58, -0.35], [-0.35, 0.58]])),
                GaussianComponent(np.zeros(2), np.array([[0.16, -0.09], [-0.09, 0.16]])),
            ),
            weights=np.array([0.4, 0.4, 0.2]),
        ),
        "M4": ScenarioSpec(
            id="M4",
            components=(
                SkewNormalComponent(np.zeros(2), skew_scale, np.array([3.0, 3.0])),
            ),
            weights=np.array([1.0]),
        ),
        "M5": ScenarioSpec(
            id="M5",
            components=(
                SkewNormalComponent(np.array([1.0, 1.0]), skew_scale, np.array([3.0, 3.0])),
                SkewNormalComponent(np.array([-1.0, -1.0]), skew_scale, np.array([-3.0, -3.0])),
            ),
            weights=np.array([0.5, 0.5]),
        ),
    }


_SCENARIOS = _build_scenarios()


def scenario(scenario_id: str) -> ScenarioSpec:
    """Look up one of the built-in scenario densities by id (M1..M5)."""
    try:
        return _SCENARIOS[scenario_id.upper()]
    except KeyError:
        raise ValueError(
            f"unknown scenario {scenario_id!r}; choose from {', '.join(SCENARIO_IDS)}"
        ) from None


def sample_scenario(spec: ScenarioSpec, n: int, seed) -> tuple:
    """Draw from a scenario density; returns (n x d data, true labels)."""
    return spec.sample(n, seed)


def true_log_density(spec: ScenarioSpec, x):
    """Exact log density of the generating mixture at `x`."""
    return spec.log_density(x)


@dataclass(frozen=True)
class ExperimentPlan:
    """A Monte Carlo study: scenarios x sample sizes x replicates x methods."""

    scenarios: tuple = SCENARIO_IDS
    b: int = 200
    n_values: tuple = (500, 5000)
    methods: tuple = METHODS
    seed: int = 0
    ensemble_size: int = 30
    cv_folds: int = 5

    def __post_init__(self):
        scen = tuple(s.upper() for s in self.scenarios)
        unknown = [s for s in scen if s not in SCENARIO_IDS]
        if unknown:
            raise ValueError(f"unknown scenarios: {unknown}")
        methods = tuple(m.lower() for m in self.methods)
        unknown = [m for m in methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods: {unknown}; choose from {METHODS}")
        if self.b < 1:
            raise ValueError("b must be >= 1")
        if any(n < 50 for n in self.n_values):
            raise ValueError("sample sizes below 50 are not supported")
        object.__setattr__(self, "scenarios", scen)
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint64)[0])


def _run_replicate(plan: ExperimentPlan, scen_idx: int, n_idx: int, rep: int,
                   grid: IseGrid) -> list:
    spec = scenario(plan.scenarios[scen_idx])
    n = plan.n_values[n_idx]
    root = np.random.SeedSequence(plan.seed, spawn_key=(scen_idx, n_idx, rep))
    data_seed, fit_seed, cv_seed = root.spawn(3)
    data, labels = spec.sample(n, data_seed)

    base = {
        "scenario": spec.id,
        "n": n,
        "replicate": rep + 1,
        "seed": plan.seed,
    }
    rows = []
    try:
        pool = fit_grid(data, FitConfig(seed=_seed_int(fit_seed)),
                        ensemble_size=plan.ensemble_size)
    except PipelineError as exc:
        for method in plan.methods:
            rows.append(dict(base, method=method, ise=None, ari=None,
                             k_hat=None, lam=None, error=str(exc)))
        return rows

    best = pool.models[0]
    dm = None
    nu = np.array([m.nu for m in pool.models], dtype=float)

    for method in plan.methods:
        row = dict(base, method=method)
        try:
            if method == "sb":
                part = map_classify(data, best)
                est = best
                lam = None
            elif method == "sb-np":
                part = find_partition(data, best)
                est = best
                lam = None
            else:
                if dm is None:
                    dm = log_density_matrix(data, pool.models)
                if method == "aic":
                    lam = lambda_aic()
                elif method == "bic":
                    lam = lambda_bic(n)
                else:
                    lam, _ = lambda_cv(
                        data, pool,
                        CvConfig(folds=plan.cv_folds, seed=_seed_int(cv_seed)),
                    )
                wf = fit_weights(dm, PenaltySpec(lam=lam, nu=nu))
                est = EnsembleDensity(models=pool.models, alpha=wf.alpha)
                part = find_partition(data, est)
            row["ise"] = ise(est, spec, grid)
            row["ari"] = adjusted_rand_index(labels, part.labels)
            row["k_hat"] = int(np.unique(part.labels).size)
            row["lam"] = lam
        except Exception as exc:  # failed method: missing cell, run continues
            row.update(ise=None, ari=None, k_hat=None, lam=None, error=str(exc))
        rows.append(row)
    return rows


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("ENSDENS_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(plan: ExperimentPlan) -> list:
    """Run the full study; returns one result row per (scenario, n, replicate, method).

    Rows are dictionaries with keys scenario, n, method, replicate, ise,
    ari, k_hat, lam, seed (plus an ``error`` message for missing cells).
    Replicates are independent jobs with pre-derived seeds; setting the
    ENSDENS_THREADS environment variable runs them concurrently with an
    identical, deterministic result order.
    """
    jobs = []
    for si in range(len(plan.scenarios)):
        grid = IseGrid.for_density(scenario(plan.scenarios[si]))
        for ni in range(len(plan.n_values)):
            for rep in range(plan.b):
                jobs.append((si, ni, rep, grid))

    workers = _worker_count()
    if workers == 1:
        chunks = [_run_replicate(plan, *job[:3], job[3]) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_replicate, plan, *job[:3], job[3]) for job in jobs]
            chunks = [f.result() for f in futures]
    return [row for chunk in chunks for row in chunk]
