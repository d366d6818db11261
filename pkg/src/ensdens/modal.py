"""Mode seeking on mixture densities and the induced partitions.

Clusters are the domains of attraction of the density modes: every
observation is used as the start of a fixed-point ascent on the
flattened ensemble mixture, and observations whose ascents end at the
same mode form a cluster.

The ascent alternates component responsibilities with the closed-form
Gaussian location update

    x  <-  (sum_j p_j S_j^-1)^-1  (sum_j p_j S_j^-1 mu_j)

over the component-level mixture. Working on flattened components
(rather than whole models) is what makes the inner maximization exact;
both formulations are ascent fixed-point schemes on the same density.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial import cKDTree

from .mixture import EnsembleDensity, GaussianMixture, log_sum_exp

__all__ = [
    "Mode",
    "Partition",
    "AscentResult",
    "mem_ascend",
    "mem_step",
    "log_density_gradient",
    "find_partition",
    "predict_labels",
]


@dataclass(frozen=True)
class Mode:
    """A local maximum of the mixture density."""

    location: np.ndarray
    log_density: float
    basin_size: int

    def __post_init__(self):
        loc = np.array(self.location, dtype=float)
        loc.flags.writeable = False
        object.__setattr__(self, "location", loc)
        if self.basin_size < 0:
            raise ValueError("basin_size must be nonnegative")


@dataclass(frozen=True)
class Partition:
    """Cluster labels plus the modes (or centers) that define them.

    `labels` take values 1..len(modes), `modes[j-1]` being the mode of
    cluster j. For modal partitions the mode list holds density modes
    sorted by descending log-density; for MAP partitions it holds the
    component means. Basin sizes always add up to len(labels).
    """

    labels: np.ndarray
    modes: tuple
    method_tag: str
    merge_tol: float | None = None
    warnings: tuple = ()

    def __post_init__(self):
        labels = np.array(self.labels, dtype=int)
        labels.flags.writeable = False
        modes = tuple(self.modes)
        if labels.size and (labels.min() < 1 or labels.max() > len(modes)):
            raise ValueError("labels must index the mode list (1-based)")
        if sum(m.basin_size for m in modes) != labels.size:
            raise ValueError("mode basin sizes must add up to the number of observations")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @property
    def n_clusters(self) -> int:
        return len(self.modes)


class AscentResult(NamedTuple):
    x: np.ndarray
    path_length: int
    converged: bool


class _FlatOps:
    """Vectorized responsibilities, updates and gradients for one flattened mixture."""

    def __init__(self, flat: GaussianMixture):
        self.flat = flat
        self.d = flat.d
        self.means = np.stack([c.mean for c in flat.components])
        self.logw = np.log(flat.weights)
        self._chols = [c.chol for c in flat.components]
        self._logdets = np.array([c.log_det for c in flat.components])
        # per-component precision and precision-weighted mean
        eye = np.eye(self.d)
        self.precisions = np.stack(
            [cho_solve((c.chol, True), eye, check_finite=False) for c in flat.components]
        )
        self.precisions = (self.precisions + np.transpose(self.precisions, (0, 2, 1))) / 2
        self.prec_means = np.einsum("kij,kj->ki", self.precisions, self.means)

    def component_log_densities(self, x: np.ndarray) -> np.ndarray:
        out = np.empty((x.shape[0], len(self._chols)))
        c = -0.5 * self.d * np.log(2 * np.pi)
        for k, chol in enumerate(self._chols):
            z = solve_triangular(chol, (x - self.means[k]).T, lower=True, check_finite=False)
            out[:, k] = c - 0.5 * self._logdets[k] - 0.5 * np.einsum("dn,dn->n", z, z)
        return out

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        logp = self.logw + self.component_log_densities(x)
        logp -= logp.max(axis=1, keepdims=True)
        p = np.exp(logp)
        return p / p.sum(axis=1, keepdims=True)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        return log_sum_exp(self.logw + self.component_log_densities(x), axis=1)

    def step(self, x: np.ndarray) -> np.ndarray:
        p = self.responsibilities(x)
        a = np.einsum("nk,kij->nij", p, self.precisions)
        b = p @ self.prec_means
        return np.linalg.solve(a, b[..., None])[..., 0]

    def gradient(self, x: np.ndarray) -> np.ndarray:
        p = self.responsibilities(x)
        a = np.einsum("nk,kij->nij", p, self.precisions)
        b = p @ self.prec_means
        return b - np.einsum("nij,nj->ni", a, x)

    def ascend(self, x0: np.ndarray, rel_tol: float, max_iter: int):
        x = np.array(x0, dtype=float)
        n = x.shape[0]
        active = np.arange(n)
        path_length = np.zeros(n, dtype=int)
        converged = np.zeros(n, dtype=bool)
        for _ in range(max_iter):
            if active.size == 0:
                break
            cur = x[active]
            new = self.step(cur)
            path_length[active] += 1
            delta = np.linalg.norm(new - cur, axis=1)
            done = delta < rel_tol * (1.0 + np.linalg.norm(cur, axis=1))
            x[active] = new
            converged[active[done]] = True
            active = active[~done]
        return x, path_length, converged


def _flatten(density) -> GaussianMixture:
    if isinstance(density, EnsembleDensity):
        return density.flatten()
    if isinstance(density, GaussianMixture):
        return density
    raise TypeError(f"expected EnsembleDensity or GaussianMixture, got {type(density)!r}")


def mem_step(x, flat) -> np.ndarray:
    """One fixed-point update of the mode-seeking iteration."""
    flat = _flatten(flat)
    ops = _FlatOps(flat)
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return ops.step(arr[None, :])[0]
    return ops.step(arr)


def log_density_gradient(x, flat):
    """Analytic gradient of the mixture log-density at `x`."""
    flat = _flatten(flat)
    ops = _FlatOps(flat)
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return ops.gradient(arr[None, :])[0]
    return ops.gradient(arr)


def mem_ascend(x0, flat, rel_tol: float = 1e-10, max_iter: int = 10_000) -> AscentResult:
    """Ascend from `x0` to a local mode of the (flattened) mixture density.

    Stops when the update moves less than ``rel_tol * (1 + ||x||)``;
    returns the current iterate flagged non-converged if `max_iter` is
    exhausted first. The log-density is nondecreasing along the path.
    """
    flat = _flatten(flat)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (flat.d,):
        raise ValueError(f"x0 must have shape ({flat.d},)")
    ops = _FlatOps(flat)
    x, path_length, converged = ops.ascend(x0[None, :], rel_tol, max_iter)
    return AscentResult(x[0], int(path_length[0]), bool(converged[0]))


def _data_scale(data: np.ndarray) -> float:
    sd = np.std(data, axis=0)
    sd = sd[sd > 0]
    if sd.size == 0:
        return 1.0
    return float(np.exp(np.mean(np.log(sd))))


def _union_find_groups(n: int, pairs: np.ndarray) -> np.ndarray:
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    return np.array([find(i) for i in range(n)])


def _chain_merge(points: np.ndarray, tol: float) -> np.ndarray:
    """Single-linkage grouping: group ids for points chained within `tol`."""
    if points.shape[0] == 1:
        return np.zeros(1, dtype=int)
    pairs = cKDTree(points).query_pairs(r=tol, output_type="ndarray")
    roots = _union_find_groups(points.shape[0], pairs)
    _, group = np.unique(roots, return_inverse=True)
    return group


def _perturbation_direction(location: np.ndarray, scale: float) -> np.ndarray:
    # seeded from the (rounded) location itself so the result is independent
    # of observation order
    key = np.round(location / max(scale, 1e-300), 6).tobytes()
    rng = np.random.default_rng(zlib.crc32(key))
    v = rng.standard_normal(location.shape[0])
    return v / np.linalg.norm(v)


def _dedup(points: np.ndarray, tol: float):
    """Collapse numerically identical ascent endpoints before merging."""
    rounded = np.round(points / tol)
    _, first, inverse = np.unique(rounded, axis=0, return_index=True, return_inverse=True)
    return points[first], inverse


def find_partition(data, ens, merge_tol: float | None = None,
                   rel_tol: float = 1e-10, max_iter: int = 10_000) -> Partition:
    """Partition `data` by the modes of the ensemble density.

    Every observation is ascended to a mode; endpoints chained within
    `merge_tol` (single linkage) count as the same mode. Modes are
    sorted by descending log-density and labels renumbered accordingly.

    Parameters
    ----------
    data : (n, d) array_like
    ens : EnsembleDensity or GaussianMixture
    merge_tol : float, optional
        Defaults to 1e-2 times the geometric mean of the per-coordinate
        standard deviations of `data`.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be a 2-d array")
    flat = _flatten(ens)
    if data.shape[1] != flat.d:
        raise ValueError("data dimension does not match the density")
    scale = _data_scale(data)
    if merge_tol is None:
        merge_tol = 1e-2 * scale
    ops = _FlatOps(flat)
    warnings: list[str] = []

    endpoints, _, converged = ops.ascend(data, rel_tol, max_iter)
    if not converged.any():
        raise RuntimeError("no mode-seeking ascent converged; increase max_iter")
    if not converged.all():
        warnings.append(
            f"{int((~converged).sum())} ascent(s) hit max_iter={max_iter}; "
            "assigned to the nearest converged mode"
        )

    reps, inverse = _dedup(endpoints[converged], max(merge_tol * 1e-3, 1e-12))

    # saddle hygiene: re-ascend once from a nudged start when the gradient
    # is not numerically zero
    grad_norm = np.linalg.norm(ops.gradient(reps), axis=1)
    stuck = np.where(grad_norm > 1e-5)[0]
    if stuck.size:
        nudged = np.stack(
            [reps[i] + 1e-4 * scale * _perturbation_direction(reps[i], scale) for i in stuck]
        )
        re_pts, _, re_conv = ops.ascend(nudged, rel_tol, max_iter)
        reps = reps.copy()
        reps[stuck] = re_pts
        still = np.linalg.norm(ops.gradient(re_pts), axis=1) > 1e-5
        if still.any() or not re_conv.all():
            warnings.append(f"{int(still.sum())} mode(s) kept with gradient norm above 1e-5")

    group = _chain_merge(reps, merge_tol)
    n_groups = group.max() + 1
    logdens = ops.log_density(reps)

    # representative of each group: member endpoint with the highest density
    rep_idx = np.full(n_groups, -1, dtype=int)
    for i in np.argsort(-logdens):
        g = group[i]
        if rep_idx[g] < 0:
            rep_idx[g] = i

    group_of_obs = np.full(data.shape[0], -1, dtype=int)
    group_of_obs[converged] = group[inverse]
    if not converged.all():
        mode_pts = reps[rep_idx]
        tree = cKDTree(mode_pts)
        _, nearest = tree.query(endpoints[~converged])
        group_of_obs[~converged] = nearest

    # renumber by descending density of the group representative
    order = np.argsort(-logdens[rep_idx], kind="stable")
    rank_of_group = np.empty(n_groups, dtype=int)
    rank_of_group[order] = np.arange(n_groups)
    labels = rank_of_group[group_of_obs] + 1

    counts = np.bincount(labels - 1, minlength=n_groups)
    modes = tuple(
        Mode(
            location=reps[rep_idx[g]],
            log_density=float(logdens[rep_idx[g]]),
            basin_size=int(counts[rank_of_group[g]]),
        )
        for g in order
    )
    return Partition(
        labels=labels,
        modes=modes,
        method_tag="modal-em",
        merge_tol=float(merge_tol),
        warnings=tuple(warnings),
    )


def predict_labels(new_points, ens, partition: Partition,
                   rel_tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Label new points by the basin their ascent falls into.

    Points whose ascents end within the partition's merge tolerance of a
    known mode get that mode's label; the rest are grouped among
    themselves and receive fresh labels past the existing ones.
    """
    pts = np.atleast_2d(np.asarray(new_points, dtype=float))
    flat = _flatten(ens)
    if pts.shape[1] != flat.d:
        raise ValueError("point dimension does not match the density")
    if partition.merge_tol is None:
        raise ValueError("partition carries no merge tolerance")
    tol = partition.merge_tol
    ops = _FlatOps(flat)
    endpoints, _, _ = ops.ascend(pts, rel_tol, max_iter)

    mode_locs = np.stack([m.location for m in partition.modes])
    dist, nearest = cKDTree(mode_locs).query(endpoints)
    labels = np.where(dist <= tol, nearest + 1, 0)

    unseen = np.where(labels == 0)[0]
    if unseen.size:
        reps, inverse = _dedup(endpoints[unseen], max(tol * 1e-3, 1e-12))
        group = _chain_merge(reps, tol)
        logdens = ops.log_density(reps)
        best = {}
        for i in range(reps.shape[0]):
            g = group[i]
            if g not in best or logdens[i] > logdens[best[g]]:
                best[g] = i
        order = sorted(best, key=lambda g: -logdens[best[g]])
        fresh = {g: len(partition.modes) + r + 1 for r, g in enumerate(order)}
        labels[unseen] = [fresh[g] for g in group[inverse]]
    return labels
