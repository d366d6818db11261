import numpy as np
import pytest
from scipy.optimize import minimize

from ensdens.mixture import EnsembleDensity, GaussianComponent, GaussianMixture
from ensdens.modal import (
    AscentResult,
    Mode,
    Partition,
    find_partition,
    log_density_gradient,
    mem_ascend,
    mem_step,
    predict_labels,
)

from helpers import M1_COV, m2_mixture


def oracle_modes(mix, lo=-3.0, hi=3.0, nodes=200):
    """Local maxima by dense-grid scan polished with derivative-free descent.

    Grid cells that tie with a neighbor (symmetric densities put modes on
    cell boundaries) are all polished; saddles are rejected afterwards by
    probing eight surrounding directions.
    """
    xs = np.linspace(lo, hi, nodes)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    vals = mix.log_density(pts).reshape(nodes, nodes)
    found = []
    for i in range(1, nodes - 1):
        for j in range(1, nodes - 1):
            patch = vals[i - 1:i + 2, j - 1:j + 2]
            if vals[i, j] == patch.max():
                res = minimize(
                    lambda p: -mix.log_density(p),
                    np.array([xs[i], xs[j]]),
                    method="Nelder-Mead",
                    options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 2000},
                )
                found.append(res.x)
    probes = np.array(
        [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]]
    ) / np.sqrt([1, 1, 1, 1, 2, 2, 2, 2])[:, None]
    out = []
    for f in found:
        if any(np.linalg.norm(f - o) < 1e-6 for o in out):
            continue
        center = mix.log_density(f)
        if all(mix.log_density(f + 1e-4 * p) < center for p in probes):
            out.append(f)
    return np.array(sorted(out, key=lambda p: (p[0], p[1])))


def oracle_flow(mix, pts):
    """Follow the gradient flow with small normalized steps (basin-faithful).

    Finite-difference gradients, fixed arc-length steps, batched over all
    start points; ends within ~1e-3 of the attracting mode.
    """
    x = np.array(pts, dtype=float)
    eps = 1e-6
    eye = np.eye(x.shape[1])
    for step, iters in ((0.02, 1500), (0.002, 400), (2e-4, 400)):
        for _ in range(iters):
            g = np.stack(
                [
                    (mix.log_density(x + eps * e) - mix.log_density(x - eps * e)) / (2 * eps)
                    for e in eye
                ],
                axis=1,
            )
            ng = np.linalg.norm(g, axis=1)
            move = ng >= 1e-9
            if not move.any():
                break
            x[move] += step * g[move] / ng[move, None]
    return x


def same_partition(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    table = {}
    for x, y in zip(a, b):
        if x in table and table[x] != y:
            return False
        table[x] = y
    return len(set(table.values())) == len(table)


def three_blob_mixture():
    comps = (
        GaussianComponent(np.array([0.0, 0.0]), np.eye(2)),
        GaussianComponent(np.array([20.0, 0.0]), np.eye(2)),
        GaussianComponent(np.array([0.0, 20.0]), np.eye(2)),
    )
    return GaussianMixture(components=comps, weights=np.full(3, 1 / 3))


@pytest.fixture(scope="module")
def m2_oracle_modes():
    return oracle_modes(m2_mixture())


class TestMemAscend:
    def test_single_component_one_step(self):
        comp = GaussianComponent(np.array([1.5, -2.0]), M1_COV)
        mix = GaussianMixture(components=(comp,), weights=np.array([1.0]))
        first = mem_step(np.array([10.0, 10.0]), mix)
        np.testing.assert_allclose(first, comp.mean, atol=1e-12)
        res = mem_ascend(np.array([10.0, 10.0]), mix)
        assert res.converged
        np.testing.assert_allclose(res.x, comp.mean, atol=1e-10)
        assert res.path_length <= 2

    def test_fixed_point_at_separated_mean(self):
        comps = (
            GaussianComponent(np.array([-15.0, 0.0]), np.eye(2)),
            GaussianComponent(np.array([15.0, 0.0]), np.eye(2)),
        )
        mix = GaussianMixture(components=comps, weights=np.array([0.5, 0.5]))
        res = mem_ascend(np.array([-15.0, 0.0]), mix)
        assert res.converged
        np.testing.assert_allclose(res.x, [-15.0, 0.0], atol=1e-10)

    def test_m2_grid_reaches_oracle_modes(self, m2_oracle_modes):
        mix = m2_mixture()
        assert len(m2_oracle_modes) == 2
        xs = np.linspace(-3, 3, 20)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        starts = np.column_stack([gx.ravel() + 0.011, gy.ravel()])  # off the symmetry line
        for x0 in starts:
            res = mem_ascend(x0, mix)
            assert res.converged
            dists = np.linalg.norm(m2_oracle_modes - res.x, axis=1)
            assert dists.min() <= 1e-3

    def test_ascent_monotone_log_density(self):
        rng = np.random.default_rng(0)
        mix = m2_mixture()
        for _ in range(25):
            x = rng.uniform(-3, 3, size=2)
            prev = mix.log_density(x)
            for _ in range(200):
                nxt = mem_step(x, mix)
                cur = mix.log_density(nxt)
                assert cur >= prev - 1e-10
                if np.linalg.norm(nxt - x) < 1e-12 * (1 + np.linalg.norm(x)):
                    break
                x, prev = nxt, cur

    def test_max_iter_flags_nonconverged(self):
        mix = m2_mixture()
        res = mem_ascend(np.array([3.0, -3.0]), mix, max_iter=1)
        assert isinstance(res, AscentResult)
        assert not res.converged
        assert res.path_length == 1

    def test_dimension_check(self):
        mix = m2_mixture()
        with pytest.raises(ValueError):
            mem_ascend(np.zeros(3), mix)


class TestGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        mix = m2_mixture()
        eps = 1e-6
        for _ in range(10):
            x = rng.uniform(-2, 2, size=2)
            grad = log_density_gradient(x, mix)
            for i in range(2):
                e = np.zeros(2)
                e[i] = eps
                fd = (mix.log_density(x + e) - mix.log_density(x - e)) / (2 * eps)
                assert grad[i] == pytest.approx(fd, abs=1e-6)

    def test_zero_at_component_mean_of_single_gaussian(self):
        comp = GaussianComponent(np.array([0.3, 0.7]), M1_COV)
        mix = GaussianMixture(components=(comp,), weights=np.array([1.0]))
        np.testing.assert_allclose(log_density_gradient(comp.mean, mix), 0.0, atol=1e-12)


class TestFindPartition:
    def test_unimodal_ensemble(self):
        rng = np.random.default_rng(2)
        comp = GaussianComponent(np.zeros(2), M1_COV)
        mix = GaussianMixture(components=(comp,), weights=np.array([1.0]))
        ens = EnsembleDensity(models=(mix,), alpha=np.array([1.0]))
        data = rng.multivariate_normal(np.zeros(2), M1_COV, size=200)
        part = find_partition(data, ens)
        assert part.n_clusters == 1
        assert (part.labels == 1).all()
        assert part.modes[0].basin_size == 200

    def test_three_separated_blobs(self):
        rng = np.random.default_rng(3)
        mix = three_blob_mixture()
        centers = np.stack([c.mean for c in mix.components])
        idx = rng.choice(3, size=300)
        data = centers[idx] + rng.standard_normal((300, 2))
        part = find_partition(data, mix)
        assert part.n_clusters == 3
        # MAP labels coincide with basins at >= 10 sd separation
        from ensdens.fit import map_classify

        map_part = map_classify(data, mix)
        assert same_partition(part.labels, map_part.labels)
        assert same_partition(part.labels, idx + 1)

    def test_modes_are_fixed_points_and_sorted(self):
        rng = np.random.default_rng(4)
        mix = m2_mixture()
        data = np.vstack(
            [
                rng.multivariate_normal(m.mean, m.covariance, size=150)
                for m in mix.components
            ]
        )
        part = find_partition(data, mix)
        assert part.n_clusters == 2
        dens = [m.log_density for m in part.modes]
        assert dens == sorted(dens, reverse=True)
        for m in part.modes:
            assert np.linalg.norm(mem_step(m.location, mix) - m.location) <= 1e-8
            assert np.linalg.norm(log_density_gradient(m.location, mix)) <= 1e-5

    def test_label_stability_under_permutation(self):
        rng = np.random.default_rng(5)
        mix = m2_mixture()
        data = rng.multivariate_normal(np.zeros(2), np.eye(2), size=150)
        part = find_partition(data, mix)
        perm = rng.permutation(len(data))
        part_perm = find_partition(data[perm], mix)
        assert same_partition(part.labels[perm], part_perm.labels)

    def test_basin_sizes_sum_to_n(self):
        rng = np.random.default_rng(6)
        mix = three_blob_mixture()
        data = rng.normal(scale=8, size=(120, 2)) + 5
        part = find_partition(data, mix)
        assert sum(m.basin_size for m in part.modes) == 120

    def test_merge_tol_override(self):
        rng = np.random.default_rng(7)
        mix = m2_mixture()
        data = rng.multivariate_normal(np.zeros(2), np.eye(2), size=100)
        # a huge tolerance merges everything into one cluster
        part = find_partition(data, mix, merge_tol=100.0)
        assert part.n_clusters == 1
        assert part.merge_tol == 100.0


class TestPredictLabels:
    def test_training_point_keeps_label(self):
        rng = np.random.default_rng(8)
        mix = m2_mixture()
        data = np.vstack(
            [
                rng.multivariate_normal(m.mean, m.covariance, size=100)
                for m in mix.components
            ]
        )
        part = find_partition(data, mix)
        again = predict_labels(data[:25], mix, part)
        np.testing.assert_array_equal(again, part.labels[:25])

    def test_point_at_mode_location(self):
        rng = np.random.default_rng(9)
        mix = m2_mixture()
        data = rng.multivariate_normal(np.zeros(2), np.eye(2), size=200)
        part = find_partition(data, mix)
        locs = np.stack([m.location for m in part.modes])
        labels = predict_labels(locs, mix, part)
        np.testing.assert_array_equal(labels, np.arange(1, part.n_clusters + 1))

    def test_m2_grid_partitions_into_two_basins(self, m2_oracle_modes):
        rng = np.random.default_rng(10)
        mix = m2_mixture()
        data = np.vstack(
            [
                rng.multivariate_normal(m.mean, m.covariance, size=100)
                for m in mix.components
            ]
        )
        part = find_partition(data, mix)
        xs = np.linspace(-3, 3, 11)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        grid = np.column_stack([gx.ravel() + 0.013, gy.ravel()])
        labels = predict_labels(grid, mix, part)
        assert set(labels) <= {1, 2}
        # oracle: nearest oracle mode after an independent finite-difference flow
        ends = oracle_flow(mix, grid)
        oracle = np.array(
            [np.argmin(np.linalg.norm(m2_oracle_modes - e, axis=1)) for e in ends]
        )
        assert same_partition(labels, oracle)

    def test_fresh_label_for_unseen_mode(self):
        rng = np.random.default_rng(11)
        mix = three_blob_mixture()
        # partition fitted on data from only two of the three blobs
        centers = np.stack([c.mean for c in mix.components])
        idx = rng.choice(2, size=200)
        data = centers[idx] + rng.standard_normal((200, 2))
        part = find_partition(data, mix)
        assert part.n_clusters == 2
        labels = predict_labels(np.array([[0.0, 20.0], [0.1, 19.5]]), mix, part)
        assert (labels == part.n_clusters + 1).all()


class TestPartitionType:
    def test_label_range_validation(self):
        mode = Mode(location=np.zeros(2), log_density=-1.0, basin_size=2)
        with pytest.raises(ValueError):
            Partition(labels=np.array([1, 2]), modes=(mode,), method_tag="x")

    def test_basin_total_validation(self):
        mode = Mode(location=np.zeros(2), log_density=-1.0, basin_size=3)
        with pytest.raises(ValueError):
            Partition(labels=np.array([1, 1]), modes=(mode,), method_tag="x")
