import numpy as np
import pytest

from conftest import random_unit
from sixdma.channel import PathSet, sci_matrix
from sixdma.errors import InvalidInputError
from sixdma.geometry import fibonacci_directions, surface_normal
from sixdma.sci_estimation import (
    CovarianceDictionary,
    DoaGrid,
    TrainingBudget,
    build_dictionary,
    cone_cover_count,
    estimate_mpc,
    make_training_plan,
    min_training_pairs,
    non_negative_omp,
    refine_off_grid,
    simulate_substage_measurements,
    stack_observation,
    substage_order,
    whitening_weights,
)

GRID = DoaGrid.fibonacci(2000)


@pytest.fixture(scope="module")
def plan(template):
    return make_training_plan(16, 8, 100, 0.5, template)


def planted(rng, L, grid=GRID):
    idx = rng.choice(grid.size, L, replace=False)
    return idx, PathSet(grid.directions[idx], rng.uniform(0.5, 2.0, L))


class TestPlan:
    def test_substages_and_normals(self, plan, template):
        assert plan.n_substages == 2 and len(plan.substage(1)) == 8
        dirs = fibonacci_directions(16)[substage_order(16, 8)]
        for pose, d in zip(plan.poses, dirs):
            np.testing.assert_allclose(pose.position, 0.5 * d, atol=1e-12)
            np.testing.assert_allclose(surface_normal(pose.rotation, template), d, atol=1e-12)

    def test_grouping(self):
        assert substage_order(6, 3, "contiguous") == [0, 1, 2, 3, 4, 5]
        assert substage_order(6, 3, "interleaved") == [0, 2, 4, 1, 3, 5]
        assert sorted(substage_order(32, 8)) == list(range(32))
        with pytest.raises(InvalidInputError):
            substage_order(6, 3, "random")

    def test_invalid(self, template):
        with pytest.raises(InvalidInputError):
            make_training_plan(10, 4, 100, 0.5, template)
        with pytest.raises(InvalidInputError):
            make_training_plan(8, 4, 0, 0.5, template)


class TestMeasurements:
    def test_exact_mode(self, plan, hardware):
        paths = PathSet(random_unit(np.random.default_rng(0), 2), [1.0, 0.5])
        covs = simulate_substage_measurements(plan, [paths], hardware, exact=True)[0]
        for s, c in enumerate(covs):
            np.testing.assert_allclose(c, sci_matrix(hardware.state(plan.substage(s)), paths))

    def test_sample_covariance_converges(self, template, hardware):
        plan = make_training_plan(4, 4, 100_000, 0.5, template)
        paths = PathSet(random_unit(np.random.default_rng(1), 2), [1.0, 0.5])
        c = simulate_substage_measurements(plan, [paths], hardware, lambda k, s: np.random.default_rng(5))[0][0]
        exact = sci_matrix(hardware.state(plan.substage(0)), paths)
        assert np.linalg.norm(c - exact) / np.linalg.norm(exact) < 0.05

    def test_rank_bounded_by_snapshots(self, plan, hardware):
        paths = PathSet(random_unit(np.random.default_rng(2), 3), [1.0, 1.0, 1.0])
        short = make_training_plan(16, 8, 2, 0.5, hardware.template)
        for c in simulate_substage_measurements(short, [paths], hardware, lambda k, s: np.random.default_rng(s))[0]:
            assert np.linalg.matrix_rank(c, tol=1e-9 * np.abs(c).max()) <= 2


class TestDictionary:
    def test_columns_match_covariances(self, plan, hardware):
        grid = DoaGrid(fibonacci_directions(50))
        D = build_dictionary(plan, grid, hardware)
        n = 8 * hardware.template.n_antennas
        assert D.shape == (n * n * 2, 50)
        for j in (0, 17, 49):
            covs = [sci_matrix(hardware.state(plan.substage(s)), PathSet(grid.directions[j:j + 1], [1.0]))
                    for s in range(2)]
            np.testing.assert_allclose(D[:, j], stack_observation(covs), atol=1e-12)
            block = D[:n * n, j].reshape(n, n, order="F")
            assert np.linalg.matrix_rank(block, tol=1e-9 * np.abs(block).max()) == 1
            np.testing.assert_allclose(block, block.conj().T, atol=1e-12)
        implicit = CovarianceDictionary.build(plan, grid, hardware)
        np.testing.assert_allclose(implicit.column_norms, np.linalg.norm(D, axis=0))
        y = np.random.default_rng(0).standard_normal(D.shape[0]).astype(complex)
        np.testing.assert_allclose(implicit.correlate(y), D.conj().T @ y, atol=1e-9)

    def test_dense_refuses_large(self, plan, hardware):
        with pytest.raises(MemoryError):
            build_dictionary(plan, GRID, hardware, max_entries=1000)


class TestOmp:
    D = np.random.default_rng(3).standard_normal((40, 12)) + 1j * np.random.default_rng(4).standard_normal((40, 12))

    def test_single_atom(self):
        res = non_negative_omp(3 * self.D[:, 5], self.D, sparsity=1)
        assert res.support == [5]
        assert res.coefficients[5] == pytest.approx(3.0)

    def test_two_atoms(self):
        res = non_negative_omp(2 * self.D[:, 1] + self.D[:, 7], self.D, sparsity=2)
        assert sorted(res.support) == [1, 7]
        np.testing.assert_allclose(res.coefficients[[1, 7]], [2.0, 1.0], atol=1e-10)

    def test_orthogonal_observation_selects_nothing(self):
        D = np.eye(4, dtype=complex)
        res = non_negative_omp(np.array([-1.0, 0, 0, 0]), D, sparsity=1)
        assert res.support == [] and not np.any(res.coefficients)

    def test_zero_observation(self):
        res = non_negative_omp(np.zeros(40), self.D)
        assert res.support == [] and res.residual_norms == [0.0]

    def test_sparsity_bounds(self):
        with pytest.raises(InvalidInputError):
            non_negative_omp(self.D[:, 0], self.D, sparsity=13)
        with pytest.raises(InvalidInputError):
            non_negative_omp(self.D[:5, 0], self.D)

    def test_residual_monotone(self):
        y = self.D @ np.random.default_rng(5).uniform(0, 1, 12)
        res = non_negative_omp(y, self.D, sparsity=6, refine=0)
        assert np.all(np.diff(res.residual_norms) <= 1e-12)
        assert np.all(res.coefficients >= 0)

    def test_textbook_mode(self):
        res = non_negative_omp(2 * self.D[:, 1] + self.D[:, 7], self.D, sparsity=2, screen=1, beam=1, refine=0)
        assert len(res.support) == 2


class TestEstimation:
    def test_planted_on_grid(self, plan, hardware):
        rng = np.random.default_rng(6)
        D = CovarianceDictionary.build(plan, GRID, hardware)
        for _ in range(5):
            idx, paths = planted(rng, 3)
            covs = simulate_substage_measurements(plan, [paths], hardware, exact=True)[0]
            est = estimate_mpc(covs, plan, GRID, hardware, 3, dictionary=D)
            order = [int(np.argmin(np.linalg.norm(GRID.directions[idx] - d, axis=1))) for d in est.doas]
            assert sorted(order) == [0, 1, 2]
            np.testing.assert_allclose(est.powers, paths.powers[order], rtol=1e-6)

    def test_off_grid_half_cell(self, plan, hardware):
        cell = np.sqrt(4 * np.pi / GRID.size)
        d = GRID.directions[123] + 0.5 * cell * np.cross(GRID.directions[123], [0, 0, 1]) / np.linalg.norm(
            np.cross(GRID.directions[123], [0, 0, 1]))
        d /= np.linalg.norm(d)
        paths = PathSet(d[None], [1.0])
        covs = simulate_substage_measurements(plan, [paths], hardware, exact=True)[0]
        coarse = estimate_mpc(covs, plan, GRID, hardware, 1, off_grid=False)
        fine = estimate_mpc(covs, plan, GRID, hardware, 1)
        assert np.linalg.norm(fine.doas[0] - d) < 1e-4 < np.linalg.norm(coarse.doas[0] - d)
        assert fine.powers[0] == pytest.approx(1.0, rel=1e-4)

    def test_refine_keeps_exact_fit(self, plan, hardware):
        idx, paths = planted(np.random.default_rng(8), 2)
        y = stack_observation(simulate_substage_measurements(plan, [paths], hardware, exact=True)[0])
        assert refine_off_grid(y, paths, plan, hardware) is paths

    def test_whitening_weights(self):
        w = whitening_weights([np.diag([4.0, 1.0]), np.diag([0.0, 16.0])])
        np.testing.assert_allclose(w[0], [0.5, 1.0])
        np.testing.assert_allclose(w[1], [1 / np.sqrt(16e-6), 0.25])
        assert all(np.all(v == 1) for v in whitening_weights([np.zeros((2, 2))]))

    def test_argument_checks(self, plan, hardware):
        with pytest.raises(InvalidInputError):
            estimate_mpc([np.eye(32)], plan, GRID, hardware, 1)
        with pytest.raises(InvalidInputError):
            estimate_mpc([np.eye(32)] * 2, plan, GRID, hardware, 0)


class TestTrainingPairs:
    def test_isotropic(self):
        assert cone_cover_count(np.pi) == 2
        assert min_training_pairs(TrainingBudget(np.pi)) == 1

    def test_three_gpp_beamwidth(self):
        assert cone_cover_count(np.deg2rad(65)) == 13
        assert min_training_pairs(TrainingBudget(np.deg2rad(65), 3.0, 1, 4)) == 10

    def test_monotone(self):
        widths = np.linspace(0.1, np.pi, 40)
        counts = [cone_cover_count(t) for t in widths]
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        base = min_training_pairs(TrainingBudget(1.0, 1.0, 2, 4))
        assert min_training_pairs(TrainingBudget(1.0, 1.0, 3, 4)) >= base
        assert min_training_pairs(TrainingBudget(1.0, 1.0, 2, 8)) <= base

    @pytest.mark.parametrize("kw", [{"beamwidth": 0.0}, {"beamwidth": 4.0}, {"beamwidth": 1.0, "omp_factor": 0.5},
                                    {"beamwidth": 1.0, "max_paths": 0}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            TrainingBudget(**kw)
