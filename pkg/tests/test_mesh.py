import numpy as np
import pytest

from netform.errors import DomainError, NonFiniteField
from netform.mesh import (
    Grid,
    ScalarField,
    TruncationBounds,
    VectorField,
    central_difference_matrix,
    dirichlet_energy,
    divergence,
    gradient,
    inner,
    inner_vector,
    integrate,
    laplacian_matrix,
    lq_norm,
    scatter_interior,
    sup_norm,
    truncate,
    weak_lq_norm,
)


def _vanishing(grid, rng):
    values = rng.standard_normal(grid.shape)
    values[grid.boundary_mask()] = 0.0
    return values


class TestGrid:
    def test_rejects_bad_dimension(self):
        with pytest.raises(DomainError):
            Grid.uniform(3, 9)

    def test_rejects_too_few_nodes(self):
        with pytest.raises(DomainError):
            Grid(dim=1, n=2, extent=1.0)

    def test_rejects_non_positive_extent(self):
        with pytest.raises(DomainError):
            Grid(dim=2, n=(9, 9), extent=(1.0, 0.0))

    def test_spacing_and_sizes(self):
        grid = Grid(dim=2, n=(5, 9), extent=(1.0, 2.0))
        assert grid.h == (0.25, 0.25)
        assert grid.size == 45
        assert grid.interior_size == 3 * 7
        assert grid.shape == (5, 9)

    def test_cell_volumes_sum_to_measure(self, grid2d):
        assert grid2d.cell_volumes().sum() == pytest.approx(grid2d.measure, rel=1e-14)

    def test_boundary_mask_counts(self, grid2d):
        assert grid2d.boundary_mask().sum() == grid2d.size - grid2d.interior_size

    def test_interior_index_numbering(self, grid2d):
        index = grid2d.interior_index()
        assert np.all(index[grid2d.boundary_mask()] == -1)
        assert sorted(index[grid2d.interior_mask()]) == list(range(grid2d.interior_size))

    def test_ball_mask_includes_nodes_on_the_sphere(self):
        grid = Grid.uniform(1, 65)
        mask = grid.ball_mask((0.5,), 0.125)
        x = grid.coordinates()[0][mask]
        assert x.min() == pytest.approx(0.375)
        assert x.max() == pytest.approx(0.625)

    def test_contains(self, grid2d):
        assert grid2d.contains((0.0, 1.0))
        assert not grid2d.contains((1.1, 0.5))


class TestFields:
    def test_non_finite_values_rejected(self, grid1d):
        values = np.zeros(grid1d.shape)
        values[3] = np.nan
        with pytest.raises(NonFiniteField):
            ScalarField(grid1d, values)

    def test_blown_up_field_may_hold_non_finite_values(self, grid1d):
        values = np.full(grid1d.shape, np.inf)
        f = ScalarField(grid1d, values, blown_up=True)
        assert not f.is_finite()

    def test_values_are_read_only(self, grid1d):
        f = ScalarField.zeros(grid1d)
        with pytest.raises(ValueError):
            f.values[0] = 1.0

    def test_wrong_size_rejected(self, grid1d):
        with pytest.raises(DomainError):
            ScalarField(grid1d, np.zeros(10))

    def test_vector_component_count(self, grid2d):
        with pytest.raises(DomainError):
            VectorField(grid2d, (ScalarField.zeros(grid2d),))

    def test_vector_algebra(self, grid2d):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((2,) + grid2d.shape)
        b = rng.standard_normal((2,) + grid2d.shape)
        u, v = VectorField.from_array(grid2d, a), VectorField.from_array(grid2d, b)
        np.testing.assert_allclose(u.dot(v).values, np.sum(a * b, axis=0))
        np.testing.assert_allclose(u.magnitude_squared().values, np.sum(a ** 2, axis=0))
        np.testing.assert_allclose((u - v).array(), a - b)


class TestOperators:
    def test_gradient_is_exact_on_quadratics(self, grid2d):
        f = ScalarField.from_function(grid2d, lambda x, y: x ** 2 + 3 * x * y - y)
        g = gradient(f)
        x, y = grid2d.mesh()
        np.testing.assert_allclose(g.components[0].values, 2 * x + 3 * y, atol=1e-12)
        np.testing.assert_allclose(g.components[1].values, 3 * x - 1, atol=1e-12)

    def test_divergence_is_minus_adjoint_of_gradient(self, grid2d):
        rng = np.random.default_rng(2)
        v = VectorField.from_array(grid2d, np.stack([_vanishing(grid2d, rng) for _ in range(2)]))
        f = ScalarField(grid2d, _vanishing(grid2d, rng))
        lhs = inner(divergence(v), f)
        rhs = -inner_vector(v, gradient(f))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    def test_dirichlet_energy_matches_laplacian_form(self, grid2d):
        rng = np.random.default_rng(3)
        f = ScalarField(grid2d, _vanishing(grid2d, rng))
        lap_f = scatter_interior(grid2d, laplacian_matrix(grid2d) @ f.interior())
        assert dirichlet_energy(f) == pytest.approx(integrate(lap_f * f.values, grid2d), rel=1e-12)

    def test_dirichlet_energy_converges(self):
        # int_0^1 (pi cos(pi x))^2 dx = pi^2 / 2
        grid = Grid.uniform(1, 257)
        f = ScalarField.from_function(grid, lambda x: np.sin(np.pi * x))
        assert dirichlet_energy(f) == pytest.approx(np.pi ** 2 / 2, rel=1e-4)

    def test_divergence_of_radial_field(self, grid2d):
        # v = grad (x^2 + y^2) / 2
        v = VectorField.from_array(grid2d, np.stack(grid2d.mesh()))
        np.testing.assert_allclose(divergence(v).values, 2.0, atol=1e-12)

    def test_divergence_of_gradient_is_second_order(self):
        errors = []
        for n in (17, 33, 65):
            grid = Grid.uniform(2, n)
            f = ScalarField.from_function(grid, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
            exact = -2.0 * np.pi ** 2 * f.values
            # one-sided boundary derivatives spoil the first ring
            err = np.abs(divergence(gradient(f)).values - exact)[2:-2, 2:-2]
            errors.append(err.max())
        orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert orders.min() >= 1.8

    def test_laplacian_is_symmetric_positive_definite(self, grid2d):
        dense = laplacian_matrix(grid2d).toarray()
        np.testing.assert_allclose(dense, dense.T)
        assert np.linalg.eigvalsh(dense).min() > 0

    def test_central_difference_matches_gradient_inside(self, grid2d):
        f = ScalarField.from_function(grid2d, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        for axis in range(2):
            d = central_difference_matrix(grid2d, axis) @ f.interior()
            np.testing.assert_allclose(d, gradient(f).components[axis].interior(), atol=1e-12)

    def test_truncate(self, grid1d):
        f = ScalarField.from_function(grid1d, lambda x: 4 * x - 2)
        t = truncate(f, TruncationBounds(-1.0, 1.0))
        assert t.values.min() == -1.0 and t.values.max() == 1.0
        with pytest.raises(DomainError):
            TruncationBounds(1.0, 1.0)

    def test_truncate_is_idempotent_and_monotone(self, grid2d):
        rng = np.random.default_rng(5)
        for _ in range(200):
            lo = rng.uniform(-2.0, 1.0)
            bounds = TruncationBounds(lo, lo + rng.uniform(0.1, 3.0))
            f = ScalarField(grid2d, 2.0 * rng.standard_normal(grid2d.shape))
            g = ScalarField(grid2d, f.values + rng.exponential(1.0, grid2d.shape))
            tf = truncate(f, bounds)
            np.testing.assert_array_equal(truncate(tf, bounds).values, tf.values)
            assert np.all(tf.values <= truncate(g, bounds).values)


class TestNorms:
    def test_integrate_is_exact_for_affine(self, grid2d):
        f = ScalarField.from_function(grid2d, lambda x, y: 2 * x + y + 1)
        assert integrate(f.values, grid2d) == pytest.approx(2.5, rel=1e-14)

    def test_lq_norm_of_constant(self, grid1d):
        assert lq_norm(ScalarField.constant(grid1d, -3.0), 2) == pytest.approx(3.0)
        assert sup_norm(ScalarField.constant(grid1d, -3.0)) == 3.0

    def test_lq_norm_rejects_small_exponent(self, grid1d):
        with pytest.raises(DomainError):
            lq_norm(ScalarField.zeros(grid1d), 0.5)

    def test_weak_norm_of_constant(self, grid2d):
        assert weak_lq_norm(ScalarField.constant(grid2d, 2.0), 3) == pytest.approx(2.0)

    def test_weak_norm_of_zero(self, grid2d):
        assert weak_lq_norm(ScalarField.zeros(grid2d), 2) == 0.0

    def test_lq_norm_of_identity(self, grid1d):
        f = ScalarField.from_function(grid1d, lambda x: x)
        assert lq_norm(f, 2) == pytest.approx(1.0 / np.sqrt(3.0), rel=1e-3)

    @pytest.mark.parametrize("q", [1.0, 1.5, 3.0])
    def test_weak_norm_of_indicator(self, grid1d, q):
        x = grid1d.coordinates()[0]
        indicator = ScalarField(grid1d, (x <= 0.25).astype(np.float64))
        measure = integrate(indicator.values, grid1d)
        assert measure == pytest.approx(16.5 / 64)
        assert weak_lq_norm(indicator, q) == pytest.approx(measure ** (1.0 / q), rel=1e-14)

    def test_weak_norm_bounds_on_random_fields(self):
        grid = Grid.uniform(2, 9)
        rng = np.random.default_rng(6)
        for _ in range(1000):
            q = rng.uniform(1.0, 4.0)
            eps = rng.uniform(0.01, 0.99) * q
            f = ScalarField(grid, rng.standard_normal(grid.shape) * rng.exponential(1.0, grid.shape) ** 2)
            weak = weak_lq_norm(f, q)
            assert weak <= lq_norm(f, q) * (1 + 1e-12)
            # integral of |f|^(q - eps) against the weak quasi-norm
            lower = integrate(np.abs(f.values) ** (q - eps), grid)
            bound = (q / eps) * grid.measure ** (eps / q) * weak ** (q - eps)
            assert lower <= bound * (1 + 1e-9)
