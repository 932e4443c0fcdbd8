import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from agequil.discretize import SpatialMesh
from agequil.evolution import (
    AgeGrid,
    DensityField,
    EvolutionError,
    apply_K0,
    build_evolution,
    propagate,
)
from agequil.expr import Num, parse_expr
from agequil.model import ModelSpec

from oracles import decay_rows, k0_const_rows, logistic_rows


def decay_model(mu: str = "1") -> ModelSpec:
    return ModelSpec(
        a_max=1.0,
        D=Num(1.0), g=Num(0.0), h=Num(0.0), mu=parse_expr(mu), b=Num(1.0),
        pure_decay=True,
    )


class TestAgeGrid:
    def test_basic(self):
        grid = AgeGrid(na=4, a_max=2.0)
        assert grid.da == 0.5
        np.testing.assert_allclose(grid.ages, [0.0, 0.5, 1.0, 1.5, 2.0])
        np.testing.assert_allclose(grid.weights, [0.25, 0.5, 0.5, 0.5, 0.25])
        assert grid.weights.sum() == pytest.approx(grid.a_max)

    def test_rejects(self):
        with pytest.raises(EvolutionError):
            AgeGrid(na=1, a_max=1.0)
        with pytest.raises(EvolutionError):
            AgeGrid(na=4, a_max=0.0)


class TestDensityField:
    def test_shape_check_and_views(self):
        grid = AgeGrid(na=3, a_max=1.0)
        field = DensityField(np.arange(12.0).reshape(4, 3), grid)
        assert field.nx == 3
        np.testing.assert_array_equal(field.birth, [0.0, 1.0, 2.0])
        with pytest.raises(EvolutionError):
            DensityField(np.zeros((3, 3)), grid)

    def test_norm_is_age_integral_of_spatial_max(self):
        grid = AgeGrid(na=2, a_max=1.0)
        values = np.array([[1.0, -2.0], [0.5, 0.25], [0.0, 0.0]])
        field = DensityField(values, grid)
        assert field.norm() == pytest.approx(0.25 * 2.0 + 0.5 * 0.5)

    def test_arithmetic(self):
        grid = AgeGrid(na=2, a_max=1.0)
        f = DensityField(np.ones((3, 2)), grid)
        g = DensityField(np.full((3, 2), 2.0), grid)
        np.testing.assert_array_equal((f + g).values, 3.0)
        np.testing.assert_array_equal((g - f).values, 1.0)
        np.testing.assert_array_equal((2.5 * f).values, 2.5)
        h = f.copy()
        h.values[0, 0] = 9.0
        assert f.values[0, 0] == 1.0

    def test_zeros_certificate(self):
        field = DensityField.zeros(AgeGrid(na=2, a_max=1.0), 4)
        assert field.nonnegative and field.values.shape == (3, 4)


class TestPropagate:
    def test_unit_mortality_closed_form(self):
        mesh = SpatialMesh(nx=4)
        grid = AgeGrid(na=50, a_max=1.0)
        ev = build_evolution(decay_model(), mesh, grid)
        assert ev.from_zero
        B = np.array([1.0, 2.0, 0.5, 0.0])
        field = propagate(ev, B)
        expected = decay_rows(grid.na, grid.a_max)[:, None] * B[None, :]
        np.testing.assert_allclose(field.values, expected, rtol=1e-13, atol=0)
        assert field.nonnegative

    def test_age_dependent_mortality(self):
        # mu = a integrates exactly like the scalar stepped recursion
        mesh = SpatialMesh(nx=2)
        grid = AgeGrid(na=30, a_max=1.0)
        ev = build_evolution(decay_model(mu="a"), mesh, grid)
        field = propagate(ev, np.ones(2))
        expected = np.empty(grid.na + 1)
        expected[0] = 1.0
        for k in range(grid.na):
            expected[k + 1] = expected[k] / (1.0 + grid.da * grid.ages[k + 1])
        np.testing.assert_allclose(field.values[:, 0], expected, rtol=1e-14)

    def test_quasilinear_lag_uses_previous_slice(self):
        mesh = SpatialMesh(nx=3)
        grid = AgeGrid(na=40, a_max=1.0)
        B = np.full(3, 0.7)
        rows = logistic_rows(0.7, grid.na, grid.a_max)
        frozen = DensityField(np.tile(rows[:, None], (1, 3)), grid)
        ev = build_evolution(decay_model(mu="1 + u"), mesh, grid, frozen)
        field = propagate(ev, B)
        np.testing.assert_allclose(field.values, frozen.values, rtol=1e-13, atol=1e-16)

    def test_input_validation(self):
        mesh = SpatialMesh(nx=3)
        grid = AgeGrid(na=5, a_max=1.0)
        ev = build_evolution(decay_model(), mesh, grid)
        with pytest.raises(EvolutionError, match="shape"):
            propagate(ev, np.ones(4))
        with pytest.raises(EvolutionError, match="finite"):
            propagate(ev, np.array([1.0, np.nan, 0.0]))
        with pytest.raises(EvolutionError, match="match"):
            build_evolution(decay_model(), mesh, grid, DensityField.zeros(grid, 5))

    def test_singular_step_reported(self):
        mesh = SpatialMesh(nx=2)
        grid = AgeGrid(na=5, a_max=1.0)
        with pytest.raises(EvolutionError, match="singular one-step"):
            build_evolution(decay_model(mu="0 - 200"), mesh, grid)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_exact_nonnegativity_with_diffusion(self, seed):
        rng = np.random.default_rng(seed)
        mesh = SpatialMesh(nx=6)
        grid = AgeGrid(na=8, a_max=1.0)
        model = ModelSpec(
            a_max=1.0,
            D=parse_expr("0.5 + x"), g=parse_expr("u - p"), h=parse_expr("u"),
            mu=parse_expr("0.2 + u"), b=Num(1.0), nu0=float(rng.uniform(0, 3)),
        )
        u = DensityField(rng.uniform(0.0, 2.0, (9, 6)), grid)
        B = rng.uniform(0.0, 1.0, 6)
        B[rng.integers(0, 6)] = 0.0
        field = propagate(build_evolution(model, mesh, grid, u), B)
        assert np.all(field.values >= 0.0)
        assert field.nonnegative

    def test_linearity_of_linear_evolution(self):
        mesh = SpatialMesh(nx=5)
        grid = AgeGrid(na=12, a_max=1.0)
        model = ModelSpec(
            a_max=1.0, D=Num(0.3), g=Num(0.0), h=Num(0.1), mu=Num(1.0), b=Num(1.0),
            nu0=0.5,
        )
        ev = build_evolution(model, mesh, grid)
        rng = np.random.default_rng(3)
        B1, B2 = rng.normal(size=(2, 5))
        combo = propagate(ev, 2.0 * B1 - 0.5 * B2)
        parts = 2.0 * propagate(ev, B1) - 0.5 * propagate(ev, B2)
        np.testing.assert_allclose(combo.values, parts.values, atol=1e-13)


class TestDuhamel:
    def test_unit_source_closed_form(self):
        mesh = SpatialMesh(nx=3)
        grid = AgeGrid(na=64, a_max=1.0)
        ev = build_evolution(decay_model(), mesh, grid)
        f = DensityField(np.ones((65, 3)), grid)
        out = apply_K0(ev, f)
        expected = k0_const_rows(grid.na, grid.a_max)
        for j in range(3):
            np.testing.assert_allclose(out.values[:, j], expected, rtol=1e-13, atol=1e-16)

    def test_requires_linear_evolution(self):
        mesh = SpatialMesh(nx=3)
        grid = AgeGrid(na=4, a_max=1.0)
        frozen = DensityField(np.ones((5, 3)), grid)
        ev = build_evolution(decay_model(mu="1 + u"), mesh, grid, frozen)
        with pytest.raises(EvolutionError, match="linear evolution"):
            apply_K0(ev, frozen)

    def test_source_shape_checked(self):
        mesh = SpatialMesh(nx=3)
        grid = AgeGrid(na=4, a_max=1.0)
        ev = build_evolution(decay_model(), mesh, grid)
        other = DensityField(np.ones((5, 2)), AgeGrid(na=4, a_max=1.0))
        with pytest.raises(EvolutionError, match="match"):
            apply_K0(ev, other)
