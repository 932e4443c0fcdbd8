import numpy as np
import pytest

from agequil.continuation import (
    ContinuationError,
    NormTarget,
    Plane,
    branch_stats,
    correct,
    first_step,
    solve_at_norm,
    trace_branch,
)
from agequil.evolution import DensityField, build_evolution, propagate
from agequil.linearized import build_linearized

from oracles import logistic_B_of_amplitude, logistic_n_of_B


@pytest.fixture(scope="module")
def decay_lin(decay_normalized):
    model, mesh, grid, _ = decay_normalized
    return build_linearized(model, mesh, grid)


class TestConstraints:
    def test_plane_value(self):
        plane = Plane(
            normal_B=np.array([1.0, 0.5]), normal_n=2.0,
            anchor_B=np.array([0.2, 0.4]), anchor_n=1.1,
        )
        got = plane.value(np.array([0.3, 0.4]), 1.2, None)
        assert got == pytest.approx(0.1 * 1.0 + 2.0 * 0.1)

    def test_norm_target_value(self, decay_problem):
        model, mesh, grid = decay_problem
        u = DensityField(np.ones((grid.na + 1, mesh.nx)), grid)
        assert NormTarget(0.25).value(None, 0.0, u) == pytest.approx(u.norm() - 0.25)


class TestFirstStep:
    def test_matches_scalar_oracle(self, decay_normalized, decay_lin):
        model, mesh, grid, _ = decay_normalized
        p = first_step(model, mesh, grid, 1e-2, lin=decay_lin)
        assert not p.trivial
        # scalar problem: the birth vector is constant across x
        assert float(np.ptp(p.B)) <= 1e-13
        assert p.B[0] == pytest.approx(1e-2, rel=1e-9)
        n_oracle = logistic_n_of_B(float(p.B[0]), grid.na, grid.a_max, model.cb)
        assert p.n == pytest.approx(n_oracle, rel=1e-10)
        assert p.identity_residual <= 1e-8
        assert p.min_u >= 0.0

    def test_offset_scales_linearly_with_eps(self, decay_normalized, decay_lin):
        model, mesh, grid, _ = decay_normalized
        p1 = first_step(model, mesh, grid, 1e-2, lin=decay_lin)
        p2 = first_step(model, mesh, grid, 5e-3, lin=decay_lin)
        ratio = (p1.n - 1.0) / (p2.n - 1.0)
        assert 1.7 <= ratio <= 2.3

    def test_zero_eps_is_trivial_point(self, decay_normalized, decay_lin):
        model, mesh, grid, _ = decay_normalized
        p = first_step(model, mesh, grid, 0.0, lin=decay_lin)
        assert p.trivial
        assert p.n == 1.0
        assert not np.any(p.u.values)
        assert p.eps == 0.0
        assert p.r_Qu == pytest.approx(1.0, abs=1e-10)

    def test_negative_eps_rejected(self, decay_normalized, decay_lin):
        model, mesh, grid, _ = decay_normalized
        with pytest.raises(ContinuationError, match="nonnegative"):
            first_step(model, mesh, grid, -1e-3, lin=decay_lin)

    def test_requires_normalized_model(self, decay_problem):
        model, mesh, grid = decay_problem
        with pytest.raises(ContinuationError, match="not normalized"):
            first_step(model, mesh, grid, 1e-2)


class TestTraceDecay:
    def test_starts_at_trivial_solution(self, decay_branch):
        p0 = decay_branch.points[0]
        assert p0.trivial and p0.n == 1.0 and p0.eps == 0.0

    def test_point_count(self, decay_branch):
        assert len(decay_branch.nontrivial()) == 10
        assert decay_branch.terminated == "max_points reached"

    def test_invariants_on_every_point(self, decay_branch):
        for p in decay_branch.nontrivial():
            assert p.identity_residual <= 1e-6
            assert p.reform_residual <= 1e-5
            assert p.min_u >= -1e-10
            assert p.residual_direct <= 2e-9

    def test_supercritical_and_monotone(self, decay_branch):
        pts = decay_branch.nontrivial()
        ns = [p.n for p in pts]
        epss = [p.eps for p in pts]
        assert all(n >= 1.0 - 1e-9 for n in ns)
        assert all(b > a for a, b in zip(ns, ns[1:]))
        assert all(b > a for a, b in zip(epss, epss[1:]))

    def test_each_point_matches_scalar_oracle(self, decay_normalized, decay_branch):
        model, _, grid, _ = decay_normalized
        for p in decay_branch.nontrivial():
            assert float(np.ptp(p.B)) <= 1e-10 * float(p.B[0])
            n_oracle = logistic_n_of_B(float(p.B[0]), grid.na, grid.a_max, model.cb)
            assert p.n == pytest.approx(n_oracle, rel=1e-9)

    def test_branch_stats(self, decay_branch):
        stats = branch_stats(decay_branch)
        pts = decay_branch.nontrivial()
        assert stats.sigma_i == pytest.approx(min(p.n for p in pts))
        assert stats.sigma_s == pytest.approx(max(p.n for p in pts))
        assert stats.cross_si_Ni <= 1e-6
        assert stats.cross_ss_Ns <= 1e-6
        assert stats.sigma_i >= 1.0 - 1e-9
        assert stats.max_identity_residual <= 1e-6

    def test_stats_require_nontrivial_points(self, decay_branch):
        from agequil.continuation import Branch

        empty = Branch(points=[decay_branch.points[0]])
        with pytest.raises(ContinuationError, match="nontrivial"):
            branch_stats(empty)


class TestCorrect:
    def test_fixed_n_recovers_branch_point(self, decay_normalized, decay_branch, decay_lin):
        model, mesh, grid, _ = decay_normalized
        p = decay_branch.nontrivial()[4]
        B_pert = 1.02 * p.B
        u_guess = propagate(build_evolution(model, mesh, grid, p.u), B_pert)
        got = correct(model, mesh, grid, p.n, u_guess, lin=decay_lin)
        np.testing.assert_allclose(got.B, p.B, rtol=1e-7)
        assert got.n == p.n

    def test_norm_constraint_recovers_n(self, diffusion_normalized, diffusion_branch):
        # the amplitude's maximizing column is unique here, so the
        # appended-constraint corrector applies directly
        model, mesh, grid, _ = diffusion_normalized
        p = diffusion_branch.nontrivial()[2]
        u_guess = propagate(build_evolution(model, mesh, grid, p.u), 1.01 * p.B)
        got = correct(model, mesh, grid, p.n * 1.01, u_guess, NormTarget(p.eps))
        assert got.n == pytest.approx(p.n, rel=1e-8)
        assert got.eps == pytest.approx(p.eps, abs=1e-9)

    def test_iteration_budget_enforced(self, decay_normalized, decay_branch, decay_lin):
        model, mesh, grid, _ = decay_normalized
        p = decay_branch.nontrivial()[4]
        u_guess = propagate(build_evolution(model, mesh, grid, p.u), 1.5 * p.B)
        with pytest.raises(ContinuationError):
            correct(model, mesh, grid, p.n, u_guess, max_iter=1, lin=decay_lin)


class TestSolveAtNorm:
    def test_amplitude_pinned_and_matches_oracle(self, decay_normalized, decay_lin):
        model, mesh, grid, _ = decay_normalized
        target = 0.1
        p = solve_at_norm(model, mesh, grid, target, lin=decay_lin)
        assert p.eps == pytest.approx(target, abs=1e-9)
        b_oracle = logistic_B_of_amplitude(target, grid.na, grid.a_max)
        assert p.B[0] == pytest.approx(b_oracle, rel=1e-8)
        n_oracle = logistic_n_of_B(b_oracle, grid.na, grid.a_max, model.cb)
        assert p.n == pytest.approx(n_oracle, rel=1e-8)


class TestTraceDiffusion:
    def test_invariants_and_shape(self, diffusion_branch):
        pts = diffusion_branch.nontrivial()
        assert len(pts) == 5
        for p in pts:
            assert p.identity_residual <= 1e-6
            assert p.reform_residual <= 1e-5
            assert p.min_u >= -1e-10
            assert p.n >= 1.0 - 1e-9
        epss = [p.eps for p in pts]
        assert all(b > a for a, b in zip(epss, epss[1:]))

    def test_stats_cross_products(self, diffusion_branch):
        stats = branch_stats(diffusion_branch)
        assert stats.cross_si_Ni <= 1e-6
        assert stats.cross_ss_Ns <= 1e-6


class TestCaps:
    def test_amplitude_cap_terminates(self, decay_normalized, decay_lin):
        model, mesh, grid, _ = decay_normalized
        branch = trace_branch(
            model, mesh, grid, eps0=1e-2, step=0.2, max_points=50,
            norm_cap=0.05, lin=decay_lin,
        )
        assert "amplitude cap" in branch.terminated
        # the cap is checked after appending, so exactly one point crosses it
        epss = [p.eps for p in branch.nontrivial()]
        assert epss[-1] > 0.05
        assert all(e <= 0.05 for e in epss[:-1])
