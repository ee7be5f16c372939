import math

import numpy as np
import pytest

from kinspec.errors import GridTooCoarse, WindowEmpty
from kinspec.fitting import Trajectory, fit_exponential
from kinspec.fokker_planck import (
    NASH_CONSTANTS,
    FPOperator,
    VelocityGrid,
    algebraic_decay_check,
    build_fp_operator,
    choose_truncation,
    evolve,
    fp_eigenmode,
    mass_production,
    measure_decay_rate,
    nash_ratio,
    poincare_gap,
    poly_tail_profile,
    split_AB,
    ultracontractivity_exponent,
)
from kinspec.operators import NormSpec, hypodissipativity_rate, lognorm
from kinspec.weights import Potential, WeightSpec


@pytest.fixture(scope="module")
def harmonic_op():
    pot = Potential(gamma=2.0, d=1, alpha=0.5)  # phi = v^2/2, OU spectrum {0,1,2,...}
    grid = VelocityGrid("line_1d", R=8.0, N=512)
    return build_fp_operator(pot, grid)


class TestBuild:
    def test_kernel_and_column_sums(self, harmonic_op):
        op = harmonic_op
        assert np.max(np.abs(op.matrix @ op.mu)) <= 1e-12 * np.max(np.abs(op.matrix))
        assert mass_production(op) <= 1e-12 * np.max(np.abs(op.matrix)) * np.max(op.grid.quad)

    def test_quartic_potential_contracts(self):
        pot = Potential(gamma=4.0, d=1)
        grid = VelocityGrid("line_1d", R=3.5, N=256)
        op = build_fp_operator(pot, grid)
        assert np.max(np.abs(op.matrix @ op.mu)) <= 1e-12 * np.max(np.abs(op.matrix))
        assert float(grid.quad @ op.mu) == pytest.approx(1.0, abs=1e-14)

    def test_self_adjoint_in_gaussian_weighted_inner_product(self, harmonic_op):
        op = harmonic_op
        w = np.sqrt(op.grid.quad / op.mu)
        s = op.matrix * (w[:, None] / w[None, :])
        assert np.max(np.abs(s - s.T)) <= 1e-10 * np.max(np.abs(s))

    def test_radial_3d_build(self):
        pot = Potential(gamma=2.0, d=3, alpha=0.5)
        grid = VelocityGrid("radial_3d", R=9.0, N=256)
        op = build_fp_operator(pot, grid)
        assert np.max(np.abs(op.matrix @ op.mu)) <= 1e-11 * np.max(np.abs(op.matrix))
        assert mass_production(op) <= 1e-11 * np.max(np.abs(op.matrix)) * np.max(op.grid.quad)

    def test_too_coarse(self):
        pot = Potential(gamma=2.0, d=1, alpha=0.5)
        with pytest.raises((GridTooCoarse, ValueError)):
            grid = VelocityGrid("line_1d", R=20.0, N=64)
            build_fp_operator(pot, grid)


class TestPoincareGap:
    def test_harmonic_hermite_spectrum(self, harmonic_op):
        gap = poincare_gap(harmonic_op)
        assert gap == pytest.approx(1.0, rel=5e-3)
        second = poincare_gap(harmonic_op, nth=2)
        assert second == pytest.approx(2.0, rel=1e-2)
        assert harmonic_op.dirichlet_constant == pytest.approx(2 * gap)

    def test_linear_potential_positive_gap(self):
        pot = Potential(gamma=1.0, d=1)
        grid = VelocityGrid("line_1d", R=40.0, N=768)
        op = build_fp_operator(pot, grid)
        assert poincare_gap(op) > 0


class TestSplitAB:
    def test_zero_truncation_admissible_when_defect_bounded(self, harmonic_op):
        # gaussian_inv p=2 has adapted defect 0; with the poly weight the
        # defect is bounded above, so M = 0 passes once a exceeds sup psi
        w = WeightSpec(kind="poly", k=4, p=2)
        m, r, a = choose_truncation(harmonic_op, w, margin=0.1)
        amat, bmat = split_AB(harmonic_op, m, r)
        assert np.allclose(amat + bmat, harmonic_op.matrix)

    def test_poly_weight_b_rate_certificate(self):
        # gamma = 2 (phi = |v|^2), poly(k=4), p = 2, d = 1:
        # B-rate <= 2 d (1 - 1/p) - 2k + margin = -6.9
        pot = Potential(gamma=2.0, d=1, alpha=1.0)
        grid = VelocityGrid("line_1d", R=6.5, N=512)
        op = build_fp_operator(pot, grid)
        w = WeightSpec(kind="poly", k=4, p=2)
        m, r, a = choose_truncation(op, w, margin=0.1)
        assert a == pytest.approx(-6.9, abs=1e-6)
        _, bmat = split_AB(op, m, r)
        rate = hypodissipativity_rate(bmat, op.grid.norm_spec(w, op.pot), verify=False)
        assert rate <= a + 1e-8

    def test_b_semigroup_decay_in_weighted_lp(self):
        pot = Potential(gamma=2.0, d=1, alpha=1.0)
        grid = VelocityGrid("line_1d", R=6.5, N=256)
        op = build_fp_operator(pot, grid)
        w = WeightSpec(kind="poly", k=4, p=1)
        m, r, a = choose_truncation(op, w, margin=0.1)
        _, bmat = split_AB(op, m, r)
        spec = op.grid.norm_spec(w, op.pot)
        rate = hypodissipativity_rate(bmat, spec, verify=False)
        assert rate <= a + 1e-8
        from scipy.linalg import expm

        for t in (1.0, 5.0):
            assert spec.op_norm(expm(t * bmat)) <= math.exp(rate * t) * (1 + 1e-8)


class TestEvolve:
    def test_equilibrium_stationary(self, harmonic_op):
        grid = harmonic_op.grid
        norms = {"l2w": grid.norm_spec(WeightSpec(kind="gaussian_inv", p=2), harmonic_op.pot)}
        traj = evolve(harmonic_op, harmonic_op.mu, T=100.0, dt=0.5, norms=norms, n_out=50)
        assert np.max(traj.series["l2w"]) <= 1e-10
        assert np.max(traj.series["mass_drift"]) <= 1e-10

    def test_first_excited_mode_rate(self, harmonic_op):
        grid = harmonic_op.grid
        f0 = grid.centers * harmonic_op.mu
        norms = {"l2w": grid.norm_spec(WeightSpec(kind="gaussian_inv", p=2), harmonic_op.pot)}
        traj = evolve(harmonic_op, f0, T=22.0, dt=0.02, norms=norms,
                      scheme="crank_nicolson", n_out=400)
        fit = measure_decay_rate(traj, "l2w")
        assert fit.rate == pytest.approx(1.0, rel=1e-2)

    def test_second_excited_mode_rate(self, harmonic_op):
        grid = harmonic_op.grid
        f0 = (grid.centers ** 2 - 1.0) * harmonic_op.mu
        norms = {"l2w": grid.norm_spec(WeightSpec(kind="gaussian_inv", p=2), harmonic_op.pot)}
        traj = evolve(harmonic_op, f0, T=11.0, dt=0.01, norms=norms,
                      scheme="crank_nicolson", n_out=400)
        fit = measure_decay_rate(traj, "l2w")
        assert fit.rate == pytest.approx(2.0, rel=2e-2)

    def test_sign_preservation_and_mass(self, harmonic_op):
        rng = np.random.default_rng(0)
        grid = harmonic_op.grid
        for _ in range(20):
            f0 = rng.random(grid.N) * np.exp(-grid.centers ** 2 / 4)
            f0 /= grid.quad @ f0
            traj = evolve(harmonic_op, f0, T=2.0, dt=0.05, norms={},
                          keep_snapshots=True, n_out=10)
            assert np.max(traj.series["mass_drift"]) <= 1e-10
            for snap in traj.snapshots:
                assert snap.min() >= -1e-12 * max(1.0, snap.max())


class TestDecayFit:
    def test_synthetic_exponential_exact(self):
        ts = np.linspace(0, 12, 400)
        vals = 3.0 * np.exp(-2.0 * ts)
        fit = fit_exponential(ts, vals)
        assert fit.rate == pytest.approx(2.0, abs=1e-12)

    def test_window_empty(self):
        ts = np.linspace(0, 1, 50)
        with pytest.raises(WindowEmpty):
            fit_exponential(ts, np.ones_like(ts))

    def test_equilibrium_start_skips_fit(self, harmonic_op):
        grid = harmonic_op.grid
        traj = evolve(harmonic_op, harmonic_op.mu, T=2.0, dt=0.1,
                      norms={"l1": grid.norm_spec(None, p=1)}, n_out=30)
        with pytest.raises(WindowEmpty):
            measure_decay_rate(traj, "l1")


class TestAlgebraicDecay:
    @pytest.mark.slow
    def test_gamma_1(self):
        fit = algebraic_decay_check(Potential(gamma=1.0, d=1), k=2.0)
        assert fit.rate == pytest.approx(2.0, abs=0.3)

    @pytest.mark.slow
    def test_gamma_15(self):
        fit = algebraic_decay_check(Potential(gamma=1.5, d=1), k=2.0)
        assert fit.rate == pytest.approx(4.0, abs=0.6)


class TestUltracontractivity:
    @pytest.mark.slow
    def test_exponent_d1(self):
        pot = Potential(gamma=2.0, d=1, alpha=1.0)
        grid = VelocityGrid("line_1d", R=6.5, N=512)
        op = build_fp_operator(pot, grid)
        w0 = WeightSpec(kind="exp_energy", kappa=0.25, p=2)
        m, r, _ = choose_truncation(op, w0, a_target=-1.0)
        _, bmat = split_AB(op, m, r)
        fit = ultracontractivity_exponent(bmat, grid, pot, kappa=0.25)
        assert fit.rate == pytest.approx(0.25, abs=0.05)

    @pytest.mark.slow
    def test_exponent_d3(self):
        pot = Potential(gamma=2.0, d=3, alpha=1.0)
        grid = VelocityGrid("radial_3d", R=7.0, N=512)
        op = build_fp_operator(pot, grid)
        w0 = WeightSpec(kind="exp_energy", kappa=0.25, p=2)
        m, r, _ = choose_truncation(op, w0, a_target=-1.0)
        _, bmat = split_AB(op, m, r)
        fit = ultracontractivity_exponent(bmat, grid, pot, kappa=0.25)
        assert fit.rate == pytest.approx(0.75, abs=0.15)

    def test_late_time_l1_bounded_by_lognorm(self):
        pot = Potential(gamma=2.0, d=1, alpha=1.0)
        grid = VelocityGrid("line_1d", R=6.0, N=128)
        op = build_fp_operator(pot, grid)
        w0 = WeightSpec(kind="exp_energy", kappa=0.25, p=1)
        m, r, _ = choose_truncation(op, w0, a_target=-1.0)
        _, bmat = split_AB(op, m, r)
        spec = grid.norm_spec(w0, pot)
        a = lognorm(bmat, spec)
        from scipy.linalg import expm

        for t in (1.0, 2.0, 5.0):
            assert spec.op_norm(expm(t * bmat)) <= math.exp(a * t) * (1 + 1e-8)


class TestNash:
    @pytest.mark.parametrize("geometry,d", [("line_1d", 1), ("radial_3d", 3)])
    def test_seeded_grid_functions(self, geometry, d):
        pot = Potential(gamma=2.0, d=d, alpha=0.5)
        grid = VelocityGrid(geometry, R=8.0, N=256)
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(50):
            raw = rng.standard_normal(grid.N)
            # smooth a little so the gradient is grid-resolved
            kernel = np.ones(5) / 5
            g = np.convolve(raw, kernel, mode="same") * np.exp(-grid.radii() ** 2 / 8)
            worst = max(worst, nash_ratio(grid, g))
        assert worst <= NASH_CONSTANTS[d]
