import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from fluctdecon import (
    CovarianceImage,
    Denoiser,
    DivergenceError,
    ParameterError,
    Psf,
    QuadraticDenoiser,
    SolverConfig,
    SparsityProx,
    TvDenoiser,
    apply,
    estimate_noise_variance,
    eval_objective,
    pg_step,
    psf_from_fwhm,
    solve_support,
    squared_psf_operator,
)


def delta_psf() -> Psf:
    k = np.zeros((3, 3))
    k[1, 1] = 1.0
    return Psf(kernel=k, fwhm_nm=1.0, pixel_size_nm=25.0)


def small_psf() -> Psf:
    return psf_from_fwhm(60.0, 25.0)


class TestNoiseVarianceEstimate:
    def test_flat_noise_recovered(self):
        op = squared_psf_operator(small_psf())
        data = np.full((12, 12), 3.7)
        assert abs(estimate_noise_variance(data, np.zeros((12, 12)), op) - 3.7) < 1e-12

    def test_consistent_signal_gives_zero(self, rng):
        op = squared_psf_operator(small_psf())
        r_x = np.abs(rng.standard_normal((12, 12)))
        data = apply(op, r_x)
        assert estimate_noise_variance(np.maximum(data, 0), r_x, op) < 1e-12

    def test_matches_scalar_minimization(self, rng):
        op = squared_psf_operator(small_psf())
        r_x = np.abs(rng.standard_normal((10, 10)))
        data = np.abs(rng.standard_normal((10, 10)))
        got = estimate_noise_variance(data, r_x, op)
        resid = data - apply(op, r_x)
        res = minimize_scalar(
            lambda s: float(((resid - s) ** 2).sum()),
            bounds=(-10, 10),
            method="bounded",
            options={"xatol": 1e-13},
        )
        assert abs(got - max(res.x, 0.0)) < 1e-10

    def test_update_zeroes_partial_derivative(self, rng):
        op = squared_psf_operator(small_psf())
        r_x = np.abs(rng.standard_normal((10, 10)))
        data = np.abs(rng.standard_normal((10, 10))) + 1.0  # keep minimizer positive
        s = estimate_noise_variance(data, r_x, op)
        resid = data - apply(op, r_x) - s
        # d/ds of 0.5*||resid||^2 is -sum(resid)
        assert abs(resid.sum()) < 1e-10 * resid.size


class TestPgStep:
    def test_fixed_point_when_consistent(self, rng):
        psf = small_psf()
        op = squared_psf_operator(psf)
        r_star = np.abs(rng.standard_normal((12, 12)))
        data = apply(op, r_star)
        tiny = 1e-14
        cfg = SolverConfig(regularizer=SparsityProx(kind="l1", strength=tiny), tau=1.0)
        step = pg_step(r_star, 0.0, np.maximum(data, 0), op, cfg)
        assert np.abs(step.z - r_star).max() < 1e-12
        assert np.abs(step.r_x_next - r_star).max() <= 2 * tiny  # theta plus rounding

    def test_delta_psf_one_step_recovery(self):
        # delta blur, single hot pixel: one hard-threshold step isolates it
        n = 8
        v = 5.0
        data = np.zeros((n, n))
        data[3, 4] = v
        op = squared_psf_operator(delta_psf())
        cfg = SolverConfig(regularizer=SparsityProx(kind="l0", strength=1.0), tau=1.0, lam=0.99)
        s1 = estimate_noise_variance(data, np.zeros((n, n)), op)
        step = pg_step(np.zeros((n, n)), s1, data, op, cfg)
        support = step.r_x_next > 0
        assert support[3, 4] and support.sum() == 1

    def test_gradient_matches_finite_differences(self, rng):
        psf = small_psf()
        op = squared_psf_operator(psf)
        r_x = np.abs(rng.standard_normal((10, 10)))
        data = np.abs(rng.standard_normal((10, 10)))
        s = 0.3
        tau, lam = 1.0, 0.99
        cfg = SolverConfig(regularizer=SparsityProx(kind="l1", strength=1e-12), tau=tau, lam=lam)
        step = pg_step(r_x, s, data, op, cfg)
        grad = (r_x - step.z) / tau  # gradient of lam/2 ||data - K r - s||^2

        def f(r):
            return 0.5 * lam * float(((data - apply(op, r) - s) ** 2).sum())

        eps = 1e-6
        idx = [(0, 0), (4, 7), (9, 3)]
        for i, j in idx:
            e = np.zeros_like(r_x)
            e[i, j] = eps
            fd = (f(r_x + e) - f(r_x - e)) / (2 * eps)
            assert abs(fd - grad[i, j]) < 1e-6 * max(1.0, abs(fd))

    def test_divergent_denoiser_detected(self, rng):
        class NanDenoiser(Denoiser):
            name = "nan"

            def denoise(self, z, sigma):
                return np.full_like(z, np.nan), None

        op = squared_psf_operator(small_psf())
        cfg = SolverConfig(regularizer=NanDenoiser(), sigma=0.1, tau=1.0)
        with pytest.raises(DivergenceError):
            pg_step(np.zeros((8, 8)), 0.0, np.ones((8, 8)), op, cfg)


class TestEvalObjective:
    def test_model_branch_formula(self, rng):
        op = squared_psf_operator(small_psf())
        r_x = np.abs(rng.standard_normal((8, 8)))
        data = np.abs(rng.standard_normal((8, 8)))
        reg = SparsityProx(kind="l1", strength=0.5)
        val = eval_objective(r_x, r_x, 0.2, data, op, reg, tau=1.0, lam=0.99)
        expect = 0.5 * 0.99 * float(((data - apply(op, r_x) - 0.2) ** 2).sum()) + 0.5 * r_x.sum()
        assert abs(val - expect) < 1e-10

    def test_pnp_identity_denoiser_case(self, rng):
        # r_x == z: the quadratic correction vanishes, F = lam/2*data + R(z)
        op = squared_psf_operator(small_psf())
        z = np.abs(rng.standard_normal((8, 8)))
        data = np.abs(rng.standard_normal((8, 8)))
        den = QuadraticDenoiser(alpha=0.3)
        potential = 0.5 * 0.3 * float((z**2).sum())
        val = eval_objective(z, z, 0.0, data, op, den, tau=1.0, lam=1.0, potential=potential)
        expect = 0.5 * float(((data - apply(op, z)) ** 2).sum()) + potential
        assert abs(val - expect) < 1e-10

    def test_quadratic_denoiser_closed_form(self, rng):
        # with r_x = (1-alpha) z the potential surrogate collapses to the
        # induced quadratic penalty alpha/(2(1-alpha)) ||r_x||^2
        alpha = 0.4
        op = squared_psf_operator(small_psf())
        z = np.abs(rng.standard_normal((8, 8)))
        data = np.abs(rng.standard_normal((8, 8)))
        r_x, potential = QuadraticDenoiser(alpha).denoise(z, 0.1)
        lam = 0.99
        val = eval_objective(r_x, z, 0.1, data, op, QuadraticDenoiser(alpha),
                             tau=1.0, lam=lam, potential=potential)
        fit = 0.5 * lam * float(((data - apply(op, r_x) - 0.1) ** 2).sum())
        penalty = alpha / (2 * (1 - alpha)) * float((r_x**2).sum())
        assert abs(val - (fit + penalty)) < 1e-8

    def test_perfect_fit_zero_penalty(self):
        op = squared_psf_operator(delta_psf())
        data = np.zeros((6, 6))
        val = eval_objective(
            np.zeros((6, 6)), np.zeros((6, 6)), 0.0, data, op,
            SparsityProx(kind="l0", strength=1.0), tau=1.0, lam=0.99,
        )
        assert val == 0.0

    def test_missing_potential_gives_none(self, rng):
        op = squared_psf_operator(small_psf())
        z = np.abs(rng.standard_normal((6, 6)))
        den = QuadraticDenoiser(alpha=0.3)
        assert eval_objective(z, z, 0.0, z, op, den, potential=None) is None


class TestSolveSupport:
    def test_all_zero_data_trivial(self):
        data = CovarianceImage(np.zeros((16, 16)), source_T=10)
        cfg = SolverConfig(regularizer=SparsityProx(kind="l1", strength=0.1))
        res = solve_support(data, small_psf(), cfg)
        assert res.iterations == 1 and res.converged
        assert res.s_hat == 0.0
        assert not res.support_mask.any()
        assert np.all(res.r_x_hat.image == 0.0)

    def test_flat_noise_only(self):
        data = CovarianceImage(np.full((16, 16), 2.5), source_T=10)
        cfg = SolverConfig(regularizer=SparsityProx(kind="l1", strength=1.0), tau=None)
        res = solve_support(data, small_psf(), cfg)
        assert abs(res.s_hat - 2.5) < 1e-6
        assert not res.support_mask.any()

    def test_descent_model_branch(self, rng):
        r_true = np.zeros((16, 16))
        r_true[5, 5] = r_true[10, 8] = 4.0
        op = squared_psf_operator(small_psf())
        data = np.maximum(apply(op, r_true) + 0.01, 0)
        cov = CovarianceImage(data, source_T=10)
        cfg = SolverConfig(regularizer=SparsityProx(kind="l1", strength=1e-4),
                           tau=1.0, lam=0.99, max_iters=300, tol=1e-30)
        res = solve_support(cov, small_psf(), cfg)
        obj = np.array([r.objective for r in res.trace])
        assert np.all(np.diff(obj) <= 1e-10)

    def test_descent_pnp_tv_branch(self, rng):
        r_true = np.zeros((16, 16))
        r_true[5, 5] = r_true[10, 8] = 4.0
        op = squared_psf_operator(small_psf())
        data = np.maximum(apply(op, r_true) + 0.01, 0)
        cov = CovarianceImage(data, source_T=10)
        cfg = SolverConfig(regularizer=TvDenoiser(scale=1.0), sigma=0.1,
                           tau=1.0, lam=0.99, max_iters=100, tol=1e-30)
        res = solve_support(cov, small_psf(), cfg)
        obj = np.array([r.objective for r in res.trace])
        assert np.all(np.diff(obj) <= 1e-10)

    def test_trace_running_min_and_termination(self, rng):
        r_true = np.zeros((12, 12))
        r_true[6, 6] = 3.0
        op = squared_psf_operator(small_psf())
        data = np.maximum(apply(op, r_true), 0)
        cov = CovarianceImage(data, source_T=5)
        cfg = SolverConfig(regularizer=SparsityProx(kind="l1", strength=1e-5),
                           tau=None, max_iters=2000, tol=1e-10)
        res = solve_support(cov, small_psf(), cfg)
        mins = np.array([r.rel_change_min for r in res.trace])
        assert np.all(np.diff(mins) <= 0.0)
        assert res.converged
        assert res.trace[-1].rel_change < 1e-10

    def test_support_threshold_defaults(self, rng):
        r_true = np.zeros((12, 12))
        r_true[6, 6] = 3.0
        op = squared_psf_operator(small_psf())
        data = np.maximum(apply(op, r_true), 0)
        cov = CovarianceImage(data, source_T=5)
        prox_res = solve_support(
            cov, small_psf(),
            SolverConfig(regularizer=SparsityProx(kind="l1", strength=1e-5), tau=None, max_iters=200),
        )
        assert prox_res.threshold == 0.0
        pnp_res = solve_support(
            cov, small_psf(),
            SolverConfig(regularizer=QuadraticDenoiser(0.01), sigma=0.1, tau=None, max_iters=50),
        )
        assert pnp_res.threshold == pytest.approx(1e-3 * pnp_res.r_x_hat.image.max())

    def test_rescaling_invariance_of_support(self, rng):
        r_true = np.zeros((16, 16))
        r_true[4, 9] = 2.0
        r_true[11, 5] = 5.0
        op = squared_psf_operator(small_psf())
        data = np.maximum(apply(op, r_true) + 0.05, 0)
        c = 37.0
        base = SolverConfig(regularizer=SparsityProx(kind="l1", strength=1e-4),
                            tau=None, max_iters=400, support_threshold=1e-6)
        scaled = SolverConfig(regularizer=SparsityProx(kind="l1", strength=1e-4 * c),
                              tau=None, max_iters=400, support_threshold=1e-6 * c)
        res_a = solve_support(CovarianceImage(data, source_T=5), small_psf(), base)
        res_b = solve_support(CovarianceImage(data * c, source_T=5), small_psf(), scaled)
        assert np.array_equal(res_a.support_mask, res_b.support_mask)

    def test_step_size_warning_and_shrink(self, rng):
        data = CovarianceImage(np.abs(rng.standard_normal((12, 12))), source_T=5)
        cfg = SolverConfig(regularizer=SparsityProx(kind="l1", strength=1e-3),
                           tau=1e9, max_iters=5)
        with pytest.warns(UserWarning, match="shrinking tau"):
            solve_support(data, small_psf(), cfg)

    def test_pnp_needs_sigma(self):
        with pytest.raises(ParameterError):
            SolverConfig(regularizer=QuadraticDenoiser(0.2))

    def test_omega_property(self):
        data = np.zeros((8, 8))
        data[2, 3] = 1.0
        res = solve_support(
            CovarianceImage(data, source_T=5), delta_psf(),
            SolverConfig(regularizer=SparsityProx(kind="l0", strength=1e-6), tau=1.0, max_iters=100),
        )
        assert (res.omega == np.array([[2, 3]])).all()
