"""Static saddle points, duality gaps, preservation residuals, penalty bound."""

import numpy as np
import pytest

from onlinepd.core import SeededRng, norm_21, pixel_norms
from onlinepd.diagnostics import (
    PenaltyInputs,
    duality_gap,
    estimate_predictor_gap_norms,
    prediction_penalty,
    solve_static,
    tv_preservation_residual,
)
from onlinepd.engine import FrameProblem, make_unaccelerated_params
from onlinepd.operators import Displacement, GradOp
from onlinepd.proxops import DataTermL2, TVRegulariser


def denoise_problem(z, alpha=0.25):
    d = Displacement.translation((0.0, 0.0))
    return FrameProblem(data_term=DataTermL2(z=z), regulariser=TVRegulariser(alpha),
                        K=GradOp(boundary="neumann"), displacement_true=d,
                        displacement_measured=d)


def unaccel(tau=0.01, L=0.0, rho=0.0, gamma_F=1.0):
    return make_unaccelerated_params(tau=tau, L=L, kappa=1.0,
                                     K_norm_bound=np.sqrt(8.0), alpha=0.25,
                                     gamma_F=gamma_F, rho=rho)


class TestSolveStatic:
    def test_tiny_weight_recovers_data(self):
        z = np.clip(0.5 + 0.2 * SeededRng(1).standard_normal((12, 12)), 0.0, 1.0)
        saddle = solve_static(denoise_problem(z, alpha=1e-8), max_iters=20000,
                              gap_tol=1e-14)
        assert np.max(np.abs(saddle.x_opt - z)) <= 1e-4

    def test_two_pixel_closed_form(self):
        # 1x2 data (0, 1): the solution shrinks the jump by the weight from
        # each side, x = (alpha, 1 - alpha), as long as alpha < 1/2
        alpha = 0.1
        z = np.array([[0.0, 1.0]])
        saddle = solve_static(denoise_problem(z, alpha=alpha), max_iters=50000,
                              gap_tol=0.0)
        assert saddle.x_opt[0, 0] == pytest.approx(alpha, abs=1e-6)
        assert saddle.x_opt[0, 1] == pytest.approx(1.0 - alpha, abs=1e-6)

    def test_gap_decreases_with_iteration_budget(self):
        z = np.clip(0.5 + 0.3 * SeededRng(2).standard_normal((12, 12)), 0.0, 1.0)
        problem = denoise_problem(z)
        gaps = [solve_static(problem, max_iters=n, gap_tol=0.0).gap_achieved
                for n in (100, 1000, 10000)]
        assert gaps[1] <= gaps[0] and gaps[2] <= gaps[1]

    def test_reports_convergence_flag(self):
        z = np.clip(0.5 + 0.2 * SeededRng(3).standard_normal((8, 8)), 0.0, 1.0)
        problem = denoise_problem(z)
        good = solve_static(problem, max_iters=20000, gap_tol=1e-8)
        assert good.converged
        bad = solve_static(problem, max_iters=25, gap_tol=1e-12)
        assert not bad.converged

    def test_max_iters_validated(self):
        with pytest.raises(ValueError):
            solve_static(denoise_problem(np.zeros((4, 4))), max_iters=0)


class TestDualityGap:
    def setup_method(self):
        z = np.clip(0.5 + 0.3 * SeededRng(4).standard_normal((12, 12)), 0.0, 1.0)
        self.problem = denoise_problem(z)
        self.saddle = solve_static(self.problem, max_iters=60000, gap_tol=0.0)
        self.ref = (self.saddle.x_opt, self.saddle.y_opt)

    def test_zero_at_the_saddle(self):
        gap = duality_gap(self.problem, self.ref, self.ref, eta=0.01)
        assert abs(gap) <= 1e-8

    def test_nonneg_for_feasible_points(self):
        rng = SeededRng(5)
        alpha = self.problem.regulariser.alpha
        for _ in range(10):
            x = rng.standard_normal((12, 12))
            y = rng.standard_normal((12, 12, 2))
            norms = pixel_norms(y)
            y = y * np.minimum(1.0, alpha / np.maximum(norms, 1e-300))[..., None]
            gap = duality_gap(self.problem, (x, y), self.ref, eta=0.01)
            assert gap >= -1e-10

    def test_infeasible_dual_gives_infinity(self):
        y_bad = np.full((12, 12, 2), 10.0)
        gap = duality_gap(self.problem, (self.ref[0], y_bad), self.ref, eta=0.01)
        assert gap == np.inf

    def test_infeasible_reference_rejected(self):
        y_bad = np.full((12, 12, 2), 10.0)
        with pytest.raises(ValueError):
            duality_gap(self.problem, self.ref, (self.ref[0], y_bad), eta=0.01)

    def test_scales_linearly_in_eta(self):
        rng = SeededRng(6)
        x = rng.standard_normal((12, 12))
        y = np.zeros((12, 12, 2))
        g1 = duality_gap(self.problem, (x, y), self.ref, eta=1.0)
        g2 = duality_gap(self.problem, (x, y), self.ref, eta=0.25)
        assert g2 == pytest.approx(0.25 * g1, rel=1e-12)


class TestTvPreservationResidual:
    def test_attaining_dual_has_zero_residual(self):
        x = np.zeros((10, 10))
        x[3:7, 2:8] = 1.0
        D = GradOp()
        alpha = 0.25
        dx = D.apply(x)
        norms = pixel_norms(dx)
        y = np.zeros_like(dx)
        nz = norms > 0
        y[nz] = alpha * dx[nz] / norms[nz][:, None]
        attain, feas = tv_preservation_residual(D, alpha, x, y)
        assert abs(attain) <= 1e-12
        assert feas == 0.0

    def test_zero_dual_residual_is_tv_value(self):
        x = np.zeros((10, 10))
        x[3:7, 2:8] = 1.0
        D = GradOp()
        attain, feas = tv_preservation_residual(D, 0.25, x, np.zeros((10, 10, 2)))
        assert attain == pytest.approx(0.25 * norm_21(D.apply(x)), rel=1e-12)
        assert attain > 0.0
        assert feas == 0.0

    def test_feasible_duals_nonneg_residual(self):
        rng = SeededRng(7)
        D = GradOp()
        alpha = 0.25
        for _ in range(10):
            x = rng.standard_normal((8, 8))
            y = rng.standard_normal((8, 8, 2))
            norms = pixel_norms(y)
            y = y * np.minimum(1.0, alpha / np.maximum(norms, 1e-300))[..., None]
            attain, feas = tv_preservation_residual(D, alpha, x, y)
            assert attain >= -1e-10
            assert feas <= 1e-12

    def test_feasibility_excess_reported(self):
        D = GradOp()
        y = np.zeros((4, 4, 2))
        y[1, 1, 0] = 0.75
        _, feas = tv_preservation_residual(D, 0.25, np.zeros((4, 4)), y)
        assert feas == pytest.approx(0.5, abs=1e-12)


class TestPenaltyInputsValidation:
    def base(self, **overrides):
        kw = dict(Lambda=1.5, Theta=1.5, C=0.1, M_x=10.0, M_y=5.0,
                  W_diff=0.01, T_diff=0.02)
        kw.update(overrides)
        return PenaltyInputs(**kw)

    def test_valid_construction(self):
        p = self.base()
        assert p.kappa == 0.5

    def test_lambda_must_dominate(self):
        with pytest.raises(ValueError):
            self.base(Lambda=1.0, W_norm_sq=1.0)

    def test_theta_must_dominate(self):
        with pytest.raises(ValueError):
            self.base(Theta=0.5, T_norm_sq=1.0)

    def test_kappa_open_interval(self):
        with pytest.raises(ValueError):
            self.base(kappa=1.0)
        with pytest.raises(ValueError):
            self.base(kappa=0.0)

    def test_zero_pi_needs_zero_affine_difference(self):
        p = self.base(pi=0.0, a_diff=0.0)
        assert p.pi == 0.0
        with pytest.raises(ValueError):
            self.base(pi=0.0, a_diff=0.5)

    def test_nonneg_fields(self):
        with pytest.raises(ValueError):
            self.base(W_diff=-0.1)


class TestPredictionPenalty:
    def test_perfect_predictions_zero_penalty(self):
        params = unaccel(tau=0.01)
        p = PenaltyInputs(Lambda=1.001, Theta=0.05, C=0.0, M_x=10.0, M_y=5.0,
                          W_diff=0.0, T_diff=0.0, T_norm_sq=0.04, dual_dist=0.0)
        assert prediction_penalty(p, params, params) <= 1e-12

    def test_precondition_violation_rejected(self):
        params = unaccel(tau=0.01)
        p = PenaltyInputs(Lambda=1.2, Theta=1.5, C=0.1, M_x=1.0, M_y=1.0,
                          W_diff=0.0, T_diff=0.0)
        with pytest.raises(ValueError):
            # phi (1 + gamma tau) = 1.01 < Lambda = 1.2
            prediction_penalty(p, params, params)

    def test_monotone_in_operator_gaps(self):
        rng = SeededRng(8)
        params = unaccel(tau=0.01)
        for _ in range(20):
            base = dict(Lambda=1.005, Theta=1.5, C=float(rng.uniform(1)[0]),
                        M_x=5.0 * float(rng.uniform(1)[0]),
                        M_y=5.0 * float(rng.uniform(1)[0]),
                        W_diff=float(rng.uniform(1)[0]),
                        T_diff=float(rng.uniform(1)[0]),
                        dual_dist=float(rng.uniform(1)[0]))
            lo = prediction_penalty(PenaltyInputs(**base), params, params)
            bumped = dict(base)
            bumped["W_diff"] = base["W_diff"] + 0.5
            hi_w = prediction_penalty(PenaltyInputs(**bumped), params, params)
            bumped = dict(base)
            bumped["T_diff"] = base["T_diff"] + 0.5
            hi_t = prediction_penalty(PenaltyInputs(**bumped), params, params)
            assert hi_w >= lo - 1e-12
            assert hi_t >= lo - 1e-12

    def test_affine_differences_enter_through_pi_terms(self):
        params = unaccel(tau=0.01)
        base = dict(Lambda=1.005, Theta=1.5, C=0.2, M_x=2.0, M_y=2.0,
                    W_diff=0.1, T_diff=0.1)
        lo = prediction_penalty(PenaltyInputs(**base), params, params)
        hi = prediction_penalty(PenaltyInputs(**base, a_diff=0.3, b_diff=0.2),
                                params, params)
        assert hi > lo


class TestEstimatePredictorGapNorms:
    def test_identical_displacements(self):
        d = Displacement.translation((0.7, -0.3))
        est = estimate_predictor_gap_norms(d, d, (12, 12))
        assert est <= 1e-10

    def test_grows_with_disagreement_and_vanishes_continuously(self):
        true = Displacement.translation((1.0, 0.0))
        gaps = []
        for delta in (0.001, 0.1, 0.5):
            meas = Displacement.translation((1.0 + delta, 0.0))
            gaps.append(estimate_predictor_gap_norms(meas, true, (12, 12)))
        assert gaps[0] < gaps[1] < gaps[2]
        assert gaps[0] <= 1e-3

    def test_triangle_inequality_bound(self):
        meas = Displacement.translation((2.0, -1.0))
        true = Displacement.rotation(0.3, (5.5, 5.5))
        est = estimate_predictor_gap_norms(meas, true, (12, 12))
        # each warp has norm at most about sqrt(#pixels mapped together),
        # but the crude triangle bound uses per-operator norms <= 2 here
        assert est <= 16.0
