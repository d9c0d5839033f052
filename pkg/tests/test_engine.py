"""Step-parameter construction and the per-frame primal-dual iteration."""

import numpy as np
import pytest

from onlinepd.core import SeededRng, norm_2inf
from onlinepd.diagnostics import solve_static
from onlinepd.engine import (
    FrameProblem,
    PdState,
    StepParams,
    make_unaccelerated_params,
    popd2_step,
    run_online,
)
from onlinepd.experiments import psnr
from onlinepd.operators import Displacement, GradOp
from onlinepd.predictors import NoPrediction, PrimalOnly
from onlinepd.proxops import DataTermL2, TVRegulariser


K2 = 8.0


def denoise_problem(z, alpha=0.25, index=0, displacement=None):
    d = displacement or Displacement.translation((0.0, 0.0))
    return FrameProblem(data_term=DataTermL2(z=z), regulariser=TVRegulariser(alpha),
                        K=GradOp(boundary="neumann"), displacement_true=d,
                        displacement_measured=d, index=index)


class TestMakeUnacceleratedParams:
    def test_denoising_step_sizes(self):
        p = make_unaccelerated_params(tau=0.01, L=0.0, kappa=1.0,
                                      K_norm_bound=np.sqrt(K2), alpha=0.25,
                                      gamma_F=1.0)
        assert p.sigma == pytest.approx(12.5, abs=1e-12)
        assert p.eta == pytest.approx(p.tau, abs=1e-15)
        assert p.phi == 1.0
        assert p.psi == pytest.approx(p.tau / p.sigma, abs=1e-15)

    def test_tomography_step_sizes(self):
        p = make_unaccelerated_params(tau=0.003, L=300.0, kappa=1.0,
                                      K_norm_bound=np.sqrt(K2), alpha=0.25)
        assert p.sigma == pytest.approx((1.0 - 0.9) / (0.003 * K2), abs=1e-12)
        assert p.sigma == pytest.approx(4.166666666666667, abs=1e-12)

    def test_infeasible_tau_rejected(self):
        with pytest.raises(ValueError):
            make_unaccelerated_params(tau=0.004, L=300.0, kappa=1.0,
                                      K_norm_bound=np.sqrt(K2), alpha=0.25)

    def test_metric_condition_saturated(self):
        rng = SeededRng(1)
        for _ in range(20):
            tau = 0.001 + 0.02 * float(rng.uniform(1)[0])
            L = 40.0 * float(rng.uniform(1)[0])
            kappa = 0.5 + 0.5 * float(rng.uniform(1)[0])
            if tau * L / kappa >= 1.0:
                continue
            p = make_unaccelerated_params(tau=tau, L=L, kappa=kappa,
                                          K_norm_bound=np.sqrt(K2), alpha=0.25)
            lhs = tau * L / kappa + tau * p.sigma * K2
            assert lhs == pytest.approx(1.0, abs=1e-12)

    def test_strong_convexity_bookkeeping(self):
        p = make_unaccelerated_params(tau=0.01, L=0.0, kappa=1.0,
                                      K_norm_bound=np.sqrt(K2), alpha=0.25,
                                      gamma_F=1.0)
        assert p.gamma == 1.0
        q = make_unaccelerated_params(tau=0.001, L=10.0, kappa=0.5,
                                      K_norm_bound=np.sqrt(K2), alpha=0.25,
                                      gamma_F=1.0, gamma_E=6.0)
        assert q.gamma == pytest.approx(1.0 + 6.0 - 0.5 * 10.0)
        with pytest.raises(ValueError):
            make_unaccelerated_params(tau=0.001, L=10.0, kappa=1.0,
                                      K_norm_bound=np.sqrt(K2), alpha=0.25,
                                      gamma_F=1.0, gamma_E=2.0)


class TestStepParamsValidation:
    def base(self, **overrides):
        kw = dict(tau=0.01, sigma=12.5, eta=0.01, phi=1.0, psi=0.01 / 12.5,
                  gamma=1.0, rho=0.0, kappa=1.0, L=0.0, alpha=0.25,
                  K_norm_bound=np.sqrt(K2))
        kw.update(overrides)
        return StepParams(**kw)

    def test_valid_construction(self):
        p = self.base()
        assert p.tau == 0.01

    def test_coupling_violation(self):
        with pytest.raises(ValueError):
            self.base(eta=0.02)

    def test_metric_positivity_violation(self):
        with pytest.raises(ValueError):
            self.base(sigma=20.0, psi=0.01 / 20.0)

    def test_kappa_range(self):
        with pytest.raises(ValueError):
            self.base(kappa=0.0)
        with pytest.raises(ValueError):
            self.base(kappa=1.5)

    def test_positivity(self):
        with pytest.raises(ValueError):
            self.base(tau=-0.01)
        with pytest.raises(ValueError):
            self.base(alpha=0.0)


class TestPopd2Step:
    def params(self, tau=0.01):
        return make_unaccelerated_params(tau=tau, L=0.0, kappa=1.0,
                                         K_norm_bound=np.sqrt(K2), alpha=0.25,
                                         gamma_F=1.0)

    def test_fixed_point_on_constant_frame(self):
        z = np.full((6, 6), 0.7)
        problem = denoise_problem(z)
        state = PdState(x=z.copy(), y=np.zeros((6, 6, 2)),
                        x_pred=z.copy(), y_pred=np.zeros((6, 6, 2)), k=-1)
        out = popd2_step(problem, NoPrediction(), state, self.params())
        assert np.allclose(out.x, z, atol=1e-14)
        assert np.max(np.abs(out.y)) <= 1e-14

    def test_matches_hand_unrolled_scalar_reference(self):
        # one step on a 1x2 image, written out in plain scalar arithmetic
        z = np.array([[0.0, 1.0]])
        x = np.array([[0.2, 0.5]])
        y = np.zeros((1, 2, 2))
        y[0, 0, 1] = 0.1
        alpha, tau = 0.25, 0.01
        params = self.params(tau=tau)
        sigma = params.sigma

        # primal: x+ = (x - tau D^T y + tau z) / (1 + tau)
        dty = np.array([-y[0, 0, 1], y[0, 0, 1]])  # D^T y for the 1x2 grid
        xp = (x[0] - tau * dty + tau * z[0]) / (1.0 + tau)
        # dual: project y + sigma D(2 x+ - x) onto the alpha-ball
        jump = 2.0 * (xp[1] - xp[0]) - (x[0, 1] - x[0, 0])
        y1 = y[0, 0, 1] + sigma * jump
        y1 = y1 * min(1.0, alpha / abs(y1)) if y1 != 0 else 0.0

        problem = denoise_problem(z, alpha=alpha)
        state = PdState(x=x, y=y, x_pred=x, y_pred=y, k=-1)
        out = popd2_step(problem, NoPrediction(), state, params)
        assert out.x[0, 0] == pytest.approx(xp[0], abs=1e-12)
        assert out.x[0, 1] == pytest.approx(xp[1], abs=1e-12)
        assert out.y[0, 0, 1] == pytest.approx(y1, abs=1e-12)
        assert np.max(np.abs(out.y[0, 1])) == 0.0

    def test_stationary_at_static_saddle(self):
        rng = SeededRng(2)
        z = np.clip(0.5 + 0.3 * rng.standard_normal((16, 16)), 0.0, 1.0)
        problem = denoise_problem(z)
        params = make_unaccelerated_params(tau=1.0 / np.sqrt(K2), L=0.0, kappa=1.0,
                                           K_norm_bound=np.sqrt(K2), alpha=0.25,
                                           gamma_F=1.0)
        saddle = solve_static(problem, max_iters=200000, gap_tol=0.0, params=params)
        state = PdState(x=saddle.x_opt, y=saddle.y_opt,
                        x_pred=saddle.x_opt, y_pred=saddle.y_opt, k=-1)
        out = popd2_step(problem, NoPrediction(), state, params)
        assert np.max(np.abs(out.x - saddle.x_opt)) <= 1e-10
        assert np.max(np.abs(out.y - saddle.y_opt)) <= 1e-10

    def test_dual_feasible_after_every_step(self):
        rng = SeededRng(3)
        params = self.params()
        state = PdState.zeros((12, 12))
        alpha = 0.25
        for k in range(20):
            z = rng.standard_normal((12, 12))
            problem = denoise_problem(z, alpha=alpha, index=k)
            state = popd2_step(problem, PrimalOnly(), state, params)
            assert norm_2inf(state.y) <= alpha + 1e-12

    def test_predictions_retained_in_state(self):
        rng = SeededRng(4)
        z = rng.standard_normal((8, 8))
        d = Displacement.translation((1.0, 0.0))
        problem = denoise_problem(z, displacement=d)
        x0 = rng.standard_normal((8, 8))
        state = PdState(x=x0, y=np.zeros((8, 8, 2)), x_pred=x0,
                        y_pred=np.zeros((8, 8, 2)), k=-1)
        out = popd2_step(problem, PrimalOnly(), state, self.params())
        assert np.allclose(out.x_pred[:-1, :], x0[1:, :])
        assert out.k == problem.index

    def test_multiple_inner_steps_improve_fit(self):
        rng = SeededRng(5)
        truth = np.clip(0.5 + 0.2 * rng.standard_normal((16, 16)), 0.0, 1.0)
        z = truth + 0.3 * rng.standard_normal((16, 16))
        problem = denoise_problem(z)
        params = self.params()
        one = popd2_step(problem, NoPrediction(), PdState.zeros((16, 16)), params)
        ten = popd2_step(problem, NoPrediction(), PdState.zeros((16, 16)), params,
                         steps=10)
        saddle = solve_static(problem, max_iters=3000, gap_tol=1e-12)
        err_one = np.sum((one.x - saddle.x_opt) ** 2)
        err_ten = np.sum((ten.x - saddle.x_opt) ** 2)
        assert err_ten < err_one


class TestRunOnline:
    def test_empty_sequence_rejected(self):
        params = make_unaccelerated_params(tau=0.01, L=0.0, kappa=1.0,
                                           K_norm_bound=np.sqrt(K2), alpha=0.25,
                                           gamma_F=1.0)
        with pytest.raises(ValueError):
            run_online([], NoPrediction(), params)

    def test_stationary_frames_monotone_psnr_tail(self):
        rng = SeededRng(6)
        truth = np.clip(0.5 + 0.2 * rng.standard_normal((16, 16)), 0.0, 1.0)
        z = truth + 0.2 * rng.standard_normal((16, 16))
        problems = [denoise_problem(z, index=k) for k in range(10)]
        params = make_unaccelerated_params(tau=0.3, L=0.0, kappa=1.0,
                                           K_norm_bound=np.sqrt(K2), alpha=0.25,
                                           gamma_F=1.0)
        seen = []
        run_online(problems, NoPrediction(), params,
                   sinks=(lambda k, state, problem, wall:
                          seen.append(psnr(state.x, truth)),))
        tail = seen[5:]
        assert all(b >= a - 1e-9 for a, b in zip(tail, tail[1:]))

    def test_deterministic_final_state(self):
        rng = SeededRng(7)
        zs = [rng.standard_normal((10, 10)) for _ in range(5)]
        params = make_unaccelerated_params(tau=0.01, L=0.0, kappa=1.0,
                                           K_norm_bound=np.sqrt(K2), alpha=0.25,
                                           gamma_F=1.0)
        a = run_online([denoise_problem(z, index=k) for k, z in enumerate(zs)],
                       PrimalOnly(), params)
        b = run_online([denoise_problem(z, index=k) for k, z in enumerate(zs)],
                       PrimalOnly(), params)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)

    def test_sinks_receive_every_frame_in_order(self):
        rng = SeededRng(8)
        zs = [rng.standard_normal((6, 6)) for _ in range(4)]
        params = make_unaccelerated_params(tau=0.01, L=0.0, kappa=1.0,
                                           K_norm_bound=np.sqrt(K2), alpha=0.25,
                                           gamma_F=1.0)
        order = []
        run_online([denoise_problem(z, index=k) for k, z in enumerate(zs)],
                   NoPrediction(), params,
                   sinks=(lambda k, state, problem, wall: order.append(k),))
        assert order == [0, 1, 2, 3]
