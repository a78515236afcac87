import math

import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from pmp_thermo.lindblad import ControlVector, TwoLevelResetModel
from pmp_thermo.pmp import (
    TrajectoryNode,
    conserved_k_residual,
    costate_matrix,
    costate_rhs,
    evaluate_residuals,
    gauge_lambda,
    lambda_from_gauge,
    pseudo_hamiltonian,
    q_min_formula,
    select_bath,
    switching_functional,
    switching_functional_scalar,
)
from pmp_thermo.planner import build_trajectory, plan_nodes
from pmp_thermo.two_level import (
    COLD,
    Baths,
    chi,
    isotherm_p,
    isotherm_q_of_p,
    isotherm_u_of_p,
    mu,
    segment_from_populations,
)

K_REF = -0.05


def cold_ctrl(u_val, gamma=1.0):
    return ControlVector(u=np.array([u_val]), gamma_c=gamma, gamma_h=0.0)


def diag_state(p):
    return np.diag([1.0 - p, p]).astype(complex)


class TestPseudoHamiltonian:
    def test_zero_at_fixed_point(self, baths03):
        model = TwoLevelResetModel(baths03)
        u = np.array([1.4])
        rho = model.equilibrium(u, "cold")
        pi = costate_matrix(0.3)
        value = pseudo_hamiltonian(rho, pi, cold_ctrl(1.4), model)
        assert abs(value) < 1e-14

    def test_conserved_along_optimal_arc(self, baths03):
        model = TwoLevelResetModel(baths03)
        mu_c = mu(K_REF, baths03.beta_c, COLD)
        for p in np.linspace(0.05, 0.5, 12):
            q = isotherm_q_of_p(p, mu_c, baths03.beta_c)
            u_val = isotherm_u_of_p(p, mu_c, baths03.beta_c)
            value = pseudo_hamiltonian(diag_state(p), costate_matrix(q), cold_ctrl(u_val), model)
            assert value == pytest.approx(K_REF, abs=1e-10)

    def test_matches_scalar_trace_arithmetic(self, baths03, rng):
        # dense-matrix evaluation vs the hand-reduced scalar -(2q+u) dp/dt
        model = TwoLevelResetModel(baths03)
        for _ in range(25):
            p = float(rng.uniform(0.01, 0.99))
            q = float(rng.uniform(-2.0, 2.0))
            u_val = float(rng.uniform(0.0, 4.0))
            kind = "cold" if rng.uniform() < 0.5 else "hot"
            beta = baths03.beta(kind)
            gammas = (1.0, 0.0) if kind == "cold" else (0.0, 1.0)
            ctrl = ControlVector(u=np.array([u_val]), gamma_c=gammas[0], gamma_h=gammas[1])
            x = math.exp(0.5 * beta * u_val)
            pdot = baths03.gamma * (1.0 / (1.0 + x * x) - p)
            expected = -(2.0 * q + u_val) * pdot
            value = pseudo_hamiltonian(diag_state(p), costate_matrix(q), ctrl, model)
            assert value == pytest.approx(expected, abs=1e-12)

    def test_normalization_term(self, baths03):
        model = TwoLevelResetModel(baths03)
        rho = 1.1 * diag_state(0.4)  # unnormalized on purpose
        base = pseudo_hamiltonian(rho, costate_matrix(0.1), cold_ctrl(1.0), model, lam=0.0)
        shifted = pseudo_hamiltonian(rho, costate_matrix(0.1), cold_ctrl(1.0), model, lam=2.0)
        assert shifted - base == pytest.approx(2.0 * 0.1, abs=1e-12)

    def test_shape_mismatch_rejected(self, baths03):
        model = TwoLevelResetModel(baths03)
        with pytest.raises(ValueError):
            pseudo_hamiltonian(diag_state(0.3), np.eye(3, dtype=complex), cold_ctrl(1.0), model)


class TestCostateRhs:
    def test_scalar_reduction_exact(self, baths03, rng):
        # general adjoint machinery reproduces dq/dt = (gamma/2)(2q + u)
        model = TwoLevelResetModel(baths03)
        for _ in range(25):
            q = float(rng.uniform(-3.0, 3.0))
            u_val = float(rng.uniform(0.0, 5.0))
            kind = "cold" if rng.uniform() < 0.5 else "hot"
            gammas = (1.0, 0.0) if kind == "cold" else (0.0, 1.0)
            ctrl = ControlVector(u=np.array([u_val]), gamma_c=gammas[0], gamma_h=gammas[1])
            pi = costate_matrix(q)
            lam = gauge_lambda(pi, ctrl, model)
            pi_dot = costate_rhs(pi, ctrl, model, lam)
            dq = 0.5 * (pi_dot[0, 0] - pi_dot[1, 1]).real
            assert dq == pytest.approx(0.5 * baths03.gamma * (2.0 * q + u_val), abs=1e-12)
            assert abs(np.trace(pi_dot)) < 1e-14

    def test_reference_arithmetic(self, baths03):
        model = TwoLevelResetModel(baths03)
        ctrl = cold_ctrl(1.0)
        pi = costate_matrix(0.25)
        pi_dot = costate_rhs(pi, ctrl, model, gauge_lambda(pi, ctrl, model))
        dq = 0.5 * (pi_dot[0, 0] - pi_dot[1, 1]).real
        assert dq == pytest.approx(0.75, abs=1e-14)

    def test_costate_equal_hamiltonian(self, baths03):
        # pi = H_u makes the adjoint argument vanish; lam = 0 freezes the costate
        model = TwoLevelResetModel(baths03)
        u = np.array([2.0])
        pi = model.hamiltonian(u)
        pi_dot = costate_rhs(pi, ControlVector(u=u, gamma_c=1.0, gamma_h=0.0), model, lam=0.0)
        assert np.max(np.abs(pi_dot)) < 1e-15

    def test_missing_adjoint_fatal(self):
        class NoAdjoint:
            dim = 2

            def hamiltonian(self, u):
                return np.zeros((2, 2), dtype=complex)

        with pytest.raises(TypeError):
            costate_rhs(costate_matrix(0.1), cold_ctrl(1.0), NoAdjoint(), 0.0)


class TestGaugeMultiplier:
    def test_zero_velocity(self, baths03):
        model = TwoLevelResetModel(baths03)
        rho_eq = model.equilibrium(np.array([1.0]), "cold")
        assert lambda_from_gauge(np.zeros((2, 2), dtype=complex), rho_eq) == 0.0

    def test_consistency_with_trace_gauge(self, baths03, rng):
        # lam from the fixed-point pairing equals the traceless-gauge value
        model = TwoLevelResetModel(baths03)
        for _ in range(10):
            u_val = float(rng.uniform(0.2, 4.0))
            q = float(rng.uniform(-1.0, 1.0))
            ctrl = cold_ctrl(u_val)
            pi = costate_matrix(q)
            lam = gauge_lambda(pi, ctrl, model)
            pi_dot = costate_rhs(pi, ctrl, model, lam)
            rho_eq = model.equilibrium(ctrl.u, "cold")
            lam_back = lambda_from_gauge(pi_dot, rho_eq, control=ctrl, model=model)
            assert lam_back == pytest.approx(lam, abs=1e-12)

    def test_fixed_point_validated(self, baths03):
        model = TwoLevelResetModel(baths03)
        ctrl = cold_ctrl(1.0)
        not_eq = diag_state(0.9)
        with pytest.raises(ValueError):
            lambda_from_gauge(np.zeros((2, 2), dtype=complex), not_eq, control=ctrl, model=model)

    def test_traceless_gauge_preserved_under_cointegration(self, baths03):
        # co-integrate state and costate matrices along an optimal arc: the
        # costate trace stays pinned at zero and q matches the closed form
        model = TwoLevelResetModel(baths03)
        mu_c = mu(K_REF, baths03.beta_c, COLD)
        seg = segment_from_populations(COLD, K_REF, baths03, 0.35, 0.12)
        c0 = chi(seg.x0, mu_c)

        def u_of_t(t):
            from scipy.optimize import brentq

            target = c0 + baths03.gamma * min(max(t, 0.0), seg.duration)
            lo, hi = min(seg.x0, seg.x1), max(seg.x0, seg.x1)
            x = brentq(lambda xx: chi(xx, mu_c) - target, lo, hi, xtol=1e-14)
            return (2.0 / baths03.beta_c) * math.log(x)

        def rhs(t, y):
            rho = (y[:4] + 1j * y[4:8]).reshape(2, 2)
            pi = (y[8:12] + 1j * y[12:16]).reshape(2, 2)
            ctrl = cold_ctrl(u_of_t(t))
            from pmp_thermo.lindblad import lindblad_rhs

            rho_dot = lindblad_rhs(rho, ctrl, model)
            lam = gauge_lambda(pi, ctrl, model)
            pi_dot = costate_rhs(pi, ctrl, model, lam)
            return np.concatenate(
                [rho_dot.reshape(-1).real, rho_dot.reshape(-1).imag, pi_dot.reshape(-1).real, pi_dot.reshape(-1).imag]
            )

        p0 = 0.35
        q0 = isotherm_q_of_p(p0, mu_c, baths03.beta_c)
        y0 = np.concatenate(
            [
                diag_state(p0).reshape(-1).real,
                diag_state(p0).reshape(-1).imag,
                costate_matrix(q0).reshape(-1).real,
                costate_matrix(q0).reshape(-1).imag,
            ]
        )
        sol = solve_ivp(rhs, [0.0, seg.duration], y0, rtol=1e-11, atol=1e-13, dense_output=False,
                        t_eval=np.linspace(0.0, seg.duration, 20))
        for i in range(sol.t.size):
            pi = (sol.y[8:12, i] + 1j * sol.y[12:16, i]).reshape(2, 2)
            assert abs(np.trace(pi)) < 1e-10
        pi_end = (sol.y[8:12, -1] + 1j * sol.y[12:16, -1]).reshape(2, 2)
        q_end = 0.5 * (pi_end[0, 0] - pi_end[1, 1]).real
        assert q_end == pytest.approx(isotherm_q_of_p(0.12, mu_c, baths03.beta_c), abs=1e-7)


class TestQMinFormula:
    def test_zero_duration(self):
        pi = costate_matrix(0.4)
        rho = diag_state(0.3)
        assert q_min_formula(pi, rho, pi, rho, 0.0) == 0.0

    def test_matches_arc_heat(self, baths03):
        # boundary terms minus the multiplier integral reproduce the arc heat
        # (gap swept from 1 to 2 in cold-temperature units)
        mu_c = mu(K_REF, baths03.beta_c, COLD)
        p0 = isotherm_p(math.exp(0.5), mu_c)
        p1 = isotherm_p(math.exp(1.0), mu_c)
        seg = segment_from_populations(COLD, K_REF, baths03, p0, p1)

        def lam_of_x(x):
            u_val = (2.0 / baths03.beta_c) * math.log(x)
            q = isotherm_q_of_p(isotherm_p(x, mu_c), mu_c, baths03.beta_c)
            p_eq = 1.0 / (1.0 + x * x)
            return 0.5 * baths03.gamma * (2.0 * q + u_val) * (2.0 * p_eq - 1.0)

        def dt_dx(x):
            return (x * x - 2.0 * x / mu_c - 1.0) / (baths03.gamma * (x * x + 1.0) * x)

        lam_integral, err = quad(lambda x: lam_of_x(x) * dt_dx(x), seg.x0, seg.x1, epsabs=1e-13, epsrel=1e-12)
        assert err < 1e-9
        q0 = isotherm_q_of_p(p0, mu_c, baths03.beta_c)
        q1 = isotherm_q_of_p(p1, mu_c, baths03.beta_c)
        value = q_min_formula(
            costate_matrix(q0), diag_state(p0), costate_matrix(q1), diag_state(p1), lam_integral
        )
        assert value == pytest.approx(seg.heat, rel=1e-6)
        assert value == pytest.approx(0.257, abs=2e-3)

    def test_cyclic_reduces_to_multiplier_integral(self):
        pi = costate_matrix(-0.7)
        rho = diag_state(0.42)
        assert q_min_formula(pi, rho, pi, rho, 1.234) == pytest.approx(-1.234, abs=1e-15)


class TestSwitchingFunctional:
    def test_zero_gap(self, baths03):
        model = TwoLevelResetModel(baths03)
        a = switching_functional(diag_state(0.3), costate_matrix(0.5), np.array([0.0]), model)
        assert abs(a) < 1e-15

    def test_equal_temperatures(self):
        baths = Baths(beta_c=1.0, beta_h=1.0)
        model = TwoLevelResetModel(baths)
        a = switching_functional(diag_state(0.3), costate_matrix(0.5), np.array([1.5]), model)
        assert abs(a) < 1e-15

    def test_matches_closed_form(self, baths03, rng):
        model = TwoLevelResetModel(baths03)
        for _ in range(25):
            p = float(rng.uniform(0.01, 0.99))
            q = float(rng.uniform(-2.0, 2.0))
            u_val = float(rng.uniform(0.0, 6.0))
            a_matrix = switching_functional(diag_state(p), costate_matrix(q), np.array([u_val]), model)
            a_scalar = switching_functional_scalar(p, q, u_val, baths03)
            assert a_matrix == pytest.approx(a_scalar, abs=1e-13)

    def test_sign_set_by_costate_combination(self, baths03):
        # at u = 1: 2q + u < 0 admits the cold bath (A > 0) and vice versa
        model = TwoLevelResetModel(baths03)
        u_val = 1.0
        a_cold = switching_functional(diag_state(0.3), costate_matrix(-1.0), np.array([u_val]), model)
        a_hot = switching_functional(diag_state(0.3), costate_matrix(+0.2), np.array([u_val]), model)
        assert a_cold > 0.0  # q < -u/2
        assert a_hot < 0.0  # q > -u/2

    def test_bang_bang_selection(self):
        choice = select_bath(+0.1, current="hot", gamma=2.0)
        assert (choice.label, choice.gamma_c, choice.gamma_h) == ("cold", 2.0, 0.0)
        choice = select_bath(-0.1, current="cold", gamma=2.0)
        assert (choice.label, choice.gamma_c, choice.gamma_h) == ("hot", 0.0, 2.0)
        assert select_bath(0.0, current="hot").label == "hot"
        assert select_bath(0.0, current="cold").label == "cold"


class TestResiduals:
    def test_analytic_arc_conservation(self, baths03):
        plan = build_trajectory(0.07, 1.0, 0.26, 6.0, K_REF, 0, baths03)
        nodes = plan_nodes(plan, samples_per_segment=100)
        model = TwoLevelResetModel(baths03)
        assert conserved_k_residual(nodes, K_REF, model) < 1e-9

    def test_perturbation_grows_linearly(self, baths03):
        model = TwoLevelResetModel(baths03)
        mu_c = mu(K_REF, baths03.beta_c, COLD)
        p = 0.2
        q = isotherm_q_of_p(p, mu_c, baths03.beta_c)
        u_val = isotherm_u_of_p(p, mu_c, baths03.beta_c)

        def residual_with(dq):
            node = TrajectoryNode(
                t=0.0, rho=diag_state(p), pi=costate_matrix(q + dq), control=cold_ctrl(u_val)
            )
            return conserved_k_residual([node], K_REF, model)

        r1, r2 = residual_with(1e-3), residual_with(2e-3)
        assert r1 > 1e-5
        assert r2 == pytest.approx(2.0 * r1, rel=1e-3)

    def test_equilibrium_trajectory_residual_is_rate(self, baths03):
        model = TwoLevelResetModel(baths03)
        u = np.array([1.2])
        rho_eq = model.equilibrium(u, "cold")
        node = TrajectoryNode(t=0.0, rho=rho_eq, pi=costate_matrix(0.4), control=cold_ctrl(1.2))
        assert conserved_k_residual([node], K_REF, model) == pytest.approx(abs(K_REF), abs=1e-13)

    def test_full_residual_report(self, baths03):
        plan = build_trajectory(0.07, 1.0, 0.26, 6.0, K_REF, 0, baths03)
        nodes = plan_nodes(plan, samples_per_segment=200)
        model = TwoLevelResetModel(baths03)
        arc_lengths = [len(nodes) // 2, len(nodes) - len(nodes) // 2]
        report = evaluate_residuals(nodes[: arc_lengths[0]], K_REF, model)
        assert report.conservation_residual < 1e-9
        assert report.stationarity_residual < 1e-9
        assert report.costate_ode_residual < 1e-6
        assert report.nodes == arc_lengths[0]
        d = report.to_dict()
        assert set(d) == {"max_conservation", "max_stationarity", "max_costate_ode", "nodes"}
