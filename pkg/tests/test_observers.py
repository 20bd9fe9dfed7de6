import numpy as np
import pytest

from neurobs.nn import Activation, NeuralNet
from neurobs.observers import (
    ChainPlant,
    GsloObserver,
    LtiPlant,
    MimoPlant,
    NnFeedback,
    OpenLoop,
    OutputFeedback,
    SatAdrc,
    control_eval,
    gslo_build,
    kalman_rhs,
    neural_chain_rhs,
    neural_lti_rhs,
    neural_mimo_rhs,
    sat,
    uio_build,
)
from neurobs.sdp import hurwitz_check
from conftest import random_net


def small_relu_net():
    return NeuralNet(
        (np.array([[1.0], [-1.0]]), np.array([[1.0, 1.0]]), np.array([[2.0]])),
        Activation.relu(),
    )


VEHICLE_BW = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])


class TestSat:
    def test_clamps(self):
        assert sat(10.0, 15.0) == 10.0
        assert sat(10.0, -15.0) == -10.0
        assert sat(10.0, 3.0) == 3.0


class TestControlEval:
    def test_sat_adrc_hand_case(self):
        ctrl = SatAdrc(rho=1.0, k=[-25.0, -10.0], M=[10.0, 10.0, 10.0], b=1.0)
        u = control_eval(ctrl, 0.0, np.array([0.1, 0.0, 0.0]), None)
        assert u[0] == pytest.approx(-2.5)

    def test_sat_adrc_zero(self):
        ctrl = SatAdrc(rho=1.0, k=[-25.0, -10.0], M=[10.0, 10.0, 10.0])
        assert control_eval(ctrl, 0.0, np.zeros(3), None)[0] == 0.0

    def test_sat_adrc_pinned(self):
        ctrl = SatAdrc(rho=1.0, k=[-25.0, -10.0], M=[10.0, 10.0, 10.0])
        u1 = control_eval(ctrl, 0.0, np.array([100.0, 0.0, 0.0]), None)
        u2 = control_eval(ctrl, 0.0, np.array([1000.0, 0.0, 0.0]), None)
        assert u1[0] == u2[0] == -250.0

    def test_sat_adrc_bound(self, rng):
        ctrl = SatAdrc(rho=2.0, k=[-25.0, -10.0], M=[10.0, 5.0, 8.0], b=0.5)
        bound = ctrl.bound()
        for _ in range(200):
            xhat = rng.uniform(-100, 100, 3)
            assert abs(control_eval(ctrl, 0.0, xhat, None)[0]) <= bound + 1e-12

    def test_output_feedback_and_open_loop(self):
        ctrl = OutputFeedback(np.array([[2.0, 0.0]]))
        assert control_eval(ctrl, 0.0, None, np.array([3.0, 1.0]))[0] == 6.0
        assert control_eval(OpenLoop(n_inputs=2), 1.0, None, None).shape == (2,)

    def test_nn_feedback(self, rng):
        net = random_net(rng, in_dim=3)
        xhat = rng.uniform(-1, 1, 3)
        got = control_eval(NnFeedback(net), 0.0, xhat, None)
        assert np.allclose(got, net.forward(xhat))


class TestLtiRhs:
    A = np.array([[0.0, 1.0], [-2.0, -3.0]])
    B = np.array([[0.0], [1.0]])
    C = np.array([[1.0, 0.0]])

    def test_zero_innovation_gives_model_flow(self, rng):
        net = random_net(rng, in_dim=1, out_dim=2)
        xhat = rng.uniform(-1, 1, 2)
        u = rng.uniform(-1, 1, 1)
        y = self.C @ xhat
        got = neural_lti_rhs(self.A, self.B, self.C, net, xhat, u, y)
        assert np.array_equal(got, self.A @ xhat + self.B @ u)

    def test_zero_everything(self, rng):
        net = random_net(rng, in_dim=1, out_dim=2)
        got = neural_lti_rhs(self.A, self.B, self.C, net, np.zeros(2),
                             np.zeros(1), np.zeros(1))
        assert np.allclose(got, 0.0)

    def test_scalar_example_reuses_forward(self):
        # A = 0, B = 0, C = 1, xhat = 0, y = 3: injection is net(3) = 9
        got = neural_lti_rhs(
            np.zeros((1, 1)), np.zeros((1, 1)), np.eye(1), small_relu_net(),
            np.zeros(1), np.zeros(1), np.array([3.0]),
        )
        assert got[0] == pytest.approx(9.0)


class TestChainRhs:
    def nets(self, rng, n):
        return [random_net(rng, in_dim=1, out_dim=1) for _ in range(n + 1)]

    def test_zero_innovation_is_shift_plus_input(self, rng):
        nets = self.nets(rng, 2)
        xhat = rng.uniform(-1, 1, 3)
        u = np.array([0.7])
        y = np.array([xhat[0]])
        dx = neural_chain_rhs(2, 2.0, 0.1, nets, xhat, u, y)
        assert np.allclose(dx, [xhat[1], xhat[2] + 2.0 * 0.7, 0.0])

    def test_gain_exponent_pattern(self, rng):
        # n = 2: gains eps^1, eps^0, eps^-1 on the three networks
        nets = self.nets(rng, 2)
        eps = 0.1
        xhat = np.zeros(3)
        y = np.array([1.0])
        innov = np.array([1.0 * eps ** -2])
        vals = [float(net.forward(innov)[0]) for net in nets]
        dx = neural_chain_rhs(2, 1.0, eps, nets, xhat, np.zeros(1), y)
        assert dx[0] == pytest.approx(eps * vals[0])
        assert dx[1] == pytest.approx(vals[1])
        assert dx[2] == pytest.approx(vals[2] / eps)

    def test_extended_rate_doubles_when_eps_halves(self):
        # linear nets make the scaling exact: dx_3 = w (y - x1) / eps^{n+1}
        lin = NeuralNet(
            (np.array([[1.0]]), np.array([[0.0]]), np.array([[1.0]])),
            Activation.relu(),
        )
        nets = [lin] * 3
        y = np.array([0.5])
        a = neural_chain_rhs(2, 1.0, 0.2, nets, np.zeros(3), np.zeros(1), y)
        b = neural_chain_rhs(2, 1.0, 0.1, nets, np.zeros(3), np.zeros(1), y)
        assert b[2] / a[2] == pytest.approx((0.2 / 0.1) ** 3)

    def test_rejects_bad_eps(self, rng):
        with pytest.raises(ValueError):
            neural_chain_rhs(2, 1.0, 0.0, self.nets(rng, 2), np.zeros(3),
                             np.zeros(1), np.zeros(1))


class TestMimoRhs:
    def test_zero_innovation_linear_flow(self, rng):
        A = rng.normal(size=(4, 4))
        B = rng.normal(size=(4, 2))
        C = np.eye(4)
        nets = [random_net(rng, in_dim=4, out_dim=4),
                random_net(rng, in_dim=4, out_dim=2)]
        x1 = rng.uniform(-1, 1, 4)
        x2 = rng.uniform(-1, 1, 2)
        u = rng.uniform(-1, 1, 2)
        y = C @ x1
        d1, d2 = neural_mimo_rhs(A, B, VEHICLE_BW, C, 0.1, nets, x1, x2, u, y)
        assert np.allclose(d1, VEHICLE_BW @ x2 + A @ x1 + B @ u)
        assert np.allclose(d2, 0.0)

    def test_uncertainty_estimate_never_enters_output(self, rng):
        # output estimate is C x1hat only: changing x2hat with matched y
        # leaves the innovation term unchanged
        A = rng.normal(size=(4, 4))
        B = rng.normal(size=(4, 2))
        C = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
        nets = [random_net(rng, in_dim=2, out_dim=4),
                random_net(rng, in_dim=2, out_dim=2)]
        x1 = rng.uniform(-1, 1, 4)
        u = np.zeros(2)
        y = rng.uniform(-1, 1, 2)
        d1a, d2a = neural_mimo_rhs(A, B, VEHICLE_BW, C, 0.1, nets, x1,
                                   np.zeros(2), u, y)
        d1b, d2b = neural_mimo_rhs(A, B, VEHICLE_BW, C, 0.1, nets, x1,
                                   np.ones(2), u, y)
        assert np.allclose(d2a, d2b)
        assert np.allclose(d1b - d1a, VEHICLE_BW @ np.ones(2))

    def test_vehicle_dimension_wiring(self, rng):
        from neurobs.scenarios import sample_config, vehicle_matrices

        A, B, B_w, C = vehicle_matrices(sample_config("vehicle"))
        nets = [random_net(rng, in_dim=4, out_dim=4),
                random_net(rng, in_dim=4, out_dim=2)]
        d1, d2 = neural_mimo_rhs(A, B, B_w, C, 0.1, nets, np.zeros(4),
                                 np.zeros(2), np.zeros(2), np.zeros(4))
        assert d1.shape == (4,) and d2.shape == (2,)


class TestKalmanRhs:
    def test_innovation_zero(self, rng):
        A = rng.normal(size=(2, 2))
        B = rng.normal(size=(2, 1))
        C = np.array([[1.0, 0.0]])
        xhat = rng.uniform(-1, 1, 2)
        u = rng.uniform(-1, 1, 1)
        got = kalman_rhs(A, B, C, np.ones((2, 1)), xhat, u, C @ xhat)
        assert np.allclose(got, A @ xhat + B @ u)

    def test_zero_gain_open_loop(self, rng):
        A = rng.normal(size=(2, 2))
        B = rng.normal(size=(2, 1))
        C = np.array([[1.0, 0.0]])
        xhat = rng.uniform(-1, 1, 2)
        got = kalman_rhs(A, B, C, np.zeros((2, 1)), xhat, np.zeros(1),
                         np.array([5.0]))
        assert np.allclose(got, A @ xhat)


class TestGslo:
    def test_design_is_stable(self):
        obs = gslo_build(1.0, 1.0, 0.5)
        C = np.array([[1.0, 0.0]])
        assert hurwitz_check(obs.A_design - obs.L @ C)

    def test_zero_initial_state_and_no_extended_output(self):
        obs = gslo_build(1.0, 1.0, 0.5)
        assert np.all(obs.init() == 0.0)
        assert obs.extended_estimate(obs.init()) is None
        assert obs.state_dim == 2


class TestUio:
    def vehicle(self, rng=None):
        from neurobs.scenarios import sample_config, vehicle_matrices

        return vehicle_matrices(sample_config("vehicle"))

    def test_vehicle_hand_blocks(self):
        A, B, B_w, C = self.vehicle()
        uio = uio_build(A, B, B_w, C)
        np.testing.assert_allclose(uio.E, -np.diag([0.0, 1.0, 0.0, 1.0]), atol=1e-12)
        T = np.eye(4) + uio.E @ C
        np.testing.assert_allclose(T, np.diag([1.0, 0.0, 1.0, 0.0]), atol=1e-12)
        assert np.max(np.abs(T @ B_w)) == 0.0

    def test_error_flow_is_autonomous(self, rng):
        # T A - L C - N T = 0 makes e' = N e regardless of the uncertainty
        A, B, B_w, C = self.vehicle()
        uio = uio_build(A, B, B_w, C)
        T = np.eye(4) + uio.E @ C
        resid = T @ A - uio.L @ C - uio.N @ T
        assert np.max(np.abs(resid)) <= 1e-9
        assert np.max(np.abs(T @ B - uio.G)) == 0.0
        assert hurwitz_check(uio.N)

    def test_rank_condition_enforced(self):
        A, B, B_w, C = self.vehicle()
        C_bad = np.array([[1.0, 0.0, 0.0, 0.0]])  # C B_w = 0 kills the rank
        with pytest.raises(ValueError):
            uio_build(A, B, B_w, C_bad)


class TestPlants:
    def test_chain_extended_truth_mismatch_term(self):
        plant = ChainPlant(2, 0.8, lambda t, x, w: 1.5)
        # x_n' - b0 u = f + (b - b0) u
        got = plant.extended_truth(0.0, np.zeros(2), np.array([2.0]), 0.0, 1.0)
        assert got[0] == pytest.approx(1.5 + (0.8 - 1.0) * 2.0)

    def test_lti_output(self, rng):
        p = LtiPlant(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)),
                     np.array([[1.0, 0.0]]))
        x = rng.uniform(-1, 1, 2)
        assert p.output(x)[0] == x[0]
