import json

import numpy as np
import pytest

from neurobs.nn import Activation, NeuralNet, ShapedNN, SignalStack, isolate
from neurobs.lmi import (
    LmiInstance,
    assemble_corollary2,
    assemble_theorem1,
    assemble_theorem2,
    assemble_theorem3,
    assemble_theorem4,
    qc_matrices,
    qc_value,
    shift_matrix,
    unit_output_row,
)
from neurobs.sdp import lyapunov_solve
from conftest import random_net


def expanded_qc_sum(alpha, beta, xi, w, lam):
    """Independent oracle: 2 * sum_i lam_i (w_i - a_i xi_i)(b_i xi_i - w_i)."""
    return 2.0 * sum(
        l * (wi - a * x) * (b * x - wi)
        for l, a, b, x, wi in zip(lam, alpha, beta, xi, w)
    )


def zero_inner_net(n_o, n_s, shortcut, hidden=2, activation=None):
    act = activation or Activation.relu()
    return NeuralNet(
        (np.zeros((hidden, n_o)), np.zeros((n_s, hidden)), np.asarray(shortcut, float)),
        act,
    )


class TestQcMatrices:
    def test_hand_case(self):
        qc = qc_matrices([0.0], [1.0])
        M = qc.selector.T @ qc.multiplier([2.0]) @ qc.selector
        assert np.allclose(M, [[0.0, 2.0], [2.0, -4.0]])
        xi, w = 0.7, -0.3
        val = np.array([xi, w]) @ M @ np.array([xi, w])
        assert val == pytest.approx(4 * xi * w - 4 * w * w)

    def test_zero_multiplier(self, rng):
        qc = qc_matrices([0.0, 0.1], [1.0, 2.0])
        assert np.allclose(qc.multiplier([0.0, 0.0]), 0.0)
        z = rng.uniform(-1, 1, 4)
        assert qc.value(z[:2], z[2:], [0.0, 0.0]) == 0.0

    def test_matches_expanded_sum(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 6))
            alpha = rng.uniform(-1, 0.5, n)
            beta = alpha + rng.uniform(0, 2, n)
            lam = rng.uniform(0, 3, n)
            xi = rng.uniform(-2, 2, n)
            w = rng.uniform(-2, 2, n)
            got = qc_matrices(alpha, beta).value(xi, w, lam)
            assert got == pytest.approx(expanded_qc_sum(alpha, beta, xi, w, lam))

    def test_invalid_sector_rejected(self):
        with pytest.raises(ValueError):
            qc_matrices([1.0], [0.5])


class TestQcValue:
    def test_zero_stack(self, rng):
        net = random_net(rng, in_dim=2)
        iso = isolate(ShapedNN(net, np.eye(2), np.eye(net.output_dim)))
        st = SignalStack(np.zeros(iso.n_sigma), np.zeros(iso.n_sigma))
        assert qc_value(iso, st, np.ones(iso.n_sigma)) == 0.0

    def test_genuine_stack_nonnegative(self, rng):
        for _ in range(200):
            net = random_net(rng)
            iso = isolate(
                ShapedNN(net, np.eye(net.input_dim), np.eye(net.output_dim))
            )
            st = net.signals(rng.uniform(-4, 4, net.input_dim))
            lam = rng.uniform(0, 2, iso.n_sigma)
            assert qc_value(iso, st, lam) >= -1e-12

    def test_forged_witness_negative(self):
        net = NeuralNet(
            (np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1))), Activation.relu()
        )
        iso = isolate(ShapedNN(net, np.eye(1), np.eye(1)))
        # w = 2 cannot be relu(1); the form value is 2*1*(2-0)*(1-2) = -4
        forged = SignalStack(np.array([1.0]), np.array([2.0]))
        assert qc_value(iso, forged, [1.0]) == pytest.approx(-4.0)


def _affinity_check(inst, rng):
    y1 = rng.uniform(-1, 1, inst.n_vars)
    y2 = rng.uniform(-1, 1, inst.n_vars)
    for j in range(len(inst.constraints)):
        a = inst.constraint_value(j, y1)
        b = inst.constraint_value(j, y2)
        zero = inst.constraint_value(j, np.zeros(inst.n_vars))
        both = inst.constraint_value(j, y1 + y2)
        scale = max(1.0, np.max(np.abs(both)))
        assert np.max(np.abs(a + b - zero - both)) <= 1e-12 * scale


def _symmetry_check(inst, rng):
    y = rng.uniform(-1, 1, inst.n_vars)
    for j in range(len(inst.constraints)):
        F = inst.constraint_value(j, y)
        assert np.array_equal(F, F.T)


class TestTheorem1:
    A = np.array([[0.0, 1.0], [-2.0, -3.0]])
    C = np.array([[1.0, 0.0]])

    def test_dimensions(self, rng):
        net = random_net(rng, in_dim=1, out_dim=2)
        inst = assemble_theorem1(self.A, self.C, net)
        n_sig = net.n_sigma
        assert inst.constraints[0].dim == 2 + n_sig
        assert inst.n_vars == 3 + n_sig
        assert inst.provenance["theorem"] == "1"

    def test_feasible_point_substitution(self):
        # Zero inner weights: the main constraint at (P, lam) collapses to
        # diag(-Q, -2 diag(lam)) with P the Lyapunov solution for A + W C.
        shortcut = np.array([[-1.0], [0.0]])
        net = zero_inner_net(1, 2, shortcut)
        Atil = self.A + shortcut @ self.C
        P = lyapunov_solve(Atil, np.eye(2))
        inst = assemble_theorem1(self.A, self.C, net)
        lam = np.ones(net.n_sigma)
        F = inst.constraint_value(0, inst.pack(P, lam))
        expect = np.diag([-1.0, -1.0] + [-2.0] * net.n_sigma)
        assert np.max(np.abs(F - expect)) <= 1e-10

    def test_affinity_and_symmetry(self, rng):
        net = random_net(rng, in_dim=1, out_dim=2)
        inst = assemble_theorem1(self.A, self.C, net)
        _affinity_check(inst, rng)
        _symmetry_check(inst, rng)

    def test_dim_mismatch_rejected(self, rng):
        net = random_net(rng, in_dim=2, out_dim=2)
        with pytest.raises(ValueError):
            assemble_theorem1(self.A, self.C, net)


class TestTheorem2:
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -2.0, -2.0]])
    B = np.array([[0.0], [0.0], [1.0]])
    C = np.array([[1.0, 0.0, 0.0]])

    def nets(self, rng):
        net1 = random_net(rng, in_dim=3, out_dim=1)  # feedback
        net2 = random_net(rng, in_dim=1, out_dim=3)  # injection
        return net1, net2

    def test_decision_count(self, rng):
        net1, net2 = self.nets(rng)
        inst = assemble_theorem2(self.A, self.B, self.C, net1, net2)
        n_s = 3
        assert inst.dim_p == 2 * n_s
        assert inst.n_vars == n_s * (2 * n_s + 1) + net1.n_sigma + net2.n_sigma

    def test_stacked_block_diagonality(self, rng):
        net1, net2 = self.nets(rng)
        inst = assemble_theorem2(self.A, self.B, self.C, net1, net2)
        # evaluated nowhere: structural property is carried by the isolation,
        # checked indirectly through the constraint dimension
        assert inst.constraints[0].dim == 6 + net1.n_sigma + net2.n_sigma
        _affinity_check(inst, np.random.default_rng(0))

    def test_block_diag_feasible_point(self):
        # Both nets with zero inner weights and stabilizing shortcuts: the
        # main constraint at diag(P1, P2) collapses to the dominant form.
        K = np.array([[-1.0, -3.0, -1.0]])
        net1 = zero_inner_net(3, 1, K)
        W2 = np.array([[-2.0], [-1.0], [0.0]])
        net2 = zero_inner_net(1, 3, W2)
        A1 = self.A + self.B @ K
        A2 = self.A + W2 @ self.C
        P1 = lyapunov_solve(A1, np.eye(3))
        P2 = lyapunov_solve(A2, np.eye(3))
        Phat = np.block(
            [[P1, np.zeros((3, 3))], [np.zeros((3, 3)), P2]]
        )
        inst = assemble_theorem2(self.A, self.B, self.C, net1, net2)
        lam = np.ones(inst.n_lambda)
        F = inst.constraint_value(0, inst.pack(Phat, lam))
        n_sig = inst.n_lambda
        # Lyapunov blocks give -I on the P-part except the coupling block
        M3 = P1 @ self.B @ K
        expect = np.zeros_like(F)
        expect[:6, :6] = -np.eye(6)
        expect[:3, 3:6] += M3
        expect[3:6, :3] += M3.T
        expect[6:, 6:] = -2.0 * np.eye(n_sig)
        assert np.max(np.abs(F - expect)) <= 1e-10


class TestTheorem3:
    def test_shift_matrix_and_row(self):
        assert np.array_equal(shift_matrix(2), [[0.0, 1.0], [0.0, 0.0]])
        assert np.array_equal(unit_output_row(2), [[1.0, 0.0]])

    def test_structure(self, rng):
        n = 2
        nets = [random_net(rng, in_dim=1, out_dim=1) for _ in range(n + 1)]
        inst = assemble_theorem3(n, nets)
        n_sig = sum(net.n_sigma for net in nets)
        assert inst.dim_p == n + 1
        assert inst.constraints[0].dim == n + 1 + n_sig

    def test_lyapunov_offdiagonal_block(self, rng):
        # the [P-block, output-block] coupling of the Lyapunov part is -P N_piw
        n = 1
        nets = [random_net(rng, in_dim=1, out_dim=1) for _ in range(n + 1)]
        from neurobs.nn import isolate_vector

        iso = isolate_vector(
            [ShapedNN(net, unit_output_row(n + 1), np.eye(1)) for net in nets]
        )
        P = np.array([[2.0, 0.5], [0.5, 1.0]])
        inst = assemble_theorem3(n, nets)
        lam = np.zeros(inst.n_lambda)
        F = inst.constraint_value(0, inst.pack(P, lam))
        Atil = shift_matrix(n + 1)
        top_left = Atil.T @ P + P @ Atil - P @ iso.out_from_x - iso.out_from_x.T @ P
        np.testing.assert_allclose(F[: n + 1, : n + 1], top_left, atol=1e-12)
        np.testing.assert_allclose(
            F[: n + 1, n + 1:], -P @ iso.out_from_w, atol=1e-12
        )

    def test_wrong_net_count(self, rng):
        with pytest.raises(ValueError):
            assemble_theorem3(2, [random_net(rng, in_dim=1, out_dim=1)])


class TestCorollary2:
    def test_dimension(self, rng):
        net = random_net(rng, in_dim=1, out_dim=1)
        inst = assemble_corollary2(2, net, [1.0, 1.0, 1.0])
        assert inst.constraints[0].dim == 3 + net.n_sigma

    def test_zero_net_block_structure(self):
        # zero first layer and shortcut, unit output layer: the w-coordinate
        # passes straight through, exposing the -P b coupling block
        net = NeuralNet(
            (np.zeros((1, 1)), np.ones((1, 1)), np.zeros((1, 1))),
            Activation.relu(),
        )
        inst = assemble_corollary2(1, net, [0.5, 2.0])
        P = np.array([[1.0, 0.2], [0.2, 3.0]])
        lam = np.array([1.5])
        F = inst.constraint_value(0, inst.pack(P, lam))
        Atil = shift_matrix(2)
        b = np.array([[0.5], [2.0]])
        expect = np.block(
            [
                [Atil.T @ P + P @ Atil, -P @ b],
                [-(P @ b).T, -2.0 * np.diag(lam)],
            ]
        )
        np.testing.assert_allclose(F, expect, atol=1e-12)

    def test_matches_theorem3_restriction(self, rng):
        # With identical networks and shared signals, the stacked certificate
        # restricted to equal w-blocks equals the shared-network certificate
        # with unit gains and block-summed multipliers.
        n = 2
        net = random_net(rng, in_dim=1, out_dim=1, max_layers=2, max_width=3)
        k = n + 1
        n0 = net.n_sigma
        inst3 = assemble_theorem3(n, [net] * k)
        instc = assemble_corollary2(n, net, np.ones(k))
        P = np.array([[2.0, 0.3, 0.1], [0.3, 1.5, 0.2], [0.1, 0.2, 1.0]])
        lam_split = rng.uniform(0.1, 1.0, size=(k, n0))
        lam_eff = lam_split.sum(axis=0)
        F3 = inst3.constraint_value(0, inst3.pack(P, lam_split.reshape(-1)))
        Fc = instc.constraint_value(0, instc.pack(P, lam_eff))
        m = n + 1
        J = np.zeros((m + k * n0, m + n0))
        J[:m, :m] = np.eye(m)
        for i in range(k):
            J[m + i * n0: m + (i + 1) * n0, m:] = np.eye(n0)
        np.testing.assert_allclose(J.T @ F3 @ J, Fc, atol=1e-10)


class TestTheorem4:
    A = np.array([[0.0, 1.0], [1.0, 1.0]])
    B_w = np.array([[1.0], [0.0]])
    C = np.array([[1.0, 0.0]])

    def nets(self, rng):
        return (
            random_net(rng, in_dim=1, out_dim=2),
            random_net(rng, in_dim=1, out_dim=1),
        )

    def test_eps_affine(self, rng):
        net1, net2 = self.nets(rng)
        y = rng.uniform(-1, 1, None)
        insts = [
            assemble_theorem4(self.A, self.B_w, self.C, e, net1, net2)
            for e in (0.1, 0.2, 0.3)
        ]
        yv = rng.uniform(-1, 1, insts[0].n_vars)
        F = [inst.constraint_value(0, yv) for inst in insts]
        np.testing.assert_allclose(F[1] - F[0], F[2] - F[1], atol=1e-12)

    def test_eps_positive_required(self, rng):
        net1, net2 = self.nets(rng)
        with pytest.raises(ValueError):
            assemble_theorem4(self.A, self.B_w, self.C, 0.0, net1, net2)

    def test_dimension(self, rng):
        net1, net2 = self.nets(rng)
        inst = assemble_theorem4(self.A, self.B_w, self.C, 0.1, net1, net2)
        assert inst.dim_p == 3
        assert inst.constraints[0].dim == 3 + net1.n_sigma + net2.n_sigma


class TestInstancePlumbing:
    def test_pack_unpack_round_trip(self, rng):
        net = random_net(rng, in_dim=1, out_dim=2)
        inst = assemble_theorem1(
            np.array([[0.0, 1.0], [-2.0, -3.0]]), np.array([[1.0, 0.0]]), net
        )
        P = rng.uniform(-1, 1, (2, 2))
        P = 0.5 * (P + P.T)
        lam = rng.uniform(0, 1, inst.n_lambda)
        P2, lam2 = inst.unpack(inst.pack(P, lam))
        np.testing.assert_allclose(P2, P)
        np.testing.assert_allclose(lam2, lam)

    def test_json_round_trip(self, rng):
        net = random_net(rng, in_dim=1, out_dim=2)
        inst = assemble_theorem1(
            np.array([[0.0, 1.0], [-2.0, -3.0]]), np.array([[1.0, 0.0]]), net
        )
        back = LmiInstance.from_json(json.loads(json.dumps(inst.to_json())))
        y = rng.uniform(-1, 1, inst.n_vars)
        for j in range(len(inst.constraints)):
            np.testing.assert_array_equal(
                back.constraint_value(j, y), inst.constraint_value(j, y)
            )
        assert back.provenance == inst.provenance

    def test_margin_scales_with_coefficients(self, rng):
        net = random_net(rng, in_dim=1, out_dim=2)
        A = np.array([[0.0, 1.0], [-2.0, -3.0]])
        C = np.array([[1.0, 0.0]])
        a = assemble_theorem1(A, C, net)
        b = assemble_theorem1(1000.0 * A, C, net)
        assert b.constraints[0].margin > a.constraints[0].margin
