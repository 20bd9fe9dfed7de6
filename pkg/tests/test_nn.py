import json

import numpy as np
import pytest

from neurobs.nn import (
    Activation,
    NeuralNet,
    ShapedNN,
    isolate,
    isolate_vector,
)
from conftest import ALL_ACTIVATIONS, random_net, random_shaped


def small_relu_net():
    # W1 = [[1], [-1]], W2 = [1, 1], shortcut = [2]
    return NeuralNet(
        (np.array([[1.0], [-1.0]]), np.array([[1.0, 1.0]]), np.array([[2.0]])),
        Activation.relu(),
    )


class TestActivations:
    def test_sectors(self):
        assert Activation.relu().sector() == (0.0, 1.0)
        assert Activation.tanh().sector() == (0.0, 1.0)
        assert Activation.leaky_relu(0.01).sector() == (0.01, 1.0)
        # beta = delta**(gamma - 1) = 1 for gamma=0.5, delta=1
        assert Activation.fal(0.5, 1.0).sector() == (0.0, 1.0)
        a, b = Activation.fal(0.5, 0.25).sector()
        assert a == 0.0 and b == pytest.approx(0.25 ** -0.5)

    def test_zero_fixed_point(self):
        for act in ALL_ACTIVATIONS:
            assert act(0.0) == 0.0

    def test_sector_membership_randomized(self):
        rng = np.random.default_rng(7)
        s = rng.uniform(-50, 50, size=10_000)
        for act in ALL_ACTIVATIONS:
            a, b = act.sector()
            v = act(s)
            assert np.all((v - a * s) * (b * s - v) >= -1e-12)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            Activation.leaky_relu(1.5)
        with pytest.raises(ValueError):
            Activation.fal(1.2, 1.0)
        with pytest.raises(ValueError):
            Activation.fal(0.5, 0.0)
        with pytest.raises(ValueError):
            Activation("swish")

    def test_fal_continuity_at_band_edge(self):
        act = Activation.fal(0.5, 0.3)
        lo, hi = act(0.3 - 1e-12), act(0.3 + 1e-12)
        assert abs(lo - hi) < 1e-6


class TestForward:
    def test_zero_input_maps_to_zero(self, rng):
        for _ in range(20):
            net = random_net(rng)
            assert np.allclose(net.forward(np.zeros(net.input_dim)), 0.0)

    def test_hand_evaluated_example(self):
        net = small_relu_net()
        # relu([3, -3]) = [3, 0]; W2 @ [3, 0] = 3; shortcut 2*3 = 6
        assert net.forward([3.0]) == pytest.approx([9.0])

    def test_zero_weights(self, rng):
        net = NeuralNet(
            (np.zeros((2, 3)), np.zeros((1, 2)), np.zeros((1, 3))),
            Activation.tanh(),
        )
        assert np.allclose(net.forward(rng.uniform(-5, 5, 3)), 0.0)

    def test_dimension_mismatch_rejected(self):
        net = small_relu_net()
        with pytest.raises(ValueError):
            net.forward([1.0, 2.0])

    def test_weight_chain_validation(self):
        with pytest.raises(ValueError):
            NeuralNet(
                (np.ones((2, 1)), np.ones((1, 3)), np.ones((1, 1))),
                Activation.relu(),
            )
        with pytest.raises(ValueError):
            NeuralNet(
                (np.ones((2, 1)), np.ones((1, 2)), np.ones((2, 1))),
                Activation.relu(),
            )

    def test_negate_input(self, rng):
        for _ in range(10):
            net = random_net(rng)
            flipped = net.negate_input()
            x = rng.uniform(-2, 2, net.input_dim)
            assert np.allclose(flipped.forward(x), net.forward(-x))


class TestSignals:
    def test_zero_input(self):
        st = small_relu_net().signals([0.0])
        assert np.allclose(st.xi, 0.0) and np.allclose(st.w, 0.0)

    def test_hand_example(self):
        st = small_relu_net().signals([3.0])
        assert np.allclose(st.xi, [3.0, -3.0])
        assert np.allclose(st.w, [3.0, 0.0])

    def test_w_is_activation_of_xi(self, rng):
        for _ in range(30):
            net = random_net(rng)
            st = net.signals(rng.uniform(-3, 3, net.input_dim))
            assert np.allclose(st.w, net.activation(st.xi))

    def test_consistent_with_forward(self, rng):
        for _ in range(30):
            net = random_net(rng)
            x = rng.uniform(-3, 3, net.input_dim)
            st = net.signals(x)
            last = net.weights[net.hidden_layers - 1].shape[0]
            out = net.weights[net.hidden_layers] @ st.w[-last:] + net.weights[-1] @ x
            assert np.allclose(out, net.forward(x))


class TestIsolation:
    def test_zero_weights_gives_zero_blocks(self):
        net = NeuralNet(
            (np.zeros((2, 1)), np.zeros((1, 2)), np.zeros((1, 1))),
            Activation.relu(),
        )
        iso = isolate(ShapedNN(net, np.eye(1), np.eye(1)))
        assert np.allclose(iso.out_from_x, 0.0)
        assert np.allclose(iso.io_map @ np.array([5.0, 1.0, 2.0]), [5.0, 0.0])

    def test_hand_example(self):
        iso = isolate(ShapedNN(small_relu_net(), np.eye(1), np.eye(1)))
        assert np.allclose(iso.io_map @ np.array([3.0, 3.0, 0.0]), [3.0, 9.0])

    def test_reconstruction_property(self, rng):
        for _ in range(100):
            snn = random_shaped(rng, ambient=int(rng.integers(1, 5)))
            x = rng.uniform(-3, 3, snn.ambient_dim)
            st = snn.signals(x)
            lhs = np.concatenate([x, snn.forward(x)])
            rhs = iso_apply = isolate(snn).io_map @ np.concatenate([x, st.w])
            scale = max(1.0, np.max(np.abs(lhs)))
            assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale
            loop = isolate(snn).loop_map @ np.concatenate([x, st.w])
            lhs2 = np.concatenate([st.xi, st.w])
            assert np.max(np.abs(lhs2 - loop)) <= 1e-12 * max(1.0, np.max(np.abs(lhs2)))

    def test_block_shapes(self, rng):
        snn = random_shaped(rng, ambient=3)
        iso = isolate(snn)
        n_sig, n_amb = snn.net.n_sigma, 3
        n_out = snn.shaped_output_dim
        assert iso.io_map.shape == (n_amb + n_out, n_amb + n_sig)
        assert iso.loop_map.shape == (2 * n_sig, n_amb + n_sig)


class TestIsolateVector:
    def test_single_net_matches_isolate(self, rng):
        snn = random_shaped(rng, ambient=2)
        a, b = isolate(snn), isolate_vector([snn])
        assert np.allclose(a.io_map, b.io_map)
        assert np.allclose(a.loop_map, b.loop_map)

    def test_duplicated_net_block_structure(self, rng):
        net = random_net(rng, in_dim=2)
        snn = ShapedNN(net, np.eye(2), np.eye(net.output_dim))
        iso = isolate_vector([snn, snn])
        n = net.n_sigma
        # off-diagonal blocks of the stacked w-maps are exactly zero
        assert np.all(iso.out_from_w[: net.output_dim, n:] == 0.0)
        assert np.all(iso.out_from_w[net.output_dim:, :n] == 0.0)
        assert np.all(iso.pre_from_w[:n, n:] == 0.0)
        assert np.all(iso.pre_from_w[n:, :n] == 0.0)
        x = rng.uniform(-1, 1, 2)
        out = iso.io_map @ np.concatenate([x, net.signals(x).w, net.signals(x).w])
        single = net.forward(x)
        assert np.allclose(out, np.concatenate([x, single, single]))

    def test_stacked_reconstruction(self, rng):
        for _ in range(40):
            amb = int(rng.integers(1, 4))
            snns = [random_shaped(rng, ambient=amb) for _ in range(3)]
            iso = isolate_vector(snns)
            x = rng.uniform(-2, 2, amb)
            w = np.concatenate([s.signals(x).w for s in snns])
            xi = np.concatenate([s.signals(x).xi for s in snns])
            out = np.concatenate([s.forward(x) for s in snns])
            lhs = np.concatenate([x, out])
            rhs = iso.io_map @ np.concatenate([x, w])
            assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))
            lhs2 = np.concatenate([xi, w])
            rhs2 = iso.loop_map @ np.concatenate([x, w])
            assert np.max(np.abs(lhs2 - rhs2)) <= 1e-12 * max(1.0, np.max(np.abs(lhs2)))

    def test_inconsistent_ambient_rejected(self, rng):
        a = random_shaped(rng, ambient=2)
        b = random_shaped(rng, ambient=3)
        with pytest.raises(ValueError):
            isolate_vector([a, b])


class TestSerialization:
    def test_round_trip(self, rng):
        for _ in range(10):
            net = random_net(rng)
            d = json.loads(json.dumps(net.to_json()))
            back = NeuralNet.from_json(d)
            x = rng.uniform(-2, 2, net.input_dim)
            assert np.array_equal(back.forward(x), net.forward(x))
            assert back.activation == net.activation

    def test_sector_override_validated(self):
        with pytest.raises(ValueError):
            NeuralNet(
                (np.ones((2, 1)), np.ones((1, 2)), np.ones((1, 1))),
                Activation.relu(),
                alpha=np.array([0.0, 0.0]),
                beta=np.array([0.5, 1.0]),  # cannot be tighter than the activation
            )
        # widening is fine
        net = NeuralNet(
            (np.ones((2, 1)), np.ones((1, 2)), np.ones((1, 1))),
            Activation.relu(),
            alpha=np.array([-0.5, 0.0]),
            beta=np.array([2.0, 1.0]),
        )
        assert net.alpha[0] == -0.5
