import numpy as np
import pytest

from battwin.autodiff import (
    DenseNet,
    forward,
    forward_tape,
    grad_weights,
    input_jet,
    jet_forward,
    jet_grad_weights,
)
from battwin.errors import UnsupportedActivation


def random_net(rng, acts=("tanh", "sigmoid", "identity")):
    widths = [int(rng.integers(1, 5)) for _ in range(4)]
    layer_acts = [str(rng.choice(acts)) for _ in range(3)]
    return DenseNet.init(widths, layer_acts, seed=int(rng.integers(1 << 30)))


def fd_grad(fun, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return g


class TestForward:
    def test_identity_net_is_affine(self):
        net = DenseNet([np.array([[2.0, -1.0]])], [np.array([0.5])], ["identity"])
        assert forward(net, np.array([3.0, 4.0])) == pytest.approx([2.5])

    def test_batch_matches_rows(self):
        net = DenseNet.init([3, 8, 2], "tanh", seed=4)
        x = np.random.default_rng(0).normal(size=(6, 3))
        y = forward(net, x)
        for i in range(6):
            assert forward(net, x[i]) == pytest.approx(y[i])

    def test_forward_tape_agrees(self):
        net = DenseNet.init([2, 5, 1], "sigmoid", seed=1)
        x = np.random.default_rng(1).normal(size=(4, 2))
        y, tape = forward_tape(net, x)
        assert y == pytest.approx(forward(net, x))
        assert tape.output() is y


class TestWeightGradients:
    def test_against_finite_differences_many_nets(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            net = random_net(rng, acts=("tanh", "sigmoid", "identity", "relu"))
            x = rng.normal(size=(3, net.widths[0]))
            theta0 = net.get_params()

            def loss(theta):
                net.set_params(theta)
                return 0.5 * float(np.sum(forward(net, x) ** 2))

            net.set_params(theta0)
            y, tape = forward_tape(net, x)
            g = grad_weights(tape, y)
            g_fd = fd_grad(loss, theta0)
            # atol covers O(h) finite-difference noise at relu kinks
            assert np.allclose(g, g_fd, rtol=1e-5, atol=2e-6)

    def test_input_gradient(self):
        rng = np.random.default_rng(3)
        net = DenseNet.init([3, 6, 6, 1], "tanh", seed=9)
        x = rng.normal(size=(1, 3))
        y, tape = forward_tape(net, x)
        _, gx = grad_weights(tape, np.ones_like(y), with_input_grad=True)
        g_fd = fd_grad(lambda xi: float(forward(net, xi[None])[0, 0]), x[0])
        assert gx[0] == pytest.approx(g_fd, rel=1e-6, abs=1e-9)


class TestInputJets:
    def test_first_and_second_derivatives_vs_fd(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            net = random_net(rng)
            d_in = net.widths[0]
            wrt = int(rng.integers(d_in))
            x = rng.normal(size=(1, d_in))
            v, d1, d2 = input_jet(net, x, wrt)
            assert v == pytest.approx(forward(net, x))

            def f(t):
                xt = x.copy()
                xt[0, wrt] += t
                return forward(net, xt)[0]

            h = 1e-5
            d1_fd = (f(h) - f(-h)) / (2.0 * h)
            d2_fd = (f(h) - 2.0 * f(0.0) + f(-h)) / h ** 2
            assert np.allclose(d1[0], d1_fd, rtol=1e-5, atol=1e-7)
            assert np.allclose(d2[0], d2_fd, rtol=1e-4, atol=1e-5)

    def test_two_channel_jet(self):
        net = DenseNet.init([3, 10, 1], "tanh", seed=5)
        x = np.random.default_rng(5).normal(size=(4, 3))
        tape = jet_forward(net, x, wrt=(0, 2), second=(0,))
        v0, d1_0, d2_0 = input_jet(net, x, 0)
        _, d1_2, _ = input_jet(net, x, 2)
        assert tape.value == pytest.approx(v0)
        assert tape.first[0] == pytest.approx(d1_0)
        assert tape.first[1] == pytest.approx(d1_2)
        assert tape.second_out[0] == pytest.approx(d2_0)
        assert np.all(tape.second_out[1] == 0.0)

    def test_identity_net_second_derivative_zero(self):
        net = DenseNet([np.array([[1.5]])], [np.array([0.0])], ["identity"])
        v, d1, d2 = input_jet(net, np.array([[2.0]]), 0)
        assert d1[0, 0] == pytest.approx(1.5)
        assert d2[0, 0] == 0.0

    def test_relu_rejected(self):
        net = DenseNet.init([2, 4, 1], ["relu", "tanh"], seed=0)
        with pytest.raises(UnsupportedActivation):
            input_jet(net, np.zeros((1, 2)), 0)


class TestJetWeightGradients:
    def test_mixed_jet_loss_vs_fd(self):
        # loss built from value, first and second derivatives together,
        # like a PDE residual
        rng = np.random.default_rng(21)
        for _ in range(20):
            net = random_net(rng)
            d_in = net.widths[0]
            x = rng.normal(size=(2, d_in))
            theta0 = net.get_params()
            wrt = (0, d_in - 1)

            def loss(theta):
                net.set_params(theta)
                t = jet_forward(net, x, wrt, second=(0,))
                return float(np.sum(t.value ** 2) + np.sum(t.first ** 2)
                             + np.sum(t.second_out[0] ** 2))

            net.set_params(theta0)
            t = jet_forward(net, x, wrt, second=(0,))
            g2 = np.zeros_like(t.second_out)
            g2[0] = 2.0 * t.second_out[0]
            g = jet_grad_weights(t, 2.0 * t.value, 2.0 * t.first, g2)
            g_fd = fd_grad(loss, theta0)
            net.set_params(theta0)
            assert np.allclose(g, g_fd, rtol=1e-4, atol=1e-6)

    def test_value_only_adjoint_matches_plain_reverse(self):
        net = DenseNet.init([3, 7, 2], "sigmoid", seed=2)
        x = np.random.default_rng(2).normal(size=(5, 3))
        y, tape = forward_tape(net, x)
        jet = jet_forward(net, x, (1,))
        gy = np.random.default_rng(3).normal(size=y.shape)
        assert jet_grad_weights(jet, gy) == pytest.approx(grad_weights(tape, gy))


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        net = DenseNet.init([3, 5, 1], ["tanh", "sigmoid"], seed=13)
        path = tmp_path / "net.json"
        net.save(path, electrode="-", note="unit-test")
        back = DenseNet.load(path)
        assert back.activations == net.activations
        x = np.random.default_rng(0).normal(size=(4, 3))
        assert forward(back, x) == pytest.approx(forward(net, x), rel=1e-15)

    def test_param_vector_roundtrip(self):
        net = DenseNet.init([2, 4, 3], "tanh", seed=8)
        vec = net.get_params()
        assert len(vec) == net.n_params
        net2 = DenseNet.init([2, 4, 3], "tanh", seed=99)
        net2.set_params(vec)
        assert net2.get_params() == pytest.approx(vec)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            DenseNet([np.zeros((3, 2)), np.zeros((2, 4))],
                     [np.zeros(3), np.zeros(2)], ["tanh", "tanh"])
