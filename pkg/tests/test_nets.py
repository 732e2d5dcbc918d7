import struct

import numpy as np
import pytest

from grwczsl.exceptions import InvalidInputError, ShapeError, StateError
from grwczsl.nets import (AdamState, GradTape, TwoLayerNet, adam_step, backward,
                          finite_diff_check, forward, from_bytes, load_checkpoint,
                          save_checkpoint, to_bytes)


def straight_line_forward(net, X):
    out = []
    for x in X:
        h = [sum(x[i] * net.W1[i, j] for i in range(len(x))) + net.b1[j]
             for j in range(net.n_hidden)]
        a = [v if v > 0 else net.slope * v for v in h]
        out.append([sum(a[j] * net.W2[j, k] for j in range(len(a))) + net.b2[k]
                    for k in range(net.n_out)])
    return np.array(out)


def net_loss(X, W):
    """Loss ``sum(W * net(X))`` with its analytic gradients."""
    def fn(net):
        tape = GradTape()
        out = forward(net, X, tape)
        backward(net, tape, W)
        return float(np.sum(W * out)), tape.grads
    return fn


def test_zero_net_gives_zero_output():
    net = TwoLayerNet(3, 4, 2)
    np.testing.assert_array_equal(forward(net, np.ones((5, 3))), 0.0)


def test_leaky_identity_net():
    net = TwoLayerNet(1, 1, 1)
    net.W1[:] = 1.0
    net.W2[:] = 1.0
    np.testing.assert_allclose(forward(net, [[-1.0]]), [[-0.2]])


def test_forward_matches_straight_line_oracle():
    rng = np.random.default_rng(0)
    net = TwoLayerNet(3, 2, 2, rng=rng)
    X = rng.normal(size=(4, 3))
    np.testing.assert_allclose(forward(net, X), straight_line_forward(net, X), atol=1e-12)


def test_forward_is_bitwise_deterministic():
    rng = np.random.default_rng(1)
    net = TwoLayerNet(5, 7, 3, rng=rng)
    X = rng.normal(size=(6, 5))
    assert forward(net, X).tobytes() == forward(net, X).tobytes()


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        forward(TwoLayerNet(3, 2, 2), np.zeros((2, 4)))


def test_init_range():
    net = TwoLayerNet(16, 9, 4, rng=np.random.default_rng(0))
    assert np.abs(net.W1).max() <= 1 / 4
    assert np.abs(net.W2).max() <= 1 / 3


def test_backward_zero_upstream():
    rng = np.random.default_rng(0)
    net = TwoLayerNet(3, 4, 2, rng=rng)
    tape = GradTape()
    forward(net, rng.normal(size=(5, 3)), tape)
    dX = backward(net, tape, np.zeros((5, 2)))
    np.testing.assert_array_equal(dX, 0.0)
    for g in tape.grads.values():
        np.testing.assert_array_equal(g, 0.0)


def test_backward_scalar_chain_rule():
    net = TwoLayerNet(1, 1, 1)
    net.W1[:] = 1.5
    net.W2[:] = -2.0
    for x in (0.7, -0.7):
        tape = GradTape()
        forward(net, [[x]], tape)
        dx = backward(net, tape, [[1.0]])
        leak = 1.0 if 1.5 * x > 0 else 0.2
        assert dx[0, 0] == pytest.approx(-2.0 * leak * 1.5)


def test_backward_before_forward():
    with pytest.raises(StateError):
        backward(TwoLayerNet(2, 2, 2), GradTape(), np.zeros((1, 2)))


@pytest.mark.parametrize("seed", range(5))
def test_parameter_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = TwoLayerNet(4, 8, 3, rng=rng)
    X = rng.normal(size=(6, 4))
    W = rng.normal(size=(6, 3))
    assert finite_diff_check(net_loss(X, W), net) < 1e-4


def test_input_gradient_matches_finite_differences():
    from grwczsl.nets import numeric_grad, relative_error
    rng = np.random.default_rng(7)
    net = TwoLayerNet(4, 8, 3, rng=rng)
    X = rng.normal(size=(6, 4))
    W = rng.normal(size=(6, 3))
    tape = GradTape()
    forward(net, X, tape)
    dX = backward(net, tape, W)
    assert relative_error(dX, numeric_grad(lambda: float(np.sum(W * forward(net, X))), X)) < 1e-6


def test_finite_diff_check_quadratic():
    net = TwoLayerNet(3, 4, 2, rng=np.random.default_rng(0))
    fn = lambda n: (sum(float(np.sum(p * p)) for p in n.params().values()),
                    {k: 2 * p for k, p in n.params().items()})
    assert finite_diff_check(fn, net) < 1e-7


def test_finite_diff_check_constant():
    net = TwoLayerNet(3, 4, 2, rng=np.random.default_rng(0))
    fn = lambda n: (3.0, {k: np.zeros_like(p) for k, p in n.params().items()})
    assert finite_diff_check(fn, net) < 1e-8


class TestAdam:
    def _net_with_grads(self, value):
        net = TwoLayerNet(2, 3, 2, rng=np.random.default_rng(0))
        tape = GradTape()
        tape.zero(net)
        for g in tape.grads.values():
            g[...] = value
        return net, tape

    def test_zero_gradient_no_decay_is_noop(self):
        net, tape = self._net_with_grads(0.0)
        before = {k: v.copy() for k, v in net.params().items()}
        adam_step(net, tape, AdamState(lr=0.1, weight_decay=0.0))
        for k, v in net.params().items():
            np.testing.assert_array_equal(v, before[k])

    def test_zero_learning_rate_is_noop(self):
        net, tape = self._net_with_grads(1.0)
        before = {k: v.copy() for k, v in net.params().items()}
        adam_step(net, tape, AdamState(lr=0.0))
        for k, v in net.params().items():
            np.testing.assert_array_equal(v, before[k])

    def test_first_step_moves_by_learning_rate(self):
        net, tape = self._net_with_grads(1.0)
        before = {k: v.copy() for k, v in net.params().items()}
        adam_step(net, tape, AdamState(lr=0.1, weight_decay=0.0))
        # bias-corrected m_hat = v_hat = 1, so the step is lr / (1 + eps)
        for k, v in net.params().items():
            np.testing.assert_allclose(before[k] - v, 0.1 / (1 + 1e-8), rtol=1e-12)

    def test_gradients_zeroed_after_step(self):
        net, tape = self._net_with_grads(1.0)
        adam_step(net, tape, AdamState())
        for g in tape.grads.values():
            np.testing.assert_array_equal(g, 0.0)

    def test_two_steps_follow_recurrence(self):
        rng = np.random.default_rng(3)
        p = rng.normal(size=(3,))
        g = rng.normal(size=(3,))
        state = AdamState(lr=0.01, weight_decay=0.1)
        params = {"p": p.copy()}
        state.update(params, {"p": g})
        state.update(params, {"p": g})
        assert state.step_count == 2

        ref, m, v = p.copy(), np.zeros(3), np.zeros(3)
        for t in (1, 2):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * 0.1 * ref
            ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(state.m["p"], m, rtol=1e-14)
        np.testing.assert_allclose(state.v["p"], v, rtol=1e-14)
        np.testing.assert_allclose(params["p"], ref, rtol=1e-14)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = TwoLayerNet(5, 4, 3, rng=np.random.default_rng(0))
        path = tmp_path / "g.bin"
        save_checkpoint(net, path)
        back = load_checkpoint(path)
        for k, v in net.params().items():
            assert back.params()[k].tobytes() == v.tobytes()

    def test_layout(self):
        net = TwoLayerNet(2, 3, 1, rng=np.random.default_rng(0))
        blob = to_bytes(net)
        assert blob[:4] == b"GRWN"
        assert struct.unpack_from("<IIIII", blob, 4) == (1, 2, 3, 3, 1)
        assert len(blob) == 24 + 8 * (6 + 3 + 3 + 1)
        first = struct.unpack_from("<d", blob, 24)[0]
        assert first == net.W1[0, 0]
        b2 = struct.unpack_from("<d", blob, len(blob) - 8)[0]
        assert b2 == net.b2[0]

    def test_bad_magic(self):
        blob = bytearray(to_bytes(TwoLayerNet(2, 2, 2)))
        blob[:4] = b"XXXX"
        with pytest.raises(InvalidInputError):
            from_bytes(bytes(blob))

    def test_truncated(self):
        with pytest.raises(InvalidInputError):
            from_bytes(to_bytes(TwoLayerNet(2, 2, 2))[:-8])
