import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylegraph import autograd as ag
from stylegraph.autograd import Tensor

from gradcheck import check

REL_TOL = 1e-4
ABS_TOL = 1e-7


def rand(rng, *shape):
    return Tensor(rng.uniform(-2, 2, size=shape), requires_grad=True)


def assert_gradcheck(build, tensors):
    rel, small = check(build, tensors)
    assert rel < REL_TOL
    assert small < ABS_TOL


class TestMatmul:
    def test_identity(self):
        b = np.array([[3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(ag.matmul(Tensor(np.eye(2)), Tensor(b)).data, b)

    def test_hand_product(self):
        assert ag.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]

    def test_gradient_random_3x3(self):
        rng = np.random.default_rng(0)
        a, b = rand(rng, 3, 3), rand(rng, 3, 3)
        assert_gradcheck(lambda: ag.sum_(ag.matmul(a, b)), [a, b])

    def test_batched_left_operand(self):
        rng = np.random.default_rng(1)
        a, b = rand(rng, 2, 3, 4), rand(rng, 4, 2)
        assert_gradcheck(lambda: ag.sum_(ag.tanh(ag.matmul(a, b))), [a, b])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ag.ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            ag.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


class TestSigmoid:
    def test_zero(self):
        assert ag.sigmoid(Tensor(0.0)).data == 0.5

    def test_saturation_without_nan(self):
        v = ag.sigmoid(Tensor([-1e3, 1e3])).data
        assert not np.isnan(v).any()
        # e^-1000 is below the smallest float64 subnormal, so the lower tail flushes to 0
        assert 0.0 <= v[0] <= 1e-300
        assert v[1] == 1.0

    def test_gradient_at_zero(self):
        x = Tensor([0.0], requires_grad=True)
        with ag.Tape() as tape:
            y = ag.sum_(ag.sigmoid(x))
        tape.backward(y)
        assert x.grad[0] == 0.25
        assert_gradcheck(lambda: ag.sum_(ag.sigmoid(x)), [x])


class TestSoftmaxTemperature:
    def test_column_pair(self):
        out = ag.softmax_temperature(Tensor([[1.0, 0.0], [0.0, 1.0]]), 1.0).data
        e = math.e
        np.testing.assert_allclose(out[:, 0], [e / (e + 1), 1 / (e + 1)], rtol=0, atol=1e-15)
        np.testing.assert_allclose(out[:, 1], [1 / (e + 1), e / (e + 1)], rtol=0, atol=1e-15)
        np.testing.assert_allclose(out.sum(axis=0), 1.0, atol=1e-12)
        assert round(out[0, 0], 4) == 0.7311

    def test_uniform_limit(self):
        rng = np.random.default_rng(0)
        out = ag.softmax_temperature(Tensor(rng.uniform(-2, 2, (4, 4))), 1e6).data
        np.testing.assert_allclose(out, 0.25, atol=1e-6)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_domain(self, tau):
        with pytest.raises(ValueError):
            ag.softmax_temperature(Tensor(np.eye(2)), tau)

    def test_stable_for_large_entries(self):
        out = ag.softmax_temperature(Tensor([[1000.0], [0.0]]), 1.0).data
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out.ravel(), [1.0, 0.0], atol=1e-300)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.floats(0.05, 50), st.integers(0, 2**32 - 1))
    def test_columns_sum_to_one(self, n, tau, seed):
        m = np.random.default_rng(seed).uniform(-5, 5, (n, n))
        out = ag.softmax_temperature(Tensor(m), tau).data
        assert (out > 0).all()
        np.testing.assert_allclose(out.sum(axis=0), 1.0, atol=1e-12)
        np.testing.assert_array_equal(np.argsort(out, axis=0, kind="stable"), np.argsort(m, axis=0, kind="stable"))

    def test_gradient(self):
        rng = np.random.default_rng(3)
        g = rand(rng, 3, 3)
        w = Tensor(rng.uniform(-2, 2, (3, 3)))
        assert_gradcheck(lambda: ag.sum_(ag.mul(ag.softmax_temperature(g, 3.0), w)), [g])


ELEMENTWISE = {
    "add": lambda a, b: ag.add(a, b),
    "sub": lambda a, b: ag.sub(a, b),
    "mul": lambda a, b: ag.mul(a, b),
    "tanh": lambda a, b: ag.mul(ag.tanh(a), b),
    "sigmoid": lambda a, b: ag.mul(ag.sigmoid(a), b),
    "exp": lambda a, b: ag.mul(ag.exp(a), b),
    "concat0": lambda a, b: ag.concat([a, b], axis=0),
    "concat1": lambda a, b: ag.concat([a, b], axis=1),
    "stack": lambda a, b: ag.stack([a, b], axis=1),
    "row_sum": lambda a, b: ag.mul(ag.sum_(a, axis=1), ag.sum_(b, axis=1)),
    "col_sum": lambda a, b: ag.mul(ag.sum_(a, axis=0, keepdims=True), b),
    "mean": lambda a, b: ag.mul(ag.mean(a, axis=0), ag.mean(b)),
    "transpose": lambda a, b: ag.matmul(ag.transpose(a), b),
    "reshape": lambda a, b: ag.mul(ag.reshape(a, (2, 6)), ag.reshape(b, (2, 6))),
    "broadcast_add": lambda a, b: ag.add(a, ag.sum_(b, axis=0)),
    "div": lambda a, b: ag.div(a, ag.add(ag.mul(b, b), 1.0)),
    "softmax": lambda a, b: ag.mul(ag.softmax(a, axis=1), b),
    "getitem_slice": lambda a, b: ag.mul(a[:, 1:3], b[:, :2]),
    "getitem_gather": lambda a, b: ag.mul(a[np.array([0, 0, 2])], b[np.array([1, 2, 1])]),
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
def test_op_backward_matches_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    a, b = rand(rng, 3, 4), rand(rng, 3, 4)
    weights = {}

    def build():
        out = ELEMENTWISE[name](a, b)
        if name not in weights:
            weights[name] = np.random.default_rng(7).uniform(-1, 1, out.shape)
        return ag.sum_(ag.mul(out, weights[name]))

    assert_gradcheck(build, [a, b])


def test_log_and_clip_gradients():
    rng = np.random.default_rng(4)
    a = Tensor(rng.uniform(0.2, 2.0, (3, 3)), requires_grad=True)
    assert_gradcheck(lambda: ag.sum_(ag.log(a)), [a])
    b = Tensor(np.array([-1.5, 0.3, 1.7]), requires_grad=True)
    with ag.Tape() as tape:
        out = ag.sum_(ag.clip(b, -1.0, 1.0))
    tape.backward(out)
    np.testing.assert_array_equal(b.grad, [0.0, 1.0, 0.0])


def test_masked_softmax_ignores_masked_entries():
    x = Tensor([[1.0, 2.0, 50.0]], requires_grad=True)
    mask = np.array([[1, 1, 0]])
    out = ag.softmax(x, axis=1, mask=mask).data
    assert out[0, 2] == 0.0
    np.testing.assert_allclose(out.sum(), 1.0, atol=1e-15)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.zeros((2, 3, 2)), requires_grad=True)
        with ag.Tape() as tape:
            loss = ag.sum_(x)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 2)))

    def test_sigmoid_of_linear_map(self):
        rng = np.random.default_rng(5)
        w, x = rand(rng, 4, 3), rand(rng, 3, 2)
        assert_gradcheck(lambda: ag.sum_(ag.sigmoid(ag.matmul(w, x))), [w, x])

    def test_two_calls_accumulate(self):
        rng = np.random.default_rng(6)
        w = rand(rng, 3, 3)
        with ag.Tape() as tape:
            loss = ag.sum_(ag.tanh(ag.matmul(w, w)))
        tape.backward(loss)
        first = w.grad.copy()
        tape.backward(loss)
        np.testing.assert_allclose(w.grad, 2 * first, rtol=1e-15)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ag.Tape() as tape:
            y = ag.mul(x, 2.0)
        with pytest.raises(ag.GradientError):
            tape.backward(y)

    def test_every_tape_tensor_gets_grad(self):
        rng = np.random.default_rng(8)
        a, b = rand(rng, 2, 2), rand(rng, 2, 2)
        with ag.Tape() as tape:
            side = ag.tanh(b)  # recorded but unused by the loss
            loss = ag.sum_(ag.mul(a, a))
        tape.backward(loss)
        for node in tape.nodes:
            assert node.output.grad is not None and node.output.grad.shape == node.output.shape
        np.testing.assert_array_equal(b.grad, 0.0)
        assert side.grad is not None

    def test_tape_is_topologically_ordered(self):
        rng = np.random.default_rng(9)
        a = rand(rng, 2, 2)
        with ag.Tape() as tape:
            ag.sum_(ag.matmul(ag.tanh(a), ag.sigmoid(a)))
        seen = {id(a)}
        for node in tape.nodes:
            assert all(id(t) in seen or not t.requires_grad for t in node.inputs)
            seen.add(id(node.output))

    def test_nothing_recorded_outside_a_tape(self):
        a = Tensor(np.ones(2), requires_grad=True)
        with ag.Tape() as tape:
            pass
        ag.sum_(a)
        assert len(tape) == 0


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        state = ag.AdamState()
        ag.adam_step({"p": p}, state)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_closed_form(self):
        p = Tensor(np.array([0.5]), requires_grad=True)
        p.grad = np.array([1.0])
        state = ag.AdamState()
        ag.adam_step({"p": p}, state, lr=0.001)
        # m_hat = 1, v_hat = 1  =>  step = lr / (1 + eps)
        assert abs((p.data[0] - 0.5) - (-0.001)) < 1e-6

    def test_counter_and_zero_init(self):
        p = Tensor(np.ones(3), requires_grad=True)
        state = ag.AdamState()
        assert state.t == 0 and not state.m
        for expected in (1, 2, 3):
            p.grad = np.ones(3)
            ag.adam_step({"p": p}, state)
            assert state.t == expected

    def test_missing_gradient_named(self):
        p = Tensor(np.ones(1), requires_grad=True)
        with pytest.raises(ag.GradientError, match="'weights'"):
            ag.adam_step({"weights": p}, ag.AdamState())

    def test_matches_reference_recurrence(self):
        rng = np.random.default_rng(10)
        p = Tensor(rng.normal(size=4), requires_grad=True)
        ref = p.data.copy()
        m = np.zeros(4)
        v = np.zeros(4)
        state = ag.AdamState()
        for t in range(1, 6):
            g = rng.normal(size=4)
            p.grad = g.copy()
            ag.adam_step({"p": p}, state, lr=0.01)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p.data, ref, rtol=1e-13)
