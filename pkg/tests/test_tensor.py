import math

import numpy as np
import pytest

from helpers import conv1d_oracle, fd_check, matmul_oracle
from stkit import tensor as T
from stkit.errors import DataError, DimensionError, UsageError
from stkit.optim import Adam
from stkit.tensor import Tensor


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, 2))
    out = T.matmul(Tensor(np.eye(2)), Tensor(a))
    np.testing.assert_allclose(out.data, a, rtol=0, atol=0)


def test_matmul_scalar_case():
    out = T.matmul(Tensor([[2.0]]), Tensor([[3.0]]))
    assert out.data[0, 0] == 6.0


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 5))
    b = rng.normal(size=(5, 3))
    out = T.matmul(Tensor(a), Tensor(b)).data
    ref = matmul_oracle(a, b)
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError) as err:
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)


def test_conv1d_hand_unrolled():
    x = Tensor([[1.0, 2.0, 3.0, 4.0]])
    w = Tensor([[[1.0, 1.0, 1.0]]])
    out = T.conv1d(x, w, stride=2, padding=1)
    np.testing.assert_allclose(out.data, [[3.0, 9.0]])
    ref = conv1d_oracle(x.data, w.data, 2, 1)
    np.testing.assert_allclose(out.data, ref)


def test_conv1d_identity_kernel():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 7))
    w = np.zeros((3, 3, 1))
    for c in range(3):
        w[c, c, 0] = 1.0
    out = T.conv1d(Tensor(x), Tensor(w), stride=1, padding=0)
    np.testing.assert_allclose(out.data, x)


def test_conv1d_length_formula():
    x = Tensor(np.zeros((1, 64)))
    w = Tensor(np.zeros((1, 1, 3)))
    assert T.conv1d(x, w, stride=2, padding=1).shape == (1, 32)
    x65 = Tensor(np.zeros((1, 65)))
    assert T.conv1d(x65, w, stride=2, padding=1).shape == (1, 33)


def test_conv1d_matches_loop_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 9))
    w = rng.normal(size=(4, 2, 3))
    for stride, padding in [(1, 0), (2, 1), (3, 2)]:
        out = T.conv1d(Tensor(x), Tensor(w), stride=stride, padding=padding).data
        ref = conv1d_oracle(x, w, stride, padding)
        np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_conv1d_batched_matches_unbatched():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 2, 10))
    w = rng.normal(size=(4, 2, 3))
    batched = T.conv1d(Tensor(x), Tensor(w), stride=2, padding=1).data
    for b in range(3):
        single = T.conv1d(Tensor(x[b]), Tensor(w), stride=2, padding=1).data
        np.testing.assert_allclose(batched[b], single)


def test_conv1d_window_too_large():
    with pytest.raises(DimensionError):
        T.conv1d(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 1, 6))), stride=1, padding=1)


def test_softmax_symmetry_and_analytic():
    out = T.softmax(Tensor([0.0, 0.0])).data
    np.testing.assert_allclose(out, [0.5, 0.5])
    out = T.softmax(Tensor([math.log(2.0), 0.0])).data
    np.testing.assert_allclose(out, [2 / 3, 1 / 3], rtol=1e-12)


def test_softmax_shift_invariance_and_row_sums():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 6)) * 50
    base = T.softmax(Tensor(x)).data
    shifted = T.softmax(Tensor(x + 123.456)).data
    np.testing.assert_allclose(base, shifted, atol=1e-12)
    np.testing.assert_allclose(base.sum(axis=-1), np.ones(4), atol=1e-9)
    assert (base >= 0).all()


def test_softmax_handles_large_magnitudes():
    out = T.softmax(Tensor([1e4, 0.0, -1e4])).data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out.sum(), 1.0, atol=1e-9)


def test_softmax_fully_masked_row():
    x = Tensor(np.ones((2, 3)))
    mask = np.array([[False, False, False], [True, True, True]])
    out = T.softmax(x, mask=mask).data
    np.testing.assert_allclose(out[1], np.zeros(3))
    np.testing.assert_allclose(out[0].sum(), 1.0)
    with pytest.raises(DataError):
        T.softmax(x, mask=mask, strict=True)


def test_attention_single_key_returns_value():
    rng = np.random.default_rng(6)
    q = rng.normal(size=(3, 4))
    k = rng.normal(size=(1, 4))
    v = rng.normal(size=(1, 4))
    out = T.attention(Tensor(q), Tensor(k), Tensor(v)).data
    for row in out:
        np.testing.assert_allclose(row, v[0], rtol=1e-12)


def test_attention_identical_keys_average_values():
    rng = np.random.default_rng(7)
    q = rng.normal(size=(2, 4))
    key = rng.normal(size=4)
    k = np.stack([key, key])
    v = rng.normal(size=(2, 4))
    out = T.attention(Tensor(q), Tensor(k), Tensor(v)).data
    np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (2, 1)), rtol=1e-12)


def test_attention_mask_equals_removal():
    rng = np.random.default_rng(8)
    q, k, v = rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    drop = 2
    mask = np.zeros((3, 4), dtype=bool)
    mask[:, drop] = True
    masked = T.attention(Tensor(q), Tensor(k), Tensor(v), mask=mask).data
    kept = [j for j in range(4) if j != drop]
    removed = T.attention(Tensor(q), Tensor(k[kept]), Tensor(v[kept])).data
    np.testing.assert_allclose(masked, removed, atol=1e-12)


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    T.backward(x * x)
    np.testing.assert_allclose(x.grad, 6.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        T.backward(x * x)


def test_backward_accumulates_across_calls():
    x = Tensor(2.0, requires_grad=True)
    T.backward(x * x)
    T.backward(x * x)
    np.testing.assert_allclose(x.grad, 8.0)


def test_backward_sum_of_losses_equals_separate():
    rng = np.random.default_rng(9)
    data = rng.normal(size=(3, 3))
    x1 = Tensor(data.copy(), requires_grad=True)
    l1 = T.sum_(x1 * x1)
    l2 = T.sum_(T.exp(x1))
    T.backward(l1 + l2)
    x2 = Tensor(data.copy(), requires_grad=True)
    T.backward(T.sum_(x2 * x2))
    T.backward(T.sum_(T.exp(x2)))
    np.testing.assert_allclose(x1.grad, x2.grad, rtol=1e-12)


def test_stop_gradient_blocks_flow():
    x = Tensor(2.0, requires_grad=True)
    y = T.stop_gradient(x) * x
    T.backward(y)
    np.testing.assert_allclose(x.grad, 2.0)  # only the non-detached factor
    z = Tensor(1.5, requires_grad=True)
    T.backward(T.sum_(T.stop_gradient(z * z)))
    assert z.grad is None


def test_no_grad_context():
    x = Tensor(2.0, requires_grad=True)
    with T.no_grad():
        y = x * x
    assert not y.requires_grad and y._backward is None


def test_softmax_cross_entropy_finite_difference():
    rng = np.random.default_rng(10)
    logits = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    onehot = np.zeros((3, 5))
    onehot[np.arange(3), [1, 0, 4]] = 1.0

    def loss():
        logp = T.log_softmax(logits)
        return T.neg(T.sum_(T.mul(logp, onehot))) * (1.0 / 3.0)

    fd_check(loss, [logits])


@pytest.mark.parametrize("name", [
    "add", "add_broadcast", "sub", "mul", "div", "pow", "exp", "log", "gelu",
    "sum_axis", "mean", "reshape_swap", "matmul", "matmul_batched", "conv1d",
    "softmax", "softmax_masked", "log_softmax", "layer_norm", "take_rows",
    "take_along_last", "attention", "attention_masked",
])
def test_primitive_gradients_finite_difference(name):
    rng = np.random.default_rng(hash(name) % 2 ** 32)

    def tall(shape, scale=1.0):
        return Tensor(rng.normal(size=shape) * scale, requires_grad=True)

    if name == "add":
        a, b = tall((4, 3)), tall((4, 3))
        fd_check(lambda: T.sum_(T.mul(a + b, a + b)), [a, b])
    elif name == "add_broadcast":
        a, b = tall((4, 3)), tall((3,))
        fd_check(lambda: T.sum_(T.mul(a + b, a + b)), [a, b])
    elif name == "sub":
        a, b = tall((2, 5)), tall((2, 5))
        fd_check(lambda: T.sum_(T.mul(a - b, a - b)), [a, b])
    elif name == "mul":
        a, b = tall((3, 4)), tall((3, 4))
        fd_check(lambda: T.sum_(T.exp(T.mul(a, b) * 0.1)), [a, b])
    elif name == "div":
        a, b = tall((3, 3)), Tensor(rng.uniform(1.0, 2.0, size=(3, 3)), requires_grad=True)
        fd_check(lambda: T.sum_(T.mul(T.div(a, b), T.div(a, b))), [a, b])
    elif name == "pow":
        a = Tensor(rng.uniform(0.5, 2.0, size=(4,)), requires_grad=True)
        fd_check(lambda: T.sum_(T.pow_(a, 3.0)), [a])
    elif name == "exp":
        a = tall((3, 3), 0.5)
        fd_check(lambda: T.sum_(T.exp(a)), [a])
    elif name == "log":
        a = Tensor(rng.uniform(0.5, 3.0, size=(3, 3)), requires_grad=True)
        fd_check(lambda: T.sum_(T.mul(T.log(a), T.log(a))), [a])
    elif name == "gelu":
        a = tall((4, 4))
        fd_check(lambda: T.sum_(T.mul(T.gelu(a), T.gelu(a))), [a])
    elif name == "sum_axis":
        a = tall((3, 4, 2))
        fd_check(lambda: T.sum_(T.mul(T.sum_(a, axis=1), T.sum_(a, axis=1))), [a])
    elif name == "mean":
        a = tall((3, 4))
        fd_check(lambda: T.sum_(T.mul(T.mean(a, axis=-1, keepdims=True) + a, a)), [a])
    elif name == "reshape_swap":
        a = tall((2, 3, 4))
        fd_check(lambda: T.sum_(T.mul(T.reshape(T.swapaxes(a, 1, 2), (4, 6)),
                                      T.reshape(T.swapaxes(a, 1, 2), (4, 6)))), [a])
    elif name == "matmul":
        a, b = tall((3, 4)), tall((4, 2))
        fd_check(lambda: T.sum_(T.mul(T.matmul(a, b), T.matmul(a, b))), [a, b])
    elif name == "matmul_batched":
        a, b = tall((2, 3, 4)), tall((4, 5))
        fd_check(lambda: T.sum_(T.mul(T.matmul(a, b), T.matmul(a, b))), [a, b])
    elif name == "conv1d":
        x, w = tall((2, 6)), tall((3, 2, 3))
        fd_check(lambda: T.sum_(T.mul(T.conv1d(x, w, 2, 1), T.conv1d(x, w, 2, 1))), [x, w])
    elif name == "softmax":
        a = tall((3, 5))
        tgt = rng.normal(size=(3, 5))
        fd_check(lambda: T.sum_(T.mul(T.softmax(a) - tgt, T.softmax(a) - tgt)), [a])
    elif name == "softmax_masked":
        a = tall((3, 5))
        mask = rng.uniform(size=(3, 5)) < 0.3
        mask[:, 0] = False  # keep every row alive
        tgt = rng.normal(size=(3, 5))
        fd_check(lambda: T.sum_(T.mul(T.softmax(a, mask=mask) - tgt,
                                      T.softmax(a, mask=mask) - tgt)), [a])
    elif name == "log_softmax":
        a = tall((4, 6))
        w = rng.normal(size=(4, 6))
        fd_check(lambda: T.sum_(T.mul(T.log_softmax(a), w)), [a])
    elif name == "layer_norm":
        x, g, b = tall((3, 6)), tall((6,)), tall((6,))
        tgt = rng.normal(size=(3, 6))
        fd_check(lambda: T.sum_(T.mul(T.layer_norm(x, g, b) - tgt,
                                      T.layer_norm(x, g, b) - tgt)), [x, g, b])
    elif name == "take_rows":
        a = tall((5, 3))
        idx = np.array([0, 2, 2, 4])
        w = rng.normal(size=(4, 3))
        fd_check(lambda: T.sum_(T.mul(T.take_rows(a, idx), w)), [a])
    elif name == "take_along_last":
        a = tall((4, 6))
        idx = rng.integers(0, 6, size=(4, 3))
        w = rng.normal(size=(4, 3))
        fd_check(lambda: T.sum_(T.mul(T.take_along_last(a, idx), w)), [a])
    elif name == "attention":
        q, k, v = tall((3, 4)), tall((5, 4)), tall((5, 4))
        w = rng.normal(size=(3, 4))
        fd_check(lambda: T.sum_(T.mul(T.attention(q, k, v), w)), [q, k, v])
    elif name == "attention_masked":
        q, k, v = tall((3, 4)), tall((5, 4)), tall((5, 4))
        mask = np.zeros((3, 5), dtype=bool)
        mask[:, 3] = True
        w = rng.normal(size=(3, 4))
        fd_check(lambda: T.sum_(T.mul(T.attention(q, k, v, mask=mask), w)), [q, k, v])
    else:  # pragma: no cover
        raise AssertionError(name)


def test_adam_zero_gradients_leave_params_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([("p", p)], learning_rate=0.1)
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_allclose(p.data, [1.0, -2.0])


def test_adam_first_step_magnitude_is_learning_rate():
    for g in (0.5, -3.0, 1e3):
        p = Tensor(np.zeros(4), requires_grad=True)
        opt = Adam([("p", p)], learning_rate=0.01)
        p.grad = np.full(4, g)
        opt.step()
        # first step: m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
        np.testing.assert_allclose(np.abs(p.data), 0.01, rtol=1e-6)
        assert np.sign(p.data[0]) == -np.sign(g)


def test_adam_deterministic():
    rng = np.random.default_rng(11)
    data = rng.normal(size=(3, 3))
    grads = [rng.normal(size=(3, 3)) for _ in range(5)]

    def run():
        p = Tensor(data.copy(), requires_grad=True)
        opt = Adam([("p", p)], learning_rate=0.05)
        for g in grads:
            p.grad = g.copy()
            opt.step()
        return p.data.tobytes()

    assert run() == run()


def test_adam_missing_gradient_names_parameter():
    p = Tensor(np.zeros(2), requires_grad=True)
    q = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.zeros(2)
    opt = Adam([("weights.p", p), ("weights.q", q)])
    with pytest.raises(UsageError, match="weights.q"):
        opt.step()


def test_adam_step_count_increments():
    p = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam([("p", p)])
    for expected in (1, 2, 3):
        p.grad = np.ones(1)
        opt.step()
        assert opt.step_count == expected
