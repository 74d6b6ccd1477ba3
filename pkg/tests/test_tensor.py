"""Tensor engine: forward oracles, gradient rules, backward semantics."""

import numpy as np
import numpy.testing as npt
import pytest

from dualstream.errors import ContractError, DimensionError
from dualstream.gradcheck import check_parameter_gradients
from dualstream.tensor import (Parameter, Tensor, add, backward, broadcast_to,
                               concat, gelu, getitem, layer_norm, linear,
                               matmul, mul, pad_axis, power, reshape, sigmoid,
                               softmax, softplus, sub, take_rows, tanh, texp,
                               tlog, tmean, transpose, tsum, zero_grads)


def rand(rng, *shape):
    return rng.uniform(-2.0, 2.0, size=shape)


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor(np.eye(2)), Tensor([[3.0, 4.0], [5.0, 6.0]]))
        npt.assert_array_equal(out.data, [[3.0, 4.0], [5.0, 6.0]])

    def test_hand_case(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        npt.assert_array_equal(out.data, [[11.0]])

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rand(rng, 3, 4), rand(rng, 4, 2)
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        npt.assert_allclose(matmul(Tensor(a), Tensor(b)).data, expected,
                            atol=1e-12, rtol=0)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    def test_batch_broadcast(self):
        rng = np.random.default_rng(1)
        a, b = rand(rng, 5, 1, 3, 4), rand(rng, 1, 2, 4, 2)
        npt.assert_allclose(matmul(Tensor(a), Tensor(b)).data, a @ b)

    def test_incompatible_batch_dims(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.zeros((3, 2, 2))), Tensor(np.zeros((4, 2, 2))))


class TestSoftmax:
    def test_symmetry(self):
        out = softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
        npt.assert_allclose(out.data, np.full(3, 1.0 / 3.0), rtol=0, atol=1e-15)

    def test_large_values_stay_finite(self):
        out = softmax(Tensor([1000.0, 0.0]), axis=0).data
        assert np.isfinite(out).all()
        npt.assert_allclose(out, [1.0, 0.0], atol=1e-300)

    def test_matches_extended_precision_oracle(self):
        import mpmath
        mpmath.mp.dps = 50
        xs = [1.0, 2.0, 3.0]
        es = [mpmath.exp(x) for x in xs]
        total = sum(es)
        expected = np.array([float(e / total) for e in es])
        npt.assert_allclose(softmax(Tensor(xs), axis=0).data, expected,
                            atol=1e-12, rtol=0)

    def test_rows_sum_to_one_and_positive(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            x = rng.uniform(-60.0, 60.0, size=(4, 7))
            out = softmax(Tensor(x), axis=1).data
            npt.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9, rtol=0)
            assert (out > 0).all()

    def test_bad_axis(self):
        with pytest.raises(DimensionError):
            softmax(Tensor(np.zeros((2, 2))), axis=5)


class TestLayerNorm:
    def test_constant_vector_collapses_to_beta(self):
        out = layer_norm(Tensor([5.0, 5.0, 5.0, 5.0]),
                         Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=1e-5)
        npt.assert_allclose(out.data, np.zeros(4), atol=1e-12)

    def test_already_normalized(self):
        out = layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)),
                         Tensor(np.zeros(2)), eps=1e-12)
        npt.assert_allclose(out.data, [1.0, -1.0], atol=1e-6)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(3)
        x = rand(rng, 8)
        gamma, beta = rand(rng, 8), rand(rng, 8)
        eps = 1e-5
        mean = sum(x) / 8
        var = sum((v - mean) ** 2 for v in x) / 8
        expected = gamma * (x - mean) / np.sqrt(var + eps) + beta
        out = layer_norm(Tensor(x), Tensor(gamma), Tensor(beta), eps=eps)
        npt.assert_allclose(out.data, expected, atol=1e-10, rtol=0)

    def test_unit_statistics(self):
        # variance >> eps so the eps bias stays below the 1e-6 budget
        rng = np.random.default_rng(4)
        x = rng.normal(0.0, 10.0, size=(5, 16))
        out = layer_norm(Tensor(x), Tensor(np.ones(16)),
                         Tensor(np.zeros(16)), eps=1e-5).data
        npt.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
        npt.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)

    def test_eps_nonpositive_rejected(self):
        with pytest.raises(ContractError):
            layer_norm(Tensor([1.0]), Tensor([1.0]), Tensor([0.0]), eps=0.0)

    def test_gamma_length_mismatch(self):
        with pytest.raises(DimensionError):
            layer_norm(Tensor(np.zeros(4)), Tensor(np.ones(3)),
                       Tensor(np.zeros(3)), eps=1e-5)


class TestLinear:
    def test_identity(self):
        out = linear(Tensor([1.0, 0.0]), Tensor(np.eye(2)), Tensor(np.zeros(2)))
        npt.assert_array_equal(out.data, [1.0, 0.0])

    def test_hand_case(self):
        out = linear(Tensor([1.0, 1.0]), Tensor([[2.0], [3.0]]), Tensor([1.0]))
        npt.assert_array_equal(out.data, [6.0])

    def test_matches_matmul_add_composition(self):
        rng = np.random.default_rng(5)
        x, w, b = rand(rng, 4, 6, 3), rand(rng, 3, 5), rand(rng, 5)
        expected = add(matmul(Tensor(x), Tensor(w)), Tensor(b)).data
        npt.assert_allclose(linear(Tensor(x), Tensor(w), Tensor(b)).data,
                            expected, atol=1e-12, rtol=0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            linear(Tensor(np.zeros(3)), Tensor(np.zeros((4, 2))),
                   Tensor(np.zeros(2)))


class TestBackward:
    def test_linear_gradient_is_input(self):
        x = np.array([1.5, -2.0, 0.5])
        w = Parameter(np.array([0.3, 0.7, -1.1]), "w")
        loss = tsum(mul(w, Tensor(x)))
        backward(loss)
        npt.assert_array_equal(w.grad, x)

    def test_unused_parameter_keeps_zero_grad(self):
        used = Parameter(np.ones(3), "used")
        unused = Parameter(np.ones(3), "unused")
        backward(tsum(used))
        npt.assert_array_equal(unused.grad, np.zeros(3))
        npt.assert_array_equal(used.grad, np.ones(3))

    def test_non_scalar_rejected(self):
        with pytest.raises(ContractError):
            backward(Tensor(np.zeros(3)))

    def test_accumulation_is_additive(self):
        w = Parameter(np.ones(2), "w")
        backward(tsum(w))
        backward(tsum(mul(w, 2.0)))
        npt.assert_array_equal(w.grad, np.full(2, 3.0))
        zero_grads([w])
        npt.assert_array_equal(w.grad, np.zeros(2))

    def test_shared_subexpression_accumulates(self):
        w = Parameter(np.array([2.0]), "w")
        loss = tsum(mul(w, w))  # d/dw w^2 = 2w
        backward(loss)
        npt.assert_allclose(w.grad, [4.0])

    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(6)
        w = Parameter(rand(rng, 4, 4), "w")
        x = Tensor(rand(rng, 3, 4))

        def run():
            zero_grads([w])
            y = softmax(matmul(x, w), axis=1)
            backward(tsum(mul(y, y)))
            return w.grad.copy()

        first, second = run(), run()
        assert (first == second).all()


# one finite-difference case per primitive, 20 random shapes each
PRIMITIVES = {
    "add": lambda p, c: add(p, Tensor(c)),
    "add_broadcast": lambda p, c: add(reshape(p, (1,) + p.shape), Tensor(c[:2, None])),
    "sub": lambda p, c: sub(Tensor(c), p),
    "mul": lambda p, c: mul(p, Tensor(c)),
    "power": lambda p, c: power(add(mul(p, p), 0.5), 1.7),
    "exp": lambda p, c: texp(p),
    "log": lambda p, c: tlog(add(mul(p, p), 0.5)),
    "tanh": lambda p, c: tanh(p),
    "sigmoid": lambda p, c: sigmoid(p),
    "softplus": lambda p, c: softplus(p),
    "gelu": lambda p, c: gelu(p),
    "softmax": lambda p, c: softmax(p, axis=-1),
    "sum_axis": lambda p, c: tsum(p, axis=1, keepdims=True),
    "mean": lambda p, c: tmean(p, axis=0),
    "reshape": lambda p, c: reshape(p, (p.size,)),
    "transpose": lambda p, c: transpose(p, (2, 0, 1)),
    "concat": lambda p, c: concat([p, Tensor(c), p], axis=1),
    "getitem": lambda p, c: getitem(p, (slice(1, 3), slice(None), 1)),
    "pad": lambda p, c: pad_axis(p, 1, 2, 1),
    "broadcast": lambda p, c: broadcast_to(reshape(p, (1,) + p.shape),
                                           (4,) + p.shape),
    "take_rows": lambda p, c: take_rows(p, np.array([0, 2, 2, 1])),
    "matmul": lambda p, c: matmul(p, Tensor(np.swapaxes(c, -1, -2))),
    "layer_norm": lambda p, c: layer_norm(p, Tensor(np.ones(p.shape[-1])),
                                          Tensor(np.zeros(p.shape[-1])), 1e-5),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name):
    op = PRIMITIVES[name]
    for trial in range(20):
        rng = np.random.default_rng([7, trial])
        p = Parameter(rand(rng, 3, 4, 5), name)
        c = rand(rng, 3, 4, 5)
        r = rand(rng, 1)  # projection weights fixed per trial
        proj = Tensor(rng.uniform(-1, 1, size=op(p, c).shape))

        def build():
            return tsum(mul(op(p, c), proj))

        worst = check_parameter_gradients(build, [p], step=1e-4,
                                          max_coords=6, seed=trial,
                                          floor=1e-3)
        assert worst[name] <= 1e-5, f"{name} trial {trial}: {worst[name]}"


def test_axis_roles_validated():
    t = Tensor(np.zeros((2, 3)), axis_roles=("speaker", "time"))
    assert t.axis_roles == ("speaker", "time")
    with pytest.raises(ContractError):
        Tensor(np.zeros((2, 3)), axis_roles=("speaker",))
    with pytest.raises(ContractError):
        Tensor(np.zeros((2,)), axis_roles=("banana",))


def test_values_finite_after_forward_chain():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(4, 6)))
    y = softmax(linear(x, Tensor(rand(rng, 6, 6)), Tensor(rand(rng, 6))), axis=1)
    z = layer_norm(y, Tensor(np.ones(6)), Tensor(np.zeros(6)), 1e-5)
    assert np.isfinite(z.data).all()
