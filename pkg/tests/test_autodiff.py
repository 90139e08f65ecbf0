import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from contactdiff import autodiff as ad
from contactdiff.autodiff import ParameterStore, Tensor
from helpers import grad_check, max_rel_error


def test_square_sum_gradient():
    x = Tensor([3.0], requires_grad=True)
    ad.backward(ad.sum(x * x))
    np.testing.assert_array_equal(x.grad, [6.0])


def test_linear_map_gradient_is_transpose_times_ones():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 3))
    x = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
    ad.backward(ad.sum(ad.matmul(A, x)))
    np.testing.assert_allclose(x.grad, A.T @ np.ones((4, 1)))


def test_identity_matmul_and_softmax_symmetry():
    A = np.random.default_rng(1).normal(size=(3, 5))
    np.testing.assert_array_equal(ad.matmul(np.eye(3), A).data, A)
    np.testing.assert_array_equal(ad.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_layer_norm_of_constant_is_zero():
    out = ad.layer_norm(Tensor(np.full((2, 7), 3.25)))
    np.testing.assert_array_equal(out.data, np.zeros((2, 7)))


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(x * 2.0)


def test_tape_cleared_after_backward():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with ad.fresh_tape() as tape:
        loss = ad.sum(ad.exp(x))
        assert len(tape) == 2
        tape.backward(loss)
        assert len(tape) == 0


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with ad.fresh_tape() as tape, ad.no_grad():
        y = ad.sin(x)
        assert len(tape) == 0
        assert not y.requires_grad


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ad.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_forward_op_dispatch_and_unknown():
    out = ad.forward_op("add", Tensor([1.0]), Tensor([2.0]))
    assert out.data.tolist() == [3.0]
    with pytest.raises(ValueError, match="unknown op"):
        ad.forward_op("conv3d", Tensor([1.0]))


def test_records_are_topological_and_visited_once():
    x = Tensor(np.array([0.3, -0.2]), requires_grad=True)
    seen = []
    with ad.fresh_tape() as tape:
        y = ad.exp(x)
        z = ad.sum(y * y + y)
        produced = set()
        for rec in tape.records:
            for inp in rec.inputs:
                if isinstance(inp, Tensor) and inp.requires_grad and inp is not x:
                    assert id(inp) in produced
            produced.add(id(rec.output))
        for rec in tape.records:
            fn = rec.backward_fn

            def wrapped(g, fn=fn, name=rec.name, rid=id(rec)):
                seen.append(rid)
                return fn(g)

            rec.backward_fn = wrapped
        n_rec = len(tape)
        tape.backward(z)
    assert len(seen) == n_rec == len(set(seen))
    np.testing.assert_allclose(x.grad, 2 * np.exp(2 * x.data) + np.exp(x.data))


@pytest.mark.parametrize("seed", range(20))
def test_mlp_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ws = [Tensor(rng.normal(size=s) / np.sqrt(s[0]), requires_grad=True) for s in ((5, 8), (8, 6), (6, 3))]
    x = rng.normal(size=(4, 5))

    def loss():
        h = ad.gelu(ad.matmul(x, ws[0]))
        h = ad.layer_norm(ad.relu(ad.matmul(h, ws[1])) + 0.1)
        return ad.mean(ad.square(ad.matmul(h, ws[2])))

    assert grad_check(loss, ws) < 1e-4


@pytest.mark.parametrize("name", ["sin", "cos", "exp", "square", "sigmoid", "gelu", "softmax", "log_softmax",
                                  "layer_norm"])
def test_unary_ops_gradients(name):
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = rng.normal(size=(3, 4))
    fn = ad.OPS[name]
    assert grad_check(lambda: ad.sum(fn(x) * w), [x]) < 1e-4


def test_positive_domain_ops_gradients():
    rng = np.random.default_rng(4)
    x = Tensor(rng.uniform(0.5, 2.0, size=(5,)), requires_grad=True)
    w = rng.normal(size=5)
    assert grad_check(lambda: ad.sum((ad.log(x) + ad.sqrt(x) + 1.0 / x) * w), [x]) < 1e-4


def test_structural_ops_gradients():
    rng = np.random.default_rng(5)
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 3, 2)), requires_grad=True)

    def loss():
        c = ad.concat([a, b], axis=-1)
        t = ad.transpose(c, (2, 0, 1))
        r = ad.reshape(t, (6, 6))
        s = r[[0, 2, 2, 5], 1:4]
        m = ad.min_reduce(ad.stack([s, s * 0.5 + 0.1], axis=0), axis=0)
        return ad.sum(ad.square(m)) + ad.mean(ad.broadcast_to(a[:, :1, :], (2, 5, 4)))

    assert grad_check(loss, [a, b]) < 1e-4


def test_rodrigues_coefficients_are_smooth_at_zero():
    s = Tensor(np.array([0.0, 1e-16, 1e-8, 0.3, 2.0]), requires_grad=True)
    th = np.sqrt(s.data[2:])
    np.testing.assert_allclose(ad.rodrigues_sin_coef(s).data[2:], np.sin(th) / th, rtol=1e-12)
    np.testing.assert_allclose(ad.rodrigues_cos_coef(s).data[2:], (1 - np.cos(th)) / th**2, rtol=1e-6)
    np.testing.assert_allclose(ad.rodrigues_sin_coef(s).data[:2], [1.0, 1.0])
    np.testing.assert_allclose(ad.rodrigues_cos_coef(s).data[:2], [0.5, 0.5])
    ad.backward(ad.sum(ad.rodrigues_sin_coef(s) + ad.rodrigues_cos_coef(s)))
    assert np.all(np.isfinite(s.grad))
    # derivatives at zero: -1/6 and -1/24
    np.testing.assert_allclose(s.grad[0], -1 / 6 - 1 / 24)


def test_clip_gradient_zero_outside():
    x = Tensor(np.array([-2.0, 0.5, 3.0]), requires_grad=True)
    ad.backward(ad.sum(ad.clip(x, 0.0, 1.0)))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_forward_ops_keep_values_finite(x):
    t = Tensor(x)
    for name in ("sin", "cos", "sigmoid", "gelu", "softmax", "log_softmax", "layer_norm", "square", "relu"):
        out = ad.OPS[name](t)
        assert out.data.shape == x.shape
        assert np.all(np.isfinite(out.data))


# ---------------------------------------------------------------- Adam


def test_adam_zero_gradient_leaves_params():
    store = ParameterStore()
    store.add("w", np.array([1.0, -2.0]))
    ad.adam_step(store, 0.1)
    np.testing.assert_array_equal(store["w"].data, [1.0, -2.0])
    assert store.step == 1


def test_adam_first_step_is_minus_lr():
    store = ParameterStore()
    store.add("w", np.array(0.0))
    store["w"].grad = np.array(1.0)
    ad.adam_step(store, 0.01)
    # m_hat = 1, v_hat = 1 after bias correction
    np.testing.assert_allclose(store["w"].data, -0.01 / (1 + 1e-8), rtol=1e-12)
    assert store["w"].grad is None


def test_adam_repeated_steps_monotone():
    store = ParameterStore()
    store.add("w", np.array(0.0))
    values = []
    for _ in range(5):
        store["w"].grad = np.array(0.7)
        ad.adam_step(store, 0.01)
        values.append(float(store["w"].data))
    assert all(b < a for a, b in zip([0.0] + values, values))


def test_parameter_store_grad_shapes_and_load_mismatch():
    store = ParameterStore()
    store.add("a", np.ones((2, 3)))
    assert store.grads()["a"].shape == (2, 3)
    with pytest.raises(ValueError, match="mismatch"):
        store.load_arrays({"a": np.ones((3, 2))})
    with pytest.raises(ValueError, match="mismatch"):
        store.load_arrays({"b": np.ones((2, 3))})


def test_numeric_grad_oracle_itself():
    x = np.array([0.4, -1.3])
    g = ad.numeric_grad(lambda: float(np.sum(x**3)), x)
    assert max_rel_error(g, 3 * x**2) < 1e-8
