import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from proxytrain import autodiff as ad
from proxytrain.autodiff import (NonDeterministicError, NonFiniteError, ShapeError, Tensor,
                                 finite_diff_check, gradients, log_softmax)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def param(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


# ---- forward values ---------------------------------------------------------


def test_matmul_identity_padded():
    a = np.array([[1.0, 2, 3], [4, 5, 6]])
    b = np.array([[1.0, 0], [0, 1], [0, 0]])
    assert np.array_equal((Tensor(a) @ Tensor(b)).data, [[1, 2], [4, 5]])


def test_log_exp_inverse():
    x = Tensor([0.5, -1.2])
    np.testing.assert_allclose(x.exp().log().data, [0.5, -1.2], rtol=0, atol=1e-15)


def test_sum_of_ones():
    assert Tensor(np.ones((3, 3))).sum().item() == 9.0


def test_nan_and_inf_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        Tensor([np.inf])


def test_overflow_is_reported():
    with pytest.raises(NonFiniteError):
        Tensor([1000.0]).exp()
    with pytest.raises(NonFiniteError):
        Tensor([0.0]).log()


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4, 5)))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_evaluation_is_bit_deterministic(rng):
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5))

    def f():
        return log_softmax(Tensor(a) @ Tensor(b), axis=1).exp().sum(axis=0).data

    assert f().tobytes() == f().tobytes()


# ---- gradients ----------------------------------------------------------------


def test_quadratic_gradient():
    w = param([1.0, 2.0])
    assert np.array_equal(gradients((w * w).sum(), {"w": w})["w"], [2.0, 4.0])


def test_constant_loss_gives_zero_gradient():
    w = param([1.0, 2.0])
    g = gradients(Tensor(3.0) + 0.0 * Tensor([1.0]).sum(), {"w": w})
    assert np.array_equal(g["w"], [0.0, 0.0])


def test_unreachable_param_gets_zeros():
    w, v = param([1.0, 2.0]), param(np.ones((2, 2)))
    g = gradients((w * 3).sum(), {"w": w, "v": v})
    assert np.array_equal(g["v"], np.zeros((2, 2)))
    assert np.array_equal(g["w"], [3.0, 3.0])


def test_non_scalar_loss_rejected():
    w = param([1.0, 2.0])
    with pytest.raises(ValueError):
        gradients(w * 2, {"w": w})


def test_softmax_cross_entropy_matches_finite_differences():
    z = param([0.3, -1.0, 2.0])
    err = finite_diff_check(lambda: -log_softmax(z, axis=0)[1], {"z": z}, eps=1e-6)
    assert err <= 1e-6


def test_softmax_cross_entropy_gradient_closed_form():
    z = param([0.3, -1.0, 2.0])
    g = gradients(-log_softmax(z, axis=0)[1], {"z": z})["z"]
    p = np.exp(z.data) / np.exp(z.data).sum()
    np.testing.assert_allclose(g, p - np.eye(3)[1], atol=1e-15)


def test_quadratic_finite_diff_error_tiny():
    w = param([0.7, -1.3, 2.2])
    assert finite_diff_check(lambda: (w * w).sum(), {"w": w}) <= 1e-9


def test_broadcast_gradients_are_summed(rng):
    x = param(rng.standard_normal((4, 3)))
    b = param(rng.standard_normal(3))
    c = param(rng.standard_normal((4, 1)))
    g = gradients(((x + b) * c).sum(), {"b": b, "c": c})
    np.testing.assert_allclose(g["b"], np.full(3, c.data.sum()), atol=1e-14)
    np.testing.assert_allclose(g["c"], (x.data + b.data).sum(1, keepdims=True), atol=1e-14)


def test_shared_subexpression_accumulates():
    w = param([3.0])
    y = w * w
    g = gradients((y + y * w).sum(), {"w": w})["w"]
    assert g[0] == pytest.approx(2 * 3 + 3 * 9)


def test_max_tie_routes_to_first_index():
    x = param([1.0, 5.0, 5.0, 2.0])
    assert np.array_equal(gradients(x.max(), {"x": x})["x"], [0, 1, 0, 0])
    m = param([[5.0, 5.0], [1.0, 4.0]])
    assert np.array_equal(gradients(m.max(axis=1).sum(), {"m": m})["m"], [[1, 0], [0, 1]])


def test_relu_derivative_zero_at_zero():
    x = param([-1.0, 0.0, 2.0])
    assert np.array_equal(gradients(x.relu().sum(), {"x": x})["x"], [0, 0, 1])


def test_every_primitive_passes_fd(rng):
    a = param(rng.uniform(0.5, 2.0, (3, 4)))
    b = param(rng.standard_normal((4, 2)))
    c = param(rng.uniform(0.5, 2.0, (3, 4)))
    fn = lambda: ((a @ b).exp().mean() + (a / c).log().sum() + (a ** 3).sqrt().sum()  # noqa: E731
                  + (a - c).abs().mean() + a.T.reshape(12).max() + ad.where(a.data > 1, a, c).sum()
                  + ad.logsumexp(c, axis=0).sum())
    assert finite_diff_check(fn, {"a": a, "b": b, "c": c}) <= 1e-6


def test_finite_diff_check_rejects_nondeterministic_loss(rng):
    w = param([1.0])
    with pytest.raises(NonDeterministicError):
        finite_diff_check(lambda: (w * rng.random()).sum(), {"w": w})


def test_finite_diff_check_eps_range():
    w = param([1.0])
    for eps in (0.0, 1e-2):
        with pytest.raises(ValueError):
            finite_diff_check(lambda: (w * w).sum(), {"w": w}, eps=eps)


def test_finite_diff_check_catches_wrong_gradient():
    w = param([0.4, -0.8])

    def wrong_square(t):
        return Tensor.from_op(t.data ** 2, [(t, lambda g: -2 * g * t.data)])

    assert finite_diff_check(lambda: wrong_square(w).sum(), {"w": w}) > 0.5


def test_finite_diff_check_restores_params(rng):
    w = param(rng.standard_normal(5))
    before = w.data.copy()
    finite_diff_check(lambda: (w * w).sum(), {"w": w})
    assert np.array_equal(w.data, before)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=2, max_side=4), elements=finite),
       st.floats(-3, 3), st.floats(-3, 3))
def test_gradient_is_linear(data, alpha, beta):
    w = param(data)
    f = (w * w).sum()
    h = (w.exp() * 0.5).sum()
    combined = gradients(f * alpha + h * beta, {"w": w})["w"]
    separate = alpha * gradients(f, {"w": w})["w"] + beta * gradients(h, {"w": w})["w"]
    np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-12)


@given(st.integers(1, 6), st.integers(0, 2 ** 31))
def test_random_dag_sum_rule(depth, seed):
    # gradient of f1 + f2 equals the sum of their gradients on random expression chains
    r = np.random.default_rng(seed)
    w = param(r.standard_normal(3))

    def chain(r):
        t = w
        for _ in range(depth):
            op = r.integers(4)
            t = (t * r.standard_normal(3) if op == 0 else t + r.standard_normal(3) if op == 1
                 else (t * 0.3).exp() if op == 2 else t.relu() + t * 0.1)
        return t.sum()

    s1, s2 = r.integers(1 << 30), r.integers(1 << 30)
    f1 = chain(np.random.default_rng(s1))
    f2 = chain(np.random.default_rng(s2))
    g_sum = gradients(f1 + f2, {"w": w})["w"]
    g1 = gradients(chain(np.random.default_rng(s1)), {"w": w})["w"]
    g2 = gradients(chain(np.random.default_rng(s2)), {"w": w})["w"]
    np.testing.assert_allclose(g_sum, g1 + g2, rtol=1e-12, atol=1e-12)


# ---- serialization ------------------------------------------------------------


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=4),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_text_round_trip_is_lossless(arr):
    back = ad.loads(ad.dumps(Tensor(arr)))
    assert back.shape == arr.shape
    assert back.data.tobytes() == arr.tobytes()  # signed zeros included


def test_text_format_header(tmp_path):
    t = Tensor([[1.0, 0.1], [2.5, -3.0]])
    text = ad.dumps(t)
    assert text.splitlines()[0] == "shape: 2 2"
    ad.save(t, tmp_path / "t.txt")
    assert np.array_equal(ad.load(tmp_path / "t.txt").data, t.data)


def test_text_format_rejects_bad_counts():
    with pytest.raises(ValueError):
        ad.loads("shape: 2 2\n1 2 3\n")
    with pytest.raises(ValueError):
        ad.loads("1 2 3\n")
