import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from misca.decoders import crf_nll
from misca.numerics import (
    ContractError,
    DimensionError,
    backward,
    elementwise,
    gradcheck,
    matmul,
    numerical_gradient,
    softmax_cols,
    softmax_rows,
)


def naive_matmul(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    out = [[0.0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += a[i][k] * b[k][j]
            out[i][j] = acc
    return out


def test_matmul_identity():
    out = matmul(torch.eye(2), torch.tensor([[3.0], [4.0]]))
    assert out.tolist() == [[3.0], [4.0]]


def test_matmul_dot():
    assert matmul(torch.tensor([[1.0, 2.0]]), torch.tensor([[3.0], [4.0]])).tolist() == [[11.0]]


def test_matmul_matches_triple_loop(rng):
    a = torch.randn(3, 4, generator=rng)
    b = torch.randn(4, 2, generator=rng)
    expected = torch.tensor(naive_matmul(a.tolist(), b.tolist()))
    got = matmul(a, b)
    assert torch.allclose(got, expected, rtol=0, atol=1e-13)
    assert torch.equal(got, matmul(a.clone(), b.clone()))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(torch.zeros(2, 3), torch.zeros(2, 3))


def test_softmax_rows_symmetric():
    assert softmax_rows(torch.zeros(1, 2)).tolist() == [[0.5, 0.5]]


def test_tanh_zero():
    assert elementwise("tanh", torch.zeros(1, 1)).tolist() == [[0.0]]


def test_softmax_cols_sum_to_one(rng):
    x = torch.randn(3, 2, generator=rng)
    out = softmax_cols(x)
    for c in range(2):
        assert abs(sum(out[:, c].tolist()) - 1) <= 1e-9


def test_softmax_survives_large_logits():
    out = softmax_rows(torch.tensor([[1000.0, 0.0, -1000.0]]))
    assert torch.isfinite(out).all()
    assert out[0, 0] == pytest.approx(1.0)


def test_masked_softmax_gives_pads_zero():
    out = softmax_rows(torch.tensor([[1.0, 2.0, 3.0]]), torch.tensor([[1.0, 1.0, 0.0]]))
    assert out[0, 2].item() == 0.0
    assert out[0, :2].sum().item() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(-50, 50, allow_nan=False), min_size=3, max_size=3), min_size=1, max_size=5
    )
)
def test_softmax_rows_property(rows):
    out = softmax_rows(torch.tensor(rows))
    assert torch.all((out.sum(dim=1) - 1).abs() <= 1e-9)


def test_elementwise_shape_errors():
    with pytest.raises(DimensionError):
        elementwise("add", torch.zeros(2, 2), torch.zeros(2, 3))
    with pytest.raises(DimensionError):
        elementwise("concat_rows", torch.zeros(2, 2), torch.zeros(1, 3))


def test_backward_outer_product_gradient(rng):
    W = torch.randn(3, 4, generator=rng, requires_grad=True)
    x = torch.randn(4, 1, generator=rng)
    f = lambda: matmul(W, x).sum()
    backward(f())
    numeric = numerical_gradient(f, W, 1e-4)
    assert torch.allclose(W.grad, torch.ones(3, 1) @ x.T, atol=1e-12)
    assert torch.allclose(W.grad, numeric, atol=1e-8)


def test_backward_constant_gives_zero_gradient(rng):
    W = torch.randn(2, 2, generator=rng, requires_grad=True)
    V = torch.randn(2, 2, generator=rng, requires_grad=True)
    backward(V.sum() + 0 * W.sum())
    assert torch.count_nonzero(W.grad) == 0


def test_backward_rejects_non_scalar():
    W = torch.zeros(2, 2, requires_grad=True)
    with pytest.raises(ContractError):
        backward(W * 2)


def test_gradcheck_quadratic(rng):
    theta = torch.randn(5, generator=rng, requires_grad=True)
    rep = gradcheck(lambda: 0.5 * (theta**2).sum(), [("theta", theta)], step=1e-4, tol=1e-8)
    assert rep.ok, rep.format()
    assert rep.worst <= 1e-8


def test_gradcheck_sigmoid_bce(rng):
    w = torch.randn(4, generator=rng, requires_grad=True)
    X = torch.randn(6, 4, generator=rng)
    y = torch.tensor([1.0, 0.0, 1.0, 1.0, 0.0, 0.0])

    def f():
        p = torch.sigmoid(X @ w)
        return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).sum()

    rep = gradcheck(f, {"w": w}, step=1e-4, tol=1e-5)
    assert rep.ok, rep.format()


def test_gradcheck_crf_nll(rng):
    K, n = 4, 5
    em = torch.randn(K, n, generator=rng, requires_grad=True)
    T = torch.randn(K + 2, K + 2, generator=rng, requires_grad=True)
    tags = torch.tensor([0, 2, 1, 1, 3])
    rep = gradcheck(lambda: crf_nll(em, T, tags), [("emissions", em), ("transitions", T)], step=1e-4, tol=1e-4)
    assert rep.ok, rep.format()


def test_gradcheck_flags_wrong_gradient():
    theta = torch.tensor([1.0, 2.0], requires_grad=True)

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return (x**2).sum()

        @staticmethod
        def backward(ctx, g):
            return g * torch.ones(2)

    rep = gradcheck(lambda: Wrong.apply(theta), [("theta", theta)])
    assert not rep.ok
    assert rep.failures == ["theta"]


def test_gradcheck_rejects_bad_step():
    with pytest.raises(ContractError):
        gradcheck(lambda: torch.zeros(()), [], step=0.0)
