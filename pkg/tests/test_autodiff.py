import numpy as np
import pytest
import scipy.sparse as sp

from netlen import autodiff as ad
from netlen.autodiff import Tensor


def _check(f, params, probes=20, seed=0, tol=1e-6):
    """Central differences at random entries of every param."""
    rng = np.random.default_rng(seed)
    for p in params:
        p.zero_grad()
    f().backward()
    worst = 0.0
    for p in params:
        for _ in range(probes):
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            worst = max(worst, ad.relative_error(p.grad[idx], ad.numeric_grad(f, p, idx)))
    assert worst < tol, worst


def _param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def test_elementwise_and_matmul_grads():
    rng = np.random.default_rng(1)
    a, b, c = _param(rng, 4, 3), _param(rng, 3, 5), _param(rng, 1, 5)
    _check(lambda: ad.total(ad.sigmoid(a @ b + c) * ad.leaky_relu(a @ b)), [a, b, c])


def test_concat_columns_scale_mean_grads():
    rng = np.random.default_rng(2)
    a, b = _param(rng, 5, 2), _param(rng, 5, 3)
    col = rng.uniform(0.5, 2, (5, 1))
    def f():
        mid = ad.columns(ad.concat([a, b]), 1, 4)
        return ad.mean(ad.scale(mid, col) * ad.sigmoid(mid))
    _check(f, [a, b])


def test_mse_grad():
    rng = np.random.default_rng(3)
    a = _param(rng, 6, 1)
    y = rng.normal(size=(6, 1))
    _check(lambda: ad.mse(a, y), [a])
    assert ad.mse(Tensor(y), y).item() == 0.0


def test_spmm_grad():
    rng = np.random.default_rng(4)
    m = sp.random(6, 4, density=0.5, random_state=4, format="csr")
    a = _param(rng, 4, 3)
    _check(lambda: ad.total(ad.sigmoid(ad.spmm(m, a))), [a])


def test_segment_softmax_sums_and_grad():
    rng = np.random.default_rng(5)
    seg = np.array([0, 0, 0, 1, 2, 2])
    x = _param(rng, 6, 1)
    out = ad.segment_softmax(x, seg, 3)
    sums = np.bincount(seg, weights=out.data[:, 0])
    assert np.allclose(sums, 1, atol=1e-12)
    w = rng.normal(size=(6, 1))
    _check(lambda: ad.total(ad.segment_softmax(x, seg, 3) * Tensor(w)), [x])


def test_segment_softmax_rejects_empty_segment():
    with pytest.raises(ValueError, match="empty"):
        ad.segment_softmax(Tensor(np.zeros((2, 1))), np.array([0, 2]), 3)


def test_segment_softmax_is_shift_stable():
    x = Tensor(np.array([[1000.0], [1001.0]]))
    out = ad.segment_softmax(x, np.array([0, 0]), 1)
    assert np.all(np.isfinite(out.data)) and abs(out.data.sum() - 1) < 1e-12


def test_batch_norm_grad_train_and_eval():
    rng = np.random.default_rng(6)
    a = _param(rng, 7, 3)
    bn = ad.BatchNormState(3)
    bn.gamma.data[:] = rng.uniform(0.5, 2, (1, 3))
    w = Tensor(rng.normal(size=(7, 3)))
    _check(lambda: ad.total(ad.batch_norm(a, bn, True) * w), [a, bn.gamma, bn.beta])
    _check(lambda: ad.total(ad.batch_norm(a, bn, False) * w), [a, bn.gamma, bn.beta])


def test_batch_norm_normalizes():
    x = Tensor(np.random.default_rng(7).normal(3, 5, (50, 2)))
    out = ad.batch_norm(x, ad.BatchNormState(2), True).data
    assert np.allclose(out.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(out.std(axis=0), 1, atol=1e-3)


def test_shared_subexpression_accumulates():
    a = Tensor(np.array([[2.0]]), requires_grad=True)
    (a * a + a).backward()
    assert a.grad[0, 0] == 5.0


def test_backward_guards():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (a @ a).backward()
    loss = ad.total(a)
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_non_finite_is_trapped():
    a = Tensor(np.array([[np.inf]]))
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        ad.add(a, Tensor(np.array([[-np.inf]])))


def test_constants_get_no_grad():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    c = Tensor(np.ones((2, 2)))
    ad.total(a @ c).backward()
    assert c.grad is None and np.all(a.grad == 2)
