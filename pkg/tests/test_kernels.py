import numpy as np
import pytest

import molone.kernels as kb
from molone.kernels import _impl_np


def _reference_matern52(x1, x2, ls, s2):
    # Straightforward per-pair evaluation, independent of the vectorized code.
    out = np.empty((len(x1), len(x2)))
    for i, a in enumerate(x1):
        for j, b in enumerate(x2):
            r = np.sqrt(np.sum(((a - b) / ls) ** 2))
            out[i, j] = s2 * (1 + np.sqrt(5) * r + 5 * r**2 / 3) * np.exp(-np.sqrt(5) * r)
    return out


def _reference_sqexp(x1, x2, ls, s2):
    out = np.empty((len(x1), len(x2)))
    for i, a in enumerate(x1):
        for j, b in enumerate(x2):
            out[i, j] = s2 * np.exp(-0.5 * np.sum(((a - b) / ls) ** 2))
    return out


@pytest.fixture
def data():
    gen = np.random.default_rng(0)
    return (gen.uniform(size=(8, 4)), gen.uniform(size=(11, 4)),
            gen.uniform(0.2, 1.5, size=4), 1.7, gen.normal(size=11))


def test_cross_matches_reference(data):
    x1, x2, ls, s2, _ = data
    assert np.allclose(kb.cross("matern52", x1, x2, ls, s2),
                       _reference_matern52(x1, x2, ls, s2), atol=1e-13)
    assert np.allclose(kb.cross("sqexp", x1, x2, ls, s2),
                       _reference_sqexp(x1, x2, ls, s2), atol=1e-13)


def test_grad_mean_matches_finite_differences(data):
    x1, x2, ls, s2, alpha = data
    h = 1e-6
    for kind in ("matern52", "sqexp"):
        grad = kb.grad_mean(kind, x1, x2, ls, s2, alpha)
        for q in range(3):
            for j in range(4):
                xp = x1.copy()
                xp[q, j] += h
                xm = x1.copy()
                xm[q, j] -= h
                fp = kb.cross(kind, xp[q:q + 1], x2, ls, s2) @ alpha
                fm = kb.cross(kind, xm[q:q + 1], x2, ls, s2) @ alpha
                fd = (fp - fm)[0] / (2 * h)
                assert grad[q, j] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_backends_agree(data):
    x1, x2, ls, s2, alpha = data
    for kind_name, kind_code in kb.KIND_CODES.items():
        k_sel = kb.cross(kind_name, x1, x2, ls, s2)
        k_np = _impl_np.cross(kind_code, x1, x2, ls, s2)
        assert np.allclose(k_sel, k_np, atol=1e-14)
        g_sel = kb.grad_mean(kind_name, x1, x2, ls, s2, alpha)
        g_np = _impl_np.grad_mean(kind_code, x1, x2, ls, s2, alpha)
        assert np.allclose(g_sel, g_np, atol=1e-13)


def test_kernel_at_zero_distance(data):
    _, _, ls, s2, _ = data
    x = np.array([[0.3, 0.4, 0.5, 0.6]])
    for kind in ("matern52", "sqexp"):
        assert kb.cross(kind, x, x, ls, s2)[0, 0] == pytest.approx(s2)
        # Stationary kernels peak at zero distance, so the gradient vanishes.
        g = kb.grad_mean(kind, x, x, ls, s2, np.array([1.0]))
        assert np.allclose(g, 0.0, atol=1e-14)
