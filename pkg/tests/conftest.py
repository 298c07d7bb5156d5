import numpy as np
import pytest

from noisytrain.kernel import Matrix


def finite_difference_grad(fn, mats, h=1e-5):
    """Central finite differences of fn() w.r.t. every entry of each matrix.

    fn must recompute the full forward pass from the matrices' current
    contents; entries are perturbed in place and restored.
    """
    grads = []
    for m in mats:
        g = np.zeros(m.shape)
        flat = m.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn()
            flat[i] = orig - h
            f_minus = fn()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Elementwise |a - n| / max(|a|, |n|), treating near-zero pairs as exact."""
    err = 0.0
    for a, n in zip(analytic.reshape(-1), numeric.reshape(-1)):
        denom = max(abs(a), abs(n))
        if denom < 1e-7:
            continue
        err = max(err, abs(a - n) / denom)
    return err


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_matrix(rng, rows, cols, lo=-1.0, hi=1.0) -> Matrix:
    return Matrix(rng.uniform(lo, hi, size=(rows, cols)))
