import numpy as np
import pytest

from exchtrace.linop import DenseOperator, DenseSpectralOperator, haar_orthogonal


def low_rank_psd(n: int, r: int, seed: int = 0) -> DenseSpectralOperator:
    rng = np.random.default_rng(seed)
    U = haar_orthogonal(n, rng)
    lam = np.zeros(n)
    lam[:r] = rng.uniform(1.0, 10.0, size=r)
    return DenseSpectralOperator(U, lam)


def random_dense(n: int, seed: int = 0, symmetric: bool = False) -> DenseOperator:
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    if symmetric:
        A = A + A.T
    return DenseOperator(A, symmetric=symmetric)


def rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
