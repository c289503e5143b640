"""Seeded random test matrices.

Column ``j`` of every test matrix is drawn from its own Philox4x64-10 stream:
key = seed (mod 2**64), counter = ``j << 192``. Columns are therefore fixed by
(distribution, N, seed, j) alone, which gives the prefix property used by the
doubling driver: extending a k-column matrix reproduces the first k columns
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DISTRIBUTIONS = ("signs", "gaussian", "sphere")


def _column_rng(seed: int, j: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) % 2**64, counter=j << 192))


def _draw_column(distribution: str, n: int, seed: int, j: int) -> np.ndarray:
    rng = _column_rng(seed, j)
    if distribution == "signs":
        return 2.0 * rng.integers(0, 2, size=n) - 1.0
    g = rng.standard_normal(n)
    if distribution == "sphere":
        g *= np.sqrt(n) / np.linalg.norm(g)
    return g


@dataclass(frozen=True)
class TestMatrix:
    """N x k block of iid isotropic test vectors plus its provenance."""

    __test__ = False  # not a pytest class

    omega: np.ndarray
    distribution: str
    seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.omega.shape

    def permuted(self, perm) -> "TestMatrix":
        return TestMatrix(self.omega[:, np.asarray(perm)], self.distribution, self.seed)


def _check_distribution(distribution: str) -> None:
    if distribution not in DISTRIBUTIONS:
        raise ValueError(
            f"unknown distribution {distribution!r}; expected one of {DISTRIBUTIONS}"
        )


def _columns(distribution, n, seed, start, stop) -> np.ndarray:
    out = np.empty((n, stop - start))
    for c, j in enumerate(range(start, stop)):
        out[:, c] = _draw_column(distribution, n, seed, j)
    return out


def sample_test_matrix(distribution: str, n: int, k: int, seed: int = 0) -> TestMatrix:
    """Draw ``k`` iid test vectors of length ``n``.

    ``signs`` are uniform on {+1, -1}; ``gaussian`` are standard normal;
    ``sphere`` are gaussian columns rescaled to norm sqrt(n).
    """
    _check_distribution(distribution)
    if n < 1 or k < 1:
        raise ValueError(f"need n >= 1 and k >= 1, got n={n}, k={k}")
    return TestMatrix(_columns(distribution, n, seed, 0, k), distribution, int(seed))


def extend_test_matrix(tm: TestMatrix, extra_k: int) -> TestMatrix:
    """Append ``extra_k`` columns continuing the same streams."""
    if extra_k < 0:
        raise ValueError("extra_k must be nonnegative")
    if extra_k == 0:
        return tm
    n, k = tm.omega.shape
    more = _columns(tm.distribution, n, tm.seed, k, k + extra_k)
    return TestMatrix(np.hstack([tm.omega, more]), tm.distribution, tm.seed)


def trial_seeds(seed: int, trials: int) -> list[int]:
    """Independent 64-bit seeds for ``trials`` runs, split from one root seed."""
    states = np.random.SeedSequence(int(seed)).generate_state(trials, dtype=np.uint64)
    return [int(s) for s in states]
