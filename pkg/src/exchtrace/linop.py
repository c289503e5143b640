"""Matrix-free square operators with matvec instrumentation.

Every operator exposes ``apply`` / ``apply_adjoint`` on N x k blocks and keeps
counters of how many columns went through each. The estimators only ever touch
operators through these two methods, so the counters are the cost model.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse

# Densification (for exact answers) is refused above this size.
MAX_DENSE_DIM = 4096


class DimensionError(ValueError):
    """Block passed to an operator has the wrong number of rows."""


class LinearOperator:
    """Implicit N x N real matrix.

    Subclasses implement ``_matmat`` (and ``_rmatmat`` unless symmetric).
    ``symmetric`` and ``psd`` are hints: they are trusted, never verified.
    """

    def __init__(self, dim: int, symmetric: bool = False, psd: bool = False):
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = int(dim)
        self.symmetric = bool(symmetric or psd)
        self.psd = bool(psd)
        self.matvec_count = 0
        self.adjoint_matvec_count = 0
        self._lock = threading.Lock()

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dim, self.dim)

    def _matmat(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _rmatmat(self, X: np.ndarray) -> np.ndarray:
        if self.symmetric:
            return self._matmat(X)
        raise NotImplementedError(f"{type(self).__name__} has no adjoint")

    def _check(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=float)
        vector = X.ndim == 1
        if vector:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] != self.dim:
            raise DimensionError(
                f"expected a block with {self.dim} rows, got shape {X.shape}"
            )
        return X, vector

    def apply(self, X) -> np.ndarray:
        """Return ``A @ X``; counts one matvec per column."""
        X, vector = self._check(X)
        out = self._matmat(X)
        with self._lock:
            self.matvec_count += X.shape[1]
        return out[:, 0] if vector else out

    def apply_adjoint(self, X) -> np.ndarray:
        """Return ``A.T @ X``; counts one adjoint matvec per column."""
        X, vector = self._check(X)
        out = self._rmatmat(X)
        with self._lock:
            self.adjoint_matvec_count += X.shape[1]
        return out[:, 0] if vector else out

    def __matmul__(self, X):
        return self.apply(X)

    def reset_counters(self) -> None:
        with self._lock:
            self.matvec_count = 0
            self.adjoint_matvec_count = 0

    def to_dense(self) -> np.ndarray:
        """Densify by applying to the identity. Not counted as matvecs."""
        if self.dim > MAX_DENSE_DIM:
            raise ValueError(
                f"refusing to densify a {self.dim}-dimensional operator "
                f"(limit {MAX_DENSE_DIM})"
            )
        return self._matmat(np.eye(self.dim))


class DenseOperator(LinearOperator):
    """Wraps an explicit square array."""

    def __init__(self, matrix, symmetric: bool | None = None, psd: bool = False):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"matrix must be square, got shape {matrix.shape}")
        if symmetric is None:
            symmetric = bool(np.array_equal(matrix, matrix.T))
        super().__init__(matrix.shape[0], symmetric=symmetric, psd=psd)
        self.matrix = matrix

    def _matmat(self, X):
        return self.matrix @ X

    def _rmatmat(self, X):
        if self.symmetric:
            return self.matrix @ X
        return self.matrix.T @ X

    def to_dense(self):
        return self.matrix.copy()


class IdentityOperator(LinearOperator):
    def __init__(self, dim: int):
        super().__init__(dim, symmetric=True, psd=True)

    def _matmat(self, X):
        return X.copy()

    def to_dense(self):
        return np.eye(self.dim)

    @property
    def exact_trace(self) -> float:
        return float(self.dim)

    @property
    def exact_diag(self) -> np.ndarray:
        return np.ones(self.dim)


class DenseSpectralOperator(LinearOperator):
    """Symmetric operator ``U diag(lam) U.T`` with known eigenpairs.

    The explicit matrix is assembled once; applying it costs one GEMM.
    """

    def __init__(self, eigenbasis, eigenvalues):
        U = np.asarray(eigenbasis, dtype=float)
        lam = np.asarray(eigenvalues, dtype=float)
        if U.ndim != 2 or U.shape[0] != U.shape[1] or U.shape[0] != lam.shape[0]:
            raise ValueError("eigenbasis must be N x N and eigenvalues length N")
        super().__init__(lam.shape[0], symmetric=True, psd=bool(np.all(lam >= 0)))
        self.eigenbasis = U
        self.eigenvalues = lam
        M = (U * lam) @ U.T
        self.matrix = (M + M.T) / 2
        self.exact_trace = float(np.sum(lam))
        self.exact_diag = (U**2) @ lam

    def _matmat(self, X):
        return self.matrix @ X

    def to_dense(self):
        return self.matrix.copy()


@dataclass(frozen=True)
class SpectrumSpec:
    """Eigenvalue profile of a synthetic test matrix.

    ``flat`` decreases linearly from ``flat_hi`` to ``flat_lo``; ``poly`` is
    ``i**-poly_power``; ``exp`` is ``rate**i`` starting at i=0; ``step`` is
    ``step_count`` ones followed by ``step_tail``.
    """

    kind: str
    dim: int
    rate: float = 0.7
    poly_power: float = 2.0
    step_count: int = 50
    step_tail: float = 1e-3
    flat_hi: float = 3.0
    flat_lo: float = 1.0

    KINDS = ("flat", "poly", "exp", "step")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown spectrum kind {self.kind!r}; expected {self.KINDS}")
        if self.dim < 1:
            raise ValueError("dimension must be positive")

    def eigenvalues(self) -> np.ndarray:
        N = self.dim
        if self.kind == "flat":
            if N == 1:
                return np.array([self.flat_hi])
            i = np.arange(N)
            return self.flat_hi - (self.flat_hi - self.flat_lo) * i / (N - 1)
        if self.kind == "poly":
            return np.arange(1, N + 1, dtype=float) ** -self.poly_power
        if self.kind == "exp":
            return self.rate ** np.arange(N, dtype=float)
        lam = np.full(N, self.step_tail)
        lam[: self.step_count] = 1.0
        return lam


def haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed n x n orthogonal matrix (sign-corrected QR)."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def make_synthetic_operator(spec: SpectrumSpec, seed: int = 0) -> DenseSpectralOperator:
    rng = np.random.Generator(np.random.Philox(key=int(seed) % 2**64))
    U = haar_orthogonal(spec.dim, rng)
    return DenseSpectralOperator(U, spec.eigenvalues())


def make_function_operator(
    base, f: Callable[[np.ndarray], np.ndarray]
) -> DenseSpectralOperator:
    """Operator ``U f(Lambda) U.T`` for a symmetric ``base``.

    ``base`` may be a DenseSpectralOperator (its eigenpairs are reused), any
    symmetric LinearOperator small enough to densify, or a symmetric array.
    """
    if isinstance(base, DenseSpectralOperator):
        U, lam = base.eigenbasis, base.eigenvalues
    else:
        if isinstance(base, LinearOperator):
            if not base.symmetric:
                raise ValueError("matrix functions need a symmetric base operator")
            M = base.to_dense()
        else:
            M = np.asarray(base, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("base must be square")
        if not np.allclose(M, M.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(M).max())):
            raise ValueError("matrix functions need a symmetric base")
        lam, U = np.linalg.eigh((M + M.T) / 2)
    return DenseSpectralOperator(U, np.asarray(f(lam), dtype=float))


class TfimHamiltonian(LinearOperator):
    """Periodic transverse-field Ising chain ``-sum Z_i Z_{i+1} - h sum X_i``.

    Site i (0-based) is tensor factor i from the left, i.e. bit ``n-1-i`` of the
    basis-state index. Matvecs cost O(n 2^n) and never form the matrix.
    """

    MIN_SITES = 2
    MAX_SITES = 14

    def __init__(self, n: int, h: float):
        if not self.MIN_SITES <= n <= self.MAX_SITES:
            raise ValueError(
                f"site count must be in [{self.MIN_SITES}, {self.MAX_SITES}], got {n}"
            )
        super().__init__(2**n, symmetric=True, psd=False)
        self.n = int(n)
        self.h = float(h)
        self.shift = (1.0 + abs(self.h)) * self.n
        idx = np.arange(self.dim)
        spins = 1 - 2 * ((idx[:, None] >> (self.n - 1 - np.arange(self.n))) & 1)
        self._zz = -np.sum(spins * np.roll(spins, -1, axis=1), axis=1).astype(float)
        self._flips = [idx ^ (1 << (self.n - 1 - i)) for i in range(self.n)]

    def _matmat(self, X):
        out = self._zz[:, None] * X
        if self.h != 0.0:
            field = np.zeros_like(X)
            for flip in self._flips:
                field += X[flip]
            out -= self.h * field
        return out

    @property
    def exact_trace(self) -> float:
        return 0.0


def make_tfim(n: int, h: float) -> TfimHamiltonian:
    return TfimHamiltonian(n, h)


def tfim_dense(n: int, h: float) -> np.ndarray:
    """Kronecker-product assembly of the same Hamiltonian (reference path)."""
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    Z = np.diag([1.0, -1.0])

    def site(op, i):
        out = np.ones((1, 1))
        for j in range(n):
            out = np.kron(out, op if j == i else np.eye(2))
        return out

    Zs = [site(Z, i) for i in range(n)]
    H = np.zeros((2**n, 2**n))
    for i in range(n):
        H -= Zs[i] @ Zs[(i + 1) % n]
        H -= h * site(X, i)
    return H


def exact_trace(op: LinearOperator) -> float:
    """Ground-truth trace from a cached value or by densifying."""
    cached = getattr(op, "exact_trace", None)
    if cached is not None:
        return float(cached)
    return float(np.trace(op.to_dense()))


def exact_diag(op: LinearOperator) -> np.ndarray:
    """Ground-truth diagonal from a cached value or by densifying."""
    cached = getattr(op, "exact_diag", None)
    if cached is not None:
        return np.asarray(cached, dtype=float).copy()
    if isinstance(op, TfimHamiltonian):
        return op._zz.copy()
    return np.diag(op.to_dense()).copy()


def read_matrix_market(path) -> scipy.sparse.csr_matrix:
    """Read a coordinate MatrixMarket file as a square CSR matrix.

    Pattern files get unit weights; symmetric files are expanded to both
    triangles. Malformed input raises ``ValueError``.
    """
    try:
        with open(path, "rb") as fh:
            header = fh.readline().decode("ascii", "replace").split()
        if len(header) < 5 or header[0].lower() != "%%matrixmarket":
            raise ValueError("missing %%MatrixMarket header")
        obj, fmt, field, symm = (s.lower() for s in header[1:5])
        if obj != "matrix" or fmt != "coordinate":
            raise ValueError(f"only 'matrix coordinate' is supported, got {obj} {fmt}")
        if field not in ("pattern", "real", "integer"):
            raise ValueError(f"unsupported field {field!r}")
        if symm not in ("general", "symmetric"):
            raise ValueError(f"unsupported symmetry {symm!r}")
        M = scipy.io.mmread(path)
    except ValueError:
        raise
    except Exception as exc:  # scipy raises a zoo of types on bad files
        raise ValueError(f"malformed MatrixMarket file {path}: {exc}") from exc
    M = scipy.sparse.csr_matrix(M, dtype=float)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"adjacency matrix must be square, got {M.shape}")
    return M
