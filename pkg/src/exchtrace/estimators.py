"""Randomized trace and diagonal estimators.

Baselines (Girard-Hutchinson, LRA, Hutch++, Nystrom++, BKS) and the
exchangeable leave-one-out estimators XTrace, XNysTrace and XDiag. The
leave-one-out quantities are never formed explicitly: each is a rank-one
correction of one shared factorization, so the whole family costs O(k^2 N)
after the matvecs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .linop import LinearOperator
from .sampling import TestMatrix, sample_test_matrix

EPS = np.finfo(float).eps


class DegenerateInputError(ValueError):
    """Raised when a sketch or Nystrom core cannot be factored."""


@dataclass
class TraceReport:
    estimate: float
    err_est: Optional[float]
    per_sample: Optional[np.ndarray]
    matvecs_used: int


@dataclass
class DiagReport:
    estimate: np.ndarray
    matvecs_used: int
    adjoint_matvecs_used: int = 0


@dataclass
class SketchState:
    """Factorization data shared by all leave-one-out estimates.

    ``Y = A @ Omega = Q @ R``; ``W = Q.T @ Omega``; ``S``/``D`` are the null-space
    unit vectors and their normalizers; ``Z = A @ Q`` and ``H = Q.T @ Z`` for
    XTrace.
    """

    omega: np.ndarray
    Y: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    W: np.ndarray
    S: np.ndarray
    D: np.ndarray
    Z: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)


def _colsum(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """diag(X.T @ Y) without forming the product."""
    return np.einsum("ij,ij->j", X, Y)


def _mean(x) -> float:
    return math.fsum(x) / len(x)


def error_estimate(per_sample) -> float:
    """Posterior error: the standard error of the mean of the basic estimates.

    ``sqrt(sum((t_i - mean)^2) / (l (l - 1)))``
    """
    x = np.asarray(per_sample, dtype=float)
    ell = x.shape[0]
    if ell < 2:
        raise ValueError("error estimate needs at least two basic estimates")
    mu = _mean(x)
    return math.sqrt(math.fsum((x - mu) ** 2) / (ell * (ell - 1)))


def nullspace_unit_vectors(R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Columns ``s_i`` with ``R[:, j].T @ s_i = 0`` for j != i and ``|s_i| = 1``.

    ``S = inv(R.T) @ diag(D)`` with ``D_ii = 1 / |column i of inv(R.T)|`` > 0.
    Numerically rank-deficient (but not exactly singular) ``R`` is accepted:
    the columns then converge to the shared null direction, which is what the
    leave-one-out projectors need.
    """
    R = np.asarray(R, dtype=float)
    k = R.shape[0]
    if R.shape != (k, k):
        raise ValueError("R must be square")
    if np.any(np.diag(R) == 0) or not np.all(np.isfinite(R)):
        raise DegenerateInputError("triangular factor is exactly singular")
    Rinv_t = scipy.linalg.solve_triangular(R, np.eye(k), trans="T", lower=False)
    norms = np.linalg.norm(Rinv_t, axis=0)
    if not np.all(np.isfinite(norms)) or np.any(norms == 0):
        raise DegenerateInputError("triangular factor is numerically singular")
    D = 1.0 / norms
    return Rinv_t * D, D


def _test_matrix(op, k, distribution, seed, omega) -> np.ndarray:
    if omega is None:
        return sample_test_matrix(distribution, op.dim, k, seed).omega
    if isinstance(omega, TestMatrix):
        omega = omega.omega
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (op.dim, k):
        raise ValueError(f"test matrix must have shape {(op.dim, k)}, got {omega.shape}")
    return omega


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# --------------------------------------------------------------------------
# Baselines


def hutch(
    op: LinearOperator, m: int, distribution: str = "signs", seed: int = 0, *, omega=None
) -> TraceReport:
    """Girard-Hutchinson: mean of ``m`` quadratic forms ``w.T A w``."""
    _require(m >= 1, "hutch needs m >= 1")
    Om = _test_matrix(op, m, distribution, seed, omega)
    samples = _colsum(Om, op.apply(Om))
    err = error_estimate(samples) if m >= 2 else None
    return TraceReport(_mean(samples), err, samples, m)


def lra_trace(
    op: LinearOperator, m: int, distribution: str = "signs", seed: int = 0, *, omega=None
) -> TraceReport:
    """Trace of the randomized-SVD approximation ``Q Q.T A`` (biased)."""
    _require(m >= 2 and m % 2 == 0, "lra_trace needs an even budget m >= 2")
    k = m // 2
    Om = _test_matrix(op, k, distribution, seed, omega)
    Q, _ = np.linalg.qr(op.apply(Om))
    est = float(np.trace(Q.T @ op.apply(Q)))
    return TraceReport(est, None, None, m)


def hutchpp(
    op: LinearOperator, m: int, distribution: str = "signs", seed: int = 0, *, omega=None
) -> TraceReport:
    """Hutch++: sketch with m/3 vectors, Hutchinson on the deflated residual.

    ``omega`` holds 2m/3 columns; the first m/3 estimate the residual and the
    last m/3 build the sketch.
    """
    _require(m >= 3 and m % 3 == 0, "hutchpp needs a budget m >= 3 divisible by 3")
    k = m // 3
    Om = _test_matrix(op, 2 * k, distribution, seed, omega)
    G0, sketch = Om[:, :k], Om[:, k:]
    Q, _ = np.linalg.qr(op.apply(sketch))
    G = G0 - Q @ (Q.T @ G0)
    AQG = op.apply(np.hstack([Q, G]))
    est = np.trace(Q.T @ AQG[:, :k]) + np.trace(G.T @ AQG[:, k:]) / k
    return TraceReport(float(est), None, None, m)


def _nystrom_core(omega: np.ndarray, Y: np.ndarray):
    """Cholesky factor of the shifted core ``Omega.T (Y + nu Omega)``.

    The shift is the exact Nystrom approximation of ``A + nu I``; callers
    subtract ``nu * N`` from traces. ``nu`` starts at ``eps sqrt(N) |Y|_F``
    and is raised tenfold (at most three times) if factorization fails.
    """
    N = omega.shape[0]
    nu = EPS * math.sqrt(N) * np.linalg.norm(Y)
    if nu == 0.0:
        nu = EPS
    for _ in range(4):
        Ynu = Y + nu * omega
        H = omega.T @ Ynu
        H = (H + H.T) / 2
        try:
            C = scipy.linalg.cholesky(H, lower=False)
        except np.linalg.LinAlgError:
            nu *= 10.0
            continue
        if np.all(np.isfinite(C)):
            return nu, Ynu, H, C
        nu *= 10.0
    raise DegenerateInputError(
        "Nystrom core is numerically indefinite; is the operator really psd?"
    )


def nystrompp(
    op: LinearOperator, m: int, distribution: str = "signs", seed: int = 0, *, omega=None
) -> TraceReport:
    """Nystrom++: Nystrom approximation from m/2 vectors plus Hutchinson on
    the residual with m/2 fresh vectors."""
    _require(op.psd, "nystrompp needs an operator flagged psd")
    _require(m >= 2 and m % 2 == 0, "nystrompp needs an even budget m >= 2")
    k = m // 2
    Om = _test_matrix(op, m, distribution, seed, omega)
    sketch, probes = Om[:, :k], Om[:, k:]
    nu, Ynu, _, C = _nystrom_core(sketch, op.apply(sketch))
    F = scipy.linalg.solve_triangular(C, Ynu.T, trans="T", lower=False)  # C^-T Y^T
    nys_trace = float(np.sum(F**2))
    AP = op.apply(probes)
    quad = _colsum(probes, AP) + nu * _colsum(probes, probes)
    nys_quad = np.sum((F @ probes) ** 2, axis=0)
    resid = quad - nys_quad
    est = nys_trace + _mean(resid) - nu * op.dim
    return TraceReport(float(est), None, None, m)


def bks_diag(
    op: LinearOperator, m: int, distribution: str = "signs", seed: int = 0, *, omega=None
) -> DiagReport:
    """Entrywise ratio ``sum w*(A w) / sum w*w``."""
    _require(m >= 1, "bks_diag needs m >= 1")
    Om = _test_matrix(op, m, distribution, seed, omega)
    num = np.sum(Om * op.apply(Om), axis=1)
    den = np.sum(Om * Om, axis=1)
    if np.any(den == 0):
        raise DegenerateInputError("a test-vector entry is zero in every sample")
    return DiagReport(num / den, m, 0)


# --------------------------------------------------------------------------
# Exchangeable estimators


def xtrace_sketch(omega: np.ndarray, Y: np.ndarray, Q: np.ndarray, R: np.ndarray, Z):
    """Assemble the shared XTrace state from ``Y = Q R`` and ``Z = A Q``."""
    S, D = nullspace_unit_vectors(R)
    return SketchState(
        omega=omega, Y=Y, Q=Q, R=R, W=Q.T @ omega, S=S, D=D, Z=Z, H=Q.T @ Z
    )


def xtrace_from_sketch(st: SketchState, normalize: bool) -> np.ndarray:
    """Basic estimates ``t_i`` for every left-out column.

    With ``c_i = w_i - s_i (s_i.w_i)`` the left-out projector applied to
    ``omega_i`` is ``Q c_i`` and the residual vector is ``mu_i = omega_i - Q c_i``:

        t_i = tr(H) - s_i.H s_i + mu_i.T A mu_i
        mu_i.T A mu_i = w_i.r_i - T_i.c_i - c_i.r_i + c_i.H c_i,   T = Z.T Omega
    """
    Om, W, S, R, H, Z, D = st.omega, st.W, st.S, st.R, st.H, st.Z, st.D
    N, k = Om.shape
    T = Z.T @ Om
    HS = H @ S
    HW = H @ W
    sw = _colsum(S, W)
    first = np.trace(H) - _colsum(S, HS)

    wr = _colsum(W, R)
    Tc = _colsum(T, W) - sw * _colsum(T, S)
    cr = wr - sw * D
    cHc = _colsum(W, HW) - sw * _colsum(S, HW) - sw * _colsum(W, HS) + sw**2 * _colsum(S, HS)
    resid = wr - Tc - cr + cHc

    if normalize:
        mu2 = _colsum(Om, Om) - _colsum(W, W) + sw**2
        resid = resid * (N - (k - 1)) / mu2
    return first + resid


def xtrace(
    op: LinearOperator,
    m: int,
    distribution: str = "signs",
    normalize: bool = False,
    seed: int = 0,
    *,
    omega=None,
) -> TraceReport:
    """XTrace with budget ``m``: ``m/2`` vectors, ``m/2`` matvecs for the
    sketch and ``m/2`` for ``A Q``."""
    _require(m >= 4 and m % 2 == 0, "xtrace needs an even budget m >= 4")
    k = m // 2
    _require(k <= op.dim, "xtrace needs m/2 <= N")
    Om = _test_matrix(op, k, distribution, seed, omega)
    Y = op.apply(Om)
    Q, R = np.linalg.qr(Y)
    st = xtrace_sketch(Om, Y, Q, R, op.apply(Q))
    samples = xtrace_from_sketch(st, normalize)
    return TraceReport(_mean(samples), error_estimate(samples), samples, m)


def _normalization_scale(omega: np.ndarray) -> np.ndarray:
    """``(N - (k-1)) / |mu_i|^2`` with ``mu_i`` the part of ``omega_i``
    orthogonal to the other columns."""
    N, k = omega.shape
    P, Rw = np.linalg.qr(omega)
    Sw, _ = nullspace_unit_vectors(Rw)
    Ww = P.T @ omega
    mu2 = _colsum(omega, omega) - _colsum(Ww, Ww) + _colsum(Sw, Ww) ** 2
    return (N - (k - 1)) / mu2


def xnystrace_from_sample(omega: np.ndarray, Y: np.ndarray, normalize: bool) -> np.ndarray:
    """Basic XNysTrace estimates from ``Y = A @ omega``.

    With ``H = omega.T Y`` the left-out Nystrom approximation is
    ``Y (H^-1 - H^-1 e_i e_i.T H^-1 / (H^-1)_ii) Y.T``, so

        tr A<Omega_-i> = |Y C^-1|_F^2 - |Y H^-1 e_i|^2 / (H^-1)_ii
        omega_i.T (A - A<Omega_-i>) omega_i = 1 / (H^-1)_ii
    """
    N, k = omega.shape
    nu, Ynu, _, C = _nystrom_core(omega, Y)
    Q, R = np.linalg.qr(Ynu)
    Cinv = scipy.linalg.solve_triangular(C, np.eye(k), lower=False)
    B = R @ Cinv
    Hinv = Cinv @ Cinv.T
    hii = np.diag(Hinv).copy()
    RHinv = R @ Hinv
    trace_loo = np.sum(B**2) - np.sum(RHinv**2, axis=0) / hii
    resid = 1.0 / hii
    if normalize:
        resid = resid * _normalization_scale(omega)
    return trace_loo + resid - nu * N


def xnystrace(
    op: LinearOperator,
    m: int,
    distribution: str = "signs",
    normalize: bool = False,
    seed: int = 0,
    *,
    omega=None,
) -> TraceReport:
    """XNysTrace for psd operators: ``m`` vectors, exactly ``m`` matvecs."""
    _require(op.psd, "xnystrace needs an operator flagged psd")
    _require(m >= 2, "xnystrace needs m >= 2")
    _require(m <= op.dim, "xnystrace needs m <= N")
    Om = _test_matrix(op, m, distribution, seed, omega)
    samples = xnystrace_from_sample(Om, op.apply(Om), normalize)
    return TraceReport(_mean(samples), error_estimate(samples), samples, m)


def xdiag(
    op: LinearOperator, m: int, distribution: str = "signs", seed: int = 0, *, omega=None
) -> DiagReport:
    """XDiag: m/2 forward matvecs for the sketch, m/2 adjoint ones for ``A.T Q``.

    Using ``(I - Q_(i) Q_(i).T) A omega_i = D_ii Q s_i``:

        d = rowsum(Q*V) - mean_i[(Q s_i)*(V s_i)] + mean_i[D_ii omega_i*(Q s_i) / omega_i^2]
    """
    _require(m >= 4 and m % 2 == 0, "xdiag needs an even budget m >= 4")
    k = m // 2
    _require(k <= op.dim, "xdiag needs m/2 <= N")
    Om = _test_matrix(op, k, distribution, seed, omega)
    Q, R = np.linalg.qr(op.apply(Om))
    V = op.apply_adjoint(Q)
    S, D = nullspace_unit_vectors(R)
    QS = Q @ S
    VS = V @ S
    den = Om * Om
    if np.any(den == 0):
        raise DegenerateInputError("a test-vector entry is zero")
    est = (
        np.sum(Q * V, axis=1)
        - np.mean(QS * VS, axis=1)
        + np.mean(Om * QS * D / den, axis=1)
    )
    return DiagReport(est, k, k)


ESTIMATORS = {
    "hutch": hutch,
    "lra": lra_trace,
    "hutchpp": hutchpp,
    "nystrompp": nystrompp,
    "xtrace": xtrace,
    "xnystrace": xnystrace,
}
DIAG_ESTIMATORS = {"bks": bks_diag, "xdiag": xdiag}
NORMALIZABLE = {"xtrace", "xnystrace"}


def admissible_budget(name: str, m: int) -> int:
    """Round ``m`` down to the nearest budget ``name`` accepts (0 if none)."""
    if name == "hutchpp":
        m -= m % 3
        return m if m >= 3 else 0
    if name in ("xtrace", "xdiag"):
        m -= m % 2
        return m if m >= 4 else 0
    if name in ("lra", "nystrompp"):
        m -= m % 2
        return m if m >= 2 else 0
    if name == "xnystrace":
        return m if m >= 2 else 0
    if name in ("hutch", "bks"):
        return m if m >= 1 else 0
    raise ValueError(f"unknown estimator {name!r}")
