"""Literal, slow reference implementations of the leave-one-out estimators.

Each left-out basis / Nystrom approximation is formed explicitly from a
densified operator. Only for testing; N is capped at 512.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .estimators import DiagReport, TraceReport, error_estimate
from .linop import LinearOperator
from .sampling import TestMatrix

MAX_ORACLE_DIM = 512


def _dense(op: LinearOperator) -> np.ndarray:
    if op.dim > MAX_ORACLE_DIM:
        raise ValueError(f"oracles are limited to N <= {MAX_ORACLE_DIM}")
    return op.to_dense()


def _omega(tm, k) -> np.ndarray:
    Om = tm.omega if isinstance(tm, TestMatrix) else np.asarray(tm, dtype=float)
    if Om.shape[1] != k:
        raise ValueError(f"test matrix must have {k} columns, got {Om.shape[1]}")
    return Om


def _orth(X: np.ndarray) -> np.ndarray:
    return scipy.linalg.orth(X)


def _normalized(mu: np.ndarray, rank: int) -> np.ndarray:
    return np.sqrt(mu.shape[0] - rank) * mu / np.linalg.norm(mu)


def xtrace_naive(op: LinearOperator, m: int, tm, normalize: bool = False) -> TraceReport:
    if m < 4 or m % 2:
        raise ValueError("xtrace needs an even budget m >= 4")
    A = _dense(op)
    Om = _omega(tm, m // 2)
    Y = A @ Om
    N, k = Om.shape
    ests = np.empty(k)
    for i in range(k):
        Qi = _orth(np.delete(Y, i, axis=1))
        w = Om[:, i]
        mu = w - Qi @ (Qi.T @ w)
        if normalize:
            mu = _normalized(mu, Qi.shape[1])
        ests[i] = np.trace(Qi.T @ A @ Qi) + mu @ A @ mu
    return TraceReport(float(np.mean(ests)), error_estimate(ests), ests, m)


def _pinv_nystrom(X: np.ndarray, AX: np.ndarray) -> np.ndarray:
    core = X.T @ AX
    core = (core + core.T) / 2
    cutoff = core.shape[0] * np.finfo(float).eps
    return AX @ np.linalg.pinv(core, rcond=cutoff, hermitian=True) @ AX.T


def xnystrace_naive(op: LinearOperator, m: int, tm, normalize: bool = False) -> TraceReport:
    if m < 2:
        raise ValueError("xnystrace needs m >= 2")
    A = _dense(op)
    Om = _omega(tm, m)
    Y = A @ Om
    ests = np.empty(m)
    for i in range(m):
        Ahat = _pinv_nystrom(np.delete(Om, i, axis=1), np.delete(Y, i, axis=1))
        w = Om[:, i]
        if normalize:
            P = _orth(np.delete(Om, i, axis=1))
            w = _normalized(w - P @ (P.T @ w), P.shape[1])
        ests[i] = np.trace(Ahat) + w @ (A - Ahat) @ w
    return TraceReport(float(np.mean(ests)), error_estimate(ests), ests, m)


def xdiag_naive(op: LinearOperator, m: int, tm) -> DiagReport:
    if m < 4 or m % 2:
        raise ValueError("xdiag needs an even budget m >= 4")
    A = _dense(op)
    Om = _omega(tm, m // 2)
    Y = A @ Om
    N, k = Om.shape
    total = np.zeros(N)
    for i in range(k):
        Qi = _orth(np.delete(Y, i, axis=1))
        w = Om[:, i]
        proj = Qi @ (Qi.T @ A)
        resid = Y[:, i] - Qi @ (Qi.T @ Y[:, i])
        total += np.diag(proj) + w * resid / (w * w)
    return DiagReport(total / k, k, k)
