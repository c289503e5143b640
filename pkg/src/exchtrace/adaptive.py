"""Doubling driver: grow the budget until the posterior error meets a
relative tolerance, reusing every matvec already paid for."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .estimators import (
    TraceReport,
    _mean,
    error_estimate,
    xnystrace_from_sample,
    xtrace_from_sketch,
    xtrace_sketch,
)
from .linop import LinearOperator
from .sampling import DISTRIBUTIONS, extend_test_matrix, sample_test_matrix

KINDS = ("xtrace", "xnystrace")


@dataclass
class AdaptiveConfig:
    eps: float
    kind: str = "xnystrace"
    m0: int = 8
    m_max: Optional[int] = None
    distribution: str = "gaussian"
    normalize: bool = True
    seed: int = 0

    def validate(self, dim: int) -> int:
        """Check the config against an operator size; return the budget cap."""
        if self.kind not in KINDS:
            raise ValueError(f"adaptive kind must be one of {KINDS}, got {self.kind!r}")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if not 0 < self.eps < 1:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.m0 < 4 or (self.kind == "xtrace" and self.m0 % 2):
            raise ValueError(f"initial budget {self.m0} is not admissible for {self.kind}")
        per_vec = 2 if self.kind == "xtrace" else 1
        cap = per_vec * dim if self.m_max is None else self.m_max
        if cap < self.m0:
            raise ValueError("budget cap is below the initial budget")
        if cap > per_vec * dim:
            raise ValueError(f"budget cap {cap} exceeds {per_vec * dim} for N={dim}")
        return cap


@dataclass
class AdaptiveReport(TraceReport):
    converged: bool = False
    history: list = field(default_factory=list)


def _extend_qr(Q, R, Ynew):
    """Append columns to a thin QR by block Gram-Schmidt (two passes)."""
    C1 = Q.T @ Ynew
    V = Ynew - Q @ C1
    C2 = Q.T @ V
    V -= Q @ C2
    Qn, Rn = np.linalg.qr(V)
    k, j = R.shape[0], Rn.shape[0]
    Rbig = np.zeros((k + j, k + j))
    Rbig[:k, :k] = R
    Rbig[:k, k:] = C1 + C2
    Rbig[k:, k:] = Rn
    return np.hstack([Q, Qn]), Rbig, Qn


def run_adaptive(op: LinearOperator, cfg: AdaptiveConfig) -> AdaptiveReport:
    """Doubling strategy: budgets m0, 2 m0, 4 m0, ... until
    ``err_est <= eps |estimate|`` or the cap is hit.

    The matvec count at exit equals the final budget: new test vectors
    continue the same stream, sketch columns are appended, and for XTrace the
    QR is extended so earlier ``A Q`` columns stay valid. Hitting the cap
    returns ``converged=False`` instead of raising.
    """
    cap = cfg.validate(op.dim)
    if cfg.kind == "xnystrace" and not op.psd:
        raise ValueError("xnystrace needs an operator flagged psd")
    per_vec = 2 if cfg.kind == "xtrace" else 1
    m = cfg.m0
    tm = sample_test_matrix(cfg.distribution, op.dim, m // per_vec, cfg.seed)
    Y = op.apply(tm.omega)
    if cfg.kind == "xtrace":
        Q, R = np.linalg.qr(Y)
        Z = op.apply(Q)

    history = []
    while True:
        if cfg.kind == "xtrace":
            samples = xtrace_from_sketch(xtrace_sketch(tm.omega, Y, Q, R, Z), cfg.normalize)
        else:
            samples = xnystrace_from_sample(tm.omega, Y, cfg.normalize)
        est, err = _mean(samples), error_estimate(samples)
        history.append({"m": m, "estimate": est, "err_est": err})
        converged = err <= cfg.eps * abs(est)
        if converged or 2 * m > cap:
            return AdaptiveReport(est, err, samples, m, converged=converged, history=history)
        k_old = tm.omega.shape[1]
        tm = extend_test_matrix(tm, k_old)
        Ynew = op.apply(tm.omega[:, k_old:])
        Y = np.hstack([Y, Ynew])
        if cfg.kind == "xtrace":
            Q, R, Qn = _extend_qr(Q, R, Ynew)
            Z = np.hstack([Z, op.apply(Qn)])
        m *= 2
