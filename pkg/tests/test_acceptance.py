"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass

import numpy as np
import pytest

from exchtrace import estimators as E
from exchtrace.adaptive import AdaptiveConfig, run_adaptive
from exchtrace.bench import tfim_operators, variance_bound
from exchtrace.linop import (
    DenseOperator,
    DenseSpectralOperator,
    SpectrumSpec,
    exact_diag,
    haar_orthogonal,
    make_synthetic_operator,
)
from exchtrace.oracle import xdiag_naive, xnystrace_naive, xtrace_naive
from exchtrace.sampling import sample_test_matrix, trial_seeds


@dataclass
class Verdict:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    limit: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[criterion {self.number:2d}] {status}  {self.name}: {self.detail} "
            f"({self.seconds:.1f}s, limit {self.limit:.0f}s)"
        )


def _timed(number, name, limit, fn) -> Verdict:
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    return Verdict(number, name, bool(ok) and dt < limit, detail, dt, limit)


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def _low_rank_psd(n, r, seed):
    rng = np.random.default_rng(seed)
    lam = np.zeros(n)
    lam[:r] = rng.uniform(1.0, 10.0, size=r)
    return DenseSpectralOperator(haar_orthogonal(n, rng), lam)


# --------------------------------------------------------------------------


def oracle_equivalence():
    worst_x, worst_n, worst_d, cases = 0.0, 0.0, 0.0, 0
    for N in (50, 200):
        for m in (12, 40):
            for rep in range(5):
                seed = 1000 * N + 10 * m + rep
                dist = ("signs", "gaussian")[rep % 2]
                normalize = rep >= 3
                rng = np.random.default_rng(seed)
                general = DenseOperator(rng.standard_normal((N, N)), symmetric=False)
                psd = make_synthetic_operator(SpectrumSpec(("exp", "poly")[rep % 2], N), seed)
                tm = sample_test_matrix(dist, N, m // 2, seed)
                tmn = sample_test_matrix(dist, N, m, seed)
                for op in (general, psd):
                    worst_x = max(worst_x, _rel(
                        E.xtrace(op, m, normalize=normalize, omega=tm).estimate,
                        xtrace_naive(op, m, tm, normalize).estimate))
                    worst_d = max(worst_d, _rel(
                        E.xdiag(op, m, omega=tm).estimate, xdiag_naive(op, m, tm).estimate))
                worst_n = max(worst_n, _rel(
                    E.xnystrace(psd, m, normalize=normalize, omega=tmn).estimate,
                    xnystrace_naive(psd, m, tmn, normalize).estimate))
                cases += 1
    ok = worst_x <= 1e-8 and worst_d <= 1e-8 and worst_n <= 1e-6
    return ok, (f"{cases} cases; max rel diff xtrace {worst_x:.1e}, "
                f"xdiag {worst_d:.1e} (tol 1e-8), xnystrace {worst_n:.1e} (tol 1e-6)")


def low_rank_exactness():
    A = _low_rank_psd(500, 10, seed=2024)
    t, d = A.exact_trace, A.exact_diag
    errs = {
        "xtrace@22": _rel(E.xtrace(A, 22, "gaussian", seed=1).estimate, t),
        "xnystrace@12": _rel(E.xnystrace(A, 12, "gaussian", seed=2).estimate, t),
        "hutchpp@33": _rel(E.hutchpp(A, 33, "gaussian", seed=3).estimate, t),
        "xdiag@22": _rel(E.xdiag(A, 22, "gaussian", seed=4).estimate, d),
    }
    ok = all(v <= 1e-6 for v in errs.values())
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " (tol 1e-6)"


def unbiasedness():
    op = make_synthetic_operator(SpectrumSpec("exp", 100), seed=7)
    runs, m = 10_000, 12
    seeds = trial_seeds(33, runs)
    parts, ok = [], True
    for name in ("hutch", "hutchpp", "xtrace", "xnystrace"):
        fn = E.ESTIMATORS[name]
        x = np.array([fn(op, m, "gaussian", seed=s).estimate for s in seeds])
        z = (x.mean() - op.exact_trace) / (x.std(ddof=1) / math.sqrt(runs))
        ok &= abs(z) <= 4
        parts.append(f"{name} z={z:+.2f}")
    d = np.array([E.xdiag(op, m, "gaussian", seed=s).estimate for s in seeds])
    zd = (d.mean(axis=0) - op.exact_diag) / (d.std(axis=0, ddof=1) / math.sqrt(runs))
    ok &= bool(np.all(np.abs(zd) <= 4))
    parts.append(f"xdiag max|z|={np.max(np.abs(zd)):.2f} over {op.dim} entries")
    return ok, ", ".join(parts) + " (limit 4)"


def _mean_rel_errors(op, name, ms, trials, normalize, dist="gaussian", seed=0):
    fn = E.ESTIMATORS[name]
    kw = {"normalize": normalize} if name in E.NORMALIZABLE else {}
    out = []
    for m in ms:
        seeds = trial_seeds(seed + m, trials)
        err = [abs(fn(op, m, dist, seed=s, **kw).estimate - op.exact_trace) for s in seeds]
        out.append(np.mean(err) / op.exact_trace)
    return np.array(out)


def slope_ratios():
    op = make_synthetic_operator(SpectrumSpec("exp", 1000, rate=0.7), seed=0)
    ms = np.arange(12, 61, 6)
    slopes = {}
    for name in ("hutchpp", "xtrace", "xnystrace"):
        err = _mean_rel_errors(op, name, ms, 1000, normalize=True)
        slopes[name] = np.polyfit(ms, np.log(err), 1)[0]
    r1 = slopes["xtrace"] / slopes["hutchpp"]
    r2 = slopes["xnystrace"] / slopes["hutchpp"]
    ok = abs(r1 - 1.5) <= 0.3 and abs(r2 - 3.0) <= 0.6
    return ok, (f"slopes hutchpp {slopes['hutchpp']:.4f}, xtrace {slopes['xtrace']:.4f}, "
                f"xnystrace {slopes['xnystrace']:.4f}; ratios {r1:.2f} (1.5+-0.3), {r2:.2f} (3.0+-0.6)")


def bound_conformance():
    worst, cells, bad = 0.0, 0, []
    for kind in ("poly", "exp", "step"):
        op = make_synthetic_operator(SpectrumSpec(kind, 1000), seed=0)
        for name in ("hutchpp", "xtrace", "xnystrace"):
            fn = E.ESTIMATORS[name]
            for m in (12, 24, 48):
                seeds = trial_seeds(500 + cells, 1000)
                err = np.array([fn(op, m, "gaussian", seed=s).estimate for s in seeds]) - op.exact_trace
                rmse = math.sqrt(np.mean(err**2))
                bound = variance_bound(name, m, op.eigenvalues).value
                worst = max(worst, rmse / bound)
                cells += 1
                if rmse > bound:
                    bad.append(f"{kind}/{name}/{m}")
    return not bad, f"{cells} cells, max rmse/bound {worst:.3f}" + (f"; violated {bad}" if bad else "")


def error_estimate_fidelity():
    op = make_synthetic_operator(SpectrumSpec("exp", 1000), seed=0)
    parts, ok = [], True
    for name in ("xtrace", "xnystrace"):
        fn = E.ESTIMATORS[name]
        for m in (16, 32):
            reps = [fn(op, m, "signs", seed=s) for s in trial_seeds(5 * m, 1000)]
            err = np.array([r.estimate for r in reps]) - op.exact_trace
            ratio = np.mean([r.err_est for r in reps]) / math.sqrt(np.mean(err**2))
            ok &= 0.25 <= ratio <= 4
            parts.append(f"{name}@{m} {ratio:.2f}")
    return ok, "err_est/RMSE " + ", ".join(parts) + " (range [0.25, 4])"


def adaptive_tfim():
    eps, target, runs = 1e-4, 1e-3, 100
    parts, ok = [], True
    for h in (0.5, 10.0):
        for beta in (0.3, 0.6):
            Z_op, _, _, _ = tfim_operators(10, beta, h)
            truth = Z_op.exact_trace
            accurate = optimal = 0
            top = 0
            for s in trial_seeds(int(1000 * beta + h), runs):
                rep = run_adaptive(Z_op, AdaptiveConfig(eps=eps, kind="xnystrace", m0=8, seed=s))
                accurate += abs(rep.estimate - truth) <= target * truth
                # history entries are the fresh estimates on each stream prefix;
                # m_opt is the first budget from which the true error stays
                # within eps through m_J
                errs = [abs(hh["estimate"] - truth) / truth for hh in rep.history]
                m_opt = math.inf
                for j in range(len(errs) - 1, -1, -1):
                    if errs[j] > eps:
                        break
                    m_opt = rep.history[j]["m"]
                optimal += rep.matvecs_used <= 2 * m_opt
                top = max(top, rep.matvecs_used)
            ok &= accurate >= 95 and optimal >= 95
            parts.append(f"h={h:g},beta={beta:g}: {accurate}/100 accurate, {optimal}/100 within 2x, max m {top}")
    return ok, "; ".join(parts)


def permutation_symmetry():
    op = make_synthetic_operator(SpectrumSpec("exp", 200), seed=3)
    tm = sample_test_matrix("gaussian", 200, 16, seed=8)
    base = {
        "xtrace": E.xtrace(op, 32, omega=tm).estimate,
        "xnystrace": E.xnystrace(op, 16, omega=tm).estimate,
        "xdiag": E.xdiag(op, 32, omega=tm).estimate,
    }
    worst = dict.fromkeys(base, 0.0)
    rng = np.random.default_rng(99)
    for _ in range(10):
        p = tm.permuted(rng.permutation(16))
        worst["xtrace"] = max(worst["xtrace"], _rel(E.xtrace(op, 32, omega=p).estimate, base["xtrace"]))
        worst["xnystrace"] = max(worst["xnystrace"], _rel(E.xnystrace(op, 16, omega=p).estimate, base["xnystrace"]))
        worst["xdiag"] = max(worst["xdiag"], _rel(E.xdiag(op, 32, omega=p).estimate, base["xdiag"]))
    ok = all(v <= 1e-10 for v in worst.values())
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (tol 1e-10)"


DOCUMENTED_BUDGETS = {
    "hutch": lambda m: (m, 0),
    "lra": lambda m: (m, 0),
    "hutchpp": lambda m: (m, 0),
    "nystrompp": lambda m: (m, 0),
    "xtrace": lambda m: (m, 0),
    "xnystrace": lambda m: (m, 0),
    "bks": lambda m: (m, 0),
    "xdiag": lambda m: (m // 2, m // 2),
}


def budget_exactness():
    op = make_synthetic_operator(SpectrumSpec("exp", 100), seed=0)
    bad = []
    for name, budget in DOCUMENTED_BUDGETS.items():
        fn = E.ESTIMATORS.get(name) or E.DIAG_ESTIMATORS[name]
        for m in (12, 24, 36):
            op.reset_counters()
            fn(op, m, seed=m)
            got = (op.matvec_count, op.adjoint_matvec_count)
            if got != budget(m):
                bad.append(f"{name}@{m}: {got} != {budget(m)}")
    return not bad, f"{len(DOCUMENTED_BUDGETS) * 3} runs checked" + (f"; {bad}" if bad else "")


def normalization_benefit():
    parts, ok = [], True
    for kind in ("flat", "step"):
        op = make_synthetic_operator(SpectrumSpec(kind, 1000), seed=0)
        seeds = trial_seeds(4242, 1000)
        t = op.exact_trace
        e_on = np.array([E.xtrace(op, 48, "gaussian", True, seed=s).estimate - t for s in seeds])
        e_off = np.array([E.xtrace(op, 48, "gaussian", False, seed=s).estimate - t for s in seeds])
        r_on, r_off = math.sqrt(np.mean(e_on**2)), math.sqrt(np.mean(e_off**2))
        # delta-method standard error of the paired RMSE difference
        g = e_off**2 / (2 * r_off) - e_on**2 / (2 * r_on)
        se = g.std(ddof=1) / math.sqrt(len(g))
        margin = (r_off - r_on) / se
        ok &= margin > 3
        parts.append(f"{kind}: rmse on {r_on:.4g} vs off {r_off:.4g}, {margin:.1f} sigma")
    return ok, "; ".join(parts) + " (need > 3 sigma)"


CRITERIA = [
    (1, "oracle equivalence", 30, oracle_equivalence),
    (2, "low-rank exactness", 10, low_rank_exactness),
    (3, "unbiasedness", 300, unbiasedness),
    (4, "convergence-rate ratios", 900, slope_ratios),
    (5, "variance-bound conformance", 900, bound_conformance),
    (6, "error-estimate fidelity", 300, error_estimate_fidelity),
    (7, "adaptive doubling on TFIM", 600, adaptive_tfim),
    (8, "exchangeability symmetry", 5, permutation_symmetry),
    (9, "budget exactness", 5, budget_exactness),
    (10, "normalization benefit", 600, normalization_benefit),
]


@pytest.mark.parametrize("number,name,limit,fn", CRITERIA, ids=[f"criterion_{c[0]:02d}" for c in CRITERIA])
def test_criterion(number, name, limit, fn, capsys):
    verdict = _timed(number, name, limit, fn)
    with capsys.disabled():
        print("\n" + verdict.line())
    assert verdict.passed, verdict.line()


if __name__ == "__main__":
    failed = 0
    for number, name, limit, fn in CRITERIA:
        verdict = _timed(number, name, limit, fn)
        print(verdict.line(), flush=True)
        failed += not verdict.passed
    sys.exit(1 if failed else 0)
