"""Effective-noise extraction and Gaussianity checks.

The corrected loop's claim to fame is that its pseudo-data looks like the
truth plus white Gaussian noise.  This module pulls that noise vector out
of a run, quantifies how Gaussian it is (moments, a tail-sensitive
distributional statistic, quantile pairs for plotting), and reports how
closely an empirical trace follows its scalar prediction.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .sensing import apply_adjoint
from .signals import Signal


@dataclass
class NoiseSnapshot:
    v: np.ndarray
    iter: int
    algorithm: str = None


@dataclass
class NormalityReport:
    excess_kurtosis: float
    skewness: float
    anderson_darling_stat: float
    qq_pairs: np.ndarray  # (n, 2): theoretical, empirical; both ascending


@dataclass
class TraceComparison:
    rel_errors: np.ndarray
    terminal_rel_error: float
    length: int


def effective_noise(state, A, x_true, algorithm=None):
    """x + A*z - x_o for a snapshot state; the loop's in-flight noise.

    `state` is a RecoveryState; when its x/z members are missing (a trace
    reloaded from disk keeps only the pseudo-data) the stored pseudo-data
    is used directly.
    """
    truth = x_true.values if isinstance(x_true, Signal) else np.asarray(x_true)
    truth = truth.astype(np.float64).ravel()
    if state.x is not None and state.z is not None:
        pseudo = state.x + apply_adjoint(A, state.z)
    elif state.pseudo is not None:
        pseudo = np.asarray(state.pseudo, dtype=np.float64)
    else:
        raise ValueError("state carries neither (x, z) nor pseudo-data")
    if pseudo.size != truth.size:
        raise ValueError(f"length mismatch {pseudo.size} vs {truth.size}")
    return NoiseSnapshot(v=pseudo - truth, iter=state.iter, algorithm=algorithm)


def normality(v):
    """Moment and distributional summary of a sample against a fitted normal.

    Skewness and excess kurtosis use the standardized sample moments.  The
    distributional statistic is the squared-distance one driven by tail
    weight, computed against N(mean, std^2) with the ddof=1 std; quantile
    pairs are taken at the (i - 0.5)/n probability points.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    n = v.size
    if n < 8:
        raise ValueError(f"need at least 8 samples, got {n}")
    mean = float(v.mean())
    sd = float(v.std(ddof=1))
    if sd == 0.0:
        raise ValueError("sample has zero variance")
    centered = v - mean
    m2 = float(np.mean(centered**2))
    skew = float(np.mean(centered**3)) / m2**1.5
    kurt = float(np.mean(centered**4)) / m2**2 - 3.0

    z = np.sort((v - mean) / sd)
    cdf = norm.cdf(z)
    eps = np.finfo(np.float64).tiny
    cdf = np.clip(cdf, eps, 1.0 - np.finfo(np.float64).epsneg)
    i = np.arange(1, n + 1)
    a2 = -n - float(np.mean((2 * i - 1) * (np.log(cdf) + np.log1p(-cdf[::-1]))))

    probs = (i - 0.5) / n
    qq = np.column_stack([norm.ppf(probs), z])
    return NormalityReport(
        excess_kurtosis=kurt, skewness=skew, anderson_darling_stat=a2,
        qq_pairs=qq,
    )


def compare_traces(empirical, predicted):
    """Per-iteration relative mismatch of a run against its prediction.

    Truncates to the shorter of the two.  The relative error at step t is
    |mse_t - theta_t| / theta_t; the denominator is the predicted value
    (both-zero counts as exact agreement).
    """
    emp = empirical.mses() if hasattr(empirical, "mses") else np.asarray(empirical)
    pred = predicted.theta if hasattr(predicted, "theta") else np.asarray(predicted)
    emp = np.asarray(emp, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    length = min(emp.size, pred.size)
    emp, pred = emp[:length], pred[:length]
    rel = np.empty(length)
    for t in range(length):
        diff = abs(emp[t] - pred[t])
        if pred[t] != 0.0:
            rel[t] = diff / pred[t]
        else:
            rel[t] = 0.0 if diff == 0.0 else math.inf
    return TraceComparison(
        rel_errors=rel,
        terminal_rel_error=float(rel[-1]) if length else math.nan,
        length=length,
    )


# ---------------------------------------------------------------------------
# emission helpers for the CLI
# ---------------------------------------------------------------------------

def save_qq(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theoretical", "empirical"])
        for theo, emp in report.qq_pairs:
            writer.writerow([repr(float(theo)), repr(float(emp))])


def report_json(report):
    if isinstance(report, NormalityReport):
        return json.dumps({
            "excess_kurtosis": report.excess_kurtosis,
            "skewness": report.skewness,
            "anderson_darling_stat": report.anderson_darling_stat,
            "n": int(report.qq_pairs.shape[0]),
        }, indent=2)
    if isinstance(report, TraceComparison):
        return json.dumps({
            "length": report.length,
            "terminal_rel_error": report.terminal_rel_error,
            "max_rel_error": float(np.max(report.rel_errors)) if report.length else None,
            "rel_errors": [float(r) for r in report.rel_errors],
        }, indent=2)
    raise TypeError(f"no JSON form for {type(report).__name__}")
