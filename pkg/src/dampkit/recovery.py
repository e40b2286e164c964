"""Iterative recovery: thresholding and message-passing loops.

All four algorithms share one loop around

    pseudo-data   r^t = x^t + A* z^t
    denoise       x^{t+1} = D(r^t, sigma)
    residual      z^{t+1} = y - A x^{t+1} [+ z^t * div/m]

Without the bracketed correction the loop is plain iterative thresholding
("ist" with a threshold family, "dit" with any denoiser).  With it the
residual keeps the denoiser input looking like the truth plus white
Gaussian noise, which is the whole point ("amp", "damp").  The noise level
fed to the denoiser is estimated from the residual, sigma_hat = ||z|| / sqrt(m);
"dit" multiplies it by an oversmoothing factor.
"""

import itertools
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import divergence as dv
from .denoisers import DenoiserHandle
from .rng import STREAM_ONSAGER, substream
from .sensing import Measurement, apply_adjoint, apply_matrix
from .signals import Signal, mse as mse_of, psnr as psnr_of

ALGORITHMS = ("ist", "amp", "dit", "damp")
THRESHOLD_FAMILIES = ("soft_threshold", "hard_threshold", "block_soft", "wavelet")


class NumericalFailure(RuntimeError):
    """Recovery hit a non-finite iterate; carries the partial trace."""

    def __init__(self, message, iteration, trace):
        super().__init__(message)
        self.iteration = iteration
        self.trace = trace


@dataclass
class RecoveryConfig:
    algorithm: str
    denoiser: DenoiserHandle
    onsager: str = None          # exact | monte_carlo | auto | none
    max_iters: int = 30
    stop_rel_change: float = 0.0
    oversmooth_factor: float = 2.0
    seed: int = 0
    grid: tuple = None           # 2-D interpretation for image denoisers
    snapshot_iters: tuple = ()
    div_epsilon_scale: float = None  # MC probe step = scale * sigma_hat

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not isinstance(self.denoiser, DenoiserHandle):
            raise ValueError("denoiser must be a DenoiserHandle")
        if self.algorithm in ("ist", "amp") and self.denoiser.kind not in THRESHOLD_FAMILIES:
            raise ValueError(
                f"{self.algorithm} requires a thresholding denoiser, "
                f"got {self.denoiser.kind}"
            )
        if self.algorithm in ("ist", "dit"):
            if self.onsager not in (None, "none"):
                raise ValueError(f"{self.algorithm} does not take an Onsager term")
            self.onsager = "none"
        else:
            if self.onsager is None:
                self.onsager = "auto"
            if self.onsager not in ("exact", "monte_carlo", "auto", "none"):
                raise ValueError(f"bad onsager mode {self.onsager!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.stop_rel_change < 0:
            raise ValueError("stop_rel_change must be >= 0")
        if self.oversmooth_factor <= 0:
            raise ValueError("oversmooth_factor must be positive")
        if self.div_epsilon_scale is not None and self.div_epsilon_scale <= 0:
            raise ValueError("div_epsilon_scale must be positive")
        self.snapshot_iters = tuple(int(t) for t in self.snapshot_iters)


@dataclass
class IterRecord:
    iter: int
    mse: float
    psnr: float
    sigma_hat: float
    div: float
    wallclock_ms: float


@dataclass
class RecoveryState:
    """Full iterate at one snapshot point; pseudo is x + A*z."""
    x: np.ndarray
    z: np.ndarray
    sigma_hat: float
    iter: int
    pseudo: np.ndarray = None


@dataclass
class RecoveryTrace:
    records: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)  # iter -> RecoveryState
    final_x: np.ndarray = None
    final_z: np.ndarray = None
    status: str = "ok"

    def mses(self):
        return np.array([r.mse for r in self.records], dtype=np.float64)

    def final_mse(self):
        return self.records[-1].mse if self.records else None


def onsager_term(z_prev, div_value, m):
    """The residual correction z_prev * div / m."""
    if m < 1:
        raise ValueError("m must be positive")
    return np.asarray(z_prev) * (float(div_value) / m)


def run_recovery(measurement, A, config, x_true=None, peak=None):
    """Run the configured loop and return its RecoveryTrace.

    Inputs:
        measurement : Measurement (or a bare y vector).
        A           : MeasurementMatrix.
        config      : RecoveryConfig.
        x_true      : optional ground truth; enables mse/psnr columns and
                      effective-noise snapshots.
        peak        : psnr peak; defaults to 255 for grid signals, else
                      max|x_true|.

    Outputs:
        RecoveryTrace with max_iters+1 records (index t describes x^t).

    Raises NumericalFailure when an iterate goes non-finite; the partial
    trace rides on the exception.
    """
    y = measurement.y if isinstance(measurement, Measurement) else np.asarray(measurement)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != A.m:
        raise ValueError(f"y has length {y.size}, matrix has m={A.m}")
    truth = None
    if x_true is not None:
        truth = x_true.values if isinstance(x_true, Signal) else np.asarray(x_true)
        truth = truth.astype(np.float64).ravel()
        if truth.size != A.n:
            raise ValueError("x_true length does not match the matrix")
        if peak is None:
            peak = 255.0 if config.grid is not None else float(np.max(np.abs(truth)))

    m, n = A.m, A.n
    x = np.zeros(n)
    z = y.copy()
    trace = RecoveryTrace()
    start = time.monotonic()
    # onsager="none" is the ablation switch: amp runs the plain ist update,
    # damp the plain dit update, with everything else unchanged
    effective = config.algorithm
    if config.onsager == "none" and effective in ("amp", "damp"):
        effective = "ist" if effective == "amp" else "dit"
    want_onsager = effective in ("amp", "damp")

    def record(t, sigma_hat, div_value):
        err = mse_of(x, truth) if truth is not None else None
        snr = psnr_of(x, truth, peak) if truth is not None and peak > 0 else None
        trace.records.append(
            IterRecord(
                iter=t,
                mse=err,
                psnr=snr,
                sigma_hat=sigma_hat,
                div=div_value,
                wallclock_ms=(time.monotonic() - start) * 1e3,
            )
        )

    for t in range(config.max_iters):
        sigma_hat = float(np.linalg.norm(z)) / math.sqrt(m)
        r = x + apply_adjoint(A, z)
        if t in config.snapshot_iters:
            trace.snapshots[t] = RecoveryState(
                x=x.copy(), z=z.copy(), sigma_hat=sigma_hat, iter=t,
                pseudo=r.copy(),
            )
        sigma_den = sigma_hat * (
            config.oversmooth_factor if effective == "dit" else 1.0
        )
        x_new = config.denoiser.apply(Signal(r, grid=config.grid), sigma_den).values

        div_value = None
        if want_onsager:
            method = "auto" if config.onsager == "auto" else config.onsager
            # the default probe step is an absolute fraction of ||v||_inf,
            # which swamps the residual once the iterate is nearly exact;
            # tying it to sigma_hat keeps late-iteration estimates usable
            eps = None
            if config.div_epsilon_scale is not None and sigma_den > 0:
                eps = config.div_epsilon_scale * sigma_den
            try:
                est = dv.estimate(
                    config.denoiser,
                    r if config.grid is None else r.reshape(config.grid),
                    sigma_den,
                    method=method,
                    seed=_onsager_seed(config.seed, t),
                    epsilon=eps,
                    base=x_new if method != "exact" else None,
                )
            except (dv.DegenerateSpectrumError, FloatingPointError) as exc:
                record(t, sigma_hat, None)
                trace.status = "divergence_failure"
                raise NumericalFailure(
                    f"divergence estimation failed at iteration {t}: {exc}", t, trace
                ) from exc
            div_value = est.value

        record(t, sigma_hat, div_value)

        z_new = y - apply_matrix(A, x_new)
        if want_onsager:
            z_new = z_new + onsager_term(z, div_value, m)
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(z_new))):
            trace.status = "nan"
            raise NumericalFailure(f"non-finite iterate at iteration {t}", t, trace)

        rel_change = None
        if config.stop_rel_change > 0 and np.linalg.norm(x) > 0:
            rel_change = float(
                np.linalg.norm(x_new - x) / np.linalg.norm(x)
            )
        x, z = x_new, z_new
        if rel_change is not None and rel_change < config.stop_rel_change:
            break

    record(len(trace.records), float(np.linalg.norm(z)) / math.sqrt(m), None)
    trace.final_x = x
    trace.final_z = z
    return trace


def _onsager_seed(seed, iteration):
    # one probe seed per iteration, reproducible from the run seed
    rng = substream(seed, STREAM_ONSAGER, index=iteration)
    return int(rng.integers(2**63))


# ---------------------------------------------------------------------------
# trace serialization: JSON lines, one record per iteration, snapshots as
# separate lines with a "snapshot" marker
# ---------------------------------------------------------------------------

def write_trace(trace, path):
    with open(path, "w") as fh:
        for r in trace.records:
            fh.write(json.dumps({
                "iter": r.iter,
                "mse": r.mse,
                "psnr": None if r.psnr in (None, float("inf")) else r.psnr,
                "sigma_hat": r.sigma_hat,
                "div": r.div,
                "wallclock_ms": round(r.wallclock_ms, 3),
            }) + "\n")
        for t in sorted(trace.snapshots):
            fh.write(json.dumps({
                "snapshot": t,
                "sigma_hat": trace.snapshots[t].sigma_hat,
                "pseudo_data": [float(v) for v in trace.snapshots[t].pseudo],
            }) + "\n")


def read_trace(path):
    trace = RecoveryTrace()
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "snapshot" in obj:
                t = int(obj["snapshot"])
                trace.snapshots[t] = RecoveryState(
                    x=None, z=None, sigma_hat=obj.get("sigma_hat"), iter=t,
                    pseudo=np.array(obj["pseudo_data"]),
                )
            else:
                trace.records.append(IterRecord(
                    iter=obj["iter"],
                    mse=obj["mse"],
                    psnr=obj["psnr"],
                    sigma_hat=obj["sigma_hat"],
                    div=obj["div"],
                    wallclock_ms=obj["wallclock_ms"],
                ))
    return trace


# ---------------------------------------------------------------------------
# brute-force benchmark for tiny zero-one sparse problems
# ---------------------------------------------------------------------------

class BudgetExceeded(ValueError):
    """Enumeration would exceed the configured candidate budget."""


def exhaustive_bk_recover(y, A, k, budget=1_000_000):
    """Least-squares search over all zero-one vectors with at most k ones.

    Enumerates supports in order of increasing size, lexicographic within
    a size, and returns the first candidate attaining the minimal residual
    ||y - A x||^2 (so ties resolve to the lexicographically smallest
    support of smallest size).
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    k = int(k)
    if not 0 <= k <= A.n:
        raise ValueError(f"k={k} out of range for n={A.n}")
    count = sum(math.comb(A.n, j) for j in range(k + 1))
    if count > budget:
        raise BudgetExceeded(
            f"{count} candidate supports exceed the budget of {budget}"
        )
    cols = A.entries
    best_res = None
    best = None
    for size in range(k + 1):
        for support in itertools.combinations(range(A.n), size):
            candidate = cols[:, support].sum(axis=1) if size else np.zeros(A.m)
            res = float(np.sum((y - candidate) ** 2))
            if best_res is None or res < best_res - 1e-15 * max(1.0, abs(best_res)):
                best_res = res
                best = support
    x = np.zeros(A.n)
    x[list(best)] = 1.0
    return Signal(x)
