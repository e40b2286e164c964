"""Deterministic performance prediction for the message-passing loop.

The recovery error of the corrected loop concentrates, per iteration, on a
scalar recursion

    theta_{t+1} = risk(sqrt(theta_t / delta + sigma_w2)),
    risk(sigma) = E ||D_sigma(x_o + sigma eps) - x_o||^2 / n,

started from theta_0 = ||x_o||^2 / n.  Everything in this module is built
from that one recursion: traces, fixed points, the linear level fit
risk(sigma) <= kappa sigma^2 + B, the critical sampling ratio, a noise
sensitivity bound, greedy per-step parameter tuning, and the two-point
posterior-mean slope used as an information-theoretic baseline.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import expit
from scipy.stats import norm

from .rng import STREAM_SE, substream
from .signals import Signal

FIXED_POINT_TOL = 1e-8
FIXED_POINT_MAX_ITERS = 200
SUCCESS_TOL = 1e-6   # theta counts as "driven to zero" below SUCCESS_TOL * theta_0


def default_mc_trials(n):
    """Trial count for the risk average: 400 small, 20 large, linear between."""
    if n <= 1_000:
        return 400
    if n >= 10_000:
        return 20
    return int(round(400.0 + (20.0 - 400.0) * (n - 1_000) / 9_000.0))


@dataclass
class SETrace:
    theta: np.ndarray
    sigma: np.ndarray
    delta: float
    sigma_w2: float
    mc_trials: int

    def __len__(self):
        return len(self.theta)


@dataclass
class DenoiserLevel:
    kappa: float
    bias_B: float
    warning: str = None


class FixedPointNotConverged(RuntimeError):
    def __init__(self, theta_prev, theta_last, iters):
        super().__init__(
            f"no fixed point after {iters} iterations; "
            f"last two iterates {theta_prev:.6g}, {theta_last:.6g}"
        )
        self.theta_prev = theta_prev
        self.theta_last = theta_last


def _truth_values(x_o):
    if isinstance(x_o, Signal):
        return x_o.values, x_o.grid
    arr = np.asarray(x_o, dtype=np.float64).ravel()
    return arr, None


def se_risk(handle, x_o, sigma, mc_trials=None, seed=0, offset=0, method="auto",
            with_stderr=False):
    """Per-coordinate denoising risk of `handle` at noise level sigma.

    method "auto" uses the handle's closed form when it has one, otherwise a
    Monte-Carlo average over mc_trials fresh noise draws.  Trial i draws from
    the (seed, offset + i) substream, so callers comparing several handles at
    the same (seed, offset) share noise realizations.
    """
    if method not in ("auto", "exact", "mc"):
        raise ValueError(f"bad method {method!r}")
    values, grid = _truth_values(x_o)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if method != "mc":
        exact = handle.exact_se_risk(values, sigma)
        if exact is not None:
            return (float(exact), 0.0) if with_stderr else float(exact)
        if method == "exact":
            raise ValueError(f"{handle.kind} denoiser has no closed-form risk")
    if sigma == 0.0:
        # zero-noise input; a single application settles it
        out = handle.apply(Signal(values, grid=grid), 0.0).values
        err = float(np.mean((out - values) ** 2))
        return (err, 0.0) if with_stderr else err
    if mc_trials is None:
        mc_trials = default_mc_trials(values.size)
    if mc_trials < 1:
        raise ValueError("mc_trials must be >= 1")
    per_trial = np.empty(mc_trials)
    for i in range(mc_trials):
        rng = substream(seed, STREAM_SE, index=offset + i)
        noisy = values + sigma * rng.standard_normal(values.size)
        out = handle.apply(Signal(noisy, grid=grid), sigma).values
        per_trial[i] = np.mean((out - values) ** 2)
    mean = float(per_trial.mean())
    stderr = float(per_trial.std(ddof=1) / math.sqrt(mc_trials)) if mc_trials > 1 else 0.0
    return (mean, stderr) if with_stderr else mean


def se_step(handle, x_o, theta, delta, sigma_w2, mc_trials=None, seed=0,
            offset=0, method="auto"):
    """One scalar-recursion step: theta -> risk at sigma = sqrt(theta/delta + sigma_w2)."""
    if theta < 0:
        raise ValueError("theta must be >= 0")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if sigma_w2 < 0:
        raise ValueError("sigma_w2 must be >= 0")
    sigma = math.sqrt(theta / delta + sigma_w2)
    return se_risk(handle, x_o, sigma, mc_trials=mc_trials, seed=seed,
                   offset=offset, method=method)


def se_trace(handle, x_o, delta, sigma_w2, iters, mc_trials=None, seed=0,
             method="auto"):
    """Run the recursion for `iters` steps from theta_0 = ||x_o||^2 / n."""
    values, _ = _truth_values(x_o)
    if iters < 0:
        raise ValueError("iters must be >= 0")
    if mc_trials is None:
        mc_trials = default_mc_trials(values.size)
    theta = np.empty(iters + 1)
    theta[0] = float(np.mean(values**2))
    for t in range(iters):
        theta[t + 1] = se_step(
            handle, x_o, theta[t], delta, sigma_w2,
            mc_trials=mc_trials, seed=seed, offset=t * mc_trials, method=method,
        )
    sigma = np.sqrt(theta / delta + sigma_w2)
    return SETrace(theta=theta, sigma=sigma, delta=delta, sigma_w2=sigma_w2,
                   mc_trials=mc_trials)


def se_fixed_point(handle, x_o, delta, sigma_w2, tol=FIXED_POINT_TOL,
                   max_iters=FIXED_POINT_MAX_ITERS, mc_trials=None, seed=0,
                   method="auto", strict=True):
    """Iterate the recursion until theta stops moving.

    Stops when |theta' - theta| < tol * max(theta, 1e-12).  With strict=True
    a run that never settles raises FixedPointNotConverged carrying the last
    two iterates; strict=False returns the last iterate regardless (useful
    when only "did it reach zero" matters).
    """
    values, _ = _truth_values(x_o)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if mc_trials is None:
        mc_trials = default_mc_trials(values.size)
    theta = float(np.mean(values**2))
    for t in range(max_iters):
        theta_next = se_step(
            handle, x_o, theta, delta, sigma_w2,
            mc_trials=mc_trials, seed=seed, offset=t * mc_trials, method=method,
        )
        if abs(theta_next - theta) < tol * max(theta, 1e-12):
            return theta_next
        theta = theta_next
    if strict:
        raise FixedPointNotConverged(theta, theta_next, max_iters)
    return theta


def estimate_level(handle, x_o, sigma_grid, mc_trials=None, seed=0, method="auto"):
    """Fit the smallest linear bound risk(sigma) <= kappa sigma^2 + B on a grid.

    The fit pins the bound at the largest grid point (any feasible line must
    pass at or above the risk there) and then takes the smallest slope that
    keeps every other point below the line without driving B negative.  A
    risk curve that is exactly proportional to sigma^2 therefore comes out
    as (kappa, 0).
    """
    sigma_grid = np.asarray(sigma_grid, dtype=np.float64).ravel()
    if sigma_grid.size < 1:
        raise ValueError("sigma grid is empty")
    if np.any(sigma_grid <= 0):
        raise ValueError("sigma grid must be positive")
    if np.any(np.diff(sigma_grid) <= 0):
        raise ValueError("sigma grid must be strictly ascending")
    if mc_trials is None:
        mc_trials = default_mc_trials(_truth_values(x_o)[0].size)
    risks = np.empty(sigma_grid.size)
    errs = np.empty(sigma_grid.size)
    for i, sigma in enumerate(sigma_grid):
        risks[i], errs[i] = se_risk(
            handle, x_o, sigma, mc_trials=mc_trials, seed=seed,
            offset=i * mc_trials, method=method, with_stderr=True,
        )

    s2 = sigma_grid**2
    top = sigma_grid.size - 1
    kappa = risks[top] / s2[top]
    if top > 0:
        chords = (risks[top] - risks[:top]) / (s2[top] - s2[:top])
        kappa = min(kappa, float(np.min(chords)))
    kappa = max(kappa, 0.0)
    bias = float(risks[top] - kappa * s2[top])
    bias = max(bias, 0.0)

    warning = None
    drops = np.diff(risks)
    noise = 3.0 * np.hypot(errs[:-1], errs[1:]) if risks.size > 1 else np.array([])
    if np.any(drops < -noise):
        warning = "risk decreases along the sigma grid; denoiser is not monotone"
    return DenoiserLevel(kappa=float(kappa), bias_B=bias, warning=warning)


def delta_star(handle, x_o, sigma_w2=0.0, bracket=(0.01, 0.99), trials=None,
               tol=0.005, seed=0, method="auto", inner_iters=2000):
    """Smallest sampling ratio from which the noiseless recursion dies out.

    Bisection over delta on the predicate "theta after inner_iters steps has
    fallen below SUCCESS_TOL * theta_0".  Success is monotone in delta for
    monotone denoisers, which the endpoint check enforces empirically.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0 < lo < hi <= 1:
        raise ValueError("bracket must satisfy 0 < lo < hi <= 1")
    values, _ = _truth_values(x_o)
    theta0 = float(np.mean(values**2))
    if theta0 == 0.0:
        return lo

    def succeeds(delta):
        theta = se_fixed_point(
            handle, x_o, delta, sigma_w2, max_iters=inner_iters,
            mc_trials=trials, seed=seed, method=method, strict=False,
        )
        return theta < SUCCESS_TOL * theta0

    ok_hi = succeeds(hi)
    ok_lo = succeeds(lo)
    if ok_lo and not ok_hi:
        raise ValueError(
            "success at the lower bracket edge but not the upper; "
            "the success predicate is not monotone in delta"
        )
    if ok_lo:
        return lo
    if not ok_hi:
        raise ValueError(f"no recovery anywhere in the bracket ({lo}, {hi})")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if succeeds(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def noise_sensitivity_bound(kappa, B, delta, sigma_w2):
    """Steady-state error bound (kappa sigma_w2 + B) / (1 - kappa/delta)."""
    if kappa < 0 or B < 0 or sigma_w2 < 0:
        raise ValueError("kappa, B, sigma_w2 must be >= 0")
    if delta <= kappa:
        raise ValueError(
            f"bound undefined: delta={delta} must exceed kappa={kappa}"
        )
    return (kappa * sigma_w2 + B) / (1.0 - kappa / delta)


def greedy_tune(family, x_o, delta, sigma_w2, iters, param_grid, mc_trials=None,
                seed=0, method="auto"):
    """Per-step parameter selection along the recursion.

    `family` maps a grid value to a DenoiserHandle.  At each step every
    candidate is scored with the same noise draws (shared substream offset)
    and the smallest one-step risk wins, first match on ties.  Returns the
    chosen parameter sequence and the resulting trace.
    """
    params = list(param_grid)
    if not params:
        raise ValueError("param_grid is empty")
    values, _ = _truth_values(x_o)
    if mc_trials is None:
        mc_trials = default_mc_trials(values.size)
    theta = np.empty(iters + 1)
    theta[0] = float(np.mean(values**2))
    chosen = []
    for t in range(iters):
        best = None
        best_risk = None
        for p in params:
            risk = se_step(
                family(p), x_o, theta[t], delta, sigma_w2,
                mc_trials=mc_trials, seed=seed, offset=t * mc_trials,
                method=method,
            )
            if best_risk is None or risk < best_risk:
                best, best_risk = p, risk
        chosen.append(best)
        theta[t + 1] = best_risk
    sigma = np.sqrt(theta / delta + sigma_w2)
    trace = SETrace(theta=theta, sigma=sigma, delta=delta, sigma_w2=sigma_w2,
                    mc_trials=mc_trials)
    return chosen, trace


# ---------------------------------------------------------------------------
# posterior-mean slope for the {0, 1} spike prior
# ---------------------------------------------------------------------------

QUAD_TOL = 1e-8


def _posterior_mean_binary(y, rho, sigma):
    # P(x=1 | y) for x ~ Bernoulli(rho), y = x + sigma * z; logistic form
    # stays finite where the direct likelihood ratio would overflow
    return expit((2.0 * y - 1.0) / (2.0 * sigma**2) - math.log((1.0 - rho) / rho))


def _binary_risk(rho, sigma):
    """E[(E[x|y] - x)^2] for the two-point prior at noise level sigma."""

    def on_spike(z):
        m = _posterior_mean_binary(1.0 + sigma * z, rho, sigma)
        return (m - 1.0) ** 2 * norm.pdf(z)

    def off_spike(z):
        m = _posterior_mean_binary(sigma * z, rho, sigma)
        return m**2 * norm.pdf(z)

    total = 0.0
    for weight, fn in ((rho, on_spike), (1.0 - rho, off_spike)):
        val, abserr, info = integrate.quad(
            fn, -np.inf, np.inf, epsabs=QUAD_TOL, epsrel=QUAD_TOL,
            limit=200, full_output=True,
        )[:3]
        if abserr > 1e-6:
            raise FloatingPointError(
                f"quadrature did not converge (abserr={abserr:.2e})"
            )
        total += weight * val
    return total


def kappa_mm_binary_sparse(rho, sigma_grid):
    """Worst-case risk-to-noise ratio of the optimal scalar estimator.

    Scans risk(sigma)/sigma^2 over the grid for the Bernoulli(rho) spike
    prior under Gaussian corruption; the posterior mean is optimal per
    noise level, so the returned value is a floor on what any coordinatewise
    scheme needs.
    """
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    sigma_grid = np.asarray(sigma_grid, dtype=np.float64).ravel()
    if sigma_grid.size < 1 or np.any(sigma_grid <= 0):
        raise ValueError("sigma grid must be positive and nonempty")
    best = 0.0
    for sigma in sigma_grid:
        best = max(best, _binary_risk(rho, float(sigma)) / float(sigma) ** 2)
    return best


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

def save_se_trace(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "theta", "sigma"])
        for t, (th, sg) in enumerate(zip(trace.theta, trace.sigma)):
            writer.writerow([t, repr(float(th)), repr(float(sg))])


def load_se_trace(path, delta=None, sigma_w2=None):
    theta = []
    sigma = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["iter", "theta", "sigma"]:
            raise ValueError(f"unexpected header {header!r}")
        for row in reader:
            theta.append(float(row[1]))
            sigma.append(float(row[2]))
    return SETrace(
        theta=np.array(theta), sigma=np.array(sigma),
        delta=delta, sigma_w2=sigma_w2, mc_trials=0,
    )
