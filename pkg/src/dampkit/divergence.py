"""Jacobian-trace (divergence) estimation for denoisers.

Closed forms for the shrinkage families, plus the black-box Monte Carlo
estimator  div D(x) ~ E_b[ b' (D(x + eps b) - D(x)) / eps ]  with standard
normal probes b.
"""

from dataclasses import dataclass

import numpy as np

from .rng import STREAM_MC_DIV, substream


class DegenerateSpectrumError(ValueError):
    """Raised when the spectral divergence formula hits a repeated singular value."""


@dataclass
class DivergenceEstimate:
    value: float
    method: str  # "exact" or "monte_carlo"
    samples: int = None
    epsilon: float = None
    seed: int = None


def div_soft(v, tau):
    """Divergence of soft thresholding: the active-coordinate count."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return float(np.sum(np.abs(np.asarray(v)) > tau))


def div_block_soft(v, tau, block_len):
    """Divergence of blockwise shrinkage.

    Each surviving block (norm above tau) contributes
    B - tau (B - 1) / ||block||; dead blocks contribute 0.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    v = np.asarray(v, dtype=np.float64).ravel()
    B = int(block_len)
    if B < 1 or v.size % B != 0:
        raise ValueError(f"block_len {block_len} does not divide n={v.size}")
    norms = np.linalg.norm(v.reshape(-1, B), axis=1)
    active = norms > tau
    return float(np.sum(B - tau * (B - 1) / norms[active]))


def div_svt(mat, lam, rel_tol=1e-9):
    """Divergence of singular value thresholding for a real matrix.

    Uses the spectral form: each kept singular value contributes 1, a
    rectangular matrix adds |m - n| (1 - lam/s) per kept value, and kept
    values interact with every other singular value through
    2 s_i (s_i - lam) / (s_i^2 - s_j^2).

    Raises DegenerateSpectrumError when a kept singular value (nearly)
    coincides with another one, since the interaction term blows up; use
    the Monte Carlo estimator in that case.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError("div_svt needs a matrix")
    m, n = mat.shape
    s = np.linalg.svd(mat, compute_uv=False)
    keep = s > lam
    if not np.any(keep):
        return 0.0
    scale = s[0] ** 2 if s[0] > 0 else 1.0
    total = float(np.sum(keep))
    total += abs(m - n) * float(np.sum(1.0 - lam / s[keep]))
    for i in np.flatnonzero(keep):
        for j in range(s.size):
            if j == i:
                continue
            gap = s[i] ** 2 - s[j] ** 2
            if abs(gap) <= rel_tol * scale:
                raise DegenerateSpectrumError(
                    f"singular values {s[i]:.6g} and {s[j]:.6g} too close"
                )
            total += 2.0 * s[i] * (s[i] - lam) / gap
    return total


def default_epsilon(v):
    """Probe step used by the Monte Carlo estimator: max|v| / 1000."""
    peak = float(np.max(np.abs(v))) if np.asarray(v).size else 0.0
    return peak / 1000.0 if peak > 0 else 1e-6


def default_samples(n):
    """Probe count: 1 for n >= 10^4, 10 below 10^3, linear ramp between."""
    n = int(n)
    if n >= 10_000:
        return 1
    if n < 1_000:
        return 10
    return int(round(10.0 + (1.0 - 10.0) * (n - 1_000) / 9_000.0))


def mc_divergence(apply_fn, v, epsilon=None, samples=None, seed=0, base=None):
    """Monte Carlo divergence of a black-box map at v.

    Inputs:
        apply_fn : callable array -> array, the denoiser at a frozen noise level.
        v        : evaluation point (any shape; flattened internally).
        epsilon  : probe step, default max|v|/1000.
        samples  : probe count, default by the size ramp.
        seed     : drives the probe substream; sample i uses sub-index i,
                   so the average is order independent.
        base     : optional precomputed apply_fn(v), so the estimator costs
                   exactly `samples` extra denoiser applications.

    Outputs:
        DivergenceEstimate with method "monte_carlo".
    """
    v = np.asarray(v, dtype=np.float64)
    flat = v.ravel()
    if epsilon is None:
        epsilon = default_epsilon(flat)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if samples is None:
        samples = default_samples(flat.size)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if base is None:
        base = apply_fn(v)
    base = np.asarray(base, dtype=np.float64).ravel()
    total = 0.0
    for i in range(samples):
        rng = substream(seed, STREAM_MC_DIV, index=i)
        b = rng.standard_normal(flat.size)
        probe = apply_fn((flat + epsilon * b).reshape(v.shape))
        total += float(b @ (np.asarray(probe).ravel() - base)) / epsilon
    value = total / samples
    if not np.isfinite(value):
        raise FloatingPointError("divergence estimate is not finite")
    return DivergenceEstimate(
        value=value, method="monte_carlo", samples=samples, epsilon=epsilon, seed=seed
    )


def estimate(handle, values, sigma_hat, method="auto", seed=0, samples=None,
             epsilon=None, base=None):
    """Divergence of a DenoiserHandle at (values, sigma_hat).

    method: "exact" (error when the handle has no closed form),
            "monte_carlo", or "auto" (exact when available).
    """
    if method not in ("auto", "exact", "monte_carlo"):
        raise ValueError(f"unknown divergence method {method!r}")
    values = np.asarray(values, dtype=np.float64)
    if method in ("auto", "exact"):
        exact = handle.exact_divergence(values, sigma_hat)
        if exact is not None:
            return DivergenceEstimate(value=float(exact), method="exact")
        if method == "exact":
            raise ValueError(f"{handle.kind} denoiser has no exact divergence")

    if hasattr(handle, "mc_divergence_crn"):
        # dithered denoisers need common random numbers across the probe pair
        return handle.mc_divergence_crn(
            values, sigma_hat, epsilon=epsilon, samples=samples, seed=seed
        )

    def apply_fn(arr):
        return handle.apply(arr, sigma_hat).values

    if base is not None:
        base = np.asarray(base, dtype=np.float64)
    return mc_divergence(
        apply_fn, values, epsilon=epsilon, samples=samples, seed=seed, base=base
    )
