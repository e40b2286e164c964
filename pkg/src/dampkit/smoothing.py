"""Randomized smoothing of a denoiser.

Wraps any handle with Gaussian input dithering: the smoothed map is the
average of the inner denoiser over M jittered copies of the input, an
unbiased Monte Carlo picture of the Gaussian convolution of the inner map.
Discontinuous thresholds become Lipschitz this way, which is what lets the
recovery loop and the state-evolution predictor track them.

Each apply() call draws fresh offsets from a (seed, call counter) keyed
substream, so a full run is replayable from the seed alone.
"""

import numpy as np
from scipy.stats import norm

from .denoisers import DenoiserHandle
from .rng import STREAM_SMOOTH, substream
from .signals import Signal

STREAM_MC_DIV_CRN = "mc-divergence-smoothed"


class SmoothedDenoiser(DenoiserHandle):
    kind = "smoothed"

    def __init__(self, inner, r=None, r_scale=0.1, samples=10, seed=0):
        if not isinstance(inner, DenoiserHandle):
            raise ValueError("inner must be a DenoiserHandle")
        if samples < 1:
            raise ValueError("samples must be >= 1")
        if r is not None and r <= 0:
            raise ValueError("r must be positive when given")
        if r is None and r_scale <= 0:
            raise ValueError("r_scale must be positive")
        # deliberately skip DenoiserHandle.__init__: tuning lives in `inner`
        self.inner = inner
        self.needs_grid = inner.needs_grid
        self.r = r
        self.r_scale = r_scale
        self.samples = int(samples)
        self.seed = seed
        self.calls = 0

    def radius(self, sigma_hat):
        """Smoothing width at this noise level (fixed r or r_scale * sigma_hat)."""
        rad = self.r if self.r is not None else self.r_scale * sigma_hat
        if rad <= 0:
            raise ValueError(f"smoothing radius {rad} must be positive")
        return rad

    def resolve_params(self, sigma_hat):
        out = {"r": self.radius(sigma_hat), "samples": self.samples}
        out.update({f"inner_{k}": v for k, v in self.inner.resolve_params(sigma_hat).items()})
        return out

    def apply(self, sig, sigma_hat):
        values, grid = self._values(sig)
        rad = self.radius(sigma_hat)
        rng = substream(self.seed, STREAM_SMOOTH, index=self.calls)
        self.calls += 1
        acc = np.zeros(np.asarray(values).size)
        flat = np.asarray(values, dtype=np.float64).ravel()
        for _ in range(self.samples):
            jitter = rad * rng.standard_normal(flat.size)
            jittered = (flat + jitter).reshape(np.shape(values))
            acc += self.inner.apply(Signal(jittered.ravel(), grid=grid), sigma_hat).values
        return Signal(acc / self.samples, grid=grid)

    def exact_divergence(self, values, sigma_hat):
        """Closed form for smoothed scalar thresholds.

        The Gaussian-convolved soft threshold has slope
        Phi((v - tau)/r) + Phi(-(v + tau)/r); the hard threshold adds the
        smeared jump mass tau (phi_r(v - tau) + phi_r(v + tau)).
        """
        if self.inner.kind not in ("soft_threshold", "hard_threshold"):
            return None
        tau = self.inner.resolve_params(sigma_hat)["tau"]
        rad = self.radius(sigma_hat)
        v = np.asarray(values, dtype=np.float64).ravel()
        slope = norm.cdf((v - tau) / rad) + norm.cdf(-(v + tau) / rad)
        if self.inner.kind == "hard_threshold":
            slope = slope + tau * (
                norm.pdf((v - tau) / rad) + norm.pdf((v + tau) / rad)
            ) / rad
        return float(np.sum(slope))

    def mc_divergence_crn(self, values, sigma_hat, epsilon=None, samples=None, seed=0):
        """Monte Carlo divergence with common random numbers.

        The base and probed evaluations share the same smoothing offsets,
        otherwise the independent dither noise divided by epsilon swamps
        the estimate.  Returns a DivergenceEstimate.
        """
        from .divergence import DivergenceEstimate, default_epsilon, default_samples

        arr = np.asarray(values, dtype=np.float64)
        grid = arr.shape if arr.ndim == 2 else None
        v = arr.ravel()
        if epsilon is None:
            epsilon = default_epsilon(v)
        if samples is None:
            samples = default_samples(v.size)
        total = 0.0
        for i in range(samples):
            rng = substream(seed, STREAM_MC_DIV_CRN, index=i)
            b = rng.standard_normal(v.size)
            rad = self.radius(sigma_hat)
            diff = np.zeros(v.size)
            for _ in range(self.samples):
                jitter = rad * rng.standard_normal(v.size)
                base = self.inner.apply(Signal(v + jitter, grid=grid), sigma_hat).values
                probe = self.inner.apply(
                    Signal(v + epsilon * b + jitter, grid=grid), sigma_hat
                ).values
                diff += probe - base
            total += float(b @ diff) / (epsilon * self.samples)
        value = total / samples
        if not np.isfinite(value):
            raise FloatingPointError("divergence estimate is not finite")
        return DivergenceEstimate(
            value=value, method="monte_carlo", samples=samples, epsilon=epsilon,
            seed=seed,
        )
