"""Randomized smoothing: dithered averages, closed-form slopes, CRN MC."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

import dampkit as dk
from dampkit import divergence as dv
from dampkit.denoisers import (
    GaussianFilterHandle,
    HardThresholdHandle,
    SoftThresholdHandle,
    hard_threshold,
)
from dampkit.rng import STREAM_SMOOTH, substream
from dampkit.smoothing import SmoothedDenoiser


def test_constructor_validation():
    inner = SoftThresholdHandle(tuning="fixed", tau=1.0)
    with pytest.raises(ValueError):
        SmoothedDenoiser("not a handle")
    with pytest.raises(ValueError):
        SmoothedDenoiser(inner, samples=0)
    with pytest.raises(ValueError):
        SmoothedDenoiser(inner, r=-0.5)
    with pytest.raises(ValueError):
        SmoothedDenoiser(inner, r=None, r_scale=0.0)


def test_radius_resolution():
    inner = SoftThresholdHandle(tuning="fixed", tau=1.0)
    assert SmoothedDenoiser(inner, r=0.7).radius(5.0) == 0.7
    assert SmoothedDenoiser(inner, r_scale=0.1).radius(2.0) == pytest.approx(0.2)


def test_apply_matches_manual_jitter_average():
    """First apply() call is the documented substream draw, reproduced here."""
    inner = HardThresholdHandle(tuning="fixed", tau=1.0)
    sm = SmoothedDenoiser(inner, r=0.3, samples=4, seed=11)
    v = substream(0, "smooth-recon").standard_normal(30)

    out = sm.apply(v, 1.0)
    rng = substream(11, STREAM_SMOOTH, index=0)
    acc = np.zeros(30)
    for _ in range(4):
        acc += hard_threshold(v + 0.3 * rng.standard_normal(30), 1.0)
    np.testing.assert_array_equal(out.values, acc / 4)
    assert sm.calls == 1


def test_apply_advances_call_counter():
    inner = HardThresholdHandle(tuning="fixed", tau=1.0)
    sm = SmoothedDenoiser(inner, r=0.3, samples=4, seed=11)
    v = np.full(20, 1.0)  # sits exactly on the jump, so dithering matters
    a = sm.apply(v, 1.0).values
    b = sm.apply(v, 1.0).values
    assert not np.array_equal(a, b)


def test_smoothed_map_matches_gaussian_convolution():
    """At the discontinuity the dithered average lands between the branch
    values, near the quadrature of the convolved map."""
    tau, r, M = 2.0, 0.5, 10_000
    inner = HardThresholdHandle(tuning="fixed", tau=tau)
    sm = SmoothedDenoiser(inner, r=r, samples=M, seed=0)
    out = float(sm.apply(np.array([2.0]), 1.0).values[0])
    expected = quad(lambda u: hard_threshold(np.array([2.0 + u]), tau)[0]
                    * norm.pdf(u, scale=r), -8 * r, 8 * r, epsabs=1e-12)[0]
    assert 0.0 < out < 2.0
    assert abs(out - expected) < 0.05  # ~4 MC standard errors at M = 1e4


def test_exact_divergence_soft_matches_quadrature():
    tau, r = 0.8, 0.4
    inner = SoftThresholdHandle(tuning="fixed", tau=tau)
    sm = SmoothedDenoiser(inner, r=r)
    pts = np.linspace(-2.5, 2.5, 21)
    total = sm.exact_divergence(pts, 1.0)
    slopes = 0.0
    for p in pts:
        # slope of the convolved map = expected active-set indicator
        slopes += quad(lambda u: (1.0 if abs(p + u) > tau else 0.0)
                       * norm.pdf(u, scale=r), -8 * r, 8 * r, epsabs=1e-12)[0]
    assert abs(total - slopes) < 1e-6


def test_exact_divergence_hard_matches_quadrature_derivative():
    """Finite differences of the convolved hard map recover the closed form,
    including the smeared jump mass."""
    tau, r = 1.0, 0.3
    inner = HardThresholdHandle(tuning="fixed", tau=tau)
    sm = SmoothedDenoiser(inner, r=r)

    def convolved(p):
        # the integrand jumps at u = +-tau - p; quad needs those breakpoints
        cuts = sorted(u for u in (tau - p, -tau - p) if abs(u) < 9 * r)
        return quad(lambda u: hard_threshold(np.array([p + u]), tau)[0]
                    * norm.pdf(u, scale=r), -9 * r, 9 * r, epsabs=1e-12,
                    points=cuts, limit=200)[0]

    h = 1e-4
    for p in (-1.4, -0.3, 0.0, 0.9, 1.0, 1.7):
        fd = (convolved(p + h) - convolved(p - h)) / (2 * h)
        formula = sm.exact_divergence(np.array([p]), 1.0)
        assert abs(fd - formula) < 1e-6


def test_exact_divergence_only_for_scalar_thresholds():
    sm = SmoothedDenoiser(GaussianFilterHandle(tuning="fixed", width=1.0), r=0.2)
    assert sm.exact_divergence(np.zeros(5), 1.0) is None


def test_crn_divergence_matches_closed_form():
    sm = SmoothedDenoiser(SoftThresholdHandle(tuning="fixed", tau=0.8),
                          r=0.4, samples=200, seed=3)
    v = substream(8, "crn-v").standard_normal(500)
    exact = sm.exact_divergence(v, 1.0)
    for seed in (0, 1):
        est = sm.mc_divergence_crn(v, 1.0, epsilon=dv.default_epsilon(v),
                                   samples=40, seed=seed)
        assert abs(est.value - exact) / exact < 0.05


def test_smoothing_restores_lipschitz_bound():
    """Straddling the jump: the raw hard threshold amplifies a small input
    gap well past 10x, the dithered version stays near slope 1."""
    tau, d = 1.0, 0.05
    rng = substream(4, "lip")
    signs = rng.choice([-1.0, 1.0], 64)
    v1 = signs * (tau - d / 2)
    v2 = signs * (tau + d / 2)

    hard = HardThresholdHandle(tuning="fixed", tau=tau)
    raw_ratio = (np.linalg.norm(hard.apply(v2, 1.0).values
                                - hard.apply(v1, 1.0).values)
                 / np.linalg.norm(v2 - v1))
    sm = SmoothedDenoiser(HardThresholdHandle(tuning="fixed", tau=tau),
                          r=0.3, samples=2000, seed=9)
    sm_ratio = (np.linalg.norm(sm.apply(v2, 1.0).values - sm.apply(v1, 1.0).values)
                / np.linalg.norm(v2 - v1))
    assert raw_ratio > 10.0
    assert sm_ratio < 5.0


def test_resolve_params_reports_inner():
    sm = SmoothedDenoiser(HardThresholdHandle(tuning="scale_with_sigma",
                                              tau_scale=2.0),
                          r_scale=0.25, samples=6)
    params = sm.resolve_params(2.0)
    assert params["r"] == pytest.approx(0.5)
    assert params["samples"] == 6
    assert params["inner_tau"] == pytest.approx(4.0)
