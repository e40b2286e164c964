"""Effective-noise extraction and normality reporting."""

import json

import numpy as np
import pytest
import scipy.stats

import dampkit as dk
from dampkit import diagnostics as dg
from dampkit.recovery import RecoveryState
from dampkit.rng import substream


def test_anderson_darling_matches_scipy():
    v = substream(3, "ad-probe").standard_normal(500)
    ours = dk.normality(v).anderson_darling_stat
    theirs = scipy.stats.anderson(v, dist="norm").statistic
    assert abs(ours - theirs) < 1e-10


def test_moments_on_gaussian_sample():
    v = substream(0, "moments").standard_normal(200_000)
    rep = dk.normality(v)
    assert abs(rep.excess_kurtosis) < 0.05
    assert abs(rep.skewness) < 0.02


def test_gaussian_meta_rate():
    """Excess kurtosis stays inside the +-0.15 band for nearly all draws."""
    hits = 0
    for s in range(200):
        v = substream(s, "meta-normal").standard_normal(10_000)
        hits += abs(dk.normality(v).excess_kurtosis) < 0.15
    assert hits >= 190


def test_heavy_tails_flagged():
    v = substream(1, "laplace-probe").laplace(size=10_000)
    rep = dk.normality(v)
    # Laplace has excess kurtosis 3; the statistic should sit near it
    assert 2.0 < rep.excess_kurtosis < 4.0
    assert rep.anderson_darling_stat > 1.0


def test_qq_pairs_layout():
    v = substream(3, "ad-probe").standard_normal(12)
    rep = dk.normality(v)
    pairs = np.asarray(rep.qq_pairs)
    assert pairs.shape == (12, 2)
    i = np.arange(1, 13)
    np.testing.assert_allclose(pairs[:, 0],
                               scipy.stats.norm.ppf((i - 0.5) / 12), atol=1e-12)
    standardized = (np.sort(v) - v.mean()) / v.std(ddof=1)
    np.testing.assert_allclose(pairs[:, 1], standardized, atol=1e-12)


def test_normality_input_validation():
    with pytest.raises(ValueError):
        dk.normality(np.arange(7.0))  # below the minimum sample size
    with pytest.raises(ValueError):
        dk.normality(np.full(20, 3.0))  # zero variance


def test_effective_noise_from_full_state():
    A = dk.gen_matrix(20, 50, seed=0)
    rng = np.random.default_rng(1)
    x = rng.standard_normal(50)
    z = rng.standard_normal(20)
    truth = rng.standard_normal(50)
    state = RecoveryState(x=x, z=z, sigma_hat=1.0, iter=4, pseudo=None)
    snap = dk.effective_noise(state, A, truth, algorithm="amp")
    np.testing.assert_allclose(snap.v, x + A.entries.T @ z - truth, atol=1e-12)
    assert snap.iter == 4 and snap.algorithm == "amp"


def test_effective_noise_from_stored_pseudo():
    # deserialized snapshots carry only the pseudo-data; no matrix needed
    truth = np.arange(5.0)
    pseudo = truth + 0.25
    state = RecoveryState(x=None, z=None, sigma_hat=1.0, iter=2, pseudo=pseudo)
    snap = dk.effective_noise(state, None, truth)
    np.testing.assert_allclose(snap.v, 0.25, atol=1e-14)


def test_effective_noise_validation():
    state = RecoveryState(x=None, z=None, sigma_hat=1.0, iter=0, pseudo=None)
    with pytest.raises(ValueError):
        dk.effective_noise(state, None, np.zeros(4))
    short = RecoveryState(x=None, z=None, sigma_hat=1.0, iter=0,
                          pseudo=np.zeros(3))
    with pytest.raises(ValueError):
        dk.effective_noise(short, None, np.zeros(4))


def test_compare_traces_hand_values():
    cmp = dk.compare_traces([1.0, 2.0, 3.0, 4.0], [2.0, 2.0, 2.0])
    np.testing.assert_allclose(cmp.rel_errors, [0.5, 0.0, 0.5])
    assert cmp.terminal_rel_error == 0.5
    assert cmp.length == 3  # truncated to the shorter trace


def test_compare_traces_zero_handling():
    cmp = dk.compare_traces([0.0, 1.0], [0.0, 0.0])
    assert cmp.rel_errors[0] == 0.0  # both exactly zero: perfect agreement
    assert cmp.rel_errors[1] == np.inf  # prediction zero, run nonzero


def test_report_json_fields():
    v = substream(2, "rj").standard_normal(64)
    obj = json.loads(dg.report_json(dk.normality(v)))
    assert sorted(obj) == ["anderson_darling_stat", "excess_kurtosis", "n",
                           "skewness"]
    assert obj["n"] == 64


def test_save_qq_csv(tmp_path):
    v = substream(2, "rj").standard_normal(32)
    rep = dk.normality(v)
    path = tmp_path / "qq.csv"
    dg.save_qq(rep, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "theoretical,empirical"
    assert len(lines) == 33
    first = [float(t) for t in lines[1].split(",")]
    np.testing.assert_allclose(first, np.asarray(rep.qq_pairs)[0], atol=1e-15)
