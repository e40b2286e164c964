"""Orthonormal discrete wavelet transforms with periodic extension.

Small filter-bank implementation covering the two bases the package needs
(haar and db4).  Decomposition keeps exactly n coefficients for a length-n
input, the transform is orthonormal (energy preserving), and inverting
untouched coefficients reconstructs the input to machine precision.

Lengths that are not a multiple of 2**levels are symmetrically padded on
the right before the transform and cropped after the inverse.
"""

import numpy as np

_SQRT2 = np.sqrt(2.0)

# scaling (lowpass) filters, ascending index, unit l2 norm, sum sqrt(2)
_SCALING = {
    "haar": np.array([1.0, 1.0]) / _SQRT2,
    "db4": np.array(
        [
            0.230377813308855230,
            0.714846570552541500,
            0.630880767929590400,
            -0.027983769416983850,
            -0.187034811718881140,
            0.030841381835986965,
            0.032883011666982945,
            -0.010597401784997278,
        ]
    ),
}


def filters(basis):
    """Return (lowpass, highpass) analysis filters for a named basis."""
    if basis not in _SCALING:
        raise ValueError(f"unknown wavelet basis {basis!r}")
    h = _SCALING[basis]
    L = h.size
    g = np.array([(-1) ** l * h[L - 1 - l] for l in range(L)])
    return h, g


def _analyze(s, h, g):
    # a[k] = sum_l h[l] s[(2k+l) mod N], same for d with g
    N = s.size
    a = np.zeros(N // 2)
    d = np.zeros(N // 2)
    for l in range(h.size):
        rolled = np.roll(s, -l)[::2]
        a += h[l] * rolled
        d += g[l] * rolled
    return a, d


def _synthesize(a, d, h, g):
    N = 2 * a.size
    ua = np.zeros(N)
    ud = np.zeros(N)
    ua[::2] = a
    ud[::2] = d
    s = np.zeros(N)
    for l in range(h.size):
        s += h[l] * np.roll(ua, l) + g[l] * np.roll(ud, l)
    return s


def _padded_length(n, levels):
    step = 2 ** levels
    return ((n + step - 1) // step) * step


def dwt(x, basis="haar", levels=1):
    """Multi-level 1-D transform.

    Outputs:
        coeffs : list [approx, detail_levels, ..., detail_1] of arrays,
        n      : original length (needed by idwt when padding occurred).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    levels = int(levels)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    n = x.size
    padded = _padded_length(n, levels)
    if padded != n:
        x = np.pad(x, (0, padded - n), mode="symmetric")
    h, g = filters(basis)
    details = []
    a = x
    for _ in range(levels):
        a, d = _analyze(a, h, g)
        details.append(d)
    return [a] + details[::-1], n


def idwt(coeffs, basis="haar", n=None):
    """Invert dwt(); crops back to length n when the input was padded."""
    h, g = filters(basis)
    a = coeffs[0]
    for d in coeffs[1:]:
        if d.size != a.size:
            raise ValueError("inconsistent coefficient lengths")
        a = _synthesize(a, d, h, g)
    if n is not None:
        a = a[:n]
    return a


def dwt2(img, basis="haar", levels=1):
    """Multi-level separable 2-D transform on a square or rectangular image.

    Outputs:
        coeffs : [approx, (lh, hl, hh) per level coarse-to-fine],
        shape  : original image shape.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("dwt2 needs a 2-D array")
    levels = int(levels)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    shape = img.shape
    ph = _padded_length(shape[0], levels)
    pw = _padded_length(shape[1], levels)
    if (ph, pw) != shape:
        img = np.pad(img, ((0, ph - shape[0]), (0, pw - shape[1])), mode="symmetric")
    h, g = filters(basis)
    details = []
    a = img
    for _ in range(levels):
        lo = np.empty((a.shape[0] // 2, a.shape[1]))
        hi = np.empty_like(lo)
        for j in range(a.shape[1]):
            lo[:, j], hi[:, j] = _analyze(a[:, j], h, g)
        ll = np.empty((lo.shape[0], lo.shape[1] // 2))
        lh = np.empty_like(ll)
        hl = np.empty_like(ll)
        hh = np.empty_like(ll)
        for i in range(lo.shape[0]):
            ll[i], lh[i] = _analyze(lo[i], h, g)
            hl[i], hh[i] = _analyze(hi[i], h, g)
        details.append((lh, hl, hh))
        a = ll
    return [a] + details[::-1], shape


def idwt2(coeffs, basis="haar", shape=None):
    h, g = filters(basis)
    a = coeffs[0]
    for lh, hl, hh in coeffs[1:]:
        lo = np.empty((a.shape[0], 2 * a.shape[1]))
        hi = np.empty_like(lo)
        for i in range(a.shape[0]):
            lo[i] = _synthesize(a[i], lh[i], h, g)
            hi[i] = _synthesize(hl[i], hh[i], h, g)
        out = np.empty((2 * a.shape[0], lo.shape[1]))
        for j in range(lo.shape[1]):
            out[:, j] = _synthesize(lo[:, j], hi[:, j], h, g)
        a = out
    if shape is not None:
        a = a[: shape[0], : shape[1]]
    return a
