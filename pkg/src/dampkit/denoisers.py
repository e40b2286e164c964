"""Denoiser catalog and the uniform handle interface.

Two layers:

* plain array functions (soft_threshold, nlm, svt, ...) that take explicit
  parameters and know nothing about noise levels;
* ``DenoiserHandle`` subclasses that bind a family to a tuning rule and
  expose ``apply(signal, sigma_hat)`` plus an optional exact divergence,
  which is what the recovery loop and the state-evolution predictor consume.

Tuning modes:
    fixed            parameters used exactly as given
    scale_with_sigma designated parameters are multiples of sigma_hat
    lookup_table     parameters chosen from a sigma-interval table
"""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.stats import norm

from . import wavelets
from .signals import Signal


# ---------------------------------------------------------------------------
# pointwise and block thresholds
# ---------------------------------------------------------------------------

def soft_threshold(v, tau):
    """Shrink towards zero by tau; exactly zero inside [-tau, tau]."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def hard_threshold(v, tau):
    """Keep entries with |v| >= tau, zero the rest."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    v = np.asarray(v, dtype=np.float64)
    return np.where(np.abs(v) >= tau, v, 0.0)


def block_soft_threshold(v, tau, block_len):
    """Groupwise shrinkage: scale each block by (1 - tau/||block||), floored at 0.

    The vector length must be a multiple of block_len.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    v = np.asarray(v, dtype=np.float64).ravel()
    B = int(block_len)
    if B < 1 or v.size % B != 0:
        raise ValueError(f"block_len {block_len} does not divide n={v.size}")
    blocks = v.reshape(-1, B)
    norms = np.linalg.norm(blocks, axis=1)
    factor = np.zeros_like(norms)
    nz = norms > 0
    factor[nz] = np.maximum(1.0 - tau / norms[nz], 0.0)
    return (blocks * factor[:, None]).ravel()


def svt(mat, lam):
    """Singular value thresholding: soft-threshold the spectrum by lam."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError("svt needs a matrix")
    U, s, Vt = np.linalg.svd(mat, full_matrices=False)
    return (U * np.maximum(s - lam, 0.0)) @ Vt


# ---------------------------------------------------------------------------
# neighborhood filters; all use symmetric (reflecting) borders
# ---------------------------------------------------------------------------

def gaussian_kernel(width):
    if width <= 0:
        raise ValueError("width must be positive")
    radius = int(np.ceil(3.0 * width))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-t * t / (2.0 * width * width))
    return k / k.sum()


def gaussian_filter(f, width):
    """Separable Gaussian blur of a 1-D or 2-D array."""
    f = np.asarray(f, dtype=np.float64)
    k = gaussian_kernel(width)
    r = (k.size - 1) // 2

    def conv1(a):
        return np.convolve(np.pad(a, r, mode="symmetric"), k, mode="valid")

    if f.ndim == 1:
        return conv1(f)
    if f.ndim == 2:
        out = np.apply_along_axis(conv1, 1, f)
        return np.apply_along_axis(conv1, 0, out)
    raise ValueError("gaussian_filter expects 1-D or 2-D input")


def _box_sum_1d(a, radius):
    # sliding-window sum over 2*radius+1 entries, same length as a
    c = np.concatenate(([0.0], np.cumsum(np.pad(a, radius, mode="symmetric"))))
    w = 2 * radius + 1
    return c[w:] - c[:-w]


def _box_sum_2d(a, radius):
    c = np.pad(a, radius, mode="symmetric")
    c = np.cumsum(np.cumsum(c, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    w = 2 * radius + 1
    return (
        c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]
    )


def bilateral_filter(f, h, window_radius, spatial_sigma=None, range_only=False):
    """Edge-preserving weighted average.

    Weights combine a value-similarity factor exp(-(f_i - f_j)^2 / h^2)
    with a spatial Gaussian exp(-dist^2 / (2 spatial_sigma^2)); pass
    range_only=True to drop the spatial factor.  The center pixel always
    participates with similarity weight 1.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    W = int(window_radius)
    if W < 1:
        raise ValueError("window_radius must be >= 1")
    if spatial_sigma is None:
        spatial_sigma = max(W / 2.0, 1.0)
    f = np.asarray(f, dtype=np.float64)

    if f.ndim == 1:
        fp = np.pad(f, W, mode="symmetric")
        num = np.zeros_like(f)
        den = np.zeros_like(f)
        for s in range(-W, W + 1):
            shifted = fp[W + s : W + s + f.size]
            w = np.exp(-((f - shifted) ** 2) / (h * h))
            if not range_only:
                w = w * np.exp(-(s * s) / (2.0 * spatial_sigma ** 2))
            num += w * shifted
            den += w
        return num / den

    if f.ndim == 2:
        fp = np.pad(f, W, mode="symmetric")
        H, Wd = f.shape
        num = np.zeros_like(f)
        den = np.zeros_like(f)
        for dy in range(-W, W + 1):
            for dx in range(-W, W + 1):
                shifted = fp[W + dy : W + dy + H, W + dx : W + dx + Wd]
                w = np.exp(-((f - shifted) ** 2) / (h * h))
                if not range_only:
                    w = w * np.exp(-(dy * dy + dx * dx) / (2.0 * spatial_sigma ** 2))
                num += w * shifted
                den += w
        return num / den
    raise ValueError("bilateral_filter expects 1-D or 2-D input")


def nlm(f, h, patch_radius, window_radius, patch_distance="mean"):
    """Non-local means: average pixels with similar patches.

    The similarity weight is exp(-d2 / h^2) where d2 is the squared l2
    distance between the patches around the two pixels.  With
    patch_distance="mean" (default) d2 is divided by the patch size, which
    keeps a fixed h meaningful across patch geometries; "sum" uses the raw
    squared distance.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    P, W = int(patch_radius), int(window_radius)
    if P < 0 or W < 1:
        raise ValueError("need patch_radius >= 0 and window_radius >= 1")
    if patch_distance not in ("mean", "sum"):
        raise ValueError(f"unknown patch_distance {patch_distance!r}")
    f = np.asarray(f, dtype=np.float64)

    if f.ndim == 1:
        L = 2 * P + 1
        fp = np.pad(f, W, mode="symmetric")
        num = np.zeros_like(f)
        den = np.zeros_like(f)
        for s in range(-W, W + 1):
            shifted = fp[W + s : W + s + f.size]
            d2 = _box_sum_1d((f - shifted) ** 2, P)
            if patch_distance == "mean":
                d2 = d2 / L
            w = np.exp(-d2 / (h * h))
            num += w * shifted
            den += w
        return num / den

    if f.ndim == 2:
        area = (2 * P + 1) ** 2
        H, Wd = f.shape
        fp = np.pad(f, W, mode="symmetric")
        num = np.zeros_like(f)
        den = np.zeros_like(f)
        for dy in range(-W, W + 1):
            for dx in range(-W, W + 1):
                shifted = fp[W + dy : W + dy + H, W + dx : W + dx + Wd]
                d2 = _box_sum_2d((f - shifted) ** 2, P)
                if patch_distance == "mean":
                    d2 = d2 / area
                w = np.exp(-d2 / (h * h))
                num += w * shifted
                den += w
        return num / den
    raise ValueError("nlm expects 1-D or 2-D input")


def wavelet_threshold(f, tau, basis="haar", levels=4, mode="soft"):
    """Transform, threshold the detail bands, transform back.

    Works on 1-D vectors and 2-D arrays; the approximation band is never
    touched, so tau=0 is the identity up to floating point.
    """
    if mode not in ("soft", "hard"):
        raise ValueError(f"unknown threshold mode {mode!r}")
    thr = soft_threshold if mode == "soft" else hard_threshold
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        coeffs, n = wavelets.dwt(f, basis, levels)
        out = [coeffs[0]] + [thr(d, tau) for d in coeffs[1:]]
        return wavelets.idwt(out, basis, n)
    if f.ndim == 2:
        coeffs, shape = wavelets.dwt2(f, basis, levels)
        out = [coeffs[0]] + [
            tuple(thr(band, tau) for band in level) for level in coeffs[1:]
        ]
        return wavelets.idwt2(out, basis, shape)
    raise ValueError("wavelet_threshold expects 1-D or 2-D input")


def wavelet_detail_count(f, tau, basis="haar", levels=4, mode="soft"):
    """Coefficient count entering the exact divergence of wavelet thresholding.

    Counts approximation coefficients (passed through with derivative 1)
    plus detail coefficients above the threshold.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        coeffs, _ = wavelets.dwt(f, basis, levels)
        total = coeffs[0].size
        for d in coeffs[1:]:
            total += int(np.sum(np.abs(d) > tau))
        return float(total)
    coeffs, _ = wavelets.dwt2(f, basis, levels)
    total = coeffs[0].size
    for level in coeffs[1:]:
        for band in level:
            total += int(np.sum(np.abs(band) > tau))
    return float(total)


# ---------------------------------------------------------------------------
# tuning
# ---------------------------------------------------------------------------

TUNING_MODES = ("fixed", "scale_with_sigma", "lookup_table")


@dataclass
class TuningTable:
    """Rows of contiguous [sigma_min, sigma_max) intervals with parameters.

    Lookups below the first interval clamp to the first row; at or above
    the last edge they clamp to the last row.
    """

    rows: list

    def __post_init__(self):
        if not self.rows:
            raise ValueError("tuning table needs at least one row")
        prev_hi = None
        for row in self.rows:
            lo, hi = float(row["sigma_min"]), float(row["sigma_max"])
            if hi <= lo:
                raise ValueError(f"bad interval [{lo}, {hi})")
            if prev_hi is not None and lo != prev_hi:
                raise ValueError("tuning table intervals must be contiguous")
            prev_hi = hi

    def select(self, sigma):
        if sigma < self.rows[0]["sigma_min"]:
            row = self.rows[0]
        else:
            row = self.rows[-1]
            for r in self.rows:
                if r["sigma_min"] <= sigma < r["sigma_max"]:
                    row = r
                    break
        return {k: v for k, v in row.items() if k not in ("sigma_min", "sigma_max")}

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        return cls(data["rows"])


def default_nlm_table():
    """The shipped per-sigma smoothing table for NLM on 8-bit images."""
    ref = resources.files("dampkit") / "data" / "nlm_image.json"
    return TuningTable(json.loads(ref.read_text())["rows"])


def _resolve_scaled(params, sigma):
    """Turn any '<name>_scale' entry into '<name>' = scale * sigma."""
    out = {}
    for key, value in params.items():
        if key.endswith("_scale"):
            out[key[:-6]] = float(value) * sigma
        else:
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# handles
# ---------------------------------------------------------------------------

class DenoiserHandle:
    """Uniform interface: apply(signal, sigma_hat) with a tuning rule."""

    kind = None
    needs_grid = False

    def __init__(self, tuning="fixed", table=None, **params):
        if tuning not in TUNING_MODES:
            raise ValueError(f"unknown tuning mode {tuning!r}")
        if tuning == "lookup_table":
            if table is None:
                raise ValueError("lookup_table tuning needs a table")
            if not isinstance(table, TuningTable):
                table = TuningTable(table)
        self.tuning = tuning
        self.table = table
        self.params = dict(params)

    def resolve_params(self, sigma_hat):
        """Concrete parameter dict used at this noise level."""
        if self.tuning == "fixed":
            merged = dict(self.params)
        elif self.tuning == "scale_with_sigma":
            merged = _resolve_scaled(self.params, sigma_hat)
        else:
            merged = dict(self.params)
            merged.update(_resolve_scaled(self.table.select(sigma_hat), sigma_hat))
        return merged

    def _values(self, sig):
        if isinstance(sig, Signal):
            if sig.grid is not None:
                # keep the grid shape so shape-aware denoisers see the image
                return sig.as_grid(), sig.grid
            if self.needs_grid:
                raise ValueError(f"{self.kind} denoiser needs a grid signal")
            return sig.values, sig.grid
        arr = np.asarray(sig, dtype=np.float64)
        if self.needs_grid and arr.ndim != 2:
            raise ValueError(f"{self.kind} denoiser needs a 2-D array")
        return arr, (arr.shape if arr.ndim == 2 else None)

    def apply(self, sig, sigma_hat):
        values, grid = self._values(sig)
        out = self._apply_values(values, self.resolve_params(sigma_hat))
        return Signal(np.asarray(out).ravel(), grid=grid)

    def _apply_values(self, values, params):
        raise NotImplementedError

    def exact_divergence(self, values, sigma_hat):
        """Jacobian trace at ``values``, or None when no closed form exists."""
        return None

    def exact_se_risk(self, x_true, sigma):
        """Closed-form denoising risk at noise level sigma, or None."""
        return None


class SoftThresholdHandle(DenoiserHandle):
    kind = "soft_threshold"

    def _apply_values(self, values, params):
        return soft_threshold(values, params["tau"])

    def exact_divergence(self, values, sigma_hat):
        tau = self.resolve_params(sigma_hat)["tau"]
        return float(np.sum(np.abs(values) > tau))

    def exact_se_risk(self, x_true, sigma):
        if sigma <= 0:
            return 0.0
        tau_rel = self.resolve_params(sigma)["tau"] / sigma
        return float(np.mean(_soft_risk_unit(x_true / sigma, tau_rel)) * sigma**2)


def _soft_risk_unit(mu, tau):
    """E[(soft(mu + Z, tau) - mu)^2] for Z standard normal, vectorized in mu."""
    a = tau - mu
    b = tau + mu
    return (
        (1.0 + tau * tau) * (norm.sf(a) + norm.sf(b))
        + (-mu - tau) * norm.pdf(a)
        + (mu - tau) * norm.pdf(b)
        + mu * mu * (norm.cdf(a) - norm.cdf(-b))
    )


class HardThresholdHandle(DenoiserHandle):
    kind = "hard_threshold"

    def _apply_values(self, values, params):
        return hard_threshold(values, params["tau"])

    def exact_divergence(self, values, sigma_hat):
        # derivative of the kept branch only; the jumps at |v| = tau carry
        # extra mass that this count ignores, which is exactly why the
        # smoothed variant exists
        tau = self.resolve_params(sigma_hat)["tau"]
        return float(np.sum(np.abs(values) >= tau))


class BlockSoftHandle(DenoiserHandle):
    kind = "block_soft"

    def _apply_values(self, values, params):
        return block_soft_threshold(values, params["tau"], params["block_len"])

    def exact_divergence(self, values, sigma_hat):
        from .divergence import div_block_soft

        p = self.resolve_params(sigma_hat)
        return div_block_soft(values, p["tau"], p["block_len"])


class SVTHandle(DenoiserHandle):
    kind = "svt"
    needs_grid = True

    def _apply_values(self, values, params):
        return svt(values, params["lam"])

    def exact_divergence(self, values, sigma_hat):
        from .divergence import div_svt

        return div_svt(values, self.resolve_params(sigma_hat)["lam"])


class GaussianFilterHandle(DenoiserHandle):
    kind = "gaussian_filter"

    def _apply_values(self, values, params):
        return gaussian_filter(values, params["width"])


class BilateralHandle(DenoiserHandle):
    kind = "bilateral"

    def _apply_values(self, values, params):
        return bilateral_filter(
            values,
            params["h"],
            params["window_radius"],
            params.get("spatial_sigma"),
            params.get("range_only", False),
        )


class NLMHandle(DenoiserHandle):
    kind = "nlm"

    def _apply_values(self, values, params):
        return nlm(
            values,
            params["h"],
            params["patch_radius"],
            params["window_radius"],
            params.get("patch_distance", "mean"),
        )


class WaveletHandle(DenoiserHandle):
    kind = "wavelet"

    def __init__(self, mode="soft", **kw):
        super().__init__(**kw)
        if mode not in ("soft", "hard"):
            raise ValueError(f"unknown wavelet threshold mode {mode!r}")
        self.mode = mode

    def _apply_values(self, values, params):
        return wavelet_threshold(
            values,
            params["tau"],
            params.get("basis", "haar"),
            params.get("levels", 4),
            self.mode,
        )

    def exact_divergence(self, values, sigma_hat):
        p = self.resolve_params(sigma_hat)
        return wavelet_detail_count(
            values, p["tau"], p.get("basis", "haar"), p.get("levels", 4), self.mode
        )


class ProjectionHandle(DenoiserHandle):
    """Projection onto the coordinate subspace given by ``support``."""

    kind = "projection"

    def __init__(self, support, **kw):
        super().__init__(**kw)
        self.support = np.asarray(support, dtype=np.intp).ravel()
        if self.support.size != np.unique(self.support).size:
            raise ValueError("support indices must be distinct")

    def _apply_values(self, values, params):
        out = np.zeros_like(np.asarray(values, dtype=np.float64).ravel())
        out[self.support] = np.asarray(values).ravel()[self.support]
        return out

    def exact_divergence(self, values, sigma_hat):
        return float(self.support.size)

    def exact_se_risk(self, x_true, sigma):
        x_true = np.asarray(x_true, dtype=np.float64).ravel()
        mask = np.zeros(x_true.size, dtype=bool)
        mask[self.support] = True
        bias = float(np.sum(x_true[~mask] ** 2))
        return (bias + self.support.size * sigma * sigma) / x_true.size


class IdentityHandle(DenoiserHandle):
    kind = "identity"

    def _apply_values(self, values, params):
        return np.asarray(values, dtype=np.float64)

    def exact_divergence(self, values, sigma_hat):
        return float(np.asarray(values).size)


class ZeroHandle(DenoiserHandle):
    kind = "zero"

    def _apply_values(self, values, params):
        return np.zeros_like(np.asarray(values, dtype=np.float64))

    def exact_divergence(self, values, sigma_hat):
        return 0.0


_HANDLE_KINDS = {
    "soft_threshold": SoftThresholdHandle,
    "hard_threshold": HardThresholdHandle,
    "block_soft": BlockSoftHandle,
    "svt": SVTHandle,
    "gaussian_filter": GaussianFilterHandle,
    "bilateral": BilateralHandle,
    "nlm": NLMHandle,
    "projection": ProjectionHandle,
    "identity": IdentityHandle,
    "zero": ZeroHandle,
}


def from_config(config):
    """Build a handle from a declarative dict (or a path to a JSON file).

    Schema:
        kind    : family name, "wavelet_soft"/"wavelet_hard", or "smoothed"
        tuning  : one of TUNING_MODES (default "fixed")
        params  : family parameters; "<name>_scale" entries multiply sigma_hat
        table   : rows for lookup_table tuning (inline or {"file": path})
        inner   : nested config, only for kind "smoothed"
        smooth  : {"r" or "r_scale", "samples", "seed"} for kind "smoothed"
    """
    if isinstance(config, str):
        with open(config) as fh:
            config = json.load(fh)
    allowed = {"kind", "tuning", "params", "table", "inner", "smooth", "support"}
    unknown = sorted(set(config) - allowed)
    if unknown:
        raise ValueError(f"unknown denoiser config keys: {', '.join(unknown)}")
    kind = config.get("kind")
    if kind is None:
        raise ValueError("denoiser config needs a 'kind'")

    if kind == "smoothed":
        from .smoothing import SmoothedDenoiser

        inner_cfg = config.get("inner")
        if inner_cfg is None:
            raise ValueError("smoothed denoiser config needs 'inner'")
        smooth = dict(config.get("smooth", {}))
        return SmoothedDenoiser(from_config(inner_cfg), **smooth)

    kw = {"tuning": config.get("tuning", "fixed")}
    table = config.get("table")
    if table is not None:
        if isinstance(table, dict) and "file" in table:
            kw["table"] = TuningTable.from_file(table["file"])
        else:
            kw["table"] = TuningTable(table)
    params = dict(config.get("params", {}))

    if kind in ("wavelet_soft", "wavelet_hard"):
        return WaveletHandle(mode=kind.split("_")[1], **kw, **params)
    if kind == "projection":
        support = config.get("support", params.pop("support", None))
        if support is None:
            raise ValueError("projection config needs 'support'")
        return ProjectionHandle(support, **kw, **params)
    cls = _HANDLE_KINDS.get(kind)
    if cls is None:
        raise ValueError(f"unknown denoiser kind {kind!r}")
    return cls(**kw, **params)
