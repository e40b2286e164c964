"""Test-signal generation, error metrics, and signal serialization.

A ``Signal`` is a flat float64 vector plus an optional grid shape.  Image
denoisers reshape to the grid; everything else (measurement, recovery,
state evolution) treats the signal as the flat vector.
"""

from dataclasses import dataclass

import numpy as np

from .rng import STREAM_SIGNAL, substream

SIGNAL_CLASSES = (
    "k_sparse_binary",
    "k_sparse_gaussian",
    "piecewise_constant",
    "lp_ball",
    "image_file",
)


@dataclass
class Signal:
    """A real signal with an optional 2-D interpretation.

    values : 1-D float64 array (row-major flattening when grid is set).
    grid   : None for flat signals, else (height, width).
    """

    values: np.ndarray
    grid: tuple = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.grid is not None:
            h, w = self.grid
            if h * w != self.values.size:
                raise ValueError(
                    f"grid {self.grid} does not match {self.values.size} values"
                )
            self.grid = (int(h), int(w))

    @property
    def n(self):
        return self.values.size

    def as_grid(self):
        if self.grid is None:
            raise ValueError("signal has no grid layout")
        return self.values.reshape(self.grid)


def gen_signal(signal_class, n, params, seed):
    """Draw a test signal of the named class.

    Inputs:
        signal_class : one of SIGNAL_CLASSES (image_file is loaded via
                       load_pgm / load_csv instead and rejected here).
        n            : signal length.
        params       : dict of class parameters:
                         k_sparse_*        -> {"k": int}
                         piecewise_constant -> {"pieces": int}
                         lp_ball           -> {"k": int unused, "p": float in (0,1]}
        seed         : int, drives the dedicated signal substream.

    Outputs:
        Signal (flat layout).
    """
    if signal_class not in SIGNAL_CLASSES:
        raise ValueError(f"unknown signal class {signal_class!r}")
    if signal_class == "image_file":
        raise ValueError("image_file signals are loaded from disk, not generated")
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    rng = substream(seed, STREAM_SIGNAL)

    if signal_class in ("k_sparse_binary", "k_sparse_gaussian"):
        k = int(params["k"])
        if not 0 <= k <= n:
            raise ValueError(f"k={k} out of range for n={n}")
        x = np.zeros(n)
        support = rng.choice(n, size=k, replace=False)
        if signal_class == "k_sparse_binary":
            x[support] = 1.0
        else:
            x[support] = rng.standard_normal(k)
        return Signal(x)

    if signal_class == "piecewise_constant":
        pieces = int(params["pieces"])
        if not 1 <= pieces <= n:
            raise ValueError(f"pieces={pieces} out of range for n={n}")
        # pieces-1 distinct interior breakpoints => exactly `pieces` segments
        cuts = np.sort(rng.choice(np.arange(1, n), size=pieces - 1, replace=False))
        levels = rng.uniform(0.0, 1.0, size=pieces)
        x = np.empty(n)
        bounds = np.concatenate(([0], cuts, [n]))
        for i in range(pieces):
            x[bounds[i]:bounds[i + 1]] = levels[i]
        return Signal(x)

    # lp_ball: dense gaussian draw rescaled onto the unit l_p sphere
    p = float(params["p"])
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p={p} must lie in (0, 1]")
    x = rng.standard_normal(n)
    scale = np.sum(np.abs(x) ** p) ** (1.0 / p)
    if scale == 0.0:
        raise ValueError("degenerate zero draw")
    return Signal(x / scale)


def mse(a, b):
    """Mean squared error between two equal-length signals or arrays."""
    av = a.values if isinstance(a, Signal) else np.asarray(a, dtype=np.float64)
    bv = b.values if isinstance(b, Signal) else np.asarray(b, dtype=np.float64)
    av, bv = av.ravel(), bv.ravel()
    if av.size != bv.size:
        raise ValueError(f"length mismatch {av.size} vs {bv.size}")
    return float(np.mean((av - bv) ** 2))


def psnr(a, b, peak=255.0):
    """Peak signal-to-noise ratio in dB; +inf when the signals coincide."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    m = mse(a, b)
    if m == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / m))


# ---------------------------------------------------------------------------
# serialization: one-column CSV for flat signals, binary PGM (P5) for grids
# ---------------------------------------------------------------------------

def save_csv(sig, path):
    """Write a flat signal as one float value per line (repr round-trips)."""
    values = sig.values if isinstance(sig, Signal) else np.asarray(sig).ravel()
    with open(path, "w") as fh:
        for v in values:
            fh.write(f"{float(v)!r}\n")


def load_csv(path):
    with open(path) as fh:
        values = [float(line) for line in fh if line.strip()]
    if not values:
        raise ValueError(f"{path}: empty signal file")
    return Signal(np.array(values))


def save_pgm(sig, path):
    """Write a grid signal as binary 8-bit PGM, rounding and clipping to 0..255."""
    if not isinstance(sig, Signal) or sig.grid is None:
        raise ValueError("PGM output needs a grid signal")
    img = np.clip(np.rint(sig.as_grid()), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def load_pgm(path):
    """Read a binary 8-bit PGM into a grid Signal with values in 0..255."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header = magic, width, height, maxval; comments start with '#'
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    raw = data[pos:pos + w * h]
    if len(raw) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    return Signal(img.astype(np.float64).ravel(), grid=(h, w))


# ---------------------------------------------------------------------------
# deterministic synthetic test image
# ---------------------------------------------------------------------------

def house_image(size=64):
    """Draw a cartoon house scene: flat regions with sharp edges.

    Serves as a deterministic stand-in for classic photographic test crops,
    which cannot be shipped with the repo.  Values in 0..255.
    """
    size = int(size)
    if size < 16:
        raise ValueError("size must be at least 16")
    img = np.full((size, size), 200.0)           # sky
    s = size / 64.0

    def r(v):
        return int(round(v * s))

    img[r(40):, :] = 90.0                        # ground
    img[r(28):r(52), r(14):r(50)] = 150.0        # house body
    # roof: triangle
    for row in range(r(14), r(28)):
        half = int((row - r(14)) * 1.4 * s + 2 * s)
        c0, c1 = max(r(32) - half, r(10)), min(r(32) + half, r(54))
        img[row, c0:c1] = 60.0
    img[r(34):r(44), r(20):r(28)] = 230.0        # window
    img[r(36):r(52), r(38):r(46)] = 40.0         # door
    img[r(8):r(14), r(46):r(52)] = 245.0         # sun
    return Signal(img.ravel(), grid=(size, size))
