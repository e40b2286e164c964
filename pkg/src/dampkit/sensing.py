"""Measurement operators: dense Gaussian matrices and noisy projections.

Matrices are drawn with i.i.d. standard normal entries and then column
normalized (each column scaled to unit l2 norm), which makes the effective
per-entry standard deviation about 1/sqrt(m).  ``normalize="none"`` keeps
the raw 1/sqrt(m)-scaled i.i.d. entries for comparison runs.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import STREAM_MATRIX, STREAM_NOISE, substream

MATRIX_MAGIC = b"DAMPMAT1"


@dataclass
class MeasurementMatrix:
    entries: np.ndarray
    seed: int = None
    normalize: str = "column"

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2:
            raise ValueError("matrix entries must be 2-D")

    @property
    def m(self):
        return self.entries.shape[0]

    @property
    def n(self):
        return self.entries.shape[1]

    @property
    def delta(self):
        return self.m / self.n


def gen_matrix(m, n, seed, normalize="column"):
    """Draw a dense m-by-n Gaussian measurement matrix.

    Inputs:
        m, n      : dimensions with 1 <= m <= n.
        seed      : int, drives the matrix substream.
        normalize : "column" (default) rescales every column to unit norm;
                    "none" scales all entries by 1/sqrt(m) instead.

    Outputs:
        MeasurementMatrix
    """
    m, n = int(m), int(n)
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    if normalize not in ("column", "none"):
        raise ValueError(f"unknown normalize mode {normalize!r}")
    rng = substream(seed, STREAM_MATRIX)
    A = rng.standard_normal((m, n))
    if normalize == "column":
        A /= np.linalg.norm(A, axis=0)
    else:
        A /= np.sqrt(m)
    return MeasurementMatrix(A, seed=seed, normalize=normalize)


def apply_matrix(A, x):
    """y = A x for a flat vector x of length n."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != A.n:
        raise ValueError(f"vector length {x.size} != n={A.n}")
    return A.entries @ x


def apply_adjoint(A, u):
    """v = A* u for a flat vector u of length m."""
    u = np.asarray(u, dtype=np.float64).ravel()
    if u.size != A.m:
        raise ValueError(f"vector length {u.size} != m={A.m}")
    return A.entries.T @ u


@dataclass
class Measurement:
    y: np.ndarray
    sigma_w: float = 0.0
    noise_seed: int = None


def measure(A, x, sigma_w=0.0, noise_seed=0):
    """Project a signal and add white Gaussian measurement noise.

    y = A x + sigma_w * g with g drawn from the dedicated noise substream.
    sigma_w = 0 skips the draw entirely, so noiseless runs do not consume
    random state.
    """
    if sigma_w < 0:
        raise ValueError("sigma_w must be nonnegative")
    y = apply_matrix(A, x.values if hasattr(x, "values") else x)
    if sigma_w > 0:
        rng = substream(noise_seed, STREAM_NOISE)
        y = y + sigma_w * rng.standard_normal(A.m)
    return Measurement(np.asarray(y), float(sigma_w), noise_seed)


# ---------------------------------------------------------------------------
# on-disk format: 8-byte magic, m and n as little-endian uint64, then
# row-major float64 entries (little endian)
# ---------------------------------------------------------------------------

def save_matrix(A, path):
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<QQ", A.m, A.n))
        fh.write(np.ascontiguousarray(A.entries, dtype="<f8").tobytes())


def load_matrix(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MATRIX_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        header = fh.read(16)
        if len(header) != 16:
            raise ValueError(f"{path}: truncated header")
        m, n = struct.unpack("<QQ", header)
        body = fh.read()
    expected = m * n * 8
    if len(body) != expected:
        raise ValueError(
            f"{path}: expected {expected} bytes of entries, found {len(body)}"
        )
    entries = np.frombuffer(body, dtype="<f8").reshape(m, n)
    return MeasurementMatrix(np.array(entries), seed=None, normalize="unknown")
