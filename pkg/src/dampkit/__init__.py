"""Compressed-sensing recovery built around pluggable denoisers.

The core loop feeds the residual back with a divergence-weighted
correction so that, iteration after iteration, the denoiser sees its
favorite kind of input: the truth plus white Gaussian noise.  A scalar
recursion predicts the per-iteration error of that loop, which turns
denoiser quality into sampling-rate guarantees.
"""

from .denoisers import DenoiserHandle, TuningTable, default_nlm_table, from_config
from .diagnostics import compare_traces, effective_noise, normality
from .divergence import DivergenceEstimate, estimate as estimate_divergence, mc_divergence
from .recovery import (
    NumericalFailure, RecoveryConfig, RecoveryTrace, exhaustive_bk_recover,
    read_trace, run_recovery, write_trace,
)
from .sensing import MeasurementMatrix, gen_matrix, load_matrix, measure, save_matrix
from .signals import (
    Signal, gen_signal, house_image, load_csv, load_pgm, mse, psnr,
    save_csv, save_pgm,
)
from .smoothing import SmoothedDenoiser
from .state_evolution import (
    DenoiserLevel, SETrace, delta_star, estimate_level, greedy_tune,
    kappa_mm_binary_sparse, noise_sensitivity_bound, se_fixed_point,
    se_risk, se_trace,
)

__version__ = "0.1.0"

__all__ = [
    "DenoiserHandle", "TuningTable", "default_nlm_table", "from_config",
    "compare_traces", "effective_noise", "normality",
    "DivergenceEstimate", "estimate_divergence", "mc_divergence",
    "NumericalFailure", "RecoveryConfig", "RecoveryTrace",
    "exhaustive_bk_recover", "read_trace", "run_recovery", "write_trace",
    "MeasurementMatrix", "gen_matrix", "load_matrix", "measure", "save_matrix",
    "Signal", "gen_signal", "house_image", "load_csv", "load_pgm",
    "mse", "psnr", "save_csv", "save_pgm",
    "SmoothedDenoiser",
    "DenoiserLevel", "SETrace", "delta_star", "estimate_level",
    "greedy_tune", "kappa_mm_binary_sparse", "noise_sensitivity_bound",
    "se_fixed_point", "se_risk", "se_trace",
    "__version__",
]
