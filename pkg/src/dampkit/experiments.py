"""Declarative experiment specs: parse, validate, run, sweep.

A spec is one JSON document naming the signal, the matrix, the noise, and
a list of algorithm configurations, with every seed explicit.  Running it
fills a directory with signals, traces, predictions, and a manifest of
content hashes; sweeping repeats the runs over delta, noise, and seed axes
and emits one aggregate CSV row per cell.
"""

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import denoisers, state_evolution as se
from .recovery import BudgetExceeded, RecoveryConfig, run_recovery, write_trace
from .rng import substream
from .sensing import gen_matrix, measure, save_matrix
from .signals import Signal, gen_signal, load_pgm, save_csv, save_pgm

SCHEMA_VERSION = 1
DEFAULT_SWEEP_BUDGET = 512

_TOP_KEYS = {"schema_version", "name", "signal", "matrix", "noise",
             "algorithms", "se", "sweep", "budget"}
_SIGNAL_KEYS = {"class", "n", "params", "seed", "pgm"}
_MATRIX_KEYS = {"m", "delta", "seed", "normalize"}
_NOISE_KEYS = {"sigma_w", "seed"}
_ALGO_KEYS = {"name", "algorithm", "denoiser", "onsager", "max_iters",
              "stop_rel_change", "oversmooth_factor", "seed", "snapshot_iters"}
_SE_KEYS = {"enable", "mc_trials", "seed", "method", "iters"}
_SWEEP_KEYS = {"delta", "sigma_w", "seeds", "workers"}


class ValidationError(ValueError):
    """Carries every problem found, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def load_spec(path):
    with open(path) as fh:
        spec = json.load(fh)
    problems = validate_spec(spec)
    if problems:
        raise ValidationError(problems)
    return spec


def _check_keys(section, allowed, label, problems):
    if not isinstance(section, dict):
        problems.append(f"{label}: expected an object")
        return False
    unknown = sorted(set(section) - allowed)
    if unknown:
        problems.append(f"{label}: unknown keys {', '.join(unknown)}")
    return True


def validate_spec(spec):
    """Return a list of problems; empty means the spec is usable."""
    problems = []
    if not _check_keys(spec, _TOP_KEYS, "spec", problems):
        return problems
    if spec.get("schema_version") != SCHEMA_VERSION:
        problems.append(
            f"spec.schema_version: expected {SCHEMA_VERSION}, "
            f"got {spec.get('schema_version')!r}"
        )
    if not isinstance(spec.get("name"), str) or not spec.get("name"):
        problems.append("spec.name: required nonempty string")

    sig = spec.get("signal")
    if sig is None:
        problems.append("spec.signal: required")
    elif _check_keys(sig, _SIGNAL_KEYS, "signal", problems):
        if "pgm" in sig:
            extras = set(sig) - {"pgm"}
            if extras:
                problems.append("signal: 'pgm' excludes other signal keys")
        else:
            if sig.get("class") not in (
                "k_sparse_binary", "k_sparse_gaussian", "piecewise_constant",
                "lp_ball",
            ):
                problems.append(f"signal.class: unsupported {sig.get('class')!r}")
            if not isinstance(sig.get("n"), int) or sig.get("n", 0) < 1:
                problems.append("signal.n: required positive integer")
            if not isinstance(sig.get("seed"), int):
                problems.append("signal.seed: required integer")

    mat = spec.get("matrix")
    if mat is None:
        problems.append("spec.matrix: required")
    elif _check_keys(mat, _MATRIX_KEYS, "matrix", problems):
        if ("m" in mat) == ("delta" in mat):
            problems.append("matrix: give exactly one of 'm' or 'delta'")
        if "delta" in mat and not 0 < mat["delta"] <= 1:
            problems.append("matrix.delta: must lie in (0, 1]")
        if "m" in mat and (not isinstance(mat["m"], int) or mat["m"] < 1):
            problems.append("matrix.m: positive integer")
        if not isinstance(mat.get("seed"), int):
            problems.append("matrix.seed: required integer")

    noise = spec.get("noise")
    if noise is None:
        problems.append("spec.noise: required")
    elif _check_keys(noise, _NOISE_KEYS, "noise", problems):
        if not isinstance(noise.get("sigma_w"), (int, float)) or noise["sigma_w"] < 0:
            problems.append("noise.sigma_w: required nonnegative number")
        if noise.get("sigma_w", 0) > 0 and not isinstance(noise.get("seed"), int):
            problems.append("noise.seed: required integer when sigma_w > 0")

    algos = spec.get("algorithms")
    if not isinstance(algos, list) or not algos:
        problems.append("spec.algorithms: required nonempty list")
        algos = []
    names = set()
    for i, algo in enumerate(algos):
        label = f"algorithms[{i}]"
        if not _check_keys(algo, _ALGO_KEYS, label, problems):
            continue
        name = algo.get("name")
        if not isinstance(name, str) or not name:
            problems.append(f"{label}.name: required nonempty string")
        elif name in names:
            problems.append(f"{label}.name: duplicate {name!r}")
        else:
            names.add(name)
        if algo.get("algorithm") not in ("ist", "amp", "dit", "damp"):
            problems.append(f"{label}.algorithm: unsupported {algo.get('algorithm')!r}")
        if "denoiser" not in algo:
            problems.append(f"{label}.denoiser: required")
        else:
            try:
                denoisers.from_config(algo["denoiser"])
            except (ValueError, OSError) as exc:
                problems.append(f"{label}.denoiser: {exc}")
        if not isinstance(algo.get("seed"), int):
            problems.append(f"{label}.seed: required integer")

    if "se" in spec:
        _check_keys(spec["se"], _SE_KEYS, "se", problems)
    if "sweep" in spec and _check_keys(spec["sweep"], _SWEEP_KEYS, "sweep", problems):
        for axis in ("delta", "sigma_w", "seeds"):
            vals = spec["sweep"].get(axis)
            if vals is not None and (not isinstance(vals, list) or not vals):
                problems.append(f"sweep.{axis}: must be a nonempty list")
    if "budget" in spec and (not isinstance(spec["budget"], int) or spec["budget"] < 1):
        problems.append("spec.budget: positive integer")
    return problems


# ---------------------------------------------------------------------------
# building blocks shared by run and sweep
# ---------------------------------------------------------------------------

def _build_signal(spec):
    sig = spec["signal"]
    if "pgm" in sig:
        return load_pgm(sig["pgm"])
    return gen_signal(sig["class"], sig["n"], dict(sig.get("params", {})), sig["seed"])


def _matrix_m(spec, n, delta=None):
    mat = spec["matrix"]
    if delta is not None:
        return max(1, int(round(delta * n)))
    if "m" in mat:
        return mat["m"]
    return max(1, int(round(mat["delta"] * n)))


def _run_algorithm(algo, signal, A, meas, se_cfg):
    """One recovery run plus its optional prediction; returns a result dict."""
    handle = denoisers.from_config(algo["denoiser"])
    cfg = RecoveryConfig(
        algorithm=algo["algorithm"],
        denoiser=handle,
        onsager=algo.get("onsager"),
        max_iters=algo.get("max_iters", 30),
        stop_rel_change=algo.get("stop_rel_change", 0.0),
        oversmooth_factor=algo.get("oversmooth_factor", 2.0),
        seed=algo["seed"],
        grid=signal.grid,
        snapshot_iters=algo.get("snapshot_iters", ()),
    )
    trace = run_recovery(meas, A, cfg, x_true=signal)
    result = {"trace": trace, "config": cfg}
    if se_cfg and se_cfg.get("enable", True):
        # prediction uses a fresh handle so dithered denoisers stay aligned
        result["se"] = se.se_trace(
            denoisers.from_config(algo["denoiser"]), signal,
            delta=A.delta, sigma_w2=meas.sigma_w**2,
            iters=algo.get("max_iters", 30),
            mc_trials=se_cfg.get("mc_trials"),
            seed=se_cfg.get("seed", 0),
            method=se_cfg.get("method", "auto"),
        )
    return result


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, spec, files):
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "name": spec["name"],
        "created_at": datetime.now(timezone.utc).isoformat(),
        "spec": spec,
        "files": {name: _sha256(os.path.join(out_dir, name)) for name in sorted(files)},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def run_spec(spec, out_dir):
    """Execute every algorithm in the spec once and write the artifact dir."""
    os.makedirs(out_dir, exist_ok=True)
    signal = _build_signal(spec)
    A = gen_matrix(
        _matrix_m(spec, signal.n), signal.n, spec["matrix"]["seed"],
        normalize=spec["matrix"].get("normalize", "column"),
    )
    meas = measure(A, signal, spec["noise"]["sigma_w"], spec["noise"].get("seed", 0))

    files = []

    def emit(name, writer):
        writer(os.path.join(out_dir, name))
        files.append(name)

    emit("signal.csv", lambda p: save_csv(signal, p))
    if signal.grid is not None:
        emit("signal.pgm", lambda p: save_pgm(signal, p))
    emit("A.bin", lambda p: save_matrix(A, p))
    emit("y.csv", lambda p: save_csv(meas.y, p))

    results = {}
    for algo in spec["algorithms"]:
        result = _run_algorithm(algo, signal, A, meas, spec.get("se"))
        name = algo["name"]
        results[name] = result
        emit(f"{name}_trace.jsonl", lambda p, r=result: write_trace(r["trace"], p))
        final = Signal(result["trace"].final_x, grid=signal.grid)
        emit(f"{name}_x.csv", lambda p, s=final: save_csv(s, p))
        if signal.grid is not None:
            emit(f"{name}_x.pgm", lambda p, s=final: save_pgm(s, p))
        if "se" in result:
            emit(f"{name}_se.csv", lambda p, r=result: se.save_se_trace(r["se"], p))

    manifest = _write_manifest(out_dir, spec, files)
    return results, manifest


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _derived_seed(seed, index):
    return int(substream(seed, "sweep", index=index).integers(2**63))


def _sweep_cell(spec, signal, delta, sigma_w, seed):
    """All algorithms on one (delta, sigma_w, seed) cell; fresh matrix and noise.

    seed None means "use the spec's own matrix/noise seeds", so a sweep
    without a seeds axis reproduces the plain run cell for cell.
    """
    if seed is None:
        mat_seed = spec["matrix"]["seed"]
        noise_seed = spec["noise"].get("seed", 0)
    else:
        mat_seed = _derived_seed(seed, 0)
        noise_seed = _derived_seed(seed, 1)
    A = gen_matrix(
        _matrix_m(spec, signal.n, delta=delta), signal.n, mat_seed,
        normalize=spec["matrix"].get("normalize", "column"),
    )
    meas = measure(A, signal, sigma_w, noise_seed)
    out = {}
    for algo in spec["algorithms"]:
        result = _run_algorithm(algo, signal, A, meas, se_cfg=None)
        records = result["trace"].records
        out[algo["name"]] = (records[-1].mse, records[-1].psnr)
    return out


def sweep_spec(spec, out_dir, workers=None):
    """Run the delta x sigma_w x seed grid and write one aggregate CSV."""
    sweep = spec.get("sweep", {})
    deltas = sweep.get("delta") or [spec["matrix"].get("delta")]
    if deltas == [None]:
        raise ValidationError(["sweep needs matrix.delta or a sweep.delta axis"])
    sigma_ws = sweep.get("sigma_w") or [spec["noise"]["sigma_w"]]
    seeds = sweep.get("seeds") or [None]
    budget = spec.get("budget", DEFAULT_SWEEP_BUDGET)
    runs = len(deltas) * len(sigma_ws) * len(seeds) * len(spec["algorithms"])
    if runs > budget:
        raise BudgetExceeded(f"{runs} runs exceed the sweep budget of {budget}")

    os.makedirs(out_dir, exist_ok=True)
    signal = _build_signal(spec)
    cells = [(d, sw, s) for d in deltas for sw in sigma_ws for s in seeds]
    if workers is None:
        workers = sweep.get("workers") or min(4, len(cells))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outputs = list(pool.map(
            lambda cell: _sweep_cell(spec, signal, *cell), cells
        ))
    by_cell = dict(zip(cells, outputs))

    rows = []
    for d in deltas:
        for sw in sigma_ws:
            for algo in spec["algorithms"]:
                name = algo["name"]
                mses = [by_cell[(d, sw, s)][name][0] for s in seeds]
                psnrs = [by_cell[(d, sw, s)][name][1] for s in seeds]
                rows.append([
                    repr(float(d)), repr(float(sw)), name, len(seeds),
                    repr(float(np.mean(mses))), repr(float(np.std(mses))),
                    repr(float(np.mean(psnrs))), repr(float(np.std(psnrs))),
                ])

    path = os.path.join(out_dir, "sweep.csv")
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "delta", "sigma_w", "algorithm", "seeds",
            "mse_mean", "mse_std", "psnr_mean", "psnr_std",
        ])
        writer.writerows(rows)
    os.replace(tmp, path)
    manifest = _write_manifest(out_dir, spec, ["sweep.csv"])
    return rows, manifest
