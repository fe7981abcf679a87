"""Config-driven Monte Carlo harness: paired-trial SNR sweeps comparing
SS-MUSIC on the intact array, the failed array, and the two repair
networks, with the coarray CRB alongside.

Seed discipline: trial q at SNR s draws its scene and noise from the
substream (master, "scene", s, q), which no method identifier enters, so
every method sees the identical realization and the comparison is paired
by construction. Trials that raise numeric errors are excluded from the
MSE and folded into the res_fail_rate column; per-trial details stay in
the TrialRecord list.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .coarray import redundancy_average, spatial_smoothing
from .geometry import ArrayGeometry, mra_lookup
from .neural import (
    DATA_DRIVEN,
    HYBRID,
    MlpModel,
    ScenePolicy,
    generate_dataset,
    build_model,
    predict_covariance,
    train,
)
from .signals import (
    draw_angles,
    inject_failures,
    sample_covariance,
    scene_from_snr,
    simulate_snapshots,
    stream_rng,
)
from .spectral import crb, music_spectrum, pick_peaks

__all__ = [
    "METHOD_NONE",
    "METHOD_FAILED",
    "METHOD_HYBRID",
    "METHOD_DATA_DRIVEN",
    "METHOD_CRB",
    "ExperimentConfig",
    "TrialRecord",
    "SweepResult",
    "preset",
    "run_trial",
    "run_sweep",
    "emit_spectrum",
    "results_csv",
    "records_csv",
    "spectrum_csv",
    "run_manifest",
    "training_policy",
    "train_variant",
]

METHOD_NONE = "none"
METHOD_FAILED = "failed-baseline"
METHOD_HYBRID = "hybrid"
METHOD_DATA_DRIVEN = "data-driven"
METHOD_CRB = "crb"

_DNN_METHODS = {METHOD_HYBRID: HYBRID, METHOD_DATA_DRIVEN: DATA_DRIVEN}


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one benchmark run (generation, training, sweep)."""

    positions: tuple[int, ...] | None = None
    m: int = 10
    k: int = 9
    angle_min: float = 10.0
    angle_max: float = 70.0
    min_gap: float = 5.0
    n_snapshots: int = 200
    train_snr_min: float = -10.0
    train_snr_max: float = 10.0
    test_snrs_db: tuple[float, ...] = tuple(float(s) for s in range(-20, 22, 2))
    q_trials: int = 1000
    train_max_failures: int = 2
    train_include_no_failure: bool = False
    test_failures: tuple[int, ...] = (1, 5)
    methods: tuple[str, ...] = (
        METHOD_NONE, METHOD_FAILED, METHOD_HYBRID, METHOD_DATA_DRIVEN, METHOD_CRB,
    )
    grid_step: float = 0.05
    n_train_samples: int = 300_000
    epochs: int = 150
    batch_size: int = 256
    learning_rate: float = 1e-3
    master_seed: int = 20230
    rng_algorithm: str = "PCG64"
    workers: int = 1

    def __post_init__(self):
        if self.positions is not None:
            object.__setattr__(self, "positions", tuple(int(p) for p in self.positions))
        object.__setattr__(self, "test_snrs_db", tuple(float(s) for s in self.test_snrs_db))
        object.__setattr__(self, "test_failures", tuple(int(i) for i in self.test_failures))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.test_snrs_db:
            raise ValueError("test SNR grid must be non-empty")
        if self.q_trials < 1:
            raise ValueError("need at least one trial per SNR point")
        if self.rng_algorithm != "PCG64":
            raise ValueError("only the PCG64 generator is supported")
        unknown = set(self.methods) - {
            METHOD_NONE, METHOD_FAILED, METHOD_HYBRID, METHOD_DATA_DRIVEN, METHOD_CRB,
        }
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    def geometry(self) -> ArrayGeometry:
        if self.positions is not None:
            return ArrayGeometry(self.positions)
        return mra_lookup(self.m)

    @property
    def estimation_methods(self) -> tuple[str, ...]:
        return tuple(m for m in self.methods if m != METHOD_CRB)

    @property
    def wants_crb(self) -> bool:
        return METHOD_CRB in self.methods

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        data = json.loads(text)
        for key in ("positions", "test_snrs_db", "test_failures", "methods"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)


def preset(name: str, **overrides) -> ExperimentConfig:
    """Named configurations: ``paper`` (full-scale protocol, failures at
    sensors 1 and 5), ``paper-alt`` (failures at 1 and 4), and ``desk``
    (scaled-down run that finishes on a laptop)."""
    if name == "paper":
        base = {}
    elif name == "paper-alt":
        base = {"test_failures": (1, 4)}
    elif name == "desk":
        base = {
            "m": 5,
            "k": 3,
            "q_trials": 300,
            "test_snrs_db": (-10.0, -4.0, 0.0, 4.0, 10.0),
            "test_failures": (1, 3),
            "n_train_samples": 20_000,
        }
    else:
        raise ValueError(f"unknown preset {name!r} (use paper, paper-alt, or desk)")
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass
class TrialRecord:
    """One method's estimate on one Monte Carlo trial."""

    trial: int
    snr_db: float
    method: str
    estimated_deg: tuple[float, ...]
    true_deg: tuple[float, ...]
    squared_errors: tuple[float, ...]
    resolution_failure: bool
    wall_seconds: float
    error: str | None = None


def _trial_scene(config: ExperimentConfig, geom: ArrayGeometry, snr_db: float, trial: int):
    rng = stream_rng(config.master_seed, "scene", float(snr_db), trial)
    angles = draw_angles(config.k, config.angle_min, config.angle_max,
                         config.min_gap, rng)
    scene = scene_from_snr(angles, snr_db)
    y = simulate_snapshots(geom, scene, config.n_snapshots, rng)
    return scene, sample_covariance(y)


def _music_input(config: ExperimentConfig, geom: ArrayGeometry, method: str,
                 r_full, models: dict[str, MlpModel] | None):
    """Covariance each method hands to MUSIC (repaired, damaged, or intact)."""
    failures = frozenset(config.test_failures)
    if method == METHOD_NONE:
        return spatial_smoothing(redundancy_average(r_full, geom))
    if method == METHOD_FAILED:
        r_damaged = inject_failures(r_full, failures)
        return spatial_smoothing(
            redundancy_average(r_damaged, geom.with_failures(failures))
        )
    if method in _DNN_METHODS:
        if not models or method not in models:
            raise ValueError(f"method {method!r} needs a trained model")
        r_damaged = inject_failures(r_full, failures)
        if method == METHOD_HYBRID:
            r_in = spatial_smoothing(
                redundancy_average(r_damaged, geom.with_failures(failures))
            )
        else:
            r_in = r_damaged
        return predict_covariance(models[method], r_in)
    raise ValueError(f"unknown estimation method {method!r}")


def _estimate(config: ExperimentConfig, geom: ArrayGeometry, method: str,
              r_full, models: dict[str, MlpModel] | None):
    r_music = _music_input(config, geom, method, r_full, models)
    spectrum = music_spectrum(r_music, config.k, grid_step=config.grid_step)
    return pick_peaks(spectrum, config.k)


def run_trial(config: ExperimentConfig, method: str, snr_db: float, trial: int,
              models: dict[str, MlpModel] | None = None) -> TrialRecord:
    """Runs one full pipeline trial; deterministic in (master_seed, snr, trial)."""
    geom = config.geometry()
    scene, r_full = _trial_scene(config, geom, snr_db, trial)
    return _record_estimate(config, geom, method, snr_db, trial, scene, r_full, models)


def _record_estimate(config, geom, method, snr_db, trial, scene, r_full, models) -> TrialRecord:
    truths = np.asarray(scene.angles_deg)
    tic = time.perf_counter()
    try:
        peaks = _estimate(config, geom, method, r_full, models)
        wall = time.perf_counter() - tic
        errs = np.sort(peaks.angles_deg) - truths
        return TrialRecord(
            trial=trial,
            snr_db=snr_db,
            method=method,
            estimated_deg=tuple(float(a) for a in peaks.angles_deg),
            true_deg=tuple(float(a) for a in truths),
            squared_errors=tuple(float(e * e) for e in errs),
            resolution_failure=bool(peaks.resolution_failure),
            wall_seconds=wall,
        )
    except (ValueError, np.linalg.LinAlgError) as exc:
        wall = time.perf_counter() - tic
        nan = (float("nan"),) * config.k
        return TrialRecord(
            trial=trial,
            snr_db=snr_db,
            method=method,
            estimated_deg=nan,
            true_deg=tuple(float(a) for a in truths),
            squared_errors=nan,
            resolution_failure=True,
            wall_seconds=wall,
            error=f"{type(exc).__name__}: {exc}",
        )


def _run_item(config: ExperimentConfig, geom: ArrayGeometry, snr_db: float,
              trial: int, models) -> tuple[list[TrialRecord], float]:
    scene, r_full = _trial_scene(config, geom, snr_db, trial)
    records = [
        _record_estimate(config, geom, method, snr_db, trial, scene, r_full, models)
        for method in config.estimation_methods
    ]
    crb_diag = float("nan")
    if config.wants_crb:
        crb_diag = crb(geom, scene, config.n_snapshots).mean_diag_deg2
    return records, crb_diag


_WORKER_CTX: dict = {}


def _init_worker(config: ExperimentConfig, models) -> None:
    _WORKER_CTX["config"] = config
    _WORKER_CTX["geom"] = config.geometry()
    _WORKER_CTX["models"] = models


def _pool_item(args) -> tuple[tuple[int, int], list[TrialRecord], float]:
    snr_idx, trial = args
    config = _WORKER_CTX["config"]
    snr_db = config.test_snrs_db[snr_idx]
    records, crb_diag = _run_item(config, _WORKER_CTX["geom"], snr_db, trial,
                                  _WORKER_CTX["models"])
    return (snr_idx, trial), records, crb_diag


@dataclass
class SweepResult:
    """Aggregated sweep table plus every underlying trial record."""

    rows: list[dict]
    records: list[TrialRecord] = field(default_factory=list)


def run_sweep(config: ExperimentConfig, models: dict[str, MlpModel] | None = None,
              workers: int | None = None) -> SweepResult:
    """Monte Carlo sweep over the test SNR grid.

    One work item per (SNR, trial) simulates the scene once and runs all
    configured methods on it. Items are reduced in (SNR, trial) order, so
    the aggregated table does not depend on the worker count.
    """
    needed = set(config.estimation_methods) & set(_DNN_METHODS)
    missing = needed - set(models or {})
    if missing:
        raise ValueError(f"missing trained models for methods {sorted(missing)}")
    geom = config.geometry()
    workers = config.workers if workers is None else workers
    items = [
        (snr_idx, trial)
        for snr_idx in range(len(config.test_snrs_db))
        for trial in range(config.q_trials)
    ]
    results: dict[tuple[int, int], tuple[list[TrialRecord], float]] = {}
    if workers <= 1:
        for snr_idx, trial in items:
            snr_db = config.test_snrs_db[snr_idx]
            results[(snr_idx, trial)] = _run_item(config, geom, snr_db, trial, models)
    else:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(config, models)
        ) as pool:
            chunk = max(1, len(items) // (8 * workers))
            for key, records, crb_diag in pool.map(_pool_item, items, chunksize=chunk):
                results[key] = (records, crb_diag)

    rows: list[dict] = []
    all_records: list[TrialRecord] = []
    for snr_idx, snr_db in enumerate(config.test_snrs_db):
        trial_results = [results[(snr_idx, t)] for t in range(config.q_trials)]
        for records, _ in trial_results:
            all_records.extend(records)
        crb_vals = np.asarray([c for _, c in trial_results])
        crb_mean = float(np.mean(crb_vals)) if config.wants_crb else float("nan")
        for m_idx, method in enumerate(config.estimation_methods):
            recs = [records[m_idx] for records, _ in trial_results]
            ok = [r for r in recs if r.error is None]
            failed = sum(1 for r in recs if r.resolution_failure or r.error is not None)
            if ok:
                sq = np.asarray([r.squared_errors for r in ok])
                mse = float(np.mean(sq))
            else:
                mse = float("nan")
            rows.append({
                "method": method,
                "snr_db": snr_db,
                "mse_deg2": mse,
                "res_fail_rate": failed / config.q_trials,
                "crb_deg2": crb_mean,
                "q": len(ok),
            })
    return SweepResult(rows=rows, records=all_records)


def emit_spectrum(config: ExperimentConfig, snr_db: float, trial: int = 0,
                  models: dict[str, MlpModel] | None = None,
                  methods: tuple[str, ...] | None = None):
    """Pseudospectra of every method on one shared trial realization."""
    geom = config.geometry()
    methods = methods if methods is not None else config.estimation_methods
    scene, r_full = _trial_scene(config, geom, snr_db, trial)
    grid = None
    spectra: dict[str, np.ndarray] = {}
    for method in methods:
        r_music = _music_input(config, geom, method, r_full, models)
        spectrum = music_spectrum(r_music, config.k, grid_step=config.grid_step)
        grid = spectrum.grid
        spectra[method] = spectrum.values
    return grid, spectra, scene


# ---------------------------------------------------------------------------
# training orchestration
# ---------------------------------------------------------------------------

def training_policy(config: ExperimentConfig) -> ScenePolicy:
    return ScenePolicy(
        n_sources=config.k,
        angle_min=config.angle_min,
        angle_max=config.angle_max,
        min_gap=config.min_gap,
        snr_min=config.train_snr_min,
        snr_max=config.train_snr_max,
        n_snapshots=config.n_snapshots,
        max_failures=config.train_max_failures,
        include_no_failure=config.train_include_no_failure,
    )


def train_variant(config: ExperimentConfig, variant: str,
                  train_seed: int | None = None, dataset=None):
    """Generates the variant's dataset (unless given) and trains its model."""
    geom = config.geometry()
    if dataset is None:
        dataset = generate_dataset(
            variant, geom, training_policy(config), config.n_train_samples,
            seed=config.master_seed,
        )
    seed = config.master_seed if train_seed is None else train_seed
    model = build_model(variant, geom, seed=seed)
    history = train(
        model, dataset,
        epochs=config.epochs,
        batch_size=config.batch_size,
        split=0.8,
        seed=seed,
        lr=config.learning_rate,
    )
    return model, history


# ---------------------------------------------------------------------------
# serialization of results
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def results_csv(rows: list[dict]) -> str:
    out = io.StringIO()
    cols = ["method", "snr_db", "mse_deg2", "res_fail_rate", "crb_deg2", "q"]
    out.write(",".join(cols) + "\n")
    for row in rows:
        out.write(",".join(_fmt(row[c]) for c in cols) + "\n")
    return out.getvalue()


def records_csv(records: list[TrialRecord]) -> str:
    out = io.StringIO()
    out.write("method,snr_db,trial,res_fail,wall_seconds,error,"
              "true_deg,estimated_deg,squared_errors\n")
    for r in records:
        out.write(",".join([
            r.method,
            _fmt(r.snr_db),
            str(r.trial),
            str(int(r.resolution_failure)),
            _fmt(r.wall_seconds),
            (r.error or "").replace(",", ";"),
            ";".join(_fmt(v) for v in r.true_deg),
            ";".join(_fmt(v) for v in r.estimated_deg),
            ";".join(_fmt(v) for v in r.squared_errors),
        ]) + "\n")
    return out.getvalue()


def spectrum_csv(grid: np.ndarray, spectra: dict[str, np.ndarray]) -> str:
    out = io.StringIO()
    methods = list(spectra)
    out.write(",".join(["angle_deg"] + methods) + "\n")
    for i, angle in enumerate(grid):
        out.write(",".join([_fmt(float(angle))]
                           + [_fmt(float(spectra[m][i])) for m in methods]) + "\n")
    return out.getvalue()


def run_manifest(config: ExperimentConfig, outputs: dict[str, str],
                 extra: dict | None = None) -> str:
    import scipy

    manifest = {
        "package": "sparsedoa",
        "version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "rng_algorithm": config.rng_algorithm,
        "master_seed": config.master_seed,
        "config": dataclasses.asdict(config),
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    return json.dumps(manifest, indent=2, sort_keys=True)
