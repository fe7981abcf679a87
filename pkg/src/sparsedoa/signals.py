"""Snapshot simulation and covariance estimation for narrow-band sources.

The snapshot model is y(t) = A(theta) x(t) + n(t) with x(t) and n(t)
i.i.d. circularly-symmetric complex Gaussian. With unit source powers and
noise power 10**(-snr_db/10), the per-source SNR equals ``snr_db`` by
construction.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .geometry import ArrayGeometry

__all__ = [
    "SourceScene",
    "Covariance",
    "R_FULL",
    "R_FAILED",
    "R_SMOOTHED",
    "R_SMOOTHED_FAILED",
    "R_PREDICTED",
    "scene_from_snr",
    "draw_angles",
    "steering_matrix",
    "simulate_snapshots",
    "zero_failed_rows",
    "sample_covariance",
    "inject_failures",
    "analytic_covariance",
    "stream_seed",
    "stream_rng",
]

# Role tags carried by covariance matrices through the pipeline.
R_FULL = "full"
R_FAILED = "failed"
R_SMOOTHED = "smoothed"
R_SMOOTHED_FAILED = "smoothed-failed"
R_PREDICTED = "predicted"

HERMITIAN_RTOL = 1e-10


@dataclass(frozen=True)
class SourceScene:
    """Source angles (degrees), per-source powers, and noise power.

    Angles must be strictly increasing inside (-90, 90). An empty angle
    list describes a noise-only scene.
    """

    angles_deg: tuple[float, ...]
    powers: tuple[float, ...]
    noise_power: float

    def __post_init__(self):
        angles = tuple(float(a) for a in self.angles_deg)
        powers = tuple(float(p) for p in self.powers)
        if len(angles) != len(powers):
            raise ValueError("angles and powers must have equal length")
        if any(not -90.0 < a < 90.0 for a in angles):
            raise ValueError(f"angles must lie in (-90, 90), got {angles}")
        if any(b <= a for a, b in zip(angles, angles[1:])):
            raise ValueError("angles must be strictly increasing")
        if any(p < 0 for p in powers) or self.noise_power < 0:
            raise ValueError("powers must be non-negative")
        object.__setattr__(self, "angles_deg", angles)
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "noise_power", float(self.noise_power))

    @property
    def k(self) -> int:
        return len(self.angles_deg)


def scene_from_snr(angles_deg, snr_db: float) -> SourceScene:
    """Equal unit-power sources with noise power set by the per-source SNR."""
    angles = tuple(float(a) for a in angles_deg)
    return SourceScene(angles, (1.0,) * len(angles), 10.0 ** (-snr_db / 10.0))


def draw_angles(k: int, lo: float, hi: float, min_gap: float,
                rng: np.random.Generator) -> np.ndarray:
    """K sorted angles uniform over [lo, hi] with pairwise gaps >= min_gap."""
    span = hi - lo - (k - 1) * min_gap
    if span < 0:
        raise ValueError(
            f"cannot place {k} angles with gap {min_gap} inside [{lo}, {hi}]"
        )
    u = np.sort(rng.uniform(0.0, span, size=k))
    return lo + u + min_gap * np.arange(k)


@dataclass
class Covariance:
    """Complex covariance matrix with a pipeline role tag."""

    values: np.ndarray
    role: str = R_FULL

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError(f"covariance must be square, got {self.values.shape}")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def check_hermitian(self, rtol: float = HERMITIAN_RTOL) -> None:
        scale = np.linalg.norm(self.values)
        dev = np.linalg.norm(self.values - self.values.conj().T)
        if dev > rtol * max(scale, 1e-300):
            raise ValueError(f"matrix is not Hermitian (relative deviation {dev / scale:.3g})")


def cov_values(r) -> np.ndarray:
    """Accepts a Covariance or a bare array and returns the ndarray."""
    if isinstance(r, Covariance):
        return r.values
    return np.asarray(r, dtype=np.complex128)


def steering_matrix(geom, angles_deg, active_only: bool = False) -> np.ndarray:
    """Steering matrix with entries exp(j*pi*d_i*sin(theta_k)).

    ``geom`` may be an ArrayGeometry or a bare position array (in units of
    d0 = lambda/2). Failed sensors still produce rows unless
    ``active_only`` is set; failure handling lives in the covariance
    domain.
    """
    if isinstance(geom, ArrayGeometry):
        pos = geom.position_array(active_only=active_only)
    else:
        pos = np.asarray(geom, dtype=np.float64)
    theta = np.deg2rad(np.atleast_1d(np.asarray(angles_deg, dtype=np.float64)))
    return np.exp(1j * np.pi * np.outer(pos, np.sin(theta)))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_snapshots(geom: ArrayGeometry, scene: SourceScene, n_snapshots: int,
                       seed) -> np.ndarray:
    """Draws an M x N snapshot matrix from the unconditional signal model.

    Source waveforms are drawn first, then noise, so the realization is
    reproducible for a given seed or Generator. Failed sensors are NOT
    zeroed here; use zero_failed_rows or inject_failures downstream.
    """
    if n_snapshots < 1:
        raise ValueError("need at least one snapshot")
    rng = _as_rng(seed)
    m = geom.size
    a = steering_matrix(geom, scene.angles_deg)
    amp = np.sqrt(np.asarray(scene.powers) / 2.0)
    x = amp[:, None] * (
        rng.standard_normal((scene.k, n_snapshots))
        + 1j * rng.standard_normal((scene.k, n_snapshots))
    )
    noise = np.sqrt(scene.noise_power / 2.0) * (
        rng.standard_normal((m, n_snapshots))
        + 1j * rng.standard_normal((m, n_snapshots))
    )
    return a @ x + noise


def zero_failed_rows(y: np.ndarray, failed) -> np.ndarray:
    """Snapshot-domain failure injection: rows of failed sensors set to 0."""
    out = np.array(y, copy=True)
    idx = _failed_rows(out.shape[0], failed)
    out[idx, :] = 0.0
    return out


def sample_covariance(y: np.ndarray) -> Covariance:
    """Sample covariance (1/N) * Y Y^H of an M x N snapshot matrix."""
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim != 2 or y.shape[1] < 1:
        raise ValueError("snapshot matrix must be M x N with N >= 1")
    r = (y @ y.conj().T) / y.shape[1]
    return Covariance(r, role=R_FULL)


def inject_failures(r: Covariance, failed) -> Covariance:
    """Zeroes the rows and columns of failed sensors (2*M*M1 - M1^2 entries)."""
    values = np.array(cov_values(r), copy=True)
    idx = _failed_rows(values.shape[0], failed)
    values[idx, :] = 0.0
    values[:, idx] = 0.0
    return Covariance(values, role=R_FAILED)


def _failed_rows(m: int, failed) -> list[int]:
    idx = sorted(int(i) for i in failed)
    if any(i < 1 or i > m for i in idx):
        raise ValueError(f"failed indices {idx} outside 1..{m}")
    return [i - 1 for i in idx]


def analytic_covariance(geom: ArrayGeometry, scene: SourceScene) -> Covariance:
    """Exact covariance A diag(powers) A^H + noise_power * I (no sampling)."""
    m = geom.size
    r = scene.noise_power * np.eye(m, dtype=np.complex128)
    if scene.k:
        a = steering_matrix(geom, scene.angles_deg)
        r = r + (a * np.asarray(scene.powers)) @ a.conj().T
    return Covariance(r, role=R_FULL)


def _key_words(key) -> list[int]:
    if isinstance(key, (bool, np.bool_)):
        return [int(key)]
    if isinstance(key, (int, np.integer)):
        return [int(key) & 0xFFFFFFFF, (int(key) >> 32) & 0xFFFFFFFF]
    if isinstance(key, float):
        # Stable integer encoding; sweep keys are multiples of 1e-3 or coarser.
        return [int(round(key * 1000.0)) & 0xFFFFFFFF]
    if isinstance(key, str):
        return [zlib.crc32(key.encode("utf-8"))]
    raise TypeError(f"unsupported seed key type {type(key)!r}")


def stream_seed(master_seed: int, *keys) -> np.random.SeedSequence:
    """Named substream seed: deterministic in the master seed and keys.

    Keys may be ints, floats (millidegree/millidB resolution), or strings,
    so e.g. stream_seed(master, "scene", snr_db, trial) gives every method
    the same per-trial realization.
    """
    words = [int(master_seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        words.extend(_key_words(key))
    return np.random.SeedSequence(words)


def stream_rng(master_seed: int, *keys) -> np.random.Generator:
    """PCG64 generator over the named substream (see stream_seed)."""
    return np.random.Generator(np.random.PCG64(stream_seed(master_seed, *keys)))
