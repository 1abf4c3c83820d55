"""PCA model of real-world environment lighting in normalised SH space."""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DarkEnvironmentError, DimensionError, DomainError, FormatError
from .sh import DEFAULT_ORDER, EnvMap, ShVector, n_coeffs, project_envmap

EPS_LIGHT = 1e-6
DEFAULT_ROTATIONS = 8
DEFAULT_BASES = 80
MAGIC = b"MFLM"
VERSION = 1


@dataclass
class LightingPcaModel:
    """``mean`` is (3n,), channel-major; ``bases`` is (3n, N_L) with
    orthonormal columns; ``sigmas`` are the per-basis standard deviations."""

    order: int
    mean: np.ndarray
    bases: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float32)
        self.bases = np.asarray(self.bases, dtype=np.float32)
        self.sigmas = np.asarray(self.sigmas, dtype=np.float32)
        size = 3 * n_coeffs(self.order)
        if self.mean.shape != (size,) or self.bases.shape[0] != size \
                or self.bases.shape[1] != self.sigmas.shape[0]:
            raise DimensionError("inconsistent lighting model arrays")

    @property
    def n_bases(self) -> int:
        return self.bases.shape[1]


def rotate_equirect(env: EnvMap, k: int) -> EnvMap:
    """Azimuthal rotation by ``2*pi*k/W``: columns shift cyclically by k."""
    if not 0 <= k < env.width:
        raise DomainError(f"column shift {k} outside [0, {env.width})")
    return EnvMap(np.roll(env.pixels, k, axis=1))


def normalize_sh(sh: ShVector) -> ShVector:
    """Divide each channel by its own band-0 coefficient."""
    dc = sh.coeffs[:, 0]
    if np.any(dc <= EPS_LIGHT):
        raise DarkEnvironmentError(f"band-0 coefficients {dc} too small to normalise")
    return ShVector(sh.order, sh.coeffs / dc[:, None])


def pca(data: np.ndarray, n_bases: int):
    """Centred PCA of column samples ``data`` (D, N).

    Returns mean, unit-norm bases (D, n_bases), sigmas and the combination
    matrix ``V / s`` (N, n_bases) that maps centred samples onto each basis.
    Components with vanishing singular value get zero combination columns.
    """
    n = data.shape[1]
    mean = data.mean(axis=1)
    centred = data - mean[:, None]
    U, s, Vt = np.linalg.svd(centred, full_matrices=False)
    U, s, Vt = U[:, :n_bases], s[:n_bases], Vt[:n_bases]
    U[~np.any(centred, axis=1)] = 0.0
    tol = max(data.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    live = s > tol
    comb = np.zeros((n, n_bases))
    comb[:, live] = Vt[live].T / s[live]
    sigmas = np.where(live, s, 0.0) / np.sqrt(max(n - 1, 1))
    return mean, U, sigmas, comb


def augmented_coefficients(envs, rotations=DEFAULT_ROTATIONS, order=DEFAULT_ORDER):
    """Normalised SH vectors (3n, len(envs) * rotations) of every env under
    ``rotations`` evenly spaced azimuthal shifts."""
    cols = []
    for env in envs:
        for r in range(rotations):
            rot = rotate_equirect(env, (r * env.width) // rotations)
            cols.append(normalize_sh(project_envmap(rot, order)).flat())
    return np.stack(cols, axis=1)


def build_lighting_pca(envs, rotations: int = DEFAULT_ROTATIONS, n_bases=None,
                       order: int = DEFAULT_ORDER) -> LightingPcaModel:
    data = augmented_coefficients(envs, rotations, order)
    n = data.shape[1]
    if n < 2:
        raise DomainError("need at least two environments after augmentation")
    if n_bases is None:
        n_bases = min(DEFAULT_BASES, n - 1)
    if not 1 <= n_bases <= n - 1:
        raise DomainError(f"n_bases must be in [1, {n - 1}], got {n_bases}")
    mean, U, sigmas, _ = pca(data, n_bases)
    return LightingPcaModel(order, mean, U, sigmas)


def decode_lighting(model: LightingPcaModel, gamma, z) -> ShVector:
    gamma = np.asarray(gamma, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if gamma.shape != (model.n_bases,):
        raise DimensionError(f"gamma must have length {model.n_bases}")
    if z.shape != (3,) or np.any(z <= 0):
        raise DomainError("z must be three positive scales")
    flat = model.mean.astype(np.float64) + model.bases.astype(np.float64) @ gamma
    return ShVector(model.order, flat.reshape(3, -1) * z[:, None])


def project_lighting(model: LightingPcaModel, sh: ShVector):
    """PCA coefficients and band-0 scales that reproduce ``sh`` as closely
    as the model allows."""
    z = sh.coeffs[:, 0].copy()
    flat = normalize_sh(sh).flat() - model.mean.astype(np.float64)
    return model.bases.astype(np.float64).T @ flat, z


def save_lighting_model(model: LightingPcaModel, path) -> None:
    body = MAGIC + struct.pack("<III", VERSION, model.order, model.n_bases)
    body += model.mean.astype("<f4").tobytes()
    body += np.asfortranarray(model.bases).astype("<f4").tobytes(order="F")
    body += model.sigmas.astype("<f4").tobytes()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_lighting_model(path) -> LightingPcaModel:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an MFLM file")
    version, order, nb = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    size = 3 * n_coeffs(order)
    expected = 16 + 4 * (size + size * nb + nb) + 4
    if len(data) != expected:
        raise FormatError(f"{path}: truncated or oversized ({len(data)} of {expected} bytes)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"{path}: CRC mismatch")
    arr = np.frombuffer(body, dtype="<f4", offset=16)
    mean = arr[:size]
    bases = arr[size:size + size * nb].reshape((size, nb), order="F")
    sigmas = arr[size + size * nb:]
    return LightingPcaModel(order, mean.copy(), np.ascontiguousarray(bases), sigmas.copy())
