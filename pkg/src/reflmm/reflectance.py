"""
Linear morphable reflectance model over UV texels.

Parameter vector layout: the diffuse block ``(H, W, 3)`` flattened in C
order, followed by the lobe-weight block ``(H, W, k_bp)`` flattened the
same way. PCA runs on the diffuse block only; the specular bases reuse the
same linear combination of training samples, so one coefficient vector
drives both blocks while the diffuse bases stay orthonormal.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .brdf import BrdfConfig, ReflectanceMaps
from .errors import DimensionError, DomainError, FormatError
from .lighting import pca

DEFAULT_BASES = 80
MAGIC = b"MFRM"
VERSION = 1


@dataclass
class MorphableReflectanceModel:
    height: int
    width: int
    exponents: tuple
    mean: np.ndarray
    diffuse_bases: np.ndarray
    specular_bases: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        self.exponents = tuple(float(p) for p in self.exponents)
        self.mean = np.asarray(self.mean, dtype=np.float32)
        self.diffuse_bases = np.asarray(self.diffuse_bases, dtype=np.float32)
        self.specular_bases = np.asarray(self.specular_bases, dtype=np.float32)
        self.sigmas = np.asarray(self.sigmas, dtype=np.float32)
        v, k, n = self.n_texels, self.k_bp, self.sigmas.shape[0]
        if (self.mean.shape != ((3 + k) * v,) or self.diffuse_bases.shape != (3 * v, n)
                or self.specular_bases.shape != (k * v, n)):
            raise DimensionError("inconsistent morphable model arrays")

    @property
    def n_texels(self) -> int:
        return self.height * self.width

    @property
    def k_bp(self) -> int:
        return len(self.exponents)

    @property
    def n_bases(self) -> int:
        return self.sigmas.shape[0]

    @property
    def cfg(self) -> BrdfConfig:
        return BrdfConfig(self.exponents)

    def texel_arrays(self):
        """Float64 views keyed per texel: mean diffuse (V, 3), mean weights
        (V, k), diffuse bases (V, 3, N) and specular bases (V, k, N)."""
        v, k, n = self.n_texels, self.k_bp, self.n_bases
        mean = self.mean.astype(np.float64)
        return (mean[:3 * v].reshape(v, 3), mean[3 * v:].reshape(v, k),
                self.diffuse_bases.astype(np.float64).reshape(v, 3, n),
                self.specular_bases.astype(np.float64).reshape(v, k, n))


def maps_to_vector(maps: ReflectanceMaps) -> np.ndarray:
    return np.concatenate([maps.diffuse.astype(np.float64).reshape(-1),
                           maps.weights.astype(np.float64).reshape(-1)])


def vector_to_maps(vec, height, width, k_bp) -> ReflectanceMaps:
    v = height * width
    return ReflectanceMaps(vec[:3 * v].reshape(height, width, 3),
                           vec[3 * v:].reshape(height, width, k_bp))


def build_model(samples, n_bases=None, cfg: BrdfConfig = BrdfConfig()) -> MorphableReflectanceModel:
    """PCA on diffuse maps with the combination transferred to the weights.

    Texels that are not valid in every sample keep the sample mean and get
    zero basis rows.
    """
    samples = list(samples)
    n = len(samples)
    if n < 2:
        raise DomainError("need at least two training samples")
    h, w, k = samples[0].height, samples[0].width, samples[0].k_bp
    if any((s.height, s.width, s.k_bp) != (h, w, k) for s in samples):
        raise DimensionError("training samples differ in size or lobe count")
    if n_bases is None:
        n_bases = min(DEFAULT_BASES, n - 1)
    if not 1 <= n_bases <= n - 1:
        raise DomainError(f"n_bases must be in [1, {n - 1}], got {n_bases}")
    if cfg.k_bp != k:
        raise DimensionError(f"samples carry {k} lobe weights but cfg has {cfg.k_bp}")

    valid = np.logical_and.reduce([s.valid for s in samples]).reshape(-1)
    D = np.stack([s.diffuse.astype(np.float64).reshape(-1, 3) for s in samples], axis=-1)
    S = np.stack([s.weights.astype(np.float64).reshape(-1, k) for s in samples], axis=-1)
    d_mean = D.mean(axis=-1)
    s_mean = S.mean(axis=-1)
    D[~valid] = d_mean[~valid][..., None]
    S[~valid] = s_mean[~valid][..., None]

    mean_d, U, sigmas, comb = pca(D.reshape(-1, n), n_bases)
    Sflat = S.reshape(-1, n)
    mean_s = Sflat.mean(axis=1)
    spec = (Sflat - mean_s[:, None]) @ comb
    # the mean of identical fill values is not always bitwise equal to them
    U.reshape(-1, 3, n_bases)[~valid] = 0.0
    spec.reshape(-1, k, n_bases)[~valid] = 0.0
    return MorphableReflectanceModel(h, w, cfg.exponents, np.concatenate([mean_d, mean_s]),
                                     U, spec, sigmas)


def reconstruct(model: MorphableReflectanceModel, beta) -> ReflectanceMaps:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (model.n_bases,):
        raise DimensionError(f"beta must have length {model.n_bases}")
    v = model.n_texels
    vec = model.mean.astype(np.float64).copy()
    vec[:3 * v] += model.diffuse_bases.astype(np.float64) @ beta
    vec[3 * v:] += model.specular_bases.astype(np.float64) @ beta
    return vector_to_maps(vec, model.height, model.width, model.k_bp)


def project_coeffs(model: MorphableReflectanceModel, maps: ReflectanceMaps) -> np.ndarray:
    """Least-squares coefficients from the diffuse block alone."""
    if (maps.height, maps.width, maps.k_bp) != (model.height, model.width, model.k_bp):
        raise DimensionError("maps do not match the model dimensions")
    v = model.n_texels
    d = maps.diffuse.astype(np.float64).reshape(-1) - model.mean[:3 * v].astype(np.float64)
    return model.diffuse_bases.astype(np.float64).T @ d


def sample_model(model: MorphableReflectanceModel, seed: int = 0, scale: float = 1.0,
                 return_beta: bool = False):
    if not scale > 0:
        raise DomainError("scale must be positive")
    rng = np.random.default_rng(seed)
    beta = rng.standard_normal(model.n_bases) * scale * model.sigmas.astype(np.float64)
    maps = reconstruct(model, beta)
    return (maps, beta) if return_beta else maps


def save_model(model: MorphableReflectanceModel, path) -> None:
    body = MAGIC + struct.pack("<5I", VERSION, model.height, model.width,
                               model.k_bp, model.n_bases)
    body += np.asarray(model.exponents, dtype="<f8").tobytes()
    body += model.mean.astype("<f4").tobytes()
    body += model.diffuse_bases.astype("<f4").tobytes(order="F")
    body += model.specular_bases.astype("<f4").tobytes(order="F")
    body += model.sigmas.astype("<f4").tobytes()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_model(path) -> MorphableReflectanceModel:
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an MFRM file")
    version, h, w, k, nb = struct.unpack_from("<5I", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    v = h * w
    sizes = [(3 + k) * v, 3 * v * nb, k * v * nb, nb]
    head = 24 + 8 * k
    expected = head + 4 * sum(sizes) + 4
    if len(data) != expected:
        raise FormatError(f"{path}: truncated or oversized ({len(data)} of {expected} bytes)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"{path}: CRC mismatch")
    exps = tuple(np.frombuffer(body, dtype="<f8", count=k, offset=24).tolist())
    arr = np.frombuffer(body, dtype="<f4", offset=head)
    parts, off = [], 0
    for size in sizes:
        parts.append(arr[off:off + size])
        off += size
    mean, db, sb, sig = parts
    return MorphableReflectanceModel(
        h, w, exps, mean.copy(),
        np.ascontiguousarray(db.reshape((3 * v, nb), order="F")),
        np.ascontiguousarray(sb.reshape((k * v, nb), order="F")), sig.copy())
