"""
Pointwise reflectance math: the Lambertian + Blinn-Phong-mixture BRDF,
directional shading and the display/linear intensity mapping.

Every function broadcasts over leading axes, so a direction may be a single
``(3,)`` vector or a whole ``(H, W, 3)`` image of directions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (BackFacingError, DegenerateDirectionError, DimensionError,
                     DomainError, GrazingError)

EPS_GRAZING = 1e-4
DISPLAY_GAMMA = 1.2
DEFAULT_EXPONENTS = (1.0, 8.0, 64.0)


@dataclass(frozen=True)
class BrdfConfig:
    """Predefined specular exponents shared by every surface point."""

    exponents: tuple = DEFAULT_EXPONENTS

    def __post_init__(self):
        exps = tuple(float(p) for p in self.exponents)
        if len(exps) < 1:
            raise DomainError("at least one Blinn-Phong lobe is required")
        if any(not np.isfinite(p) or p <= 0 for p in exps):
            raise DomainError(f"exponents must be positive, got {exps}")
        if any(b <= a for a, b in zip(exps, exps[1:])):
            raise DomainError(f"exponents must be strictly increasing, got {exps}")
        object.__setattr__(self, "exponents", exps)

    @property
    def k_bp(self) -> int:
        return len(self.exponents)

    @property
    def factors(self) -> np.ndarray:
        return np.array([normalization_factor(p) for p in self.exponents])

    @classmethod
    def parse(cls, text: str) -> "BrdfConfig":
        """Build from a comma separated list such as ``"1,8,64"``."""
        try:
            return cls(tuple(float(t) for t in text.split(",") if t.strip()))
        except ValueError as exc:
            raise DomainError(f"bad exponent list {text!r}: {exc}") from None


@dataclass
class ReflectanceTexel:
    """Diffuse RGB colour plus one weight per Blinn-Phong lobe."""

    diffuse: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.diffuse = np.asarray(self.diffuse, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.diffuse.shape[-1] != 3:
            raise DimensionError("diffuse colour must have 3 channels")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.diffuse, self.weights], axis=-1)

    @classmethod
    def from_vector(cls, vec) -> "ReflectanceTexel":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[..., :3], vec[..., 3:])


@dataclass
class ReflectanceMaps:
    """UV-space reflectance: ``diffuse`` is (H, W, 3), ``weights`` is
    (H, W, k_bp) and ``valid`` marks texels whose parameters were estimated."""

    diffuse: np.ndarray
    weights: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.diffuse = np.asarray(self.diffuse, dtype=np.float32)
        self.weights = np.asarray(self.weights, dtype=np.float32)
        if self.weights.ndim == 2:
            self.weights = self.weights[..., None]
        h, w = self.diffuse.shape[:2]
        if self.valid is None:
            self.valid = np.ones((h, w), dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if (self.diffuse.shape != (h, w, 3) or self.weights.shape[:2] != (h, w)
                or self.valid.shape != (h, w)):
            raise DimensionError("reflectance maps must share H x W dimensions")

    @property
    def height(self) -> int:
        return self.diffuse.shape[0]

    @property
    def width(self) -> int:
        return self.diffuse.shape[1]

    @property
    def k_bp(self) -> int:
        return self.weights.shape[2]

    def params(self) -> np.ndarray:
        """Stacked (H, W, 3 + k_bp) parameter image."""
        return np.concatenate([self.diffuse, self.weights], axis=-1)

    @classmethod
    def from_params(cls, params, valid=None) -> "ReflectanceMaps":
        params = np.asarray(params)
        return cls(params[..., :3], params[..., 3:], valid)

    def flipped(self) -> "ReflectanceMaps":
        """Horizontally mirrored copy."""
        return ReflectanceMaps(self.diffuse[:, ::-1], self.weights[:, ::-1],
                               self.valid[:, ::-1])

    def fill_invalid(self) -> "ReflectanceMaps":
        """Replace invalid texels with the mean over valid ones."""
        params = self.params().astype(np.float64)
        if self.valid.any() and not self.valid.all():
            params[~self.valid] = params[self.valid].mean(axis=0)
        return ReflectanceMaps.from_params(params, self.valid.copy())


def normalization_factor(p) -> float | np.ndarray:
    """Energy normalisation of a Blinn-Phong lobe with exponent ``p``.

    >>> round(normalization_factor(8.0), 5)
    0.41072
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(~(p > 0)):
        raise DomainError(f"specular exponent must be positive, got {p}")
    out = (p + 2.0) / (4.0 * np.pi * (2.0 - 2.0 ** (-p / 2.0)))
    return float(out) if out.ndim == 0 else out


def clamped_dot(a, b) -> np.ndarray:
    return np.maximum(0.0, np.sum(np.asarray(a) * np.asarray(b), axis=-1))


def _safe_normalize(x, tiny=1e-12):
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    ok = norm > tiny
    return np.where(ok, x / np.where(ok, norm, 1.0), 0.0), ok[..., 0]


def half_vector(l, v) -> np.ndarray:
    h, ok = _safe_normalize(np.asarray(l, float) + np.asarray(v, float))
    if not np.all(ok):
        raise DegenerateDirectionError("light and view directions are antiparallel")
    return h


def reflect_vector(n, v) -> np.ndarray:
    """Mirror ``v`` about ``n``; both point away from the surface."""
    n = np.asarray(n, float)
    v = np.asarray(v, float)
    ndv = np.sum(n * v, axis=-1, keepdims=True)
    if np.any(ndv <= 0):
        raise BackFacingError("view direction is below the surface")
    r, _ = _safe_normalize(2.0 * ndv * n - v)
    return r


def _lobe_values(cfg: BrdfConfig, hn):
    # (..., k_bp) of f_i <h,n>^p_i
    exps = np.asarray(cfg.exponents)
    return cfg.factors * np.asarray(hn)[..., None] ** exps


def eval_brdf(texel: ReflectanceTexel, cfg: BrdfConfig, l, v, n) -> np.ndarray:
    """BRDF value per colour channel. Undefined at grazing incidence, where
    the lobe term divides by ``<l, n>``; shading code uses
    :func:`shade_directional` instead, in which the division cancels."""
    ln = clamped_dot(l, n)
    if np.any(ln <= EPS_GRAZING):
        raise GrazingError("<l,n> at or below the grazing threshold")
    hn = clamped_dot(half_vector(l, v), n)
    spec = np.sum(texel.weights * _lobe_values(cfg, hn), axis=-1) / ln
    return texel.diffuse / np.pi + spec[..., None]


def shade_directional(texel: ReflectanceTexel, cfg: BrdfConfig, E, l, v, n) -> np.ndarray:
    """Radiance reflected towards ``v`` from a directional light of
    irradiance ``E`` (scalar or RGB) arriving from ``l``."""
    l = np.asarray(l, float)
    n = np.asarray(n, float)
    ln = clamped_dot(l, n)
    h, _ = _safe_normalize(l + np.asarray(v, float))
    hn = clamped_dot(h, n)
    spec = np.sum(texel.weights * _lobe_values(cfg, hn), axis=-1)
    return np.asarray(E, float) * (texel.diffuse / np.pi * ln[..., None] + spec[..., None])


def display_to_linear(img) -> np.ndarray:
    img = np.asarray(img)
    if np.any(img < 0):
        raise DomainError("display values must be non-negative")
    return img ** DISPLAY_GAMMA


def linear_to_display(img) -> np.ndarray:
    img = np.asarray(img)
    if np.any(img < 0):
        raise DomainError("linear values must be non-negative")
    return img ** (1.0 / DISPLAY_GAMMA)


def olat_difference(flash, roomlit) -> np.ndarray:
    """Remove room light from a flash image; both inputs in display space,
    result in linear space and clamped at zero."""
    flash = np.asarray(flash, dtype=np.float64)
    roomlit = np.asarray(roomlit, dtype=np.float64)
    if flash.shape != roomlit.shape:
        raise DimensionError(f"shape mismatch {flash.shape} vs {roomlit.shape}")
    return np.maximum(display_to_linear(flash) - display_to_linear(roomlit), 0.0)
