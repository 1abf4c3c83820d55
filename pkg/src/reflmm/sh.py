"""
Real spherical harmonics, environment-map projection and frequency-space
shading of the reflectance model.

Convention: real, orthonormal, no Condon-Shortley phase; coefficient
(l, m) lives at index ``l*(l+1) + m``. With this convention
``Y_1,-1 = c*y``, ``Y_1,0 = c*z``, ``Y_1,1 = c*x`` with ``c = sqrt(3/4pi)``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .brdf import BrdfConfig, ReflectanceTexel, normalization_factor, reflect_vector
from .errors import DimensionError, DomainError, FormatError

DEFAULT_ORDER = 8
QUADRATURE_NODES = 256


def n_coeffs(order: int) -> int:
    return (order + 1) ** 2


def sh_index(l: int, m: int) -> int:
    return l * (l + 1) + m


def band_of_index(order: int) -> np.ndarray:
    """Band ``l`` of every coefficient index up to ``order``."""
    return np.repeat(np.arange(order + 1), 2 * np.arange(order + 1) + 1)


@functools.lru_cache(maxsize=None)
def _norm_table(order):
    # K_lm = sqrt((2l+1)/(4pi) * (l-m)!/(l+m)!), computed in log space
    from math import lgamma
    K = np.zeros((order + 1, order + 1))
    for l in range(order + 1):
        for m in range(l + 1):
            K[l, m] = np.sqrt((2 * l + 1) / (4 * np.pi)
                              * np.exp(lgamma(l - m + 1) - lgamma(l + m + 1)))
    return K


def sh_eval_basis(d, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Evaluate all real SH basis functions up to ``order`` at unit
    directions ``d`` of shape (..., 3); returns (..., (order+1)**2)."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    K = _norm_table(order)
    out = np.empty(d.shape[:-1] + (n_coeffs(order),))
    # (x + iy)^m = sin^m(theta) e^{i m phi}; the Legendre recurrence below
    # runs on P_l^m / sin^m(theta), which is a polynomial in z.
    xy = np.ones_like(x) + 0j
    pmm = np.ones_like(z)
    for m in range(order + 1):
        if m > 0:
            xy = xy * (x + 1j * y)
            pmm = pmm * (2 * m - 1)
        re, im = xy.real, xy.imag
        p_prev, p_cur = None, pmm
        for l in range(m, order + 1):
            if l == m + 1:
                p_prev, p_cur = p_cur, z * (2 * m + 1) * pmm
            elif l > m + 1:
                p_prev, p_cur = p_cur, ((2 * l - 1) * z * p_cur - (l + m - 1) * p_prev) / (l - m)
            if m == 0:
                out[..., sh_index(l, 0)] = K[l, 0] * p_cur
            else:
                scale = np.sqrt(2.0) * K[l, m] * p_cur
                out[..., sh_index(l, m)] = scale * re
                out[..., sh_index(l, -m)] = scale * im
    return out


@dataclass(frozen=True)
class ShVector:
    """Per-channel SH lighting coefficients, ``coeffs`` of shape (3, (L+1)^2)."""

    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim == 1:
            c = c.reshape(3, -1)
        if c.shape != (3, n_coeffs(self.order)):
            raise DimensionError(
                f"expected (3, {n_coeffs(self.order)}) coefficients, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    def scaled(self, s) -> "ShVector":
        s = np.asarray(s, dtype=np.float64)
        return ShVector(self.order, self.coeffs * (s[:, None] if s.ndim else s))

    def save(self, path) -> None:
        lines = [f"SH {self.order} 3"]
        lines += [" ".join(repr(float(v)) for v in row) for row in self.coeffs]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ShVector":
        lines = Path(path).read_text().split("\n")
        head = lines[0].split()
        if len(head) != 3 or head[0] != "SH":
            raise FormatError(f"{path}: not an SH coefficient file")
        order, channels = int(head[1]), int(head[2])
        try:
            rows = [[float(t) for t in ln.split()] for ln in lines[1:1 + channels]]
            return cls(order, np.array(rows))
        except (ValueError, DimensionError) as exc:
            raise FormatError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class EnvMap:
    """Equirectangular environment map. Row r covers polar angle
    ``(r+0.5)*pi/H`` measured from +Z; column c covers azimuth
    ``(c+0.5)*2pi/W`` measured from +X towards +Y."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[1] != 2 * px.shape[0]:
            raise DimensionError(f"environment map must be H x 2H x 3, got {px.shape}")
        if np.any(px < 0) or not np.all(np.isfinite(px)):
            raise DomainError("environment radiance must be finite and non-negative")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def directions(self):
        """Pixel-centre directions (H, W, 3) and solid angles (H, W)."""
        return equirect_grid(self.height)


@functools.lru_cache(maxsize=16)
def equirect_grid(height: int):
    width = 2 * height
    theta = (np.arange(height) + 0.5) * np.pi / height
    phi = (np.arange(width) + 0.5) * 2 * np.pi / width
    st = np.sin(theta)[:, None]
    dirs = np.stack([st * np.cos(phi)[None], st * np.sin(phi)[None],
                     np.broadcast_to(np.cos(theta)[:, None], (height, width))], axis=-1)
    dw = np.broadcast_to(st * (np.pi / height) * (2 * np.pi / width), (height, width)).copy()
    dirs.setflags(write=False)
    dw.setflags(write=False)
    return dirs, dw


@functools.lru_cache(maxsize=8)
def _equirect_basis(height, order):
    dirs, dw = equirect_grid(height)
    Y = sh_eval_basis(dirs, order) * dw[..., None]
    Y.setflags(write=False)
    return Y


def project_envmap(env: EnvMap, order: int = DEFAULT_ORDER) -> ShVector:
    """SH coefficients by solid-angle weighted Riemann sum over pixels."""
    Yw = _equirect_basis(env.height, order).reshape(-1, n_coeffs(order))
    return ShVector(order, env.pixels.reshape(-1, 3).T @ Yw)


def _gauss_legendre_01(n=QUADRATURE_NODES):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _legendre_all(order, t):
    # (order+1, len(t)) table of P_l(t)
    P = np.zeros((order + 1,) + np.shape(t))
    P[0] = 1.0
    if order >= 1:
        P[1] = t
    for l in range(2, order + 1):
        P[l] = ((2 * l - 1) * t * P[l - 1] - (l - 1) * P[l - 2]) / l
    return P


def lambert_zonal(order: int = DEFAULT_ORDER) -> np.ndarray:
    """Per-band convolution weights A_l of the clamped cosine.

    The zonal projection is ``2pi * int_0^1 t P_l(t) dt`` once the
    ``sqrt(4pi/(2l+1))`` factor meets the ``Y_l0`` normalisation; the
    integrand vanishes for t < 0 so the quadrature runs on [0, 1].
    """
    if order < 0:
        raise DomainError("order must be non-negative")
    t, w = _gauss_legendre_01()
    return 2 * np.pi * (_legendre_all(order, t) * (t * w)).sum(axis=1)


def phong_zonal(p: float, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Per-band convolution weights B_l of the normalised lobe
    ``f(p) cos^p(theta/2)`` centred on the reflection vector.

    Substituting ``u = cos(theta/2)`` (so ``cos(theta) = 2u^2 - 1`` and
    ``d cos(theta) = 4u du``) keeps the integrand smooth for any p.
    """
    f = normalization_factor(p)
    u, w = _gauss_legendre_01()
    t = 2 * u * u - 1
    return 2 * np.pi * f * (_legendre_all(order, t) * (u ** p * 4 * u * w)).sum(axis=1)


@dataclass(frozen=True)
class ZonalTable:
    order: int
    lambert: np.ndarray
    phong: np.ndarray

    def expanded(self):
        """Per-coefficient weights: lambert (n,), phong (k_bp, n)."""
        bands = band_of_index(self.order)
        return self.lambert[bands], self.phong[:, bands]


@functools.lru_cache(maxsize=32)
def _zonal_cached(exponents, order):
    lam = lambert_zonal(order)
    ph = np.stack([phong_zonal(p, order) for p in exponents])
    lam.setflags(write=False)
    ph.setflags(write=False)
    return ZonalTable(order, lam, ph)


def zonal_table(cfg: BrdfConfig, order: int = DEFAULT_ORDER) -> ZonalTable:
    return _zonal_cached(tuple(cfg.exponents), int(order))


def shade_env(texel: ReflectanceTexel, cfg: BrdfConfig, light: ShVector,
              zt: ZonalTable, n, v) -> np.ndarray:
    """Diffuse plus specular shading under SH lighting; broadcasts over
    leading axes of ``n``, ``v`` and the texel arrays. Returns (..., 3)."""
    if light.order != zt.order:
        raise DimensionError(f"light order {light.order} != zonal order {zt.order}")
    if zt.phong.shape[0] != cfg.k_bp:
        raise DimensionError("zonal table was built for a different lobe count")
    r = reflect_vector(n, v)
    lam, ph = zt.expanded()
    Yn = sh_eval_basis(n, zt.order)
    Yr = sh_eval_basis(r, zt.order)
    irr = (Yn * lam) @ light.coeffs.T                                 # (..., 3)
    lobes = np.einsum("...j,kj,cj->...kc", Yr, ph, light.coeffs)     # (..., k, 3)
    spec = np.einsum("...k,...kc->...c", texel.weights, lobes)
    return texel.diffuse / np.pi * irr + spec
