"""
Deterministic synthetic data: environment maps, face-like reflectance maps
and a convex proxy surface parameterised over the UV square.
"""
from __future__ import annotations

import numpy as np

from .brdf import BrdfConfig, ReflectanceMaps
from .errors import DomainError
from .sh import EnvMap, equirect_grid

GEOMETRIES = ("hemisphere", "plane")
HEMISPHERE_RADIUS = 0.75


def uv_grid(resolution: int):
    """Texel centres mapped to x, y in [-1, 1]; row 0 is the top (+y).
    Column c mirrors to column ``resolution - 1 - c`` (x -> -x)."""
    s = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    x = np.broadcast_to(s[None, :], (resolution, resolution))
    y = np.broadcast_to(-s[:, None], (resolution, resolution))
    return x, y


def proxy_surface(resolution: int, geometry: str = "hemisphere"):
    """Surface points, unit normals and validity mask of the proxy.

    ``hemisphere`` is the unit sphere's upper half seen as a height field
    over the UV square, restricted to ``x^2 + y^2 < HEMISPHERE_RADIUS^2``
    so that normals stay within ~49 degrees of +Z.
    """
    if geometry not in GEOMETRIES:
        raise DomainError(f"unsupported geometry {geometry!r}; choose from {GEOMETRIES}")
    x, y = uv_grid(resolution)
    if geometry == "plane":
        pts = np.stack([x, y, np.zeros_like(x)], axis=-1)
        normals = np.broadcast_to([0.0, 0.0, 1.0], pts.shape).copy()
        valid = np.ones(x.shape, dtype=bool)
        return pts, normals, valid
    r2 = x * x + y * y
    valid = r2 < HEMISPHERE_RADIUS ** 2
    zz = np.sqrt(np.clip(1.0 - r2, 0.0, None))
    pts = np.stack([x, y, zz], axis=-1)
    normals = np.where(valid[..., None], pts / np.linalg.norm(pts, axis=-1, keepdims=True),
                       np.array([0.0, 0.0, 1.0]))
    return pts, normals, valid


def _bumps(rng, x, y, count, symmetric, width=(0.15, 0.45)):
    out = np.zeros_like(x)
    ax = np.abs(x) if symmetric else x
    for _ in range(count):
        cx, cy = rng.uniform(-0.6, 0.6, size=2)
        if symmetric:
            cx = abs(cx)
        s = rng.uniform(*width)
        out += rng.uniform(-1, 1) * np.exp(-((ax - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
    return out


def synthetic_reflectance_maps(resolution: int, cfg: BrdfConfig = BrdfConfig(),
                               seed: int = 0, symmetric: bool = True,
                               valid=None) -> ReflectanceMaps:
    """Smooth, strictly positive, face-like reflectance maps.

    Diffuse colour is a skin tone modulated by a few Gaussian bumps; each
    lobe weight is a positive field whose high-exponent lobes peak near the
    centre (the "nose"). With ``symmetric`` the maps are mirror symmetric
    in x.
    """
    rng = np.random.default_rng(seed)
    x, y = uv_grid(resolution)
    tone = np.array([0.62, 0.42, 0.32]) * rng.uniform(0.7, 1.2, size=3)
    mod = 1.0 + 0.25 * np.tanh(_bumps(rng, x, y, 4, symmetric))
    diffuse = tone * mod[..., None]
    weights = []
    centre = np.exp(-(x ** 2 + (y + 0.05) ** 2) / (2 * 0.3 ** 2))
    for i in range(cfg.k_bp):
        base = rng.uniform(0.08, 0.25)
        field = 1.0 + 0.4 * np.tanh(_bumps(rng, x, y, 3, symmetric))
        gain = (i / max(cfg.k_bp - 1, 1)) * rng.uniform(0.5, 1.5)
        weights.append(base * field * (0.4 + gain * centre))
    return ReflectanceMaps(diffuse, np.stack(weights, axis=-1), valid)


def synthetic_envmap(seed: int = 0, height: int = 64, n_lobes=None,
                     max_sharpness: float = 40.0, tint: float = 0.3) -> EnvMap:
    """Ambient term plus 3-10 von Mises-Fisher-like coloured lobes.

    ``tint`` controls how far lobe colours stray from grey (0 gives a
    monochrome environment).
    """
    rng = np.random.default_rng(seed)
    dirs, _ = equirect_grid(height)
    if n_lobes is None:
        n_lobes = int(rng.integers(3, 11))
    grey = lambda: 1.0 + tint * rng.uniform(-1, 1, size=3)  # noqa: E731
    img = np.broadcast_to(rng.uniform(0.05, 0.3) * grey(), dirs.shape).copy()
    for _ in range(n_lobes):
        mu = rng.normal(size=3)
        mu /= np.linalg.norm(mu)
        kappa = rng.uniform(2.0, max_sharpness)
        power = rng.uniform(0.2, 1.5)
        img += power * grey() * np.exp(kappa * (dirs @ mu - 1.0))[..., None]
    return EnvMap(img)
