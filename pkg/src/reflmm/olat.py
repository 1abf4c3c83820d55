"""
OLAT capture rigs, forward OLAT rendering and per-texel inverse rendering.

A frame (i, j) is the view-i image under flash j, unwrapped to UV space.
For every texel the shading is linear in its parameters
``(c_R, c_G, c_B, w_1..w_k)``::

    s_c = a * c_c + sum_k b_k * w_k,   a = E <l,n> / pi,   b_k = E f_k <h,n>^p_k

which the estimators below exploit directly.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .brdf import BrdfConfig, ReflectanceMaps, ReflectanceTexel, clamped_dot, shade_directional
from .errors import DimensionError, DomainError, FormatError, InsufficientObservationsError
from .imageio import read_mask_png, read_pfm, write_mask_png, write_pfm
from .nnls import nnls
from .optim import Adam, cosine_lr
from .synthetic import proxy_surface

log = logging.getLogger(__name__)

SHADOW_EPS = 1e-3
FLAG_OK, FLAG_INSUFFICIENT, FLAG_ILL_CONDITIONED, FLAG_OUTSIDE = 0, 1, 2, 3


@dataclass
class CaptureRig:
    """Per-texel geometry of a capture: ``views`` (nV, H, W, 3) and
    ``lights`` (nL, H, W, 3) point away from the surface; ``irradiance``
    holds one scalar E per flash."""

    normals: np.ndarray
    valid: np.ndarray
    views: np.ndarray
    lights: np.ndarray
    irradiance: np.ndarray

    def __post_init__(self):
        # directions are kept at float32 precision so the rig survives a PFM round trip
        self.normals = np.asarray(self.normals, np.float32).astype(np.float64)
        self.views = np.asarray(self.views, np.float32).astype(np.float64)
        self.lights = np.asarray(self.lights, np.float32).astype(np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        self.irradiance = np.broadcast_to(
            np.asarray(self.irradiance, np.float64), (self.lights.shape[0],)).copy()
        hw = self.valid.shape
        if (self.normals.shape != hw + (3,) or self.views.shape[1:] != hw + (3,)
                or self.lights.shape[1:] != hw + (3,)):
            raise DimensionError("rig maps must share H x W dimensions")

    @property
    def n_views(self) -> int:
        return self.views.shape[0]

    @property
    def n_lights(self) -> int:
        return self.lights.shape[0]

    @property
    def shape(self):
        return self.valid.shape

    def visible(self, i) -> np.ndarray:
        return self.valid & (np.sum(self.views[i] * self.normals, axis=-1) > SHADOW_EPS)

    def scaled(self, factor) -> "CaptureRig":
        return CaptureRig(self.normals, self.valid, self.views, self.lights,
                          self.irradiance * factor)


@dataclass
class OlatFrame:
    view: int
    light: int
    image: np.ndarray
    shadow: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.shadow = np.asarray(self.shadow, dtype=bool)


@dataclass
class EstimationSettings:
    w_reg: float = 100.0
    iterations: int = 2000
    step_size: float = 5e-3
    flip: float = 0.5
    seed: int = 0
    min_observations: int = 6
    lr_final_fraction: float = 0.01
    max_condition: float = 1e6

    def __post_init__(self):
        if self.w_reg < 0 or self.iterations < 1 or self.step_size <= 0 \
                or not 0 <= self.flip <= 1 or self.min_observations < 1:
            raise DomainError(f"invalid estimation settings {self}")


class Observation(NamedTuple):
    rgb: np.ndarray
    light: np.ndarray
    view: np.ndarray
    normal: np.ndarray
    shadow: bool
    irradiance: float = 1.0


def _cone_positions(rng, count, cone_deg, distance):
    cone = np.radians(cone_deg)
    out = []
    for i in range(count):
        phi = 2 * np.pi * (i + rng.uniform()) / count
        theta = cone * np.sqrt(rng.uniform(0.05, 1.0))
        out.append(distance * np.array([np.sin(theta) * np.cos(phi),
                                        np.sin(theta) * np.sin(phi), np.cos(theta)]))
    return out


def make_rig(n_views: int = 9, n_lights: int = 11, resolution: int = 128,
             geometry: str = "hemisphere", seed: int = 7, irradiance: float = 1.0,
             distance: float = 6.0, view_cone: float = 30.0,
             light_cone: float = 45.0) -> CaptureRig:
    """Cameras and flashes at ``distance`` inside frontal cones, stratified
    in azimuth, looking at the proxy surface; directions vary per texel."""
    if n_views < 1 or n_lights < 1:
        raise DomainError("a rig needs at least one view and one light")
    pts, normals, valid = proxy_surface(resolution, geometry)
    rng = np.random.default_rng(seed)
    cams = _cone_positions(rng, n_views, view_cone, distance)
    flashes = _cone_positions(rng, n_lights, light_cone, distance)

    def dir_maps(positions):
        d = np.stack([p - pts for p in positions])
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    return CaptureRig(normals, valid, dir_maps(cams), dir_maps(flashes), irradiance)


def camera_from_pose(R, t):
    """Camera extrinsics ``(R^T, -R^T t)`` for an object pose ``x -> R x + t``."""
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if R.shape != (3, 3) or t.shape != (3,):
        raise DimensionError("pose needs a 3x3 rotation and a 3-vector")
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or not np.linalg.det(R) > 0:
        raise DomainError("R is not a proper rotation")
    return R.T, -R.T @ t


def shadow_mask_convex(rig: CaptureRig, j: int) -> np.ndarray:
    """Texels lit by flash j; exact for convex proxies."""
    return rig.valid & (np.sum(rig.lights[j] * rig.normals, axis=-1) > SHADOW_EPS)


def render_olat(maps: ReflectanceMaps, rig: CaptureRig, i: int, j: int,
                cfg: BrdfConfig = BrdfConfig()) -> OlatFrame:
    if maps.diffuse.shape[:2] != rig.shape:
        raise DimensionError(f"maps {maps.diffuse.shape[:2]} vs rig {rig.shape}")
    if maps.k_bp != cfg.k_bp:
        raise DimensionError("maps and cfg disagree on the lobe count")
    mask = shadow_mask_convex(rig, j) & rig.visible(i)
    texel = ReflectanceTexel(maps.diffuse, maps.weights)
    img = shade_directional(texel, cfg, rig.irradiance[j], rig.lights[j], rig.views[i],
                            rig.normals)
    return OlatFrame(i, j, img * mask[..., None], mask)


def render_all(maps, rig, cfg=BrdfConfig()):
    return [render_olat(maps, rig, i, j, cfg)
            for i in range(rig.n_views) for j in range(rig.n_lights)]


# -- linear systems --------------------------------------------------------

@dataclass
class TexelSystem:
    """Stacked per-texel observation data, observation axis last.

    a (T, O), b (T, k, O), s (T, 3, O), q (T, O) = shadow * <l, n>.
    """

    a: np.ndarray
    b: np.ndarray
    s: np.ndarray
    q: np.ndarray

    @property
    def size(self) -> int:
        return self.a.shape[0]

    def subset(self, idx) -> "TexelSystem":
        return TexelSystem(self.a[idx], self.b[idx], self.s[idx], self.q[idx])

    def counts(self) -> np.ndarray:
        return np.count_nonzero(self.q > 0, axis=1)


def _design(cfg, E, l, v, n):
    ln = clamped_dot(l, n)
    h = l + v
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
    hn = clamped_dot(h, n)
    a = E * ln / np.pi
    b = E * cfg.factors * hn[..., None] ** np.asarray(cfg.exponents)
    return a, b, ln


def system_from_frames(frames, rig: CaptureRig, cfg: BrdfConfig, texels) -> TexelSystem:
    """Gather observations of the flat texel indices ``texels``."""
    texels = np.asarray(texels)
    n = rig.normals.reshape(-1, 3)[texels]
    T, O, K = texels.size, len(frames), cfg.k_bp
    a = np.zeros((T, O))
    b = np.zeros((T, K, O))
    s = np.zeros((T, 3, O))
    q = np.zeros((T, O))
    for o, fr in enumerate(frames):
        l = rig.lights[fr.light].reshape(-1, 3)[texels]
        v = rig.views[fr.view].reshape(-1, 3)[texels]
        ao, bo, ln = _design(cfg, rig.irradiance[fr.light], l, v, n)
        a[:, o] = ao
        b[:, :, o] = bo
        s[:, :, o] = fr.image.reshape(-1, 3)[texels]
        q[:, o] = fr.shadow.reshape(-1)[texels] * ln
    return TexelSystem(a, b, s, q)


def system_from_observations(obs, cfg: BrdfConfig) -> TexelSystem:
    O, K = len(obs), cfg.k_bp
    a = np.zeros((1, O))
    b = np.zeros((1, K, O))
    s = np.zeros((1, 3, O))
    q = np.zeros((1, O))
    for o, ob in enumerate(obs):
        ao, bo, ln = _design(cfg, ob.irradiance, np.asarray(ob.light, float),
                             np.asarray(ob.view, float), np.asarray(ob.normal, float))
        a[0, o], b[0, :, o], s[0, :, o] = ao, bo, ob.rgb
        q[0, o] = float(bool(ob.shadow)) * ln
    return TexelSystem(a, b, s, q)


def predict(sys: TexelSystem, params) -> np.ndarray:
    """(T, 3, O) shading for parameters (T, 3 + k)."""
    spec = (params[:, 3:, None] * sys.b).sum(axis=1)
    return params[:, :3, None] * sys.a[:, None, :] + spec[:, None, :]


def objective(sys: TexelSystem, params, w_reg) -> np.ndarray:
    """Per-texel weighted L1 reconstruction loss plus the negativity penalty."""
    r = np.abs(predict(sys, params) - sys.s).sum(axis=1)
    return (sys.q * r).sum(axis=1) + w_reg * np.maximum(-params, 0.0).sum(axis=1)


def _dense(sys: TexelSystem, t: int):
    # (3O, 3 + k) row-weighted design matrix and target of texel t
    O, K = sys.a.shape[1], sys.b.shape[1]
    A = np.zeros((3 * O, 3 + K))
    for c in range(3):
        A[c * O:(c + 1) * O, c] = sys.a[t]
        A[c * O:(c + 1) * O, 3:] = sys.b[t].T
    w = np.tile(sys.q[t], 3)
    return A * w[:, None], sys.s[t].reshape(-1) * w


def condition_numbers(sys: TexelSystem) -> np.ndarray:
    """Column-normalised condition number of every texel's weighted system."""
    K = sys.b.shape[1]
    q2 = sys.q ** 2
    G = np.zeros((sys.size, 3 + K, 3 + K))
    daa = (sys.a ** 2 * q2).sum(axis=1)
    dab = (sys.a[:, None, :] * sys.b * q2[:, None, :]).sum(axis=2)
    dbb = 3.0 * np.einsum("tko,tlo,to->tkl", sys.b, sys.b, q2)
    for c in range(3):
        G[:, c, c] = daa
        G[:, c, 3:] = dab
        G[:, 3:, c] = dab
    G[:, 3:, 3:] = dbb
    d = np.sqrt(np.einsum("tii->ti", G))
    ok = np.all(d > 0, axis=1)
    cond = np.full(sys.size, np.inf)
    if ok.any():
        Gn = G[ok] / (d[ok][:, :, None] * d[ok][:, None, :])
        ev = np.linalg.eigvalsh(Gn)
        with np.errstate(divide="ignore", invalid="ignore"):
            cond[ok] = np.sqrt(ev[:, -1] / np.where(ev[:, 0] > 0, ev[:, 0], 0.0))
    return cond


def adam_solve(sys: TexelSystem, settings: EstimationSettings, partner=None,
               coins=None, init=None) -> np.ndarray:
    """Minimise the weighted L1 + negativity objective for all texels at once.

    ``partner[t]`` is the mirror texel of t within ``sys`` (t itself when
    uncoupled); at iteration ``it`` a texel with ``coins[t, it]`` set is
    explained by its partner's parameters. Coins must agree within a pair.
    """
    T, K = sys.size, sys.b.shape[1]
    P = np.zeros((T, 3 + K)) if init is None else np.array(init, dtype=np.float64)
    ident = np.arange(T)
    params = {"p": P}
    adam = Adam(lr=settings.step_size)
    for it in range(settings.iterations):
        adam.lr = cosine_lr(settings.step_size, it, settings.iterations,
                            settings.lr_final_fraction)
        use = ident if coins is None else np.where(coins[:, it], partner, ident)
        Pu = P[use]
        g = sys.q[:, None, :] * np.sign(predict(sys, Pu) - sys.s)       # (T, 3, O)
        grad_used = np.empty_like(P)
        grad_used[:, :3] = (g * sys.a[:, None, :]).sum(axis=2)
        grad_used[:, 3:] = (g.sum(axis=1)[:, None, :] * sys.b).sum(axis=2)
        grad = np.empty_like(P)
        grad[use] = grad_used
        grad -= settings.w_reg * (P < 0)
        adam.step(params, {"p": grad})
    return P


def nnls_solve(sys: TexelSystem) -> tuple:
    """Per-texel NNLS of the weighted squared-error system; returns
    parameters (T, 3 + k) and residual norms (T,)."""
    out = np.zeros((sys.size, 3 + sys.b.shape[1]))
    rn = np.zeros(sys.size)
    for t in range(sys.size):
        A, y = _dense(sys, t)
        out[t], rn[t] = nnls(A, y)
    return out, rn


def estimate_texel(obs, cfg: BrdfConfig = BrdfConfig(),
                   settings: EstimationSettings = EstimationSettings()) -> ReflectanceTexel:
    sys = system_from_observations(obs, cfg)
    if sys.counts()[0] < settings.min_observations:
        raise InsufficientObservationsError(
            f"{sys.counts()[0]} usable observations, need {settings.min_observations}")
    return ReflectanceTexel.from_vector(adam_solve(sys, settings)[0])


@dataclass
class TexelFit:
    texel: ReflectanceTexel
    condition: float
    ill_conditioned: bool
    residual_norm: float


def nnls_texel(obs, cfg: BrdfConfig = BrdfConfig(),
               settings: EstimationSettings = EstimationSettings()) -> TexelFit:
    sys = system_from_observations(obs, cfg)
    if sys.counts()[0] < settings.min_observations:
        raise InsufficientObservationsError(
            f"{sys.counts()[0]} usable observations, need {settings.min_observations}")
    params, rn = nnls_solve(sys)
    cond = float(condition_numbers(sys)[0])
    return TexelFit(ReflectanceTexel.from_vector(params[0]), cond,
                    not cond <= settings.max_condition, float(rn[0]))


# -- whole maps ------------------------------------------------------------

@dataclass
class EstimateDiagnostics:
    observations: np.ndarray
    condition: np.ndarray
    flags: np.ndarray
    objective: np.ndarray
    solver: str = "adam"

    def summary(self) -> dict:
        return {
            "solver": self.solver,
            "texels_ok": int(np.count_nonzero(self.flags == FLAG_OK)),
            "texels_insufficient": int(np.count_nonzero(self.flags == FLAG_INSUFFICIENT)),
            "texels_ill_conditioned": int(np.count_nonzero(self.flags == FLAG_ILL_CONDITIONED)),
            "median_condition": float(np.median(self.condition[self.flags == FLAG_OK]))
            if np.any(self.flags == FLAG_OK) else None,
        }


def _pair_coins(seed, pair_ids, iterations, prob):
    # one stream per mirrored pair, keyed by (seed, pair id), so the draws do
    # not depend on how texels are partitioned across workers
    out = np.zeros((len(pair_ids), iterations), dtype=bool)
    if prob <= 0:
        return out
    for n, pid in enumerate(pair_ids):
        out[n] = np.random.default_rng([seed, int(pid)]).random(iterations) < prob
    return out


def estimate_maps(frames, rig: CaptureRig, cfg: BrdfConfig = BrdfConfig(),
                  settings: EstimationSettings = EstimationSettings(),
                  solver: str = "adam", threads: int = 1):
    """Estimate reflectance maps from a set of OLAT frames.

    Returns ``(maps, diagnostics)``. Texels with too few usable observations
    or an ill-conditioned system are marked invalid and filled from their
    mirror texel when that one is valid, otherwise with the map mean.
    """
    if solver not in ("adam", "nnls"):
        raise DomainError(f"unknown solver {solver!r}")
    if not frames:
        raise DomainError("no frames given")
    H, W = rig.shape
    flat_valid = rig.valid.reshape(-1)
    texels = np.flatnonzero(flat_valid)
    full = system_from_frames(frames, rig, cfg, texels)
    counts = full.counts()
    active = counts >= settings.min_observations
    cond = np.full(texels.size, np.inf)
    if active.any():
        cond[active] = condition_numbers(full.subset(np.flatnonzero(active)))

    # rows are independent units: mirrored texels always share a row
    rows = texels // W
    pos_of = np.full(H * W, -1)
    pos_of[texels] = np.arange(texels.size)
    cols = texels % W
    mirror_flat = rows * W + (W - 1 - cols)
    params = np.zeros((texels.size, 3 + cfg.k_bp))
    obj = np.zeros(texels.size)

    def run(chunk_rows):
        sel = np.flatnonzero(np.isin(rows, chunk_rows) & active)
        if sel.size == 0:
            return sel, np.zeros((0, 3 + cfg.k_bp))
        sub = full.subset(sel)
        if solver == "nnls":
            return sel, nnls_solve(sub)[0]
        local = np.full(H * W, -1)
        local[texels[sel]] = np.arange(sel.size)
        partner = local[mirror_flat[sel]]
        partner = np.where(partner >= 0, partner, np.arange(sel.size))
        coins = None
        if settings.flip > 0:
            pair_id = rows[sel] * W + np.minimum(cols[sel], W - 1 - cols[sel])
            uniq, inv = np.unique(pair_id, return_inverse=True)
            coins = _pair_coins(settings.seed, uniq, settings.iterations, settings.flip)[inv]
        return sel, adam_solve(sub, settings, partner, coins)

    unique_rows = np.unique(rows)
    chunks = [c for c in np.array_split(unique_rows, max(1, int(threads))) if c.size]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    for sel, p in results:
        params[sel] = p
    if active.any():
        act = np.flatnonzero(active)
        obj[act] = objective(full.subset(act), params[act], settings.w_reg)

    flags = np.full(texels.size, FLAG_OK, dtype=np.uint8)
    flags[~active] = FLAG_INSUFFICIENT
    flags[active & ~(cond <= settings.max_condition)] = FLAG_ILL_CONDITIONED
    good = flags == FLAG_OK

    out = np.zeros((H * W, 3 + cfg.k_bp))
    out[texels] = params
    good_flat = np.zeros(H * W, dtype=bool)
    good_flat[texels[good]] = True
    fill = out[good_flat].mean(axis=0) if good_flat.any() else np.zeros(3 + cfg.k_bp)
    for t in texels[~good]:
        m = (t // W) * W + (W - 1 - t % W)
        out[t] = out[m] if good_flat[m] else fill
    out[~flat_valid] = fill

    def img(x, fill_value, dtype):
        full_img = np.full(H * W, fill_value, dtype=dtype)
        full_img[texels] = x
        return full_img.reshape(H, W)

    diag = EstimateDiagnostics(img(counts, 0, np.int32), img(cond, np.inf, np.float64),
                               img(flags, FLAG_OUTSIDE, np.uint8), img(obj, 0.0, np.float64),
                               solver)
    maps = ReflectanceMaps.from_params(out.reshape(H, W, -1), good_flat.reshape(H, W))
    log.info("estimated %d texels (%s)", texels.size, diag.summary())
    return maps, diag


# -- OLAT set directory ----------------------------------------------------

def save_olat_set(directory, rig: CaptureRig, frames, cfg: BrdfConfig,
                  ground_truth: ReflectanceMaps | None = None, extra=None) -> Path:
    d = Path(directory)
    for sub in ("views", "lights", "frames", "shadows"):
        (d / sub).mkdir(parents=True, exist_ok=True)
    write_pfm(d / "normals.pfm", rig.normals)
    write_mask_png(d / "valid.png", rig.valid)
    views = [f"views/view_{i:02d}.pfm" for i in range(rig.n_views)]
    lights = [f"lights/light_{j:02d}.pfm" for j in range(rig.n_lights)]
    for i, name in enumerate(views):
        write_pfm(d / name, rig.views[i])
    for j, name in enumerate(lights):
        write_pfm(d / name, rig.lights[j])
    entries = []
    for fr in frames:
        img = f"frames/frame_{fr.view:02d}_{fr.light:02d}.pfm"
        sh = f"shadows/shadow_{fr.view:02d}_{fr.light:02d}.png"
        write_pfm(d / img, fr.image)
        write_mask_png(d / sh, fr.shadow)
        entries.append({"view": fr.view, "light": fr.light, "image": img, "shadow": sh})
    gt = None
    if ground_truth is not None:
        gt = save_maps(d / "ground_truth", ground_truth, cfg)
        gt = "ground_truth"
    manifest = {
        "format": "reflmm-olat", "version": 1,
        "height": rig.shape[0], "width": rig.shape[1],
        "exponents": list(cfg.exponents),
        "irradiance": rig.irradiance.tolist(),
        "normals": "normals.pfm", "valid": "valid.png",
        "views": views, "lights": lights, "frames": entries,
        "ground_truth": gt, "extra": extra or {},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def load_olat_set(directory):
    """Returns ``(rig, frames, cfg, ground_truth_or_None)``."""
    d = Path(directory)
    try:
        man = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError:
        raise FormatError(f"{d}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{d}/manifest.json: {exc}") from None
    if man.get("format") != "reflmm-olat":
        raise FormatError(f"{d}: not an OLAT set manifest")
    try:
        cfg = BrdfConfig(tuple(man["exponents"]))
        rig = CaptureRig(read_pfm(d / man["normals"]), read_mask_png(d / man["valid"]),
                         np.stack([read_pfm(d / n) for n in man["views"]]),
                         np.stack([read_pfm(d / n) for n in man["lights"]]),
                         man["irradiance"])
        frames = [OlatFrame(e["view"], e["light"], read_pfm(d / e["image"]),
                            read_mask_png(d / e["shadow"])) for e in man["frames"]]
    except (FileNotFoundError, KeyError) as exc:
        raise FormatError(f"{d}: missing entry or file: {exc}") from None
    for fr in frames:
        if fr.image.shape[:2] != rig.shape:
            raise FormatError(f"{d}: frame {fr.view},{fr.light} has wrong dimensions")
    gt = load_maps(d / man["ground_truth"]) if man.get("ground_truth") else None
    return rig, frames, cfg, gt


def save_maps(directory, maps: ReflectanceMaps, cfg: BrdfConfig, extra=None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_pfm(d / "diffuse.pfm", maps.diffuse)
    names = []
    for k in range(maps.k_bp):
        names.append(f"weight_{k}.pfm")
        write_pfm(d / names[-1], maps.weights[..., k])
    write_mask_png(d / "valid.png", maps.valid)
    meta = {"format": "reflmm-maps", "version": 1, "exponents": list(cfg.exponents),
            "diffuse": "diffuse.pfm", "weights": names, "valid": "valid.png"}
    if extra:
        meta["extra"] = extra
    (d / "maps.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return d


def load_maps(directory):
    d = Path(directory)
    try:
        meta = json.loads((d / "maps.json").read_text())
        maps = ReflectanceMaps(read_pfm(d / meta["diffuse"]),
                               np.stack([read_pfm(d / n) for n in meta["weights"]], axis=-1),
                               read_mask_png(d / meta["valid"]))
    except (FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{d}: cannot read reflectance maps: {exc}") from None
    return maps


def maps_config(directory) -> BrdfConfig:
    meta = json.loads((Path(directory) / "maps.json").read_text())
    return BrdfConfig(tuple(meta["exponents"]))


def parameter_error(est: ReflectanceMaps, truth: ReflectanceMaps, mask=None) -> np.ndarray:
    """Per-texel relative parameter error ``|est - truth| / |truth|``."""
    e = est.params().astype(np.float64)
    t = truth.params().astype(np.float64)
    err = np.linalg.norm(e - t, axis=-1) / np.maximum(np.linalg.norm(t, axis=-1), 1e-12)
    return err if mask is None else err[mask]


def settings_dict(settings: EstimationSettings) -> dict:
    return asdict(settings)
