"""
Image formation from model coefficients, per-image coefficient fitting and
update-by-reconstruction finetuning of the reflectance model.

For every covered pixel p with texel t(p) the rendered colour is::

    I_pc = C_pc * D_pc + sum_k W_pk * S_pkc
    D_pc = sum_j Y_j(n_p) A_j / pi * sh_cj
    S_pkc = sum_j Y_j(r_p) B^k_j * sh_cj

with C, W the reconstructed reflectance at t(p) and sh the decoded
lighting. The image is affine in beta for fixed lighting and linear in the
lighting for fixed beta, so all gradients below are closed form.
"""
from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .brdf import ReflectanceTexel, reflect_vector, shade_directional
from .errors import DimensionError, DomainError, FormatError, OptimizationError
from .imageio import read_mask_png, read_pfm, write_mask_png, write_pfm
from .lighting import LightingPcaModel, decode_lighting
from .optim import Adam, cosine_lr
from .reflectance import MorphableReflectanceModel
from .sh import ShVector, ZonalTable, sh_eval_basis, zonal_table
from .synthetic import proxy_surface

log = logging.getLogger(__name__)

SIGMA_EPS = 1e-12


@dataclass
class GeometryBuffers:
    """Per-pixel normal, view direction and UV. ``uv[..., 0]`` runs along
    reflectance-map columns and ``uv[..., 1]`` along rows, both in [0, 1]."""

    normals: np.ndarray
    views: np.ndarray
    uv: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        self.normals = np.asarray(self.normals, np.float32).astype(np.float64)
        self.views = np.asarray(self.views, np.float32).astype(np.float64)
        self.uv = np.asarray(self.uv, np.float32).astype(np.float64)[..., :2]
        self.coverage = np.asarray(self.coverage, dtype=bool)
        hw = self.coverage.shape
        if self.normals.shape != hw + (3,) or self.views.shape != hw + (3,) \
                or self.uv.shape != hw + (2,):
            raise DimensionError("geometry buffers must share H x W dimensions")
        cov = self.coverage
        for name, d in (("normals", self.normals), ("views", self.views)):
            if np.any(np.abs(np.linalg.norm(d[cov], axis=-1) - 1.0) > 1e-4):
                raise DomainError(f"{name} are not unit length on covered pixels")
        if np.any((self.uv[cov] < 0) | (self.uv[cov] > 1)):
            raise DomainError("UV coordinates outside [0, 1] on covered pixels")

    @property
    def shape(self):
        return self.coverage.shape


@dataclass
class FitTarget:
    image: np.ndarray
    skin: np.ndarray
    geometry: GeometryBuffers

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.skin = np.asarray(self.skin, dtype=bool)
        if self.image.shape != self.geometry.shape + (3,) or self.skin.shape != self.geometry.shape:
            raise DimensionError("target image, skin mask and geometry disagree in size")
        if np.any(self.image < 0):
            raise DomainError("target image must be non-negative")


@dataclass
class FitSettings:
    iterations: int = 500
    lr: float = 1e-2
    lr_final_fraction: float = 0.01
    w_l1: float = 2.0
    w_coef: float = 1e-3
    w_light: float = 10.0
    trace_every: int = 10

    def __post_init__(self):
        if self.iterations < 1 or self.lr <= 0 or min(self.w_l1, self.w_coef, self.w_light) < 0:
            raise DomainError(f"invalid fit settings {self}")


@dataclass
class FinetuneConfig:
    w_l1: float = 2.0
    w_per: float = 0.1      # kept for completeness; the perceptual term is not implemented
    w_coef: float = 1e-3
    w_upd: float = 10.0
    w_light: float = 10.0
    epochs: int = 10
    inner_iterations: int = 100
    model_steps: int = 10
    model_lr: float = 1e-5
    coef_lr: float = 1e-4

    def __post_init__(self):
        if min(self.w_l1, self.w_per, self.w_coef, self.w_upd, self.w_light) < 0:
            raise DomainError("loss weights must be non-negative")
        if self.epochs < 1 or self.inner_iterations < 1 or self.model_steps < 0:
            raise DomainError("epochs and iteration counts must be positive")

    def fit_settings(self, iterations=None) -> FitSettings:
        return FitSettings(iterations=iterations or self.inner_iterations, lr=self.coef_lr,
                           w_l1=self.w_l1, w_coef=self.w_coef, w_light=self.w_light)


@dataclass
class FitResult:
    beta: np.ndarray
    gamma: np.ndarray
    z: np.ndarray
    losses: dict
    iterations: int
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"beta": np.asarray(self.beta).tolist(), "gamma": np.asarray(self.gamma).tolist(),
                "z": np.asarray(self.z).tolist(), "losses": self.losses,
                "iterations": self.iterations, "trace": self.trace}

    @classmethod
    def from_dict(cls, d) -> "FitResult":
        try:
            return cls(np.asarray(d["beta"], float), np.asarray(d["gamma"], float),
                       np.asarray(d["z"], float), dict(d.get("losses", {})),
                       int(d.get("iterations", 0)), list(d.get("trace", [])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"not a fit result: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "FitResult":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None


# -- geometry --------------------------------------------------------------

def proxy_geometry(resolution: int, geometry: str = "hemisphere",
                   camera_distance: float = 6.0) -> GeometryBuffers:
    """Buffers for a camera on +Z looking at the proxy surface, with image
    pixels aligned to the UV grid."""
    pts, normals, valid = proxy_surface(resolution, geometry)
    v = np.array([0.0, 0.0, camera_distance]) - pts
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    s = (np.arange(resolution) + 0.5) / resolution
    uv = np.stack(np.broadcast_arrays(s[None, :], s[:, None]), axis=-1)
    return GeometryBuffers(normals, v, uv, valid)


def texel_lookup(uv, height, width) -> np.ndarray:
    """Nearest-texel flat index for UV coordinates."""
    col = np.clip(np.floor(uv[..., 0] * width).astype(np.int64), 0, width - 1)
    row = np.clip(np.floor(uv[..., 1] * height).astype(np.int64), 0, height - 1)
    return row * width + col


@dataclass
class _Prepared:
    # quantities of one target that do not depend on coefficients
    pix: np.ndarray        # flat indices of covered pixels
    tix: np.ndarray        # texel index per covered pixel
    yd: np.ndarray         # (P, n) Y(n) * A / pi
    ys: np.ndarray         # (P, k, n) Y(r) * B^k
    target: np.ndarray     # (P, 3)
    skin: np.ndarray       # (P,) float
    n_skin: int
    outside: float         # sum of |target| over skin pixels that are not covered
    shape: tuple


def _prepare(geometry: GeometryBuffers, model: MorphableReflectanceModel, zt: ZonalTable,
             target: FitTarget | None = None) -> _Prepared:
    if zt.phong.shape[0] != model.k_bp:
        raise DimensionError("zonal table and model disagree on the lobe count")
    cov = geometry.coverage.reshape(-1)
    pix = np.flatnonzero(cov)
    n = geometry.normals.reshape(-1, 3)[pix]
    v = geometry.views.reshape(-1, 3)[pix]
    r = reflect_vector(n, v)
    lam, ph = zt.expanded()
    yd = sh_eval_basis(n, zt.order) * (lam / np.pi)
    ys = sh_eval_basis(r, zt.order)[:, None, :] * ph[None]
    tix = texel_lookup(geometry.uv.reshape(-1, 2)[pix], model.height, model.width)
    if target is None:
        return _Prepared(pix, tix, yd, ys, np.zeros((pix.size, 3)), np.zeros(pix.size), 0,
                         0.0, geometry.shape)
    img = target.image.astype(np.float64).reshape(-1, 3)
    skin = target.skin.reshape(-1)
    outside = float(np.abs(img[skin & ~cov]).sum())
    return _Prepared(pix, tix, yd, ys, img[pix], skin[pix].astype(np.float64),
                     int(skin.sum()), outside, geometry.shape)


# -- rendering -------------------------------------------------------------

def _reflectance(arrays, tix, beta):
    mC, mW, Mc, Mw = arrays
    return mC[tix] + Mc[tix] @ beta, mW[tix] + Mw[tix] @ beta


def _shading(prep, sh):
    D = prep.yd @ sh.T                                   # (P, 3)
    S = np.einsum("pkj,cj->pkc", prep.ys, sh)            # (P, k, 3)
    return D, S


def _render_pixels(prep, arrays, beta, sh):
    C, W = _reflectance(arrays, prep.tix, beta)
    D, S = _shading(prep, sh)
    return C * D + np.einsum("pk,pkc->pc", W, S), (C, W, D, S)


def _resolve_light(light, gamma, z):
    if isinstance(light, LightingPcaModel):
        return decode_lighting(light, gamma, z).coeffs
    if isinstance(light, ShVector):
        return light.coeffs
    raise DomainError("light must be a LightingPcaModel or an ShVector")


def render_image(model: MorphableReflectanceModel, beta, light, gamma=None, z=None,
                 geometry: GeometryBuffers = None, zt: ZonalTable | None = None) -> np.ndarray:
    """Render an (H, W, 3) image; ``light`` is either a lighting PCA model
    (decoded with ``gamma`` and ``z``) or an ShVector used as is.
    Uncovered pixels are 0. Reflectance is not clamped, keeping the image
    affine in ``beta``."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (model.n_bases,):
        raise DimensionError(f"beta must have length {model.n_bases}")
    sh = _resolve_light(light, gamma, z)
    order = int(round(np.sqrt(sh.shape[1]))) - 1
    zt = zt or zonal_table(model.cfg, order)
    if zt.order != order:
        raise DimensionError(f"lighting order {order} does not match zonal order {zt.order}")
    prep = _prepare(geometry, model, zt)
    I, _ = _render_pixels(prep, model.texel_arrays(), beta, sh)
    out = np.zeros((int(np.prod(geometry.shape)), 3))
    out[prep.pix] = I
    return out.reshape(geometry.shape + (3,))


def render_maps(maps, cfg, light: ShVector, geometry: GeometryBuffers) -> np.ndarray:
    """Render arbitrary reflectance maps under SH lighting."""
    if maps.k_bp != cfg.k_bp:
        raise DimensionError("maps and cfg disagree on the lobe count")
    zt = zonal_table(cfg, light.order)
    cov = geometry.coverage.reshape(-1)
    pix = np.flatnonzero(cov)
    n = geometry.normals.reshape(-1, 3)[pix]
    v = geometry.views.reshape(-1, 3)[pix]
    lam, ph = zt.expanded()
    sh = light.coeffs
    D = (sh_eval_basis(n, zt.order) * (lam / np.pi)) @ sh.T
    S = np.einsum("pj,kj,cj->pkc", sh_eval_basis(reflect_vector(n, v), zt.order), ph, sh)
    tix = texel_lookup(geometry.uv.reshape(-1, 2)[pix], maps.height, maps.width)
    C = maps.diffuse.astype(np.float64).reshape(-1, 3)[tix]
    W = maps.weights.astype(np.float64).reshape(-1, maps.k_bp)[tix]
    out = np.zeros((cov.size, 3))
    out[pix] = C * D + np.einsum("pk,pkc->pc", W, S)
    return out.reshape(geometry.shape + (3,))


def render_point_light(maps, cfg, direction, irradiance, geometry: GeometryBuffers) -> np.ndarray:
    """Render maps under one distant light arriving from ``direction``."""
    l = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(l)
    if l.shape != (3,) or not norm > 0:
        raise DomainError("light direction must be a non-zero 3-vector")
    cov = geometry.coverage.reshape(-1)
    pix = np.flatnonzero(cov)
    tix = texel_lookup(geometry.uv.reshape(-1, 2)[pix], maps.height, maps.width)
    texel = ReflectanceTexel(maps.diffuse.astype(np.float64).reshape(-1, 3)[tix],
                             maps.weights.astype(np.float64).reshape(-1, maps.k_bp)[tix])
    out = np.zeros((cov.size, 3))
    out[pix] = shade_directional(texel, cfg, irradiance, l / norm,
                                 geometry.views.reshape(-1, 3)[pix],
                                 geometry.normals.reshape(-1, 3)[pix])
    return out.reshape(geometry.shape + (3,))


# -- losses ----------------------------------------------------------------

def loss_l1(rendered, target, skin) -> float:
    """Mean absolute difference over skin pixels and colour channels."""
    skin = np.asarray(skin, dtype=bool)
    n = int(skin.sum())
    if n == 0:
        warnings.warn("empty skin mask, L1 loss is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    diff = np.abs(np.asarray(rendered, float) - np.asarray(target, float))
    return float(diff[skin].sum() / (3 * n))


def _inv_var(sigmas):
    s = np.asarray(sigmas, dtype=np.float64)
    return np.where(s > SIGMA_EPS, 1.0 / np.where(s > SIGMA_EPS, s, 1.0) ** 2, 0.0)


def loss_coef(beta, sigma_beta, gamma, sigma_gamma) -> float:
    """Sum of squared whitened coefficients; components with zero variance
    carry no penalty."""
    beta = np.asarray(beta, float)
    gamma = np.asarray(gamma, float)
    return float((beta ** 2 * _inv_var(sigma_beta)).sum()
                 + (gamma ** 2 * _inv_var(sigma_gamma)).sum())


def loss_light(sh) -> float:
    """Squared distance of each channel's coefficients from their channel mean."""
    c = sh.coeffs if isinstance(sh, ShVector) else np.asarray(sh, float)
    # pairwise form of sum_c (c - mean)^2, exactly 0 for equal channels
    return float((((c[0] - c[1]) ** 2 + (c[0] - c[2]) ** 2 + (c[1] - c[2]) ** 2) / 3).sum())


def loss_upd(model: MorphableReflectanceModel, model0: MorphableReflectanceModel,
             reduction: str = "sum") -> float:
    """L1 distance of mean and bases (diffuse and specular) from ``model0``."""
    parts = [(model.mean, model0.mean), (model.diffuse_bases, model0.diffuse_bases),
             (model.specular_bases, model0.specular_bases)]
    total, count = 0.0, 0
    for a, b in parts:
        if a.shape != b.shape:
            raise DimensionError("models differ in shape")
        total += float(np.abs(a.astype(np.float64) - b.astype(np.float64)).sum())
        count += a.size
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total / count
    raise DomainError(f"unknown reduction {reduction!r}")


# -- objective and gradients -----------------------------------------------

@dataclass
class _Problem:
    prep: _Prepared
    arrays: tuple
    sigma_beta: np.ndarray
    light: LightingPcaModel
    settings: FitSettings


def _decode(light: LightingPcaModel, gamma, logz):
    base = (light.mean.astype(np.float64) + light.bases.astype(np.float64) @ gamma).reshape(3, -1)
    z = np.exp(logz)
    return base * z[:, None], base, z


def fit_objective(prob: _Problem, beta, gamma, logz, model_grads=False):
    """Total fit loss, its terms and gradients wrt beta, gamma, log z and,
    optionally, the model arrays (mean_C, mean_W, M_c, M_w)."""
    s, prep = prob.settings, prob.prep
    sh, base, z = _decode(prob.light, gamma, logz)
    I, (C, W, D, S) = _render_pixels(prep, prob.arrays, beta, sh)
    resid = I - prep.target
    n_skin = max(prep.n_skin, 1)
    l1 = ((np.abs(resid) * prep.skin[:, None]).sum() + prep.outside) / (3 * n_skin) \
        if prep.n_skin else 0.0
    ivb = _inv_var(prob.sigma_beta)
    ivg = _inv_var(prob.light.sigmas)
    coef = float((beta ** 2 * ivb).sum() + (gamma ** 2 * ivg).sum())
    dev = sh - sh.mean(axis=0)
    light_term = float((dev ** 2).sum())
    total = s.w_l1 * l1 + s.w_coef * coef + s.w_light * light_term

    G = s.w_l1 * np.sign(resid) * prep.skin[:, None] / (3 * n_skin) if prep.n_skin \
        else np.zeros_like(resid)
    gC = G * D
    gW = np.einsum("pc,pkc->pk", G, S)
    _, _, Mc, Mw = prob.arrays
    tix = prep.tix
    g_beta = np.einsum("pcn,pc->n", Mc[tix], gC) + np.einsum("pkn,pk->n", Mw[tix], gW) \
        + 2 * s.w_coef * beta * ivb
    g_sh = (G * C).T @ prep.yd + np.einsum("pc,pk,pkj->cj", G, W, prep.ys) \
        + 2 * s.w_light * dev
    g_gamma = prob.light.bases.astype(np.float64).T @ (g_sh * z[:, None]).reshape(-1) \
        + 2 * s.w_coef * gamma * ivg
    g_logz = (g_sh * sh).sum(axis=1)
    terms = {"l1": float(l1), "coef": coef, "light": light_term, "total": float(total)}
    grads = {"beta": g_beta, "gamma": g_gamma, "logz": g_logz}
    if model_grads:
        mC, mW, _, _ = prob.arrays
        g_mC = np.zeros_like(mC)
        g_mW = np.zeros_like(mW)
        np.add.at(g_mC, tix, gC)
        np.add.at(g_mW, tix, gW)
        g_Mc = np.zeros_like(Mc)
        g_Mw = np.zeros_like(Mw)
        np.add.at(g_Mc, tix, gC[:, :, None] * beta)
        np.add.at(g_Mw, tix, gW[:, :, None] * beta)
        grads.update(mean_c=g_mC, mean_w=g_mW, bases_c=g_Mc, bases_w=g_Mw)
    return float(total), terms, grads


def _initial_logz(prob: _Problem, beta, gamma):
    # per-channel brightness ratio between target and the z = 1 render
    sh, _, _ = _decode(prob.light, gamma, np.zeros(3))
    I, _ = _render_pixels(prob.prep, prob.arrays, beta, sh)
    m = prob.prep.skin[:, None]
    num = (prob.prep.target * m).sum(axis=0)
    den = (I * m).sum(axis=0)
    ok = (num > 0) & (den > 0)
    return np.where(ok, np.log(np.where(ok, num, 1.0) / np.where(ok, den, 1.0)), 0.0)


def _fit(prob: _Problem, settings: FitSettings, init=None) -> FitResult:
    nb, ng = prob.sigma_beta.size, prob.light.n_bases
    sb = np.where(prob.sigma_beta > SIGMA_EPS, prob.sigma_beta, 0.0)
    sg = np.where(prob.light.sigmas > SIGMA_EPS, prob.light.sigmas.astype(np.float64), 0.0)
    # optimise whitened coefficients so one step size suits every component;
    # zero-variance components stay at 0
    if init is None:
        beta0, gamma0 = np.zeros(nb), np.zeros(ng)
        logz0 = _initial_logz(prob, beta0, gamma0)
    else:
        beta0, gamma0, logz0 = (np.asarray(x, float) for x in init)
    params = {"b": np.where(sb > 0, beta0 / np.where(sb > 0, sb, 1.0), 0.0),
              "g": np.where(sg > 0, gamma0 / np.where(sg > 0, sg, 1.0), 0.0),
              "lz": logz0.copy()}
    adam = Adam(lr=settings.lr)
    trace = []
    for it in range(settings.iterations):
        total, terms, g = fit_objective(prob, params["b"] * sb, params["g"] * sg, params["lz"])
        if not np.isfinite(total):
            raise OptimizationError(f"fit diverged at iteration {it}", trace=trace)
        if it % settings.trace_every == 0:
            trace.append(total)
        adam.lr = cosine_lr(settings.lr, it, settings.iterations, settings.lr_final_fraction)
        adam.step(params, {"b": g["beta"] * sb, "g": g["gamma"] * sg, "lz": g["logz"]})
    beta, gamma = params["b"] * sb, params["g"] * sg
    total, terms, _ = fit_objective(prob, beta, gamma, params["lz"])
    if not np.isfinite(total):
        raise OptimizationError("fit diverged", trace=trace)
    trace.append(total)
    return FitResult(beta, gamma, np.exp(params["lz"]), terms, settings.iterations, trace)


def make_problem(target: FitTarget, model: MorphableReflectanceModel,
                 light: LightingPcaModel, settings: FitSettings = FitSettings(),
                 arrays=None) -> _Problem:
    zt = zonal_table(model.cfg, light.order)
    return _Problem(_prepare(target.geometry, model, zt, target),
                    arrays if arrays is not None else model.texel_arrays(),
                    model.sigmas.astype(np.float64), light, settings)


def fit_image(target: FitTarget, model: MorphableReflectanceModel, light: LightingPcaModel,
              settings: FitSettings = FitSettings(), init=None) -> FitResult:
    """Fit (beta, gamma, z) to one target image by Adam on the full loss."""
    if target.skin.sum() == 0:
        warnings.warn("empty skin mask, nothing to fit", RuntimeWarning, stacklevel=2)
    return _fit(make_problem(target, model, light, settings), settings, init)


def make_target(model: MorphableReflectanceModel, beta, light: LightingPcaModel, gamma, z,
                geometry: GeometryBuffers, skin=None) -> FitTarget:
    """Noiseless target rendered from known coefficients; negative values
    (possible far from the mean) are clipped to keep the image physical."""
    img = render_image(model, beta, light, gamma, z, geometry)
    return FitTarget(np.clip(img, 0.0, None), geometry.coverage if skin is None else skin,
                     geometry)


# -- finetuning ------------------------------------------------------------

def _orthonormalize(arrays):
    # thin QR of the diffuse block, positive diagonal; the specular block
    # follows through the same right factor, so C and W stay consistent
    mC, mW, Mc, Mw = arrays
    V, _, N = Mc.shape
    Q, R = np.linalg.qr(Mc.reshape(-1, N))
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    Q, R = Q * d, R * d[:, None]
    if np.min(np.abs(np.diag(R))) < 1e-12:
        return arrays, np.eye(N)
    Mw2 = np.linalg.solve(R.T, Mw.reshape(-1, N).T).T
    return (mC, mW, Q.reshape(V, 3, N), Mw2.reshape(Mw.shape)), R


def _arrays_to_model(model0, arrays) -> MorphableReflectanceModel:
    mC, mW, Mc, Mw = arrays
    V, N = model0.n_texels, model0.n_bases
    return MorphableReflectanceModel(model0.height, model0.width, model0.exponents,
                                     np.concatenate([mC.reshape(-1), mW.reshape(-1)]),
                                     Mc.reshape(3 * V, N), Mw.reshape(-1, N), model0.sigmas)


def finetune_model(targets, model0: MorphableReflectanceModel, light: LightingPcaModel,
                   cfg: FinetuneConfig = FinetuneConfig(), first_fit_iterations: int = 500,
                   return_history: bool = False, threads: int = 1):
    """Alternate per-target coefficient fits with model updates.

    Each model update is an Adam step on the data terms followed by a
    soft-threshold towards ``model0`` in Adam's diagonal metric, which is the
    proximal step of the L1 drift penalty ``w_upd * loss_upd(reduction="mean")``.
    Diffuse bases are re-orthonormalised after every epoch; sigmas stay fixed.
    Per-target fits are independent and may run on ``threads`` workers; the
    model gradient is always reduced in target order.
    """
    targets = list(targets)
    if not targets:
        raise DomainError("finetuning needs at least one target")
    names = ("mean_c", "mean_w", "bases_c", "bases_w")
    ref = dict(zip(names, model0.texel_arrays()))
    cur = {k: v.copy() for k, v in ref.items()}
    n_params = sum(v.size for v in ref.values())
    thr_weight = cfg.w_upd / n_params
    probs = [make_problem(t, model0, light, cfg.fit_settings()) for t in targets]
    fits = [None] * len(targets)
    adam = Adam(lr=cfg.model_lr)
    history = []
    for epoch in range(cfg.epochs):
        arrays = tuple(cur[k] for k in names)

        def refit(i):
            probs[i].arrays = arrays
            f = fits[i]
            if f is None:
                return _fit(probs[i], cfg.fit_settings(first_fit_iterations))
            return _fit(probs[i], cfg.fit_settings(), (f.beta, f.gamma, np.log(f.z)))

        if threads > 1:
            with ThreadPoolExecutor(max_workers=int(threads)) as pool:
                fits = list(pool.map(refit, range(len(probs))))
        else:
            fits = [refit(i) for i in range(len(probs))]
        for _ in range(cfg.model_steps):
            grads = {k: np.zeros_like(v) for k, v in cur.items()}
            for p, f in zip(probs, fits):
                p.arrays = tuple(cur[k] for k in names)
                total, _, g = fit_objective(p, f.beta, f.gamma, np.log(f.z), model_grads=True)
                if not np.isfinite(total):
                    raise OptimizationError(f"finetune diverged in epoch {epoch}")
                for k in names:
                    grads[k] += g[k]
            scales = adam.step(cur, grads)
            for k in names:
                d = cur[k] - ref[k]
                cur[k] = ref[k] + np.sign(d) * np.maximum(np.abs(d) - scales[k] * thr_weight, 0.0)
        new, R = _orthonormalize(tuple(cur[k] for k in names))
        cur = dict(zip(names, new))
        for f in fits:
            f.beta = R @ f.beta
        history.append(float(np.mean([f.losses["l1"] for f in fits])))
        log.info("finetune epoch %d: mean L1 %.6g", epoch, history[-1])
    model = _arrays_to_model(model0, tuple(cur[k] for k in names))
    return (model, history) if return_history else model


def heldout_l1(targets, model, light, settings: FitSettings = FitSettings()) -> float:
    """Mean L1 loss after fitting each target from scratch."""
    return float(np.mean([fit_image(t, model, light, settings).losses["l1"] for t in targets]))


# -- target directory ------------------------------------------------------

def save_fit_target(directory, target: FitTarget) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    g = target.geometry
    write_pfm(d / "image.pfm", target.image)
    write_mask_png(d / "skin.png", target.skin)
    write_pfm(d / "normals.pfm", g.normals)
    write_pfm(d / "view.pfm", g.views)
    write_pfm(d / "uv.pfm", g.uv)
    write_mask_png(d / "coverage.png", g.coverage)
    man = {"format": "reflmm-fit-target", "version": 1, "height": g.shape[0],
           "width": g.shape[1], "image": "image.pfm", "skin": "skin.png",
           "normals": "normals.pfm", "view": "view.pfm", "uv": "uv.pfm",
           "coverage": "coverage.png"}
    (d / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True))
    return d


def load_fit_target(directory) -> FitTarget:
    d = Path(directory)
    try:
        man = json.loads((d / "manifest.json").read_text())
        if man.get("format") != "reflmm-fit-target":
            raise FormatError(f"{d}: not a fit target manifest")
        geom = GeometryBuffers(read_pfm(d / man["normals"]), read_pfm(d / man["view"]),
                               read_pfm(d / man["uv"]), read_mask_png(d / man["coverage"]))
        return FitTarget(read_pfm(d / man["image"]), read_mask_png(d / man["skin"]), geom)
    except (FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{d}: cannot read fit target: {exc}") from None
