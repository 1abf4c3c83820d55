"""Command-line entry point: ``reflmm <command> [options]``.

Every command writes a ``run_manifest.json`` recording its arguments with
defaults filled in; ``reflmm replay <manifest>`` re-runs it.
Exit codes: 0 success, 2 input/format error, 3 numerical failure,
4 invariant-check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .brdf import BrdfConfig, ReflectanceMaps
from .errors import (DimensionError, DomainError, FormatError, InsufficientObservationsError,
                     OptimizationError)
from .fitter import (FinetuneConfig, FitResult, FitSettings, GeometryBuffers, fit_image,
                     finetune_model, load_fit_target, make_target, proxy_geometry, render_image,
                     render_maps, render_point_light, save_fit_target)
from .imageio import read_pfm, write_pfm, write_preview_png
from .lighting import (build_lighting_pca, decode_lighting, load_lighting_model,
                       save_lighting_model)
from .olat import (EstimationSettings, estimate_maps, load_maps, load_olat_set, make_rig,
                   maps_config, parameter_error, render_all, save_maps, save_olat_set)
from .reflectance import (build_model, load_model, reconstruct, sample_model, save_model)
from .sh import EnvMap, ShVector, equirect_grid, project_envmap
from .synthetic import synthetic_envmap, synthetic_reflectance_maps

log = logging.getLogger("reflmm")

EXIT_OK, EXIT_FORMAT, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4


class InvariantFailure(Exception):
    pass


def _emit(stats, out=None):
    text = json.dumps(stats, indent=2, sort_keys=True, default=float)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _floats(text, n=None):
    vals = [float(t) for t in str(text).split(",") if t.strip()]
    if n is not None and len(vals) != n:
        raise DomainError(f"expected {n} comma separated values, got {text!r}")
    return np.array(vals)


def _coeffs(text, size, name):
    """Coefficient vector from a comma list, a JSON file or nothing (zeros)."""
    if text is None:
        return np.zeros(size)
    p = Path(text)
    vals = np.asarray(json.loads(p.read_text()), float) if p.exists() else _floats(text)
    if vals.shape != (size,):
        raise DimensionError(f"{name} must have {size} entries, got {vals.shape}")
    return vals


def _geometry(args) -> GeometryBuffers:
    if args.geometry_dir:
        return load_fit_target(args.geometry_dir).geometry
    return proxy_geometry(args.resolution, args.proxy)


def _load_envs(directory):
    files = sorted(Path(directory).glob("*.pfm"))
    if not files:
        raise FormatError(f"{directory}: no .pfm panoramas found")
    try:
        return [EnvMap(read_pfm(f)) for f in files]
    except DimensionError as exc:
        raise FormatError(str(exc)) from None


def delta_environment(direction, irradiance=1.0, height=128, sharpness=2000.0) -> EnvMap:
    """Narrow normalised lobe around ``direction`` whose solid-angle integral
    equals ``irradiance``; a stand-in for a distant point light."""
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    dirs, dw = equirect_grid(height)
    lobe = np.exp(sharpness * (dirs @ d - 1.0))
    lobe *= irradiance / np.sum(lobe * dw)
    return EnvMap(np.repeat(lobe[..., None], 3, axis=-1))


# -- commands --------------------------------------------------------------

def cmd_synth_olat(args):
    cfg = BrdfConfig.parse(args.exponents)
    rig = make_rig(args.views, args.lights, args.resolution, args.proxy, args.seed,
                   args.irradiance)
    truth = synthetic_reflectance_maps(args.resolution, cfg, args.map_seed,
                                       symmetric=not args.asymmetric, valid=rig.valid)
    frames = render_all(truth, rig, cfg)
    if args.noise > 0:
        rng = np.random.default_rng([args.seed, 1])
        for fr in frames:
            fr.image = np.clip(fr.image + args.noise * rng.standard_normal(fr.image.shape),
                               0, None).astype(np.float32) * fr.shadow[..., None]
    save_olat_set(args.out, rig, frames, cfg, truth)
    _emit({"frames": len(frames), "valid_texels": int(rig.valid.sum())}, args.stats)
    return [args.out]


def cmd_estimate(args):
    rig, frames, cfg, truth = load_olat_set(args.olat)
    if args.exponents:
        cfg = BrdfConfig.parse(args.exponents)
    expected = {(i, j) for i in range(rig.n_views) for j in range(rig.n_lights)}
    missing = expected - {(f.view, f.light) for f in frames}
    if missing and not args.allow_missing:
        raise FormatError(f"{args.olat}: {len(missing)} frames missing, e.g. {sorted(missing)[0]}")
    settings = EstimationSettings(w_reg=args.wreg, iterations=args.iterations,
                                  step_size=args.step, flip=args.flip, seed=args.seed,
                                  min_observations=args.min_obs)
    maps, diag = estimate_maps(frames, rig, cfg, settings, args.solver, args.threads)
    out = Path(args.out)
    save_maps(out, maps, cfg, {"solver": args.solver})
    write_pfm(out / "observations.pfm", diag.observations.astype(np.float32))
    write_pfm(out / "condition.pfm", np.where(np.isfinite(diag.condition), diag.condition, -1)
              .astype(np.float32))
    write_pfm(out / "flags.pfm", diag.flags.astype(np.float32))
    stats = diag.summary()
    failed = False
    if truth is not None:
        err = parameter_error(maps, truth, maps.valid)
        stats["median_relative_error"] = float(np.median(err))
        stats["max_median_error"] = args.max_median_error
        stats["pass"] = bool(stats["median_relative_error"] < args.max_median_error)
        failed = not stats["pass"]
    if args.compare:
        other = "nnls" if args.solver == "adam" else "adam"
        maps2, _ = estimate_maps(frames, rig, cfg, settings, other, args.threads)
        both = maps.valid & maps2.valid
        stats["solver_agreement"] = {
            "other": other,
            "median_relative_difference": float(np.median(parameter_error(maps, maps2, both))),
        }
    _emit(stats, args.stats)
    if failed:
        raise InvariantFailure(f"median relative error {stats['median_relative_error']:.4g} "
                               f">= {args.max_median_error}")
    return [args.out]


def cmd_synth_maps(args):
    cfg = BrdfConfig.parse(args.exponents)
    outs = []
    for n in range(args.count):
        maps = synthetic_reflectance_maps(args.resolution, cfg, args.seed + n,
                                          symmetric=not args.asymmetric)
        outs.append(str(save_maps(Path(args.out) / f"sample_{n:03d}", maps, cfg)))
    _emit({"samples": len(outs)}, args.stats)
    return [args.out]


def cmd_synth_env(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for n in range(args.count):
        env = synthetic_envmap(args.seed + n, args.height, tint=args.tint)
        write_pfm(out / f"env_{n:03d}.pfm", env.pixels)
    _emit({"environments": args.count}, args.stats)
    return [args.out]


def cmd_build_model(args):
    cfg = None
    samples = []
    for d in args.samples:
        c = maps_config(d) if (Path(d) / "maps.json").exists() else None
        if c is None:
            raise FormatError(f"{d}: not a reflectance-maps directory")
        if cfg is not None and c != cfg:
            raise DimensionError(f"{d}: exponents differ from the other samples")
        cfg = c
        samples.append(load_maps(d))
    if args.exponents and BrdfConfig.parse(args.exponents) != cfg:
        raise DimensionError("--exponents disagrees with the samples")
    model = build_model(samples, args.nr, cfg)
    save_model(model, args.out)
    _emit({"n_bases": model.n_bases, "sigmas": model.sigmas.tolist(),
           "texels": model.n_texels}, args.stats)
    return [args.out]


def cmd_build_light(args):
    envs = _load_envs(args.panoramas)
    model = build_lighting_pca(envs, args.rotations, args.nl, args.order)
    save_lighting_model(model, args.out)
    _emit({"n_bases": model.n_bases, "order": model.order,
           "sigmas": model.sigmas.tolist()}, args.stats)
    return [args.out]


def _model_and_coeffs(args):
    model = load_model(args.model)
    fit = FitResult.load(args.fit_result) if args.fit_result else None
    beta = fit.beta if fit is not None else _coeffs(args.beta, model.n_bases, "beta")
    return model, beta, fit


def _sh_light(args, fit):
    """ShVector from --sh, or decoded from --light with gamma/z."""
    if args.sh:
        return ShVector.load(args.sh)
    if args.light:
        light = load_lighting_model(args.light)
        gamma = fit.gamma if fit is not None else _coeffs(args.gamma, light.n_bases, "gamma")
        z = fit.z if fit is not None else _floats(args.z, 3)
        return decode_lighting(light, gamma, z)
    return None


def _write_image(path, img):
    write_pfm(path, img)
    write_preview_png(Path(path).with_suffix(".png"), img)


def cmd_render(args):
    model, beta, fit = _model_and_coeffs(args)
    geom = _geometry(args)
    sh = _sh_light(args, fit)
    if sh is None:
        raise DomainError("render needs --light or --sh")
    img = render_image(model, beta, sh, geometry=geom)
    _write_image(args.out, img)
    _emit({"min": float(img.min()), "max": float(img.max()),
           "mean": float(img[geom.coverage].mean()) if geom.coverage.any() else 0.0}, args.stats)
    return [args.out]


def cmd_relight(args):
    model, beta, fit = _model_and_coeffs(args)
    cfg = model.cfg
    geom = _geometry(args)
    maps = reconstruct(model, beta)
    # physical rendering: negative reconstructed parameters are clamped here only
    maps = ReflectanceMaps(np.clip(maps.diffuse, 0, None), np.clip(maps.weights, 0, None))
    direction = _floats(args.direction, 3)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = {}
    if args.sweep > 0:
        elev = np.arccos(direction[2] / np.linalg.norm(direction))
        for k in range(args.sweep):
            phi = 2 * np.pi * k / args.sweep
            d = [np.sin(elev) * np.cos(phi), np.sin(elev) * np.sin(phi), np.cos(elev)]
            _write_image(out / f"frame_{k:03d}.pfm",
                         render_point_light(maps, cfg, d, args.irradiance, geom))
        stats["frames"] = args.sweep
    else:
        point = render_point_light(maps, cfg, direction, args.irradiance, geom)
        _write_image(out / "point.pfm", point)
        stats["point_mean"] = float(point[geom.coverage].mean()) if geom.coverage.any() else 0.0
        if args.sh_orders:
            env = delta_environment(direction, args.irradiance, args.env_height)
            gaps = {}
            scale = max(float(np.abs(point[geom.coverage]).mean()), 1e-12)
            for order in (int(o) for o in args.sh_orders.split(",")):
                img = render_maps(maps, cfg, project_envmap(env, order), geom)
                _write_image(out / f"sh_order_{order}.pfm", img)
                gaps[str(order)] = float(np.abs(img - point)[geom.coverage].mean() / scale)
            stats["relative_gap_by_order"] = gaps
    _emit(stats, args.stats)
    return [args.out]


def cmd_synth_target(args):
    model = load_model(args.model)
    light = load_lighting_model(args.light)
    rng = np.random.default_rng(args.seed)
    beta = rng.standard_normal(model.n_bases) * model.sigmas * args.scale
    gamma = rng.standard_normal(light.n_bases) * light.sigmas * args.light_scale
    z = np.full(3, args.brightness)
    target = make_target(model, beta, light, gamma, z, _geometry(args))
    save_fit_target(args.out, target)
    (Path(args.out) / "truth.json").write_text(json.dumps(
        {"beta": beta.tolist(), "gamma": gamma.tolist(), "z": z.tolist()}, indent=2))
    _emit({"skin_pixels": int(target.skin.sum())}, args.stats)
    return [args.out]


def _fit_settings(args):
    return FitSettings(iterations=args.iterations, lr=args.lr, w_l1=args.w_l1,
                       w_coef=args.w_coef, w_light=args.w_light)


def cmd_fit(args):
    target = load_fit_target(args.target)
    model = load_model(args.model)
    light = load_lighting_model(args.light)
    result = fit_image(target, model, light, _fit_settings(args))
    result.save(args.out)
    stats = {"losses": result.losses, "max_l1": args.max_l1,
             "pass": bool(result.losses["l1"] < args.max_l1)}
    _emit(stats, args.stats)
    if not stats["pass"]:
        raise InvariantFailure(f"L1 {result.losses['l1']:.4g} >= {args.max_l1}")
    return [args.out]


def cmd_finetune(args):
    targets = [load_fit_target(t) for t in args.targets]
    model = load_model(args.model)
    light = load_lighting_model(args.light)
    cfg = FinetuneConfig(w_l1=args.w_l1, w_coef=args.w_coef, w_upd=args.w_upd,
                         w_light=args.w_light, epochs=args.epochs,
                         inner_iterations=args.inner_iterations, model_steps=args.model_steps,
                         model_lr=args.model_lr, coef_lr=args.coef_lr)
    new, history = finetune_model(targets, model, light, cfg, args.first_fit_iterations,
                                  return_history=True, threads=args.threads)
    save_model(new, args.out)
    _emit({"train_l1_by_epoch": history}, args.stats)
    return [args.out]


def cmd_sample(args):
    model = load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tiles = []
    for n in range(args.count):
        maps = sample_model(model, args.seed + n, args.scale)
        save_maps(out / f"sample_{n:03d}", maps, model.cfg)
        spec = maps.weights.sum(axis=-1, keepdims=True)
        tiles.append(np.concatenate([maps.diffuse, np.repeat(spec, 3, axis=-1)], axis=0))
    write_preview_png(out / "grid.png", np.concatenate(tiles, axis=1))
    _emit({"samples": args.count}, args.stats)
    return [args.out]


def _check_orthonormal(bases, tol):
    b = bases.astype(np.float64)
    live = np.linalg.norm(b, axis=0) > 0
    b = b[:, live]
    return float(np.abs(b.T @ b - np.eye(b.shape[1])).max()) if b.size else 0.0


def cmd_inspect(args):
    path = Path(args.file)
    head = path.read_bytes()[:4]
    stats = {"file": str(path)}
    if head == b"MFRM":
        m = load_model(path)
        orth = _check_orthonormal(m.diffuse_bases, args.tol)
        s = m.sigmas
        stats.update(kind="reflectance model", height=m.height, width=m.width,
                     exponents=list(m.exponents), n_bases=m.n_bases, sigmas=s.tolist(),
                     orthonormality_error=orth,
                     sigmas_nonincreasing=bool(np.all(np.diff(s) <= 0)))
        ok = orth <= args.tol and stats["sigmas_nonincreasing"]
    elif head == b"MFLM":
        m = load_lighting_model(path)
        orth = _check_orthonormal(m.bases, args.tol)
        n = (m.order + 1) ** 2
        dc = m.mean.reshape(3, n)[:, 0]
        band0 = np.abs(m.bases.reshape(3, n, -1)[:, 0, :]).max(initial=0.0)
        stats.update(kind="lighting model", order=m.order, n_bases=m.n_bases,
                     sigmas=m.sigmas.tolist(), orthonormality_error=orth,
                     mean_band0=dc.tolist(), band0_basis_max=float(band0))
        ok = orth <= args.tol and np.all(np.abs(dc - 1) <= args.tol) and band0 <= args.tol
    else:
        raise FormatError(f"{path}: unknown file type (magic {head!r})")
    stats["invariants_ok"] = bool(ok)
    _emit(stats, args.stats)
    if not ok:
        raise InvariantFailure(f"{path}: invariant check failed")
    return []


# -- parser ----------------------------------------------------------------

def _common(p, seed=0):
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--threads", type=int, default=1,
                   help="worker count; results do not depend on it")
    p.add_argument("--stats", help="write stats JSON here instead of stdout")
    p.add_argument("--manifest", help="run manifest path (default: next to the output)")


def _geometry_args(p):
    p.add_argument("--geometry-dir", help="fit-target directory providing geometry buffers")
    p.add_argument("--resolution", type=int, default=64, help="proxy image resolution")
    p.add_argument("--proxy", default="hemisphere", help="proxy surface kind")


def _fit_args(p):
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--w-l1", type=float, default=2.0)
    p.add_argument("--w-coef", type=float, default=1e-3)
    p.add_argument("--w-light", type=float, default=10.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reflmm", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-olat", help="render a synthetic OLAT set")
    _common(p, seed=7)
    p.add_argument("--out", required=True)
    p.add_argument("--views", type=int, default=9)
    p.add_argument("--lights", type=int, default=11)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--proxy", default="hemisphere")
    p.add_argument("--exponents", default="1,8,64")
    p.add_argument("--irradiance", type=float, default=1.0)
    p.add_argument("--map-seed", type=int, default=3)
    p.add_argument("--asymmetric", action="store_true")
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth_olat)

    p = sub.add_parser("estimate", help="per-texel inverse rendering of an OLAT set")
    _common(p)
    p.add_argument("olat")
    p.add_argument("--out", required=True)
    p.add_argument("--solver", choices=("adam", "nnls"), default="adam")
    p.add_argument("--exponents")
    p.add_argument("--wreg", type=float, default=100.0)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--step", type=float, default=5e-3)
    p.add_argument("--flip", type=float, default=0.5)
    p.add_argument("--min-obs", type=int, default=6)
    p.add_argument("--max-median-error", type=float, default=0.02)
    p.add_argument("--compare", action="store_true", help="also run the other solver")
    p.add_argument("--allow-missing", action="store_true")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("synth-maps", help="write synthetic reflectance-map samples")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--exponents", default="1,8,64")
    p.add_argument("--asymmetric", action="store_true")
    p.set_defaults(func=cmd_synth_maps)

    p = sub.add_parser("synth-env", help="write synthetic environment panoramas")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--tint", type=float, default=0.3)
    p.set_defaults(func=cmd_synth_env)

    p = sub.add_parser("build-model", help="PCA reflectance model from map directories")
    _common(p)
    p.add_argument("samples", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--nr", type=int)
    p.add_argument("--exponents")
    p.set_defaults(func=cmd_build_model)

    p = sub.add_parser("build-light", help="SH lighting PCA from a panorama directory")
    _common(p)
    p.add_argument("panoramas")
    p.add_argument("--out", required=True)
    p.add_argument("--rotations", type=int, default=8)
    p.add_argument("--nl", type=int)
    p.add_argument("--order", type=int, default=8)
    p.set_defaults(func=cmd_build_light)

    for name, func, hlp in (("render", cmd_render, "render model coefficients under SH light"),
                            ("relight", cmd_relight, "re-render under a point light")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        _geometry_args(p)
        p.add_argument("--model", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--beta", help="comma list or JSON file (default zeros)")
        p.add_argument("--fit-result", help="take beta (and lighting) from a fit result")
        if name == "render":
            p.add_argument("--light", help="lighting PCA model")
            p.add_argument("--gamma")
            p.add_argument("--z", default="1,1,1")
            p.add_argument("--sh", help="SH coefficient file used directly")
        else:
            p.add_argument("--direction", default="0,0,1")
            p.add_argument("--irradiance", type=float, default=1.0)
            p.add_argument("--sweep", type=int, default=0, help="number of azimuth frames")
            p.add_argument("--sh-orders", help="also render a delta environment at these orders")
            p.add_argument("--env-height", type=int, default=128)
        p.set_defaults(func=func)

    p = sub.add_parser("synth-target", help="render a fit target from known coefficients")
    _common(p)
    _geometry_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--light", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, default=0.5)
    p.add_argument("--light-scale", type=float, default=0.0)
    p.add_argument("--brightness", type=float, default=1.0)
    p.set_defaults(func=cmd_synth_target)

    p = sub.add_parser("fit", help="fit coefficients to one target")
    _common(p)
    _fit_args(p)
    p.add_argument("target")
    p.add_argument("--model", required=True)
    p.add_argument("--light", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-l1", type=float, default=1e-3)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("finetune", help="update-by-reconstruction of the reflectance model")
    _common(p)
    p.add_argument("targets", nargs="+")
    p.add_argument("--model", required=True)
    p.add_argument("--light", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--inner-iterations", type=int, default=100)
    p.add_argument("--first-fit-iterations", type=int, default=500)
    p.add_argument("--model-steps", type=int, default=10)
    p.add_argument("--model-lr", type=float, default=1e-5)
    p.add_argument("--coef-lr", type=float, default=1e-2)
    p.add_argument("--w-l1", type=float, default=2.0)
    p.add_argument("--w-coef", type=float, default=1e-3)
    p.add_argument("--w-upd", type=float, default=10.0)
    p.add_argument("--w-light", type=float, default=10.0)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("sample", help="random draws from a reflectance model")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--scale", type=float, default=1.0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("inspect", help="print a model header and check its invariants")
    _common(p)
    p.add_argument("file")
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("replay", help="re-run a command from its run manifest")
    p.add_argument("manifest")
    p.set_defaults(func=None)

    return ap


def _manifest_path(args, outputs):
    if args.manifest:
        return Path(args.manifest)
    if outputs:
        out = Path(outputs[0])
        if out.is_dir():
            return out / "run_manifest.json"
        return out.with_name(out.name + ".run_manifest.json")
    if args.command == "inspect":
        return Path(str(args.file) + ".inspect.run_manifest.json")
    return Path(f"reflmm-{args.command}.run_manifest.json")


def _write_manifest(args, argv, outputs, started, wall, code):
    config = {k: v for k, v in vars(args).items() if k != "func"}
    inputs = {k: v for k, v in config.items()
              if k in ("olat", "samples", "panoramas", "model", "light", "target", "targets",
                       "geometry_dir", "fit_result", "sh", "file") and v}
    manifest = {"command": args.command, "argv": list(argv), "config": config,
                "inputs": inputs, "outputs": [str(o) for o in outputs],
                "seed": getattr(args, "seed", None), "tool_version": __version__,
                "started": started, "wall_clock_s": wall, "exit_code": code}
    path = _manifest_path(args, outputs)
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    except OSError as exc:
        log.warning("could not write run manifest %s: %s", path, exc)


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("REFLMM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        try:
            man = json.loads(Path(args.manifest).read_text())
            return main(man["argv"])
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            print(f"reflmm: cannot replay {args.manifest}: {exc}", file=sys.stderr)
            return EXIT_FORMAT
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    t0 = time.perf_counter()
    code, outputs = EXIT_OK, []
    try:
        outputs = args.func(args) or []
    except InvariantFailure as exc:
        print(f"reflmm: invariant check failed: {exc}", file=sys.stderr)
        code = EXIT_INVARIANT
    except (FormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"reflmm: input error: {exc}", file=sys.stderr)
        code = EXIT_FORMAT
    except (OptimizationError, InsufficientObservationsError, FloatingPointError) as exc:
        print(f"reflmm: numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    except (DomainError, DimensionError) as exc:
        print(f"reflmm: invalid input: {exc}", file=sys.stderr)
        code = EXIT_FORMAT
    if not outputs and getattr(args, "out", None):
        outputs = [args.out]
    if outputs and not Path(outputs[0]).parent.exists():
        outputs = []
    _write_manifest(args, argv, outputs, started, time.perf_counter() - t0, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
