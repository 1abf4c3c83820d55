import numpy as np
import pytest

from reflmm.brdf import BrdfConfig, ReflectanceMaps
from reflmm.errors import DimensionError, DomainError, FormatError
from reflmm.reflectance import (MorphableReflectanceModel, build_model, load_model,
                                maps_to_vector, project_coeffs, reconstruct, sample_model,
                                save_model)
from reflmm.synthetic import synthetic_reflectance_maps

CFG = BrdfConfig()


@pytest.fixture(scope="module")
def samples():
    return [synthetic_reflectance_maps(12, CFG, seed=s, symmetric=s % 2 == 0) for s in range(7)]


@pytest.fixture(scope="module")
def model(samples):
    return build_model(samples, None, CFG)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_shapes_and_orthonormality(model):
    assert model.n_bases == 6
    U = model.diffuse_bases.astype(np.float64)
    np.testing.assert_allclose(U.T @ U, np.eye(6), atol=1e-6)
    assert np.all(np.diff(model.sigmas) <= 0) and np.all(model.sigmas > 0)


def test_duplicates_have_zero_variance(samples):
    m = build_model([samples[0], samples[0]], 1, CFG)
    np.testing.assert_allclose(m.mean, maps_to_vector(samples[0]), rtol=1e-6)
    np.testing.assert_allclose(m.sigmas, 0, atol=1e-6)


def test_full_rank_reconstruction(model, samples):
    for s in samples:
        rec = reconstruct(model, project_coeffs(model, s))
        assert rel(maps_to_vector(rec), maps_to_vector(s)) <= 1e-4
        # the transfer keeps the training correspondence in the specular block
        assert rel(rec.weights.astype(float), s.weights.astype(float)) <= 1e-3


def test_reconstruct_linearity(model):
    mean = maps_to_vector(reconstruct(model, np.zeros(6)))
    np.testing.assert_allclose(mean, model.mean, rtol=1e-7)
    e = np.zeros(6)
    e[2] = model.sigmas[2]
    plus = maps_to_vector(reconstruct(model, e))
    minus = maps_to_vector(reconstruct(model, -e))
    np.testing.assert_allclose(plus + minus, 2 * mean, atol=1e-5)
    with pytest.raises(DimensionError):
        reconstruct(model, np.zeros(5))


def test_project_round_trip_and_projector(model):
    beta = np.random.default_rng(0).normal(size=6) * model.sigmas
    maps = reconstruct(model, beta)
    np.testing.assert_allclose(project_coeffs(model, maps), beta, atol=1e-5)
    assert np.allclose(project_coeffs(model, reconstruct(model, np.zeros(6))), 0, atol=1e-5)
    # perturb the diffuse block orthogonally to the span
    U = model.diffuse_bases.astype(np.float64)
    d = np.random.default_rng(1).normal(size=U.shape[0])
    d -= U @ (U.T @ d)
    pert = ReflectanceMaps(maps.diffuse + 1e-2 * d.reshape(maps.diffuse.shape), maps.weights)
    np.testing.assert_allclose(project_coeffs(model, pert), project_coeffs(model, maps),
                               atol=1e-5)


def test_diffuse_block_ignores_specular_bases(model):
    beta = np.random.default_rng(2).normal(size=6)
    alt = MorphableReflectanceModel(model.height, model.width, model.exponents, model.mean,
                                    model.diffuse_bases, np.zeros_like(model.specular_bases),
                                    model.sigmas)
    np.testing.assert_array_equal(reconstruct(alt, beta).diffuse, reconstruct(model, beta).diffuse)


def test_centering(samples):
    D = np.stack([s.diffuse.astype(np.float64).reshape(-1) for s in samples], 1)
    centred = D - D.mean(1, keepdims=True)
    assert np.abs(centred.sum(1)).max() <= 1e-6 * len(samples)


def test_sampling(model):
    a = sample_model(model, seed=3)
    np.testing.assert_array_equal(a.params(), sample_model(model, seed=3).params())
    tiny = sample_model(model, seed=3, scale=1e-9)
    np.testing.assert_allclose(maps_to_vector(tiny), model.mean, atol=1e-6)
    with pytest.raises(DomainError):
        sample_model(model, scale=0)
    betas = np.stack([sample_model(model, s, 0.5, return_beta=True)[1] for s in range(10000)])
    np.testing.assert_allclose(betas.var(0), (0.5 * model.sigmas.astype(float)) ** 2, rtol=0.05)


def test_build_errors(samples):
    with pytest.raises(DomainError):
        build_model(samples[:1])
    with pytest.raises(DomainError):
        build_model(samples, n_bases=7, cfg=CFG)
    with pytest.raises(DimensionError):
        build_model(samples + [synthetic_reflectance_maps(8, CFG)], cfg=CFG)
    with pytest.raises(DimensionError):
        build_model(samples, cfg=BrdfConfig((8.0,)))


def test_invalid_texels_carry_the_mean(samples):
    valid = np.ones((12, 12), bool)
    valid[0, :3] = False
    masked = [ReflectanceMaps(s.diffuse, s.weights, valid) for s in samples]
    m = build_model(masked, None, CFG)
    idx = np.arange(3)
    rows = np.concatenate([3 * idx + c for c in range(3)])
    np.testing.assert_array_equal(m.diffuse_bases[rows], 0)


def test_save_load_bitwise(tmp_path, model):
    save_model(model, tmp_path / "m.mfrm")
    back = load_model(tmp_path / "m.mfrm")
    assert (back.height, back.width, back.exponents) == (model.height, model.width,
                                                         model.exponents)
    for f in ("mean", "diffuse_bases", "specular_bases", "sigmas"):
        assert getattr(back, f).tobytes() == getattr(model, f).tobytes()


def test_load_rejects_corruption(tmp_path, model):
    save_model(model, tmp_path / "m.mfrm")
    data = (tmp_path / "m.mfrm").read_bytes()
    bad = {"trunc": data[:100], "magic": b"MFLM" + data[4:],
           "crc": data[:60] + bytes([data[60] ^ 1]) + data[61:]}
    for name, blob in bad.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(FormatError):
            load_model(tmp_path / name)
