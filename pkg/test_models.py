"""模型转移矩阵、通道分类与辛正规形测试"""
import os
import sys

import numpy as np
import pytest
from pydantic import ValidationError

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.errors import ContractError, DimensionError, InternalBandEdgeError
from app.models import ChannelKind, DisorderKind, ModelKind, ModelParams
from app.services.model_service import model_service
from app.services.symplectic_service import symplectic_service

MODELS = [
    ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=4, E=2.5, phi=0.5),
    ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=3, E=0.5, phi=0.7),
    ModelParams(model=ModelKind.ANDERSON_REAL, L=4, E=2.5),
    ModelParams(model=ModelKind.ANDERSON_REAL, L=5, E=0.3),
    ModelParams(model=ModelKind.ANDO, L=3, E=0.5, t=0.3),
    ModelParams(model=ModelKind.ANDO, L=4, E=1.1, t=0.2),
    ModelParams(model=ModelKind.SLAB, n_side=2, dim=3, E=0.3, phi_vec=[0.4, 1.3]),
    ModelParams(model=ModelKind.SLAB, n_side=3, dim=2, E=0.9, phi_vec=[0.8]),
]


def _id(params: ModelParams) -> str:
    return f"{params.model.value}-L{params.L}-E{params.E}"


@pytest.fixture
def rng():
    return np.random.default_rng(5)


@pytest.mark.parametrize("kind", list(DisorderKind))
def test_disorder_moments(kind, rng):
    """均值 0、方差 1"""
    w = model_service.sample_disorder(kind, 200000, rng)
    assert abs(w.mean()) < 0.015
    assert abs(w.var() - 1) < 0.02
    assert np.abs(w).max() <= 3.1


@pytest.mark.parametrize("params", MODELS, ids=_id)
def test_transfer_matrix_membership(params, rng):
    w = model_service.sample_disorder(DisorderKind.UNIFORM, params.L, rng)
    T = model_service.transfer_matrix(params.model_copy(update={"lam": 0.4}), w)
    assert symplectic_service.is_hermitian_symplectic(T, params.symmetry_class, tol=1e-9)


def test_transfer_matrix_dimension():
    params = ModelParams(model=ModelKind.ANDERSON_REAL, L=3, E=0.5)
    with pytest.raises(DimensionError):
        model_service.transfer_matrix(params, np.zeros(2))


@pytest.mark.parametrize("params", MODELS, ids=_id)
def test_normal_form(params):
    """B⁻¹·S(λ=0)·B = R_h·R_e 且 B 辛"""
    bundle = model_service.build_normal_form(params)
    assert bundle.residual < 1e-9
    assert bundle.symmetry_class is params.symmetry_class
    assert symplectic_service.symplectic_deviation(bundle.basis) < 1e-9
    ch = bundle.channels
    assert ch.L == params.L
    kinds = [k is ChannelKind.HYPERBOLIC for k in ch.kinds]
    assert kinds == sorted(kinds, reverse=True)
    hyp = ch.ln_kappa[:ch.L_h]
    assert np.all(hyp > 0)
    assert np.all(np.diff(hyp) <= 1e-12)
    np.testing.assert_allclose(ch.ln_kappa[ch.L_h:], 0.0, atol=1e-12)


@pytest.mark.parametrize("params", MODELS, ids=_id)
def test_perturbation_is_nilpotent(params, rng):
    """P = B⁻¹·δS·B ∈ hs 且 P² = 0"""
    bundle = model_service.build_normal_form(params)
    gen = model_service.sample_perturbation(bundle, params, rng)
    P = gen.P
    J = symplectic_service.J(bundle.half)
    scale = np.abs(P).max()
    assert np.abs(P.conj().T @ J + J @ P).max() < 1e-10 * max(1.0, scale)
    assert np.abs(P @ P).max() < 1e-10 * max(1.0, scale) ** 2


@pytest.mark.parametrize("params", MODELS, ids=_id)
def test_perturbation_reproduces_transfer_matrix(params, rng):
    """B·R·(1 + λP)·B⁻¹ 等于含无序的转移矩阵"""
    lam = 0.3
    bundle = model_service.build_normal_form(params)
    w = model_service.sample_disorder(DisorderKind.UNIFORM, params.L, rng)
    P = model_service.perturbation_from_disorder(bundle, w).P
    T = model_service.transfer_matrix(params.model_copy(update={"lam": lam}), w)
    rebuilt = bundle.basis @ bundle.R @ (np.eye(P.shape[0]) + lam * P) @ bundle.basis_inv
    np.testing.assert_allclose(rebuilt, T, atol=1e-9)


def test_channel_classification_real():
    """μ_l = E - 2cos(2πl/L)：L=3, E=3 时 μ = 1, 4, 4"""
    bundle = model_service.build_normal_form(ModelParams(model=ModelKind.ANDERSON_REAL, L=3, E=3.0))
    ch = bundle.channels
    assert ch.L_h == 2 and ch.L_e == 1
    np.testing.assert_allclose(ch.mu, [4.0, 4.0, 1.0], atol=1e-12)
    rho = 2 + np.sqrt(3)
    np.testing.assert_allclose(ch.ln_kappa[:2], np.log(rho), atol=1e-12)
    assert ch.eta[2] == pytest.approx(np.arccos(0.5))


def test_channel_block_elliptic_rotation():
    N, rho, kappa, eta, kind = model_service.channel_block(-1.0)
    assert kind is ChannelKind.ELLIPTIC
    A = np.array([[-1.0, -1.0], [1.0, 0.0]])
    c, s = np.cos(eta), np.sin(eta)
    np.testing.assert_allclose(np.linalg.inv(N) @ A @ N, [[c, -s], [s, c]], atol=1e-12)


def test_internal_band_edge():
    with pytest.raises(InternalBandEdgeError) as info:
        model_service.build_normal_form(ModelParams(model=ModelKind.ANDERSON_REAL, L=1, E=4.0))
    assert info.value.channel == 0


def test_builder_contracts():
    with pytest.raises(ContractError):
        model_service.build_normal_form(ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=3, E=0.5))
    with pytest.raises(ContractError):
        model_service.build_normal_form_real(ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=3, E=0.5, phi=0.3))
    with pytest.raises(ContractError):
        model_service.build_normal_form_slab(ModelParams(model=ModelKind.ANDERSON_REAL, L=3, E=0.5))


def test_slab_params():
    params = ModelParams(model=ModelKind.SLAB, n_side=3, dim=3, E=0.1, phi=0.2)
    assert params.L == 9
    assert params.phi_vec == [0.2, 0.2]
    with pytest.raises(ValidationError):
        ModelParams(model=ModelKind.SLAB, dim=3, E=0.1)
    with pytest.raises(ValidationError):
        ModelParams(model=ModelKind.SLAB, n_side=3, dim=3, phi_vec=[0.1])


def test_fourier_bases_unitary():
    for n in (1, 4, 7):
        m = model_service.fourier_basis(n)
        np.testing.assert_allclose(m.conj().T @ m, np.eye(n), atol=1e-12)
        r = model_service.real_fourier_basis(n)
        np.testing.assert_allclose(r.T @ r, np.eye(n), atol=1e-12)


def test_bundle_text_export():
    params = MODELS[0]
    bundle = model_service.build_normal_form(params)
    loaded = model_service.bundle_from_text(model_service.bundle_to_text(bundle))
    np.testing.assert_allclose(loaded.basis, bundle.basis, atol=1e-15)
    np.testing.assert_allclose(loaded.R, bundle.R, atol=1e-15)
    assert loaded.channels.kinds == bundle.channels.kinds
    assert loaded.residual == pytest.approx(bundle.residual, abs=1e-15)


@pytest.mark.parametrize("L,L_e", [(52, 31), (20, 12)])
def test_magnetic_elliptic_count(L, L_e):
    """E = 1.31, φ = 2π·0.23：μ_l = E - 2cos(φ + 2πl/L)"""
    params = ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=L, E=1.31, phi=2 * np.pi * 0.23)
    ch = model_service.build_normal_form(params).channels
    mu = params.E - 2 * np.cos(params.phi + 2 * np.pi * np.arange(L) / L)
    assert ch.L_e == L_e
    assert ch.L_e == int(np.sum(np.abs(mu) < 2))
    np.testing.assert_allclose(np.sort(ch.mu), np.sort(mu), atol=1e-12)


def test_zero_flux_elliptic_count():
    """φ = 0 的 L = 20 管有 13 个 elliptic 通道"""
    ch = model_service.build_normal_form(ModelParams(model=ModelKind.ANDERSON_REAL, L=20, E=1.31)).channels
    assert ch.L_e == 13
    assert ch.L_h == 7


def test_slab_two_dimensional_is_magnetic_tube(rng):
    """d = 2 的 slab 与磁 Anderson 管逐项一致"""
    slab = ModelParams(model=ModelKind.SLAB, n_side=5, dim=2, E=0.9, phi_vec=[0.8])
    tube = ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=5, E=0.9, phi=0.8)
    a = model_service.build_normal_form(slab)
    b = model_service.build_normal_form(tube)
    np.testing.assert_allclose(a.channels.mu, b.channels.mu, atol=1e-12)
    assert a.channels.kinds == b.channels.kinds
    np.testing.assert_allclose(a.channels.ln_kappa, b.channels.ln_kappa, atol=1e-12)
    np.testing.assert_allclose(a.basis, b.basis, atol=1e-12)
    np.testing.assert_allclose(a.R, b.R, atol=1e-12)
    w = model_service.sample_disorder(DisorderKind.UNIFORM, 5, rng)
    np.testing.assert_allclose(model_service.perturbation_from_disorder(a, w).P,
                               model_service.perturbation_from_disorder(b, w).P, atol=1e-12)


def test_slab_three_dimensional_channel_count():
    """N = 4, d = 3, E = 1, φ = (0.3, 0.7)：逐点枚举 μ"""
    params = ModelParams(model=ModelKind.SLAB, n_side=4, dim=3, E=1.0, phi_vec=[0.3, 0.7])
    ch = model_service.build_normal_form(params).channels
    k = 2 * np.pi * np.arange(4) / 4
    mu = np.array([1.0 - 2 * np.cos(0.3 + a) - 2 * np.cos(0.7 + b) for a in k for b in k])
    assert ch.L == 16
    assert ch.L_e == int(np.sum(np.abs(mu) < 2))
    np.testing.assert_allclose(np.sort(ch.mu), np.sort(mu), atol=1e-12)


def test_fourier_disorder_is_toeplitz(rng):
    """W_{l,l'} = ŵ_{l-l'}"""
    params = ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=6, E=0.5, phi=0.4)
    w = model_service.sample_disorder(DisorderKind.UNIFORM, 6, rng)
    W = model_service.fourier_disorder(params, w)
    w_hat = model_service.disorder_fourier_coefficients(w)
    idx = np.arange(6)
    np.testing.assert_allclose(W, w_hat[(idx[:, None] - idx[None, :]) % 6], atol=1e-13)
    np.testing.assert_allclose(W, np.roll(np.roll(W, 1, axis=0), 1, axis=1), atol=1e-13)
    np.testing.assert_allclose(W, W.conj().T, atol=1e-13)


def test_disorder_fourier_second_moments(rng):
    """E[ŵ_p ŵ_q] = δ_{p+q≡0}/L，3σ 以内"""
    L, n = 8, 100000
    w = model_service.sample_disorder(DisorderKind.UNIFORM, n * L, rng).reshape(n, L)
    w_hat = model_service.disorder_fourier_coefficients(w)
    assert w_hat.shape == (n, L)
    for p in range(L):
        for q in range(p, L):
            x = w_hat[:, p] * w_hat[:, q]
            mean = x.mean()
            err = np.sqrt(np.mean(np.abs(x - mean) ** 2) / n)
            expected = 1.0 / L if (p + q) % L == 0 else 0.0
            assert abs(mean - expected) <= 3 * err, (p, q)


@pytest.mark.parametrize("params", [MODELS[1], MODELS[3], MODELS[4]], ids=_id)
def test_perturbation_has_zero_mean(params, rng):
    bundle = model_service.build_normal_form(params)
    Ps = np.array([model_service.sample_perturbation(bundle, params, rng).P for _ in range(4000)])
    mean = Ps.mean(axis=0)
    sigma = np.sqrt(np.sum(np.abs(Ps - mean) ** 2) / (len(Ps) - 1) / len(Ps))
    assert np.linalg.norm(mean) < 3 * sigma


def test_real_and_magnetic_builders_at_zero_flux(rng):
    """φ = 0 时两个构造器差一个辛酉变换 A = B⁻¹·B̂，P̂ = A*·P·A"""
    params = ModelParams(model=ModelKind.ANDERSON_REAL, L=5, E=0.3)
    real = model_service.build_normal_form_real(params)
    magnetic = model_service.build_normal_form_magnetic(params, strict=False)
    np.testing.assert_allclose(real.channels.mu, magnetic.channels.mu, atol=1e-12)
    assert real.channels.kinds == magnetic.channels.kinds
    A = magnetic.basis_inv @ real.basis
    np.testing.assert_allclose(A.conj().T @ A, np.eye(10), atol=1e-10)
    assert symplectic_service.symplectic_deviation(A) < 1e-10
    w = model_service.sample_disorder(DisorderKind.UNIFORM, 5, rng)
    P = model_service.perturbation_from_disorder(magnetic, w).P
    P_hat = model_service.perturbation_from_disorder(real, w).P
    np.testing.assert_allclose(P_hat, A.conj().T @ P @ A, atol=1e-10)
