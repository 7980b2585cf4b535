"""Ando 模型频率块与四元辛正规形测试"""
import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.errors import ContractError
from app.models import BlockCase, ChainConfig, ChannelKind, ModelKind, ModelParams
from app.services.ando_service import ando_service
from app.services.lyapunov_service import lyapunov_service
from app.services.model_service import model_service
from app.services.symplectic_service import symplectic_service

GRID = [
    (0.5, 0.3, 2 * math.pi / 3),
    (1.1, 0.2, math.pi / 2),
    (3.5, 0.4, math.pi / 3),
    (-2.7, 0.6, 1.0),
]

HYPERBOLIC_COUNT = {BlockCase.G1: 2, BlockCase.G2: 0, BlockCase.G3: 1, BlockCase.G4: 2}


@pytest.mark.parametrize("E,t,eta", GRID)
def test_sign_reversal_similarity(E, t, eta):
    """S_{-η} 与 S_η 经 diag(q2, q2) 相似"""
    assert ando_service.similarity_deviation(E, t, eta) < 1e-12


@pytest.mark.parametrize("E,t,eta", GRID)
def test_characteristic_polynomial(E, t, eta):
    spectrum = ando_service.block_spectrum(E, t, eta)
    roots = ando_service.block_eigenvalues(spectrum)
    assert np.abs(ando_service.characteristic_polynomial(spectrum, roots)).max() < 1e-8
    ev = np.linalg.eigvals(ando_service.block_matrix(E, t, eta))
    assert np.abs(ando_service.characteristic_polynomial(spectrum, ev)).max() < 1e-8


@pytest.mark.parametrize("E,t,eta", GRID)
def test_block_eigenvector(E, t, eta):
    spectrum = ando_service.block_spectrum(E, t, eta)
    S = ando_service.block_matrix(E, t, eta)
    for kappa in (spectrum.kappa_plus, spectrum.kappa_minus):
        v = ando_service.block_eigenvector(E, t, eta, kappa)
        assert np.abs(S @ v - kappa * v).max() < 1e-9 * max(1.0, abs(kappa))


@pytest.mark.parametrize("E,t,eta", GRID)
def test_block_basis(E, t, eta):
    """Ñ⁻¹·(8x8 扇区块)·Ñ = D̃，Ñ 辛"""
    basis = ando_service.block_basis(E, t, eta)
    assert basis.residual < 1e-8
    assert symplectic_service.symplectic_deviation(basis.N) < 1e-8
    assert len(basis.channels) == 2
    hyper = sum(ch.kind is ChannelKind.HYPERBOLIC for ch in basis.channels)
    assert hyper == HYPERBOLIC_COUNT[basis.spectrum.case]


def test_self_conjugate_sector():
    """k = 0 扇区化为 A(μ0) = [[μ0, -1], [1, 0]]，μ0 = (E - 2)/√(1+t²)"""
    E, t = 0.5, 0.3
    basis = ando_service.self_conjugate_basis(E, t, 0.0)
    assert basis.residual < 1e-12
    assert len(basis.channels) == 1
    ch = basis.channels[0]
    mu0 = (E - 2) / math.sqrt(1 + t * t)
    assert ch.kind is ChannelKind.ELLIPTIC
    assert ch.eta == pytest.approx(math.acos(mu0 / 2))


@pytest.mark.parametrize("L", [1, 2, 5, 6])
def test_sectors_cover_frequencies(L):
    sectors = ando_service.sectors(L)
    freqs = sorted(l for sec in sectors for l in sec)
    assert freqs == list(range(L))
    assert all(len(sec) == 1 for sec in sectors if sec[0] in (0, L / 2))


def test_kramers_pairs_in_normal_form():
    """每个四元通道的 R_h 上块两个奇异值相同，均为 |κ|"""
    bundle = model_service.build_normal_form(ModelParams(model=ModelKind.ANDO, L=4, E=1.1, t=0.2))
    ch = bundle.channels
    for c in range(ch.L):
        blk = bundle.R_h[2 * c:2 * c + 2, 2 * c:2 * c + 2]
        sv = np.linalg.svd(blk, compute_uv=False)
        np.testing.assert_allclose(np.log(sv), ch.ln_kappa[c], atol=1e-10)


def test_zero_spin_orbit_rejected():
    with pytest.raises(ContractError):
        model_service.build_normal_form(ModelParams(model=ModelKind.ANDO, L=3, E=0.5, t=0.0))
    with pytest.raises(ContractError):
        ando_service.build_normal_form_ando(ModelParams(model=ModelKind.ANDERSON_REAL, L=3, E=0.5))


def test_small_spin_orbit_doubles_real_spectrum():
    """t → 0：Ando 谱为实模型谱的二重简并"""
    real = ModelParams(model=ModelKind.ANDERSON_REAL, L=2, E=0.5, lam=0.5)
    ando = ModelParams(model=ModelKind.ANDO, L=2, E=0.5, t=1e-3, lam=0.5)
    config = ChainConfig(steps=20000, burn_in=0, keep_snapshots=False, threads=1, seed=11)
    est_real, _ = lyapunov_service.run_chain(model_service.build_normal_form(real), real, config)
    est_ando, _ = lyapunov_service.run_chain(model_service.build_normal_form(ando), ando, config)
    columns = np.asarray(est_ando.gamma)
    assert len(columns) == 2 * len(est_real.gamma)
    np.testing.assert_allclose(columns[0::2], columns[1::2], atol=1e-8)
    gamma, _ = lyapunov_service.channel_exponents(est_ando)
    np.testing.assert_allclose(gamma, est_real.gamma, rtol=0.02, atol=2e-3)
