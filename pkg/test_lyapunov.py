"""转移矩阵链与 Lyapunov 指数估计测试"""
import os
import sys

import numpy as np
import pytest
from scipy.linalg import expm

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.errors import PartialEnsembleError, SingularActionError
from app.models import ChainConfig, ModelKind, ModelParams, SymmetryClass
from app.services.frame_service import frame_service
from app.services.lyapunov_service import lyapunov_service
from app.services.model_service import model_service
from app.services.perturbation_service import perturbation_service
from app.services.symplectic_service import symplectic_service

FREE_MODELS = [
    ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=4, E=2.5, phi=0.5),
    ModelParams(model=ModelKind.ANDERSON_REAL, L=4, E=2.5),
    ModelParams(model=ModelKind.ANDO, L=4, E=1.1, t=0.2),
    ModelParams(model=ModelKind.SLAB, n_side=2, dim=3, E=0.3, phi_vec=[0.4, 1.3]),
]


def _chain(steps, **kw):
    kw.setdefault("burn_in", 0)
    kw.setdefault("keep_snapshots", False)
    kw.setdefault("threads", 1)
    return ChainConfig(steps=steps, **kw)


def test_exp_perturbation_nilpotent():
    params = ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=3, E=0.5, phi=0.7)
    bundle = model_service.build_normal_form(params)
    P = model_service.sample_perturbation(bundle, params, np.random.default_rng(1)).P
    np.testing.assert_allclose(lyapunov_service.exp_perturbation(P, 0.2), expm(0.2 * P), atol=1e-12)


def test_exp_perturbation_general():
    X = symplectic_service.random_hs_algebra(2, SymmetryClass.COMPLEX, np.random.default_rng(2))
    np.testing.assert_allclose(lyapunov_service.exp_perturbation(X, 0.1), expm(0.1 * X), atol=1e-12)
    np.testing.assert_array_equal(lyapunov_service.exp_perturbation(np.zeros((4, 4)), 0.5), np.eye(4))


@pytest.mark.parametrize("params", FREE_MODELS, ids=lambda p: p.model.value)
def test_free_chain_gives_ln_kappa(params):
    """λ = 0 时坐标标架下 γ_p = ln|κ_p| 精确成立"""
    bundle = model_service.build_normal_form(params)
    est, _ = lyapunov_service.run_chain(bundle, params, _chain(250))
    gamma, _ = lyapunov_service.channel_exponents(est)
    np.testing.assert_allclose(gamma, bundle.channels.ln_kappa, atol=1e-10)


def test_frame_stays_isotropic():
    params = ModelParams(model=ModelKind.ANDO, L=2, E=0.5, t=0.3, lam=0.4)
    bundle = model_service.build_normal_form(params)
    trace = lyapunov_service.propagate(bundle, params, _chain(2000, seed=3))
    inv = frame_service.invariants(trace.frame)
    assert max(inv.values()) < 1e-8


def test_weak_disorder_single_channel():
    """L = 1, E = 1, λ = 0.1: γ = λ²/(8 sin²k) 误差 3% 以内"""
    params = ModelParams(model=ModelKind.ANDERSON_REAL, L=1, E=1.0, lam=0.1)
    bundle = model_service.build_normal_form(params)
    est, _ = lyapunov_service.run_ensemble(bundle, params, _chain(200000, realizations=4), progress=False)
    formula = perturbation_service.closed_form_gamma(params, 1)
    sin2 = 1 - (params.E - 2) ** 2 / 4
    assert formula == pytest.approx(params.lam ** 2 / (8 * sin2))
    assert est.gamma[0] > 0
    assert abs(est.gamma[0] - formula) < 0.03 * formula


def test_ensemble_reproducible():
    params = ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=3, E=0.5, phi=0.9, lam=0.2)
    bundle = model_service.build_normal_form(params)
    config = _chain(300, realizations=3, seed=42)
    a, _ = lyapunov_service.run_ensemble(bundle, params, config, progress=False)
    b, _ = lyapunov_service.run_ensemble(bundle, params, config, progress=False)
    assert a.per_realization == b.per_realization
    c, _ = lyapunov_service.run_ensemble(bundle, params, config.model_copy(update={"seed": 43}), progress=False)
    assert c.per_realization != a.per_realization


def test_ensemble_independent_of_workers():
    params = ModelParams(model=ModelKind.ANDERSON_REAL, L=3, E=0.5, lam=0.3)
    bundle = model_service.build_normal_form(params)
    serial, _ = lyapunov_service.run_ensemble(bundle, params, _chain(200, realizations=3, seed=9), progress=False)
    pooled, _ = lyapunov_service.run_ensemble(bundle, params, _chain(200, realizations=3, seed=9, threads=2),
                                              progress=False)
    np.testing.assert_array_equal(np.array(serial.per_realization), np.array(pooled.per_realization))
    np.testing.assert_array_equal(serial.gamma, pooled.gamma)


def test_snapshots_after_burn_in():
    params = ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=3, E=0.5, phi=0.7, lam=0.2)
    bundle = model_service.build_normal_form(params)
    config = _chain(100, burn_in=10, stride=10, keep_snapshots=True, realizations=2, seed=5)
    _, ens = lyapunov_service.run_ensemble(bundle, params, config, progress=False)
    assert ens.count == 18
    assert list(ens.step[:9]) == list(range(20, 101, 10))
    assert sorted(set(ens.realization.tolist())) == [0, 1]
    eye = np.broadcast_to(np.eye(3), ens.U.shape)
    np.testing.assert_allclose(ens.U @ ens.U.conj().transpose(0, 2, 1), eye, atol=1e-10)
    np.testing.assert_allclose(ens.V @ ens.V.conj().transpose(0, 2, 1), eye, atol=1e-10)


def test_partial_ensemble(monkeypatch):
    """单个实现失败时其余结果仍然返回"""
    params = ModelParams(model=ModelKind.ANDERSON_REAL, L=2, E=0.5, lam=0.1)
    bundle = model_service.build_normal_form(params)
    original = lyapunov_service.run_chain

    def flaky(bundle, params, config, realization=0):
        if realization == 1:
            raise SingularActionError(2, 1e13, step=17)
        return original(bundle, params, config, realization)

    monkeypatch.setattr(lyapunov_service, "run_chain", flaky)
    with pytest.raises(PartialEnsembleError) as info:
        lyapunov_service.run_ensemble(bundle, params, _chain(50, realizations=3), progress=False)
    exc = info.value
    assert exc.failed == [1]
    est, _ = exc.partial
    assert est.realizations == 2


def test_adaptive_doubles_until_cap():
    params = ModelParams(model=ModelKind.ANDERSON_REAL, L=2, E=0.5, lam=0.2)
    bundle = model_service.build_normal_form(params)
    est = lyapunov_service.run_adaptive(bundle, params, _chain(200), target=1e-9, max_steps=800, progress=False)
    assert est.steps == 800


def test_adaptive_stops_at_target():
    """hyperbolic 通道 γ ≈ ln κ，相对误差很快达标"""
    params = ModelParams(model=ModelKind.ANDERSON_REAL, L=1, E=5.0, lam=0.1)
    bundle = model_service.build_normal_form(params)
    est = lyapunov_service.run_adaptive(bundle, params, _chain(2000, seed=1), target=0.01, progress=False)
    assert est.steps == 2000
    assert est.gamma[0] == pytest.approx(bundle.channels.ln_kappa[0], abs=0.02)


def test_batch_stderr_needs_two_batches():
    err = lyapunov_service.batch_stderr(np.ones((3, 2)), np.array([5, 0, 0]))
    assert np.all(np.isnan(err))
    err = lyapunov_service.batch_stderr(np.array([[1.0], [3.0]]), np.array([1, 1]))
    assert err[0] == pytest.approx(np.sqrt(2) / np.sqrt(2))
