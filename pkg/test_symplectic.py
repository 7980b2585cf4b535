"""辛结构常数、对称类判定与 Haar 采样测试"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.errors import ContractError, DimensionError
from app.models import SymmetryClass
from app.services.symplectic_service import symplectic_service


@pytest.fixture
def rng():
    return np.random.default_rng(11)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_constant_identities(n):
    """CJC* = -iG 等恒等式在机器精度内成立"""
    devs = symplectic_service.constant_identities(n)
    assert max(devs.values()) < 1e-12


def test_corrupted_form_breaks_identities():
    """故障注入下 J² = -1 不再成立，退出后恢复"""
    with symplectic_service.corrupted_form():
        devs = symplectic_service.constant_identities(2)
        assert devs["J^2=-1"] > 0.5
    assert symplectic_service.constant_identities(2)["J^2=-1"] < 1e-12


@pytest.mark.parametrize("cls", list(SymmetryClass))
@pytest.mark.parametrize("L", [1, 2, 3])
def test_random_hs_membership(cls, L, rng):
    T = symplectic_service.random_hs(L, cls, rng)
    assert T.shape == (2 * cls.ambient_size(L),) * 2
    assert symplectic_service.is_hermitian_symplectic(T, cls, L=L)


@pytest.mark.parametrize("cls", list(SymmetryClass))
def test_membership_fails_under_corrupted_form(cls, rng):
    T = symplectic_service.random_hs(2, cls, rng)
    with symplectic_service.corrupted_form():
        assert not symplectic_service.is_hermitian_symplectic(T, cls)


def test_complex_element_is_not_real(rng):
    """一般的类 C 群元不属于类 R"""
    T = symplectic_service.random_hs(2, SymmetryClass.COMPLEX, rng)
    assert symplectic_service.is_hermitian_symplectic(T, SymmetryClass.COMPLEX)
    assert not symplectic_service.is_hermitian_symplectic(T, SymmetryClass.REAL)


def test_dimension_errors(rng):
    with pytest.raises(DimensionError):
        symplectic_service.is_hermitian_symplectic(np.eye(3), SymmetryClass.COMPLEX)
    with pytest.raises(DimensionError):
        symplectic_service.is_hermitian_symplectic(np.eye(4), SymmetryClass.COMPLEX, L=3)
    with pytest.raises(DimensionError):
        symplectic_service.is_hermitian_symplectic(np.eye(6), SymmetryClass.QUATERNION)
    with pytest.raises(DimensionError):
        symplectic_service.I(3)


def test_symplectic_inverse(rng):
    T = symplectic_service.random_hs(3, SymmetryClass.QUATERNION, rng)
    Tinv = symplectic_service.symplectic_inverse(T)
    np.testing.assert_allclose(Tinv @ T, np.eye(T.shape[0]), atol=1e-10)


def test_cayley_maps_to_lorentz(rng):
    T = symplectic_service.random_hs(3, SymmetryClass.COMPLEX, rng)
    X = symplectic_service.cayley_conjugate(T)
    assert symplectic_service.is_lorentz(X, tol=1e-9)
    back = symplectic_service.cayley_conjugate(X, direction="to_symplectic")
    np.testing.assert_allclose(back, T, atol=1e-10)
    with pytest.raises(ContractError):
        symplectic_service.cayley_conjugate(T, direction="sideways")


def test_haar_unitary_batch(rng):
    U = symplectic_service.sample_haar_unitary(4, rng, size=50)
    eye = np.broadcast_to(np.eye(4), U.shape)
    np.testing.assert_allclose(U @ U.conj().transpose(0, 2, 1), eye, atol=1e-12)
    with pytest.raises(ContractError):
        symplectic_service.sample_haar_unitary(0, rng)


def test_quaternion_hermitian(rng):
    A = symplectic_service.random_hermitian(4, SymmetryClass.QUATERNION, rng)
    assert symplectic_service.is_quaternion_matrix(A)
    np.testing.assert_allclose(A, A.conj().T, atol=1e-14)
