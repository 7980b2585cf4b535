"""辛/洛伦兹结构常数、对称类判定与 Haar 采样服务"""
import logging
from contextlib import contextmanager
from functools import lru_cache
from typing import Dict, Optional

import numpy as np
from scipy.linalg import expm

from app.config import settings
from app.errors import ContractError, DimensionError
from app.models import SymmetryClass

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)

# 四元数单位的 2x2 复表示
Q0 = np.eye(2, dtype=complex)
Q1 = np.array([[1j, 0], [0, -1j]])
Q2 = np.array([[0, 1], [-1, 0]], dtype=complex)
Q3 = np.array([[0, 1j], [1j, 0]])
I2 = np.array([[0, -1], [1, 0]], dtype=complex)


@lru_cache(maxsize=64)
def _symplectic_form(n: int) -> np.ndarray:
    J = np.kron(np.array([[0, -1], [1, 0]], dtype=complex), np.eye(n))
    J.setflags(write=False)
    return J


@lru_cache(maxsize=64)
def _lorentz_form(n: int) -> np.ndarray:
    G = np.kron(np.diag([1.0, -1.0]).astype(complex), np.eye(n))
    G.setflags(write=False)
    return G


@lru_cache(maxsize=64)
def _cayley(n: int) -> np.ndarray:
    C = np.kron(np.array([[1, -1j], [1, 1j]]) / SQRT2, np.eye(n))
    C.setflags(write=False)
    return C


@lru_cache(maxsize=64)
def _quaternion_form(m: int) -> np.ndarray:
    I = np.kron(np.eye(m // 2), I2)
    I.setflags(write=False)
    return I


class SymplecticService:
    """结构常数与群判定"""

    def __init__(self):
        self._corrupt_form = False

    # ------------------------------------------------------------------
    # 结构常数
    # ------------------------------------------------------------------
    def J(self, n: int) -> np.ndarray:
        """2n×2n 辛形式 [[0, -1], [1, 0]] ⊗ 1_n"""
        if self._corrupt_form:
            return np.kron(np.array([[0, -1], [-1, 0]], dtype=complex), np.eye(n))
        return _symplectic_form(n)

    @staticmethod
    def G(n: int) -> np.ndarray:
        """2n×2n 洛伦兹形式 diag(1, -1) ⊗ 1_n"""
        return _lorentz_form(n)

    @staticmethod
    def C(n: int) -> np.ndarray:
        """Cayley 变换"""
        return _cayley(n)

    @staticmethod
    def I(m: int) -> np.ndarray:
        """m×m 四元结构矩阵, m 为偶数"""
        if m % 2:
            raise DimensionError("四元结构要求偶数维", expected=m + 1, actual=m)
        return _quaternion_form(m)

    @contextmanager
    def corrupted_form(self):
        """故障注入：把 J 的左下块取反"""
        self._corrupt_form = True
        try:
            yield
        finally:
            self._corrupt_form = False

    def constant_identities(self, n: int) -> Dict[str, float]:
        """结构常数恒等式的最大偏差"""
        J, G, C = self.J(n), self.G(n), self.C(n)
        I = self.I(2 * n)
        one = np.eye(2 * n)
        q = [Q1 @ Q1, Q2 @ Q2, Q3 @ Q3, Q1 @ Q2 @ Q3]
        return {
            "CJC*=-iG": float(np.abs(C @ J @ C.conj().T - G / 1j).max()),
            "conj(C)JC*=-iJ": float(np.abs(C.conj() @ J @ C.conj().T - J / 1j).max()),
            "J^2=-1": float(np.abs(J @ J + one).max()),
            "G^2=1": float(np.abs(G @ G - one).max()),
            "C unitary": float(np.abs(C @ C.conj().T - one).max()),
            "I^2=-1": float(np.abs(I @ I + one).max()),
            "q^2=-q0": float(max(np.abs(x + Q0).max() for x in q)),
        }

    # ------------------------------------------------------------------
    # 对称类判定
    # ------------------------------------------------------------------
    def quaternion_conjugate(self, A: np.ndarray) -> np.ndarray:
        """I*·Ā·I"""
        I = self.I(A.shape[0])
        return I.conj().T @ A.conj() @ self.I(A.shape[1])

    def _check_square_even(self, T: np.ndarray, expected: Optional[int] = None):
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise DimensionError("需要方阵", expected=expected, actual=T.shape[0] if T.ndim else None)
        if expected is not None and T.shape[0] != expected:
            raise DimensionError("矩阵尺寸与对称类不符", expected=expected, actual=T.shape[0])
        if T.shape[0] % 2:
            raise DimensionError("需要偶数维", expected=T.shape[0] + 1, actual=T.shape[0])

    def class_deviation(self, T: np.ndarray, symmetry_class: SymmetryClass) -> float:
        """类对称性的偏差: R 为 ‖T̄ - T‖, H 为 ‖I*T̄I - T‖"""
        if symmetry_class is SymmetryClass.REAL:
            return float(np.abs(T.imag).max()) if np.iscomplexobj(T) else 0.0
        if symmetry_class is SymmetryClass.QUATERNION:
            return float(np.abs(self.quaternion_conjugate(T) - T).max())
        return 0.0

    def symplectic_deviation(self, T: np.ndarray) -> float:
        J = self.J(T.shape[0] // 2)
        return float(np.abs(T.conj().T @ J @ T - J).max())

    def is_hermitian_symplectic(self, T: np.ndarray, symmetry_class: SymmetryClass,
                                tol: Optional[float] = None, L: Optional[int] = None) -> bool:
        """T ∈ HS(2L', K)"""
        tol = settings.membership_tol if tol is None else tol
        expected = 2 * symmetry_class.ambient_size(L) if L is not None else None
        T = np.asarray(T)
        self._check_square_even(T, expected)
        if symmetry_class is SymmetryClass.QUATERNION and T.shape[0] % 4:
            raise DimensionError("四元类要求维数为 4 的倍数", expected=T.shape[0] + 2, actual=T.shape[0])
        if self.symplectic_deviation(T) > tol:
            return False
        return self.class_deviation(T, symmetry_class) <= tol

    def is_quaternion_matrix(self, A: np.ndarray, tol: Optional[float] = None) -> bool:
        tol = settings.membership_tol if tol is None else tol
        A = np.asarray(A)
        self._check_square_even(A)
        return float(np.abs(self.quaternion_conjugate(A) - A).max()) <= tol

    def is_lorentz(self, T: np.ndarray, tol: Optional[float] = None) -> bool:
        """T ∈ U(L, L): T*GT = G"""
        tol = settings.membership_tol if tol is None else tol
        G = self.G(T.shape[0] // 2)
        return float(np.abs(T.conj().T @ G @ T - G).max()) <= tol

    def cayley_conjugate(self, T: np.ndarray, direction: str = "to_lorentz") -> np.ndarray:
        T = np.asarray(T)
        self._check_square_even(T)
        C = self.C(T.shape[0] // 2)
        if direction == "to_lorentz":
            return C @ T @ C.conj().T
        if direction == "to_symplectic":
            return C.conj().T @ T @ C
        raise ContractError(f"未知方向: {direction}")

    def symplectic_inverse(self, T: np.ndarray) -> np.ndarray:
        """T⁻¹ = J*·T*·J"""
        J = self.J(T.shape[0] // 2)
        return J.conj().T @ T.conj().T @ J

    # ------------------------------------------------------------------
    # 随机采样
    # ------------------------------------------------------------------
    @staticmethod
    def sample_haar_unitary(n: int, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Ginibre 矩阵 QR 分解并修正 R 对角相位"""
        if n < 1:
            raise ContractError("Haar 采样要求 n >= 1")
        shape = (n, n) if size is None else (size, n, n)
        Z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / SQRT2
        Q, R = np.linalg.qr(Z)
        d = np.diagonal(R, axis1=-2, axis2=-1)
        return Q * (d / np.abs(d))[..., None, :]

    @staticmethod
    def sample_haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
        Z = rng.standard_normal((n, n))
        Q, R = np.linalg.qr(Z)
        return Q * np.sign(np.diag(R))

    def random_hermitian(self, n: int, symmetry_class: SymmetryClass, rng: np.random.Generator) -> np.ndarray:
        """n×n 随机自伴矩阵, 带类对称性"""
        if symmetry_class is SymmetryClass.REAL:
            A = rng.standard_normal((n, n))
            return ((A + A.T) / 2).astype(complex)
        A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        A = (A + A.conj().T) / 2
        if symmetry_class is SymmetryClass.QUATERNION:
            A = (A + self.quaternion_conjugate(A)) / 2
        return A

    def random_hs_algebra(self, L: int, symmetry_class: SymmetryClass, rng: np.random.Generator) -> np.ndarray:
        """hs(2L', K) 中的随机元 X = J·H (H 自伴)"""
        n = symmetry_class.ambient_size(L)
        H = self.random_hermitian(2 * n, symmetry_class, rng)
        return self.J(n) @ H

    def random_hs_self_adjoint(self, L: int, symmetry_class: SymmetryClass, rng: np.random.Generator) -> np.ndarray:
        """hs 中的自伴元 [[X, Y], [Y, -X]]"""
        n = symmetry_class.ambient_size(L)
        X = self.random_hermitian(n, symmetry_class, rng)
        Y = self.random_hermitian(n, symmetry_class, rng)
        return np.block([[X, Y], [Y, -X]])

    def random_hs(self, L: int, symmetry_class: SymmetryClass, rng: np.random.Generator,
                  scale: float = 0.5) -> np.ndarray:
        """HS(2L', K) 中的随机元 e^{scale·J·H}"""
        T = expm(scale * self.random_hs_algebra(L, symmetry_class, rng))
        if symmetry_class is SymmetryClass.REAL:
            T = T.real.astype(complex)
        return T


# 创建全局实例
symplectic_service = SymplecticService()
