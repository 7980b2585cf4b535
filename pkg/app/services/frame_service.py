"""各向同性标架与 Gram-Schmidt 群作用服务"""
import logging
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from app.config import settings
from app.errors import ContractError, DimensionError, InvariantViolationError, SingularActionError
from app.models import IsotropicFrame, SymmetryClass, TriangularCocycle, UVPair
from app.services.symplectic_service import symplectic_service

logger = logging.getLogger(__name__)


class FrameService:
    """标架、乘法/加法余循环与 (U, V) 表示"""

    # ------------------------------------------------------------------
    # Gram-Schmidt
    # ------------------------------------------------------------------
    @staticmethod
    def gram_schmidt(X: np.ndarray, block: int = 1, cond: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        右视修正 Gram-Schmidt，每列再正交化一次

        block=2 时按四元列 (2 列一组) 进行，对角块取极分解的正定因子。
        返回 (Q, S)，X = Q·S，S 上三角且对角(块)正定。
        """
        cond = settings.singular_cond if cond is None else cond
        Q = np.array(X, dtype=complex)
        n = Q.shape[1]
        S = np.zeros((n, n), dtype=complex)
        floor = np.linalg.norm(Q, axis=0).max() / cond
        for j in range(0, n, block):
            cols = slice(j, j + block)
            if j > 0:
                c = Q[:, :j].conj().T @ Q[:, cols]
                Q[:, cols] -= Q[:, :j] @ c
                S[:j, cols] += c
            if block == 1:
                nrm = np.linalg.norm(Q[:, j])
                if not nrm > floor:
                    raise SingularActionError(j + 1, np.inf if nrm == 0 else floor * cond / nrm)
                Q[:, j] /= nrm
                S[j, j] = nrm
            else:
                W, s, Vh = np.linalg.svd(Q[:, cols], full_matrices=False)
                if not s[-1] > floor:
                    raise SingularActionError(j + block, np.inf if s[-1] == 0 else floor * cond / s[-1])
                Q[:, cols] = W @ Vh
                S[cols, cols] = (Vh.conj().T * s) @ Vh
            if j + block < n:
                rest = slice(j + block, n)
                c = Q[:, cols].conj().T @ Q[:, rest]
                Q[:, rest] -= Q[:, cols] @ c
                S[cols, rest] = c
        return Q, S

    @staticmethod
    def householder(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Householder QR，对角相位移入 Q"""
        Q, R = np.linalg.qr(X)
        d = np.diag(R)
        if np.any(np.abs(d) == 0):
            col = int(np.argmin(np.abs(d))) + 1
            raise SingularActionError(col, np.inf)
        ph = d / np.abs(d)
        return Q * ph, R * ph.conj()[:, None]

    def orthonormalize(self, X: np.ndarray, symmetry_class: SymmetryClass,
                       method: Optional[str] = None) -> Tuple[np.ndarray, np.ndarray]:
        method = method or settings.orthogonalizer
        if method == "householder":
            return self.householder(X)
        return self.gram_schmidt(X, block=symmetry_class.block)

    # ------------------------------------------------------------------
    # 标架构造
    # ------------------------------------------------------------------
    @staticmethod
    def _as_frame(phi: np.ndarray, symmetry_class: SymmetryClass) -> IsotropicFrame:
        if symmetry_class is SymmetryClass.REAL:
            phi = phi.real.astype(complex)
        return IsotropicFrame(phi=phi, symmetry_class=symmetry_class)

    def axis_frame(self, n: int, symmetry_class: SymmetryClass) -> IsotropicFrame:
        """Φ = (1; 0)"""
        phi = np.zeros((2 * n, n), dtype=complex)
        phi[:n, :n] = np.eye(n)
        return IsotropicFrame(phi=phi, symmetry_class=symmetry_class)

    def uv_of_frame(self, frame: IsotropicFrame) -> UVPair:
        n = frame.size
        up, low = frame.phi[:n], frame.phi[n:]
        return UVPair(U=up - 1j * low, V=up + 1j * low)

    def frame_of_uv(self, uv: UVPair, symmetry_class: SymmetryClass, tol: Optional[float] = None) -> IsotropicFrame:
        tol = settings.frame_tol if tol is None else tol
        U, V = np.asarray(uv.U, dtype=complex), np.asarray(uv.V, dtype=complex)
        if U.shape != V.shape or U.shape[0] != U.shape[1]:
            raise DimensionError("U, V 需为同尺寸方阵", expected=U.shape[0], actual=V.shape[0])
        one = np.eye(U.shape[0])
        for name, X in (("U", U), ("V", V)):
            dev = float(np.abs(X.conj().T @ X - one).max())
            if dev > tol:
                raise ContractError(f"{name} 非酉, 偏差 {dev:.3e}")
        if symmetry_class is SymmetryClass.REAL and np.abs(V - U.conj()).max() > tol:
            raise ContractError("实类要求 V = Ū")
        if symmetry_class is SymmetryClass.QUATERNION and \
                np.abs(V - symplectic_service.quaternion_conjugate(U)).max() > tol:
            raise ContractError("四元类要求 V = I*ŪI")
        phi = np.vstack([(U + V) / 2, 1j * (U - V) / 2])
        return self._as_frame(phi, symmetry_class)

    def random_frame(self, symmetry_class: SymmetryClass, L: int, rng: np.random.Generator) -> IsotropicFrame:
        """由 Haar 酉矩阵诱导的随机标架"""
        n = symmetry_class.ambient_size(L)
        U = symplectic_service.sample_haar_unitary(n, rng)
        if symmetry_class is SymmetryClass.COMPLEX:
            V = symplectic_service.sample_haar_unitary(n, rng)
        elif symmetry_class is SymmetryClass.REAL:
            V = U.conj()
        else:
            V = symplectic_service.quaternion_conjugate(U)
        return self.frame_of_uv(UVPair(U=U, V=V), symmetry_class)

    def invariants(self, frame: IsotropicFrame) -> Dict[str, float]:
        """正交性、各向同性与类对称性的偏差"""
        phi = frame.phi
        n = frame.size
        J = symplectic_service.J(n)
        return {
            "orthonormal": float(np.abs(phi.conj().T @ phi - np.eye(n)).max()),
            "isotropic": float(np.abs(phi.conj().T @ J @ phi).max()),
            "class": symplectic_service.class_deviation(phi, frame.symmetry_class),
        }

    def reproject(self, phi: np.ndarray, symmetry_class: SymmetryClass) -> np.ndarray:
        """重新施加 Φ*JΦ = 0 与类对称性，再正交归一"""
        n = phi.shape[1]
        J = symplectic_service.J(n)
        phi = phi + 0.5 * (J @ phi) @ (phi.conj().T @ J @ phi)
        if symmetry_class is SymmetryClass.REAL:
            phi = phi.real.astype(complex)
        elif symmetry_class is SymmetryClass.QUATERNION:
            phi = (phi + symplectic_service.quaternion_conjugate(phi)) / 2
        return self.gram_schmidt(phi, block=symmetry_class.block)[0]

    # ------------------------------------------------------------------
    # 群作用与余循环
    # ------------------------------------------------------------------
    def act(self, T: np.ndarray, frame: IsotropicFrame, check: bool = True) -> Tuple[IsotropicFrame, TriangularCocycle]:
        """T·Φ = TΦ·S(T, Φ)⁻¹"""
        cls = frame.symmetry_class
        if T.shape[0] != frame.phi.shape[0]:
            raise DimensionError("T 与标架尺寸不符", expected=frame.phi.shape[0], actual=T.shape[0])
        if check and not symplectic_service.is_hermitian_symplectic(T, cls, tol=1e-8):
            raise ContractError("T 不属于该对称类的 HS 群")
        Q, S = self.gram_schmidt(T @ frame.phi, block=cls.block)
        return self._as_frame(Q, cls), TriangularCocycle(S=S, symmetry_class=cls)

    @staticmethod
    def additive_cocycle(cocycle: TriangularCocycle, p: int, symmetry_class: Optional[SymmetryClass] = None) -> float:
        """g_p = τ·log(e_p* S e_p)"""
        cls = symmetry_class or cocycle.symmetry_class
        S = cocycle.S
        b = cls.block
        if not 1 <= p <= S.shape[0] // b:
            raise ContractError(f"通道指标 p={p} 越界")
        blk = S[b * (p - 1):b * p, b * (p - 1):b * p]
        if b == 1:
            s = blk[0, 0]
            if not (s.real > 0 and abs(s.imag) <= 1e-12 * abs(s)):
                raise InvariantViolationError(f"S 的第 {p} 个对角元非正: {s}")
            return float(np.log(s.real))
        ev = np.linalg.eigvalsh((blk + blk.conj().T) / 2)
        if ev.min() <= 0:
            raise InvariantViolationError(f"S 的第 {p} 个对角块非正定")
        return float(cls.tau_factor * np.log(ev).sum())

    @staticmethod
    def column_logs(S: np.ndarray) -> np.ndarray:
        """各列对角元的对数 (长度 L')"""
        return np.log(np.abs(np.diag(S)))

    def torus_covariance_check(self, T: np.ndarray, frame: IsotropicFrame, t: np.ndarray) -> float:
        """‖S(T, Φt) − t⁻¹S(T, Φ)t‖_max"""
        cls = frame.symmetry_class
        t = np.asarray(t, dtype=complex)
        n = frame.size
        if t.shape != (n, n) or np.abs(t - np.diag(np.diag(t))).max() > 0:
            raise ContractError("t 必须是对角矩阵")
        d = np.diag(t)
        if np.abs(np.abs(d) - 1).max() > 1e-12:
            raise ContractError("t 必须是酉矩阵")
        if cls is SymmetryClass.REAL and np.abs(d.imag).max() > 1e-12:
            raise ContractError("实类的 t 只能取 ±1")
        if cls is SymmetryClass.QUATERNION and not symplectic_service.is_quaternion_matrix(t, tol=1e-12):
            raise ContractError("四元类的 t 必须是对角单位四元数 diag(z, z̄)")
        _, S1 = self.act(T, frame)
        _, S2 = self.act(T, IsotropicFrame(phi=frame.phi @ t, symmetry_class=cls))
        return float(np.abs(S2.S - t.conj().T @ S1.S @ t).max())

    def partial_sum_check(self, Ts: Iterable[np.ndarray], frame: IsotropicFrame, p: int) -> Tuple[float, float]:
        """
        Σ_n Σ_{q≤p} g_q 与前 p 个传播列 Gram 行列式的 τ/2·log det 对比

        返回 (余循环部分和, 行列式值)。
        """
        cls = frame.symmetry_class
        b = cls.block
        cur = frame
        total = 0.0
        product = frame.phi.copy()
        for T in Ts:
            cur, S = self.act(T, cur, check=False)
            total += sum(self.additive_cocycle(S, q) for q in range(1, p + 1))
            product = T @ product
        X = product[:, :b * p]
        sign, logdet = np.linalg.slogdet(X.conj().T @ X)
        return total, float(cls.tau_factor * 0.5 * logdet)


# 创建全局实例
frame_service = FrameService()
