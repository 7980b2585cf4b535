"""
Ando 自旋轨道模型 (类 H) 的正规形

实 Fourier 基把转移矩阵分解为频率扇区：
- 自共轭扇区 (k = 0, π)：4x4 块 = [[e/s', -s'], [1/s', 0]] ⊗ e^{-θq2}
- 成对扇区 (l, L-l)：8x8 块 = A*·(S_η ⊕̃ S_{-η})·A
每个扇区单独构造四元辛基 Ñ 与正规形 D̃，再按通道排序拼接。
"""
import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from app.config import settings
from app.errors import (
    ContractError, DegenerateBlockError, InternalBandEdgeError, NormalizationError, NumericalError,
)
from app.models import (
    AndoBlockBasis, AndoChannel, BlockCase, BlockSpectrum, ChannelData, ChannelKind,
    ModelKind, ModelParams, NormalFormBundle, SymmetryClass,
)
from app.services.model_service import model_service
from app.services.symplectic_service import Q2, SQRT2, symplectic_service

logger = logging.getLogger(__name__)

# 正弦/余弦列与 (f_l, f_{L-l}) 的关系: [sin, cos] = [f_l, f_{L-l}]·A2
A2 = np.array([[-1j, 1], [1j, 1]]) / SQRT2
# 上/下半的自旋 q2
D2 = np.kron(np.eye(2), Q2)
# 棋盘嵌入: slot 0 ↔ S_η, slot 1 ↔ S_{-η}
_SLOT_INDEX = {0: [0, 1, 4, 5], 1: [2, 3, 6, 7]}


def _rotation(eta: float) -> np.ndarray:
    c, s = math.cos(eta), math.sin(eta)
    return np.array([[c, -s], [s, c]])


class AndoService:
    """Ando 模型 4x4 频率块的谱、四元辛基与整体正规形"""

    def __init__(self):
        self._A = np.kron(np.eye(2), np.kron(A2, np.eye(2)))

    # ------------------------------------------------------------------
    # 4x4 频率块
    # ------------------------------------------------------------------
    @staticmethod
    def block_matrix(E: float, t: float, eta: float) -> np.ndarray:
        """显式的 S_η (实 4x4)"""
        s = 1.0 + t * t
        e = E - 2.0 * math.cos(eta)
        f = 2.0 * t * math.sin(eta)
        return np.array([
            [(e - f * t) / s, (-e * t - f) / s, -1.0, t],
            [(e * t - f) / s, (e + f * t) / s, -t, -1.0],
            [1.0 / s, -t / s, 0.0, 0.0],
            [t / s, 1.0 / s, 0.0, 0.0],
        ])

    @staticmethod
    def _kappa_of_nu(nu: complex) -> complex:
        """κ = ν/2 + √(ν²/4 - 1)，取 |κ| ≥ 1 或 Im κ ≥ 0 的分支"""
        if abs(nu.imag) > 0:
            k = nu / 2 + np.sqrt(nu * nu / 4 - 1)
            return complex(k if abs(k) >= 1 else 1 / k)
        x = nu.real
        if abs(x) < 2:
            return complex(x / 2, math.sqrt(1 - x * x / 4))
        return complex(x / 2 + math.copysign(math.sqrt(x * x / 4 - 1), x))

    def block_spectrum(self, E: float, t: float, eta: float, tol: Optional[float] = None) -> BlockSpectrum:
        """
        S_η 的特征多项式 λ⁴ - aλ³ + bλ² - aλ + 1 与谱构型

        a, b 由迹计算；ν_± 为 ν² - aν + b - 2 = 0 的根。
        """
        tol = settings.case_tol if tol is None else tol
        S = self.block_matrix(E, t, eta)
        a = float(np.trace(S))
        b = float(0.5 * (a * a - np.trace(S @ S)))
        disc = a * a / 4 + 2 - b
        if abs(disc) <= tol:
            raise DegenerateBlockError(f"κ_+ = κ_- (判别式 {disc:.3e})")
        root = np.sqrt(complex(disc))
        nu_p, nu_m = complex(a / 2 + root), complex(a / 2 - root)
        if disc < 0:
            case = BlockCase.G1
        else:
            for nu in (nu_p.real, nu_m.real):
                if abs(abs(nu) - 2) <= tol:
                    raise DegenerateBlockError(f"特征值落在 ±1 (ν={nu:.12g})")
            elliptic = [abs(nu_p.real) < 2, abs(nu_m.real) < 2]
            case = BlockCase.G2 if all(elliptic) else BlockCase.G3 if any(elliptic) else BlockCase.G4
        return BlockSpectrum(
            a=a, b=b, nu_plus=nu_p, nu_minus=nu_m,
            kappa_plus=self._kappa_of_nu(nu_p), kappa_minus=self._kappa_of_nu(nu_m), case=case,
        )

    @staticmethod
    def block_eigenvalues(spectrum: BlockSpectrum) -> np.ndarray:
        kp, km = spectrum.kappa_plus, spectrum.kappa_minus
        return np.array([kp, 1 / kp, km, 1 / km])

    @staticmethod
    def characteristic_polynomial(spectrum: BlockSpectrum, z) -> np.ndarray:
        a, b = spectrum.a, spectrum.b
        z = np.asarray(z, dtype=complex)
        return z ** 4 - a * z ** 3 + b * z ** 2 - a * z + 1

    def closed_b_discrepancy(self, E: float, t: float, eta: float) -> float:
        """迹公式的 b 与 (e²t² - f² + 2 - 2t⁴)/(1+t²)² 的差"""
        e = E - 2.0 * math.cos(eta)
        f = 2.0 * t * math.sin(eta)
        closed = (e * e * t * t - f * f + 2 - 2 * t ** 4) / (1 + t * t) ** 2
        S = self.block_matrix(E, t, eta)
        a = float(np.trace(S))
        return float(0.5 * (a * a - np.trace(S @ S))) - closed

    def similarity_deviation(self, E: float, t: float, eta: float) -> float:
        """‖diag(q2,q2)⁻¹·S_{-η}·diag(q2,q2) - S_η‖"""
        lhs = np.linalg.inv(D2) @ self.block_matrix(E, t, -eta) @ D2
        return float(np.abs(lhs - self.block_matrix(E, t, eta)).max())

    @staticmethod
    def block_eigenvector(E: float, t: float, eta: float, kappa: complex) -> np.ndarray:
        """S_η v = κv；下半 z 为 Z(κ) = X - κK - K*/κ 的零向量，上半为 κKz"""
        e = E - 2.0 * math.cos(eta)
        f = 2.0 * t * math.sin(eta)
        c = e - kappa - 1 / kappa
        d = t * (kappa - 1 / kappa)
        z1 = np.array([f + d, c], dtype=complex)
        z2 = np.array([c, f - d], dtype=complex)
        z = z1 if np.linalg.norm(z1) >= np.linalg.norm(z2) else z2
        if np.linalg.norm(z) == 0:
            raise DegenerateBlockError("Z(κ) 恒为零")
        K = model_service.spin_orbit_factor(t)
        v = np.concatenate([kappa * (K @ z), z])
        return v / np.linalg.norm(v)

    def block_sector_matrix(self, E: float, t: float, eta: float) -> np.ndarray:
        """实基下的 8x8 扇区块 A*·(S_η ⊕̃ S_{-η})·A"""
        X = np.zeros((8, 8), dtype=complex)
        X[np.ix_(_SLOT_INDEX[0], _SLOT_INDEX[0])] = self.block_matrix(E, t, eta)
        X[np.ix_(_SLOT_INDEX[1], _SLOT_INDEX[1])] = self.block_matrix(E, t, -eta)
        return self._A.conj().T @ X @ self._A

    def _lift(self, v: np.ndarray, slot: int) -> np.ndarray:
        y = np.zeros(8, dtype=complex)
        y[_SLOT_INDEX[slot]] = v
        return self._A.conj().T @ y

    # ------------------------------------------------------------------
    # 8x8 四元辛基
    # ------------------------------------------------------------------
    def _elliptic_channel(self, E, t, eta, kappa, tol) -> Tuple[np.ndarray, np.ndarray, AndoChannel]:
        J4 = symplectic_service.J(2)
        I8 = symplectic_service.I(8)
        v = self.block_eigenvector(E, t, eta, kappa)
        pairing = float((-1j * (v.conj() @ J4 @ v)).real)
        if abs(pairing) < tol:
            raise NormalizationError(abs(pairing))
        if pairing < 0:
            v, kappa, pairing = v.conj(), kappa.conjugate(), -pairing
        v = v / math.sqrt(pairing)
        x1, x2 = self._lift(v, 0), self._lift(D2 @ v, 1)
        w0, w1 = -I8 @ x2.conj(), I8 @ x1.conj()
        up = np.column_stack([x1 + w0, x2 + w1]) / SQRT2
        low = 1j * np.column_stack([x1 - w0, x2 - w1]) / SQRT2
        return up, low, AndoChannel(kind=ChannelKind.ELLIPTIC, eta=float(np.angle(kappa)))

    def block_basis(self, E: float, t: float, eta: float, tol: Optional[float] = None) -> AndoBlockBasis:
        """
        成对扇区的 (Ñ, D̃)

        elliptic 通道由正型特征向量 u 与 Kramers 伙伴 w = I·ū 组合成实旋转形；
        hyperbolic 通道的上半取膨胀特征向量及其 Kramers 伙伴，下半为收缩子空间中的辛对偶。
        """
        tol = settings.pairing_tol if tol is None else tol
        spectrum = self.block_spectrum(E, t, eta)
        I8 = symplectic_service.I(8)
        J8 = symplectic_service.J(4)
        kp, km = spectrum.kappa_plus, spectrum.kappa_minus

        if spectrum.case is BlockCase.G1:
            hyperbolic = [kp]
            contracting = [1 / kp, 1 / kp.conjugate()]
        else:
            hyperbolic = [k for k in (kp, km) if abs(abs(k) - 1) > tol]
            contracting = [1 / k for k in hyperbolic]
        elliptic = [k for k in (kp, km) if spectrum.case is not BlockCase.G1 and abs(abs(k) - 1) <= tol]

        ups, zs, h_channels, h_diag = [], [], [], []
        for k in hyperbolic:
            v = self.block_eigenvector(E, t, eta, k)
            # 实 κ 时 I·x̄ 已落在 κ 特征空间内，一个提升即一个通道；G1 两个提升给两个通道
            lifts = [self._lift(v, 0)]
            if spectrum.case is BlockCase.G1:
                lifts.append(self._lift(D2 @ v, 1))
            for x in lifts:
                ups += [x, I8 @ x.conj()]
                h_channels.append(AndoChannel(kind=ChannelKind.HYPERBOLIC, kappa=k))
                h_diag.append((k, k.conjugate()))
        for c in contracting:
            y = self.block_eigenvector(E, t, eta, c)
            zs += [self._lift(y, 0), self._lift(D2 @ y, 1)]

        up_cols: List[np.ndarray] = []
        low_cols: List[np.ndarray] = []
        channels: List[AndoChannel] = []
        blocks: List[np.ndarray] = []
        if ups:
            H_up = np.column_stack(ups)
            Z = np.column_stack(zs)
            G = H_up.conj().T @ J8 @ Z
            smin = float(np.linalg.svd(G, compute_uv=False).min())
            if smin < tol:
                raise NormalizationError(smin)
            H_low = Z @ (-np.linalg.inv(G))
            for j, (ch, (k1, k2)) in enumerate(zip(h_channels, h_diag)):
                up_cols.append(H_up[:, 2 * j:2 * j + 2])
                low_cols.append(H_low[:, 2 * j:2 * j + 2])
                channels.append(ch)
                blocks.append(np.diag([k1, k2, 1 / np.conj(k1), 1 / np.conj(k2)]))
        for k in elliptic:
            up, low, ch = self._elliptic_channel(E, t, eta, k, tol)
            up_cols.append(up)
            low_cols.append(low)
            channels.append(ch)
            blocks.append(np.kron(_rotation(ch.eta), np.eye(2)).astype(complex))

        N, D = self._assemble_sector(up_cols, low_cols, blocks)
        T = self.block_sector_matrix(E, t, eta)
        residual = float(np.abs(np.linalg.inv(N) @ T @ N - D).max())
        logger.debug(f"Ando 块 E={E:.4g} t={t:.4g} η={eta:.4g}: 情形 {spectrum.case.value}, 残差 {residual:.3e}")
        return AndoBlockBasis(N=N, D=D, channels=channels, spectrum=spectrum, residual=residual)

    @staticmethod
    def _assemble_sector(up_cols, low_cols, blocks) -> Tuple[np.ndarray, np.ndarray]:
        """列顺序: 全部上半列, 再全部下半列；D 按通道放置 4x4 块"""
        up = np.column_stack(up_cols)
        low = np.column_stack(low_cols)
        n = up.shape[1]
        N = np.hstack([up, low])
        D = np.zeros((2 * n, 2 * n), dtype=complex)
        for c, blk in enumerate(blocks):
            idx = [2 * c, 2 * c + 1, n + 2 * c, n + 2 * c + 1]
            D[np.ix_(idx, idx)] = blk
        return N, D

    def self_conjugate_basis(self, E: float, t: float, k: float, label: int = 0) -> AndoBlockBasis:
        """k = 0 或 π 的 4x4 扇区: Ñ = (Λ·N0(μ0)) ⊗ 1₂, D̃ = R(μ0) ⊗ e^{-θq2}"""
        sp = math.sqrt(1 + t * t)
        theta = math.atan(t)
        mu0 = (E - 2 * math.cos(k)) / sp
        if abs(abs(mu0) - 2) <= settings.parabolic_tol:
            raise InternalBandEdgeError(label, abs(mu0))
        N0, rho, kappa, eta, kind = model_service.channel_block(mu0)
        Lam = np.diag([math.sqrt(sp), 1 / math.sqrt(sp)])
        u = math.cos(theta) * np.eye(2) - math.sin(theta) * Q2
        R2 = _rotation(eta) if kind is ChannelKind.ELLIPTIC else np.diag([rho.real, 1 / rho.real])
        N = np.kron(Lam @ N0, np.eye(2)).astype(complex)
        D = np.kron(R2, u).astype(complex)
        M2 = np.array([[E - 2 * math.cos(k), -(1 + t * t)], [1.0, 0.0]]) / sp
        residual = float(np.abs(np.linalg.inv(N) @ np.kron(M2, u) @ N - D).max())
        channel = AndoChannel(kind=kind, kappa=kappa, eta=eta)
        return AndoBlockBasis(N=N, D=D, channels=[channel], residual=residual)

    # ------------------------------------------------------------------
    # 整体正规形
    # ------------------------------------------------------------------
    @staticmethod
    def sectors(L: int) -> List[Tuple[int, ...]]:
        """频率扇区: (0,), (l, L-l) ..., (L/2,)"""
        out: List[Tuple[int, ...]] = [(0,)]
        out += [(l, L - l) for l in range(1, (L + 1) // 2)]
        if L % 2 == 0 and L > 1:
            out.append((L // 2,))
        return out

    def build_normal_form_ando(self, params: ModelParams) -> NormalFormBundle:
        """Ando 模型 (类 H) 的 4L×4L 正规形"""
        if params.model is not ModelKind.ANDO:
            raise ContractError("Ando 构造器需要 model=ando")
        if params.t == 0.0:
            raise ContractError("t=0 时自旋退耦, 请使用实 Anderson 构造器")
        L, E, t = params.L, params.E, params.t
        mh = np.kron(model_service.real_fourier_basis(L), np.eye(2))
        zero = np.zeros_like(mh)
        M = np.block([[mh, zero], [zero, mh]]).astype(complex)

        sectors = self.sectors(L)
        perm = [c * 2 + s for sec in sectors for c in sec for s in (0, 1)]
        q = np.eye(2 * L)[:, perm]
        Q = np.block([[q, zero], [zero, q]]).astype(complex)

        free = model_service.transfer_matrix(params.model_copy(update={"lam": 0.0}), np.zeros(L))
        Tq = (M @ Q).T @ free @ (M @ Q)

        n = 4 * L
        N_blocks = np.zeros((n, n), dtype=complex)
        D_blocks = np.zeros((n, n), dtype=complex)
        found: List[Tuple[int, AndoChannel]] = []
        off = 0
        for sec in sectors:
            d = 2 * len(sec)
            idx = [h * 2 * L + off + r for h in (0, 1) for r in range(d)]
            T_sec = Tq[np.ix_(idx, idx)]
            basis = self._sector_basis(E, t, L, sec, T_sec)
            N_blocks[np.ix_(idx, idx)] = basis.N
            D_blocks[np.ix_(idx, idx)] = basis.D
            found += [(off // 2 + j, ch) for j, ch in enumerate(basis.channels)]
            off += d

        found.sort(key=lambda gc: (0, -abs(gc[1].kappa)) if gc[1].kind is ChannelKind.HYPERBOLIC else (1, 0))
        order = [g for g, _ in found]
        cols = [2 * g + s for g in order for s in (0, 1)]
        Pi = np.eye(n)[:, cols + [2 * L + c for c in cols]]
        N = N_blocks @ Pi
        D = Pi.T @ D_blocks @ Pi

        R_h = np.eye(n, dtype=complex)
        R_e = np.eye(n, dtype=complex)
        for c, (_, ch) in enumerate(found):
            idx = [2 * c, 2 * c + 1, 2 * L + 2 * c, 2 * L + 2 * c + 1]
            target = R_h if ch.kind is ChannelKind.HYPERBOLIC else R_e
            target[np.ix_(idx, idx)] = D[np.ix_(idx, idx)]

        hyper = [ch.kind is ChannelKind.HYPERBOLIC for _, ch in found]
        channels = ChannelData(
            mu=np.array([abs(ch.kappa) + 1 / abs(ch.kappa) if h else 2 * math.cos(ch.eta)
                         for (_, ch), h in zip(found, hyper)]),
            rho=np.array([ch.kappa if h else complex(math.cos(ch.eta), math.sin(ch.eta))
                          for (_, ch), h in zip(found, hyper)]),
            kappa=np.array([ch.kappa for _, ch in found]),
            eta=np.array([ch.eta for _, ch in found]),
            kinds=[ch.kind for _, ch in found],
            order=np.array(order),
            symmetry_class=SymmetryClass.QUATERNION,
        )
        coupling = np.full(2 * L, 1.0 / (1.0 + t * t))
        logger.info(f"Ando 正规形: L={L}, E={E}, t={t}, L_h={channels.L_h}, L_e={channels.L_e}")
        return model_service._finish_bundle(params, SymmetryClass.QUATERNION, M, Q, N, R_h, R_e, channels, coupling)

    def _sector_basis(self, E: float, t: float, L: int, sec: Tuple[int, ...], T_sec: np.ndarray) -> AndoBlockBasis:
        """对一个扇区构造基，并与实际扇区块比对以确定 η 的符号约定"""
        k = 2 * math.pi * sec[0] / L
        if len(sec) == 1:
            candidates = [lambda: self.self_conjugate_basis(E, t, k, label=sec[0])]
        else:
            candidates = [lambda s=s: self.block_basis(E, t, s * k) for s in (-1.0, 1.0)]
        best = math.inf
        for build in candidates:
            try:
                basis = build()
            except DegenerateBlockError as exc:
                raise exc.at_frequency(sec[0])
            err = float(np.abs(np.linalg.inv(basis.N) @ T_sec @ basis.N - basis.D).max())
            if err <= 1e-6:
                return basis
            best = min(best, err)
        raise NumericalError(f"扇区 {sec} 的正规形与转移矩阵不符 (残差 {best:.3e})")


# 创建全局实例
ando_service = AndoService()
