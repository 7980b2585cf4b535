"""随机相位性质 (RPP) 的统计检验"""
import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.linalg import null_space

from app.config import settings
from app.errors import ContractError
from app.models import (
    BlockStructureReport, ChannelData, ChannelKind, FrameEnsemble, PolarDecomposition,
    SpacingHistogram, SurmiseCurve, UVStatistics,
)
from app.services.symplectic_service import symplectic_service

logger = logging.getLogger(__name__)

# Kolmogorov 分布的中位数，用作 KS 距离的采样涨落尺度
KS_SCALE = 0.87
ENSEMBLE_NAMES = {1: "COE", 2: "CUE", 4: "CSE"}


class RppService:
    """本征相位间距、相位密度、矩阵元模分布与块结构"""

    @staticmethod
    def surmise(beta: int) -> SurmiseCurve:
        try:
            return SurmiseCurve(beta=beta)
        except ValueError as exc:
            raise ContractError(f"不支持的 beta={beta}") from exc

    # ------------------------------------------------------------------
    # 矩阵块与极分解
    # ------------------------------------------------------------------
    @staticmethod
    def polar_factor(M: np.ndarray) -> np.ndarray:
        """(批量) 酉极因子 W·Vh"""
        W, _, Vh = np.linalg.svd(M)
        return W @ Vh

    @staticmethod
    def select_block(mats: np.ndarray, ensemble: FrameEnsemble, block: str) -> np.ndarray:
        if block == "full":
            return mats
        if block != "elliptic":
            raise ContractError(f"未知块: {block}")
        e = ensemble.elliptic
        if len(e) == 0:
            raise ContractError("没有 elliptic 通道")
        return mats[:, e[:, None], e]

    def block_unitaries(self, ensemble: FrameEnsemble, block: str = "elliptic",
                        product: str = "U") -> Tuple[np.ndarray, float]:
        """取出 U (或 U·V*) 的块并酉化，返回 (酉矩阵栈, 平均极分解偏差)"""
        if ensemble.count == 0:
            raise ContractError("快照系综为空")
        mats = ensemble.U if product == "U" else ensemble.U @ ensemble.V.conj().transpose(0, 2, 1)
        sub = self.select_block(mats, ensemble, block)
        if block == "full":
            return sub, 0.0
        W = self.polar_factor(sub)
        dev = float(np.linalg.norm(sub - W, axis=(1, 2)).mean())
        return W, dev

    # ------------------------------------------------------------------
    # 原始样本 (可分批累积)
    # ------------------------------------------------------------------
    @staticmethod
    def eigenphases(mats: np.ndarray) -> np.ndarray:
        """(K, n) 排序后的本征相位 ∈ (-π, π]"""
        return np.sort(np.angle(np.linalg.eigvals(mats)), axis=1)

    def raw_spacings(self, mats: np.ndarray, tol: Optional[float] = None) -> Tuple[np.ndarray, int]:
        """圆周上相邻本征相位的间距 (未归一化) 与丢弃数"""
        tol = settings.coincident_phase_tol if tol is None else tol
        ph = self.eigenphases(mats)
        gaps = np.diff(ph, axis=1)
        wrap = 2 * np.pi + ph[:, :1] - ph[:, -1:]
        s = np.concatenate([gaps, wrap], axis=1).ravel()
        keep = s >= tol
        dropped = int((~keep).sum())
        if dropped:
            logger.info(f"丢弃 {dropped} 个重合相位间距 (< {tol:g})")
        return s[keep], dropped

    @staticmethod
    def raw_moduli(mats: np.ndarray) -> np.ndarray:
        return np.abs(mats).ravel()

    # ------------------------------------------------------------------
    # 直方图
    # ------------------------------------------------------------------
    def spacing_histogram(self, spacings: np.ndarray, dropped: int = 0,
                          polar_deviation: float = 0.0) -> SpacingHistogram:
        """归一化为单位均值，50 个 bin 覆盖 [0, 4]，并给出对三种猜想的 KS 距离"""
        spacings = np.asarray(spacings, dtype=float)
        edges = np.linspace(0.0, settings.spacing_max, settings.spacing_bins + 1)
        if spacings.size == 0:
            return SpacingHistogram(edges=edges, density=np.zeros(len(edges) - 1), counts=np.zeros(len(edges) - 1),
                                    samples=spacings, n_samples=0, dropped=dropped, degenerate=True)
        mean = float(spacings.mean())
        s = spacings / mean
        counts, _ = np.histogram(s, bins=edges)
        density, _ = np.histogram(s, bins=edges, density=True)
        degenerate = bool(np.ptp(s) < 1e-12 or dropped >= s.size)
        ks = {ENSEMBLE_NAMES[b]: float(stats.kstest(s, self.surmise(b).cdf).statistic) for b in (1, 2, 4)}
        return SpacingHistogram(
            edges=edges, density=np.nan_to_num(density), counts=counts, samples=s, n_samples=int(s.size),
            mean_spacing=mean, dropped=dropped, polar_deviation=polar_deviation, degenerate=degenerate, ks=ks,
        )

    def phase_histogram(self, phases: np.ndarray) -> SpacingHistogram:
        edges = np.linspace(-np.pi, np.pi, settings.phase_bins + 1)
        counts, _ = np.histogram(phases, bins=edges)
        density, _ = np.histogram(phases, bins=edges, density=True)
        ks = {"uniform": float(stats.kstest(phases, "uniform", args=(-np.pi, 2 * np.pi)).statistic)}
        return SpacingHistogram(edges=edges, density=np.nan_to_num(density), counts=counts, samples=phases,
                                n_samples=int(phases.size), mean_spacing=2 * np.pi / max(phases.size, 1),
                                degenerate=bool(np.ptp(phases) < 1e-12), ks=ks)

    @staticmethod
    def modulus_cdf(r, n: int) -> np.ndarray:
        """n 维 Haar 酉矩阵元模的分布函数 1 - (1 - r²)^{n-1}"""
        r = np.clip(np.asarray(r, dtype=float), 0.0, 1.0)
        return 1.0 - (1.0 - r * r) ** (n - 1)

    def modulus_histogram(self, moduli: np.ndarray, n: int) -> SpacingHistogram:
        edges = np.linspace(0.0, 1.0, settings.modulus_bins + 1)
        counts, _ = np.histogram(moduli, bins=edges)
        density, _ = np.histogram(moduli, bins=edges, density=True)
        ks = {"haar": float(stats.kstest(moduli, lambda r: self.modulus_cdf(r, n)).statistic)}
        return SpacingHistogram(edges=edges, density=np.nan_to_num(density), counts=counts, samples=moduli,
                                n_samples=int(moduli.size), mean_spacing=float(moduli.mean()), ks=ks)

    # ------------------------------------------------------------------
    # 统计量
    # ------------------------------------------------------------------
    def eigenphase_spacings(self, ensemble: FrameEnsemble, block: str = "elliptic") -> SpacingHistogram:
        """π_e U π_e (酉化后) 或整个 U 的本征相位间距分布"""
        W, dev = self.block_unitaries(ensemble, block)
        s, dropped = self.raw_spacings(W)
        return self.spacing_histogram(s, dropped, dev)

    def eigenphase_density(self, ensemble: FrameEnsemble, block: str = "elliptic") -> SpacingHistogram:
        W, _ = self.block_unitaries(ensemble, block)
        return self.phase_histogram(self.eigenphases(W).ravel())

    def entry_modulus_distribution(self, ensemble: FrameEnsemble, block: str = "elliptic") -> SpacingHistogram:
        """|U_ij| 的分布与 Haar 径向律的 KS 比较"""
        if ensemble.count == 0:
            raise ContractError("快照系综为空")
        sub = self.select_block(ensemble.U, ensemble, block)
        n = sub.shape[1]
        if n < 2:
            raise ContractError("矩阵元模分布需要块维数 >= 2")
        if n < 3:
            logger.warning(f"块维数 {n} < 3, 径向律退化为 2r")
        return self.modulus_histogram(self.raw_moduli(sub), n)

    def uv_statistics_from_spacings(self, spacings: np.ndarray, dropped: int = 0,
                                    polar_deviation: float = 0.0) -> UVStatistics:
        hist = self.spacing_histogram(spacings, dropped, polar_deviation)
        ks_cue, ks_coe = hist.ks.get("CUE", 1.0), hist.ks.get("COE", 1.0)
        noise = KS_SCALE / math.sqrt(max(hist.n_samples, 1))
        return UVStatistics(
            histogram=hist, ks_cue=ks_cue, ks_coe=ks_coe,
            selected="CUE" if ks_cue < ks_coe else "COE",
            margin_ratio=abs(ks_cue - ks_coe) / noise,
        )

    def uv_correlation_statistics(self, ensemble: FrameEnsemble) -> UVStatistics:
        """π_e U V* π_e 的间距: U, V 独立时为 CUE，V = Ū 时为 COE"""
        W, dev = self.block_unitaries(ensemble, "elliptic", product="UV")
        s, dropped = self.raw_spacings(W)
        return self.uv_statistics_from_spacings(s, dropped, dev)

    @staticmethod
    def block_structure_terms(U: np.ndarray, elliptic: np.ndarray, hyperbolic: np.ndarray,
                              block: int = 1) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        每个快照的 ‖π_e U π_h‖²、π_h U π_h 到最近 (块)对角酉矩阵的距离²
        以及 ‖π_h U π_h − π_h‖² (未扣除环面相位)
        """
        K = U.shape[0]
        if len(hyperbolic) == 0:
            return np.zeros(K), np.zeros(K), np.zeros(K)
        off = np.linalg.norm(U[:, elliptic[:, None], hyperbolic], axis=(1, 2)) ** 2 if len(elliptic) else np.zeros(K)
        H = U[:, hyperbolic[:, None], hyperbolic]
        nearest = np.zeros_like(H)
        for j in range(0, H.shape[1], block):
            blk = H[:, j:j + block, j:j + block]
            W, _, Vh = np.linalg.svd(blk)
            nearest[:, j:j + block, j:j + block] = W @ Vh
        dev = np.linalg.norm(H - nearest, axis=(1, 2)) ** 2
        literal = np.linalg.norm(H - np.eye(H.shape[1]), axis=(1, 2)) ** 2
        return off, dev, literal

    def block_structure_check(self, ensemble: FrameEnsemble, channels: Optional[ChannelData] = None) -> BlockStructureReport:
        """π_e U π_h 的 RMS 范数与 π_h U π_h 偏离确定性 (块)对角酉阵的 RMS"""
        if ensemble.count == 0:
            raise ContractError("快照系综为空")
        e, h = ensemble.elliptic, ensemble.hyperbolic
        if channels is not None:
            e = channels.column_indices(ChannelKind.ELLIPTIC)
            h = channels.column_indices(ChannelKind.HYPERBOLIC)
        off, dev, literal = self.block_structure_terms(ensemble.U, e, h, ensemble.symmetry_class.block)
        return BlockStructureReport(
            offblock_rms=float(math.sqrt(off.mean())),
            hyperbolic_deviation=float(math.sqrt(dev.mean())),
            hyperbolic_identity_rms=float(math.sqrt(literal.mean())),
            snapshots=ensemble.count,
        )

    # ------------------------------------------------------------------
    # 极分解
    # ------------------------------------------------------------------
    def polar_diagnostic(self, T: np.ndarray, threshold: float = 1e-10) -> PolarDecomposition:
        """
        C·T·C* = diag(u, v)·[[√(1+Λ), √Λ], [√Λ, √(1+Λ)]]·diag(u', v')

        Λ 非降序；Λ 过小的方向上 v' 的行由正交补给出 (此时分解不唯一)。
        """
        T = np.asarray(T, dtype=complex)
        if symplectic_service.symplectic_deviation(T) > 1e-6 * max(1.0, np.abs(T).max() ** 2):
            raise ContractError("极分解的输入必须属于 HS 群")
        X = symplectic_service.cayley_conjugate(T, "to_lorentz")
        n = X.shape[0] // 2
        A, B, D = X[:n, :n], X[:n, n:], X[n:, n:]
        W, s, Vh = np.linalg.svd(A)
        idx = np.argsort(s, kind="stable")
        u, root1, u2 = W[:, idx], s[idx], Vh[idx, :]
        Lam = np.clip(root1 ** 2 - 1.0, 0.0, None)
        rows = u.conj().T @ B
        big = Lam > threshold * max(1.0, Lam.max())
        v2 = np.zeros((n, n), dtype=complex)
        v2[big] = rows[big] / np.sqrt(Lam[big])[:, None]
        if (~big).any():
            known = v2[big]
            comp = null_space(known) if known.size else np.eye(n, dtype=complex)
            v2[~big] = comp.conj().T[: int((~big).sum())]
        v = D @ v2.conj().T / np.sqrt(1.0 + Lam)[None, :]
        sq, sq1 = np.diag(np.sqrt(Lam)), np.diag(np.sqrt(1.0 + Lam))
        Z = np.zeros((n, n))
        core = np.block([[sq1, sq], [sq, sq1]])
        left = np.block([[u, Z], [Z, v]])
        right = np.block([[u2, Z], [Z, v2]])
        residual = float(np.abs(left @ core @ right - X).max())
        return PolarDecomposition(Lambda=Lam, u=u, v=v, u2=u2, v2=v2, residual=residual)

    @staticmethod
    def polar_growth(decomposition: PolarDecomposition, steps: int) -> float:
        """(1/2N)·log Λ_max"""
        lam_max = float(decomposition.Lambda.max())
        return math.log(lam_max) / (2 * steps) if lam_max > 0 else 0.0

    @staticmethod
    def product(Ts: Sequence[np.ndarray]) -> np.ndarray:
        out = np.eye(Ts[0].shape[0], dtype=complex)
        for T in Ts:
            out = T @ out
        return out


# 创建全局实例
rpp_service = RppService()
