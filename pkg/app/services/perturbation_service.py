"""
微扰论：二阶余循环展开、RPP 下的矩积分、γ_p 的一般公式与闭式

约定：类 H 的迹一律取 τ·Tr = ½Tr，与加法余循环的 τ 一致。
"""
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.errors import ContractError, InternalBandEdgeError, NumericalError
from app.models import (
    ChannelData, ChannelKind, ExpansionTerms, GammaFormulaInputs, IsotropicFrame, ModelKind,
    ModelParams, MomentCheckRow, SymmetryClass,
)
from app.services.frame_service import frame_service
from app.services.model_service import model_service
from app.services.symplectic_service import symplectic_service

logger = logging.getLogger(__name__)

# Haar 采样的分块大小
_CHUNK = 2000


class PerturbationService:
    """二阶展开与 Lyapunov 指数的微扰公式"""

    # ------------------------------------------------------------------
    # 二阶展开
    # ------------------------------------------------------------------
    @staticmethod
    def expansion_terms(P: np.ndarray, frame: IsotropicFrame) -> ExpansionTerms:
        """P1 = ½Φ*(P+P*)Φ, P2 = ¼Φ*(2P*P + P² + P*²)Φ"""
        phi = frame.phi
        Ph = P.conj().T
        P1 = 0.5 * phi.conj().T @ (P + Ph) @ phi
        P2 = 0.25 * phi.conj().T @ (2 * Ph @ P + P @ P + Ph @ Ph) @ phi
        return ExpansionTerms(P1=P1, P2=P2)

    def cocycle_expansion(self, P: np.ndarray, frame: IsotropicFrame, p: int, lam: float,
                          order: int = 2) -> float:
        """
        g_p(e^{λP}, Φ) 到 λ² 阶

        逐列: λ·P1_cc + λ²·(P2_cc - 2·e_c*P1 p_c P1 e_c + P1_cc²)，
        类 H 对四元块的两列求和再乘 τ。
        """
        cls = frame.symmetry_class
        b = cls.block
        terms = self.expansion_terms(P, frame)
        P1, P2 = terms.P1, terms.P2
        total = 0.0
        for c in range(b * (p - 1), b * p):
            first = P1[c, c].real
            total += lam * first
            if order >= 2:
                head = P1[c, :c + 1]
                total += lam ** 2 * (P2[c, c].real - 2 * float(np.sum(np.abs(head) ** 2)) + first ** 2)
        return float(cls.tau_factor * total)

    def direct_cocycle(self, P: np.ndarray, frame: IsotropicFrame, p: int, lam: float) -> float:
        """g_p(e^{λP}, Φ) 的直接计算"""
        from app.services.lyapunov_service import lyapunov_service
        T = lyapunov_service.exp_perturbation(P, lam)
        _, S = frame_service.act(T, frame, check=False)
        return frame_service.additive_cocycle(S, p)

    def expansion_slope(self, P: np.ndarray, frame: IsotropicFrame, p: int,
                        lams: Optional[Sequence[float]] = None) -> float:
        """|g_p − 二阶展开| 对 λ 的 log-log 拟合斜率 (O(λ³) 误差对应 3)"""
        lams = np.logspace(-3, -1, 9) if lams is None else np.asarray(lams, dtype=float)
        errs = np.array([abs(self.cocycle_expansion(P, frame, p, lam) - self.direct_cocycle(P, frame, p, lam))
                         for lam in lams])
        if np.any(errs <= 0):
            raise NumericalError(f"p={p} 的展开误差为零, 无法拟合斜率")
        slope, _ = np.polyfit(np.log(lams), np.log(errs), 1)
        return float(slope)

    def expansion_slopes(self, symmetry_class: SymmetryClass, L: int, triples: int,
                         rng: np.random.Generator) -> np.ndarray:
        """随机 (P, Φ, p) 的拟合斜率；P 取 hs 中 Frobenius 范数为 1 的随机元"""
        slopes = np.empty(triples)
        for i in range(triples):
            P = symplectic_service.random_hs_algebra(L, symmetry_class, rng)
            P = P / np.linalg.norm(P)
            frame = frame_service.random_frame(symmetry_class, L, rng)
            p = int(rng.integers(1, L + 1))
            slopes[i] = self.expansion_slope(P, frame, p)
        logger.debug(f"展开斜率 {symmetry_class.value}: 中位数 {np.median(slopes):.3f}")
        return slopes

    @staticmethod
    def slopes_acceptable(slopes: np.ndarray, tol: float = 0.2, share: float = 0.75) -> bool:
        """中位数落在 3 ± tol 内，且至少 share 比例的斜率落在 3 ± tol 内"""
        slopes = np.asarray(slopes, dtype=float)
        close = np.abs(slopes - 3.0) <= tol
        return bool(abs(np.median(slopes) - 3.0) <= tol and close.mean() >= share)

    # ------------------------------------------------------------------
    # RPP 下的矩积分 (闭式)
    # ------------------------------------------------------------------
    @staticmethod
    def projections(channels: ChannelData) -> Tuple[np.ndarray, np.ndarray]:
        """2L'×2L' 的 Π_e, Π_h"""
        e = np.zeros(channels.L * channels.symmetry_class.block)
        e[channels.column_indices(ChannelKind.ELLIPTIC)] = 1.0
        Pe = np.diag(np.concatenate([e, e]))
        return Pe, np.eye(Pe.shape[0]) - Pe

    @staticmethod
    def _check_elliptic(channels: ChannelData, *ps: int):
        for p in ps:
            if not 1 <= p <= channels.L or channels.kinds[p - 1] is not ChannelKind.ELLIPTIC:
                raise ContractError(f"通道 p={p} 不是 elliptic 通道")

    @staticmethod
    def pair_coefficient(p: int, q: int, L_e: int, symmetry_class: SymmetryClass) -> float:
        """I_pq = c_pq·Tr[B_e²] 的系数"""
        d = 1.0 if p == q else 0.0
        if symmetry_class is SymmetryClass.COMPLEX:
            return 1.0 / (4 * L_e ** 2)
        if symmetry_class is SymmetryClass.REAL:
            return (1 + d) / (4 * L_e * (L_e + 1))
        return (2 - d) / (4 * L_e * (2 * L_e - 1))

    def moment_integral_Ip(self, A: np.ndarray, channels: ChannelData, p: Optional[int] = None) -> float:
        """E_RPP[e_p*Φ*AΦe_p] = Tr[A_e]/(2L_e)"""
        if p is not None:
            self._check_elliptic(channels, p)
        Pe, _ = self.projections(channels)
        tau = channels.symmetry_class.tau_factor
        return float(tau * np.trace(Pe @ A @ Pe).real / (2 * channels.L_e))

    def hyperbolic_sum(self, B: np.ndarray, channels: ChannelData, p: Optional[int] = None) -> float:
        """Σ_{q' hyperbolic} E|e_p*Φ*BΦe_q'|² = Tr[Π_e B Π_h B Π_e]/(4L_e)"""
        if p is not None:
            self._check_elliptic(channels, p)
        Pe, Ph = self.projections(channels)
        tau = channels.symmetry_class.tau_factor
        return float(tau * np.trace(Pe @ B @ Ph @ B @ Pe).real / (4 * channels.L_e))

    def moment_integral_Ipq(self, B: np.ndarray, p: int, q: int, channels: ChannelData) -> float:
        """E_RPP|e_p*Φ*BΦe_q|² = c_pq·Tr[B_e²]"""
        self._check_elliptic(channels, p, q)
        Pe, _ = self.projections(channels)
        Be = Pe @ B @ Pe
        tau = channels.symmetry_class.tau_factor
        c = self.pair_coefficient(p, q, channels.L_e, channels.symmetry_class)
        return float(c * tau * np.trace(Be @ Be).real)

    # ------------------------------------------------------------------
    # RPP 分布的 Monte Carlo
    # ------------------------------------------------------------------
    @staticmethod
    def sample_rpp_frames(channels: ChannelData, rng: np.random.Generator, size: int) -> np.ndarray:
        """(size, 2L', L') 批量标架：hyperbolic 列固定为坐标轴，elliptic 块由 Haar U 与类相关的 V 给出"""
        cls = channels.symmetry_class
        n = channels.L * cls.block
        e = channels.column_indices(ChannelKind.ELLIPTIC)
        h = channels.column_indices(ChannelKind.HYPERBOLIC)
        U = symplectic_service.sample_haar_unitary(len(e), rng, size=size)
        if cls is SymmetryClass.COMPLEX:
            V = symplectic_service.sample_haar_unitary(len(e), rng, size=size)
        elif cls is SymmetryClass.REAL:
            V = U.conj()
        else:
            I = symplectic_service.I(len(e))
            V = I.T @ U.conj() @ I
        phi = np.zeros((size, 2 * n, n), dtype=complex)
        phi[:, h, h] = 1.0
        phi[:, e[:, None], e] = (U + V) / 2
        phi[:, n + e[:, None], e] = 1j * (U - V) / 2
        return phi

    def moment_monte_carlo(self, B: np.ndarray, channels: ChannelData, p: int, q: Optional[int],
                           samples: int, rng: np.random.Generator, kind: str = "pair") -> Tuple[float, float]:
        """
        直接对 RPP 标架平均，返回 (估计, 标准误差)

        kind: "single" → I_p(B), "pair" → I_pq(B), "hyperbolic" → 双曲求和
        """
        cls = channels.symmetry_class
        b = cls.block
        tau = cls.tau_factor
        cp = slice(b * (p - 1), b * p)
        h = channels.column_indices(ChannelKind.HYPERBOLIC)
        values = []
        done = 0
        while done < samples:
            size = min(_CHUNK, samples - done)
            phi = self.sample_rpp_frames(channels, rng, size)
            X = phi.conj().transpose(0, 2, 1) @ B @ phi
            if kind == "single":
                v = np.einsum("sii->s", X[:, cp, cp]).real
            elif kind == "hyperbolic":
                v = (np.abs(X[:, cp][:, :, h]) ** 2).sum(axis=(1, 2))
            else:
                cq = slice(b * (q - 1), b * q)
                v = (np.abs(X[:, cp, cq]) ** 2).sum(axis=(1, 2))
            values.append(tau * v)
            done += size
        v = np.concatenate(values)
        return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))

    # ------------------------------------------------------------------
    # γ_p 公式
    # ------------------------------------------------------------------
    def trace_value(self, P_list: Sequence[np.ndarray], channels: ChannelData) -> float:
        """E Re τTr[Π_e(P+P*)Π_e P Π_e] (样本平均)"""
        Pe, _ = self.projections(channels)
        tau = channels.symmetry_class.tau_factor
        vals = [np.trace(Pe @ (P + P.conj().T) @ Pe @ P @ Pe).real for P in P_list]
        return float(tau * np.mean(vals))

    @staticmethod
    def gamma_formula(trace: float, inputs: GammaFormulaInputs) -> float:
        """λ²/(4L_e(L_e+δ_R-½δ_H))·(L-p+½δ_C+δ_R+¼δ_H)·trace"""
        cls = inputs.symmetry_class
        dR = 1.0 if cls is SymmetryClass.REAL else 0.0
        dC = 1.0 if cls is SymmetryClass.COMPLEX else 0.0
        dH = 1.0 if cls is SymmetryClass.QUATERNION else 0.0
        L_e = inputs.L_e
        pref = inputs.lam ** 2 / (4 * L_e * (L_e + dR - 0.5 * dH))
        return float(pref * (inputs.L - inputs.p + 0.5 * dC + dR + 0.25 * dH) * trace)

    def gamma_from_moment_terms(self, P_list: Sequence[np.ndarray], channels: ChannelData,
                                p: int, lam: float) -> float:
        """
        逐项组装 E g_p/λ² = ½I_p(A2) - ½·Σ_hyp - ½·Σ_{L_h<q<p} I_pq - ¼·I_pp

        其中 B = P + P*, A2 = ½(2P*P + P² + P*²)。
        """
        self._check_elliptic(channels, p)
        L_h = channels.L_h
        vals = []
        for P in P_list:
            Ph = P.conj().T
            B = P + Ph
            A2 = 0.5 * (2 * Ph @ P + P @ P + Ph @ Ph)
            v = 0.5 * self.moment_integral_Ip(A2, channels) - 0.5 * self.hyperbolic_sum(B, channels)
            v -= 0.5 * sum(self.moment_integral_Ipq(B, p, q, channels) for q in range(L_h + 1, p))
            v -= 0.25 * self.moment_integral_Ipq(B, p, p, channels)
            vals.append(v)
        return float(lam ** 2 * np.mean(vals))

    def sum_rule(self, B: np.ndarray, p: int, channels: ChannelData) -> Tuple[float, float]:
        """(Σ_{q elliptic} I_pq, τTr[B_e²]/(4L_e))"""
        Pe, _ = self.projections(channels)
        Be = Pe @ B @ Pe
        tau = channels.symmetry_class.tau_factor
        total = sum(self.moment_integral_Ipq(B, p, q, channels) for q in range(channels.L_h + 1, channels.L + 1))
        return float(total), float(tau * np.trace(Be @ Be).real / (4 * channels.L_e))

    # ------------------------------------------------------------------
    # 闭式
    # ------------------------------------------------------------------
    @staticmethod
    def _default_form(params: ModelParams) -> str:
        return "leading" if params.model is ModelKind.ANDO else "exact"

    def channel_energies(self, params: ModelParams, form: str) -> np.ndarray:
        """闭式所用的 μ_l；leading 形式取零磁通 (Ando 取 t→0)"""
        L = params.L
        if params.model is ModelKind.ANDO or params.model is ModelKind.ANDERSON_REAL:
            l = np.arange(L)
            return params.E - 2 * np.cos(2 * np.pi * l / L)
        p = params
        if form == "leading":
            p = params.model_copy(update={"phi": 0.0, "phi_vec": [0.0] * len(params.phi_vec)})
        m = model_service.transverse_basis(p)
        free = p.E * np.eye(L) - model_service.laplacian(p)
        return np.real(np.diag(m.conj().T @ free @ m))

    def formula_inputs(self, params: ModelParams, p: int, form: Optional[str] = None) -> GammaFormulaInputs:
        """由模型参数求 L_e, L_h, k_l 与迹 (1/L)(Σ_{elliptic} 1/sin k_l)²"""
        form = form or self._default_form(params)
        if form not in ("exact", "leading"):
            raise ContractError(f"未知公式形式: {form}")
        if params.model is ModelKind.ANDO and form == "exact":
            raise ContractError("Ando 模型只提供 t→0 的主阶公式 (form=leading)")
        mu = self.channel_energies(params, form)
        for l, m in enumerate(mu):
            if abs(abs(m) - 2) <= settings.parabolic_tol:
                raise InternalBandEdgeError(l, abs(m))
        ell = np.abs(mu) < 2
        sin_k = np.sqrt(1 - mu[ell] ** 2 / 4)
        labels = np.flatnonzero(ell)
        for l, s in zip(labels, sin_k):
            if s < settings.band_edge_tol:
                raise InternalBandEdgeError(int(l), float(s), quantity="|sin k|")
        L = params.L
        L_e = int(ell.sum())
        if L_e == 0:
            raise ContractError("没有 elliptic 通道")
        if not L - L_e < p <= L:
            raise ContractError(f"p={p} 不是 elliptic 通道 (L_h={L - L_e})")
        trace = float(np.sum(1 / sin_k) ** 2 / L)
        return GammaFormulaInputs(
            symmetry_class=params.symmetry_class, L=L, L_e=L_e, L_h=L - L_e, p=p, lam=params.lam,
            k=np.arccos(mu[ell] / 2).tolist(), trace=trace,
        )

    def closed_form_gamma(self, params: ModelParams, p: int, form: Optional[str] = None) -> float:
        """闭式 γ_p；form=exact 用 h_k(φ)，form=leading 用零磁通 (或 t→0) 的 k_l"""
        inputs = self.formula_inputs(params, p, form)
        return self.gamma_formula(inputs.trace, inputs)

    def closed_form_spectrum(self, params: ModelParams, form: Optional[str] = None) -> Dict[int, float]:
        """全部 elliptic 通道的 γ_p"""
        first = self.formula_inputs(params, params.L, form)
        return {p: self.gamma_formula(first.trace, first.model_copy(update={"p": p}))
                for p in range(first.L_h + 1, first.L + 1)}

    def equidistance_spacing(self, inputs: GammaFormulaInputs) -> float:
        """γ_p - γ_{p+1}，与 p 无关"""
        at = lambda p: self.gamma_formula(inputs.trace, inputs.model_copy(update={"p": p}))
        return at(inputs.p) - at(inputs.p + 1)

    @staticmethod
    def class_ratios(L_e: int) -> Dict[str, float]:
        """p = L 时的 γ^R/γ^C 与 γ^C/γ^H"""
        return {
            "R/C": 2 * L_e / (L_e + 1),
            "C/H": 2 * (L_e - 0.5) / L_e,
        }

    # ------------------------------------------------------------------
    # Haar 矩
    # ------------------------------------------------------------------
    @staticmethod
    def moment_exact(n: int) -> Dict[str, float]:
        return {
            "E|U11|^2": 1 / n,
            "E|U11|^2|U22|^2": 1 / (n * n - 1),
            "E U11 U22 conj(U12 U21)": -1 / (n * (n * n - 1)),
            "E|U11|^2|U12|^2": 1 / (n * (n + 1)),
            "E|U11|^2|U21|^2": 1 / (n * (n + 1)),
            "E|U11|^4": 2 / (n * (n + 1)),
        }

    @staticmethod
    def _moment_samples(U: np.ndarray) -> Dict[str, np.ndarray]:
        a = np.abs(U) ** 2
        return {
            "E|U11|^2": a[:, 0, 0],
            "E|U11|^2|U22|^2": a[:, 0, 0] * a[:, 1, 1],
            "E U11 U22 conj(U12 U21)": U[:, 0, 0] * U[:, 1, 1] * np.conj(U[:, 0, 1] * U[:, 1, 0]),
            "E|U11|^2|U12|^2": a[:, 0, 0] * a[:, 0, 1],
            "E|U11|^2|U21|^2": a[:, 0, 0] * a[:, 1, 0],
            "E|U11|^4": a[:, 0, 0] ** 2,
        }

    @staticmethod
    def trace_moments_exact(A, B, C, D) -> Dict[str, complex]:
        n = A.shape[0]
        tr = np.trace
        k = n * n - 1
        return {
            "E Tr(U*AUB)": tr(A) * tr(B) / n,
            "E Tr(U^T A conj(U) B)": tr(A) * tr(B) / n,
            "E Tr(conj(U) A U B)": tr(A @ B.T) / n,
            "E Tr(U*AUBU*CUD)":
                (tr(A) * tr(C) * tr(B @ D) + tr(A @ C) * tr(B) * tr(D)) / k
                - (tr(A @ C) * tr(B @ D) + tr(A) * tr(B) * tr(C) * tr(D)) / (n * k),
            "E Tr(U*AUBU^TC conj(U) D)":
                (tr(A) * tr(C) * tr(B @ D) + tr(A @ C.T) * tr(B @ D.T)) / k
                - (tr(A @ C.T) * tr(B @ D) + tr(A) * tr(C) * tr(B @ D.T)) / (n * k),
            "E Tr(U*A conj(U) BU^TCUD)":
                (tr(A @ C.T) * tr(B @ D.T) + tr(A @ C) * tr(B) * tr(D)) / k
                - (tr(A @ C) * tr(B @ D.T) + tr(A @ C.T) * tr(B) * tr(D)) / (n * k),
        }

    @staticmethod
    def _trace_moment_samples(U: np.ndarray, A, B, C, D) -> Dict[str, np.ndarray]:
        Uh = U.conj().transpose(0, 2, 1)
        Ut = U.transpose(0, 2, 1)
        Ub = U.conj()

        def tr(X):
            return np.trace(X, axis1=1, axis2=2)

        return {
            "E Tr(U*AUB)": tr(Uh @ A @ U @ B),
            "E Tr(U^T A conj(U) B)": tr(Ut @ A @ Ub @ B),
            "E Tr(conj(U) A U B)": tr(Ub @ A @ U @ B),
            "E Tr(U*AUBU*CUD)": tr(Uh @ A @ U @ B @ Uh @ C @ U @ D),
            "E Tr(U*AUBU^TC conj(U) D)": tr(Uh @ A @ U @ B @ Ut @ C @ Ub @ D),
            "E Tr(U*A conj(U) BU^TCUD)": tr(Uh @ A @ Ub @ B @ Ut @ C @ U @ D),
        }

    def haar_moment_check(self, n: int, samples: int, rng: np.random.Generator,
                          matrices: Optional[Sequence[np.ndarray]] = None) -> List[MomentCheckRow]:
        """Haar 二阶、四阶矩与迹公式的 Monte Carlo 检验"""
        if n < 2:
            raise ContractError("haar_moment_check 要求 n >= 2")
        if matrices is None:
            matrices = [rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) for _ in range(4)]
        A, B, C, D = matrices
        exact: Dict[str, complex] = dict(self.moment_exact(n))
        exact.update(self.trace_moments_exact(A, B, C, D))
        sums = {k: 0.0 + 0j for k in exact}
        sq = {k: 0.0 for k in exact}
        done = 0
        while done < samples:
            size = min(_CHUNK, samples - done)
            U = symplectic_service.sample_haar_unitary(n, rng, size=size)
            batch = self._moment_samples(U)
            batch.update(self._trace_moment_samples(U, A, B, C, D))
            for k, v in batch.items():
                sums[k] += v.sum()
                sq[k] += float((np.abs(v) ** 2).sum())
            done += size
        rows = []
        for k, ex in exact.items():
            mean = sums[k] / samples
            var = max(sq[k] / samples - abs(mean) ** 2, 0.0) * samples / (samples - 1)
            err = math.sqrt(var / samples)
            dev = abs(mean - ex)
            sigma = dev / err if err > 0 else (0.0 if dev < 1e-12 else math.inf)
            rows.append(MomentCheckRow(name=k, estimate=complex(mean), exact=complex(ex),
                                       stderr=err, deviation=dev, sigma=sigma))
        logger.info(f"Haar 矩检验 n={n}, {samples} 个样本, 最大偏差 {max(r.sigma for r in rows):.2f}σ")
        return rows


# 创建全局实例
perturbation_service = PerturbationService()
