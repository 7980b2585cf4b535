"""模型服务：转移矩阵、正规形与扰动生成元"""
import json
import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import stats

from app.config import settings
from app.errors import ContractError, DimensionError, InternalBandEdgeError
from app.models import (
    ChannelData, ChannelKind, DisorderKind, ModelKind, ModelParams,
    NormalFormBundle, PerturbationGenerator, SymmetryClass,
)
from app.services.symplectic_service import Q2, Q3, symplectic_service

logger = logging.getLogger(__name__)

SQRT3 = math.sqrt(3.0)
# 截断于 ±3 的标准高斯的标准差
_TRUNC_STD = math.sqrt(stats.truncnorm.var(-3.0, 3.0))


class ModelService:
    """四个模型的转移矩阵与辛正规形"""

    # ------------------------------------------------------------------
    # 无序与横向算子
    # ------------------------------------------------------------------
    @staticmethod
    def sample_disorder(kind: DisorderKind, size: int, rng: np.random.Generator) -> np.ndarray:
        """均值 0、方差 1 的独立无序变量"""
        if kind is DisorderKind.UNIFORM:
            return rng.uniform(-SQRT3, SQRT3, size)
        if kind is DisorderKind.BINARY:
            return 2.0 * rng.integers(0, 2, size) - 1.0
        return stats.truncnorm.rvs(-3.0, 3.0, size=size, random_state=rng) / _TRUNC_STD

    @staticmethod
    def shift(n: int) -> np.ndarray:
        """周期平移 S_2"""
        return np.roll(np.eye(n), 1, axis=1).astype(complex)

    @staticmethod
    def fourier_basis(n: int) -> np.ndarray:
        """离散 Fourier 矩阵 m, 第 l 列为 e^{2πijl/n}/√n"""
        j = np.arange(n)
        return np.exp(2j * np.pi * np.outer(j, j) / n) / math.sqrt(n)

    @staticmethod
    def real_fourier_basis(n: int) -> np.ndarray:
        """正弦/余弦实 Fourier 基 m̂ (正交矩阵)"""
        j = np.arange(n)
        m = np.zeros((n, n))
        m[:, 0] = 1.0 / math.sqrt(n)
        for l in range(1, (n + 1) // 2):
            m[:, l] = math.sqrt(2.0 / n) * np.sin(2 * np.pi * j * l / n)
            m[:, n - l] = math.sqrt(2.0 / n) * np.cos(2 * np.pi * j * l / n)
        if n % 2 == 0:
            m[:, n // 2] = (-1.0) ** j / math.sqrt(n)
        return m

    def laplacian(self, params: ModelParams) -> np.ndarray:
        """横向磁 Laplacian Δ"""
        if params.model is ModelKind.SLAB:
            n = params.n_side
            terms = []
            for axis, phi in enumerate(params.phi_vec):
                S = self.shift(n)
                D = np.exp(1j * phi) * S + np.exp(-1j * phi) * S.conj().T
                factors = [np.eye(n)] * len(params.phi_vec)
                factors[axis] = D
                K = factors[0]
                for f in factors[1:]:
                    K = np.kron(K, f)
                terms.append(K)
            return sum(terms)
        S = self.shift(params.L)
        phi = 0.0 if params.model is ModelKind.ANDERSON_REAL else params.phi
        return np.exp(1j * phi) * S + np.exp(-1j * phi) * S.conj().T

    def transverse_basis(self, params: ModelParams) -> np.ndarray:
        if params.model is ModelKind.SLAB:
            m = np.eye(1)
            for _ in params.phi_vec:
                m = np.kron(m, self.fourier_basis(params.n_side))
            return m
        if params.model is ModelKind.ANDERSON_REAL:
            return self.real_fourier_basis(params.L).astype(complex)
        return self.fourier_basis(params.L)

    # ------------------------------------------------------------------
    # 转移矩阵
    # ------------------------------------------------------------------
    @staticmethod
    def spin_orbit_factor(t: float) -> np.ndarray:
        """K = 1 + t·q2"""
        return np.eye(2) + t * Q2

    def transfer_matrix(self, params: ModelParams, w: np.ndarray) -> np.ndarray:
        """单层转移矩阵 S_n"""
        w = np.asarray(w, dtype=float)
        if w.shape != (params.L,):
            raise DimensionError("无序样本长度不符", expected=params.L, actual=w.shape[0])
        L = params.L
        if params.model is ModelKind.ANDO:
            S = self.shift(L)
            H = (params.E * np.eye(2 * L) - np.kron(S + S.conj().T, np.eye(2))
                 - params.t * np.kron(S - S.conj().T, Q3)
                 - params.lam * np.kron(np.diag(w), np.eye(2)))
            K = np.kron(np.eye(L), self.spin_orbit_factor(params.t))
            Kinv = np.linalg.inv(K)
            return np.block([[H @ Kinv, -K.conj().T], [Kinv, np.zeros_like(K)]])
        top = params.E * np.eye(L) - self.laplacian(params) - params.lam * np.diag(w)
        T = np.block([[top, -np.eye(L)], [np.eye(L), np.zeros((L, L))]]).astype(complex)
        if params.model is ModelKind.ANDERSON_REAL:
            T = T.real.astype(complex)
        return T

    # ------------------------------------------------------------------
    # 通道分类
    # ------------------------------------------------------------------
    @staticmethod
    def channel_block(mu: float) -> Tuple[np.ndarray, complex, complex, float, ChannelKind]:
        """
        单通道 A = [[μ, -1], [1, 0]] 的辛基 N 与正规形数据

        返回 (N, ρ, κ, η, kind)；N⁻¹AN 为旋转 (elliptic) 或 diag(ρ, 1/ρ) (hyperbolic)。
        """
        if abs(mu) < 2:
            eta = math.acos(mu / 2)
            h = math.sin(eta) ** -0.5
            N = np.array([[h, 0.0], [h * math.cos(eta), h * math.sin(eta)]])
            return N, complex(math.cos(eta), math.sin(eta)), 1.0 + 0j, eta, ChannelKind.ELLIPTIC
        rho = mu / 2 + math.copysign(math.sqrt(mu * mu / 4 - 1), mu)
        h = abs(rho - 1 / rho) ** -0.5
        s = math.copysign(1.0, rho)
        N = np.array([[h, s * h], [h / rho, s * h * rho]])
        return N, complex(rho), complex(rho), 0.0, ChannelKind.HYPERBOLIC

    def classify(self, mu: np.ndarray, labels: Optional[List[int]] = None,
                 tol: Optional[float] = None) -> Tuple[np.ndarray, List[Tuple]]:
        """按 |μ| 稳定降序排列并逐通道构造正规形块"""
        tol = settings.parabolic_tol if tol is None else tol
        labels = list(range(len(mu))) if labels is None else labels
        for l, m in zip(labels, mu):
            if abs(abs(m) - 2) <= tol:
                raise InternalBandEdgeError(l, abs(m))
        order = np.argsort(-np.abs(mu), kind="stable")
        return order, [self.channel_block(mu[i]) for i in order]

    @staticmethod
    def assemble_channels(blocks: List[Tuple], L: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """由 2x2 通道块拼出 N, R_h, R_e (2L×2L)"""
        N = np.zeros((2 * L, 2 * L))
        R_h = np.zeros(2 * L, dtype=complex)
        R_e = np.zeros((2 * L, 2 * L))
        for i, (Nb, _, kappa, eta, _) in enumerate(blocks):
            idx = [i, L + i]
            N[np.ix_(idx, idx)] = Nb
            R_h[i], R_h[L + i] = kappa, 1 / kappa
            c, s = math.cos(eta), math.sin(eta)
            R_e[np.ix_(idx, idx)] = [[c, -s], [s, c]]
        return N.astype(complex), np.diag(R_h), R_e.astype(complex)

    # ------------------------------------------------------------------
    # 正规形
    # ------------------------------------------------------------------
    def _fourier_bundle(self, params: ModelParams, m: np.ndarray, symmetry_class: SymmetryClass) -> NormalFormBundle:
        L = params.L
        free = params.E * np.eye(L) - self.laplacian(params)
        mu_all = np.real(np.diag(m.conj().T @ free @ m))
        order, blocks = self.classify(mu_all)
        q = np.eye(L)[:, order]
        N, R_h, R_e = self.assemble_channels(blocks, L)
        zero = np.zeros((L, L))
        M = np.block([[m, zero], [zero, m]]).astype(complex)
        Q = np.block([[q, zero], [zero, q]]).astype(complex)
        channels = ChannelData(
            mu=mu_all[order],
            rho=np.array([b[1] for b in blocks]),
            kappa=np.array([b[2] for b in blocks]),
            eta=np.array([b[3] for b in blocks]),
            kinds=[b[4] for b in blocks],
            order=order,
            symmetry_class=symmetry_class,
        )
        if symmetry_class is SymmetryClass.REAL:
            M = M.real.astype(complex)
        return self._finish_bundle(params, symmetry_class, M, Q, N, R_h, R_e, channels, np.ones(L))

    def _finish_bundle(self, params, symmetry_class, M, Q, N, R_h, R_e, channels, coupling) -> NormalFormBundle:
        B = M @ Q @ N
        B_inv = symplectic_service.symplectic_inverse(B)
        free = self.transfer_matrix(params.model_copy(update={"lam": 0.0}), np.zeros(params.L))
        residual = float(np.abs(B_inv @ free @ B - R_h @ R_e).max())
        logger.debug(f"正规形残差 {residual:.3e} (model={params.model.value}, L={params.L})")
        return NormalFormBundle(
            params=params, symmetry_class=symmetry_class, M=M, Q=Q, N=N, R_h=R_h, R_e=R_e,
            channels=channels, basis=B, basis_inv=B_inv, coupling=np.asarray(coupling, dtype=float),
            residual=residual,
        )

    def build_normal_form_magnetic(self, params: ModelParams, strict: bool = True) -> NormalFormBundle:
        """管状磁 Anderson 模型 (类 C)"""
        if params.model not in (ModelKind.ANDERSON_MAGNETIC, ModelKind.ANDERSON_REAL):
            raise ContractError(f"磁 Anderson 构造器不适用于 {params.model.value}")
        if strict and params.phi == 0.0:
            raise ContractError("φ=0 时应使用实 Anderson 构造器")
        p = params.model_copy(update={"model": ModelKind.ANDERSON_MAGNETIC})
        return self._fourier_bundle(p, self.fourier_basis(params.L), SymmetryClass.COMPLEX)

    def build_normal_form_real(self, params: ModelParams) -> NormalFormBundle:
        """实 Anderson 模型 (类 R)"""
        if params.model not in (ModelKind.ANDERSON_MAGNETIC, ModelKind.ANDERSON_REAL):
            raise ContractError(f"实 Anderson 构造器不适用于 {params.model.value}")
        if params.model is ModelKind.ANDERSON_MAGNETIC and params.phi != 0.0:
            raise ContractError("实构造器要求 φ=0")
        p = params.model_copy(update={"model": ModelKind.ANDERSON_REAL, "phi": 0.0})
        return self._fourier_bundle(p, self.real_fourier_basis(params.L).astype(complex), SymmetryClass.REAL)

    def build_normal_form_slab(self, params: ModelParams) -> NormalFormBundle:
        """d 维板状模型 (类 C)"""
        if params.model is not ModelKind.SLAB:
            raise ContractError("slab 构造器需要 model=slab")
        if params.L > 4096:
            raise ContractError(f"L = N^(d-1) = {params.L} 超过 4096")
        if not any(params.phi_vec):
            logger.warning("slab 无磁通, 仍按类 C 处理")
        return self._fourier_bundle(params, self.transverse_basis(params), SymmetryClass.COMPLEX)

    def build_normal_form(self, params: ModelParams) -> NormalFormBundle:
        """按模型种类分派"""
        if params.model is ModelKind.ANDERSON_MAGNETIC:
            return self.build_normal_form_magnetic(params)
        if params.model is ModelKind.ANDERSON_REAL:
            return self.build_normal_form_real(params)
        if params.model is ModelKind.SLAB:
            return self.build_normal_form_slab(params)
        from app.services.ando_service import ando_service
        return ando_service.build_normal_form_ando(params)

    # ------------------------------------------------------------------
    # 扰动
    # ------------------------------------------------------------------
    @staticmethod
    def perturbation_factors(bundle: NormalFormBundle) -> Tuple[np.ndarray, np.ndarray]:
        """P = Cl·diag(c·w)·Bu 中的 (Cl, Bu)"""
        h = bundle.half
        return bundle.basis_inv[:, h:], bundle.basis[:h, :]

    def expand_disorder(self, bundle: NormalFormBundle, w: np.ndarray) -> np.ndarray:
        """格点无序扩展到纤维 (Ando 含自旋) 并乘以耦合因子"""
        b = bundle.half // bundle.params.L
        return np.repeat(np.asarray(w, dtype=float), b) * bundle.coupling

    def perturbation_from_disorder(self, bundle: NormalFormBundle, w: np.ndarray) -> PerturbationGenerator:
        Cl, Bu = self.perturbation_factors(bundle)
        P = Cl @ (self.expand_disorder(bundle, w)[:, None] * Bu)
        if bundle.symmetry_class is SymmetryClass.REAL:
            P = P.real.astype(complex)
        return PerturbationGenerator(P=P, w=np.asarray(w, dtype=float), nilpotent=True)

    def sample_perturbation(self, bundle: NormalFormBundle, params: ModelParams,
                            rng: np.random.Generator) -> PerturbationGenerator:
        w = self.sample_disorder(params.disorder, params.L, rng)
        return self.perturbation_from_disorder(bundle, w)

    def fourier_disorder(self, params: ModelParams, w: np.ndarray) -> np.ndarray:
        """W = m*·diag(w)·m (未置换)"""
        if params.model is ModelKind.ANDO:
            m = self.real_fourier_basis(params.L)
        else:
            m = self.transverse_basis(params)
        return m.conj().T @ np.diag(w) @ m

    @staticmethod
    def disorder_fourier_coefficients(w: np.ndarray) -> np.ndarray:
        """ŵ_p = (1/L)·Σ_j w_j e^{-2πijp/L}，沿最后一维"""
        w = np.asarray(w, dtype=float)
        return np.fft.fft(w, axis=-1) / w.shape[-1]

    # ------------------------------------------------------------------
    # 文本导出
    # ------------------------------------------------------------------
    _MATRICES = ["M", "Q", "N", "R_h", "R_e"]

    def bundle_to_text(self, bundle: NormalFormBundle) -> str:
        """正规形的纯文本导出 (回归夹具)"""
        ch = bundle.channels
        lines = [
            f"# model={bundle.params.model.value}",
            f"# class={bundle.symmetry_class.value}",
            f"# params={json.dumps(bundle.params.model_dump(mode='json'), sort_keys=True)}",
            f"# kinds={','.join(k.value for k in ch.kinds)}",
        ]
        arrays: Dict[str, np.ndarray] = {name: getattr(bundle, name) for name in self._MATRICES}
        arrays.update({
            "mu": ch.mu[None, :], "rho": ch.rho[None, :], "kappa": ch.kappa[None, :],
            "eta": ch.eta[None, :], "order": ch.order[None, :], "coupling": bundle.coupling[None, :],
        })
        for name, A in arrays.items():
            A = np.asarray(A, dtype=complex)
            lines.append(f"[{name}] {A.shape[0]} {A.shape[1]}")
            for row in A:
                lines.append(" ".join(f"{z.real:.17g} {z.imag:.17g}" for z in row))
        return "\n".join(lines) + "\n"

    def bundle_from_text(self, text: str) -> NormalFormBundle:
        header: Dict[str, str] = {}
        arrays: Dict[str, np.ndarray] = {}
        lines = text.splitlines()
        i = 0
        while i < len(lines):
            line = lines[i].strip()
            i += 1
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key] = value
                continue
            if line.startswith("["):
                name, rows, cols = line[1:line.index("]")], *map(int, line.split()[1:3])
                data = np.array([[float(x) for x in lines[i + r].split()] for r in range(rows)])
                arrays[name] = (data[:, 0::2] + 1j * data[:, 1::2]).reshape(rows, cols)
                i += rows
        params = ModelParams(**json.loads(header["params"]))
        cls = SymmetryClass(header["class"])
        channels = ChannelData(
            mu=arrays["mu"][0].real, rho=arrays["rho"][0], kappa=arrays["kappa"][0],
            eta=arrays["eta"][0].real, order=arrays["order"][0].real.astype(int),
            kinds=[ChannelKind(k) for k in header["kinds"].split(",")], symmetry_class=cls,
        )
        return self._finish_bundle(params, cls, arrays["M"], arrays["Q"], arrays["N"],
                                   arrays["R_h"], arrays["R_e"], channels, arrays["coupling"][0].real)


# 创建全局实例
model_service = ModelService()
