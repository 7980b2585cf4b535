"""自检套件：代数恒等式、正规形重构与 Monte Carlo 检验"""
import logging
import math
import time
from typing import Callable, Iterable, List

import numpy as np

from app.errors import DegenerateBlockError, LyapunovError
from app.models import (
    ChainConfig, ChannelKind, DisorderKind, IsotropicFrame, ModelKind, ModelParams,
    SymmetryClass, VerifyResult,
)
from app.services.ando_service import ando_service
from app.services.frame_service import frame_service
from app.services.lyapunov_service import lyapunov_service
from app.services.model_service import model_service
from app.services.perturbation_service import perturbation_service
from app.services.rpp_service import rpp_service
from app.services.symplectic_service import symplectic_service

logger = logging.getLogger(__name__)

ALGEBRA_TOL = 1e-9
# 10⁴ 步链之后的标架漂移上限
CHAIN_TOL = 1e-8
MC_SIGMA = 3.0

# 小尺寸的代表性参数：每个模型两组
QUICK_MODELS = [
    ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=3, E=0.5, phi=0.7),
    ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=4, E=1.31, phi=2.1),
    ModelParams(model=ModelKind.ANDERSON_REAL, L=3, E=0.5),
    ModelParams(model=ModelKind.ANDERSON_REAL, L=4, E=2.5),
    ModelParams(model=ModelKind.ANDO, L=3, E=0.5, t=0.3),
    ModelParams(model=ModelKind.ANDO, L=4, E=1.1, t=0.2),
    ModelParams(model=ModelKind.SLAB, L=4, n_side=2, dim=3, E=0.3, phi_vec=[0.4, 1.3]),
    ModelParams(model=ModelKind.SLAB, L=3, n_side=3, dim=2, E=0.9, phi_vec=[0.8]),
]

CLASS_MODELS = {
    SymmetryClass.COMPLEX: QUICK_MODELS[0],
    SymmetryClass.REAL: QUICK_MODELS[2],
    SymmetryClass.QUATERNION: QUICK_MODELS[4],
}


class VerifyService:
    """quick: 代数恒等式；full: 再加 Haar 矩、RPP 矩积分与短链统计"""

    def __init__(self, seed: int = 20240101):
        self.seed = seed

    def _rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(stream,)))

    @staticmethod
    def _row(suite: str, check: str, value: float, tol: float, fmt: str = ".2e") -> VerifyResult:
        passed = bool(np.isfinite(value) and value <= tol)
        return VerifyResult(suite=suite, check=check, passed=passed, detail=f"{value:{fmt}} (tol {tol:g})")

    @staticmethod
    def _guard(suite: str, fn: Callable[[], Iterable[VerifyResult]]) -> List[VerifyResult]:
        """检查本身抛出领域异常时记为失败"""
        try:
            return list(fn())
        except LyapunovError as exc:
            logger.error(f"[{suite}] {type(exc).__name__}: {exc}")
            return [VerifyResult(suite=suite, check="exception", passed=False, detail=f"{type(exc).__name__}: {exc}")]

    # ------------------------------------------------------------------
    # quick
    # ------------------------------------------------------------------
    def check_constants(self) -> Iterable[VerifyResult]:
        for n in (1, 2, 3):
            for name, dev in symplectic_service.constant_identities(n).items():
                yield self._row("symplectic-core", f"{name} (n={n})", dev, ALGEBRA_TOL)

    def check_membership(self) -> Iterable[VerifyResult]:
        """随机群元与零无序转移矩阵的 HS 成员性"""
        rng = self._rng(1)
        for cls in SymmetryClass:
            for L in (1, 2, 3):
                T = symplectic_service.random_hs(L, cls, rng)
                ok = symplectic_service.is_hermitian_symplectic(T, cls, L=L)
                yield VerifyResult(suite="symplectic-core", check=f"random HS {cls.value} L={L}", passed=ok,
                                   detail=f"{symplectic_service.symplectic_deviation(T):.2e}")
        for params in QUICK_MODELS:
            w = model_service.sample_disorder(DisorderKind.UNIFORM, params.L, rng)
            T = model_service.transfer_matrix(params.model_copy(update={"lam": 0.3}), w)
            ok = symplectic_service.is_hermitian_symplectic(T, params.symmetry_class, tol=ALGEBRA_TOL)
            yield VerifyResult(suite="symplectic-core", check=f"T_n {params.model.value} L={params.L}",
                               passed=ok, detail=f"{symplectic_service.symplectic_deviation(T):.2e}")

    def check_cocycle(self) -> Iterable[VerifyResult]:
        """S(T₂T₁, Φ) = S(T₂, T₁·Φ)·S(T₁, Φ)"""
        rng = self._rng(2)
        for cls in SymmetryClass:
            L = 3
            frame = frame_service.random_frame(cls, L, rng)
            T1 = symplectic_service.random_hs(L, cls, rng)
            T2 = symplectic_service.random_hs(L, cls, rng)
            frame1, S1 = frame_service.act(T1, frame)
            _, S2 = frame_service.act(T2, frame1)
            _, S12 = frame_service.act(T2 @ T1, frame)
            yield self._row("frames", f"cocycle identity {cls.value}", float(np.abs(S12.S - S2.S @ S1.S).max()), ALGEBRA_TOL)

    def check_torus(self) -> Iterable[VerifyResult]:
        """S(T, Φt) = t⁻¹·S(T, Φ)·t"""
        rng = self._rng(3)
        for cls in SymmetryClass:
            L = 3
            n = cls.ambient_size(L)
            frame = frame_service.random_frame(cls, L, rng)
            T = symplectic_service.random_hs(L, cls, rng)
            if cls is SymmetryClass.REAL:
                d = rng.choice([-1.0, 1.0], size=n).astype(complex)
            elif cls is SymmetryClass.COMPLEX:
                d = np.exp(1j * rng.uniform(-np.pi, np.pi, n))
            else:
                z = np.exp(1j * rng.uniform(-np.pi, np.pi, L))
                d = np.ravel(np.column_stack([z, z.conj()]))
            dev = frame_service.torus_covariance_check(T, frame, np.diag(d))
            yield self._row("frames", f"torus covariance {cls.value}", dev, ALGEBRA_TOL)

    def check_partial_sums(self) -> Iterable[VerifyResult]:
        rng = self._rng(4)
        for cls in SymmetryClass:
            L = 2
            frame = frame_service.random_frame(cls, L, rng)
            Ts = [symplectic_service.random_hs(L, cls, rng, scale=0.3) for _ in range(20)]
            total, det = frame_service.partial_sum_check(Ts, frame, p=L)
            yield self._row("frames", f"partial sums {cls.value}", abs(total - det), 1e-7)

    def check_sum_rule(self) -> Iterable[VerifyResult]:
        rng = self._rng(5)
        for cls, params in CLASS_MODELS.items():
            bundle = model_service.build_normal_form(params)
            P = model_service.sample_perturbation(bundle, params, rng).P
            B = P + P.conj().T
            for p in bundle.channels.column_indices(ChannelKind.ELLIPTIC)[::cls.block] // cls.block + 1:
                lhs, rhs = perturbation_service.sum_rule(B, int(p), bundle.channels)
                yield self._row("perturbation", f"sum rule {cls.value} p={p}", abs(lhs - rhs), ALGEBRA_TOL)

    def check_chain_invariants(self, steps: int = 10000) -> Iterable[VerifyResult]:
        """长链后标架仍为正交归一的 Lagrange 标架"""
        for cls, params in CLASS_MODELS.items():
            params = params.model_copy(update={"L": 2, "lam": 0.4})
            bundle = model_service.build_normal_form(params)
            config = ChainConfig(steps=steps, burn_in=0, keep_snapshots=False, seed=self.seed)
            trace = lyapunov_service.propagate(bundle, params, config)
            inv = frame_service.invariants(trace.frame)
            yield self._row("lyapunov", f"frame invariants after {steps} steps {cls.value}", max(inv.values()), CHAIN_TOL)

    def check_normal_forms(self) -> Iterable[VerifyResult]:
        for params in QUICK_MODELS:
            bundle = model_service.build_normal_form(params)
            name = f"{params.model.value} L={params.L} E={params.E:g}"
            yield self._row("models", f"reconstruction {name}", bundle.residual, 1e-8)
            yield self._row("models", f"symplectic basis {name}", symplectic_service.symplectic_deviation(bundle.basis), 1e-8)
            ch = bundle.channels
            hyperbolic_first = all(k is ChannelKind.HYPERBOLIC for k in ch.kinds[:ch.L_h])
            yield VerifyResult(suite="models", check=f"channel order {name}", passed=hyperbolic_first,
                               detail=f"L_h={ch.L_h}, L_e={ch.L_e}")

    def check_ando_blocks(self) -> Iterable[VerifyResult]:
        grid = [(0.5, 0.3, 2 * np.pi / 3), (1.1, 0.2, np.pi / 2), (3.5, 0.4, np.pi / 3), (0.0, 1.2, 2.0), (-2.7, 0.6, 1.0)]
        worst_b = 0.0
        for E, t, eta in grid:
            yield self._row("ando", f"similarity E={E:g} t={t:g}", ando_service.similarity_deviation(E, t, eta), ALGEBRA_TOL)
            try:
                basis = ando_service.block_basis(E, t, eta)
            except DegenerateBlockError as exc:
                yield VerifyResult(suite="ando", check=f"block basis E={E:g} t={t:g}", passed=True,
                                   detail=f"skipped: {exc}", expected_warning=True)
                continue
            blk = basis.spectrum
            ev = ando_service.block_eigenvalues(blk)
            yield self._row("ando", f"characteristic polynomial {blk.case.value} E={E:g}",
                            float(np.abs(ando_service.characteristic_polynomial(blk, ev)).max()), 1e-8)
            yield self._row("ando", f"block basis {blk.case.value} E={E:g} t={t:g}", basis.residual, 1e-8)
            worst_b = max(worst_b, abs(ando_service.closed_b_discrepancy(E, t, eta)))
        yield VerifyResult(
            suite="ando", check="closed-form b coefficient", passed=True, expected_warning=worst_b > 1e-12,
            detail=f"trace formula differs from (e²t²-f²+2-2t⁴)/(1+t²)² by up to {worst_b:.3e}",
        )

    def check_block_structure(self) -> Iterable[VerifyResult]:
        """λ = 0 时 U 在 hyperbolic 块上保持对角，与 elliptic 块不混合"""
        params = QUICK_MODELS[1].model_copy(update={"lam": 0.0})
        bundle = model_service.build_normal_form(params)
        if bundle.channels.L_h == 0:
            return
        config = ChainConfig(steps=200, burn_in=10, stride=5, seed=self.seed)
        _, ens = lyapunov_service.run_chain(bundle, params, config)
        report = rpp_service.block_structure_check(ens)
        yield self._row("rpp-stats", "free offblock", report.offblock_rms, 1e-8)

    # ------------------------------------------------------------------
    # full
    # ------------------------------------------------------------------
    def check_haar_moments(self, samples: int = 100000) -> Iterable[VerifyResult]:
        rows = perturbation_service.haar_moment_check(8, samples, self._rng(10))
        for r in rows:
            yield VerifyResult(suite="perturbation", check=f"Haar n=8 {r.name}", passed=r.sigma <= MC_SIGMA,
                               detail=f"{r.sigma:.2f}σ (estimate {r.estimate:.4g}, exact {r.exact:.4g})")
        rows4 = perturbation_service.haar_moment_check(4, samples, self._rng(11))
        m3 = next(r for r in rows4 if r.name.startswith("E U11 U22"))
        yield VerifyResult(suite="perturbation", check="Haar n=4 E U11 U22 conj(U12 U21) = -1/60",
                           passed=m3.sigma <= MC_SIGMA and abs(m3.exact.real + 1 / 60) < 1e-15,
                           detail=f"{m3.estimate.real:.5f} ({m3.sigma:.2f}σ)")

    def check_rpp_moments(self, samples: int = 50000) -> Iterable[VerifyResult]:
        """RPP 标架下的 I_pq Monte Carlo 与闭式"""
        rng = self._rng(12)
        for cls in (SymmetryClass.COMPLEX, SymmetryClass.REAL, SymmetryClass.QUATERNION):
            params = CLASS_MODELS[cls]
            bundle = model_service.build_normal_form(params)
            ch = bundle.channels
            P = model_service.sample_perturbation(bundle, params, rng).P
            B = P + P.conj().T
            p = ch.L
            q = ch.L_h + 1
            for kind, qq, exact in (
                ("pair", q, perturbation_service.moment_integral_Ipq(B, p, q, ch)),
                ("pair", p, perturbation_service.moment_integral_Ipq(B, p, p, ch)),
                ("single", None, perturbation_service.moment_integral_Ip(B, ch, p)),
                ("hyperbolic", None, perturbation_service.hyperbolic_sum(B, ch, p)),
            ):
                est, err = perturbation_service.moment_monte_carlo(B, ch, p, qq, samples, rng, kind=kind)
                sigma = abs(est - exact) / err if err > 0 else abs(est - exact) / 1e-12
                yield VerifyResult(suite="perturbation", check=f"RPP {kind} {cls.value} p={p} q={qq}",
                                   passed=sigma <= MC_SIGMA or abs(est - exact) < 1e-10,
                                   detail=f"{est:.5g} vs {exact:.5g} ({sigma:.2f}σ)")

    def check_expansion(self, triples: int = 20) -> Iterable[VerifyResult]:
        """二阶展开误差的 log-log 斜率为 3 (λ ∈ [1e-3, 1e-1], L = 4)"""
        rng = self._rng(13)
        for cls in SymmetryClass:
            slopes = perturbation_service.expansion_slopes(cls, 4, triples, rng)
            yield VerifyResult(suite="perturbation", check=f"expansion order {cls.value}",
                               passed=perturbation_service.slopes_acceptable(slopes),
                               detail=f"slope median {np.median(slopes):.3f}, range [{slopes.min():.3f}, {slopes.max():.3f}]")

    def check_short_chain(self) -> Iterable[VerifyResult]:
        """短链：Lyapunov 谱在 ±γ 对称的意义下非负，且弱无序下接近闭式"""
        params = ModelParams(model=ModelKind.ANDERSON_MAGNETIC, L=3, E=0.5, phi=0.9, lam=0.1)
        bundle = model_service.build_normal_form(params)
        config = ChainConfig(steps=20000, burn_in=100, realizations=2, seed=self.seed, keep_snapshots=False, threads=1)
        est, _ = lyapunov_service.run_ensemble(bundle, params, config, progress=False)
        formula = perturbation_service.closed_form_gamma(params, params.L, form="exact")
        gamma = est.gamma[params.L - 1]
        err = est.stderr[params.L - 1]
        dev = abs(gamma - formula)
        yield VerifyResult(suite="lyapunov", check="short chain vs closed form (p=L)",
                           passed=dev <= max(MC_SIGMA * err, 0.25 * formula),
                           detail=f"γ={gamma:.4e}±{err:.1e}, formula {formula:.4e}")
        yield VerifyResult(suite="lyapunov", check="ordered spectrum",
                           passed=all(a >= b - 3 * e for a, b, e in zip(est.gamma, est.gamma[1:], est.stderr)),
                           detail=", ".join(f"{g:.3e}" for g in est.gamma))

    # ------------------------------------------------------------------
    # 运行
    # ------------------------------------------------------------------
    QUICK = ["check_constants", "check_membership", "check_cocycle", "check_torus", "check_partial_sums",
             "check_sum_rule", "check_chain_invariants", "check_normal_forms", "check_ando_blocks",
             "check_block_structure"]
    FULL = ["check_haar_moments", "check_rpp_moments", "check_expansion", "check_short_chain"]

    def run(self, level: str = "quick", inject_fault: bool = False) -> List[VerifyResult]:
        """运行自检；inject_fault 时在损坏的 J 下运行成员性与常数检查"""
        if level not in ("quick", "full"):
            raise ValueError(f"未知级别: {level}")
        names = self.QUICK + (self.FULL if level == "full" else [])
        results: List[VerifyResult] = []
        start = time.perf_counter()
        if inject_fault:
            with symplectic_service.corrupted_form():
                results += self._guard("fault", self.check_constants)
                results += self._guard("fault", self.check_membership)
        for name in names:
            t0 = time.perf_counter()
            results += self._guard(name, getattr(self, name))
            logger.info(f"{name}: {time.perf_counter() - t0:.2f}s")
        failed = [r for r in results if not r.passed]
        logger.info(f"自检 {level}: {len(results) - len(failed)}/{len(results)} 通过, 用时 {time.perf_counter() - start:.1f}s")
        return results

    @staticmethod
    def summary(results: List[VerifyResult]) -> str:
        lines = []
        for r in results:
            mark = "PASS" if r.passed else "FAIL"
            if r.expected_warning:
                mark = "WARN"
            lines.append(f"{mark:4s} [{r.suite}] {r.check}: {r.detail}")
        return "\n".join(lines)


# 创建全局实例
verify_service = VerifyService()
