"""转移矩阵马尔可夫链与 Lyapunov 指数估计"""
import logging
import math
from multiprocessing import Pool
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm
from tqdm import tqdm

from app.config import resolve_threads, settings
from app.errors import LyapunovError, PartialEnsembleError, SingularActionError
from app.models import (
    ChainConfig, ChannelKind, FrameEnsemble, IsotropicFrame, LyapunovEstimate,
    ModelParams, NormalFormBundle,
)
from app.services.frame_service import frame_service
from app.services.model_service import model_service

logger = logging.getLogger(__name__)


class ChainTrace(NamedTuple):
    """单条链的原始累积量"""
    sums: np.ndarray            # Σ_n g (每列)
    batches: np.ndarray         # (批数, L') 各批的 Σ g
    batch_steps: np.ndarray     # 每批的步数
    frame: IsotropicFrame       # 末态标架
    U: List[np.ndarray]
    V: List[np.ndarray]
    steps: List[int]


def _realization_worker(args) -> Tuple[int, Optional[LyapunovEstimate], Optional[FrameEnsemble], str]:
    """进程池入口 (需可 pickle)"""
    bundle, params, config, r = args
    try:
        est, ens = lyapunov_service.run_chain(bundle, params, config, realization=r)
        return r, est, ens, ""
    except LyapunovError as exc:
        return r, None, None, f"{type(exc).__name__}: {exc}"


class LyapunovService:
    """Φ_n = T_n·Φ_{n-1} 的迭代、Birkhoff 平均与快照采集"""

    @staticmethod
    def realization_rng(seed: int, realization: int) -> np.random.Generator:
        """每个实现独立的随机流，与进程数无关"""
        return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(realization,)))

    @staticmethod
    def exp_perturbation(P: np.ndarray, lam: float, tol: Optional[float] = None) -> np.ndarray:
        """e^{λP}；P²=0 或 P³=0 时截断为精确多项式，否则用 scaling-squaring"""
        tol = settings.nilpotent_tol if tol is None else tol
        one = np.eye(P.shape[0], dtype=complex)
        nrm = np.linalg.norm(P)
        if nrm == 0:
            return one
        P2 = P @ P
        if np.linalg.norm(P2) <= tol * nrm ** 2:
            return one + lam * P
        if np.linalg.norm(P2 @ P) <= tol * nrm ** 3:
            return one + lam * P + 0.5 * lam ** 2 * P2
        return expm(lam * P)

    def step_matrix(self, bundle: NormalFormBundle, P: np.ndarray, lam: float) -> np.ndarray:
        """T = R·e^{λP}"""
        return bundle.R @ self.exp_perturbation(P, lam)

    @staticmethod
    def batch_stderr(batches: np.ndarray, batch_steps: np.ndarray) -> np.ndarray:
        """单链的 batch means 标准误差"""
        keep = batch_steps > 0
        if keep.sum() < 2:
            return np.full(batches.shape[1], np.nan)
        means = batches[keep] / batch_steps[keep][:, None]
        return means.std(axis=0, ddof=1) / math.sqrt(keep.sum())

    @staticmethod
    def channel_exponents(est: LyapunovEstimate) -> Tuple[np.ndarray, np.ndarray]:
        """按通道归并列指数 (类 H 的四元对角块为标量，两列取平均)"""
        b = est.symmetry_class.block
        gamma = np.asarray(est.gamma).reshape(-1, b).mean(axis=1)
        stderr = np.asarray(est.stderr).reshape(-1, b).mean(axis=1)
        return gamma, stderr

    # ------------------------------------------------------------------
    # 单链
    # ------------------------------------------------------------------
    def propagate(self, bundle: NormalFormBundle, params: ModelParams, config: ChainConfig,
                  realization: int = 0) -> ChainTrace:
        """
        迭代 Φ ← R·(1 + λP_n)·Φ

        P_n = Cl·diag(c·w_n)·Bu 满足 P² = 0，因此 e^{λP} = 1 + λP 精确成立，
        每步只需 O(L'²) 的矩阵-向量块运算。
        """
        cls = bundle.symmetry_class
        rng = self.realization_rng(config.seed, realization)
        n = bundle.half
        R = bundle.R
        Cl, Bu = model_service.perturbation_factors(bundle)
        RC = R @ Cl
        lam = params.lam

        if config.initial_frame == "random":
            phi = frame_service.random_frame(cls, params.L, rng).phi
        else:
            phi = frame_service.axis_frame(n, cls).phi

        N = config.steps
        n_batches = max(1, min(settings.batch_count, N))
        sums = np.zeros(n)
        batches = np.zeros((n_batches, n))
        batch_steps = np.zeros(n_batches, dtype=int)
        U: List[np.ndarray] = []
        V: List[np.ndarray] = []
        snap_steps: List[int] = []
        pending = 0

        for step in range(1, N + 1):
            if lam != 0.0:
                w = model_service.sample_disorder(params.disorder, params.L, rng)
                cw = model_service.expand_disorder(bundle, w)
                phi = R @ phi + lam * (RC @ (cw[:, None] * (Bu @ phi)))
            else:
                phi = R @ phi
            pending += 1
            if step % config.renorm_every and step != N:
                continue
            try:
                Q, S = frame_service.orthonormalize(phi, cls)
            except SingularActionError as exc:
                raise exc.at_step(step)
            logs = frame_service.column_logs(S)
            phi = Q
            sums += logs
            b = (step - 1) * n_batches // N
            batches[b] += logs
            batch_steps[b] += pending
            pending = 0
            if step % settings.reproject_every == 0:
                phi = frame_service.reproject(phi, cls)
            if config.keep_snapshots and step > config.burn_in and step % config.stride == 0:
                uv = frame_service.uv_of_frame(IsotropicFrame(phi=phi, symmetry_class=cls))
                U.append(uv.U)
                V.append(uv.V)
                snap_steps.append(step)

        frame = IsotropicFrame(phi=phi, symmetry_class=cls)
        return ChainTrace(sums, batches, batch_steps, frame, U, V, snap_steps)

    def _ensemble_of(self, bundle: NormalFormBundle, trace: ChainTrace, realization: int) -> FrameEnsemble:
        ch = bundle.channels
        empty = FrameEnsemble.empty(bundle.half, ch.column_indices(ChannelKind.ELLIPTIC),
                                    ch.column_indices(ChannelKind.HYPERBOLIC), bundle.symmetry_class)
        if not trace.U:
            return empty
        k = len(trace.U)
        return FrameEnsemble(
            U=np.array(trace.U), V=np.array(trace.V),
            realization=np.full(k, realization, dtype=int), step=np.array(trace.steps, dtype=int),
            elliptic=empty.elliptic, hyperbolic=empty.hyperbolic, symmetry_class=bundle.symmetry_class,
        )

    def run_chain(self, bundle: NormalFormBundle, params: ModelParams, config: ChainConfig,
                  realization: int = 0) -> Tuple[LyapunovEstimate, FrameEnsemble]:
        """单个实现的 Lyapunov 估计与快照"""
        trace = self.propagate(bundle, params, config, realization)
        gamma = trace.sums / config.steps
        est = LyapunovEstimate(
            gamma=gamma.tolist(),
            stderr=self.batch_stderr(trace.batches, trace.batch_steps).tolist(),
            steps=config.steps, realizations=1, seed=config.seed,
            symmetry_class=bundle.symmetry_class, per_realization=[gamma.tolist()],
        )
        return est, self._ensemble_of(bundle, trace, realization)

    # ------------------------------------------------------------------
    # 系综
    # ------------------------------------------------------------------
    def run_ensemble(self, bundle: NormalFormBundle, params: ModelParams, config: ChainConfig,
                     progress: Optional[bool] = None) -> Tuple[LyapunovEstimate, FrameEnsemble]:
        """R 个独立实现；按实现序号归约，结果与进程数无关"""
        R = config.realizations
        progress = settings.progress if progress is None else progress
        workers = min(resolve_threads(config.threads), R)
        jobs = [(bundle, params, config, r) for r in range(R)]
        logger.info(f"运行 {R} 个实现 (N={config.steps}, 进程数 {workers}, seed={config.seed})")

        outputs = [None] * R
        bar = tqdm(total=R, desc="实现", disable=not progress, leave=False)
        if workers == 1:
            for job in jobs:
                out = _realization_worker(job)
                outputs[out[0]] = out
                bar.update(1)
        else:
            with Pool(processes=workers) as pool:
                for out in pool.imap(_realization_worker, jobs):
                    outputs[out[0]] = out
                    bar.update(1)
        bar.close()

        failed = [r for r, est, _, _ in outputs if est is None]
        done = [(r, est, ens) for r, est, ens, _ in outputs if est is not None]
        result = self._aggregate(bundle, config, done) if done else None
        if failed:
            errors = [msg for _, est, _, msg in outputs if est is None]
            for r, msg in zip(failed, errors):
                logger.warning(f"实现 {r} 失败: {msg}")
            raise PartialEnsembleError(failed, errors, partial=result)
        return result

    def _aggregate(self, bundle: NormalFormBundle, config: ChainConfig,
                   done: Sequence[Tuple[int, LyapunovEstimate, FrameEnsemble]]) -> Tuple[LyapunovEstimate, FrameEnsemble]:
        gammas = np.array([est.gamma for _, est, _ in done])
        if len(done) > 1:
            stderr = gammas.std(axis=0, ddof=1) / math.sqrt(len(done))
        else:
            stderr = np.asarray(done[0][1].stderr)
        ensemble = done[0][2]
        for _, _, ens in done[1:]:
            ensemble = ensemble.merge(ens)
        est = LyapunovEstimate(
            gamma=gammas.mean(axis=0).tolist(), stderr=stderr.tolist(),
            steps=config.steps, realizations=len(done), seed=config.seed,
            symmetry_class=bundle.symmetry_class, per_realization=gammas.tolist(),
        )
        return est, ensemble

    def run_adaptive(self, bundle: NormalFormBundle, params: ModelParams, config: ChainConfig,
                     target: float = 0.01, exponents: Optional[Sequence[int]] = None,
                     max_steps: int = 10 ** 7, progress: Optional[bool] = None) -> LyapunovEstimate:
        """N 倍增直到所选指数 (1 起) 的 stderr/γ ≤ target 或达到上限"""
        exponents = list(exponents) if exponents else list(range(1, bundle.channels.L + 1))
        cfg = config.model_copy(update={"keep_snapshots": False})
        while True:
            est, _ = self.run_ensemble(bundle, params, cfg, progress=progress)
            gamma, err = self.channel_exponents(est)
            idx = np.array(exponents) - 1
            gamma, err = np.abs(gamma[idx]), err[idx]
            rel = float(np.max(err / np.maximum(gamma, 1e-300)))
            logger.info(f"N={cfg.steps}: 最大相对误差 {rel:.3%}")
            if rel <= target or cfg.steps * 2 > max_steps:
                if rel > target:
                    logger.warning(f"达到步数上限 {max_steps}, 相对误差 {rel:.3%} > {target:.1%}")
                return est
            cfg = cfg.model_copy(update={"steps": cfg.steps * 2})


# 创建全局实例
lyapunov_service = LyapunovService()
