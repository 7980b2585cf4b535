"""应用配置"""
import logging
import math
import os
from pydantic_settings import BaseSettings
from typing import Optional


class Settings(BaseSettings):
    # 应用配置
    app_name: str = "Quasi-1D Lyapunov Spectrum Lab"
    debug: bool = False
    log_level: str = "INFO"

    # 群成员/标架判定容差
    membership_tol: float = 1e-10     # T*JT = J 及类对称性
    frame_tol: float = 1e-10          # Φ*Φ = 1, Φ*JΦ = 0
    pairing_tol: float = 1e-10        # 归一化配对的最小模
    singular_cond: float = 1e12       # Gram-Schmidt 奇异判定的条件数上限
    nilpotent_tol: float = 1e-14      # ‖P³‖ < tol·‖P‖³ 视为幂零

    # 正规形容差
    parabolic_tol: float = 1e-6       # ||μ|-2| 内部带边
    case_tol: float = 1e-8            # Ando 4x4 块的情形边界
    band_edge_tol: float = 1e-3       # 闭式公式中 |sin k_l| 的下限

    # 马尔可夫链默认值
    burn_in: int = 100
    stride: int = 10
    renorm_every: int = 1
    reproject_every: int = 100
    batch_count: int = 20             # 单链时 batch means 的批数
    orthogonalizer: str = "mgs"       # mgs | householder
    threads: int = 0                  # 0 表示使用全部 CPU

    # RPP 统计
    spacing_bins: int = 50
    spacing_max: float = 4.0
    phase_bins: int = 50
    modulus_bins: int = 50
    coincident_phase_tol: float = 1e-13

    # 输出
    output_dir: str = "output"
    progress: bool = True

    # 本地服务
    host: str = "0.0.0.0"
    port: int = 8000
    max_api_steps: int = 200000       # HTTP 接口允许的最大 N·R

    class Config:
        env_file = ".env"


# Anderson 约定：W·uniform[-1/2, 1/2] 的方差为 W²/12
ANDERSON_WIDTH_FACTOR = math.sqrt(12.0)


# 运行预设：能量扫描与 RPP 统计
RUN_PRESETS = {
    "real-energy-scan": {"model": "anderson-real", "L": 20, "lam": 1.11 / ANDERSON_WIDTH_FACTOR,
                         "energies": [0.5, 1.0, 1.31, 2.0], "exponents": [20, 19, 18]},
    "magnetic-rpp": {"model": "anderson-magnetic", "L": 52, "E": 1.31, "phi": 2 * math.pi * 0.23,
                     "lam": 0.12 / ANDERSON_WIDTH_FACTOR, "steps": 1000, "realizations": 100},
    "real-rpp": {"model": "anderson-real", "L": 52, "E": 1.31,
                 "lam": 0.12 / ANDERSON_WIDTH_FACTOR, "steps": 1000, "realizations": 100},
}

settings = Settings()


def resolve_threads(requested: Optional[int] = None) -> int:
    """返回实际使用的进程数"""
    n = requested if requested is not None else settings.threads
    if n is None or n <= 0:
        n = os.cpu_count() or 1
    return max(1, int(n))


def configure_logging(level: Optional[str] = None):
    """根日志级别取自 settings.log_level (debug 时为 DEBUG)"""
    level = level or ("DEBUG" if settings.debug else settings.log_level)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
