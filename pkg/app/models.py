"""数据模型"""
import math
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import gammainc

from app.config import settings


class SymmetryClass(str, Enum):
    """对称类（由数域 K 标记）"""
    REAL = "R"           # 正交类，T̄ = T
    COMPLEX = "C"        # 酉类
    QUATERNION = "H"     # 辛类，I*T̄I = T

    def ambient_size(self, L: int) -> int:
        """复矩阵的纤维维数 L'"""
        return 2 * L if self is SymmetryClass.QUATERNION else L

    @property
    def tau_factor(self) -> float:
        return 0.5 if self is SymmetryClass.QUATERNION else 1.0

    @property
    def block(self) -> int:
        """一个通道占用的复列数"""
        return 2 if self is SymmetryClass.QUATERNION else 1

    @property
    def beta(self) -> int:
        return {"R": 1, "C": 2, "H": 4}[self.value]


class ModelKind(str, Enum):
    """模型种类"""
    ANDERSON_MAGNETIC = "anderson-magnetic"   # 管状磁 Anderson 模型
    ANDERSON_REAL = "anderson-real"           # 实 Anderson 模型 (φ=0)
    ANDO = "ando"                             # 自旋轨道耦合 Ando 模型
    SLAB = "slab"                             # d 维板状模型


class DisorderKind(str, Enum):
    """无序分布（均值 0，方差 1）"""
    UNIFORM = "uniform"      # [-√3, √3] 均匀分布
    BINARY = "binary"        # ±1
    GAUSSIAN = "gaussian"    # 截断于 ±3 的高斯，重新归一化方差


class ChannelKind(str, Enum):
    """通道类型"""
    HYPERBOLIC = "hyperbolic"
    ELLIPTIC = "elliptic"


class ModelParams(BaseModel):
    """模型参数"""
    model: ModelKind = Field(..., description="模型种类")
    L: int = Field(1, ge=1, description="通道数 (slab 时为 n_side^(dim-1))")
    E: float = Field(0.0, description="能量")
    lam: float = Field(0.0, ge=0, description="无序耦合常数 λ")
    phi: float = Field(0.0, description="磁通 φ ∈ [0, 2π)")
    t: float = Field(0.0, description="自旋轨道耦合 (仅 Ando)")
    n_side: Optional[int] = Field(None, ge=1, description="slab 每个横向方向的格点数")
    dim: int = Field(2, ge=2, description="slab 维数 d")
    phi_vec: List[float] = Field(default_factory=list, description="slab 各横向方向的磁通 φ_2..φ_d")
    disorder: DisorderKind = Field(DisorderKind.UNIFORM, description="无序分布")

    @field_validator("phi")
    @classmethod
    def _wrap_phi(cls, v: float) -> float:
        return float(v) % (2 * math.pi)

    @model_validator(mode="after")
    def _check_model(self):
        if self.model is ModelKind.SLAB:
            if self.n_side is None:
                raise ValueError("slab 模型需要 n_side")
            if not self.phi_vec:
                self.phi_vec = [self.phi] * (self.dim - 1)
            if len(self.phi_vec) != self.dim - 1:
                raise ValueError(f"phi_vec 长度应为 {self.dim - 1}")
            self.L = self.n_side ** (self.dim - 1)
        return self

    @property
    def symmetry_class(self) -> SymmetryClass:
        if self.model is ModelKind.ANDERSON_REAL:
            return SymmetryClass.REAL
        if self.model is ModelKind.ANDO:
            return SymmetryClass.QUATERNION
        return SymmetryClass.COMPLEX

    @property
    def fiber_size(self) -> int:
        return self.symmetry_class.ambient_size(self.L)


class ChainConfig(BaseModel):
    """马尔可夫链配置"""
    steps: int = Field(..., ge=1, description="步数 N")
    burn_in: int = Field(settings.burn_in, ge=0, description="预热步数")
    stride: int = Field(settings.stride, ge=1, description="快照间隔")
    realizations: int = Field(1, ge=1, description="独立实现数 R")
    seed: int = Field(0, ge=0, lt=2 ** 64, description="64 位无符号种子")
    renorm_every: int = Field(settings.renorm_every, ge=1, description="Gram-Schmidt 间隔")
    initial_frame: str = Field("axis", description="初始标架: axis | random")
    keep_snapshots: bool = Field(True, description="是否收集 (U, V) 快照")
    threads: Optional[int] = Field(None, description="进程数上限")

    @model_validator(mode="after")
    def _check_chain(self):
        if self.burn_in >= self.steps:
            raise ValueError("burn_in 必须小于 steps")
        if self.initial_frame not in ("axis", "random"):
            raise ValueError("initial_frame 只能是 axis 或 random")
        return self


class LyapunovEstimate(BaseModel):
    """Lyapunov 指数估计"""
    gamma: List[float] = Field(..., description="各指数的 Birkhoff 平均")
    stderr: List[float] = Field(..., description="标准误差")
    steps: int = Field(..., description="步数 N")
    realizations: int = Field(1, description="实现数 R")
    seed: int = Field(0, description="种子")
    symmetry_class: SymmetryClass = Field(SymmetryClass.COMPLEX, description="对称类")
    per_realization: List[List[float]] = Field(default_factory=list, description="各实现的 γ")


class ArrayModel(BaseModel):
    """携带 numpy 数组的模型基类"""
    model_config = ConfigDict(arbitrary_types_allowed=True)


class IsotropicFrame(ArrayModel):
    """各向同性标架 Φ (2L'×L')"""
    phi: np.ndarray
    symmetry_class: SymmetryClass

    @property
    def size(self) -> int:
        return self.phi.shape[1]


class UVPair(ArrayModel):
    """√2·C·Φ = (U; V)"""
    U: np.ndarray
    V: np.ndarray


class TriangularCocycle(ArrayModel):
    """上三角乘法余循环 S(T, Φ)"""
    S: np.ndarray
    symmetry_class: SymmetryClass


class ChannelData(ArrayModel):
    """通道数据，按 hyperbolic 在前、|μ| 降序排列"""
    mu: np.ndarray                    # 实对角 μ_l (Ando 填 ν)
    rho: np.ndarray                   # 复对角 ρ_l
    kappa: np.ndarray                 # 膨胀因子 κ (elliptic 为 1)
    eta: np.ndarray                   # 旋转角 η (hyperbolic 为 0)
    kinds: List[ChannelKind]
    order: np.ndarray                 # 排序置换 q
    symmetry_class: SymmetryClass

    @property
    def L(self) -> int:
        return len(self.kinds)

    @property
    def L_h(self) -> int:
        return sum(1 for k in self.kinds if k is ChannelKind.HYPERBOLIC)

    @property
    def L_e(self) -> int:
        return self.L - self.L_h

    @property
    def pi_e(self) -> np.ndarray:
        return np.array([1.0 if k is ChannelKind.ELLIPTIC else 0.0 for k in self.kinds])

    @property
    def pi_h(self) -> np.ndarray:
        return 1.0 - self.pi_e

    @property
    def ln_kappa(self) -> np.ndarray:
        return np.log(np.abs(self.kappa))

    def column_indices(self, kind: ChannelKind) -> np.ndarray:
        """该类通道在 L' 维纤维中的列指标"""
        b = self.symmetry_class.block
        idx = [b * l + s for l, k in enumerate(self.kinds) if k is kind for s in range(b)]
        return np.array(idx, dtype=int)


class NormalFormBundle(ArrayModel):
    """正规形 N⁻¹Q⁻¹M⁻¹·S·MQN = R_h·R_e·e^{λP}"""
    params: ModelParams
    symmetry_class: SymmetryClass
    M: np.ndarray
    Q: np.ndarray
    N: np.ndarray
    R_h: np.ndarray
    R_e: np.ndarray
    channels: ChannelData
    basis: np.ndarray                 # B = M·Q·N
    basis_inv: np.ndarray             # B⁻¹ = J*·B*·J
    coupling: np.ndarray              # 对角元 c_j，扰动下左块为 diag(c·w)
    residual: float = 0.0             # 自由部分的正规形残差

    @property
    def R(self) -> np.ndarray:
        return self.R_h @ self.R_e

    @property
    def half(self) -> int:
        return self.basis.shape[0] // 2


class PerturbationGenerator(ArrayModel):
    """扰动生成元 P ∈ hs(2L', K)"""
    P: np.ndarray
    w: np.ndarray
    nilpotent: bool = True


class FrameEnsemble(ArrayModel):
    """(U_n, V_n) 快照集合"""
    U: np.ndarray                     # (K, L', L')
    V: np.ndarray
    realization: np.ndarray           # (K,)
    step: np.ndarray                  # (K,)
    elliptic: np.ndarray              # 椭圆列指标
    hyperbolic: np.ndarray            # 双曲列指标
    symmetry_class: SymmetryClass

    @property
    def count(self) -> int:
        return self.U.shape[0]

    @classmethod
    def empty(cls, size: int, elliptic, hyperbolic, symmetry_class: SymmetryClass) -> "FrameEnsemble":
        z = np.zeros((0, size, size), dtype=complex)
        return cls(U=z, V=z.copy(), realization=np.zeros(0, dtype=int), step=np.zeros(0, dtype=int),
                   elliptic=np.asarray(elliptic, dtype=int), hyperbolic=np.asarray(hyperbolic, dtype=int),
                   symmetry_class=symmetry_class)

    def merge(self, other: "FrameEnsemble") -> "FrameEnsemble":
        return FrameEnsemble(
            U=np.concatenate([self.U, other.U]),
            V=np.concatenate([self.V, other.V]),
            realization=np.concatenate([self.realization, other.realization]),
            step=np.concatenate([self.step, other.step]),
            elliptic=self.elliptic, hyperbolic=self.hyperbolic,
            symmetry_class=self.symmetry_class,
        )


class ExpansionTerms(ArrayModel):
    """二阶展开的自伴矩阵 P1, P2"""
    P1: np.ndarray
    P2: np.ndarray


class GammaFormulaInputs(BaseModel):
    """γ_p 公式与闭式公式的输入"""
    symmetry_class: SymmetryClass
    L: int = Field(..., ge=1)
    L_e: int = Field(..., ge=1)
    L_h: int = Field(0, ge=0)
    p: int = Field(..., ge=1)
    lam: float = Field(..., ge=0)
    k: List[float] = Field(default_factory=list, description="椭圆波数 k_l")
    trace: Optional[float] = Field(None, description="E Tr[Π_e(P*+P)Π_e P Π_e]")

    @model_validator(mode="after")
    def _check_inputs(self):
        if self.L_e + self.L_h != self.L:
            raise ValueError("L_e + L_h 必须等于 L")
        if self.p <= self.L_h or self.p > self.L:
            raise ValueError(f"p={self.p} 不是椭圆通道")
        return self


class BlockCase(str, Enum):
    """Ando 4x4 块的谱构型"""
    G1 = "G1"    # 四个复特征值，两个 hyperbolic 四元通道
    G2 = "G2"    # 两个 elliptic 通道
    G3 = "G3"    # 一个 elliptic，一个 hyperbolic
    G4 = "G4"    # 两个实 hyperbolic 通道


class BlockSpectrum(ArrayModel):
    """S_η 的特征多项式数据"""
    a: float
    b: float
    nu_plus: complex
    nu_minus: complex
    kappa_plus: complex
    kappa_minus: complex
    case: BlockCase


class SpacingHistogram(ArrayModel):
    """归一化的间距/相位/模直方图"""
    edges: np.ndarray
    density: np.ndarray
    counts: np.ndarray
    samples: np.ndarray
    n_samples: int
    mean_spacing: float = 1.0
    dropped: int = 0
    polar_deviation: float = 0.0
    degenerate: bool = False
    ks: Dict[str, float] = Field(default_factory=dict)


class UVStatistics(ArrayModel):
    """U·V* 椭圆块的间距统计与 CUE/COE 判别"""
    histogram: SpacingHistogram
    ks_cue: float
    ks_coe: float
    selected: str
    margin_ratio: float


class BlockStructureReport(BaseModel):
    """U 的 elliptic/hyperbolic 块对角结构检验"""
    offblock_rms: float
    hyperbolic_deviation: float
    hyperbolic_identity_rms: float = 0.0
    snapshots: int


class PolarDecomposition(ArrayModel):
    """C·T·C* = diag(u,v)·[[√(1+Λ), √Λ], [√Λ, √(1+Λ)]]·diag(u', v')"""
    Lambda: np.ndarray
    u: np.ndarray
    v: np.ndarray
    u2: np.ndarray
    v2: np.ndarray
    residual: float


class MomentCheckRow(ArrayModel):
    """Haar 矩检验的一行"""
    name: str
    estimate: complex
    exact: complex
    stderr: float
    deviation: float
    sigma: float


class VerifyResult(BaseModel):
    """单项验证结果"""
    suite: str
    check: str
    passed: bool
    detail: str = ""
    expected_warning: bool = False


class AndoChannel(ArrayModel):
    """Ando 扇区内的一个四元通道"""
    kind: ChannelKind
    kappa: complex = complex(1.0)
    eta: float = 0.0


class AndoBlockBasis(ArrayModel):
    """8x8 (或自共轭扇区 4x4) 的辛基 Ñ 与正规形 D̃"""
    N: np.ndarray
    D: np.ndarray
    channels: List[AndoChannel]
    spectrum: Optional[BlockSpectrum] = None
    residual: float = 0.0


class SurmiseCurve(BaseModel):
    """Wigner 间距猜想 P_β(s) = c·s^β·exp(-a·s²)"""
    beta: int = Field(..., description="1 (COE) | 2 (CUE) | 4 (CSE)")

    @field_validator("beta")
    @classmethod
    def _check_beta(cls, v: int) -> int:
        if v not in (1, 2, 4):
            raise ValueError("beta 只能取 1, 2, 4")
        return v

    @property
    def a(self) -> float:
        return {1: math.pi / 4, 2: 4 / math.pi, 4: 64 / (9 * math.pi)}[self.beta]

    @property
    def c(self) -> float:
        k = (self.beta + 1) / 2
        return 2 * self.a ** k / math.gamma(k)

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        return self.c * s ** self.beta * np.exp(-self.a * s * s)

    def cdf(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0, None)
        return gammainc((self.beta + 1) / 2, self.a * s * s)
