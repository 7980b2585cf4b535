"""异常定义"""
from typing import List, Optional


class LyapunovError(Exception):
    """所有领域异常的基类"""


class ConfigError(LyapunovError):
    """配置错误（CLI 退出码 2）"""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"第 {line} 行")
        if field:
            where.append(f"字段 '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class ContractError(LyapunovError):
    """调用前置条件不满足"""


class DimensionError(ContractError):
    """矩阵尺寸不匹配"""

    def __init__(self, message: str, expected: Optional[int] = None, actual: Optional[int] = None):
        self.expected = expected
        self.actual = actual
        if expected is not None:
            message = f"{message} (期望 {expected}, 实际 {actual})"
        super().__init__(message)


class NumericalError(LyapunovError):
    """数值错误（CLI 退出码 3）"""


class InvariantViolationError(NumericalError):
    """不变量被破坏，例如对角元非正"""


class SingularActionError(NumericalError):
    """TΦ 数值秩亏"""

    def __init__(self, column: int, cond: float, step: Optional[int] = None):
        self.column = column
        self.cond = cond
        self.step = step
        at = f" (第 {step} 步)" if step is not None else ""
        super().__init__(f"Gram-Schmidt 在第 {column} 列退化, 条件数 {cond:.3e}{at}")

    def at_step(self, step: int) -> "SingularActionError":
        return SingularActionError(self.column, self.cond, step)


class InternalBandEdgeError(NumericalError):
    """能量落在内部带边（抛物型通道）"""

    def __init__(self, channel: int, value: float, quantity: str = "|mu|"):
        self.channel = channel
        self.value = value
        self.quantity = quantity
        super().__init__(f"内部带边: 通道 l={channel}, {quantity}={value:.12g}")


class DegenerateBlockError(NumericalError):
    """Ando 4x4 块处于退化情形"""

    def __init__(self, reason: str, frequency: Optional[int] = None):
        self.reason = reason
        self.frequency = frequency
        at = f" (频率指标 {frequency})" if frequency is not None else ""
        super().__init__(f"退化块: {reason}{at}")

    def at_frequency(self, frequency: int) -> "DegenerateBlockError":
        return DegenerateBlockError(self.reason, frequency)


class NormalizationError(NumericalError):
    """辛配对数值为零，无法归一化"""

    def __init__(self, pairing: float):
        self.pairing = pairing
        super().__init__(f"辛配对 {pairing:.3e} 过小, 近似退化")


class PartialEnsembleError(LyapunovError):
    """部分实现失败"""

    def __init__(self, failed: List[int], errors: List[str], partial=None):
        self.failed = failed
        self.errors = errors
        self.partial = partial
        super().__init__(f"{len(failed)} 个实现失败: {failed}; 首个错误: {errors[0] if errors else ''}")


def http_status(exc: LyapunovError) -> int:
    """接口错误码: 配置/契约错误 400，数值错误 422"""
    if isinstance(exc, NumericalError):
        return 422
    if isinstance(exc, PartialEnsembleError):
        return 500
    return 400
