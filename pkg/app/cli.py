"""
命令行批处理入口

    python -m app.cli lyapunov --model anderson-real --L 20 --E 1.0 --W 1.11 --steps 1e6 --seed 7
    python -m app.cli scan --preset real-energy-scan --steps 1e5
    python -m app.cli rpp --preset magnetic-rpp
    python -m app.cli verify quick
    python -m app.cli formula --class R --L 1 --E 1 --lambda 0.1

配置文件为逐行 key=value (# 注释)，命令行参数优先于文件，文件优先于预设。
退出码: 0 成功, 2 配置错误, 3 数值错误, 4 自检失败。
"""
import argparse
import logging
import math
import os
import sys
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError
from tqdm import tqdm

from app.config import ANDERSON_WIDTH_FACTOR, RUN_PRESETS, configure_logging, settings
from app.errors import (
    ConfigError, ContractError, InternalBandEdgeError, LyapunovError, NumericalError, PartialEnsembleError,
)
from app.models import ChainConfig, DisorderKind, ModelKind, ModelParams, SymmetryClass
from app.services.lyapunov_service import lyapunov_service
from app.services.model_service import model_service
from app.services.perturbation_service import perturbation_service
from app.services.rpp_service import rpp_service
from app.services.verify_service import verify_service
from app.utils.csv_export import (
    HISTOGRAM_COLUMNS, LYAPUNOV_COLUMNS, SCAN_COLUMNS, histogram_rows, lyapunov_rows, save_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VERIFY = 4

CLASS_MODELS = {
    SymmetryClass.REAL: ModelKind.ANDERSON_REAL,
    SymmetryClass.COMPLEX: ModelKind.ANDERSON_MAGNETIC,
    SymmetryClass.QUATERNION: ModelKind.ANDO,
}

# 配置文件中的别名
KEY_ALIASES = {"lambda": "lam", "class": "symmetry_class", "burn-in": "burn_in", "n-side": "n_side",
               "phi-vec": "phi_vec", "renorm-every": "renorm_every", "initial-frame": "initial_frame",
               "max-steps": "max_steps", "inject-fault": "inject_fault"}
LIST_KEYS = {"energies": float, "exponents": int, "phi_vec": float}


class RunConfig(BaseModel):
    """一次运行的完整配置 (可序列化，配合种子可逐位复现)"""
    command: str
    model: Optional[ModelKind] = Field(None, description="模型")
    symmetry_class: Optional[SymmetryClass] = Field(None, description="仅 formula: 由类选择模型")
    L: int = Field(1, ge=1)
    E: float = 0.0
    lam: float = Field(0.0, ge=0)
    phi: float = 0.0
    t: float = 0.0
    n_side: Optional[int] = None
    dim: int = 2
    phi_vec: List[float] = Field(default_factory=list)
    disorder: DisorderKind = DisorderKind.UNIFORM
    steps: int = Field(10000, ge=1)
    burn_in: int = Field(settings.burn_in, ge=0)
    stride: int = Field(settings.stride, ge=1)
    realizations: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    threads: Optional[int] = None
    renorm_every: int = Field(settings.renorm_every, ge=1)
    initial_frame: str = "axis"
    target: Optional[float] = Field(None, gt=0, description="自适应 N 的相对误差目标")
    max_steps: int = Field(10 ** 7, ge=1)
    energies: List[float] = Field(default_factory=list)
    exponents: List[int] = Field(default_factory=list)
    p: Optional[int] = Field(None, ge=1)
    form: Optional[str] = None
    level: Literal["quick", "full"] = "quick"
    inject_fault: bool = False
    output: Optional[str] = None
    quiet: bool = False

    def resolved_model(self) -> ModelKind:
        if self.model is not None:
            return self.model
        if self.symmetry_class is not None:
            return CLASS_MODELS[self.symmetry_class]
        raise ConfigError("需要 model (或 formula 的 class)", field="model")

    def model_params(self, **update) -> ModelParams:
        data = dict(model=self.resolved_model(), L=self.L, E=self.E, lam=self.lam, phi=self.phi, t=self.t,
                    n_side=self.n_side, dim=self.dim, phi_vec=self.phi_vec, disorder=self.disorder)
        data.update(update)
        try:
            return ModelParams(**data)
        except ValidationError as exc:
            raise _config_error(exc)

    def chain_config(self, keep_snapshots: bool = False) -> ChainConfig:
        burn_in = self.burn_in if self.burn_in < self.steps else 0
        if burn_in != self.burn_in:
            logger.warning(f"burn_in={self.burn_in} >= steps={self.steps}, 改为 0")
        try:
            return ChainConfig(steps=self.steps, burn_in=burn_in, stride=self.stride,
                               realizations=self.realizations, seed=self.seed, renorm_every=self.renorm_every,
                               initial_frame=self.initial_frame, keep_snapshots=keep_snapshots,
                               threads=self.threads)
        except ValidationError as exc:
            raise _config_error(exc)

    def header(self) -> Dict[str, Any]:
        return {"command": self.command, "config": self.model_dump(mode="json", exclude_none=True),
                "seed": self.seed}

    def output_path(self, name: str) -> str:
        if self.output and self.command != "rpp":
            return self.output
        folder = self.output if self.output else settings.output_dir
        return os.path.join(folder, name)


def _config_error(exc: ValidationError) -> ConfigError:
    err = exc.errors()[0]
    field = ".".join(str(x) for x in err.get("loc", ())) or None
    return ConfigError(err.get("msg", str(exc)), field=field)


# ----------------------------------------------------------------------
# 配置解析
# ----------------------------------------------------------------------
def _coerce(key: str, value: Any, line: Optional[int] = None) -> Any:
    if key in LIST_KEYS and isinstance(value, str):
        try:
            return [LIST_KEYS[key](float(x)) if LIST_KEYS[key] is int else LIST_KEYS[key](x)
                    for x in value.replace(";", ",").split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"无法解析列表 '{value}'", line=line, field=key)
    if key in ("steps", "burn_in", "max_steps") and isinstance(value, str):
        try:
            return int(float(value))
        except ValueError:
            raise ConfigError(f"无法解析整数 '{value}'", line=line, field=key)
    return value


def _apply_width(values: Dict[str, Any]) -> Dict[str, Any]:
    """--W 按 Anderson 约定换算为 λ = W/√12"""
    if "W" in values:
        values = dict(values)
        values["lam"] = float(values.pop("W")) / ANDERSON_WIDTH_FACTOR
    return values


def parse_config_text(text: str) -> Dict[str, Any]:
    """逐行 key=value；错误带行号与字段"""
    known = (set(RunConfig.model_fields) - {"command"}) | {"W", "preset"}
    values: Dict[str, Any] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("缺少 '='", line=n)
        key, _, value = line.partition("=")
        key = KEY_ALIASES.get(key.strip(), key.strip().replace("-", "_"))
        if key not in known:
            raise ConfigError("未知键", line=n, field=key)
        value = value.strip()
        if not value:
            raise ConfigError("值为空", line=n, field=key)
        values[key] = _coerce(key, value, n)
    return values


def load_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_config_text(f.read())
    except OSError as exc:
        raise ConfigError(f"无法读取配置文件 {path}: {exc}")


def build_run_config(command: str, flags: Dict[str, Any]) -> RunConfig:
    """预设 < 配置文件 < 命令行"""
    flags = {k: _coerce(k, v) for k, v in flags.items() if v is not None}
    file_values = load_config_file(flags.pop("config")) if "config" in flags else {}
    preset_name = flags.pop("preset", None) or file_values.pop("preset", None)
    preset: Dict[str, Any] = {}
    if preset_name:
        if preset_name not in RUN_PRESETS:
            raise ConfigError(f"未知预设 {preset_name} (可选 {', '.join(RUN_PRESETS)})", field="preset")
        preset = dict(RUN_PRESETS[preset_name])
    merged: Dict[str, Any] = {}
    for level in (preset, file_values, flags):
        merged.update(_apply_width(level))
    merged["command"] = command
    try:
        return RunConfig(**merged)
    except ValidationError as exc:
        raise _config_error(exc)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key=value 配置文件")
    common.add_argument("--preset", choices=sorted(RUN_PRESETS), help="参数预设")
    common.add_argument("--model", choices=[m.value for m in ModelKind], help="模型")
    common.add_argument("--L", type=int, help="通道数")
    common.add_argument("--E", type=float, help="能量")
    common.add_argument("--lambda", dest="lam", type=float, help="无序耦合 λ (方差约定)")
    common.add_argument("--W", type=float, help="Anderson 无序宽度，λ = W/√12")
    common.add_argument("--phi", type=float, help="磁通 φ (弧度)")
    common.add_argument("--t", type=float, help="自旋轨道耦合 (Ando)")
    common.add_argument("--n-side", dest="n_side", type=int, help="slab 横向边长")
    common.add_argument("--dim", type=int, help="slab 维数")
    common.add_argument("--phi-vec", dest="phi_vec", help="slab 磁通，逗号分隔")
    common.add_argument("--disorder", choices=[d.value for d in DisorderKind], help="无序分布")
    common.add_argument("--steps", help="步数 N (可写 1e6)")
    common.add_argument("--burn-in", dest="burn_in", help="预热步数")
    common.add_argument("--stride", type=int, help="快照间隔")
    common.add_argument("--realizations", type=int, help="实现数 R")
    common.add_argument("--seed", type=int, help="64 位无符号种子")
    common.add_argument("--threads", type=int, help="进程数上限")
    common.add_argument("--renorm-every", dest="renorm_every", type=int, help="Gram-Schmidt 间隔")
    common.add_argument("--initial-frame", dest="initial_frame", choices=["axis", "random"])
    common.add_argument("--target", type=float, help="自适应 N: stderr/γ 目标")
    common.add_argument("--max-steps", dest="max_steps", help="自适应 N 的上限")
    common.add_argument("--output", "-o", help="输出文件 (rpp 为目录)")
    common.add_argument("--quiet", action="store_true", help="关闭进度条与 INFO 日志")

    parser = argparse.ArgumentParser(prog="python -m app.cli", description="准一维无序系统的 Lyapunov 谱")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("lyapunov", parents=[common], help="Lyapunov 谱模拟")
    scan = sub.add_parser("scan", parents=[common], help="能量扫描并与闭式对照")
    scan.add_argument("--energies", help="能量网格，逗号分隔")
    scan.add_argument("--exponents", help="通道指标 (1 起)，逗号分隔")
    sub.add_parser("rpp", parents=[common], help="随机相位性质统计")
    verify = sub.add_parser("verify", parents=[common], help="自检套件")
    verify.add_argument("level", nargs="?", default=argparse.SUPPRESS, help="quick | full")
    verify.add_argument("--inject-fault", dest="inject_fault", action="store_true",
                        help="损坏辛形式，成员性检查应失败")
    formula = sub.add_parser("formula", parents=[common], help="闭式 γ_p")
    formula.add_argument("--class", dest="symmetry_class", choices=[c.value for c in SymmetryClass])
    formula.add_argument("--p", type=int, help="通道指标，缺省为全部")
    formula.add_argument("--form", choices=["exact", "leading"], help="公式形式")
    return parser


# ----------------------------------------------------------------------
# 子命令
# ----------------------------------------------------------------------
def _progress(cfg: RunConfig) -> bool:
    return settings.progress and not cfg.quiet and sys.stderr.isatty()


def _run(cfg: RunConfig, bundle, params: ModelParams, keep_snapshots: bool = False):
    chain = cfg.chain_config(keep_snapshots)
    if cfg.target and not keep_snapshots:
        exps = cfg.exponents or None
        return lyapunov_service.run_adaptive(bundle, params, chain, target=cfg.target, exponents=exps,
                                             max_steps=cfg.max_steps, progress=_progress(cfg)), None
    return lyapunov_service.run_ensemble(bundle, params, chain, progress=_progress(cfg))


def cmd_lyapunov(cfg: RunConfig) -> int:
    params = cfg.model_params()
    bundle = model_service.build_normal_form(params)
    path = cfg.output_path("lyapunov.csv")
    try:
        est, _ = _run(cfg, bundle, params)
    except PartialEnsembleError as exc:
        if exc.partial is not None:
            meta = dict(cfg.header(), failed=exc.failed)
            save_csv(path, LYAPUNOV_COLUMNS, lyapunov_rows(exc.partial[0], bundle), meta)
            print(f"部分实现失败 {exc.failed}，已写入部分结果 {path}")
        raise
    rows = lyapunov_rows(est, bundle)
    save_csv(path, LYAPUNOV_COLUMNS, rows, dict(cfg.header(), steps=est.steps, realizations=est.realizations))
    print(f"{'p':>4} {'gamma':>14} {'stderr':>11} {'ln|kappa|':>11}  type")
    for p, g, e, k, kind in rows:
        print(f"{p:>4} {g:>14.6e} {e:>11.3e} {k:>11.4f}  {kind}")
    print(f"已写入 {path}")
    return EXIT_OK


def _band_edge_check(params: ModelParams, form: Optional[str]):
    """闭式在 |sin k_l| < band_edge_tol 时发散，此类能量点整体跳过"""
    try:
        perturbation_service.formula_inputs(params, params.L, form)
    except ContractError:
        pass


def cmd_scan(cfg: RunConfig) -> int:
    if not cfg.energies:
        raise ConfigError("scan 需要 energies", field="energies")
    exps = cfg.exponents or [p for p in (cfg.L, cfg.L - 1, cfg.L - 2) if p >= 1]
    rows = []
    skipped = []
    for E in tqdm(cfg.energies, desc="能量", disable=not _progress(cfg)):
        params = cfg.model_params(E=E)
        try:
            bundle = model_service.build_normal_form(params)
            if bundle.channels.L_e:
                _band_edge_check(params, cfg.form)
        except InternalBandEdgeError as exc:
            logger.warning(f"跳过 E={E:g}: {exc}")
            skipped.append(E)
            continue
        est, _ = _run(cfg, bundle, params)
        gamma, stderr = lyapunov_service.channel_exponents(est)
        for p in exps:
            if not 1 <= p <= bundle.channels.L:
                raise ConfigError(f"通道指标 {p} 超出 1..{bundle.channels.L}", field="exponents")
            try:
                formula = perturbation_service.closed_form_gamma(params, p, cfg.form)
            except ContractError:
                formula = math.nan
            rows.append([E, p, float(gamma[p - 1]), float(stderr[p - 1]), formula])
    path = cfg.output_path("scan.csv")
    save_csv(path, SCAN_COLUMNS, rows, dict(cfg.header(), skipped=skipped))
    print(f"{len(cfg.energies) - len(skipped)} 个能量点, 跳过 {skipped}; 已写入 {path}")
    return EXIT_OK


def cmd_rpp(cfg: RunConfig) -> int:
    params = cfg.model_params()
    bundle = model_service.build_normal_form(params)
    est, ens = _run(cfg, bundle, params, keep_snapshots=True)
    logger.info(f"收集 {ens.count} 个快照")
    spacing = rpp_service.eigenphase_spacings(ens, "elliptic")
    phase = rpp_service.eigenphase_density(ens, "elliptic")
    modulus = rpp_service.entry_modulus_distribution(ens, "elliptic")
    uv = rpp_service.uv_correlation_statistics(ens)
    block = rpp_service.block_structure_check(ens)

    meta = dict(cfg.header(), snapshots=ens.count)
    for name, hist in (("spacing", spacing), ("phase", phase), ("modulus", modulus), ("uv", uv.histogram)):
        save_csv(cfg.output_path(f"rpp_{name}.csv"), HISTOGRAM_COLUMNS, histogram_rows(hist),
                 dict(meta, ks=hist.ks, samples=hist.n_samples, dropped=hist.dropped))
    summary = [
        ["spacing_ks_cue", spacing.ks.get("CUE")],
        ["spacing_ks_coe", spacing.ks.get("COE")],
        ["spacing_ks_cse", spacing.ks.get("CSE")],
        ["phase_ks_uniform", phase.ks.get("uniform")],
        ["modulus_ks_haar", modulus.ks.get("haar")],
        ["uv_ks_cue", uv.ks_cue],
        ["uv_ks_coe", uv.ks_coe],
        ["uv_margin_ratio", uv.margin_ratio],
        ["offblock_rms", block.offblock_rms],
        ["hyperbolic_deviation", block.hyperbolic_deviation],
        ["hyperbolic_identity_rms", block.hyperbolic_identity_rms],
    ]
    save_csv(cfg.output_path("rpp_summary.csv"), ["statistic", "value"], summary, meta)
    for name, value in summary:
        print(f"{name:>22}: {value:.4g}")
    print(f"UV* 统计选择 {uv.selected} (差值 {uv.margin_ratio:.1f} 倍采样涨落)")
    if spacing.degenerate:
        print("警告: 间距分布退化")
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    results = verify_service.run(cfg.level, inject_fault=cfg.inject_fault)
    print(verify_service.summary(results))
    failed = [r for r in results if not r.passed]
    if cfg.output:
        rows = [[r.suite, r.check, r.passed, r.expected_warning, r.detail] for r in results]
        save_csv(cfg.output, ["suite", "check", "passed", "expected_warning", "detail"], rows, cfg.header())
    print(f"{len(results) - len(failed)}/{len(results)} 通过")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_formula(cfg: RunConfig) -> int:
    params = cfg.model_params()
    if cfg.p is not None:
        spectrum = {cfg.p: perturbation_service.closed_form_gamma(params, cfg.p, cfg.form)}
    else:
        spectrum = perturbation_service.closed_form_spectrum(params, cfg.form)
    inputs = perturbation_service.formula_inputs(params, max(spectrum), cfg.form)
    print(f"class={params.symmetry_class.value} L={inputs.L} L_e={inputs.L_e} L_h={inputs.L_h} "
          f"trace={inputs.trace:.6g}")
    for p, g in sorted(spectrum.items()):
        print(f"gamma_{p} = {g:.6e}")
    if inputs.L_e > 1:
        first = inputs.model_copy(update={"p": inputs.L_h + 1})
        print(f"spacing gamma_p - gamma_(p+1) = {perturbation_service.equidistance_spacing(first):.6e}")
    ratios = perturbation_service.class_ratios(inputs.L_e)
    print("class ratios at p=L: " + ", ".join(f"{k} = {v:.6g}" for k, v in ratios.items()))
    if cfg.output:
        rows = [[p, g] for p, g in sorted(spectrum.items())]
        save_csv(cfg.output, ["p", "gamma_formula"], rows, cfg.header())
    return EXIT_OK


COMMANDS = {
    "lyapunov": cmd_lyapunov,
    "scan": cmd_scan,
    "rpp": cmd_rpp,
    "verify": cmd_verify,
    "formula": cmd_formula,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    quiet = bool(args.get("quiet"))
    configure_logging("WARNING" if quiet else None)
    try:
        cfg = build_run_config(command, args)
        return COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"配置错误: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InternalBandEdgeError as exc:
        print(f"内部带边: 通道 {exc.channel} ({exc.quantity}={exc.value:.6g})", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NumericalError, PartialEnsembleError) as exc:
        print(f"数值错误: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LyapunovError as exc:
        print(f"参数错误: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
