"""Lyapunov 谱模拟路由"""
from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from app.config import settings
from app.errors import LyapunovError, http_status
from app.models import ChainConfig, ModelParams
from app.services.lyapunov_service import lyapunov_service
from app.services.model_service import model_service

router = APIRouter(prefix="/api/spectrum", tags=["Lyapunov 谱"])


class SpectrumRequest(BaseModel):
    """小规模模拟请求"""
    params: ModelParams = Field(..., description="模型参数")
    steps: int = Field(1000, ge=2, description="步数 N")
    burn_in: int = Field(0, ge=0, description="预热步数")
    realizations: int = Field(1, ge=1, le=64, description="实现数 R")
    seed: int = Field(0, ge=0, description="种子")


def _bundle(params: ModelParams):
    try:
        return model_service.build_normal_form(params)
    except LyapunovError as e:
        raise HTTPException(status_code=http_status(e), detail=str(e))


@router.post("/lyapunov", summary="运行小规模系综")
def run_lyapunov(request: SpectrumRequest):
    """
    构造正规形并运行 R 条链，返回各通道的 γ_p
    """
    if request.steps * request.realizations > settings.max_api_steps:
        raise HTTPException(status_code=400, detail=f"N·R 超过上限 {settings.max_api_steps}，请使用命令行")
    if request.burn_in >= request.steps:
        raise HTTPException(status_code=400, detail="burn_in 必须小于 steps")

    bundle = _bundle(request.params)
    config = ChainConfig(steps=request.steps, burn_in=request.burn_in, realizations=request.realizations,
                         seed=request.seed, keep_snapshots=False, threads=1)
    try:
        est, _ = lyapunov_service.run_ensemble(bundle, request.params, config, progress=False)
    except LyapunovError as e:
        raise HTTPException(status_code=http_status(e), detail=str(e))

    gamma, stderr = lyapunov_service.channel_exponents(est)
    ch = bundle.channels
    return {
        "success": True,
        "data": {
            "symmetry_class": bundle.symmetry_class.value,
            "steps": est.steps,
            "realizations": est.realizations,
            "seed": est.seed,
            "exponents": [
                {
                    "p": p + 1,
                    "gamma": float(gamma[p]),
                    "stderr": float(stderr[p]),
                    "ln_kappa": float(ch.ln_kappa[p]),
                    "channel_type": ch.kinds[p].value,
                }
                for p in range(ch.L)
            ],
        }
    }


@router.post("/channels", summary="正规形的通道数据")
def get_channels(params: ModelParams):
    """
    hyperbolic/elliptic 分类、κ、η 与重构残差
    """
    bundle = _bundle(params)
    ch = bundle.channels
    return {
        "success": True,
        "data": {
            "symmetry_class": bundle.symmetry_class.value,
            "L_h": ch.L_h,
            "L_e": ch.L_e,
            "residual": bundle.residual,
            "channels": [
                {
                    "p": p + 1,
                    "kind": ch.kinds[p].value,
                    "mu": float(ch.mu[p].real),
                    "ln_kappa": float(ch.ln_kappa[p]),
                    "eta": float(ch.eta[p]),
                }
                for p in range(ch.L)
            ],
        }
    }
