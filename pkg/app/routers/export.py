"""数据导出路由"""
from fastapi import APIRouter, HTTPException, Query
from fastapi.responses import StreamingResponse
from typing import Optional
from datetime import datetime

from pydantic import ValidationError

from app.config import settings
from app.errors import LyapunovError, http_status
from app.models import ChainConfig, ModelKind, ModelParams
from app.services.lyapunov_service import lyapunov_service
from app.services.model_service import model_service
from app.services.perturbation_service import perturbation_service
from app.utils.csv_export import LYAPUNOV_COLUMNS, lyapunov_rows, to_csv

router = APIRouter(prefix="/api/export", tags=["数据导出"])


def _csv_response(text: str, name: str) -> StreamingResponse:
    filename = f"{name}_{datetime.now().strftime('%Y%m%d')}.csv"
    return StreamingResponse(
        iter([text]),
        media_type="text/csv",
        headers={
            "Content-Disposition": f"attachment; filename*=UTF-8''{filename}"
        }
    )


@router.get("/lyapunov", summary="导出 Lyapunov 谱为CSV")
def export_lyapunov_csv(
    model: ModelKind = Query(ModelKind.ANDERSON_MAGNETIC, description="模型"),
    L: int = Query(2, ge=1, le=64, description="通道数"),
    E: float = Query(0.5, description="能量"),
    lam: float = Query(0.1, ge=0, alias="lambda", description="无序耦合 λ"),
    phi: float = Query(0.0, description="磁通"),
    t: float = Query(0.0, description="自旋轨道耦合"),
    steps: int = Query(2000, ge=2, description="步数"),
    realizations: int = Query(1, ge=1, le=64, description="实现数"),
    seed: int = Query(0, ge=0, description="种子"),
):
    """
    小规模系综的 p, gamma, stderr, ln_kappa_p, channel_type
    """
    if steps * realizations > settings.max_api_steps:
        raise HTTPException(status_code=400, detail=f"N·R 超过上限 {settings.max_api_steps}")
    try:
        params = ModelParams(model=model, L=L, E=E, lam=lam, phi=phi, t=t)
        config = ChainConfig(steps=steps, burn_in=0, realizations=realizations, seed=seed,
                             keep_snapshots=False, threads=1)
    except ValidationError as exc:
        raise HTTPException(status_code=400, detail=str(exc))

    try:
        bundle = model_service.build_normal_form(params)
        est, _ = lyapunov_service.run_ensemble(bundle, params, config, progress=False)
    except LyapunovError as e:
        raise HTTPException(status_code=http_status(e), detail=str(e))

    meta = {"command": "lyapunov", "params": params.model_dump(mode="json"),
            "chain": config.model_dump(mode="json"), "seed": seed}
    text = to_csv(LYAPUNOV_COLUMNS, lyapunov_rows(est, bundle), meta)
    return _csv_response(text, f"lyapunov_{model.value}_L{L}")


@router.get("/formula", summary="导出闭式 γ_p 为CSV")
def export_formula_csv(
    model: ModelKind = Query(ModelKind.ANDERSON_MAGNETIC, description="模型"),
    L: int = Query(2, ge=1, le=4096, description="通道数"),
    E: float = Query(0.5, description="能量"),
    lam: float = Query(0.1, ge=0, alias="lambda", description="无序耦合 λ"),
    phi: float = Query(0.0, description="磁通"),
    t: float = Query(0.0, description="自旋轨道耦合"),
    form: Optional[str] = Query(None, description="exact | leading"),
):
    """
    全部 elliptic 通道的闭式 γ_p
    """
    try:
        params = ModelParams(model=model, L=L, E=E, lam=lam, phi=phi, t=t)
    except ValidationError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    try:
        spectrum = perturbation_service.closed_form_spectrum(params, form)
    except LyapunovError as e:
        raise HTTPException(status_code=http_status(e), detail=str(e))

    meta = {"command": "formula", "params": params.model_dump(mode="json"), "form": form or "default"}
    rows = [[p, g] for p, g in sorted(spectrum.items())]
    return _csv_response(to_csv(["p", "gamma_formula"], rows, meta), f"formula_{model.value}_L{L}")
