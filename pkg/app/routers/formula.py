"""闭式公式路由"""
from fastapi import APIRouter, HTTPException, Query
from typing import Optional

from pydantic import ValidationError

from app.errors import LyapunovError, http_status
from app.models import GammaFormulaInputs, ModelKind, ModelParams, SymmetryClass
from app.services.perturbation_service import perturbation_service

router = APIRouter(prefix="/api/formula", tags=["微扰公式"])


def build_params(model: ModelKind, L: int, E: float, lam: float, phi: float, t: float) -> ModelParams:
    try:
        return ModelParams(model=model, L=L, E=E, lam=lam, phi=phi, t=t)
    except ValidationError as exc:
        raise HTTPException(status_code=400, detail=str(exc))


@router.get("/gamma", summary="闭式 Lyapunov 指数")
async def get_gamma(
    model: ModelKind = Query(ModelKind.ANDERSON_MAGNETIC, description="模型"),
    L: int = Query(1, ge=1, le=4096, description="通道数"),
    E: float = Query(0.0, description="能量"),
    lam: float = Query(0.1, ge=0, alias="lambda", description="无序耦合 λ"),
    phi: float = Query(0.0, description="磁通"),
    t: float = Query(0.0, description="自旋轨道耦合"),
    p: Optional[int] = Query(None, ge=1, description="通道指标，缺省为全部 elliptic 通道"),
    form: Optional[str] = Query(None, description="exact | leading"),
):
    """
    RPP 下的 γ_p (不做模拟)
    """
    params = build_params(model, L, E, lam, phi, t)
    try:
        if p is None:
            spectrum = perturbation_service.closed_form_spectrum(params, form)
        else:
            spectrum = {p: perturbation_service.closed_form_gamma(params, p, form)}
        inputs = perturbation_service.formula_inputs(params, max(spectrum), form)
    except LyapunovError as e:
        raise HTTPException(status_code=http_status(e), detail=str(e))

    return {
        "success": True,
        "data": {
            "symmetry_class": params.symmetry_class.value,
            "L_e": inputs.L_e,
            "L_h": inputs.L_h,
            "trace": inputs.trace,
            "gamma": [{"p": k, "gamma": v} for k, v in sorted(spectrum.items())],
            "spacing": (perturbation_service.equidistance_spacing(inputs.model_copy(update={"p": inputs.L_h + 1}))
                        if inputs.L_e > 1 else None),
            "class_ratios": perturbation_service.class_ratios(inputs.L_e),
        }
    }


@router.get("/prefactor", summary="给定迹值的 γ_p 公式")
async def get_prefactor(
    symmetry_class: SymmetryClass = Query(SymmetryClass.COMPLEX, alias="class", description="R | C | H"),
    L: int = Query(..., ge=1, description="通道数"),
    L_e: int = Query(..., ge=1, description="elliptic 通道数"),
    p: int = Query(..., ge=1, description="通道指标"),
    lam: float = Query(..., ge=0, alias="lambda", description="无序耦合 λ"),
    trace: float = Query(1.0, description="E Tr[Π_e(P*+P)Π_e P Π_e]"),
):
    """
    λ²/(4L_e(L_e+δ_R-½δ_H))·(L-p+½δ_C+δ_R+¼δ_H)·trace
    """
    try:
        inputs = GammaFormulaInputs(symmetry_class=symmetry_class, L=L, L_e=L_e, L_h=L - L_e,
                                    p=p, lam=lam, trace=trace)
    except ValidationError as exc:
        raise HTTPException(status_code=400, detail=str(exc))

    return {
        "success": True,
        "data": {
            "gamma": perturbation_service.gamma_formula(trace, inputs),
            "per_unit_trace": perturbation_service.gamma_formula(1.0, inputs),
        }
    }
