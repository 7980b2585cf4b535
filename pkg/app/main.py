"""FastAPI 主应用"""
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.config import configure_logging, settings
from app.routers.export import router as export_router
from app.routers.formula import router as formula_router
from app.routers.spectrum import router as spectrum_router


@asynccontextmanager
async def lifespan(app: FastAPI):
    """应用生命周期管理"""
    configure_logging()
    print(f"启动 {settings.app_name}...")
    print(f"访问 http://localhost:{settings.port}/docs 查看接口文档")

    yield

    print("关闭应用...")


# 创建 FastAPI 应用
app = FastAPI(
    title=settings.app_name,
    description="准一维无序系统的 Lyapunov 谱：转移矩阵模拟与微扰公式",
    version="1.0.0",
    lifespan=lifespan
)

# 配置 CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# 注册 API 路由
app.include_router(formula_router)
app.include_router(spectrum_router)
app.include_router(export_router)


@app.get("/health", tags=["默认"])
async def health_check():
    """
    健康检查
    """
    return {
        "status": "healthy",
        "max_api_steps": settings.max_api_steps,
    }


@app.get("/api", tags=["默认"])
async def api_info():
    """
    API 信息
    """
    return {
        "name": settings.app_name,
        "version": "1.0.0",
        "status": "running",
        "docs_url": "/docs",
        "features": [
            "闭式 Lyapunov 指数",
            "小规模转移矩阵系综",
            "正规形通道数据",
            "CSV 导出"
        ]
    }
