"""HTTP 接口测试"""
import os
import sys

import pytest
from fastapi.testclient import TestClient

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.config import settings
from app.main import app
from app.utils.csv_export import LYAPUNOV_COLUMNS, read_csv

client = TestClient(app)

MAGNETIC = {"model": "anderson-magnetic", "L": 3, "E": 0.5, "phi": 0.7, "lam": 0.2}


def test_health():
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json()["status"] == "healthy"
    assert resp.json()["max_api_steps"] == settings.max_api_steps


def test_api_info():
    resp = client.get("/api")
    assert resp.status_code == 200
    assert resp.json()["docs_url"] == "/docs"


def test_formula_gamma_single_channel():
    resp = client.get("/api/formula/gamma", params={"model": "anderson-real", "L": 1, "E": 1.0, "lambda": 0.1})
    assert resp.status_code == 200
    data = resp.json()["data"]
    assert data["symmetry_class"] == "R"
    assert data["L_e"] == 1 and data["L_h"] == 0
    assert data["gamma"][0]["gamma"] == pytest.approx(0.01 / 6)
    assert data["spacing"] is None


def test_formula_gamma_spectrum():
    resp = client.get("/api/formula/gamma",
                      params={"model": "anderson-magnetic", "L": 6, "E": 0.5, "phi": 0.4, "lambda": 0.1})
    data = resp.json()["data"]
    assert [row["p"] for row in data["gamma"]] == [3, 4, 5, 6]
    gammas = [row["gamma"] for row in data["gamma"]]
    assert gammas[0] - gammas[1] == pytest.approx(data["spacing"], rel=1e-9)
    assert set(data["class_ratios"]) == {"R/C", "C/H"}


def test_formula_band_edge_is_422():
    resp = client.get("/api/formula/gamma", params={"model": "anderson-real", "L": 1, "E": 4.0})
    assert resp.status_code == 422


def test_prefactor():
    resp = client.get("/api/formula/prefactor", params={"class": "C", "L": 1, "L_e": 1, "p": 1, "lambda": 1.0})
    assert resp.status_code == 200
    assert resp.json()["data"]["gamma"] == pytest.approx(1 / 8)


def test_prefactor_rejects_hyperbolic_index():
    resp = client.get("/api/formula/prefactor", params={"class": "R", "L": 3, "L_e": 2, "p": 1, "lambda": 0.1})
    assert resp.status_code == 400


def test_spectrum_lyapunov():
    resp = client.post("/api/spectrum/lyapunov", json={"params": MAGNETIC, "steps": 300, "seed": 4})
    assert resp.status_code == 200
    data = resp.json()["data"]
    assert data["symmetry_class"] == "C"
    assert data["steps"] == 300 and data["seed"] == 4
    assert [row["p"] for row in data["exponents"]] == [1, 2, 3]


def test_spectrum_lyapunov_limits():
    resp = client.post("/api/spectrum/lyapunov",
                       json={"params": MAGNETIC, "steps": settings.max_api_steps, "realizations": 2})
    assert resp.status_code == 400
    resp = client.post("/api/spectrum/lyapunov", json={"params": MAGNETIC, "steps": 10, "burn_in": 10})
    assert resp.status_code == 400


def test_magnetic_without_flux_is_400():
    params = dict(MAGNETIC, phi=0.0)
    resp = client.post("/api/spectrum/lyapunov", json={"params": params, "steps": 10})
    assert resp.status_code == 400


def test_channels():
    """L = 3, E = 3: μ = 4, 4, 1"""
    resp = client.post("/api/spectrum/channels", json={"model": "anderson-real", "L": 3, "E": 3.0})
    assert resp.status_code == 200
    data = resp.json()["data"]
    assert data["L_h"] == 2 and data["L_e"] == 1
    assert [c["kind"] for c in data["channels"]] == ["hyperbolic", "hyperbolic", "elliptic"]
    assert data["residual"] < 1e-9


def test_export_lyapunov_csv():
    resp = client.get("/api/export/lyapunov",
                      params={"model": "anderson-magnetic", "L": 2, "E": 0.5, "phi": 0.7, "steps": 200, "seed": 1})
    assert resp.status_code == 200
    assert resp.headers["content-type"].startswith("text/csv")
    meta, columns, rows = read_csv(resp.text)
    assert columns == LYAPUNOV_COLUMNS
    assert len(rows) == 2
    assert meta["seed"] == 1


def test_export_formula_csv():
    resp = client.get("/api/export/formula",
                      params={"model": "anderson-magnetic", "L": 6, "E": 0.5, "phi": 0.4, "lambda": 0.1})
    assert resp.status_code == 200
    _, columns, rows = read_csv(resp.text)
    assert columns == ["p", "gamma_formula"]
    assert [int(r[0]) for r in rows] == [3, 4, 5, 6]
