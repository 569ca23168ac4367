import pytest
from fastapi.testclient import TestClient

from src.web.app import app

client = TestClient(app)


def test_list_problems():
    response = client.get("/api/problems")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] is True
    names = [p["name"] for p in body["data"]]
    assert "lin1d" in names and "flipped1d" in names


def test_check_nfunction():
    payload = {"nfunction": {"kind": "power", "p": 3.0}, "grid_n": 50}
    body = client.post("/api/nfunction", json=payload).json()
    assert body["status"] is True
    margins = body["data"]["margins"]
    assert margins["index"] >= -1e-10
    assert margins["conjugate"] >= -1e-10


def test_validate_reports_errors():
    body = client.post("/api/validate", json={"coefficient": {"name": "nope"}}).json()
    assert body["status"] is False
    assert "nope" in body["message"]
    body = client.post("/api/validate", json={"coefficient": {"name": "plap2d"}, "dim": 1}).json()
    assert body["status"] is False


def test_validate_constant_coefficient():
    payload = {"coefficient": {"name": "const1d", "c0": 2.0}, "samples": 1000, "seed": 2}
    body = client.post("/api/validate", json=payload).json()
    assert body["status"] is True
    assert all(check["passed"] for check in body["data"]["checks"])


def test_fast_cell_flux():
    payload = {"coefficient": {"name": "lin1d"}, "xi": [1.0], "y": [0.25], "cell_n": 256}
    body = client.post("/api/cell", json=payload).json()
    assert body["status"] is True
    assert body["data"]["flux"][0] == pytest.approx(5.196, abs=1e-3)


def test_sigma_test():
    body = client.post("/api/sigma", json={"eps_list": [0.25, 0.125], "n": 1024}).json()
    assert body["status"] is True
    assert body["data"]["rhs"] == pytest.approx(0.5, abs=1e-8)
    bad = client.post("/api/sigma", json={"eps_list": [0.25], "n": 16}).json()
    assert bad["status"] is False


def test_cors_allows_only_the_served_address():
    preflight = {"Access-Control-Request-Method": "GET"}
    allowed = client.options("/api/problems", headers={"Origin": "http://localhost:8081", **preflight})
    assert allowed.status_code == 200
    assert allowed.headers["access-control-allow-origin"] == "http://localhost:8081"
    other = client.options("/api/problems", headers={"Origin": "http://localhost:8000", **preflight})
    assert "access-control-allow-origin" not in other.headers
