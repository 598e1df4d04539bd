import pytest
from fastapi.testclient import TestClient

from backend.app.api import routes_detect, routes_jobs
from backend.app.api.dependencies import WEIGHTS_DIR_ENV, get_nets, get_settings
from backend.domain.config import CascadeConfig, Settings
from backend.domain.services.job_service import create_job
from backend.infrastructure.image_io import encode_ppm
from backend.infrastructure.persistence.in_memory_repo import job_repository
from backend.main import app


@pytest.fixture
def client():
    job_repository.clear()
    yield TestClient(app)
    app.dependency_overrides.clear()
    job_repository.clear()


@pytest.fixture
def with_nets(ready_nets):
    app.dependency_overrides[get_nets] = lambda: ready_nets
    return ready_nets


def _upload(data, name="in.ppm"):
    return {"file": (name, data, "image/x-portable-pixmap")}


def test_health_reports_missing_weights(client, tmp_path, monkeypatch):
    monkeypatch.setenv(WEIGHTS_DIR_ENV, str(tmp_path / "nothing"))
    body = client.get("/health").json()
    assert body["status"] == "ok"
    assert body["stages"] == {"pnet": False, "rnet": False, "onet": False}


def test_health_reports_present_weights(client, weights_dir, monkeypatch):
    monkeypatch.setenv(WEIGHTS_DIR_ENV, str(weights_dir))
    body = client.get("/health").json()
    assert body["weights_dir"] == str(weights_dir)
    assert all(body["stages"].values())


def test_detect_without_weights_is_unavailable(client, tmp_path, monkeypatch, toy_corpus):
    monkeypatch.setenv(WEIGHTS_DIR_ENV, str(tmp_path / "nothing"))
    response = client.post("/api/detect", files=_upload(encode_ppm(toy_corpus[0].image)))
    assert response.status_code == 503
    assert WEIGHTS_DIR_ENV in response.json()["detail"]


def test_detect_with_weights_dir(client, weights_dir, monkeypatch, toy_corpus):
    monkeypatch.setenv(WEIGHTS_DIR_ENV, str(weights_dir))
    response = client.post("/api/detect", files=_upload(encode_ppm(toy_corpus[0].image)))
    assert response.status_code == 200
    body = response.json()
    assert (body["image"], body["width"], body["height"]) == ("in.ppm", 64, 64)
    assert body["detections"] == []


def test_detect_returns_boxes_and_landmarks(client, with_nets, toy_corpus):
    permissive = Settings(cascade=CascadeConfig(t1=0.0, t2=0.0, t3=0.0))
    app.dependency_overrides[get_settings] = lambda: permissive
    response = client.post("/api/detect", files=_upload(encode_ppm(toy_corpus[0].image)))
    assert response.status_code == 200
    body = response.json()
    assert body["config"]["t1"] == 0.0
    assert body["detections"]
    for det in body["detections"]:
        assert len(det["box"]) == 4 and len(det["landmarks"]) == 5
        assert 0.0 <= det["score"] <= 1.0


@pytest.mark.parametrize(
    "data, detail",
    [
        (b"", "empty"),
        (b"P6\n2 2\n255\n" + bytes(3), "Invalid image"),
        (b"GIF89a", "Invalid image"),
    ],
)
def test_detect_rejects_bad_uploads(client, with_nets, data, detail):
    response = client.post("/api/detect", files=_upload(data))
    assert response.status_code == 400
    assert detail in response.json()["detail"]


def test_detect_upload_limit(client, with_nets, monkeypatch, toy_corpus):
    monkeypatch.setattr(routes_detect, "MAX_UPLOAD_MB", 1)
    monkeypatch.setattr(routes_detect, "MAX_UPLOAD_BYTES", 100)
    response = client.post("/api/detect", files=_upload(encode_ppm(toy_corpus[0].image)))
    assert response.status_code == 413


def test_job_needs_a_corpus(client, tmp_path):
    body = {"stage": "pnet", "corpus_dir": str(tmp_path), "out_path": "pnet.bin"}
    response = client.post("/api/jobs", json=body)
    assert response.status_code == 400


def test_job_request_validation(client, corpus_dir):
    body = {"stage": "qnet", "corpus_dir": str(corpus_dir), "out_path": "x.bin"}
    assert client.post("/api/jobs", json=body).status_code == 422


def test_unknown_job(client):
    assert client.get("/api/jobs/nope").status_code == 404
    assert client.get("/api/jobs/nope/curves").status_code == 404


def test_list_jobs(client):
    assert client.get("/api/jobs").json() == []
    first, second = create_job("pnet"), create_job("onet")
    listed = client.get("/api/jobs").json()
    assert listed == [
        {"id": first.id, "status": "processing", "stage": "pnet"},
        {"id": second.id, "status": "processing", "stage": "onet"},
    ]


def test_curves_wait_for_completion(client):
    job = create_job("pnet")
    response = client.get(f"/api/jobs/{job.id}/curves")
    assert response.status_code == 409
    assert client.get(f"/api/jobs/{job.id}").json()["status"] == "processing"


def test_training_job_runs_in_background(client, corpus_dir, tmp_path, monkeypatch):
    monkeypatch.setattr(routes_jobs, "JOBS_DIR", tmp_path / "jobs")
    body = {"stage": "pnet", "corpus_dir": str(corpus_dir), "out_path": "run1/pnet.bin", "epochs": 1}
    response = client.post("/api/jobs", json=body)
    assert response.status_code == 202
    job_id = response.json()["id"]

    detail = client.get(f"/api/jobs/{job_id}").json()
    assert detail["status"] == "completed", detail["error_message"]
    assert detail["weights_path"] == str(tmp_path / "jobs" / "run1" / "pnet.bin")
    assert (tmp_path / "jobs" / "run1" / "pnet.bin").exists()
    curves = client.get(f"/api/jobs/{job_id}/curves").json()
    assert [c["task"] for c in curves] == ["det", "box", "landmark"]


def test_failed_job_reports_the_error(client, corpus_dir, tmp_path, monkeypatch):
    monkeypatch.setattr(routes_jobs, "JOBS_DIR", tmp_path / "jobs")
    body = {"stage": "onet", "corpus_dir": str(corpus_dir), "out_path": "onet.bin"}
    job_id = client.post("/api/jobs", json=body).json()["id"]
    detail = client.get(f"/api/jobs/{job_id}").json()
    assert detail["status"] == "failed"
    assert detail["error_message"].startswith("WeightsFormatError: ")
