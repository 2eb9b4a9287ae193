"""Wire-protocol contract tests against the stub models.

Every response is validated against the published JSON schemas in
protocol/, alongside the behavioral checks (resolution preservation,
unit-norm embeddings, error codes).
"""

import base64
import io
import json
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from model_service.app import create_app

PROTOCOL_DIR = Path(__file__).resolve().parents[1] / "protocol"


def load_schema(name):
    return json.loads((PROTOCOL_DIR / name).read_text())


def validate(payload, schema_name):
    import jsonschema

    jsonschema.validate(payload, load_schema(schema_name))


def png_b64(width=16, height=12, value=128):
    img = Image.new("RGB", (width, height), (value, value // 2, 255 - value))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_size(payload):
    raw = base64.b64decode(payload)
    with Image.open(io.BytesIO(raw)) as im:
        return im.size


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(mode="stub"))


def edit_body(**overrides):
    body = {"original": png_b64(), "render": png_b64(value=30), "prompt": "make it red",
            "s_image": 1.5, "s_text": 7.5, "steps": 20, "seed": 0}
    body.update(overrides)
    return body


class TestHealth:
    def test_before_load(self):
        cold = TestClient(create_app(mode="stub", autoload=False))
        body = cold.get("/health").json()
        validate(body, "health_response.json")
        assert body["models"] == {"editor": False, "embedder": False}

    def test_after_load(self, client):
        body = client.get("/health").json()
        validate(body, "health_response.json")
        assert body["models"] == {"editor": True, "embedder": True}

    def test_idempotent(self, client):
        assert client.get("/health").json() == client.get("/health").json()


class TestEdit:
    def test_resolution_preserved(self, client):
        resp = client.post("/edit", json=edit_body())
        assert resp.status_code == 200
        body = resp.json()
        validate(body, "edit_response.json")
        assert decode_size(body["image"]) == (16, 12)

    def test_deterministic(self, client):
        a = client.post("/edit", json=edit_body()).json()["image"]
        b = client.post("/edit", json=edit_body()).json()["image"]
        assert a == b

    def test_corrupt_base64_names_field(self, client):
        resp = client.post("/edit", json=edit_body(render="@@not-base64@@"))
        assert resp.status_code == 400
        assert "render" in resp.json()["error"]

    def test_undecodable_image(self, client):
        junk = base64.b64encode(b"definitely not a png").decode()
        resp = client.post("/edit", json=edit_body(original=junk))
        assert resp.status_code == 400
        assert "original" in resp.json()["error"]

    def test_zero_steps_rejected(self, client):
        assert client.post("/edit", json=edit_body(steps=0)).status_code == 400

    def test_mismatched_resolutions_rejected(self, client):
        resp = client.post("/edit", json=edit_body(render=png_b64(width=8, height=8)))
        assert resp.status_code == 400

    def test_missing_field_rejected(self, client):
        body = edit_body()
        del body["prompt"]
        assert client.post("/edit", json=body).status_code == 400

    def test_model_not_loaded(self):
        cold = TestClient(create_app(mode="stub", autoload=False))
        assert cold.post("/edit", json=edit_body()).status_code == 503

    def test_oversized_payload(self):
        tiny_cap = TestClient(create_app(mode="stub", max_payload=256))
        assert tiny_cap.post("/edit", json=edit_body()).status_code == 413


class TestEmbed:
    def test_image_embedding_unit_norm(self, client):
        resp = client.post("/embed_image", json={"image": png_b64()})
        assert resp.status_code == 200
        body = resp.json()
        validate(body, "embed_response.json")
        values = np.asarray(body["values"])
        assert len(values) == body["dim"]
        assert abs(np.linalg.norm(values) - 1.0) < 1e-5

    def test_image_embedding_deterministic(self, client):
        a = client.post("/embed_image", json={"image": png_b64()}).json()
        b = client.post("/embed_image", json={"image": png_b64()}).json()
        assert a == b

    def test_text_embedding_unit_norm_and_deterministic(self, client):
        a = client.post("/embed_text", json={"text": "a photograph of a cat"}).json()
        validate(a, "embed_response.json")
        assert abs(np.linalg.norm(a["values"]) - 1.0) < 1e-5
        b = client.post("/embed_text", json={"text": "a photograph of a cat"}).json()
        assert a == b

    def test_empty_text_rejected(self, client):
        assert client.post("/embed_text", json={"text": ""}).status_code == 400

    def test_malformed_image_rejected(self, client):
        assert client.post("/embed_image", json={"image": "!!"}).status_code == 400

    def test_model_not_loaded(self):
        cold = TestClient(create_app(mode="stub", autoload=False))
        assert cold.post("/embed_text", json={"text": "x"}).status_code == 503
