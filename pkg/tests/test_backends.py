"""Tests for the generation backends: procedural determinism and blending,
wire codec round trips, and the HTTP client against the mock server."""

from __future__ import annotations

import json

import numpy as np
import pytest

from panoweave.backends import BackendUnavailable, ProtocolViolation, ServiceError
from panoweave.backends.http import HttpBackend
from panoweave.backends.mock_server import MockServer
from panoweave.backends.procedural import ProceduralBackend
from panoweave.backends.wire import (
    CaptionRequest,
    GenerateRequest,
    ImageResponse,
    OutpaintRequest,
    parse_json,
    png_decode,
    png_encode,
)


@pytest.fixture(scope="module")
def backend():
    return ProceduralBackend()


@pytest.fixture(scope="module")
def mock_server():
    with MockServer() as server:
        yield server


@pytest.fixture()
def client(mock_server):
    return HttpBackend(mock_server.base_url, timeout_s=10.0, retries=1, backoff_s=0.01)


class TestProceduralGenerate:
    def test_deterministic(self, backend):
        a = backend.generate("a bedroom with a bed", 7, 128, 96)
        b = backend.generate("a bedroom with a bed", 7, 128, 96)
        assert np.array_equal(a, b)
        assert a.shape == (96, 128, 3)

    def test_seed_divergence(self, backend):
        a = backend.generate("a bedroom with a bed", 1, 256, 256)
        b = backend.generate("a bedroom with a bed", 2, 256, 256)
        assert (a != b).any(axis=2).mean() >= 0.5

    def test_prompt_divergence(self, backend):
        a = backend.generate("a kitchen", 1, 128, 128)
        b = backend.generate("a library", 1, 128, 128)
        assert (a != b).any(axis=2).mean() >= 0.5

    def test_smoothness(self, backend):
        img = backend.generate("smoothness probe", 3, 512, 512).astype(int)
        assert np.abs(np.diff(img, axis=0)).max() <= 8
        assert np.abs(np.diff(img, axis=1)).max() <= 8

    def test_rejects_bad_dims(self, backend):
        with pytest.raises(ValueError):
            backend.generate("p", 1, 0, 64)


class TestProceduralOutpaint:
    def test_all_known_returns_input(self, backend):
        img = backend.generate("base", 4, 128, 128)
        out = backend.outpaint(img, np.zeros((128, 128), bool), "p", 9)
        assert np.array_equal(out, img)

    def test_all_unknown_equals_generate(self, backend):
        img = backend.generate("base", 4, 128, 128)
        out = backend.outpaint(img, np.ones((128, 128), bool), "p", 9)
        assert np.array_equal(out, backend.generate("p", 9, 128, 128))

    def test_known_pixels_exact(self, backend):
        img = backend.generate("base", 4, 256, 256)
        mask = np.zeros((256, 256), bool)
        mask[:, 128:] = True
        out = backend.outpaint(img, mask, "continuation", 11)
        assert np.array_equal(out[:, :128], img[:, :128])

    def test_boundary_continuity(self, backend):
        img = backend.generate("base", 4, 256, 256)
        mask = np.zeros((256, 256), bool)
        mask[:, 128:] = True
        out = backend.outpaint(img, mask, "continuation", 11).astype(int)
        jump = np.abs(out[:, 128] - out[:, 127]).max()
        assert jump <= 2

    def test_irregular_mask_continuity(self, backend):
        rng = np.random.default_rng(0)
        img = backend.generate("base", 5, 128, 128)
        mask = np.zeros((128, 128), bool)
        cy, cx = 64, 64
        yy, xx = np.mgrid[0:128, 0:128]
        mask[(yy - cy) ** 2 + (xx - cx) ** 2 < 40**2] = True
        out = backend.outpaint(img, mask, "blob", int(rng.integers(1 << 32))).astype(int)
        horiz = np.abs(np.diff(out, axis=1)).max()
        vert = np.abs(np.diff(out, axis=0)).max()
        assert max(horiz, vert) <= 4

    def test_mask_shape_checked(self, backend):
        img = backend.generate("base", 4, 64, 64)
        with pytest.raises(ValueError):
            backend.outpaint(img, np.zeros((32, 64), bool), "p", 1)


class TestWireCodec:
    def test_png_round_trip_rgb(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(48, 80, 3), dtype=np.uint8)
        assert np.array_equal(png_decode(png_encode(img)), img)

    def test_png_round_trip_gray(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, size=(30, 40), dtype=np.uint8)
        assert np.array_equal(png_decode(png_encode(img)), img)

    def test_generate_request_round_trip(self):
        req = GenerateRequest(prompt="a sunlit hallway", seed=42, width=64, height=32)
        body = parse_json(req.to_json(), "test")
        assert GenerateRequest.from_body(body) == req
        # canonical encoding is stable
        assert GenerateRequest.from_body(body).to_json() == req.to_json()

    def test_outpaint_request_round_trip(self):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, size=(32, 48, 3), dtype=np.uint8)
        mask = rng.random((32, 48)) > 0.5
        req = OutpaintRequest(image=img, generate_mask=mask, prompt="p", seed=1)
        decoded = OutpaintRequest.from_body(parse_json(req.to_json(), "test"))
        assert np.array_equal(decoded.image, img)
        assert np.array_equal(decoded.generate_mask, mask)
        assert decoded.to_json() == req.to_json()

    def test_mask_dimension_mismatch_rejected(self):
        img = np.zeros((32, 48, 3), np.uint8)
        with pytest.raises(ValueError):
            OutpaintRequest(image=img, generate_mask=np.zeros((32, 40), bool), prompt="p", seed=1)

    def test_missing_field_is_protocol_violation(self):
        with pytest.raises(ProtocolViolation):
            GenerateRequest.from_body({"prompt": "x", "seed": 1, "width": 64})

    def test_image_response_round_trip(self):
        img = np.zeros((16, 16, 3), np.uint8)
        resp = ImageResponse(image=img, model_id="m", latency_ms=3)
        decoded = ImageResponse.from_body(parse_json(resp.to_json(), "test"))
        assert np.array_equal(decoded.image, img)
        assert decoded.to_json() == resp.to_json()


class TestHttpBackend:
    def test_healthz_capabilities(self, client):
        assert client.capabilities == {"generate", "outpaint", "caption"}
        assert client.identity.startswith("http:procedural-field")

    def test_generate_matches_in_process(self, client, backend):
        over_wire = client.generate("a tiled bathroom", 5, 96, 64)
        direct = backend.generate("a tiled bathroom", 5, 96, 64)
        assert np.array_equal(over_wire, direct)

    def test_generate_rejects_zero_size_locally(self, client):
        with pytest.raises(ValueError):
            client.generate("p", 1, 0, 64)

    def test_oversized_image_rejected_locally(self, client):
        with pytest.raises(ValueError):
            client.generate("p", 1, client.health.max_width + 1, 64)

    def test_outpaint_matches_in_process(self, client, backend):
        img = backend.generate("seed image", 2, 96, 96)
        mask = np.zeros((96, 96), bool)
        mask[:, 48:] = True
        over_wire = client.outpaint(img, mask, "continuation", 3)
        direct = backend.outpaint(img, mask, "continuation", 3)
        assert np.array_equal(over_wire, direct)

    def test_outpaint_all_known_returns_input(self, client, backend):
        img = backend.generate("seed image", 2, 64, 64)
        out = client.outpaint(img, np.zeros((64, 64), bool), "p", 1)
        assert np.array_equal(out, img)
        assert client.drift_violations == 0

    def test_outpaint_dimension_mismatch_rejected_locally(self, client):
        img = np.zeros((64, 64, 3), np.uint8)
        with pytest.raises(ValueError):
            client.outpaint(img, np.zeros((32, 64), bool), "p", 1)

    def test_caption_round_trip(self, client, backend):
        img = backend.generate("something to describe", 8, 64, 64)
        assert client.caption(img) == backend.caption(img)

    def test_unreachable_service(self):
        dead = HttpBackend("http://127.0.0.1:9", timeout_s=0.2, retries=1, backoff_s=0.01)
        with pytest.raises(BackendUnavailable):
            dead.generate("p", 1, 16, 16)

    def test_service_error_carries_body(self, mock_server):
        import requests

        resp = requests.post(
            mock_server.base_url + "/generate",
            data=json.dumps({"prompt": "p", "seed": 1, "width": -4, "height": 16}),
            timeout=5,
        )
        assert resp.status_code == 400
        body = resp.json()
        assert body["code"] == "bad-request"
        assert "message" in body

    def test_unknown_route_is_404(self, mock_server):
        import requests

        resp = requests.post(mock_server.base_url + "/nope", data="{}", timeout=5)
        assert resp.status_code == 404
        assert resp.json()["code"] == "not-found"


class TestClientProtocolEnforcement:
    def test_wrong_size_image_is_protocol_violation(self, monkeypatch, mock_server):
        client = HttpBackend(mock_server.base_url, timeout_s=5.0, retries=0)
        wrong = ImageResponse(image=np.zeros((8, 8, 3), np.uint8), model_id="m").to_json()
        monkeypatch.setattr(client, "_request", lambda *a, **k: wrong.encode())
        from panoweave.backends.wire import DriftTolerance, Healthz

        client._health = Healthz(("generate",), "m", drift=DriftTolerance())
        with pytest.raises(ProtocolViolation):
            client.generate("p", 1, 16, 16)

    def test_empty_caption_is_protocol_violation(self, monkeypatch, mock_server):
        client = HttpBackend(mock_server.base_url, timeout_s=5.0, retries=0)
        from panoweave.backends.wire import CaptionResponse, DriftTolerance, Healthz

        client._health = Healthz(("caption",), "m", drift=DriftTolerance())
        monkeypatch.setattr(
            client, "_request", lambda *a, **k: CaptionResponse("   ").to_json().encode()
        )
        with pytest.raises(ProtocolViolation):
            client.caption(np.zeros((8, 8, 3), np.uint8))

    def test_drift_violation_flagged(self, mock_server):
        """A service that perturbs known pixels beyond tolerance gets flagged,
        and the client repairs the pixels outside the declared band."""

        class Drifty(ProceduralBackend):
            identity = "drifty/1"

            def outpaint(self, image, generate_mask, prompt, seed):
                out = super().outpaint(image, generate_mask, prompt, seed)
                known = ~np.asarray(generate_mask, bool)
                out[known] = np.clip(out[known].astype(int) + 30, 0, 255).astype(np.uint8)
                return out

        with MockServer(Drifty()) as server:
            client = HttpBackend(server.base_url, timeout_s=10.0, retries=0)
            img = ProceduralBackend().generate("x", 1, 64, 64)
            mask = np.zeros((64, 64), bool)
            mask[:, 32:] = True
            out = client.outpaint(img, mask, "p", 1)
            assert client.drift_violations == 1
            # mock advertises band_px=0 so every known pixel is re-copied
            assert np.array_equal(out[:, :32], img[:, :32])
