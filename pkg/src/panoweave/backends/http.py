"""HTTP client for the generation-service wire protocol.

Transport errors are retried with exponential backoff; protocol breaches
(wrong dimensions, malformed bodies, empty captions) raise
:class:`ProtocolViolation` and are never retried.  Known pixels in
outpaint replies are re-copied from the request outside the declared
boundary band, so engine invariants hold regardless of how much the
remote model perturbs them; in-band drift beyond the declared tolerance
is counted in :attr:`HttpBackend.drift_violations` and logged.
"""

from __future__ import annotations

import logging
import os
import time

import numpy as np
import requests
from scipy import ndimage

from panoweave.backends import (
    BackendUnavailable,
    ProtocolViolation,
    ServiceError,
    check_mask_matches,
    check_rgb_image,
)
from panoweave.backends.wire import (
    CaptionRequest,
    CaptionResponse,
    GenerateRequest,
    Healthz,
    ImageResponse,
    OutpaintRequest,
    parse_json,
)

log = logging.getLogger(__name__)

BASE_URL_ENV = "PANOWEAVE_BACKEND_URL"


def resolve_base_url(explicit: str | None = None) -> str:
    url = explicit or os.environ.get(BASE_URL_ENV)
    if not url:
        raise BackendUnavailable(
            f"no service base URL: pass one explicitly or set {BASE_URL_ENV}"
        )
    return url.rstrip("/")


class HttpBackend:
    """Client for a remote generate/outpaint/caption service."""

    def __init__(
        self,
        base_url: str | None = None,
        timeout_s: float = 60.0,
        retries: int = 3,
        backoff_s: float = 0.25,
        session: requests.Session | None = None,
    ):
        self.base_url = resolve_base_url(base_url)
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self._session = session or requests.Session()
        self.drift_violations = 0
        self._health: Healthz | None = None

    # -- service metadata ---------------------------------------------------

    @property
    def health(self) -> Healthz:
        if self._health is None:
            body = parse_json(self._request("GET", "/healthz", None), "healthz")
            self._health = Healthz.from_body(body)
        return self._health

    @property
    def identity(self) -> str:
        return f"http:{self.health.model_id}"

    @property
    def capabilities(self) -> frozenset[str]:
        return frozenset(self.health.capabilities)

    # -- capabilities -------------------------------------------------------

    def generate(self, prompt: str, seed: int, width: int, height: int) -> np.ndarray:
        if width <= 0 or height <= 0:
            raise ValueError(f"image dimensions must be positive, got {width}x{height}")
        self._check_size(width, height)
        req = GenerateRequest(prompt=prompt, seed=seed, width=width, height=height)
        resp = self._post_image("/generate", req.to_json())
        if resp.image.shape[:2] != (height, width):
            raise ProtocolViolation(
                f"/generate returned {resp.image.shape[1]}x{resp.image.shape[0]}, "
                f"requested {width}x{height}"
            )
        return resp.image

    def outpaint(
        self, image: np.ndarray, generate_mask: np.ndarray, prompt: str, seed: int
    ) -> np.ndarray:
        check_rgb_image(image)
        check_mask_matches(image, generate_mask)
        self._check_size(image.shape[1], image.shape[0])
        mask = np.asarray(generate_mask, dtype=bool)
        req = OutpaintRequest(image=image, generate_mask=mask, prompt=prompt, seed=seed)
        resp = self._post_image("/outpaint", req.to_json())
        if resp.image.shape != image.shape:
            raise ProtocolViolation(
                f"/outpaint returned shape {resp.image.shape}, expected {image.shape}"
            )
        return self._enforce_known_pixels(image, mask, resp.image)

    def caption(self, image: np.ndarray) -> str:
        check_rgb_image(image)
        self._check_size(image.shape[1], image.shape[0])
        req = CaptionRequest(image=image)
        body = parse_json(self._request("POST", "/caption", req.to_json()), "/caption")
        text = " ".join(CaptionResponse.from_body(body).text.split())
        if not text:
            raise ProtocolViolation("/caption returned empty text")
        return text

    # -- plumbing -----------------------------------------------------------

    def _check_size(self, width: int, height: int) -> None:
        h = self.health
        if width > h.max_width or height > h.max_height:
            raise ValueError(
                f"image {width}x{height} exceeds service limit "
                f"{h.max_width}x{h.max_height}"
            )

    def _enforce_known_pixels(
        self, request_img: np.ndarray, generate_mask: np.ndarray, reply: np.ndarray
    ) -> np.ndarray:
        """Re-copy known pixels outside the declared drift band; verify the
        band itself stays within tolerance and count violations."""
        known = ~generate_mask
        if not known.any():
            return reply
        drift = self.health.drift
        if generate_mask.any() and drift.band_px > 0:
            # band: known pixels within band_px (chebyshev) of the unknown region
            near = ndimage.binary_dilation(
                generate_mask, structure=np.ones((3, 3), bool), iterations=drift.band_px
            )
            band = known & near
        else:
            band = np.zeros_like(known)
        recopy = known & ~band
        out = reply.copy()
        out[recopy] = request_img[recopy]
        if band.any():
            delta = np.abs(
                reply[band].astype(np.int16) - request_img[band].astype(np.int16)
            ).max()
        else:
            delta = np.abs(
                reply[known].astype(np.int16) - request_img[known].astype(np.int16)
            ).max(initial=0)
        if delta > drift.max_delta:
            self.drift_violations += 1
            log.warning(
                "outpaint known-region drift %d/255 exceeds declared tolerance %d/255",
                delta,
                drift.max_delta,
            )
        return out

    def _post_image(self, path: str, payload: str) -> ImageResponse:
        body = parse_json(self._request("POST", path, payload), path)
        return ImageResponse.from_body(body)

    def _request(self, method: str, path: str, payload: str | None) -> bytes:
        url = self.base_url + path
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._session.request(
                    method,
                    url,
                    data=payload,
                    headers={"Content-Type": "application/json"} if payload else None,
                    timeout=self.timeout_s,
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                if attempt < self.retries:
                    time.sleep(self.backoff_s * (2**attempt))
                continue
            if 200 <= resp.status_code < 300:
                return resp.content
            try:
                err = parse_json(resp.content, "error body")
                code = str(err.get("code", "unknown"))
                message = str(err.get("message", resp.reason))
            except ProtocolViolation:
                raise ProtocolViolation(
                    f"{path}: HTTP {resp.status_code} without a parseable error body"
                ) from None
            raise ServiceError(code, message, status=resp.status_code)
        raise BackendUnavailable(
            f"{url} unreachable after {self.retries + 1} attempts: {last_exc}"
        )
