"""Wire messages for the generation service protocol.

JSON bodies with base64-encoded lossless PNG images.  Mask polarity:
255 = generate-here, 0 = keep.  Encoding is canonical (sorted keys, no
whitespace, fixed PNG settings) so identical messages are identical bytes.
"""

from __future__ import annotations

import base64
import io
import json
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from panoweave.backends import ProtocolViolation

DEFAULT_STEPS = 50
DEFAULT_GUIDANCE = 7.5


def png_encode(image: np.ndarray) -> bytes:
    """Lossless PNG bytes for an (H, W, 3) uint8 RGB or (H, W) uint8 gray array."""
    if image.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {image.dtype}")
    mode = "RGB" if image.ndim == 3 else "L"
    buf = io.BytesIO()
    Image.fromarray(image, mode=mode).save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def png_decode(data: bytes) -> np.ndarray:
    """Decode PNG bytes to uint8; RGB images come back (H, W, 3), grayscale (H, W)."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise ProtocolViolation(f"undecodable image payload: {exc}") from exc
    if img.mode not in ("RGB", "L"):
        img = img.convert("RGB" if img.mode not in ("L", "1", "I;16") else "L")
    return np.asarray(img)


def image_to_b64(image: np.ndarray) -> str:
    return base64.b64encode(png_encode(image)).decode("ascii")


def b64_to_image(payload: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
    except Exception as exc:
        raise ProtocolViolation(f"invalid base64 image field: {exc}") from exc
    return png_decode(raw)


def mask_to_wire(generate_mask: np.ndarray) -> np.ndarray:
    """Bool mask (True = generate) to the 8-bit wire convention."""
    return np.where(np.asarray(generate_mask, dtype=bool), 255, 0).astype(np.uint8)


def wire_to_mask(mask_image: np.ndarray) -> np.ndarray:
    """8-bit wire mask to bool (>= 128 counts as generate-here)."""
    if mask_image.ndim != 2:
        raise ProtocolViolation(f"mask must be single-channel, got shape {mask_image.shape}")
    return mask_image >= 128


def _require(body: dict, key: str, kind, what: str):
    if key not in body:
        raise ProtocolViolation(f"{what} missing required field '{key}'")
    value = body[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ProtocolViolation(f"{what} field '{key}' must be a number")
        return float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ProtocolViolation(f"{what} field '{key}' must be {kind.__name__}")
    return value


@dataclass(frozen=True)
class GenerateRequest:
    prompt: str
    seed: int
    width: int
    height: int
    steps: int = DEFAULT_STEPS
    guidance: float = DEFAULT_GUIDANCE

    def to_json(self) -> str:
        return json.dumps(
            {
                "prompt": self.prompt,
                "seed": self.seed,
                "width": self.width,
                "height": self.height,
                "steps": self.steps,
                "guidance": self.guidance,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_body(cls, body: dict) -> "GenerateRequest":
        return cls(
            prompt=_require(body, "prompt", str, "generate request"),
            seed=_require(body, "seed", int, "generate request"),
            width=_require(body, "width", int, "generate request"),
            height=_require(body, "height", int, "generate request"),
            steps=int(body.get("steps", DEFAULT_STEPS)),
            guidance=float(body.get("guidance", DEFAULT_GUIDANCE)),
        )


@dataclass(frozen=True)
class OutpaintRequest:
    image: np.ndarray
    generate_mask: np.ndarray
    prompt: str
    seed: int
    steps: int = DEFAULT_STEPS
    guidance: float = DEFAULT_GUIDANCE

    def __post_init__(self) -> None:
        if self.generate_mask.shape[:2] != self.image.shape[:2]:
            raise ValueError(
                f"mask dimensions {self.generate_mask.shape[:2]} do not match "
                f"image {self.image.shape[:2]}"
            )

    def to_json(self) -> str:
        return json.dumps(
            {
                "image": image_to_b64(self.image),
                "mask": image_to_b64(mask_to_wire(self.generate_mask)),
                "prompt": self.prompt,
                "seed": self.seed,
                "steps": self.steps,
                "guidance": self.guidance,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_body(cls, body: dict) -> "OutpaintRequest":
        image = b64_to_image(_require(body, "image", str, "outpaint request"))
        mask_img = b64_to_image(_require(body, "mask", str, "outpaint request"))
        if image.ndim != 3:
            raise ProtocolViolation("outpaint request image must be RGB")
        mask = wire_to_mask(mask_img)
        if mask.shape != image.shape[:2]:
            raise ProtocolViolation(
                f"outpaint mask {mask.shape} does not match image {image.shape[:2]}"
            )
        return cls(
            image=image,
            generate_mask=mask,
            prompt=_require(body, "prompt", str, "outpaint request"),
            seed=_require(body, "seed", int, "outpaint request"),
            steps=int(body.get("steps", DEFAULT_STEPS)),
            guidance=float(body.get("guidance", DEFAULT_GUIDANCE)),
        )


@dataclass(frozen=True)
class ImageResponse:
    image: np.ndarray
    model_id: str
    latency_ms: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "image": image_to_b64(self.image),
                "model_id": self.model_id,
                "latency_ms": self.latency_ms,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_body(cls, body: dict) -> "ImageResponse":
        image = b64_to_image(_require(body, "image", str, "image response"))
        if image.ndim != 3:
            raise ProtocolViolation("image response payload must be RGB")
        return cls(
            image=image,
            model_id=_require(body, "model_id", str, "image response"),
            latency_ms=_require(body, "latency_ms", int, "image response"),
        )


@dataclass(frozen=True)
class CaptionRequest:
    image: np.ndarray

    def to_json(self) -> str:
        return json.dumps(
            {"image": image_to_b64(self.image)}, sort_keys=True, separators=(",", ":")
        )

    @classmethod
    def from_body(cls, body: dict) -> "CaptionRequest":
        image = b64_to_image(_require(body, "image", str, "caption request"))
        if image.ndim != 3:
            raise ProtocolViolation("caption request image must be RGB")
        return cls(image=image)


@dataclass(frozen=True)
class CaptionResponse:
    text: str

    def to_json(self) -> str:
        return json.dumps({"text": self.text}, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_body(cls, body: dict) -> "CaptionResponse":
        return cls(text=_require(body, "text", str, "caption response"))


@dataclass(frozen=True)
class DriftTolerance:
    """Declared bound on known-pixel drift for outpaint responses: at most
    ``max_delta`` per channel inside a ``band_px``-wide band around the
    mask boundary, exact elsewhere (the client re-copies to enforce it)."""

    band_px: int = 4
    max_delta: int = 12


@dataclass(frozen=True)
class Healthz:
    capabilities: tuple[str, ...]
    model_id: str
    max_width: int = 4096
    max_height: int = 4096
    drift: DriftTolerance = field(default_factory=DriftTolerance)

    def to_json(self) -> str:
        return json.dumps(
            {
                "capabilities": sorted(self.capabilities),
                "model_id": self.model_id,
                "max_width": self.max_width,
                "max_height": self.max_height,
                "known_region_drift": {
                    "band_px": self.drift.band_px,
                    "max_delta": self.drift.max_delta,
                },
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_body(cls, body: dict) -> "Healthz":
        caps = _require(body, "capabilities", list, "healthz response")
        drift_body = body.get("known_region_drift", {})
        return cls(
            capabilities=tuple(str(c) for c in caps),
            model_id=_require(body, "model_id", str, "healthz response"),
            max_width=int(body.get("max_width", 4096)),
            max_height=int(body.get("max_height", 4096)),
            drift=DriftTolerance(
                band_px=int(drift_body.get("band_px", 4)),
                max_delta=int(drift_body.get("max_delta", 12)),
            ),
        )


def error_body(code: str, message: str) -> str:
    return json.dumps({"code": code, "message": message}, sort_keys=True, separators=(",", ":"))


def parse_json(data: bytes | str, what: str) -> dict:
    try:
        body = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ProtocolViolation(f"{what}: body is not valid JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise ProtocolViolation(f"{what}: body must be a JSON object")
    return body
