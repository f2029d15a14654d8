"""The pluggable image-generation boundary.

A backend provides some subset of three capabilities over RGB uint8
numpy images:

* ``generate(prompt, seed, width, height)`` -- text-to-image.
* ``outpaint(image, generate_mask, prompt, seed)`` -- fill the masked
  region conditioned on the rest; True in ``generate_mask`` marks pixels
  to synthesize.  Known pixels SHOULD survive; the procedural backend
  preserves them exactly, the HTTP client enforces preservation by
  re-copying them outside a small boundary band.
* ``caption(image)`` -- image-to-text.

Implementations: :class:`panoweave.backends.procedural.ProceduralBackend`
(deterministic, offline) and :class:`panoweave.backends.http.HttpBackend`
(wire client for an external service).
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

CAP_GENERATE = "generate"
CAP_OUTPAINT = "outpaint"
CAP_CAPTION = "caption"
ALL_CAPABILITIES = frozenset({CAP_GENERATE, CAP_OUTPAINT, CAP_CAPTION})


class BackendError(Exception):
    """Base class for generation-backend failures."""


class BackendUnavailable(BackendError):
    """Transport-level failure that persisted through retries."""


class ProtocolViolation(BackendError):
    """The service answered, but not in the shape the wire contract promises."""


class ServiceError(BackendError):
    """The service reported an application error ({code, message} body)."""

    def __init__(self, code: str, message: str, status: int | None = None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
        self.status = status


@runtime_checkable
class GenerationBackend(Protocol):
    identity: str
    capabilities: frozenset[str]

    def generate(self, prompt: str, seed: int, width: int, height: int) -> np.ndarray:
        ...

    def outpaint(
        self, image: np.ndarray, generate_mask: np.ndarray, prompt: str, seed: int
    ) -> np.ndarray:
        ...

    def caption(self, image: np.ndarray) -> str:
        ...


def check_rgb_image(image: np.ndarray, what: str = "image") -> None:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"{what} must be an (H, W, 3) uint8 array, got "
                         f"shape {image.shape} dtype {image.dtype}")


def check_mask_matches(image: np.ndarray, mask: np.ndarray) -> None:
    if mask.shape[:2] != image.shape[:2]:
        raise ValueError(
            f"mask dimensions {mask.shape[:2]} do not match image {image.shape[:2]}"
        )
