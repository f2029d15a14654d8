"""Deterministic procedural backend: smooth seeded color fields.

``generate`` evaluates a sum of low-frequency sinusoids whose amplitudes,
frequencies and phases are derived from hash(prompt, seed).  Frequencies
are capped at 1/256 cycles per pixel, which bounds the adjacent-pixel
delta well under 8/255 at any resolution and keeps bilinear-resampling
tolerances meaningful downstream.

``outpaint`` copies known pixels bit-exactly and fills the masked region
with the same field family plus a discrete-harmonic correction whose
Dirichlet boundary is the known/unknown interface, so the fill meets the
known content continuously.
"""

from __future__ import annotations

import numpy as np
import pyamg
from scipy import sparse

from panoweave.backends import check_mask_matches, check_rgb_image
from panoweave.hashing import derive_seed

_N_WAVES = 6
_MIN_WAVELENGTH_PX = 256.0
_MAX_WAVELENGTH_PX = 1024.0

IDENTITY = "procedural-field/1"


def _field(prompt: str, seed: int, width: int, height: int) -> np.ndarray:
    """The seeded color field as float64 in [0, 255], shape (H, W, 3)."""
    rng = np.random.default_rng(derive_seed("field", prompt, seed))
    amp = rng.uniform(0.3, 1.0, size=(3, _N_WAVES))
    freq = 1.0 / rng.uniform(_MIN_WAVELENGTH_PX, _MAX_WAVELENGTH_PX, size=(3, _N_WAVES))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=(3, _N_WAVES))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(3, _N_WAVES))

    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.empty((height, width, 3), dtype=np.float64)
    for c in range(3):
        acc = np.zeros((height, width), dtype=np.float64)
        for k in range(_N_WAVES):
            fx = freq[c, k] * np.cos(theta[c, k])
            fy = freq[c, k] * np.sin(theta[c, k])
            acc += amp[c, k] * np.sin(2.0 * np.pi * (fx * x + fy * y) + phase[c, k])
        out[:, :, c] = 127.5 + 127.5 * acc / amp[c].sum()
    return out


def _quantize(field: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(field), 0, 255).astype(np.uint8)


def _harmonic_correction(
    delta: np.ndarray, unknown: np.ndarray
) -> np.ndarray:
    """Discrete-harmonic extension of ``delta`` (known boundary values)
    into the unknown region; zero-Neumann at image borders.

    delta: (H, W, C) float, meaningful on known pixels only.
    unknown: (H, W) bool, True where the correction is solved for.
    Returns (H, W, C) float, zero outside the unknown region.
    """
    h, w = unknown.shape
    n = int(unknown.sum())
    out = np.zeros_like(delta)
    if n == 0:
        return out

    index = -np.ones((h, w), dtype=np.int64)
    index[unknown] = np.arange(n)

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    diag = np.zeros(n, dtype=np.float64)
    rhs = np.zeros((n, delta.shape[2]), dtype=np.float64)

    uy, ux = np.nonzero(unknown)
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        ny, nx = uy + dy, ux + dx
        inside = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        diag += inside  # border neighbors drop out (natural condition)
        iy, ix = ny[inside], nx[inside]
        src = index[uy[inside], ux[inside]]
        nbr_unknown = unknown[iy, ix]
        tgt = index[iy[nbr_unknown], ix[nbr_unknown]]
        rows.append(src[nbr_unknown])
        cols.append(tgt)
        vals.append(np.full(len(tgt), -1.0))
        ky, kx = iy[~nbr_unknown], ix[~nbr_unknown]
        np.add.at(rhs, src[~nbr_unknown], delta[ky, kx, :])

    a = sparse.coo_matrix(
        (
            np.concatenate(vals + [diag]),
            (
                np.concatenate(rows + [np.arange(n)]),
                np.concatenate(cols + [np.arange(n)]),
            ),
        ),
        shape=(n, n),
    ).tocsr()

    solver = pyamg.ruge_stuben_solver(a)
    correction = np.zeros_like(rhs)
    for c in range(delta.shape[2]):
        if np.any(rhs[:, c]):
            correction[:, c] = solver.solve(rhs[:, c], tol=1e-10, accel="cg")
    out[unknown] = correction
    return out


class ProceduralBackend:
    """Offline test double: every output is a pure function of its inputs."""

    identity = IDENTITY
    capabilities = frozenset({"generate", "outpaint", "caption"})

    def generate(self, prompt: str, seed: int, width: int, height: int) -> np.ndarray:
        if width <= 0 or height <= 0:
            raise ValueError(f"image dimensions must be positive, got {width}x{height}")
        return _quantize(_field(prompt, seed, width, height))

    def outpaint(
        self, image: np.ndarray, generate_mask: np.ndarray, prompt: str, seed: int
    ) -> np.ndarray:
        check_rgb_image(image)
        check_mask_matches(image, generate_mask)
        unknown = np.asarray(generate_mask, dtype=bool)
        if not unknown.any():
            return image.copy()
        height, width = image.shape[:2]
        field = _field(prompt, seed, width, height)
        if unknown.all():
            return _quantize(field)
        delta = image.astype(np.float64) - field
        correction = _harmonic_correction(delta, unknown)
        out = image.copy()
        filled = _quantize(field + correction)
        out[unknown] = filled[unknown]
        return out

    def caption(self, image: np.ndarray) -> str:
        check_rgb_image(image)
        tone = derive_seed("caption", image.tobytes()) % 100000
        h, w = image.shape[:2]
        return f"a synthetic interior view, {w}x{h}, tone {tone:05d}"
