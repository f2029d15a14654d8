"""The equirectangular panorama under construction.

An :class:`EquirectCanvas` is a 2:1 RGB image plus a per-pixel coverage
array in [0, 1] (1 = written).  Unwritten pixels hold the sentinel color
(pure black).  Views are extracted by casting a ray per view pixel and
sampling the canvas with coverage-weighted bilinear interpolation;
composites run the inverse mapping (iterate canvas pixels, sample the
view image), which avoids forward-splat holes near the poles.

Compositing never dilutes real content with the sentinel: uncovered
pixels receive the full new sample and become covered, fully covered
pixels are left bit-identical except inside the feather band -- a strip
of at most ``blend_width_px`` around the newly written region where old
and new content are cross-faded to hide seams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from panoweave.geometry import (
    ViewSpec,
    angular_offsets,
    dir_to_view_px_raw,
    view_px_to_dir_arrays,
)

SENTINEL = 0  # per-channel value of never-written pixels
COVERED = 0.999  # coverage at or above this counts as written

PANO_SUFFIX = ".pano.png"
COV_SUFFIX = ".cov.png"


@dataclass
class EquirectCanvas:
    pixels: np.ndarray  # (H, W, 3) uint8
    coverage: np.ndarray  # (H, W) float32 in [0, 1]

    def __post_init__(self) -> None:
        h, w = self.coverage.shape
        if self.pixels.shape != (h, w, 3) or self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be (H, W, 3) uint8 matching coverage")
        if w != 2 * h:
            raise ValueError(f"canvas must be 2:1, got {w}x{h}")

    @classmethod
    def empty(cls, width_px: int, height_px: int) -> "EquirectCanvas":
        return cls(
            pixels=np.full((height_px, width_px, 3), SENTINEL, dtype=np.uint8),
            coverage=np.zeros((height_px, width_px), dtype=np.float32),
        )

    @property
    def width_px(self) -> int:
        return self.pixels.shape[1]

    @property
    def height_px(self) -> int:
        return self.pixels.shape[0]

    def copy(self) -> "EquirectCanvas":
        return EquirectCanvas(self.pixels.copy(), self.coverage.copy())

    def row_elevations_deg(self) -> np.ndarray:
        """Elevation of each pixel-row center, top row first."""
        iy = np.arange(self.height_px, dtype=np.float64)
        return 90.0 - (iy + 0.5) / self.height_px * 180.0


@dataclass
class ViewImage:
    """A perspective view image with a validity mask (True = real content)."""

    pixels: np.ndarray  # (H, W, 3) uint8
    validity: np.ndarray  # (H, W) bool

    def __post_init__(self) -> None:
        if self.pixels.shape[:2] != self.validity.shape:
            raise ValueError("validity shape must match pixels")

    @property
    def width_px(self) -> int:
        return self.pixels.shape[1]

    @property
    def height_px(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def full(cls, pixels: np.ndarray) -> "ViewImage":
        return cls(pixels=pixels, validity=np.ones(pixels.shape[:2], dtype=bool))


# --- sampling helpers --------------------------------------------------------


def _bilinear_gather(
    values: np.ndarray, coverage: np.ndarray, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Coverage-weighted bilinear sample of an equirect canvas.

    x wraps (heading), y clamps at the poles.  Returns (rgb float64,
    interpolated coverage float64); rgb is the sentinel wherever the
    interpolated coverage is zero.
    """
    h, w = coverage.shape
    fx = x - 0.5
    fy = y - 0.5
    ix0 = np.floor(fx).astype(np.int64)
    iy0 = np.floor(fy).astype(np.int64)
    tx = fx - ix0
    ty = fy - iy0
    ix0 %= w
    ix1 = (ix0 + 1) % w
    iy1 = np.clip(iy0 + 1, 0, h - 1)
    iy0 = np.clip(iy0, 0, h - 1)

    wts = (
        (1 - tx) * (1 - ty),
        tx * (1 - ty),
        (1 - tx) * ty,
        tx * ty,
    )
    corners = ((iy0, ix0), (iy0, ix1), (iy1, ix0), (iy1, ix1))

    cov_interp = np.zeros(x.shape, dtype=np.float64)
    weighted = np.zeros(x.shape, dtype=np.float64)
    rgb = np.zeros(x.shape + (3,), dtype=np.float64)
    for wt, (iy, ix) in zip(wts, corners):
        c = coverage[iy, ix].astype(np.float64)
        cov_interp += wt * c
        wc = wt * c
        weighted += wc
        rgb += wc[..., None] * values[iy, ix].astype(np.float64)
    nonzero = weighted > 0
    rgb[nonzero] /= weighted[nonzero][..., None]
    rgb[~nonzero] = SENTINEL
    return rgb, cov_interp


def _bilinear_sample_image(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Plain bilinear sample of a fully-valid image at pixel-index coords."""
    h, w = img.shape[:2]
    iu0 = np.floor(u).astype(np.int64)
    iv0 = np.floor(v).astype(np.int64)
    tu = u - iu0
    tv = v - iv0
    iu1 = np.clip(iu0 + 1, 0, w - 1)
    iv1 = np.clip(iv0 + 1, 0, h - 1)
    iu0 = np.clip(iu0, 0, w - 1)
    iv0 = np.clip(iv0, 0, h - 1)
    img_f = img.astype(np.float64)
    return (
        ((1 - tu) * (1 - tv))[..., None] * img_f[iv0, iu0]
        + (tu * (1 - tv))[..., None] * img_f[iv0, iu1]
        + ((1 - tu) * tv)[..., None] * img_f[iv1, iu0]
        + (tu * tv)[..., None] * img_f[iv1, iu1]
    )


# --- operations ---------------------------------------------------------------


def extract_view(
    canvas: EquirectCanvas, view: ViewSpec, coverage_threshold: float = 0.5
) -> ViewImage:
    """Resample the canvas into a perspective view.

    A view pixel is valid when the coverage interpolated along its ray
    reaches ``coverage_threshold`` (and is nonzero); invalid pixels hold
    the sentinel color.
    """
    if not 0.0 <= coverage_threshold <= 1.0:
        raise ValueError(f"coverage_threshold must be in [0, 1], got {coverage_threshold}")
    uu, vv = np.meshgrid(
        np.arange(view.width_px, dtype=np.float64),
        np.arange(view.height_px, dtype=np.float64),
    )
    heading, elevation = view_px_to_dir_arrays(view, uu, vv)
    x = heading / 360.0 * canvas.width_px
    y = (90.0 - elevation) / 180.0 * canvas.height_px
    rgb, cov = _bilinear_gather(canvas.pixels, canvas.coverage, x, y)
    validity = (cov >= coverage_threshold) & (cov > 0.0)
    pixels = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    pixels[~validity] = SENTINEL
    return ViewImage(pixels=pixels, validity=validity)


def _footprint_rows(canvas: EquirectCanvas, view: ViewSpec) -> tuple[int, int]:
    """Row range of the view's angular-box footprint on the canvas."""
    lo_elev = view.center.elevation_deg - view.vfov_deg / 2.0
    hi_elev = view.center.elevation_deg + view.vfov_deg / 2.0
    h = canvas.height_px
    top = int(np.floor((90.0 - hi_elev) / 180.0 * h))
    bottom = int(np.ceil((90.0 - lo_elev) / 180.0 * h))
    return max(0, top), min(h, bottom)


def composite_view(
    canvas: EquirectCanvas,
    view: ViewSpec,
    img: ViewImage,
    blend_width_px: float = 32.0,
) -> EquirectCanvas:
    """Composite a fully generated view image onto the canvas, in place.

    The written footprint is the view's angular box (heading within
    hfov/2 of the center, elevation within vfov/2), so a grid of views at
    fov spacing tiles the canvas without scallop gaps; content samples
    the image gnomonically, edge-clamped for the sliver of box pixels the
    exact frustum misses.

    Uncovered footprint pixels take the new content at full strength and
    become covered.  Fully covered pixels change only inside the feather
    band: within ``blend_width_px`` of the newly written region, new
    content is cross-faded over old with a weight that falls off linearly
    with distance from the new region and toward the footprint edge.
    Covered pixels outside that band are bit-identical afterward.
    """
    if img.pixels.shape[:2] != (view.height_px, view.width_px):
        raise ValueError(
            f"image {img.pixels.shape[1]}x{img.pixels.shape[0]} does not match view "
            f"{view.width_px}x{view.height_px}"
        )
    if not img.validity.all():
        raise ValueError("only fully valid images can be composited")

    top, bottom = _footprint_rows(canvas, view)
    if top >= bottom:
        return canvas
    w = canvas.width_px
    iy, ix = np.mgrid[top:bottom, 0:w]
    heading = (ix + 0.5) / w * 360.0
    elevation = 90.0 - (iy + 0.5) / canvas.height_px * 180.0
    u, v, in_front = dir_to_view_px_raw(view, heading, elevation)
    dh, de = angular_offsets(view.center, heading, elevation)
    in_frustum = (
        in_front
        & (np.abs(dh) <= view.hfov_deg / 2.0)
        & (np.abs(de) <= view.vfov_deg / 2.0)
    )
    if not in_frustum.any():
        return canvas
    u = np.clip(u, -0.5, view.width_px - 0.5)
    v = np.clip(v, -0.5, view.height_px - 0.5)

    slab_pix = canvas.pixels[top:bottom]
    slab_cov = canvas.coverage[top:bottom]

    new_rgb = np.zeros(in_frustum.shape + (3,), dtype=np.float64)
    new_rgb[in_frustum] = _bilinear_sample_image(img.pixels, u[in_frustum], v[in_frustum])

    known = slab_cov >= COVERED
    fresh = in_frustum & ~known

    # frustum feather: 0 at the frustum boundary, 1 from blend_width_px inward
    pu = u + 0.5
    pv = v + 0.5
    edge_dist = np.minimum(
        np.minimum(pu, view.width_px - pu), np.minimum(pv, view.height_px - pv)
    )
    if blend_width_px > 0:
        feather = np.clip(edge_dist / blend_width_px, 0.0, 1.0)
    else:
        feather = np.ones_like(edge_dist)

    if fresh.any():
        old = slab_pix[fresh].astype(np.float64)
        b = slab_cov[fresh].astype(np.float64)
        headroom = 1.0 - b
        denom = (headroom + b)[..., None]
        blended = (headroom[..., None] * new_rgb[fresh] + b[..., None] * old) / denom
        slab_pix[fresh] = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
        slab_cov[fresh] = 1.0

        if blend_width_px > 0:
            dist = _dist_to_region(fresh, blend_width_px, w)
            band = known & in_frustum & (dist > 0) & (dist < blend_width_px)
            if band.any():
                alpha = (1.0 - dist[band] / blend_width_px) * feather[band]
                old_band = slab_pix[band].astype(np.float64)
                mixed = old_band + alpha[..., None] * (new_rgb[band] - old_band)
                slab_pix[band] = np.clip(np.rint(mixed), 0, 255).astype(np.uint8)
    return canvas


def _dist_to_region(region: np.ndarray, reach_px: float, canvas_w: int) -> np.ndarray:
    """Distance (px) from each slab pixel to the region, horizontally wrap-aware."""
    pad = min(int(math.ceil(reach_px)) + 1, canvas_w)
    wrapped = np.concatenate([region[:, -pad:], region, region[:, :pad]], axis=1)
    dist = ndimage.distance_transform_edt(~wrapped)
    return dist[:, pad:-pad]


def coverage_fraction(
    canvas: EquirectCanvas, elevation_band: tuple[float, float] = (-90.0, 90.0)
) -> float:
    """Solid-angle-weighted fraction of covered pixels inside an elevation band."""
    lo, hi = elevation_band
    if not (-90.0 <= lo < hi <= 90.0):
        raise ValueError(f"band must satisfy -90 <= lo < hi <= 90, got {elevation_band}")
    elev = canvas.row_elevations_deg()
    rows = (elev > lo) & (elev < hi)
    if not rows.any():
        return 0.0
    weights = np.cos(np.radians(elev[rows]))
    covered = (canvas.coverage[rows] >= COVERED).sum(axis=1)
    return float((weights * covered).sum() / (weights.sum() * canvas.width_px))


def seam_energy(canvas: EquirectCanvas) -> float | None:
    """Mean absolute difference across the wraparound column, in [0, 1].

    Only rows covered at both edge columns contribute; returns None when
    no row qualifies (the no-coverage signal).
    """
    left_cov = canvas.coverage[:, 0] >= COVERED
    right_cov = canvas.coverage[:, -1] >= COVERED
    rows = left_cov & right_cov
    if not rows.any():
        return None
    left = canvas.pixels[rows, 0, :].astype(np.float64)
    right = canvas.pixels[rows, -1, :].astype(np.float64)
    return float(np.abs(left - right).mean() / 255.0)


# --- serialization ------------------------------------------------------------


def save_canvas(canvas: EquirectCanvas, base_path: str | Path) -> tuple[Path, Path]:
    """Write ``<base>.pano.png`` and the ``<base>.cov.png`` sidecar."""
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    pano_path = base.with_name(base.name + PANO_SUFFIX)
    cov_path = base.with_name(base.name + COV_SUFFIX)
    Image.fromarray(canvas.pixels, mode="RGB").save(pano_path, format="PNG")
    cov8 = np.clip(np.rint(canvas.coverage * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(cov8, mode="L").save(cov_path, format="PNG")
    return pano_path, cov_path


def load_canvas(base_path: str | Path) -> EquirectCanvas:
    """Load a canvas saved by :func:`save_canvas`."""
    base = Path(base_path)
    pano_path = base.with_name(base.name + PANO_SUFFIX)
    cov_path = base.with_name(base.name + COV_SUFFIX)
    pixels = np.asarray(Image.open(pano_path).convert("RGB"))
    cov8 = np.asarray(Image.open(cov_path).convert("L"))
    return EquirectCanvas(
        pixels=pixels.copy(), coverage=(cov8.astype(np.float32) / 255.0)
    )
