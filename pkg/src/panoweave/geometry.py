"""Spherical directions, the equirectangular pixel mapping, and gnomonic
(perspective) projection between view frustums and the sphere.

Conventions, fixed here once and relied on everywhere else:

* Heading is measured in degrees, clockwise looking down, normalized to
  ``[0, 360)``.  Elevation is degrees in ``[-90, +90]``, positive upward.
* Equirectangular x grows with heading (heading 0 at x = 0), y grows
  downward (elevation +90 at y = 0).  Canvases are 2:1 (width = 2 height).
* Cameras never roll.
* Pixel ``(i, j)`` samples the continuous location ``(i + 0.5, j + 0.5)``;
  continuous coordinates make the projection round trips exact.

World frame used internally: y up, z toward heading 0, x toward heading 90.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GRID_N_HEADINGS = 12
GRID_HEADING_STEP_DEG = 360.0 / GRID_N_HEADINGS
GRID_ELEVATION_STEP_DEG = 30.0
GRID_ELEVATION_INDICES = (-1, 0, 1)


@dataclass(frozen=True)
class SphericalDirection:
    """A pointing direction on the unit sphere.

    heading_deg is normalized into [0, 360) on construction; elevation_deg
    outside [-90, +90] is rejected (rotations clamp before constructing).
    """

    heading_deg: float
    elevation_deg: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.elevation_deg <= 90.0:
            raise ValueError(
                f"elevation_deg must be in [-90, 90], got {self.elevation_deg}"
            )
        object.__setattr__(self, "heading_deg", float(self.heading_deg) % 360.0)
        object.__setattr__(self, "elevation_deg", float(self.elevation_deg))


@dataclass(frozen=True)
class ViewSpec:
    """A perspective camera frustum: center direction, fields of view and
    pixel dimensions.  Fov and pixel dims are independent (no aspect tie)."""

    center: SphericalDirection
    hfov_deg: float
    vfov_deg: float
    width_px: int
    height_px: int

    def __post_init__(self) -> None:
        if not 0.0 < self.hfov_deg < 180.0:
            raise ValueError(f"hfov_deg must be in (0, 180), got {self.hfov_deg}")
        if not 0.0 < self.vfov_deg < 180.0:
            raise ValueError(f"vfov_deg must be in (0, 180), got {self.vfov_deg}")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("view dimensions must be positive")


@dataclass(frozen=True)
class ViewIndex:
    """One cell of the fixed 12 x 3 view grid (30 degree spacing)."""

    heading_index: int
    elevation_index: int

    def __post_init__(self) -> None:
        if not 0 <= self.heading_index < GRID_N_HEADINGS:
            raise ValueError(f"heading_index must be in [0, 12), got {self.heading_index}")
        if self.elevation_index not in GRID_ELEVATION_INDICES:
            raise ValueError(
                f"elevation_index must be one of {GRID_ELEVATION_INDICES}, "
                f"got {self.elevation_index}"
            )

    @property
    def center(self) -> SphericalDirection:
        return SphericalDirection(
            self.heading_index * GRID_HEADING_STEP_DEG,
            self.elevation_index * GRID_ELEVATION_STEP_DEG,
        )


@dataclass(frozen=True)
class ViewGrid:
    """Camera parameters shared by all 36 grid views."""

    hfov_deg: float = 60.0
    vfov_deg: float = 60.0
    width_px: int = 512
    height_px: int = 512

    def view_spec(self, index: ViewIndex) -> ViewSpec:
        return ViewSpec(
            center=index.center,
            hfov_deg=self.hfov_deg,
            vfov_deg=self.vfov_deg,
            width_px=self.width_px,
            height_px=self.height_px,
        )


def all_view_indices() -> list[ViewIndex]:
    """The 36 grid cells, elevation-major bottom to top, then by heading."""
    return [
        ViewIndex(h, e)
        for e in GRID_ELEVATION_INDICES
        for h in range(GRID_N_HEADINGS)
    ]


def rotate(
    direction: SphericalDirection, d_heading_deg: float, d_elevation_deg: float
) -> tuple[SphericalDirection, bool]:
    """Rotate a direction; heading wraps, elevation clamps at the poles.

    Returns the rotated direction and a flag that is True when the
    elevation had to be clamped to +/-90.
    """
    heading = (direction.heading_deg + d_heading_deg) % 360.0
    elevation = direction.elevation_deg + d_elevation_deg
    clamped = elevation < -90.0 or elevation > 90.0
    elevation = min(90.0, max(-90.0, elevation))
    return SphericalDirection(heading, elevation), clamped


# --- equirectangular mapping ------------------------------------------------


def _require_2to1(canvas_w: int, canvas_h: int) -> None:
    if canvas_w != 2 * canvas_h:
        raise ValueError(
            f"equirectangular canvas must be 2:1, got {canvas_w}x{canvas_h}"
        )


def dir_to_equirect_px(
    direction: SphericalDirection, canvas_w: int, canvas_h: int
) -> tuple[float, float]:
    """Continuous equirectangular coordinates of a direction.

    x in [0, canvas_w), y in [0, canvas_h]; linear in heading / elevation.
    """
    _require_2to1(canvas_w, canvas_h)
    x = direction.heading_deg / 360.0 * canvas_w
    y = (90.0 - direction.elevation_deg) / 180.0 * canvas_h
    return x, y


def equirect_px_to_dir(
    x: float, y: float, canvas_w: int, canvas_h: int
) -> SphericalDirection:
    """Inverse of :func:`dir_to_equirect_px`."""
    _require_2to1(canvas_w, canvas_h)
    if not 0.0 <= x < canvas_w:
        raise ValueError(f"x must be in [0, {canvas_w}), got {x}")
    if not 0.0 <= y <= canvas_h:
        raise ValueError(f"y must be in [0, {canvas_h}], got {y}")
    return SphericalDirection(x / canvas_w * 360.0, 90.0 - y / canvas_h * 180.0)


# --- unit-vector helpers (vectorized) ---------------------------------------


def unit_from_angles(heading_deg, elevation_deg) -> np.ndarray:
    """Unit vectors for arrays of heading/elevation degrees; shape (..., 3)."""
    h = np.radians(np.asarray(heading_deg, dtype=np.float64))
    e = np.radians(np.asarray(elevation_deg, dtype=np.float64))
    ce = np.cos(e)
    return np.stack([np.sin(h) * ce, np.sin(e), np.cos(h) * ce], axis=-1)


def angles_from_unit(vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Heading/elevation degrees for unit vectors of shape (..., 3)."""
    x, y, z = vec[..., 0], vec[..., 1], vec[..., 2]
    heading = np.degrees(np.arctan2(x, z)) % 360.0
    elevation = np.degrees(np.arcsin(np.clip(y, -1.0, 1.0)))
    return heading, elevation


def camera_basis(center: SphericalDirection) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero-roll camera basis (right, up, forward) for a view center.

    The right vector is horizontal for every elevation, which is the
    zero-roll continuation at the poles where world-up and forward align.
    """
    h = math.radians(center.heading_deg)
    forward = unit_from_angles(center.heading_deg, center.elevation_deg)
    right = np.array([math.cos(h), 0.0, -math.sin(h)], dtype=np.float64)
    up = np.cross(forward, right)
    return right, up, forward


# --- gnomonic projection ----------------------------------------------------


def view_px_to_dir_arrays(
    view: ViewSpec, u, v
) -> tuple[np.ndarray, np.ndarray]:
    """Directions (heading, elevation degrees) of rays through view pixels.

    u, v are pixel-index coordinates (pixel i samples at i + 0.5); arrays
    broadcast together.  Values outside [0, width) x [0, height) extrapolate
    along the same pinhole model.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    tan_x = math.tan(math.radians(view.hfov_deg) / 2.0)
    tan_y = math.tan(math.radians(view.vfov_deg) / 2.0)
    x_cam = (2.0 * (u + 0.5) / view.width_px - 1.0) * tan_x
    y_cam = (1.0 - 2.0 * (v + 0.5) / view.height_px) * tan_y
    right, up, forward = camera_basis(view.center)
    ray = (
        x_cam[..., None] * right
        + y_cam[..., None] * up
        + np.ones_like(x_cam)[..., None] * forward
    )
    ray /= np.linalg.norm(ray, axis=-1, keepdims=True)
    return angles_from_unit(ray)


def view_px_to_dir(view: ViewSpec, u: float, v: float) -> SphericalDirection:
    """Sphere direction of the ray through view pixel (u, v)."""
    heading, elevation = view_px_to_dir_arrays(view, u, v)
    return SphericalDirection(float(heading), float(elevation))


def dir_to_view_px_raw(
    view: ViewSpec, heading_deg, elevation_deg
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gnomonic projection without bounds checks.

    Returns (u, v, in_front); u, v extrapolate beyond the image for
    directions outside the frustum and are only meaningful where in_front
    (positive depth) holds.
    """
    vec = unit_from_angles(heading_deg, elevation_deg)
    right, up, forward = camera_basis(view.center)
    x = vec @ right
    y = vec @ up
    z = vec @ forward
    tan_x = math.tan(math.radians(view.hfov_deg) / 2.0)
    tan_y = math.tan(math.radians(view.vfov_deg) / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pu = (x / z / tan_x + 1.0) / 2.0 * view.width_px
        pv = (1.0 - y / z / tan_y) / 2.0 * view.height_px
    in_front = z > 0.0
    u = np.where(in_front, pu - 0.5, 0.0)
    v = np.where(in_front, pv - 0.5, 0.0)
    return u, v, in_front


def dir_to_view_px_arrays(
    view: ViewSpec, heading_deg, elevation_deg
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project directions into view pixel coordinates.

    Returns (u, v, in_frustum).  in_frustum is False behind the camera
    (angle to the optical axis >= 90 degrees) and outside the frustum
    bounds; boundary directions count as inside.  u, v are only meaningful
    where the depth is positive.
    """
    u, v, in_front = dir_to_view_px_raw(view, heading_deg, elevation_deg)
    pu = u + 0.5
    pv = v + 0.5
    in_frustum = (
        in_front
        & (pu >= 0.0)
        & (pu <= view.width_px)
        & (pv >= 0.0)
        & (pv <= view.height_px)
    )
    return u, v, in_frustum


def angular_offsets(
    center: SphericalDirection, heading_deg, elevation_deg
) -> tuple[np.ndarray, np.ndarray]:
    """Signed (heading, elevation) offsets from a center direction;
    heading offsets wrap into [-180, 180)."""
    dh = (np.asarray(heading_deg, dtype=np.float64) - center.heading_deg + 180.0) % 360.0 - 180.0
    de = np.asarray(elevation_deg, dtype=np.float64) - center.elevation_deg
    return dh, de


def dir_to_view_px(
    view: ViewSpec, direction: SphericalDirection
) -> tuple[float, float, bool]:
    """Inverse of :func:`view_px_to_dir` plus an in-frustum flag."""
    u, v, ok = dir_to_view_px_arrays(view, direction.heading_deg, direction.elevation_deg)
    return float(u), float(v), bool(ok)


def angular_distance_deg(a: SphericalDirection, b: SphericalDirection) -> float:
    """Great-circle angle between two directions, in degrees.

    Uses the chord form 2*asin(|a - b| / 2), which keeps full precision
    for small angles where acos of a dot product does not.
    """
    va = unit_from_angles(a.heading_deg, a.elevation_deg)
    vb = unit_from_angles(b.heading_deg, b.elevation_deg)
    chord = float(np.linalg.norm(va - vb))
    return math.degrees(2.0 * math.asin(min(1.0, chord / 2.0)))


def nearest_view_index(direction: SphericalDirection) -> ViewIndex:
    """The grid cell whose center is angularly nearest to a direction.

    Ties (to 1e-9 degrees) break toward the smaller heading index, then the
    smaller elevation index.
    """
    best: tuple[float, int, int] | None = None
    best_idx: ViewIndex | None = None
    for idx in all_view_indices():
        d = round(angular_distance_deg(direction, idx.center), 9)
        key = (d, idx.heading_index, idx.elevation_index)
        if best is None or key < best:
            best = key
            best_idx = idx
    assert best_idx is not None
    return best_idx
