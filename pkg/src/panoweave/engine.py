"""The recursive panorama-generation procedure.

A panorama starts from a single zero-elevation view generated from its
caption.  The camera then rotates rightward around the full horizontal
ring, then up and down at each heading; every rotated view is extracted
from the canvas (part known, part unknown), the unknown region is
outpainted by the backend conditioned on the caption of the nearest grid
view, and the reply is composited back.  The final ring step overlaps
both its left neighbor and the seed view, so the backend bridges the
wraparound seam.

Per-step seeds derive from hash(config.seed, step index); with the
procedural backend the whole procedure is a pure function of (captions,
config), reproducible bit for bit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from PIL import Image

from panoweave.backends import BackendError, GenerationBackend
from panoweave.canvas import (
    COV_SUFFIX,
    PANO_SUFFIX,
    EquirectCanvas,
    ViewImage,
    composite_view,
    coverage_fraction,
    extract_view,
    load_canvas,
    save_canvas,
    seam_energy,
)
from panoweave.geometry import (
    GRID_ELEVATION_STEP_DEG,
    SphericalDirection,
    ViewGrid,
    ViewIndex,
    ViewSpec,
    all_view_indices,
    nearest_view_index,
)
from panoweave.hashing import config_hash, derive_seed

log = logging.getLogger(__name__)

# Lower than the traversal threshold: grid views at +/-30 elevation touch the
# coverage boundary at +/-60, where bilinear interpolation against the
# uncovered polar rows dips to just under 0.5 even though the sampled values
# are pure real content (coverage-weighted sampling ignores empty neighbors).
DISCRETIZE_THRESHOLD = 0.25

CANVAS_BASENAME = "canvas"
PROVENANCE_NAME = "provenance.json"
DONE_NAME = "DONE"

KIND_SEED = "seed"
KIND_OUTPAINT = "outpaint"


class EngineError(Exception):
    """Raised when the generation procedure cannot satisfy its contract."""


class CaptionsMissingError(EngineError):
    """Raised before any backend call when the 36-view caption set is incomplete."""


class GenerationAborted(EngineError):
    """Backend failure mid-traversal; carries a partial-canvas diagnostic."""

    def __init__(self, step_index: int, cause: Exception, coverage: float):
        super().__init__(
            f"generation aborted at step {step_index}: {cause} "
            f"(whole-sphere coverage so far {coverage:.4f})"
        )
        self.step_index = step_index
        self.cause = cause
        self.coverage = coverage


@dataclass(frozen=True)
class OutpaintConfig:
    """Traversal parameters; rotation steps are fractions of the view fov."""

    p_r: float = 0.5
    p_u: float = 0.5
    p_d: float = 0.5
    seed: int = 0
    coverage_threshold: float = 0.5
    blend_width_px: float = 32.0
    min_known_fraction: float = 0.25
    canvas_width_px: int = 2048
    canvas_height_px: int = 1024
    grid: ViewGrid = field(default_factory=ViewGrid)

    def __post_init__(self) -> None:
        for name in ("p_r", "p_u", "p_d"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        if not 0.0 <= self.min_known_fraction < 1.0:
            raise ValueError(
                f"min_known_fraction must be in [0, 1), got {self.min_known_fraction}"
            )
        if self.canvas_width_px != 2 * self.canvas_height_px:
            raise ValueError("canvas must be 2:1")

    def payload(self) -> dict:
        data = asdict(self)
        data["grid"] = asdict(self.grid)
        return data

    def hash(self) -> str:
        return config_hash(self.payload())


@dataclass(frozen=True)
class TraversalStep:
    view: ViewSpec
    prompt_source: ViewIndex
    kind: str
    known_fraction: float  # planned overlap with already-covered sphere region


@dataclass
class PanoEnvironment:
    scan_id: str
    viewpoint_id: str
    canvas: EquirectCanvas
    view_images: dict[ViewIndex, ViewImage]
    provenance: dict


def grid_band_deg(grid: ViewGrid) -> float:
    """Highest |elevation| the 36-view grid can cover."""
    return GRID_ELEVATION_STEP_DEG + grid.vfov_deg / 2.0


class ConfigRejected(ValueError):
    """The traversal cannot honor min_known_fraction with these parameters."""


def plan_traversal(config: OutpaintConfig) -> list[TraversalStep]:
    """The ordered steps of the recursive traversal.

    Step 0 seeds at (heading 0, elevation 0); the ring then advances by
    p_r * hfov per step through every multiple below 360 (the final step
    overlaps its left neighbor and the seed, closing the seam); one up and
    one down step follow per ring heading.  Every non-seed step must
    already overlap covered canvas by at least min_known_fraction.
    """
    grid = config.grid
    hfov, vfov = grid.hfov_deg, grid.vfov_deg

    def make_view(heading: float, elevation: float) -> ViewSpec:
        return ViewSpec(
            center=SphericalDirection(heading, elevation),
            hfov_deg=hfov,
            vfov_deg=vfov,
            width_px=grid.width_px,
            height_px=grid.height_px,
        )

    steps = [
        TraversalStep(
            view=make_view(0.0, 0.0),
            prompt_source=ViewIndex(0, 0),
            kind=KIND_SEED,
            known_fraction=0.0,
        )
    ]

    # horizontal ring at zero elevation
    ring_step_deg = config.p_r * hfov
    ring_headings = []
    h = ring_step_deg
    while h < 360.0 - 1e-9:
        ring_headings.append(h)
        h += ring_step_deg

    # covered arc in unwrapped heading coordinates: [-hfov/2, right_edge],
    # which wraps onto the seed's left edge at 360 - hfov/2
    right_edge = hfov / 2.0
    seed_left_edge = 360.0 - hfov / 2.0
    for heading in ring_headings:
        left = heading - hfov / 2.0
        right = heading + hfov / 2.0
        known_span = max(0.0, min(right_edge, right) - left)
        known_span += max(0.0, right - max(seed_left_edge, left))  # wrap onto seed
        fraction = min(1.0, known_span / hfov)
        if fraction < config.min_known_fraction:
            raise ConfigRejected(
                f"ring step at heading {heading:.1f} would keep only "
                f"{fraction:.2f} of the view known "
                f"(< min_known_fraction {config.min_known_fraction}); reduce p_r"
            )
        new_lo = max(left, right_edge)
        new_hi = min(right, seed_left_edge)
        if new_hi > new_lo + 1e-9:
            new_centroid = SphericalDirection((new_lo + new_hi) / 2.0, 0.0)
        else:
            new_centroid = SphericalDirection(heading, 0.0)  # closure step
        steps.append(
            TraversalStep(
                view=make_view(heading, 0.0),
                prompt_source=nearest_view_index(new_centroid),
                kind=KIND_OUTPAINT,
                known_fraction=fraction,
            )
        )
        right_edge = max(right_edge, right)

    if right_edge - (-hfov / 2.0) < 360.0 - 1e-9:
        raise ConfigRejected("ring does not close; increase p_r or hfov")

    # vertical passes: one up and one down step per covered heading; the
    # same unwrapped-interval bookkeeping as the ring tracks which headings
    # already carry the new elevation band
    all_headings = [0.0] + ring_headings
    elev_up = config.p_u * vfov
    elev_down = -config.p_d * vfov
    band = grid_band_deg(config.grid)
    for elev, p in ((elev_up, config.p_u), (elev_down, config.p_d)):
        if abs(elev) + vfov / 2.0 < band - 1e-9:
            raise ConfigRejected(
                f"vertical step to elevation {elev:.1f} cannot reach the grid band "
                f"(+/-{band:.0f} deg); increase the step fraction"
            )
        base_fraction = min(1.0, (vfov - abs(elev)) / vfov)
        if base_fraction < config.min_known_fraction:
            raise ConfigRejected(
                f"vertical step to elevation {elev:.1f} would keep only "
                f"{base_fraction:.2f} of the view known; reduce the step fraction"
            )
        lo = vfov / 2.0 if elev > 0 else elev - vfov / 2.0
        hi = elev + vfov / 2.0 if elev > 0 else -vfov / 2.0
        phase_right = None
        phase_wrap = None
        for heading in all_headings:
            left = heading - hfov / 2.0
            right = heading + hfov / 2.0
            if phase_right is None:
                new_width = hfov
                centroid_h = heading
                phase_right = right
                phase_wrap = left + 360.0
            else:
                new_lo = max(left, phase_right)
                new_hi = min(right, phase_wrap)
                new_width = max(0.0, new_hi - new_lo)
                centroid_h = (new_lo + new_hi) / 2.0 if new_width > 1e-9 else heading
                phase_right = max(phase_right, right)
            fraction = min(1.0, 1.0 - p * new_width / hfov)
            centroid_e = (lo + hi) / 2.0 if new_width > 1e-9 else elev
            steps.append(
                TraversalStep(
                    view=make_view(heading, elev),
                    prompt_source=nearest_view_index(
                        SphericalDirection(centroid_h, centroid_e)
                    ),
                    kind=KIND_OUTPAINT,
                    known_fraction=fraction,
                )
            )
    return steps


StepCallback = Callable[[int, TraversalStep, EquirectCanvas], None]


def generate_panorama(
    scan_id: str,
    viewpoint_id: str,
    captions: Mapping[ViewIndex, str],
    config: OutpaintConfig,
    backend: GenerationBackend,
    on_step: StepCallback | None = None,
) -> PanoEnvironment:
    """Run the full traversal and return a finished panorama environment.

    ``captions`` must cover all 36 grid cells (checked before any backend
    call).  ``on_step`` is invoked after each composite with the step index,
    the step, and the live canvas (read-only use).
    """
    missing = [idx for idx in all_view_indices() if idx not in captions]
    if missing:
        raise CaptionsMissingError(
            f"captions missing for {len(missing)} of 36 views, e.g. {missing[0]}"
        )

    steps = plan_traversal(config)
    canvas = EquirectCanvas.empty(config.canvas_width_px, config.canvas_height_px)
    step_log: list[dict] = []

    for i, step in enumerate(steps):
        prompt = captions[step.prompt_source]
        step_seed = derive_seed(config.seed, i)
        try:
            if step.kind == KIND_SEED:
                reply = backend.generate(
                    prompt, step_seed, step.view.width_px, step.view.height_px
                )
            else:
                partial = extract_view(canvas, step.view, config.coverage_threshold)
                reply = backend.outpaint(
                    partial.pixels, ~partial.validity, prompt, step_seed
                )
        except BackendError as exc:
            raise GenerationAborted(i, exc, coverage_fraction(canvas)) from exc
        if reply.shape[:2] != (step.view.height_px, step.view.width_px):
            raise GenerationAborted(
                i,
                ValueError(f"backend returned shape {reply.shape}"),
                coverage_fraction(canvas),
            )
        composite_view(canvas, step.view, ViewImage.full(reply), config.blend_width_px)
        step_log.append(
            {
                "index": i,
                "kind": step.kind,
                "heading_deg": step.view.center.heading_deg,
                "elevation_deg": step.view.center.elevation_deg,
                "prompt_source": [
                    step.prompt_source.heading_index,
                    step.prompt_source.elevation_index,
                ],
                "prompt": prompt,
                "seed": step_seed,
            }
        )
        if on_step is not None:
            on_step(i, step, canvas)

    band = grid_band_deg(config.grid)
    band_cov = coverage_fraction(canvas, (-band, band))
    if band_cov != 1.0:
        raise EngineError(
            f"traversal finished with band coverage {band_cov:.6f} != 1.0 "
            f"over (-{band:.0f}, {band:.0f}) deg"
        )

    view_images = discretize_canvas(canvas, config.grid)
    provenance = {
        "scan_id": scan_id,
        "viewpoint_id": viewpoint_id,
        "backend": backend.identity,
        "config_hash": config.hash(),
        "config": config.payload(),
        "steps": step_log,
        "coverage_band": band_cov,
        "coverage_sphere": coverage_fraction(canvas),
        "seam_energy": seam_energy(canvas),
    }
    return PanoEnvironment(
        scan_id=scan_id,
        viewpoint_id=viewpoint_id,
        canvas=canvas,
        view_images=view_images,
        provenance=provenance,
    )


def discretize_canvas(
    canvas: EquirectCanvas, grid: ViewGrid
) -> dict[ViewIndex, ViewImage]:
    """Extract the 36 grid views; raises if any view has invalid pixels."""
    views: dict[ViewIndex, ViewImage] = {}
    for idx in all_view_indices():
        img = extract_view(canvas, grid.view_spec(idx), DISCRETIZE_THRESHOLD)
        if not img.validity.all():
            raise EngineError(
                f"grid view {idx} has {int((~img.validity).sum())} invalid pixels; "
                "canvas does not satisfy the coverage invariant"
            )
        views[idx] = img
    return views


def discretize(env: PanoEnvironment, grid: ViewGrid | None = None) -> dict[ViewIndex, ViewImage]:
    """The 36 per-view images of a finished panorama."""
    if grid is None:
        grid_payload = env.provenance.get("config", {}).get("grid")
        grid = ViewGrid(**grid_payload) if grid_payload else ViewGrid()
    return discretize_canvas(env.canvas, grid)


# --- persistence ---------------------------------------------------------------


def view_filename(idx: ViewIndex) -> str:
    return f"view_{idx.heading_index:02d}_{idx.elevation_index}.png"


def save_environment(env: PanoEnvironment, env_dir: str | Path) -> Path:
    """Write canvas, coverage sidecar, 36 view images, provenance and the
    DONE sentinel (written last; its presence marks a complete output)."""
    directory = Path(env_dir)
    directory.mkdir(parents=True, exist_ok=True)
    save_canvas(env.canvas, directory / CANVAS_BASENAME)
    for idx, img in env.view_images.items():
        Image.fromarray(img.pixels, mode="RGB").save(directory / view_filename(idx), format="PNG")
    provenance_text = json.dumps(env.provenance, sort_keys=True, indent=2) + "\n"
    (directory / PROVENANCE_NAME).write_text(provenance_text)
    (directory / DONE_NAME).write_text(env.provenance.get("config_hash", "") + "\n")
    return directory


def validate_environment(env_dir: str | Path) -> list[str]:
    """Problems that disqualify a directory as a finished environment."""
    directory = Path(env_dir)
    problems = []
    for name in (
        CANVAS_BASENAME + PANO_SUFFIX,
        CANVAS_BASENAME + COV_SUFFIX,
        PROVENANCE_NAME,
        DONE_NAME,
    ):
        if not (directory / name).exists():
            problems.append(f"missing {name}")
    for idx in all_view_indices():
        if not (directory / view_filename(idx)).exists():
            problems.append(f"missing {view_filename(idx)}")
    if problems:
        return problems
    try:
        canvas = load_canvas(directory / CANVAS_BASENAME)
    except Exception as exc:
        return [f"unreadable canvas: {exc}"]
    provenance = json.loads((directory / PROVENANCE_NAME).read_text())
    grid_payload = provenance.get("config", {}).get("grid")
    grid = ViewGrid(**grid_payload) if grid_payload else ViewGrid()
    band = grid_band_deg(grid)
    cov = coverage_fraction(canvas, (-band, band))
    if cov != 1.0:
        problems.append(f"band coverage {cov:.6f} != 1.0")
    return problems


def load_environment(env_dir: str | Path) -> PanoEnvironment:
    """Load a saved environment; validates the coverage invariant."""
    directory = Path(env_dir)
    problems = validate_environment(directory)
    if problems:
        raise EngineError(f"{directory} is not a valid environment: {problems}")
    canvas = load_canvas(directory / CANVAS_BASENAME)
    provenance = json.loads((directory / PROVENANCE_NAME).read_text())
    views = {
        idx: ViewImage.full(
            np.asarray(Image.open(directory / view_filename(idx)).convert("RGB")).copy()
        )
        for idx in all_view_indices()
    }
    return PanoEnvironment(
        scan_id=provenance.get("scan_id", ""),
        viewpoint_id=provenance.get("viewpoint_id", ""),
        canvas=canvas,
        view_images=views,
        provenance=provenance,
    )
