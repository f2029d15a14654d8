"""Shared fixtures: caption sets, a small traversal config, and backends.

The ``engine_backend`` fixture parametrizes engine-level tests over the
in-process procedural backend and the same backend served over the wire
by the mock HTTP server, so the engine suite proves backend
substitutability as a side effect.
"""

from __future__ import annotations

import numpy as np
import pytest

from panoweave.backends.http import HttpBackend
from panoweave.backends.mock_server import MockServer
from panoweave.backends.procedural import ProceduralBackend
from panoweave.canvas import EquirectCanvas
from panoweave.engine import OutpaintConfig
from panoweave.geometry import ViewGrid, ViewIndex, all_view_indices, dir_to_view_px_raw
from panoweave.hashing import derive_seed


def captions36(tag: str = "fixture") -> dict:
    return {
        idx: f"{tag} room at heading {idx.heading_index * 30} elevation "
        f"{idx.elevation_index * 30}"
        for idx in all_view_indices()
    }


def small_config(seed: int = 7, **overrides) -> OutpaintConfig:
    params = dict(
        seed=seed,
        canvas_width_px=512,
        canvas_height_px=256,
        grid=ViewGrid(60.0, 60.0, 128, 128),
        blend_width_px=8.0,
    )
    params.update(overrides)
    return OutpaintConfig(**params)


def independent_stitch(captions: dict, config: OutpaintConfig, backend) -> EquirectCanvas:
    """The no-outpainting baseline: 36 views generated independently from
    their captions and butted together as disjoint tiles (heading cells
    [30k, 30k+30), elevation cells around -30/0/+30).  The wraparound
    column is a tile boundary, as in a naive strip concatenation."""
    grid = config.grid
    canvas = EquirectCanvas.empty(config.canvas_width_px, config.canvas_height_px)
    images = {
        idx: backend.generate(
            captions[idx],
            derive_seed(config.seed, "independent", idx.heading_index, idx.elevation_index),
            grid.width_px,
            grid.height_px,
        )
        for idx in all_view_indices()
    }
    h, w = canvas.height_px, canvas.width_px
    iy, ix = np.mgrid[0:h, 0:w]
    heading = (ix + 0.5) / w * 360.0
    elevation = 90.0 - (iy + 0.5) / h * 180.0
    band = np.abs(elevation) <= 60.0
    h_cell = (np.floor(heading / 30.0).astype(int)) % 12
    e_cell = np.clip(np.rint(elevation / 30.0).astype(int), -1, 1)
    for idx in all_view_indices():
        cell = band & (h_cell == idx.heading_index) & (e_cell == idx.elevation_index)
        if not cell.any():
            continue
        view = grid.view_spec(idx)
        u, v, _ = dir_to_view_px_raw(view, heading[cell], elevation[cell])
        u = np.clip(u, -0.5, view.width_px - 0.5)
        v = np.clip(v, -0.5, view.height_px - 0.5)
        from panoweave.canvas import _bilinear_sample_image

        canvas.pixels[cell] = np.clip(
            np.rint(_bilinear_sample_image(images[idx], u, v)), 0, 255
        ).astype(np.uint8)
        canvas.coverage[cell] = 1.0
    return canvas


@pytest.fixture(scope="session")
def mock_server():
    with MockServer() as server:
        yield server


@pytest.fixture(scope="session", params=["procedural", "http-mock"])
def engine_backend(request, mock_server):
    if request.param == "procedural":
        return ProceduralBackend()
    return HttpBackend(mock_server.base_url, timeout_s=30.0, retries=1, backoff_s=0.05)
