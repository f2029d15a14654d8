"""Panoweave: caption-conditioned 360-degree panorama synthesis and
trajectory-dataset observation augmentation.

The library is organized around four layers:

* :mod:`panoweave.geometry` -- pure spherical / gnomonic projection math.
* :mod:`panoweave.canvas` -- the equirectangular canvas with coverage
  tracking, view extraction and mask-aware compositing.
* :mod:`panoweave.backends` -- the image-generation boundary (deterministic
  procedural backend, HTTP client, mock server).
* :mod:`panoweave.engine` -- the recursive outpainting traversal that turns
  36 per-view captions into one coherent panorama.

Dataset-side utilities live in :mod:`panoweave.captions` (per-view caption
records) and :mod:`panoweave.augment` (observation replacement for
navigation trajectories).
"""

__version__ = "0.1.0"

from panoweave.geometry import SphericalDirection, ViewGrid, ViewIndex, ViewSpec

__all__ = [
    "SphericalDirection",
    "ViewGrid",
    "ViewIndex",
    "ViewSpec",
    "__version__",
]
