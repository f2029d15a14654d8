"""Tests for the recursive outpainting engine.

Runs against both the in-process procedural backend and the mock HTTP
server (see conftest.engine_backend), which proves the two are
interchangeable behind the backend contract.
"""

from __future__ import annotations

import json

import numpy as np
import pytest
from scipy import ndimage

from conftest import captions36, small_config
from panoweave.backends import BackendUnavailable
from panoweave.backends.procedural import ProceduralBackend
from panoweave.canvas import coverage_fraction, seam_energy
from panoweave.engine import (
    CaptionsMissingError,
    ConfigRejected,
    GenerationAborted,
    OutpaintConfig,
    discretize,
    generate_panorama,
    load_environment,
    plan_traversal,
    save_environment,
    validate_environment,
    view_filename,
)
from panoweave.geometry import (
    SphericalDirection,
    ViewIndex,
    all_view_indices,
    angular_distance_deg,
    dir_to_view_px_arrays,
    view_px_to_dir_arrays,
)
from panoweave.hashing import derive_seed


class TestPlanTraversal:
    def test_default_plan_is_36_steps(self):
        steps = plan_traversal(OutpaintConfig())
        assert len(steps) == 36
        assert steps[0].kind == "seed"
        assert steps[0].view.center.heading_deg == 0.0
        assert steps[0].view.center.elevation_deg == 0.0
        assert all(s.kind == "outpaint" for s in steps[1:])
        ring = steps[1:12]
        assert [s.view.center.heading_deg for s in ring] == [30.0 * k for k in range(1, 12)]
        assert all(s.view.center.elevation_deg == 0.0 for s in ring)
        ups = steps[12:24]
        downs = steps[24:36]
        assert all(s.view.center.elevation_deg == 30.0 for s in ups)
        assert all(s.view.center.elevation_deg == -30.0 for s in downs)
        assert sorted(s.view.center.heading_deg for s in ups) == [30.0 * k for k in range(12)]

    def test_single_seed_step_at_zero_elevation(self):
        steps = plan_traversal(OutpaintConfig())
        seeds = [s for s in steps if s.kind == "seed"]
        assert len(seeds) == 1
        assert seeds[0].view.center.elevation_deg == 0.0

    def test_known_fractions_meet_minimum(self):
        config = OutpaintConfig()
        steps = plan_traversal(config)
        for s in steps[1:]:
            assert s.known_fraction >= config.min_known_fraction

    def test_full_step_rejected(self):
        with pytest.raises(ConfigRejected):
            plan_traversal(OutpaintConfig(p_r=1.0))

    def test_vertical_step_too_large_rejected(self):
        with pytest.raises(ConfigRejected):
            plan_traversal(OutpaintConfig(p_u=1.0))

    def test_vertical_step_too_small_rejected(self):
        # 0.4 * 60 = 24 deg: the up view tops out at 54, short of the 60 band
        with pytest.raises(ConfigRejected):
            plan_traversal(OutpaintConfig(p_u=0.4))

    def test_non_divisible_ring_step(self):
        config = OutpaintConfig(p_r=0.45)
        steps = plan_traversal(config)
        ring = [s for s in steps if s.view.center.elevation_deg == 0.0]
        assert len(ring) == 1 + 13  # seed + ceil-ish multiples of 27 below 360
        for s in ring[1:]:
            assert s.known_fraction >= config.min_known_fraction

    def test_prompt_sources_match_brute_force_oracle(self):
        """Recompute each step's newly-exposed centroid independently and
        scan all 36 grid centers for the nearest."""
        config = OutpaintConfig()
        steps = plan_traversal(config)
        hfov = config.grid.hfov_deg

        def brute_nearest(direction):
            keyed = [
                (
                    round(angular_distance_deg(direction, idx.center), 9),
                    idx.heading_index,
                    idx.elevation_index,
                )
                for idx in all_view_indices()
            ]
            k = min(range(36), key=lambda i: keyed[i])
            return all_view_indices()[k]

        # ring: strip newly exposed by step k is [30k, 30k+30] capped by the
        # seed's left edge at 330
        covered_right = hfov / 2
        for k, step in enumerate(steps[1:12], start=1):
            h = 30.0 * k
            new_lo, new_hi = max(h - 30, covered_right), min(h + 30, 330.0)
            if new_hi > new_lo:
                centroid = SphericalDirection((new_lo + new_hi) / 2, 0.0)
            else:
                centroid = SphericalDirection(h, 0.0)
            assert step.prompt_source == brute_nearest(centroid)
            covered_right = max(covered_right, h + 30)
        for step in steps[12:24]:
            centroid = SphericalDirection(step.view.center.heading_deg, 45.0)
            assert step.prompt_source == brute_nearest(centroid)
        for step in steps[24:36]:
            centroid = SphericalDirection(step.view.center.heading_deg, -45.0)
            assert step.prompt_source == brute_nearest(centroid)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OutpaintConfig(p_r=0.0)
        with pytest.raises(ValueError):
            OutpaintConfig(min_known_fraction=1.0)
        with pytest.raises(ValueError):
            OutpaintConfig(canvas_width_px=100, canvas_height_px=100)


class _CountingBackend(ProceduralBackend):
    def __init__(self, fail_at: int | None = None):
        self.calls = 0
        self.fail_at = fail_at

    def _tick(self):
        self.calls += 1
        if self.fail_at is not None and self.calls >= self.fail_at:
            raise BackendUnavailable("synthetic outage")

    def generate(self, *args, **kwargs):
        self._tick()
        return super().generate(*args, **kwargs)

    def outpaint(self, *args, **kwargs):
        self._tick()
        return super().outpaint(*args, **kwargs)


@pytest.fixture(scope="session")
def env(engine_backend):
    return generate_panorama("scanA", "vp1", captions36(), small_config(), engine_backend)


@pytest.fixture(scope="session")
def procedural_env():
    return generate_panorama(
        "scanA", "vp1", captions36(), small_config(), ProceduralBackend()
    )


class TestGeneratePanorama:
    def test_band_coverage_is_exactly_one(self, env):
        assert coverage_fraction(env.canvas, (-60.0, 60.0)) == 1.0

    def test_sphere_coverage_near_sin60(self, env):
        assert 0.85 <= coverage_fraction(env.canvas) <= 0.88

    def test_deterministic(self, engine_backend):
        a = generate_panorama("scanA", "vp1", captions36(), small_config(), engine_backend)
        b = generate_panorama("scanA", "vp1", captions36(), small_config(), engine_backend)
        assert np.array_equal(a.canvas.pixels, b.canvas.pixels)
        assert np.array_equal(a.canvas.coverage, b.canvas.coverage)
        assert json.dumps(a.provenance, sort_keys=True) == json.dumps(
            b.provenance, sort_keys=True
        )

    def test_matches_in_process_procedural(self, env):
        """The wire transport is invisible: HTTP-mock output equals the
        in-process procedural output bit for bit."""
        direct = generate_panorama(
            "scanA", "vp1", captions36(), small_config(), ProceduralBackend()
        )
        assert np.array_equal(env.canvas.pixels, direct.canvas.pixels)

    def test_missing_caption_aborts_before_backend_calls(self):
        captions = captions36()
        del captions[ViewIndex(5, 1)]
        backend = _CountingBackend()
        with pytest.raises(CaptionsMissingError):
            generate_panorama("scanA", "vp1", captions, small_config(), backend)
        assert backend.calls == 0

    def test_backend_failure_aborts_with_diagnostic(self):
        backend = _CountingBackend(fail_at=5)
        with pytest.raises(GenerationAborted) as exc_info:
            generate_panorama("scanA", "vp1", captions36(), small_config(), backend)
        assert exc_info.value.step_index == 4
        assert 0.0 < exc_info.value.coverage < 1.0

    def test_wrong_reply_shape_aborts(self):
        class WrongSize(ProceduralBackend):
            def outpaint(self, image, generate_mask, prompt, seed):
                return super().outpaint(image, generate_mask, prompt, seed)[:-2]

        with pytest.raises(GenerationAborted):
            generate_panorama("scanA", "vp1", captions36(), small_config(), WrongSize())

    def test_provenance_records_all_steps(self, env):
        steps = env.provenance["steps"]
        assert len(steps) == 36
        assert steps[0]["kind"] == "seed"
        assert all("prompt" in s and "seed" in s for s in steps)
        assert env.provenance["config_hash"] == small_config().hash()


class TestMaskPreservationAndProgress:
    def test_mask_preservation_all_steps(self):
        """Previously covered pixels outside the feather band are
        bit-identical before and after every traversal step."""
        config = small_config()
        snapshots = []

        def on_step(i, step, canvas):
            snapshots.append((canvas.pixels.copy(), canvas.coverage.copy()))

        generate_panorama(
            "scanA", "vp1", captions36(), config, ProceduralBackend(), on_step=on_step
        )
        assert len(snapshots) == 36
        for i in range(1, len(snapshots)):
            prev_pix, prev_cov = snapshots[i - 1]
            cur_pix, cur_cov = snapshots[i]
            was_covered = prev_cov >= 0.999
            newly = (cur_cov >= 0.999) & ~was_covered
            if newly.any():
                dist = ndimage.distance_transform_edt(~newly)
            else:
                dist = np.full(prev_cov.shape, np.inf)
            safe = was_covered & (dist >= config.blend_width_px)
            assert np.array_equal(cur_pix[safe], prev_pix[safe]), f"step {i}"

    def test_progress_monotone_and_strict_until_band_full(self):
        config = small_config()
        fractions = []

        def on_step(i, step, canvas):
            fractions.append(coverage_fraction(canvas))

        generate_panorama(
            "scanA", "vp1", captions36(), config, ProceduralBackend(), on_step=on_step
        )
        steps = plan_traversal(config)
        for i in range(1, len(fractions)):
            assert fractions[i] >= fractions[i - 1]
            if steps[i].known_fraction < 1.0:
                assert fractions[i] > fractions[i - 1], f"step {i} made no progress"
        assert fractions[-1] == pytest.approx(coverage_fraction_limit(config), abs=0.01)


def coverage_fraction_limit(config) -> float:
    """Analytic sphere coverage of the +/-60 degree band."""
    return float(np.sin(np.radians(60.0)))


class TestDiscretize:
    def test_36_views_at_grid_size(self, procedural_env):
        views = discretize(procedural_env)
        assert len(views) == 36
        for img in views.values():
            assert img.pixels.shape == (128, 128, 3)
            assert img.validity.all()

    def test_front_view_matches_seed_image(self, procedural_env):
        config = small_config()
        seed_img = ProceduralBackend().generate(
            captions36()[ViewIndex(0, 0)], derive_seed(config.seed, 0), 128, 128
        )
        front = procedural_env.view_images[ViewIndex(0, 0)]
        err = np.abs(front.pixels.astype(int) - seed_img.astype(int))
        assert ((err <= 2).all(axis=2)).mean() >= 0.99

    def test_adjacent_views_agree_on_overlap(self, procedural_env):
        """Sample the same sphere directions through two adjacent views;
        both are resamples of the same canvas region."""
        config = small_config()
        grid = config.grid
        for h in (0, 5):
            a_idx, b_idx = ViewIndex(h, 0), ViewIndex(h + 1, 0)
            view_a = grid.view_spec(a_idx)
            view_b = grid.view_spec(b_idx)
            img_a = procedural_env.view_images[a_idx].pixels
            img_b = procedural_env.view_images[b_idx].pixels
            # directions of view A's right-half pixel centers
            uu, vv = np.meshgrid(
                np.arange(grid.width_px // 2 + 8, grid.width_px - 1, dtype=float),
                np.arange(4, grid.height_px - 4, dtype=float),
            )
            heading, elevation = view_px_to_dir_arrays(view_a, uu, vv)
            ub, vb, ok = dir_to_view_px_arrays(view_b, heading, elevation)
            assert ok.mean() > 0.9
            from panoweave.canvas import _bilinear_sample_image

            sampled_b = _bilinear_sample_image(img_b, ub[ok], vb[ok])
            vals_a = img_a[vv[ok].astype(int), uu[ok].astype(int)].astype(float)
            close = (np.abs(sampled_b - vals_a) <= 4.0).all(axis=-1)
            assert close.mean() >= 0.95


class TestCoherence:
    def test_recursive_beats_independent_stitch(self):
        from conftest import independent_stitch

        config = small_config(seed=21)
        captions = captions36("coherence")
        backend = ProceduralBackend()
        env = generate_panorama("s", "v", captions, config, backend)
        recursive = seam_energy(env.canvas)
        independent = seam_energy(independent_stitch(captions, config, backend))
        assert recursive is not None and independent is not None
        assert recursive <= 0.5 * independent


class TestPersistence:
    def test_save_validate_load_round_trip(self, tmp_path):
        env = generate_panorama(
            "scanA", "vp1", captions36(), small_config(), ProceduralBackend()
        )
        out = save_environment(env, tmp_path / "scanA" / "vp1")
        assert validate_environment(out) == []
        loaded = load_environment(out)
        assert np.array_equal(loaded.canvas.pixels, env.canvas.pixels)
        assert loaded.scan_id == "scanA"
        assert loaded.viewpoint_id == "vp1"
        for idx in all_view_indices():
            assert np.array_equal(
                loaded.view_images[idx].pixels, env.view_images[idx].pixels
            )

    def test_save_twice_is_byte_identical(self, tmp_path):
        env = generate_panorama(
            "scanA", "vp1", captions36(), small_config(), ProceduralBackend()
        )
        a = save_environment(env, tmp_path / "a")
        b = save_environment(env, tmp_path / "b")
        for file_a in sorted(a.iterdir()):
            file_b = b / file_a.name
            assert file_a.read_bytes() == file_b.read_bytes(), file_a.name

    def test_missing_sidecar_detected(self, tmp_path):
        env = generate_panorama(
            "scanA", "vp1", captions36(), small_config(), ProceduralBackend()
        )
        out = save_environment(env, tmp_path / "broken")
        (out / "canvas.cov.png").unlink()
        problems = validate_environment(out)
        assert any("cov.png" in p for p in problems)

    def test_view_filenames(self):
        assert view_filename(ViewIndex(3, -1)) == "view_03_-1.png"
        assert view_filename(ViewIndex(11, 1)) == "view_11_1.png"
