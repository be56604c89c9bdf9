from __future__ import annotations

import numpy as np
import pytest

from wemeval.features import EmbedderSpec, perceptual_distance
from wemeval.flow import estimate_homography, render_camera_flow, reprojection_errors
from wemeval.microsim import (
    CameraMotion,
    ChunkSpec,
    ObjectSpec,
    SimConfig,
    SimConfigError,
    default_catalog,
    generate_trajectory,
    matches_from_homography,
    mixed_fixture_config,
    perturb_rollout,
)
from wemeval.rollout import PhaseLabel, validate_trajectory


def _nav_config(seed: int = 0, dx: float = 1.0, dy: float = 0.0) -> SimConfig:
    return SimConfig(
        seed=seed, width=32, height=32,
        chunks=(ChunkSpec(PhaseLabel.NAV, 4, camera=CameraMotion("translate", dx=dx, dy=dy)),),
    )


def _manip_config(seed: int = 0, motion=(0.0, 1.0)) -> SimConfig:
    return SimConfig(
        seed=seed, width=32, height=32,
        chunks=(ChunkSpec(PhaseLabel.MANIP, 4, object_motion=motion),),
        objects=(ObjectSpec("disk", 3.0, 0.9, (14.0, 12.0)),),
    )


class TestGeneration:
    def test_nav_translation_flow_is_constant_and_masks_world_only(self):
        traj, gt = generate_trajectory(_nav_config())
        glyph = gt.masks[0][0].data.astype(bool)  # nav masks hold only the gripper glyph
        for flow in traj.chunks[0].flows:
            assert np.allclose(flow.u, 1.0) and np.allclose(flow.v, 0.0)
        for mask in traj.chunks[0].masks:
            assert np.array_equal(mask.data.astype(bool), glyph)
        assert glyph.any() and not glyph.all()

    def test_manip_residual_flow_matches_object_support(self):
        traj, gt = generate_trajectory(_manip_config())
        for obj_flow, mask in zip(gt.object_flows[0], gt.masks[0][:-1]):
            support = (np.hypot(obj_flow.u, obj_flow.v) > 0).astype(bool)
            assert support.any()
            assert np.allclose(obj_flow.v[support], 1.0)
            assert np.allclose(obj_flow.u[support], 0.0)
            assert (mask.data.astype(bool) | ~support).all()  # support subset of ego mask

    def test_camera_flow_consistent_with_recorded_homography(self):
        traj, gt = generate_trajectory(mixed_fixture_config(seed=3, size=32, t=4))
        for ci in range(len(traj.chunks)):
            for cam, hom in zip(gt.camera_flows[ci], gt.homographies[ci]):
                rendered = render_camera_flow(hom, 32, 32)
                assert np.abs(rendered.u - cam.u.astype(np.float64)).max() <= 1e-6
                assert np.abs(rendered.v - cam.v.astype(np.float64)).max() <= 1e-6

    def test_full_flow_is_exact_sum_of_components(self):
        traj, gt = generate_trajectory(mixed_fixture_config(seed=4, size=32, t=4))
        for ci, chunk in enumerate(traj.chunks):
            for full, cam, obj in zip(chunk.flows, gt.camera_flows[ci], gt.object_flows[ci]):
                assert np.array_equal(
                    full.u.astype(np.float64), cam.u.astype(np.float64) + obj.u.astype(np.float64)
                )
                assert np.array_equal(
                    full.v.astype(np.float64), cam.v.astype(np.float64) + obj.v.astype(np.float64)
                )

    def test_same_seed_is_bit_identical(self):
        a, _ = generate_trajectory(mixed_fixture_config(seed=9, size=32, t=3))
        b, _ = generate_trajectory(mixed_fixture_config(seed=9, size=32, t=3))
        for ca, cb in zip(a.chunks, b.chunks):
            for fa, fb in zip(ca.frames, cb.frames):
                assert np.array_equal(fa.data, fb.data)
            for la, lb in zip(ca.flows, cb.flows):
                assert np.array_equal(la.u, lb.u) and np.array_equal(la.v, lb.v)

    def test_generated_trajectories_validate(self):
        traj, _ = generate_trajectory(mixed_fixture_config(seed=11, size=32, t=3))
        assert validate_trajectory(traj).is_valid()

    def test_homography_recoverable_from_fixture(self):
        _, gt = generate_trajectory(_nav_config(seed=5, dx=1.0, dy=-0.5))
        hom = gt.homographies[0][0]
        matches = matches_from_homography(hom, 32, 32, 30, seed=6)
        recovered, _ = estimate_homography(matches, threshold=1.0, iterations=300, seed=7)
        assert reprojection_errors(recovered, matches).max() <= 1e-4

    def test_object_leaving_bounds_is_config_error(self):
        cfg = SimConfig(
            seed=0, width=32, height=32,
            chunks=(ChunkSpec(PhaseLabel.MANIP, 8, object_motion=(4.0, 0.0)),),
            objects=(ObjectSpec("disk", 3.0, 0.9, (20.0, 12.0)),),
        )
        with pytest.raises(SimConfigError, match="leaves frame bounds"):
            generate_trajectory(cfg)

    def test_default_catalog_covers_all_phase_mixes(self):
        entries = default_catalog(size=32, t=4)
        assert len(entries) >= 20
        kinds = set()
        for _, cfg in entries:
            phases = {c.phase for c in cfg.chunks}
            if phases == {PhaseLabel.NAV}:
                kinds.add("nav")
            elif phases == {PhaseLabel.MANIP}:
                kinds.add("manip")
            else:
                kinds.add("mixed")
            generate_trajectory(cfg)  # every catalog entry must render
        assert kinds == {"nav", "manip", "mixed"}


@pytest.fixture(scope="module")
def fixture():
    return generate_trajectory(mixed_fixture_config(seed=21, size=32, t=4))


class TestPerturbations:
    def test_zero_magnitude_is_identity(self, fixture):
        traj, gt = fixture
        for kind in ("frame-noise", "chunk-shuffle", "phase-swap", "boundary-smooth"):
            assert perturb_rollout(traj, gt, kind, 0.0, seed=1) is traj

    def test_unknown_kind_rejected(self, fixture):
        traj, gt = fixture
        with pytest.raises(ValueError, match="unknown perturbation"):
            perturb_rollout(traj, gt, "melt", 1.0, seed=1)

    def test_chunk_shuffle_is_a_derangement(self, fixture):
        traj, gt = fixture
        shuffled = perturb_rollout(traj, gt, "chunk-shuffle", 1.0, seed=3)
        originals = [c.instruction for c in traj.chunks]
        moved = [c.instruction for c in shuffled.chunks]
        assert sorted(originals) == sorted(moved)
        assert all(a != b for a, b in zip(originals, moved))

    def test_frame_noise_perturbs_frames_but_keeps_flows(self, fixture):
        traj, gt = fixture
        noisy = perturb_rollout(traj, gt, "frame-noise", 0.1, seed=4)
        assert not np.array_equal(noisy.chunks[0].frames[0].data, traj.chunks[0].frames[0].data)
        assert noisy.chunks[0].flows is traj.chunks[0].flows
        assert validate_trajectory(noisy).is_valid()

    def test_phase_swap_flips_exactly_one_chunk(self, fixture):
        traj, gt = fixture
        swapped = perturb_rollout(traj, gt, "phase-swap", 1.0, seed=5)
        diffs = [a.phase != b.phase for a, b in zip(traj.chunks, swapped.chunks)]
        assert sum(diffs) == 1

    def test_boundary_smooth_shrinks_the_appearance_gap(self):
        traj, gt = generate_trajectory(mixed_fixture_config(seed=22, size=32, t=4))
        spec = EmbedderSpec()
        smoothed = perturb_rollout(traj, gt, "boundary-smooth", 1.0, seed=6)
        changed = [
            i for i in range(len(traj.chunks))
            if not np.array_equal(smoothed.chunks[i].frames[-1].data, traj.chunks[i].frames[-1].data)
        ]
        assert len(changed) == 1
        k = changed[0]
        before = perceptual_distance(traj.chunks[k].frames[-1], traj.chunks[k + 1].frames[0], spec)
        after = perceptual_distance(
            smoothed.chunks[k].frames[-1], smoothed.chunks[k + 1].frames[0], spec
        )
        assert after < before
