from __future__ import annotations

import numpy as np
import pytest

from wemeval.metrics import MetricConfig
from wemeval.microsim import (
    CameraMotion,
    ChunkSpec,
    ObjectSpec,
    SimConfig,
    SimConfigError,
    generate_trajectory,
    mixed_fixture_config,
    perturb_rollout,
)
from wemeval.rollout import PhaseLabel


def small_random_config(rng: np.random.Generator, size: int = 32) -> SimConfig:
    """Random small fixture config: K <= 4 chunks, T <= 6 frames, mixed motions."""
    k = int(rng.integers(1, 5))
    chunks = []
    for _ in range(k):
        t = int(rng.integers(2, 7))
        if rng.random() < 0.5:
            motion = CameraMotion(
                kind=str(rng.choice(["translate", "rotate", "zoom"])),
                dx=float(rng.uniform(-1.0, 1.0)),
                dy=float(rng.uniform(-1.0, 1.0)),
                degrees=float(rng.uniform(-2.0, 2.0)),
                factor=float(rng.uniform(0.99, 1.01)),
            )
            chunks.append(ChunkSpec(PhaseLabel.NAV, t, camera=motion))
        else:
            motion = (float(rng.uniform(-1.0, 1.0)), float(rng.uniform(-1.0, 1.0)))
            chunks.append(ChunkSpec(PhaseLabel.MANIP, t, object_motion=motion))
    return SimConfig(
        seed=int(rng.integers(0, 2**31)),
        width=size,
        height=size,
        chunks=tuple(chunks),
        objects=(
            ObjectSpec("disk", size / 10.0, 0.85, (size * 0.45, size * 0.4)),
            ObjectSpec("square", size / 14.0, 0.1, (size * 0.72, size * 0.3)),
        ),
        ego_object=0,
    )


def random_fixture(rng: np.random.Generator, size: int = 32):
    """Generate from a random config, resampling when motions leave the frame."""
    while True:
        try:
            return generate_trajectory(small_random_config(rng, size=size))
        except SimConfigError:
            continue


def random_metric_pair(rng: np.random.Generator, size: int = 32):
    """A (gen, gt) pair suitable for every metric precondition except phase mix."""
    gt, ground = random_fixture(rng, size=size)
    choice = rng.random()
    if choice < 0.3:
        gen = perturb_rollout(gt, ground, "frame-noise", float(rng.uniform(0.02, 0.2)),
                              seed=int(rng.integers(0, 2**31)))
    elif choice < 0.5 and len(gt.chunks) >= 2:
        gen = perturb_rollout(gt, ground, "chunk-shuffle", 1.0, seed=int(rng.integers(0, 2**31)))
    elif choice < 0.7 and len(gt.chunks) >= 2:
        gen = perturb_rollout(gt, ground, "boundary-smooth", float(rng.uniform(0.3, 1.0)),
                              seed=int(rng.integers(0, 2**31)))
    else:
        gen = gt
    return gen, gt


@pytest.fixture(scope="session")
def default_config() -> MetricConfig:
    return MetricConfig()


@pytest.fixture(scope="session")
def mixed_identity_pair():
    traj, gt = generate_trajectory(mixed_fixture_config(seed=42))
    return traj, gt
