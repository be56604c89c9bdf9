"""Cross-checks the metric suite against the brute-force reference in oracle.py."""

from __future__ import annotations

import numpy as np
import pytest

import oracle
from conftest import random_metric_pair
from wemeval.metrics import MetricConfig, evaluate_all

TOLERANCE = 1e-9


def _compare(gen, gt, cfg: MetricConfig) -> None:
    report = evaluate_all(gen, gt, cfg)
    reference = oracle.all_metrics(gen, gt, cfg)
    for name, expected in reference.items():
        got = report.scores[name]
        if expected is None:
            assert got is None, f"{name}: suite={got}, oracle absent"
        else:
            assert got == pytest.approx(expected, abs=TOLERANCE), name


def test_identity_pair_matches_oracle(mixed_identity_pair, default_config):
    traj, _ = mixed_identity_pair
    _compare(traj, traj, default_config)


def test_random_small_fixtures_match_oracle(default_config):
    rng = np.random.default_rng(2024)
    for _ in range(25):
        gen, gt = random_metric_pair(rng, size=32)
        _compare(gen, gt, default_config)


def test_oracle_agreement_under_nondefault_config():
    cfg = MetricConfig(lpsa_window=2, fphs_window=3, tau_pmpa=0.3, resample_steps=9,
                       top_fraction=0.35)
    rng = np.random.default_rng(4096)
    for _ in range(8):
        gen, gt = random_metric_pair(rng, size=24)
        _compare(gen, gt, cfg)
