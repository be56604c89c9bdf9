from __future__ import annotations

import pytest

from wemeval.verify import INVARIANT_NAMES, run_verification


def test_all_invariants_pass_on_random_trials():
    records = run_verification(seed=5, trials=100)
    assert {r["invariant"] for r in records} == set(INVARIANT_NAMES)
    for record in records:
        assert record["passed"], record["failures"]
        assert record["failures"] == []


def test_runs_are_deterministic_per_seed():
    a = run_verification(seed=9, trials=30)
    b = run_verification(seed=9, trials=30)
    assert a == b


def test_injected_unroute_fault_is_caught_with_counterexample():
    records = run_verification(seed=5, trials=100, inject_fault="unroute-flip")
    by_name = {r["invariant"]: r for r in records}
    broken = by_name["unroute_reconstruction"]
    assert not broken["passed"]
    assert broken["failures"]
    assert "base_mask" in broken["failures"][0]
    for name in INVARIANT_NAMES:
        if name != "unroute_reconstruction":
            assert by_name[name]["passed"]


def test_zero_trials_rejected():
    with pytest.raises(ValueError, match="trials"):
        run_verification(seed=0, trials=0)
