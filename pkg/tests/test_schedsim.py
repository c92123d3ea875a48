from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st

from ats.core import ContextLimits
from ats.planner import PlannerConfig, plan_tree
from ats.schedsim import LatencyProfile, makespan_ar, makespan_tree, sweep, write_sweep_csv

LIMITS = ContextLimits(m_min=33, m_max=81, stride_sf=8)
CONFIG = PlannerConfig(limits=LIMITS)


def max_level_width(plan) -> int:
    return max(len(plan.calls_at(level)) for level in plan.levels_present())


class TestMakespanTree:
    def test_worked_plan_wide(self):
        plan = plan_tree(3201, CONFIG, seed=0)
        assert makespan_tree(plan, LatencyProfile(tau_call=1.0, workers=40)) == 3.0

    def test_worked_plan_eight_workers(self):
        plan = plan_tree(3201, CONFIG, seed=0)
        # 1 root + ceil(4/8) refine + ceil(40/8) leaves = 7
        assert makespan_tree(plan, LatencyProfile(tau_call=1.0, workers=8)) == 7.0

    def test_degenerate_plan(self):
        plan = plan_tree(81, CONFIG, seed=0)
        assert makespan_tree(plan, LatencyProfile(tau_call=2.5, workers=1)) == 2.5

    @given(st.integers(2, 300_000), st.integers(1, 64))
    def test_monotone_in_workers_and_lower_bound(self, horizon, workers):
        plan = plan_tree(horizon, CONFIG, seed=1)
        tau = 1.0
        span = makespan_tree(plan, LatencyProfile(tau_call=tau, workers=workers))
        wider = makespan_tree(plan, LatencyProfile(tau_call=tau, workers=workers + 1))
        depth_bound = (plan.hierarchy.leaf_level + 1) * tau
        assert wider <= span
        assert span >= depth_bound
        full = makespan_tree(plan, LatencyProfile(tau_call=tau, workers=max_level_width(plan)))
        assert full == depth_bound

    def test_per_kind_costs(self):
        plan = plan_tree(3201, CONFIG, seed=0)
        profile = LatencyProfile(tau_call={"root": 2.0, "refine": 1.0, "leaf": 0.5}, workers=40)
        assert makespan_tree(plan, profile) == 3.5


class TestMakespanAr:
    def test_worked_example(self):
        assert makespan_ar(3201, 81, LatencyProfile(tau_call=1.0, workers=8)) == 40.0

    def test_single_chunk(self):
        assert makespan_ar(81, 81, LatencyProfile(tau_call=1.0, workers=1)) == 1.0

    def test_worker_count_irrelevant(self):
        a = makespan_ar(3201, 81, LatencyProfile(tau_call=1.0, workers=1))
        b = makespan_ar(3201, 81, LatencyProfile(tau_call=1.0, workers=1000))
        assert a == b == 40.0

    @given(st.integers(1, 10**6), st.integers(1, 500))
    def test_exact_ceiling(self, horizon, chunk):
        got = makespan_ar(horizon, chunk, LatencyProfile(tau_call=1.0, workers=3))
        assert got == math.ceil(horizon / chunk)


class TestSweep:
    def test_speedup_at_worked_plan(self):
        rows = sweep([3201], CONFIG, LatencyProfile(tau_call=1.0, workers=8), fps=16)
        row = rows[0]
        assert row.ats_s == 7.0 and row.ar_s == 40.0
        assert row.speedup == pytest.approx(40.0 / 7.0)
        assert row.realtime_ratio == pytest.approx((3201 / 16) / 7.0)

    def test_tree_growth_logarithmic_ar_linear(self):
        horizons = [10**3, 10**4, 10**5, 10**6]
        rows = sweep(horizons, CONFIG, LatencyProfile(tau_call=1.0, workers=10**9))
        ats = [r.ats_s for r in rows]
        ar = [r.ar_s for r in rows]
        for a, b in zip(ats, ats[1:]):
            assert b - a <= 2.0  # at most 2 tau per decade
        for a, b in zip(ar, ar[1:]):
            assert b / a >= 9.0  # essentially linear
        assert all(b >= a for a, b in zip(ats, ats[1:]))

    def test_requires_increasing_horizons(self):
        with pytest.raises(ValueError):
            sweep([200, 100], CONFIG, LatencyProfile())

    def test_csv_output(self, tmp_path):
        rows = sweep([161, 3201], CONFIG, LatencyProfile(tau_call=1.0, workers=8), fps=16)
        path = tmp_path / "sweep.csv"
        write_sweep_csv(path, rows)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "horizon_frames,duration_s,ats_s,ar_s,speedup,realtime_ratio"
        assert len(lines) == 3
