from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from ats.backend import (
    IDENTITY_CHANNEL,
    STRUCT_CHANNEL,
    ArState,
    BackendError,
    SyntheticBackend,
    SyntheticWorldConfig,
    anchor_identity,
    ar_rollout_chunk,
    extract_conditioning,
    leaf_generate,
    refine_generate,
    root_generate,
    synth_conditioning,
)
from ats.core import Anchor, ArConfig, CallSpec, FrameBlock, Interval

FOLDED_MEAN = math.sqrt(2.0 / math.pi)  # E|N(0,1)|


def make_anchor(time: int, identity: float, structure: float = 0.0, level: int = 0) -> Anchor:
    samples = np.empty((1, 2, 1, 1), dtype=np.float32)
    samples[0, STRUCT_CHANNEL, 0, 0] = structure
    samples[0, IDENTITY_CHANNEL, 0, 0] = identity
    block = FrameBlock(interval=Interval(time, time), channels=2, height=1, width=1, samples=samples)
    return Anchor(time=time, width=1, level=level, payload=block)


def spec_for(kind: str, interval: Interval, seed: int, interior=(), brackets=()) -> CallSpec:
    return CallSpec(
        call_id=f"{kind}-test",
        kind=kind,
        level=0,
        interval=interval,
        bracket_times=tuple(brackets),
        interior_times=tuple(interior),
        conditioning_slice=interval,
        seed=seed,
    )


class TestSynthConditioning:
    def test_single_frame(self):
        world = SyntheticWorldConfig(period_p=240)
        track = synth_conditioning(1, world)
        assert track.value(1) == pytest.approx(math.sin(2 * math.pi / 240), abs=1e-15)

    def test_periodicity(self):
        world = SyntheticWorldConfig(period_p=240)
        track = synth_conditioning(480, world)
        assert abs(track.value(240)) < 1e-12
        assert abs(track.value(480)) < 1e-12

    def test_bounded_and_finite(self):
        track = synth_conditioning(5000, SyntheticWorldConfig())
        assert np.isfinite(track.data).all()
        assert np.abs(track.data).max() <= 1.0


class TestRootGenerate:
    def test_noise_free_anchors_exact(self, silent_world):
        cond = synth_conditioning(500, silent_world)
        spec = spec_for("root", Interval(1, 500), seed=4, interior=(1, 250, 500))
        anchors = root_generate(spec, cond, silent_world)
        assert [a.time for a in anchors] == [1, 250, 500]
        for a in anchors:
            assert anchor_identity(a) == 0.0
            assert a.payload.samples[0, STRUCT_CHANNEL, 0, 0] == np.float32(cond.value(a.time))

    def test_shared_bias_only(self):
        world = SyntheticWorldConfig(sigma_root_shared=0.1, sigma_root_anchor=0.0, sigma_struct=0.0)
        cond = synth_conditioning(500, world)
        spec = spec_for("root", Interval(1, 500), seed=11, interior=(1, 100, 300, 500))
        anchors = root_generate(spec, cond, world)
        values = {anchor_identity(a) for a in anchors}
        assert len(values) == 1
        assert values.pop() != 0.0

    def test_time_order(self, world):
        cond = synth_conditioning(500, world)
        spec = spec_for("root", Interval(1, 500), seed=2, interior=(500, 1, 250))
        # Planner always passes sorted times; the backend returns time order.
        anchors = root_generate(dataclasses.replace(spec, interior_times=(1, 250, 500)), cond, world)
        assert [a.time for a in anchors] == [1, 250, 500]

    def test_outside_horizon_rejected(self, world):
        cond = synth_conditioning(100, world)
        spec = spec_for("root", Interval(1, 100), seed=2, interior=(1, 101))
        with pytest.raises(BackendError):
            root_generate(spec, cond, world)

    def test_identity_variance_matches_components(self):
        # Monte-Carlo oracle: Var(u) = sigma_shared^2 + sigma_anchor^2.
        world = SyntheticWorldConfig(sigma_root_shared=0.1, sigma_root_anchor=0.05, sigma_struct=0.0)
        cond = synth_conditioning(300, world)
        values = []
        for seed in range(10_000):
            spec = spec_for("root", Interval(1, 300), seed=seed, interior=(1, 150, 300))
            anchors = root_generate(spec, cond, world)
            values.append(anchor_identity(anchors[1]))
        expected = world.sigma_root_shared**2 + world.sigma_root_anchor**2
        assert np.var(values) == pytest.approx(expected, rel=0.05)


class TestRefineGenerate:
    def test_zero_noise_zero_brackets(self, silent_world):
        cond = synth_conditioning(200, silent_world)
        brackets = (make_anchor(1, 0.0), make_anchor(200, 0.0))
        spec = spec_for("refine", Interval(1, 200), seed=5, interior=(50, 100, 150), brackets=(1, 200))
        anchors = refine_generate(spec, brackets, cond, silent_world)
        assert all(anchor_identity(a) == 0.0 for a in anchors)

    def test_midpoint_interpolation(self, silent_world):
        cond = synth_conditioning(201, silent_world)
        brackets = (make_anchor(1, 0.0), make_anchor(201, 1.0))
        spec = spec_for("refine", Interval(1, 201), seed=5, interior=(101,), brackets=(1, 201))
        anchors = refine_generate(spec, brackets, cond, silent_world)
        assert anchor_identity(anchors[0]) == pytest.approx(0.5, abs=1e-7)

    def test_interior_time_outside_span_rejected(self, world):
        cond = synth_conditioning(200, world)
        brackets = (make_anchor(50, 0.0), make_anchor(150, 0.0))
        spec = spec_for("refine", Interval(50, 150), seed=5, interior=(150,), brackets=(50, 150))
        with pytest.raises(BackendError):
            refine_generate(spec, brackets, cond, world)

    def test_expected_identity_is_lerp(self):
        # Monte-Carlo oracle: E[u(t)] = lerp(u_a, u_b, t), se = sigma/sqrt(n).
        world = SyntheticWorldConfig(sigma_leaf=0.05, sigma_struct=0.0)
        cond = synth_conditioning(100, world)
        brackets = (make_anchor(1, 0.2), make_anchor(100, 0.8))
        t = 34
        samples = []
        for seed in range(10_000):
            spec = spec_for("refine", Interval(1, 100), seed=seed, interior=(t,), brackets=(1, 100))
            samples.append(anchor_identity(refine_generate(spec, brackets, cond, world)[0]))
        expected = 0.2 + (0.8 - 0.2) * (t - 1) / 99
        se = world.sigma_leaf / math.sqrt(len(samples))
        assert np.mean(samples) == pytest.approx(expected, abs=3 * se + 1e-4)


class TestLeafGenerate:
    def test_noise_free_exact(self, silent_world):
        cond = synth_conditioning(100, silent_world)
        brackets = (make_anchor(10, 0.0), make_anchor(92, 0.0))
        spec = spec_for("leaf", Interval(11, 91), seed=3, brackets=(10, 92))
        block = leaf_generate(spec, brackets, cond, silent_world)
        assert (block.channel_values(IDENTITY_CHANNEL) == 0.0).all()
        expected = cond.values(spec.interval.frames()).astype(np.float32)
        assert np.array_equal(block.channel_values(STRUCT_CHANNEL), expected)

    def test_noise_free_ramp(self, silent_world):
        cond = synth_conditioning(100, silent_world)
        brackets = (make_anchor(10, 0.0), make_anchor(92, 1.0))
        spec = spec_for("leaf", Interval(11, 91), seed=3, brackets=(10, 92))
        block = leaf_generate(spec, brackets, cond, silent_world)
        frames = spec.interval.frames()
        expected = ((frames - 10) / 82.0).astype(np.float32)
        assert np.array_equal(block.channel_values(IDENTITY_CHANNEL), expected)

    def test_overlapping_brackets_rejected(self, world):
        cond = synth_conditioning(100, world)
        brackets = (make_anchor(10, 0.0), make_anchor(92, 0.0))
        spec = spec_for("leaf", Interval(10, 91), seed=3, brackets=(10, 92))
        with pytest.raises(BackendError):
            leaf_generate(spec, brackets, cond, world)

    def test_max_error_rarely_exceeds_four_sigma(self):
        # Oracle: P(|N| > 4 sigma) = 6.33e-5 per frame, so over 81 frames
        # P(max > 4 sigma) = 1 - (1 - 6.33e-5)^81 ~ 0.51%, below 1%.
        world = SyntheticWorldConfig(sigma_leaf=0.01, sigma_struct=0.0)
        cond = synth_conditioning(100, world)
        brackets = (make_anchor(9, 0.0), make_anchor(91, 0.0))
        exceed = 0
        trials = 10_000
        for seed in range(trials):
            spec = spec_for("leaf", Interval(10, 90), seed=seed, brackets=(9, 91))
            block = leaf_generate(spec, brackets, cond, world)
            if np.abs(block.channel_values(IDENTITY_CHANNEL)).max() > 4 * world.sigma_leaf:
                exceed += 1
        assert exceed / trials < 0.01

    def test_error_distribution_position_independent(self):
        # Two-sample KS between first-leaf and last-leaf identity errors.
        world = SyntheticWorldConfig(sigma_leaf=0.01, sigma_struct=0.0)
        cond = synth_conditioning(100_000, world)
        first, last = [], []
        for seed in range(60):
            near = leaf_generate(
                spec_for("leaf", Interval(11, 91), seed=seed, brackets=(10, 92)),
                (make_anchor(10, 0.0), make_anchor(92, 0.0)),
                cond,
                world,
            )
            far = leaf_generate(
                spec_for("leaf", Interval(99_910, 99_990), seed=seed, brackets=(99_909, 99_991)),
                (make_anchor(99_909, 0.0), make_anchor(99_991, 0.0)),
                cond,
                world,
            )
            first.extend(near.channel_values(IDENTITY_CHANNEL).astype(np.float64))
            last.extend(far.channel_values(IDENTITY_CHANNEL).astype(np.float64))
        d = ks_statistic(np.asarray(first), np.asarray(last))
        n = len(first)
        critical = 1.949 * math.sqrt(2 / n)  # alpha = 0.001
        assert d < critical


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    values = np.concatenate([a, b])
    values.sort(kind="mergesort")
    cdf_a = np.searchsorted(np.sort(a), values, side="right") / len(a)
    cdf_b = np.searchsorted(np.sort(b), values, side="right") / len(b)
    return float(np.abs(cdf_a - cdf_b).max())


class TestArRollout:
    def _roll(self, horizon, world, arcfg, seed=0):
        cond = synth_conditioning(horizon, world)
        state = ArState(rng_state=seed, recent=(0.0,) * arcfg.carry_window)
        identities = []
        resets = []
        k = 0
        while k * arcfg.chunk_len < horizon:
            chunk = Interval(k * arcfg.chunk_len + 1, min(horizon, (k + 1) * arcfg.chunk_len))
            block, state, rs = ar_rollout_chunk(state, chunk, cond, world, arcfg)
            identities.append(block.channel_values(IDENTITY_CHANNEL).astype(np.float64))
            resets.extend(rs)
            k += 1
        return np.concatenate(identities), resets

    def test_noise_free_is_constant(self, silent_world):
        ids, _ = self._roll(400, silent_world, ArConfig(chunk_len=81, reset_period_frames=100))
        assert (ids == 0.0).all()

    def test_reset_frames_at_period(self, world):
        _, resets = self._roll(400, world, ArConfig(chunk_len=81, reset_period_frames=100))
        assert resets == [100, 200, 300, 400]

    def test_chunk_length_does_not_change_identity(self, world):
        a, _ = self._roll(500, world, ArConfig(chunk_len=81, reset_period_frames=128), seed=5)
        b, _ = self._roll(500, world, ArConfig(chunk_len=37, reset_period_frames=128), seed=5)
        assert np.allclose(a, b, atol=1e-6)

    def test_walk_variance_grows_linearly(self):
        # Oracle: after n steps with no resets, Var(u_n) = n * sigma_step^2.
        world = SyntheticWorldConfig(sigma_step=0.02, sigma_struct=0.0)
        arcfg = ArConfig(chunk_len=2000, reset_period_frames=10**9)
        n = 2000
        finals = []
        for seed in range(4000):
            ids, _ = self._roll(n, world, arcfg, seed=seed)
            finals.append(ids[-1])
        assert np.var(finals) == pytest.approx(n * world.sigma_step**2, rel=0.05)

    def test_reset_jump_magnitude(self):
        # Folded-normal oracle: with sigma_step = 0 the only change across a
        # reset is the jump, so E|u_after - u_before| = sigma_jump * sqrt(2/pi).
        world = SyntheticWorldConfig(sigma_step=0.0, sigma_jump=0.5, sigma_struct=0.0)
        arcfg = ArConfig(chunk_len=500, reset_period_frames=100)
        deltas = []
        for seed in range(100):
            ids, resets = self._roll(10_000, world, arcfg, seed=seed)
            for t in resets:
                if t + 1 <= len(ids):
                    deltas.append(abs(ids[t] - ids[t - 1]) if t < len(ids) else None)
        deltas = [d for d in deltas if d is not None]
        assert len(deltas) >= 9_000
        expected = world.sigma_jump * FOLDED_MEAN
        assert np.mean(deltas) == pytest.approx(expected, rel=0.05)

    def test_position_shift_has_no_jump(self):
        # Boundary steps under position_shift are ordinary walk steps:
        # P(|step| > 4 sigma) = 6.33e-5, so the exceed rate stays tiny and
        # the mean boundary step matches the folded-normal step mean.
        world = SyntheticWorldConfig(sigma_step=0.02, sigma_jump=0.5, sigma_struct=0.0)
        arcfg = ArConfig(chunk_len=500, reset_period_frames=100, variant="position_shift")
        boundary_steps = []
        for seed in range(100):
            ids, resets = self._roll(10_000, world, arcfg, seed=seed)
            boundary_steps.extend(abs(ids[t] - ids[t - 1]) for t in resets if t < len(ids))
        boundary_steps = np.asarray(boundary_steps)
        assert len(boundary_steps) >= 9_000
        assert (boundary_steps > 4 * world.sigma_step).mean() < 3e-4
        assert boundary_steps.mean() == pytest.approx(world.sigma_step * FOLDED_MEAN, rel=0.05)


class TestExtractConditioning:
    def test_exact_when_noise_free(self, silent_world):
        cond = synth_conditioning(100, silent_world)
        brackets = (make_anchor(10, 0.0), make_anchor(92, 0.0))
        spec = spec_for("leaf", Interval(11, 91), seed=3, brackets=(10, 92))
        block = leaf_generate(spec, brackets, cond, silent_world)
        extracted = extract_conditioning(block)
        expected = cond.values(spec.interval.frames()).astype(np.float32).astype(np.float64)
        assert np.array_equal(extracted.data[:, 0], expected)

    def test_residual_mean_matches_folded_normal(self):
        # Oracle: residual = |N(0, sigma^2)| with mean sigma * sqrt(2/pi).
        world = SyntheticWorldConfig(sigma_struct=0.02, sigma_leaf=0.0)
        cond = synth_conditioning(100, world)
        brackets = (make_anchor(9, 0.0), make_anchor(91, 0.0))
        residuals = []
        for seed in range(2_000):
            spec = spec_for("leaf", Interval(10, 90), seed=seed, brackets=(9, 91))
            block = leaf_generate(spec, brackets, cond, world)
            extracted = extract_conditioning(block)
            reference = cond.values(spec.interval.frames())
            residuals.append(np.mean(np.abs(extracted.data[:, 0] - reference)))
        expected = world.sigma_struct * FOLDED_MEAN
        assert np.mean(residuals) == pytest.approx(expected, rel=0.05)

    def test_corrupted_leaf_detected(self):
        # Oracle: with sigma_struct = 1 the residual mean is ~0.8 with
        # se ~0.067 over 81 frames, so residual > 0.5 essentially always.
        world = SyntheticWorldConfig(sigma_struct=1.0, sigma_leaf=0.0)
        cond = synth_conditioning(100, world)
        brackets = (make_anchor(9, 0.0), make_anchor(91, 0.0))
        hits = 0
        trials = 1_000
        for seed in range(trials):
            spec = spec_for("leaf", Interval(10, 90), seed=seed, brackets=(9, 91))
            block = leaf_generate(spec, brackets, cond, world)
            reference = cond.values(spec.interval.frames())
            residual = np.mean(np.abs(extract_conditioning(block).data[:, 0] - reference))
            hits += residual > 0.5
        assert hits / trials > 0.999

    def test_missing_structure_channel(self):
        block = FrameBlock(
            interval=Interval(1, 4), channels=0, height=1, width=1,
            samples=np.zeros((4, 0, 1, 1), dtype=np.float32),
        )
        with pytest.raises(BackendError):
            extract_conditioning(block)


class TestPurity:
    def test_same_seed_bit_identical(self, world):
        cond = synth_conditioning(100, world)
        brackets = (make_anchor(10, 0.3), make_anchor(92, -0.7))
        spec = spec_for("leaf", Interval(11, 91), seed=99, brackets=(10, 92))
        a = leaf_generate(spec, brackets, cond, world)
        b = leaf_generate(spec, brackets, cond, world)
        assert a.same_as(b)
        root_spec = spec_for("root", Interval(1, 100), seed=99, interior=(1, 50, 100))
        ra = root_generate(root_spec, cond, world)
        rb = root_generate(root_spec, cond, world)
        assert all(x.payload.same_as(y.payload) for x, y in zip(ra, rb))

    def test_different_seed_differs(self, world):
        cond = synth_conditioning(100, world)
        brackets = (make_anchor(10, 0.3), make_anchor(92, -0.7))
        a = leaf_generate(spec_for("leaf", Interval(11, 91), seed=1, brackets=(10, 92)), brackets, cond, world)
        b = leaf_generate(spec_for("leaf", Interval(11, 91), seed=2, brackets=(10, 92)), brackets, cond, world)
        assert not a.same_as(b)


class TestSyntheticBackendDispatch:
    def test_unknown_kind_guarded_by_callspec(self, world):
        with pytest.raises(ValueError):
            spec_for("mystery", Interval(1, 10), seed=0)

    def test_inpaint_requires_context(self, world):
        backend = SyntheticBackend(world)
        cond = synth_conditioning(100, world)
        spec = spec_for("inpaint_seam", Interval(30, 50), seed=1, brackets=(29, 51))
        with pytest.raises(BackendError):
            backend.run_call(spec, (make_anchor(29, 0.0), make_anchor(51, 0.0)), cond)
