"""Tree planning: anchor times, levels, call list, and dependencies.

The planner is pure: a plan is a function of (horizon, config, conditioning,
seed) only. Per-call seeds are derived by mixing the root seed with the
call id, so sibling order never affects reproducibility.

Coarsening keeps every k-th anchor time with k = call_budget + 1 and always
retains both endpoints; between two kept times at most call_budget dropped
times remain, which is exactly what one refine call may insert.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    AnchorHierarchy,
    CallSpec,
    ConditioningTrack,
    ContextLimits,
    Interval,
    PlanError,
    TreePlan,
    payload_interval,
)
from .protocol import mix_seed, mix_seed_many

PLAN_VERSION = 1


@dataclass(frozen=True, slots=True)
class PlannerConfig:
    """Planning knobs on top of the backend limits.

    leaf_target is the preferred leaf spacing; the default m_max - 1 gives
    the fewest calls while leaving rounding slack inside [m_min, m_max].
    """

    limits: ContextLimits
    leaf_target: int | None = None
    placement: str = "uniform"
    adaptive_window: int = 16
    adaptive_bias: float = 0.5

    def __post_init__(self) -> None:
        if self.placement not in ("uniform", "adaptive"):
            raise ValueError(f"unknown placement {self.placement!r}")
        if not (0.0 <= self.adaptive_bias <= 1.0):
            raise ValueError("adaptive_bias must lie in [0, 1]")
        if self.adaptive_window < 1:
            raise ValueError("adaptive_window must be >= 1")
        t = self.effective_leaf_target
        if not (self.limits.m_min <= t <= self.limits.m_max):
            raise ValueError(
                f"leaf_target {t} outside [{self.limits.m_min}, {self.limits.m_max}]"
            )

    @property
    def effective_leaf_target(self) -> int:
        if self.leaf_target is not None:
            return self.leaf_target
        return max(self.limits.m_min, self.limits.m_max - 1)


def call_budget(limits: ContextLimits) -> int:
    """Maximum interior anchors a single root/refine call may emit.

    The assembled sparse input is one lead frame, one stride_sf-frame slice
    per interior anchor, and a final stride_sf-frame slice; it must fit
    m_max.
    """
    return (limits.m_max - 1 - limits.stride_sf) // limits.stride_sf


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _uniform_times(horizon: int, n_segments: int) -> list[int]:
    """n_segments + 1 times from 1 to horizon, round-half-up, strictly increasing."""
    i = np.arange(n_segments + 1, dtype=np.float64)
    times = 1 + np.floor(i * (horizon - 1) / n_segments + 0.5).astype(np.int64)
    if (np.diff(times) <= 0).any():
        # forward bump restores strict monotonicity after rounding collisions
        out = times.tolist()
        for k in range(1, len(out)):
            if out[k] <= out[k - 1]:
                out[k] = out[k - 1] + 1
        times = np.asarray(out)
    result = times.tolist()
    result[-1] = horizon
    return result


def _activity(conditioning: ConditioningTrack, window: int) -> np.ndarray:
    """Local information content: mean |first difference| over a centered window."""
    diffs = np.abs(np.diff(conditioning.data, axis=0)).mean(axis=1)
    diffs = np.concatenate([diffs, diffs[-1:]])  # pad to horizon length
    kernel = np.ones(window) / window
    return np.convolve(diffs, kernel, mode="same")


def adaptive_placement(
    conditioning: ConditioningTrack,
    n_anchors: int,
    config: PlannerConfig,
) -> list[int]:
    """Anchor times biased toward high-activity regions of the conditioning.

    Density is (1 - bias) * uniform + bias * normalized activity mass;
    placement is the inverse CDF of that density at uniform quantiles, then
    spacings are clamped to [m_min, m_max] by greedy largest-violation-first
    splitting and merging.
    """
    if n_anchors < 2:
        raise PlanError("adaptive placement needs at least 2 anchors")
    horizon = conditioning.horizon
    if (n_anchors - 1) * config.limits.m_min > horizon - 1:
        raise PlanError(
            f"{n_anchors} anchors cannot keep spacing >= {config.limits.m_min} in horizon {horizon}"
        )
    bias = config.adaptive_bias
    mass = np.full(horizon - 1, 1.0 / (horizon - 1))
    if bias > 0.0:
        act = _activity(conditioning, config.adaptive_window)[: horizon - 1]
        total = act.sum()
        if total > 0.0:
            mass = (1.0 - bias) * mass + bias * (act / total)
    cdf = np.concatenate([[0.0], np.cumsum(mass)])
    cdf /= cdf[-1]
    # Inverse CDF at uniform quantiles; positions interpolate frame 1..horizon.
    quantiles = np.arange(n_anchors, dtype=np.float64) / (n_anchors - 1)
    positions = np.interp(quantiles, cdf, np.arange(1, horizon + 1, dtype=np.float64))
    times = []
    prev = 0
    for p in positions:
        t = min(horizon, max(1, _round_half_up(float(p))))
        if t <= prev:
            t = prev + 1
        times.append(t)
        prev = t
    times[0], times[-1] = 1, horizon
    return _clamp_spacings(times, config.limits)


def _clamp_spacings(times: list[int], limits: ContextLimits) -> list[int]:
    """Greedy largest-violation-first repair of spacings into [m_min, m_max]."""
    times = sorted(set(times))
    for _ in range(10 * len(times) + 100):
        gaps = np.diff(times)
        over = gaps - limits.m_max
        under = limits.m_min - gaps
        worst_over = int(over.max()) if len(over) else 0
        worst_under = int(under.max()) if len(under) else 0
        if worst_over <= 0 and worst_under <= 0:
            return times
        if worst_over >= worst_under:
            i = int(np.argmax(over))
            mid = (times[i] + times[i + 1]) // 2
            times.insert(i + 1, mid)
        else:
            i = int(np.argmax(under))
            # Drop whichever gap endpoint is interior; prefer the one whose
            # removal produces the smaller merged gap.
            candidates = []
            if 0 < i:  # drop times[i], merging with the left gap
                candidates.append((times[i + 1] - times[i - 1], i))
            if i + 1 < len(times) - 1:  # drop times[i+1], merging right
                candidates.append((times[i + 2] - times[i], i + 1))
            if not candidates:
                raise PlanError("cannot repair spacing: endpoints too close")
            _, j = min(candidates)
            times.pop(j)
    raise PlanError("spacing clamp did not converge")


def _coarsen(times: list[int], k: int) -> list[int]:
    """Keep every k-th time, always retaining first and last."""
    kept = times[::k]
    if kept[-1] != times[-1]:
        kept.append(times[-1])
    return kept


def plan_tree(
    horizon: int,
    config: PlannerConfig,
    conditioning: ConditioningTrack | None = None,
    seed: int = 0,
) -> TreePlan:
    """Plan the anchor hierarchy and call list for a horizon.

    Horizons that fit one context window yield a degenerate single-call
    plan. Otherwise leaf-level anchor times are placed at roughly
    leaf_target spacing, coarsened bottom-up until one root call can emit
    the coarsest level, and calls are derived level by level.
    """
    limits = config.limits
    if horizon < 2:
        raise PlanError(f"horizon must be >= 2, got {horizon}")
    if config.placement == "adaptive":
        if conditioning is None:
            raise PlanError("adaptive placement requires a conditioning track")
        if conditioning.horizon != horizon or conditioning.start != 1:
            raise PlanError("conditioning track must cover [1, horizon]")
    seed &= (1 << 64) - 1

    if horizon <= limits.m_max:
        call = CallSpec(
            call_id="leaf:1-%d" % horizon,
            kind="leaf",
            level=0,
            interval=Interval(1, horizon),
            bracket_times=(),
            interior_times=(),
            conditioning_slice=Interval(1, horizon),
            seed=mix_seed(seed, "leaf:1-%d" % horizon),
        )
        hierarchy = AnchorHierarchy(levels=(), leaf_level=0)
        return TreePlan(
            limits=limits,
            horizon=horizon,
            hierarchy=hierarchy,
            calls=(call,),
            deps={call.call_id: ()},
            seed_root=seed,
        )

    n_leaf = math.ceil((horizon - 1) / config.effective_leaf_target)
    if config.placement == "adaptive":
        assert conditioning is not None
        leaf_times = adaptive_placement(conditioning, n_leaf + 1, config)
    else:
        leaf_times = _uniform_times(horizon, n_leaf)

    budget = call_budget(limits)
    k = budget + 1
    levels = [leaf_times]
    while len(levels[0]) > budget + 2:
        levels.insert(0, _coarsen(levels[0], k))

    hierarchy = AnchorHierarchy(
        levels=tuple(tuple(lv) for lv in levels),
        leaf_level=len(levels),
    )

    # Descriptors first, then one batch seed derivation, then the specs.
    pending: list[tuple[str, str, int, Interval, tuple[int, ...], tuple[int, ...]]] = []
    deps: dict[str, tuple[str, ...]] = {}
    producer: dict[int, str] = {}  # anchor time -> call that emits it

    root_times = tuple(levels[0])
    root_id = "root"
    pending.append((root_id, "root", 0, Interval(1, horizon), (), root_times))
    deps[root_id] = ()
    for t in root_times:
        producer[t] = root_id

    for level_idx in range(1, len(levels)):
        coarse, fine = levels[level_idx - 1], levels[level_idx]
        fine_index = {t: i for i, t in enumerate(fine)}
        for a, b in zip(coarse, coarse[1:]):
            inserted = tuple(fine[fine_index[a] + 1 : fine_index[b]])
            if not inserted:
                continue
            call_id = f"refine:{level_idx}:{a}-{b}"
            pending.append((call_id, "refine", level_idx, Interval(a, b), (a, b), inserted))
            prod_a, prod_b = producer[a], producer[b]
            deps[call_id] = (prod_a,) if prod_a == prod_b else (prod_a, prod_b)
            for t in inserted:
                producer[t] = call_id

    leaf_level = len(levels)
    finest = levels[-1]
    width = limits.anchor_width
    for a, b in zip(finest, finest[1:]):
        if width == 1:
            interior = Interval(a + 1, b - 1)
        else:
            pa = payload_interval(a, width, horizon)
            pb = payload_interval(b, width, horizon)
            interior = Interval(pa.end + 1, pb.start - 1)
        call_id = f"leaf:{a}-{b}"
        pending.append((call_id, "leaf", leaf_level, interior, (a, b), ()))
        prod_a, prod_b = producer[a], producer[b]
        deps[call_id] = (prod_a,) if prod_a == prod_b else (prod_a, prod_b)

    seeds = mix_seed_many(seed, [p[0] for p in pending])
    calls = tuple(
        CallSpec(
            call_id=call_id,
            kind=kind,
            level=level,
            interval=interval,
            bracket_times=brackets,
            interior_times=interior,
            conditioning_slice=interval,
            seed=call_seed,
        )
        for (call_id, kind, level, interval, brackets, interior), call_seed in zip(pending, seeds)
    )

    return TreePlan(
        limits=limits,
        horizon=horizon,
        hierarchy=hierarchy,
        calls=calls,
        deps=deps,
        seed_root=seed,
    )


def reseed_plan(plan: TreePlan, seed: int) -> TreePlan:
    """Same tree, fresh noise: re-derive every call seed from a new root seed."""
    seed &= (1 << 64) - 1
    seeds = mix_seed_many(seed, [c.call_id for c in plan.calls])
    calls = tuple(
        CallSpec(
            call_id=c.call_id,
            kind=c.kind,
            level=c.level,
            interval=c.interval,
            bracket_times=c.bracket_times,
            interior_times=c.interior_times,
            conditioning_slice=c.conditioning_slice,
            seed=s,
        )
        for c, s in zip(plan.calls, seeds)
    )
    return TreePlan(
        limits=plan.limits,
        horizon=plan.horizon,
        hierarchy=plan.hierarchy,
        calls=calls,
        deps=plan.deps,
        seed_root=seed,
    )


@dataclass(frozen=True, slots=True)
class Violation:
    kind: str
    where: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def of_kind(self, kind: str) -> tuple[Violation, ...]:
        return tuple(v for v in self.violations if v.kind == kind)

    def __str__(self) -> str:
        if self.ok:
            return "plan valid"
        return "\n".join(f"[{v.kind}] {v.where}: {v.message}" for v in self.violations)


def validate_plan(plan: TreePlan) -> ValidationReport:
    """Check every structural invariant of a plan; violations go in the report."""
    v: list[Violation] = []
    limits = plan.limits
    horizon = plan.horizon
    levels = plan.hierarchy.levels

    def bad(kind: str, where: str, message: str) -> None:
        v.append(Violation(kind, where, message))

    for idx, level in enumerate(levels):
        arr = np.asarray(level, dtype=np.int64)
        if arr.size < 2:
            bad("level_size", f"level {idx}", f"only {arr.size} times")
            continue
        if (np.diff(arr) <= 0).any():
            bad("monotonic", f"level {idx}", "times not strictly increasing")
        if arr[0] != 1 or arr[-1] != horizon:
            bad("endpoints", f"level {idx}", f"must span [1, {horizon}], got [{arr[0]}, {arr[-1]}]")
        if idx > 0 and not set(levels[idx - 1]) <= set(level):
            missing = sorted(set(levels[idx - 1]) - set(level))[:3]
            bad("nesting", f"level {idx}", f"missing coarser times {missing}")

    if levels:
        finest = np.asarray(levels[-1], dtype=np.int64)
        gaps = np.diff(finest)
        for i in np.nonzero((gaps < limits.m_min) | (gaps > limits.m_max))[0].tolist():
            bad(
                "leaf_spacing",
                f"gap {int(finest[i])}-{int(finest[i + 1])}",
                f"spacing {int(gaps[i])} outside [{limits.m_min}, {limits.m_max}]",
            )
    elif not plan.is_degenerate:
        bad("hierarchy", "plan", "no anchor levels but plan is not a single leaf call")

    budget = call_budget(limits)
    by_id = plan.by_id()
    level_of = {c.call_id: c.level for c in plan.calls}
    for call in plan.calls:
        where = call.call_id
        if call.kind == "root":
            if call.bracket_times:
                bad("call_shape", where, "root call must have no brackets")
            if len(call.interior_times) < 2:
                bad("call_shape", where, "root call must emit at least 2 times")
            n_interior = sum(1 for t in call.interior_times if 1 < t < horizon)
            assembled = 1 + limits.stride_sf * n_interior + limits.stride_sf
            if assembled > limits.m_max:
                bad("budget", where, f"assembled input {assembled} > m_max {limits.m_max}")
        elif call.kind == "refine":
            if len(call.bracket_times) != 2:
                bad("call_shape", where, "refine call needs exactly 2 brackets")
            if not call.interior_times:
                bad("call_shape", where, "refine call inserts nothing")
            assembled = 1 + limits.stride_sf * len(call.interior_times) + limits.stride_sf
            if assembled > limits.m_max:
                bad("budget", where, f"assembled input {assembled} > m_max {limits.m_max}")
        elif call.kind == "leaf":
            if len(call.bracket_times) != 2 and not plan.is_degenerate:
                bad("call_shape", where, "leaf call needs exactly 2 brackets")
    for cid, prereqs in plan.deps.items():
        own_level = level_of.get(cid)
        if own_level is None:
            bad("deps", cid, "dependency entry for unknown call")
            continue
        for dep in prereqs:
            if dep not in by_id:
                bad("deps", cid, f"depends on unknown call {dep}")
            elif level_of[dep] >= own_level:
                bad(
                    "sibling_independence",
                    cid,
                    f"depends on {dep} at level {level_of[dep]} >= {own_level}",
                )

    # DAG acyclicity by Kahn's algorithm.
    indeg = {c.call_id: 0 for c in plan.calls}
    consumers: dict[str, list[str]] = {c.call_id: [] for c in plan.calls}
    for cid, prereqs in plan.deps.items():
        for p in prereqs:
            if p in consumers:
                consumers[p].append(cid)
                indeg[cid] = indeg.get(cid, 0) + 1
    queue = [cid for cid, d in indeg.items() if d == 0]
    seen = 0
    while queue:
        cid = queue.pop()
        seen += 1
        for nxt in consumers.get(cid, ()):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
    if seen != len(plan.calls):
        bad("dag", "plan", "dependency edges contain a cycle")

    # Coverage: anchor payloads plus leaf intervals tile [1, horizon] exactly.
    if levels and limits.anchor_width == 1:
        anchor_starts = list(levels[-1])
        anchor_ends = anchor_starts
    elif levels:
        payloads = [payload_interval(t, limits.anchor_width, horizon) for t in levels[-1]]
        anchor_starts = [p.start for p in payloads]
        anchor_ends = [p.end for p in payloads]
    else:
        anchor_starts = []
        anchor_ends = []
    leaf_intervals = [c.interval for c in plan.calls if c.kind == "leaf"]
    s_arr = np.asarray(anchor_starts + [iv.start for iv in leaf_intervals], dtype=np.int64)
    e_arr = np.asarray(anchor_ends + [iv.end for iv in leaf_intervals], dtype=np.int64)
    order = np.argsort(s_arr, kind="stable")
    s_arr, e_arr = s_arr[order], e_arr[order]
    tiles = (
        len(s_arr) > 0
        and s_arr[0] == 1
        and e_arr[-1] == horizon
        and bool((s_arr[1:] == e_arr[:-1] + 1).all())
    )
    if not tiles:
        bad("coverage", "plan", "anchor payloads and leaves do not tile [1, horizon] exactly")

    return ValidationReport(violations=tuple(v))


def plan_to_json(plan: TreePlan) -> dict:
    return {
        "version": PLAN_VERSION,
        "horizon": plan.horizon,
        "limits": {
            "m_min": plan.limits.m_min,
            "m_max": plan.limits.m_max,
            "stride_sf": plan.limits.stride_sf,
            "anchor_width": plan.limits.anchor_width,
        },
        "levels": [list(level) for level in plan.hierarchy.levels],
        "calls": [
            {
                "call_id": c.call_id,
                "kind": c.kind,
                "level": c.level,
                "interval": list(c.interval.as_tuple()),
                "brackets": list(c.bracket_times),
                "interior": list(c.interior_times),
                "seed": c.seed,
            }
            for c in plan.calls
        ],
        "deps": [[dep, cid] for cid, deps in plan.deps.items() for dep in deps],
        "seed_root": plan.seed_root,
    }


def plan_from_json(doc: dict) -> TreePlan:
    if doc.get("version") != PLAN_VERSION:
        raise PlanError(f"unsupported plan version {doc.get('version')}")
    lm = doc["limits"]
    limits = ContextLimits(
        m_min=lm["m_min"], m_max=lm["m_max"], stride_sf=lm["stride_sf"],
        anchor_width=lm["anchor_width"],
    )
    levels = tuple(tuple(int(t) for t in level) for level in doc["levels"])
    calls = tuple(
        CallSpec(
            call_id=c["call_id"],
            kind=c["kind"],
            level=int(c["level"]),
            interval=Interval(*c["interval"]),
            bracket_times=tuple(int(t) for t in c["brackets"]),
            interior_times=tuple(int(t) for t in c["interior"]),
            conditioning_slice=Interval(*c["interval"]),
            seed=int(c["seed"]),
        )
        for c in doc["calls"]
    )
    deps: dict[str, tuple[str, ...]] = {c.call_id: () for c in calls}
    for dep, cid in doc["deps"]:
        deps[cid] = deps.get(cid, ()) + (dep,)
    return TreePlan(
        limits=limits,
        horizon=int(doc["horizon"]),
        hierarchy=AnchorHierarchy(levels=levels, leaf_level=len(levels)),
        calls=calls,
        deps=deps,
        seed_root=int(doc["seed_root"]),
    )


def save_plan(path: str | Path, plan: TreePlan) -> None:
    Path(path).write_text(json.dumps(plan_to_json(plan), indent=2) + "\n", encoding="utf-8")


def load_plan(path: str | Path) -> TreePlan:
    return plan_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
