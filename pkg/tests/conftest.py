from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from ats.backend import SyntheticWorldConfig
from ats.core import ContextLimits
from ats.planner import PlannerConfig

settings.register_profile("ci", deadline=None, derandomize=True, max_examples=60)
settings.load_profile("ci")

PAPER_LIMITS = ContextLimits(m_min=33, m_max=81, stride_sf=8, anchor_width=1)


@pytest.fixture(scope="session")
def limits() -> ContextLimits:
    return PAPER_LIMITS


@pytest.fixture(scope="session")
def planner_config(limits: ContextLimits) -> PlannerConfig:
    return PlannerConfig(limits=limits)


@pytest.fixture(scope="session")
def world() -> SyntheticWorldConfig:
    return SyntheticWorldConfig()


@pytest.fixture(scope="session")
def silent_world() -> SyntheticWorldConfig:
    """All noise sources off: outputs are exact functions of conditioning."""
    return SyntheticWorldConfig(
        sigma_step=0.0,
        sigma_jump=0.0,
        sigma_leaf=0.0,
        sigma_root_shared=0.0,
        sigma_root_anchor=0.0,
        sigma_struct=0.0,
    )


def assert_strictly_increasing(values) -> None:
    arr = np.asarray(values)
    assert (np.diff(arr) > 0).all()
