import os

import hypothesis
import pytest

from dcf_stability.core import SystemParams, derive_timing, dot11b_params

hypothesis.settings.register_profile("fast", max_examples=5)
hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.register_profile("full", max_examples=1000, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fast"))


@pytest.fixture
def params() -> SystemParams:
    return dot11b_params()


@pytest.fixture
def chan(params: SystemParams):
    return derive_timing(params, 11e6)
