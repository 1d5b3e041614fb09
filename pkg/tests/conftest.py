import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def runtime_factory():
    """Start runtimes and make sure every one of them is shut down."""
    from amtscope.runtime import Runtime

    made = []

    def make(localities=1, workers=1, **kwargs):
        rt = Runtime(localities, workers, **kwargs).start()
        made.append(rt)
        return rt

    yield make
    for rt in made:
        if rt.running:
            rt.shutdown()
