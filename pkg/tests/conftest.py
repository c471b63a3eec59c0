import numpy as np
import pytest
from hypothesis import settings

from uwbsense.config import RadioConfig, SceneConfig
from uwbsense.scene import build_scene

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def scene():
    return build_scene(SceneConfig())


@pytest.fixture
def radio():
    return RadioConfig()


@pytest.fixture
def quiet_radio():
    """Radio without dither or random sampling phase, for exact oracles."""
    return RadioConfig(fp_dither=0, random_sampling_phase=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results are echoed at the end of the run, so they show up even
# when pytest captures the tests' stdout
_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Call with (criterion, ok, detail, seconds) to record a PASS/FAIL line."""
    lines = request.config.stash[_ACCEPTANCE]

    def report(number, ok, detail, seconds):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.1f} s]"
        lines.append((number, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
