import numpy as np
import pytest

from openset_reid import synth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_features():
    """A quick synthetic feature set: 40 identities, 3 cameras."""
    cfg = synth.SynthConfig(n_identities=40, n_cameras=3, latent_dim=8, nuisance_dims=2, seed=3)
    return synth.generate_features(cfg)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_log(request):
    """List that acceptance tests append their one-line verdicts to."""
    return request.config.stash[_ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line[1])
