import numpy as np
import pytest

from waveformlab.chanmodel import ChannelConfig, segment_regions

ACCEPTANCE_LINES: list[str] = []


def random_realization(n, seed, num_regions=1, **overrides):
    """Proposed-model draw with normalized spreads that fit a short frame."""
    base = dict(max_delay_norm=min(3.5, n / 3), max_doppler_norm=1.3, num_regions=num_regions, cluster_rate=3.0, ray_rate=3.0)
    base.update(overrides)
    cfg = ChannelConfig.from_normalized(n, base.pop("max_delay_norm"), base.pop("max_doppler_norm"), **base)
    return segment_regions(cfg, rng_seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
