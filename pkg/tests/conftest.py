import numpy as np
import pytest

from mislink.core import Dataset, GroupSample
from mislink.simulate import MeasureChannelSpec, SimConfig, simulate_dataset


@pytest.fixture(scope="session")
def small_cfg():
    return SimConfig(S=30, n=20, seed=11)


@pytest.fixture(scope="session")
def small_ds(small_cfg):
    return simulate_dataset(small_cfg)


@pytest.fixture(scope="session")
def table_ds():
    """One draw of the small-rate design at full size."""
    return simulate_dataset(SimConfig(seed=7))


@pytest.fixture(scope="session")
def noiseless_ds():
    cfg = SimConfig(S=40, n=25, seed=5,
                    channels=(MeasureChannelSpec(0.0, 0.0), MeasureChannelSpec(0.0, 0.0)))
    return simulate_dataset(cfg)


def make_group(G, y=None, X=None, gid="g", measures=None, seed=0):
    rng = np.random.default_rng(seed)
    n = len(G)
    if X is None:
        X = np.column_stack([rng.integers(0, 2, n), rng.standard_normal(n)]).astype(float)
    if y is None:
        y = rng.standard_normal(n)
    if measures is None:
        measures = (G,)
    return GroupSample(gid, y, X, measures, truth=G)


def as_dataset(groups):
    return Dataset(groups, ("x1", "x2"), 0)
