import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from slack_audit.data import Dataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def small_datasets(draw, max_n=40, max_dim=2, max_distinct=6, both_labels=True):
    """Datasets with few distinct feature values so that score ties are common.

    With ``both_labels`` each group holds at least one positive and one
    negative, so both bias notions are defined.
    """
    dim = draw(st.integers(1, max_dim))
    n = draw(st.integers(4, max_n))
    vals = st.integers(0, max_distinct - 1).map(lambda v: v / max(max_distinct - 1, 1))
    x = np.array(draw(st.lists(st.lists(vals, min_size=dim, max_size=dim), min_size=n, max_size=n)))
    g = np.array(draw(st.lists(st.sampled_from((1, 2)), min_size=n, max_size=n)))
    y = np.array(draw(st.lists(st.sampled_from((0, 1)), min_size=n, max_size=n)))
    g[:2] = (1, 2)
    if both_labels:
        g[:4] = (1, 1, 2, 2)
        y[:4] = (0, 1, 0, 1)
    return Dataset(x, g, y)


@pytest.fixture
def tiny():
    return Dataset(np.array([[0.1], [0.9], [0.3], [0.7]]), np.array([1, 1, 2, 2]), np.array([0, 1, 0, 1]))
