import numpy as np
import pytest
import torch

from macoviz.evaluation import shapes_template
from macoviz.models import build_network, generate_shapes_dataset, reference_model
from macoviz.spectral import compute_magnitude_template

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def untrained_net():
    return build_network("ref6", seed=3)


@pytest.fixture(scope="session")
def trained_net():
    return reference_model(0)


@pytest.fixture(scope="session")
def template64():
    return shapes_template()


@pytest.fixture(scope="session")
def template32():
    data = generate_shapes_dataset(60, 5, 32)
    return compute_magnitude_template(data.images, (32, 32), "test shapes")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``criterion(number, passed, detail)`` records one acceptance line for the terminal summary."""
    store = request.config.stash.setdefault(_CRITERIA, {})

    def record(number, passed, detail):
        store[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CRITERIA, {})
    if not store:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(store):
        passed, detail = store[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
