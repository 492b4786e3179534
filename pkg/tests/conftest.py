import numpy as np
import pytest
import torch

from pianoskill.synthetic import SyntheticSpec, generate_synthetic


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Two levels, one train and one test performance each, 320 frames (2 samples) per performance."""
    spec = SyntheticSpec(levels=(2, 7), train_per_level=1, test_per_level=1, frame_count=320, seed=3)
    out = tmp_path_factory.mktemp("tiny")
    manifest = generate_synthetic(spec, out)
    return out, manifest


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
