from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


def zoo_models():
    """Every model id paired with a constructed instance (fixture data for regressions)."""
    from sdos import models
    from sdos.datasets import load_dataset

    return [
        models.glm_binomial(),
        models.heart_transplants(),
        models.hospitals(),
        models.ionosphere(load_dataset(DATA_DIR / "ionosphere_sample.csv", "ionosphere")),
        models.concrete(load_dataset(DATA_DIR / "concrete_sample.csv", "concrete")),
        models.gaussian_toy(),
    ]


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
