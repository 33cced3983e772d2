import numpy as np
import pytest
import torch

from anicolor.synthgen import GenConfig, generate_clip

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_config():
    return GenConfig(T=6, H=32, W=32)


@pytest.fixture(scope="session")
def small_clip(small_config):
    return generate_clip(small_config, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
