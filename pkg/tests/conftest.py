import random
from pathlib import Path

import numpy as np
import pytest

from rodgen.fixtures import fire_truck_record, write_demo_corpus

DATA = Path(__file__).parent / "data"


@pytest.fixture
def golden_response() -> str:
    return (DATA / "golden_global_response.txt").read_text(encoding="utf-8")


@pytest.fixture
def fire_truck():
    return fire_truck_record()


@pytest.fixture
def demo_corpus(tmp_path):
    return write_demo_corpus(tmp_path / "corpus")


@pytest.fixture
def demo_config(demo_corpus):
    from rodgen.config import validate_config
    return validate_config(mock=True, split_ratios=[1, 1, 1],
                           inputs={k: str(v) for k, v in demo_corpus.items()})


def random_image(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


@pytest.fixture
def rng():
    return random.Random(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
