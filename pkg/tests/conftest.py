import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from drsnet.data import synthetic_corpus, write_corpus

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(autouse=True)
def _seed_everything():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def acceptance_line():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""
    def record(criterion: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'} | {criterion} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def corpus_dir(tmp_path):
    root = tmp_path / "corpus"
    write_corpus(synthetic_corpus(12, (128, 96), seed=5), root, "paired")
    return root
