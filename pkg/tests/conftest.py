import numpy as np
import pytest

from bictriage import datagen
from bictriage.samples import LabeledSample


def make(bics, label=None, id=None, _counter=[0]):
    if id is None:
        _counter[0] += 1
        id = f"s{_counter[0]}"
    return LabeledSample(id, tuple(bics), label)


def random_samples(rng, n, m, p=0.3, labeled=True):
    out = []
    for i in range(n):
        bics = tuple(np.flatnonzero(rng.random(m) < p).tolist())
        label = int(rng.random() < 0.5) if labeled else None
        out.append(LabeledSample(f"r{i}", bics, label))
    return out


@pytest.fixture
def small_spec():
    return datagen.default_profile(m_count=24, samples_per_day=300, days=6, seed=11)


@pytest.fixture
def small_dataset(tmp_path, small_spec):
    out = tmp_path / "data"
    datagen.write_dataset(small_spec, out)
    return out


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
