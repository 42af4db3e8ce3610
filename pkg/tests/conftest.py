import numpy as np
import pytest

from eden.data import EVENT_TYPES, EventLabel, PatientRecord, Visit, encode
from eden.data.vocabulary import VOCAB


def visit(t, *codes):
    return Visit(t, frozenset(codes))


def named_visit(t, *names):
    return Visit(t, VOCAB.indices(names))


def record(pid, visits, labels):
    """``labels`` lists (observed, time) per event type in EVENT_TYPES order."""
    return PatientRecord(pid, list(visits), {s: EventLabel(bool(y), t) for s, (y, t) in zip(EVENT_TYPES, labels)})


def toy_records():
    """One censored patient, one event at the first visit, one interior event (plus a second type)."""
    return [
        record("a", [visit(0, 0, 3), visit(40, 5), visit(400, 7, 1)], [(0, 400), (0, 400), (0, 400)]),
        record("b", [visit(0, 2), visit(30, 9, 4), visit(95, 1)], [(1, 0), (0, 95), (0, 95)]),
        record("c", [visit(0, 3), visit(12, 4), visit(700, 8, 2), visit(900, 2)], [(0, 900), (1, 700), (1, 12)]),
    ]


@pytest.fixture
def toy_data():
    recs = toy_records()
    return recs, encode(recs, p=10)


def perturbed_params(cfg, seed=0, scale=0.3):
    from eden.model import init_params

    params = init_params(cfg, np.random.default_rng(seed))
    noise = np.random.default_rng(seed + 1)
    return {k: v + noise.normal(0.0, scale, v.shape) for k, v in params.items()}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
