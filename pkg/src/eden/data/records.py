"""Patient records, visit merging, the line-oriented cohort format and cohort statistics."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .vocabulary import EVENT_TYPES, VOCAB, Vocabulary


class CohortFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Visit:
    time: int
    codes: frozenset[int]


@dataclass(frozen=True)
class EventLabel:
    observed: bool
    time: int


@dataclass
class PatientRecord:
    id: str
    visits: list[Visit]
    labels: dict[str, EventLabel] = field(default_factory=dict)

    @property
    def times(self) -> list[int]:
        return [v.time for v in self.visits]

    @property
    def censored(self) -> bool:
        """True when no event of any type was observed."""
        return not any(lab.observed for lab in self.labels.values())

    def event_index(self, event_type: str) -> int | None:
        """Zero-based index of the visit at the event time, or None if censored."""
        lab = self.labels[event_type]
        if not lab.observed:
            return None
        return self.times.index(lab.time)


def validate_record(rec: PatientRecord, event_types: Sequence[str] = EVENT_TYPES, p: int = len(VOCAB)) -> None:
    if not rec.visits:
        raise ValueError(f"{rec.id}: no visits")
    times = rec.times
    if times[0] != 0:
        raise ValueError(f"{rec.id}: first visit must be at day 0, got {times[0]}")
    for a, b in zip(times, times[1:]):
        if b <= a:
            raise ValueError(f"{rec.id}: visit times must strictly increase ({a} then {b})")
    for v in rec.visits:
        if not v.codes:
            raise ValueError(f"{rec.id}: empty visit at day {v.time}")
        if min(v.codes) < 0 or max(v.codes) >= p:
            raise ValueError(f"{rec.id}: code index out of range at day {v.time}")
    if set(rec.labels) != set(event_types):
        raise ValueError(f"{rec.id}: labels {sorted(rec.labels)} do not match event types {list(event_types)}")
    tset = set(times)
    for s, lab in rec.labels.items():
        if lab.observed and lab.time not in tset:
            raise ValueError(f"{rec.id}: {s} event at day {lab.time} matches no visit")
        if not lab.observed and lab.time != times[-1]:
            raise ValueError(f"{rec.id}: censored {s} must carry the last visit time {times[-1]}, got {lab.time}")


def merge_consecutive(visits: Sequence[Visit]) -> list[Visit]:
    """Collapse runs of consecutive visits with identical code sets onto the first of the run.

    Visits sharing a day are first pooled into one visit.
    """
    pooled: list[Visit] = []
    for v in visits:
        if pooled and v.time < pooled[-1].time:
            raise ValueError("visits must be sorted by time")
        if pooled and v.time == pooled[-1].time:
            pooled[-1] = Visit(v.time, pooled[-1].codes | v.codes)
        else:
            pooled.append(v)
    out: list[Visit] = []
    for v in pooled:
        if out and v.codes == out[-1].codes:
            continue
        out.append(v)
    return out


# -- line-oriented cohort files -------------------------------------------------

def format_record(rec: PatientRecord, vocab: Vocabulary = VOCAB) -> str:
    labels = ";".join(f"{s}:{int(lab.observed)}:{lab.time}" for s, lab in rec.labels.items())
    visits = ";".join(
        f"{v.time}:" + ",".join(vocab.names[c] for c in sorted(v.codes)) for v in rec.visits
    )
    return f"{rec.id}\t{labels}\t{visits}"


def parse_record(line: str, vocab: Vocabulary = VOCAB, lineno: int = 0) -> PatientRecord:
    def fail(msg):
        raise CohortFormatError(f"line {lineno}: {msg}")

    parts = line.split("\t")
    if len(parts) != 3:
        fail(f"expected 3 tab-separated fields, got {len(parts)}")
    pid, label_field, visit_field = parts
    if not pid:
        fail("empty patient id")
    labels: dict[str, EventLabel] = {}
    for item in label_field.split(";"):
        bits = item.split(":")
        if len(bits) != 3 or bits[1] not in ("0", "1"):
            fail(f"malformed label {item!r}")
        try:
            labels[bits[0]] = EventLabel(bits[1] == "1", int(bits[2]))
        except ValueError:
            fail(f"malformed label time in {item!r}")
    visits = []
    for item in visit_field.split(";"):
        day, sep, codes = item.partition(":")
        if not sep or not codes:
            fail(f"malformed visit {item!r}")
        try:
            t = int(day)
        except ValueError:
            fail(f"malformed visit time {day!r}")
        idx = []
        for name in codes.split(","):
            if name not in vocab:
                fail(f"unknown code name {name!r}")
            idx.append(vocab.index(name))
        visits.append(Visit(t, frozenset(idx)))
    rec = PatientRecord(pid, visits, labels)
    try:
        validate_record(rec, event_types=tuple(labels), p=len(vocab))
    except ValueError as e:
        fail(str(e))
    return rec


def write_cohort(records: Iterable[PatientRecord], path, vocab: Vocabulary = VOCAB) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(format_record(rec, vocab) + "\n")
    os.replace(tmp, path)


def read_cohort(path, vocab: Vocabulary = VOCAB) -> list[PatientRecord]:
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            records.append(parse_record(line, vocab, lineno))
    return records


# -- statistics -------------------------------------------------------------------

@dataclass
class CohortStats:
    n_patients: int
    events_per_patient: float
    codes_per_event: float
    censoring_rate: float
    time_to_censor: float
    event_rate: dict[str, float]
    time_to_event: dict[str, float]

    def rows(self) -> list[tuple[str, float]]:
        out = [
            ("n_patients", self.n_patients),
            ("events_per_patient", self.events_per_patient),
            ("codes_per_event", self.codes_per_event),
            ("censoring_rate", self.censoring_rate),
            ("time_to_censor", self.time_to_censor),
        ]
        for s in self.event_rate:
            out.append((f"{s}_rate", self.event_rate[s]))
            out.append((f"time_to_{s}", self.time_to_event[s]))
        return out


def compute_stats(records: Sequence[PatientRecord]) -> CohortStats:
    """Table-4 style summary. "Events" here are medical visits, as in the claims literature."""
    if not records:
        raise ValueError("empty cohort")
    event_types = list(records[0].labels)
    n_visits = np.array([len(r.visits) for r in records], dtype=float)
    n_codes = sum(len(v.codes) for r in records for v in r.visits)
    censored = [r for r in records if r.censored]
    rate, tte = {}, {}
    for s in event_types:
        obs = [r.labels[s].time for r in records if r.labels[s].observed]
        rate[s] = len(obs) / len(records)
        tte[s] = float(np.mean(obs)) if obs else float("nan")
    return CohortStats(
        n_patients=len(records),
        events_per_patient=float(n_visits.mean()),
        codes_per_event=n_codes / float(n_visits.sum()),
        censoring_rate=len(censored) / len(records),
        time_to_censor=float(np.mean([r.visits[-1].time for r in censored])) if censored else float("nan"),
        event_rate=rate,
        time_to_event=tte,
    )
