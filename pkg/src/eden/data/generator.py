"""Synthetic breast-cancer claims cohorts with known relapse labels.

Each patient starts at first surgery (day 0), goes through an initial
treatment phase (re-excision, chemotherapy, radiotherapy, hormone therapy)
and then routine follow-up with heavy-tailed gaps between visits. Relapses
inject type-specific code signatures at the relapse visit and a treatment
course after it:

* metastatic: "Metastasis" diagnosis and/or a metastatic-only drug
* locoregional: a breast surgery code at least 400 days after day 0
* second cancer: "Other cancer" diagnosis

With probability ``noise`` a signature is perturbed: either its primary code
is omitted at the relapse visit, or the whole signature is delayed by 15-60
days while the relapse visit keeps only non-specific codes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from ..seeding import stream
from .records import EventLabel, PatientRecord, Visit, merge_consecutive, validate_record
from .vocabulary import BREAST_SURGERY, EVENT_TYPES, METASTATIC_DRUGS, VOCAB


class InfeasibleSpecError(ValueError):
    pass


@dataclass
class GeneratorSpec:
    n_patients: int = 1000
    seed: int = 0
    locoregional_rate: float = 0.056
    metastatic_rate: float = 0.061
    second_cancer_rate: float = 0.038
    censoring_rate: float = 0.864
    time_to_locoregional: float = 1337.0
    time_to_metastatic: float = 1171.0
    time_to_second_cancer: float = 1274.0
    time_to_censor: float = 1814.0
    noise: float = 0.1

    def rate(self, event_type: str) -> float:
        return getattr(self, f"{event_type}_rate")

    def mean_time(self, event_type: str) -> float:
        return getattr(self, f"time_to_{event_type}")

    def check(self) -> None:
        if self.n_patients < 1:
            raise InfeasibleSpecError("n_patients must be >= 1")
        if not 0.0 <= self.noise <= 1.0:
            raise InfeasibleSpecError("noise must lie in [0, 1]")
        rates = [self.rate(s) for s in EVENT_TYPES]
        if any(not 0.0 <= r < 1.0 for r in rates) or not 0.0 < self.censoring_rate <= 1.0:
            raise InfeasibleSpecError("rates must lie in [0, 1)")
        try:
            _event_mixture(rates, self.censoring_rate)
        except ValueError as e:
            raise InfeasibleSpecError(str(e)) from None
        for s in EVENT_TYPES:
            if self.mean_time(s) <= _ONSET[s]:
                raise InfeasibleSpecError(f"time_to_{s} must exceed {_ONSET[s]} days")
        if self.time_to_censor <= _MIN_FOLLOWUP:
            raise InfeasibleSpecError(f"time_to_censor must exceed {_MIN_FOLLOWUP} days")


SPEC_KEYS = tuple(f.name for f in fields(GeneratorSpec))

_ONSET = {"locoregional": 400, "metastatic": 120, "second_cancer": 120}
_MIN_FOLLOWUP = 180

_INITIAL_SURGERY = sorted(BREAST_SURGERY)
_ADJUVANT_EARLY = ["Epirubicine", "Cyclophosphamide", "Fluorouracile", "Doxorubicine"]
_ADJUVANT_LATE = ["Docetaxel", "Paclitaxel"]
_HORMONE = ["Tamoxifen", "Letrozole", "Anastrozole", "Exemestane"]
_OVARIAN = ["Gosereline", "Leuproreline", "Triptoreline"]
_MET_DRUGS = sorted(METASTATIC_DRUGS)
_NONSPECIFIC = ["Breast imaging", "Personal history of BC", "Whole body imaging", "Node"]


def _event_mixture(rates, censoring_rate):
    """Joint law over event-type subsets matching every marginal rate and the censored fraction.

    A patient has at least one event with probability 1 - censoring_rate; one
    primary type is then drawn with probabilities ``primary`` and every other
    type is added independently with probability ``extra``.
    """
    any_event = 1.0 - censoring_rate
    if any_event == 0.0:
        if any(rates):
            raise ValueError("censoring_rate 1 leaves no room for events")
        return any_event, np.zeros(len(rates)), 0.0
    cond = np.asarray(rates) / any_event
    if len(rates) == 1:
        if abs(cond[0] - 1.0) > 1e-9:
            raise ValueError("with one event type its rate must equal 1 - censoring_rate")
        return any_event, np.ones(1), 0.0
    extra = (cond.sum() - 1.0) / (len(rates) - 1)
    if cond.sum() < 1.0 - 1e-9:
        raise ValueError(
            f"event rates sum to {sum(rates):.3f}, below the uncensored fraction {any_event:.3f}"
        )
    if np.any(cond > 1.0) or np.any(cond < extra - 1e-12):
        raise ValueError("event rates and censoring_rate admit no joint distribution")
    primary = np.clip((cond - extra) / (1.0 - extra), 0.0, None)
    return any_event, primary / primary.sum(), max(extra, 0.0)


class _Timeline:
    """Day -> code-name set accumulator."""

    def __init__(self):
        self.days: dict[int, set[str]] = {}

    def add(self, day, *codes):
        self.days.setdefault(int(day), set()).update(codes)


def _gamma_with_mean(rng, onset, mean, shape):
    return onset + rng.gamma(shape, (mean - onset) / shape)


def _initial_treatment(rng, tl: _Timeline) -> int:
    """Surgery, adjuvant chemo/radio; returns the day adjuvant therapy ends."""
    surgery = rng.choice(_INITIAL_SURGERY)
    tl.add(0, surgery, "Breast Cancer")
    if rng.random() < 0.3:
        tl.add(0, "Node")
    day = 0
    if rng.random() < 0.2:
        day = int(rng.integers(10, 60))
        tl.add(day, rng.choice(["Mastectomy", "Axillary surgery"]))
    her2 = rng.random() < 0.15
    if rng.random() < 0.45:
        day += int(rng.integers(20, 45))
        n_cycles = int(rng.integers(4, 9))
        for c in range(n_cycles):
            drug = _ADJUVANT_EARLY[int(rng.integers(len(_ADJUVANT_EARLY)))] if c < n_cycles // 2 else rng.choice(_ADJUVANT_LATE)
            codes = ["Chemotherapy", drug]
            if her2:
                codes.append("Trastuzumab")
            tl.add(day, *codes)
            day += int(rng.integers(14, 29))
    if rng.random() < 0.8:
        day += int(rng.integers(15, 45))
        for _ in range(int(rng.integers(2, 6))):
            tl.add(day, "Radiotherapy")
            day += int(rng.integers(5, 10))
            if rng.random() < 0.3:
                tl.add(day, "Radiotherapy", "Breast imaging")
                day += int(rng.integers(5, 10))
    if her2:
        for _ in range(int(rng.integers(3, 8))):
            day += int(rng.integers(21, 28))
            tl.add(day, "Trastuzumab", *(["Pertuzumab"] if rng.random() < 0.3 else []))
    return day


def _follow_up(rng, tl: _Timeline, start: int, end: int) -> None:
    hormone = rng.choice(_HORMONE) if rng.random() < 0.7 else None
    ovarian = rng.choice(_OVARIAN) if hormone == "Tamoxifen" and rng.random() < 0.3 else None
    day = start
    next_imaging = 365
    while True:
        # heavy-tailed gap, median ~50 days
        day += max(1, int(round(rng.lognormal(math.log(50.0), 0.9))))
        if day > end:
            break
        codes = []
        if hormone is not None and rng.random() < 0.8:
            codes.append(hormone)
            if ovarian and rng.random() < 0.5:
                codes.append(ovarian)
            if rng.random() < 0.02:
                hormone = rng.choice(_HORMONE)
        if day >= next_imaging:
            codes.append("Breast imaging")
            next_imaging += 365
        u = rng.random()
        if u < 0.06:
            codes.append("Personal history of BC")
        elif u < 0.09:
            codes.append("Whole body imaging")
        elif u < 0.11:
            # benign work-up: looks like a locoregional relapse start
            codes.append(rng.choice(["Breast biopsy", "Breast cytology"]))
        elif u < 0.12:
            codes.append("Node cytology")
        if not codes:
            codes.append(rng.choice(_NONSPECIFIC[:2]))
        tl.add(day, *codes)


def _relapse(rng, tl: _Timeline, kind: str, day: int, end: int, noise: float) -> tuple[int, int]:
    """Inject a relapse at ``day``; returns (event day, last day used)."""
    mode = "clean"
    if rng.random() < noise:
        mode = "omit" if rng.random() < 0.5 else "delay"
    sig_day = day
    if mode == "delay":
        sig_day = day + int(rng.integers(15, 61))

    if kind == "metastatic":
        drug = rng.choice(_MET_DRUGS)
        primary = ["Metastasis"]
        rest = [drug] if rng.random() < 0.5 else ["Whole body imaging"]
        placeholder = ["Whole body imaging"]
        course = [[drug], [drug, "Chemotherapy"], [drug, "Metastasis"], ["Palliative care", drug]]
    elif kind == "locoregional":
        primary = [rng.choice(_INITIAL_SURGERY)]
        rest = [rng.choice(["Breast biopsy", "Breast cytology", "Breast imaging"])]
        placeholder = ["Breast biopsy", "Breast imaging"]
        course = [["Radiotherapy"], ["Radiotherapy", "Breast imaging"], ["Chemotherapy", rng.choice(_ADJUVANT_LATE)]]
    else:
        primary = ["Other cancer"]
        rest = ["Whole body imaging"] if rng.random() < 0.5 else []
        placeholder = ["Whole body imaging", "Breast imaging"]
        course = [["Other cancer"], ["Chemotherapy", rng.choice(_ADJUVANT_LATE)], ["Other cancer", "Radiotherapy"]]

    if mode == "clean":
        tl.add(day, *primary, *rest)
    elif mode == "omit":
        tl.add(day, *(rest or placeholder))
    else:
        tl.add(day, *placeholder)
        tl.add(sig_day, *primary, *rest)

    last = sig_day
    for _ in range(int(rng.integers(2, 7))):
        last += int(rng.integers(21, 40))
        tl.add(last, *course[int(rng.integers(len(course)))])
    return day, last


def generate_patient(spec: GeneratorSpec, index: int) -> PatientRecord:
    rng = stream(spec.seed, "generation", index)
    follow = _gamma_with_mean(rng, _MIN_FOLLOWUP, spec.time_to_censor, 3.0)
    any_event, primary, extra = _event_mixture([spec.rate(s) for s in EVENT_TYPES], spec.censoring_rate)
    kinds = set()
    if rng.random() < any_event:
        first = int(rng.choice(len(EVENT_TYPES), p=primary))
        kinds = {s for j, s in enumerate(EVENT_TYPES) if j == first or rng.random() < extra}
    event_days: dict[str, int] = {}
    for s in EVENT_TYPES:
        if s in kinds:
            event_days[s] = int(round(_gamma_with_mean(rng, _ONSET[s], spec.mean_time(s), 4.0)))

    tl = _Timeline()
    adjuvant_end = _initial_treatment(rng, tl)
    # keep every relapse after initial therapy and inside follow-up
    for s in list(event_days):
        event_days[s] = max(event_days[s], adjuvant_end + 30)
    end = int(round(follow))
    for s in EVENT_TYPES:
        if s in event_days:
            _, last = _relapse(rng, tl, s, event_days[s], end, spec.noise)
            end = max(end, last + int(rng.integers(30, 200)))
    _follow_up(rng, tl, adjuvant_end, end)
    # date of last news
    tl.add(end, rng.choice(_NONSPECIFIC[:2]))

    days = sorted(d for d in tl.days if d <= end)
    visits = [Visit(d, VOCAB.indices(tl.days[d])) for d in days]
    # an event visit identical to its predecessor would be merged away
    event_set = set(event_days.values())
    for k in range(1, len(visits)):
        if visits[k].time in event_set and visits[k].codes == visits[k - 1].codes:
            extra = next(c for c in _NONSPECIFIC + ["Node cytology"] if VOCAB.index(c) not in visits[k].codes)
            visits[k] = Visit(visits[k].time, visits[k].codes | {VOCAB.index(extra)})
    visits = merge_consecutive(visits)
    last_day = visits[-1].time
    labels = {
        s: EventLabel(True, event_days[s]) if s in event_days else EventLabel(False, last_day)
        for s in EVENT_TYPES
    }
    rec = PatientRecord(f"P{index:06d}", visits, labels)
    validate_record(rec)
    return rec


def generate_cohort(spec: GeneratorSpec) -> list[PatientRecord]:
    spec.check()
    return [generate_patient(spec, i) for i in range(spec.n_patients)]


def split_cohort(records, ratio=(3, 1, 1)):
    """Deterministic contiguous train/val/test split (patients are i.i.d.)."""
    n = len(records)
    total = sum(ratio)
    a = n * ratio[0] // total
    b = a + n * ratio[1] // total
    return records[:a], records[a:b], records[b:]
