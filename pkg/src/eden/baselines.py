"""Reference predictors: hand-written trigger-code rules and the plain LSTM."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data.records import PatientRecord
from .data.vocabulary import BREAST_SURGERY, EVENT_TYPES, METASTATIC_DRUGS, VOCAB, Vocabulary
from .model import ModelConfig
from .survival import Prediction
from .trainer import TrainConfig, TrainResult, train


@dataclass(frozen=True)
class AdhocRuleSet:
    metastatic_trigger_codes: frozenset[str] = frozenset({"Metastasis"}) | METASTATIC_DRUGS
    locoregional_trigger_codes: frozenset[str] = BREAST_SURGERY
    locoregional_min_delay: int = 365
    second_cancer_trigger_codes: frozenset[str] = frozenset({"Other cancer"})

    def check(self, vocab: Vocabulary = VOCAB) -> None:
        for name in (self.metastatic_trigger_codes | self.locoregional_trigger_codes
                     | self.second_cancer_trigger_codes):
            if name not in vocab:
                raise ValueError(f"trigger code {name!r} is not in the vocabulary")
        if self.locoregional_min_delay <= 0:
            raise ValueError("locoregional_min_delay must be positive")


def _first_visit(record: PatientRecord, codes: set[int], after: int = 0) -> int | None:
    for v in record.visits:
        if v.time >= after and v.codes & codes:
            return v.time
    return None


def adhoc_predict(record: PatientRecord, rules: AdhocRuleSet = AdhocRuleSet(),
                  vocab: Vocabulary = VOCAB) -> dict[str, Prediction]:
    """One prediction per event type; scores are 0/1 and dates are trigger visits."""
    met = set(vocab.indices(rules.metastatic_trigger_codes))
    surg = set(vocab.indices(rules.locoregional_trigger_codes))
    other = set(vocab.indices(rules.second_cancer_trigger_codes))
    anchor = _first_visit(record, surg)
    dates = {
        "metastatic": _first_visit(record, met),
        "locoregional": _first_visit(record, surg, (anchor or 0) + rules.locoregional_min_delay),
        "second_cancer": _first_visit(record, other),
    }
    return {
        s: Prediction(1.0, 1, float(t)) if t is not None else Prediction(0.0, 0, None)
        for s, t in dates.items()
    }


def adhoc_rates(record: PatientRecord, prediction: Prediction) -> np.ndarray:
    """Step event-rate curve on the visit grid: 1 from the predicted date on."""
    times = np.asarray(record.times, dtype=np.float64)
    if not prediction.decision:
        return np.zeros(len(times))
    return (times >= prediction.time).astype(np.float64)


def adhoc_cohort(records: Sequence[PatientRecord], rules: AdhocRuleSet = AdhocRuleSet(),
                 event_types=EVENT_TYPES):
    """(predictions, rates) keyed by event type, in patient order."""
    preds = [adhoc_predict(r, rules) for r in records]
    return (
        {s: [p[s] for p in preds] for s in event_types},
        {s: [adhoc_rates(r, p[s]) for r, p in zip(records, preds)] for s in event_types},
    )


LSTM_BASELINE = ModelConfig(n_emb=50, n_hidden=128, fc_size=1024, dropout_rate=0.5,
                            time_aware=False, bidirectional=False, survival_output=False)


def lstm_train_config(cfg: TrainConfig) -> TrainConfig:
    """Plain forward LSTM with a sigmoid head, weighted BCE only, lr 0.001."""
    return replace(cfg, learning_rate=0.001, time_aware=False, bidirectional=False,
                   survival_output=False, use_L2=False, use_L3=False, use_L4=False)


def lstm_baseline(train_data, val_data, cfg: TrainConfig, event_names=EVENT_TYPES, **kw) -> TrainResult:
    return train(LSTM_BASELINE, train_data, val_data, lstm_train_config(cfg), event_names, **kw)


PREDICTION_COLUMNS = ("patient_id", "event_type", "score", "decision", "predicted_day")


def write_predictions(path, records, predictions: dict[str, list[Prediction]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(PREDICTION_COLUMNS)
        for s, preds in predictions.items():
            for r, p in zip(records, preds):
                out.writerow([r.id, s, f"{p.score:.6f}", p.decision,
                              "" if p.time is None else int(p.time)])
