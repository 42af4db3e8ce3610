"""Glue between trained networks, predictions and metric reports."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .data.arrays import encode
from .data.vocabulary import EVENT_TYPES
from .metrics import MetricsReport, predictions_from_rates, report
from .model import ModelConfig, Network
from .trainer import ABLATIONS, TrainConfig, TrainResult, train

log = logging.getLogger(__name__)


def network_rates(net: Network, records, event_types=EVENT_TYPES, data=None) -> dict[str, list[np.ndarray]]:
    """Per event type, the unpadded event-rate curve of each patient."""
    data = data if data is not None else encode(records, event_types, net.cfg.vocab_size)
    w = net.predict(data)
    return {s: [w[b, : data.lengths[b], j].copy() for b in range(data.n)] for j, s in enumerate(event_types)}


def evaluate_network(net: Network, thresholds, records, event_types=EVENT_TYPES, grid=None):
    """(predictions, rates, report) for ``records`` at the given per-type thresholds."""
    thr = dict(zip(event_types, thresholds)) if not isinstance(thresholds, dict) else thresholds
    rates = network_rates(net, records, event_types)
    preds = predictions_from_rates(records, rates, thr)
    return preds, rates, report(records, preds, rates, thr, grid)


@dataclass
class AblationRow:
    variant: str
    result: TrainResult
    report: MetricsReport


def ablation_suite(model_cfg: ModelConfig, train_records, val_records, test_records, cfg: TrainConfig,
                   event_types=EVENT_TYPES, variants=None) -> list[AblationRow]:
    """Train each ablation variant with the same seed and evaluate it on the test split."""
    dtr = encode(train_records, event_types, model_cfg.vocab_size)
    dva = encode(val_records, event_types, model_cfg.vocab_size)
    rows = []
    for name, flags in ABLATIONS:
        if variants is not None and name not in variants:
            continue
        res = train(model_cfg, dtr, dva, replace(cfg, **flags), event_types)
        _, _, rep = evaluate_network(res.network, res.thresholds, test_records, event_types)
        log.info("%s: test macro-F1 %.3f", name, rep.macro_f1)
        rows.append(AblationRow(name, res, rep))
    return rows
