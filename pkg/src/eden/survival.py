"""Discrete hazards -> event-rate function, targets, and thresholded read-out."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HAZARD_EPS = 1e-12
THRESHOLD_GRID = np.round(np.arange(1, 20) * 0.05, 2)


def chain_rule(h, axis: int = -1) -> np.ndarray:
    """W(tau_r) = 1 - prod_{k<=r} (1 - h(tau_k)) along ``axis``.

    Entries must lie in [0, 1 - 1e-12]; a hazard of one makes the running
    product degenerate.
    """
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0) or np.any(h > 1.0 - HAZARD_EPS) or not np.all(np.isfinite(h)):
        raise ValueError("hazards must lie in [0, 1 - 1e-12]")
    return 1.0 - np.cumprod(1.0 - h, axis=axis)


def chain_rule_backward(h, grad_w, axis: int = -1) -> np.ndarray:
    """Vector-Jacobian product of :func:`chain_rule`.

    dL/dh_k = sum_{r>=k} dL/dW_r * prod_{j<=r, j!=k} (1 - h_j).
    """
    h = np.moveaxis(np.asarray(h, dtype=np.float64), axis, -1)
    g = np.moveaxis(np.asarray(grad_w, dtype=np.float64), axis, -1)
    surv = np.cumprod(1.0 - h, axis=-1)
    tail = np.flip(np.cumsum(np.flip(g * surv, -1), -1), -1)
    return np.moveaxis(tail / (1.0 - h), -1, axis)


def recover_hazard(w) -> np.ndarray:
    """Inverse of :func:`chain_rule` along the last axis."""
    w = np.asarray(w, dtype=np.float64)
    prev = np.concatenate([np.zeros_like(w[..., :1]), w[..., :-1]], axis=-1)
    return (w - prev) / (1.0 - prev)


@dataclass
class Prediction:
    score: float
    decision: int
    time: float | None

    def __post_init__(self):
        if (self.time is not None) != bool(self.decision):
            raise ValueError("a predicted time is present iff the decision is positive")


def extract_prediction(w, visit_times, threshold: float) -> Prediction:
    """Score = max of W (its last value); event date = first visit where W >= threshold."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ValueError("empty sequence")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    score = float(w.max())
    if score > threshold:
        mu = int(np.argmax(w >= threshold))
        return Prediction(score, 1, float(visit_times[mu]))
    return Prediction(score, 0, None)


def target_event_rate(observed: bool, event_time, visit_times) -> np.ndarray:
    """Ground-truth W: zeros when censored, else the 0->1 step at the event visit."""
    times = np.asarray(visit_times)
    if not observed:
        return np.zeros(len(times))
    if event_time not in set(times.tolist()):
        raise ValueError(f"event time {event_time} matches no visit time")
    return (times >= event_time).astype(np.float64)
