"""Censoring-aware training criterion.

``total = a1*L1 + a2*L2 + a3*L3 + a4*L4`` where L1 is a class-balanced BCE
between predicted and true event rates, L2/L3 pin the 0->1 step of observed
events, and L4 keeps censored sequences at zero. Every component returns its
value and, on request, its gradient with respect to the predicted rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .survival import HAZARD_EPS

DEFAULT_ALPHA = (10.0, 1.0, 1.0, 1.0)


@dataclass
class BatchTargets:
    w: np.ndarray          # (B, T, S) true event rates
    mask: np.ndarray       # (B, T) real-visit mask
    lengths: np.ndarray    # (B,)
    observed: np.ndarray   # (B, S) bool
    mu: np.ndarray         # (B, S) zero-based event visit, -1 if censored

    @classmethod
    def from_data(cls, data) -> "BatchTargets":
        return cls(data.targets, data.mask, data.lengths, data.observed, data.mu)


@dataclass
class LossWeights:
    alpha: tuple[float, float, float, float] = DEFAULT_ALPHA
    beta: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if len(self.alpha) != 4 or any(a < 0 for a in self.alpha):
            raise ValueError("alpha must be four non-negative reals")
        b0, b1 = self.beta
        if not (0 < b0 < 1 and 0 < b1 < 1 and abs(b0 + b1 - 1.0) < 1e-12):
            raise ValueError("beta must be two weights in (0, 1) summing to one")


def compute_betas(targets: Iterable[np.ndarray]) -> tuple[float, float]:
    """Class-balancing weights from per-patient (N_i, S) target arrays.

    beta~_1 = cells / ones, beta~_0 = cells / zeros, then normalised to sum to one.
    """
    cells = ones = 0.0
    for w in targets:
        w = np.asarray(w, dtype=np.float64)
        cells += w.size
        ones += w.sum()
    zeros = cells - ones
    if ones == 0 or zeros == 0:
        raise ValueError(f"targets need both classes (ones={ones:g}, zeros={zeros:g})")
    bt1, bt0 = cells / ones, cells / zeros
    return bt0 / (bt0 + bt1), bt1 / (bt0 + bt1)


def betas_from_data(data) -> tuple[float, float]:
    return compute_betas(data.targets[b, : data.lengths[b]] for b in range(data.n))


def l1_weighted_bce(wt, tg: BatchTargets, beta, grad: bool = False):
    b0, b1 = beta
    bsz, _, s = wt.shape
    wc = np.clip(wt, HAZARD_EPS, 1.0 - HAZARD_EPS)
    w = tg.w
    # per-cell weight 1 / (B * N_i * S), zero on padding
    cell = tg.mask[:, :, None] / (bsz * s * tg.lengths[:, None, None].astype(np.float64))
    ll = b1 * w * np.log(wc) + b0 * (1.0 - w) * np.log1p(-wc)
    value = -float((cell * ll).sum())
    if not grad:
        return value
    g = -cell * (b1 * w / wc - b0 * (1.0 - w) / (1.0 - wc)) * (wt == wc)
    return value, g


def _at(wt, b, k, s):
    return wt[b, k, s]


def l2_event_hit(wt, tg: BatchTargets, grad: bool = False):
    b, s = np.nonzero(tg.observed)
    g = np.zeros_like(wt) if grad else None
    if len(b) == 0:
        return (0.0, g) if grad else 0.0
    v = _at(wt, b, tg.mu[b, s], s)
    value = float(np.mean((1.0 - v) ** 2))
    if not grad:
        return value
    np.add.at(g, (b, tg.mu[b, s], s), -2.0 * (1.0 - v) / len(b))
    return value, g


def l3_pre_event_zero(wt, tg: BatchTargets, grad: bool = False):
    """Events at the first visit keep their unit in the mean but contribute zero."""
    b, s = np.nonzero(tg.observed)
    g = np.zeros_like(wt) if grad else None
    if len(b) == 0:
        return (0.0, g) if grad else 0.0
    prev = tg.mu[b, s] - 1
    keep = prev >= 0
    v = _at(wt, b[keep], prev[keep], s[keep])
    value = float(np.sum(v ** 2) / len(b))
    if not grad:
        return value
    np.add.at(g, (b[keep], prev[keep], s[keep]), 2.0 * v / len(b))
    return value, g


def l4_censored_zero(wt, tg: BatchTargets, grad: bool = False):
    b, s = np.nonzero(~tg.observed)
    g = np.zeros_like(wt) if grad else None
    if len(b) == 0:
        return (0.0, g) if grad else 0.0
    last = tg.lengths[b] - 1
    v = _at(wt, b, last, s)
    value = float(np.mean(v ** 2))
    if not grad:
        return value
    np.add.at(g, (b, last, s), 2.0 * v / len(b))
    return value, g


@dataclass
class LossResult:
    total: float
    components: tuple[float, float, float, float]
    grad: np.ndarray | None = field(default=None, repr=False)


def total_loss(wt, tg: BatchTargets, weights: LossWeights, grad: bool = False) -> LossResult:
    a = weights.alpha
    parts = [
        l1_weighted_bce(wt, tg, weights.beta, grad),
        l2_event_hit(wt, tg, grad),
        l3_pre_event_zero(wt, tg, grad),
        l4_censored_zero(wt, tg, grad),
    ]
    if not grad:
        comps = tuple(parts)
        return LossResult(float(np.dot(a, comps)), comps)
    comps = tuple(v for v, _ in parts)
    g = sum(ak * gk for ak, (_, gk) in zip(a, parts))
    return LossResult(float(np.dot(a, comps)), comps, g)
