"""Detection, dating and survival metrics, Kaplan-Meier curves and code impact."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .survival import THRESHOLD_GRID, Prediction, extract_prediction

METRIC_COLUMNS = ("AUC", "Acc", "delta_T_pred_minus_true", "F1", "Brier", "C")


def auc(scores, truths) -> float | None:
    """Mann-Whitney AUC with ties counted one half; None for single-class input."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths).astype(bool)
    n1 = int(truths.sum())
    n0 = len(truths) - n1
    if n1 == 0 or n0 == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[truths].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def f1_acc(decisions, truths) -> tuple[float, float]:
    d = np.asarray(decisions).astype(bool)
    y = np.asarray(truths).astype(bool)
    tp = int(np.sum(d & y))
    fp = int(np.sum(d & ~y))
    fn = int(np.sum(~d & y))
    acc = float(np.mean(d == y)) if len(y) else 0.0
    denom = 2 * tp + fp + fn
    return (2.0 * tp / denom if denom else 0.0), acc


def delta_t(pred_times, true_times, decisions, truths) -> float | None:
    """Mean signed dating error (predicted - true) over true positives."""
    d = np.asarray(decisions).astype(bool)
    y = np.asarray(truths).astype(bool)
    tp = d & y
    if not tp.any():
        return None
    pt = np.asarray(pred_times, dtype=np.float64)[tp]
    tt = np.asarray(true_times, dtype=np.float64)[tp]
    return float(np.mean(pt - tt))


def concordance(scores, observed, times) -> tuple[float, int]:
    """Fraction of comparable pairs ordered by risk score, and the pair count.

    (i, j) is comparable when i had the event and T_i < T_j; it is concordant
    when i scores higher, and ties count one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    e = np.asarray(observed).astype(bool)
    t = np.asarray(times, dtype=np.float64)
    comparable = e[:, None] & (t[:, None] < t[None, :])
    n_pairs = int(comparable.sum())
    if n_pairs == 0:
        raise ValueError("no comparable pairs")
    conc = int((comparable & (s[:, None] > s[None, :])).sum())
    ties = int((comparable & (s[:, None] == s[None, :])).sum())
    return (conc + 0.5 * ties) / n_pairs, n_pairs


def concordance_error(scores, observed, times) -> float:
    return 1.0 - concordance(scores, observed, times)[0]


@dataclass
class KMCurve:
    times: np.ndarray
    survival: np.ndarray


def kaplan_meier(observed, times) -> KMCurve:
    """Product-limit estimator; censoring shrinks the risk set without a step.

    The running product is kept as an exact fraction, so without censoring the
    curve equals the empirical survival function to the last bit.
    """
    e = np.asarray(observed).astype(bool)
    t = np.asarray(times, dtype=np.float64)
    if len(t) == 0:
        raise ValueError("empty sample")
    out_t, out_s = [0.0], [1.0]
    surv = Fraction(1)
    at_risk = len(t)
    for u in np.unique(t):
        here = t == u
        d = int(np.sum(here & e))
        if d:
            surv *= Fraction(at_risk - d, at_risk)
            out_t.append(float(u))
            out_s.append(float(surv))
        at_risk -= int(here.sum())
    return KMCurve(np.array(out_t), np.array(out_s))


def step_value(values, visit_times, t):
    """Right-continuous step interpolation on the visit grid (0 before the first visit)."""
    k = np.searchsorted(np.asarray(visit_times), t, side="right") - 1
    return np.where(k >= 0, np.asarray(values)[np.clip(k, 0, None)], 0.0)


def _censoring_survival(observed, times):
    """G(t) and G(t-) as callables, G being the KM estimate of the censoring law."""
    e = np.asarray(observed).astype(bool)
    t = np.asarray(times, dtype=np.float64)
    uniq = np.unique(t)
    g = 1.0
    vals = []
    for u in uniq:
        here = t == u
        at_risk = int(np.sum(t >= u))
        c = int(np.sum(here & ~e))
        g *= 1.0 - c / at_risk
        vals.append(g)
    vals = np.array(vals)

    def at(x, left=False):
        k = np.searchsorted(uniq, x, side="left" if left else "right") - 1
        return np.where(k >= 0, vals[np.clip(k, 0, None)], 1.0)

    return at


def integrated_brier(rates: Sequence, visit_times: Sequence, observed, event_times, grid=None) -> float:
    """IPCW integrated Brier score of step-function event-rate predictions.

    ``rates[i]`` are predicted event rates at ``visit_times[i]``. The score at
    each grid time is averaged over patients, integrated with the trapezoid
    rule and divided by the grid span.
    """
    e = np.asarray(observed).astype(bool)
    t = np.asarray(event_times, dtype=np.float64)
    n = len(t)
    if grid is None:
        grid = np.linspace(0.0, t.max(), 101)
    grid = np.asarray(grid, dtype=np.float64)
    g_at = _censoring_survival(e, t)
    g_grid = g_at(grid)
    if np.any(g_grid <= 0):
        warnings.warn("censoring survival reaches zero inside the grid; truncating", RuntimeWarning)
        grid = grid[g_grid > 0]
        g_grid = g_grid[g_grid > 0]
    if len(grid) < 2:
        raise ValueError("time grid needs at least two usable points")
    g_event = g_at(t, left=True)
    pred = np.stack([step_value(rates[i], visit_times[i], grid) for i in range(n)])
    before = t[:, None] > grid[None, :]
    happened = (t[:, None] <= grid[None, :]) & e[:, None]
    contrib = np.where(before, pred ** 2 / g_grid[None, :], 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib += np.where(happened, (1.0 - pred) ** 2 / g_event[:, None], 0.0)
    bs = contrib.sum(axis=0) / n
    return float(np.trapezoid(bs, grid) / (grid[-1] - grid[0]))


# -- threshold tuning and per-event reports --------------------------------------------

def tune_threshold(scores, truths, grid=THRESHOLD_GRID) -> tuple[float, float]:
    """Threshold on ``grid`` maximising F1 (lowest wins ties); returns (threshold, F1)."""
    scores = np.asarray(scores)
    best_t, best_f1 = float(grid[0]), -1.0
    for thr in grid:
        f1, _ = f1_acc(scores > thr, truths)
        if f1 > best_f1:
            best_t, best_f1 = float(thr), f1
    return best_t, best_f1


@dataclass
class EventMetrics:
    auc: float | None
    accuracy: float
    f1: float
    delta_t: float | None
    brier: float
    c_error: float | None
    concordance: float | None
    threshold: float | None

    def row(self) -> list:
        return [self.auc, self.accuracy, self.delta_t, self.f1, self.brier, self.c_error]


@dataclass
class MetricsReport:
    per_event: dict[str, EventMetrics]
    km: dict[str, dict[str, KMCurve]] = field(default_factory=dict)

    @property
    def macro_f1(self) -> float:
        return float(np.mean([m.f1 for m in self.per_event.values()]))


def _labels(records, s):
    y = np.array([r.labels[s].observed for r in records])
    t = np.array([r.labels[s].time for r in records], dtype=np.float64)
    return y, t


def report(records, predictions: dict[str, list[Prediction]], rates: dict[str, list[np.ndarray]],
           thresholds: dict[str, float | None] | None = None, grid=None) -> MetricsReport:
    """Full per-event-type report from predictions and their event-rate curves."""
    per_event, km = {}, {}
    for s, preds in predictions.items():
        y, t = _labels(records, s)
        score = np.array([p.score for p in preds])
        dec = np.array([p.decision for p in preds])
        ptime = np.array([p.time if p.decision else np.nan for p in preds])
        f1, acc = f1_acc(dec, y)
        try:
            conc, _ = concordance(score, y, t)
        except ValueError:
            conc = None
        brier = integrated_brier(rates[s], [r.times for r in records], y, t, grid)
        per_event[s] = EventMetrics(
            auc=auc(score, y), accuracy=acc, f1=f1, delta_t=delta_t(ptime, t, dec, y), brier=brier,
            c_error=None if conc is None else 1.0 - conc, concordance=conc,
            threshold=None if thresholds is None else thresholds.get(s),
        )
        last = np.array([r.visits[-1].time for r in records], dtype=np.float64)
        km[s] = {
            "true": kaplan_meier(y, t),
            "predicted": kaplan_meier(dec.astype(bool), np.where(dec.astype(bool), ptime, last)),
        }
    return MetricsReport(per_event, km)


def predictions_from_rates(records, rates: dict[str, list[np.ndarray]], thresholds: dict[str, float]):
    return {
        s: [extract_prediction(w, r.times, thresholds[s]) for w, r in zip(rates[s], records)]
        for s in rates
    }


# -- interpretability ---------------------------------------------------------------

@dataclass
class CodeImpact:
    mean_gap: np.ndarray   # (p, S), nan where the code never sits on an interior visit
    count: np.ndarray      # (p, S)


def code_impact(rates_per_patient: Sequence[np.ndarray], records, p: int) -> CodeImpact:
    """Mean of W(tau_{r+1}) - W(tau_{r-1}) over interior visits r carrying each code."""
    s_count = rates_per_patient[0].shape[1] if len(rates_per_patient) else 0
    total = np.zeros((p, s_count))
    count = np.zeros((p, s_count))
    for w, rec in zip(rates_per_patient, records):
        for r in range(1, len(rec.visits) - 1):
            gap = w[r + 1] - w[r - 1]
            for c in rec.visits[r].codes:
                total[c] += gap
                count[c] += 1
    with np.errstate(invalid="ignore"):
        mean = np.where(count > 0, total / np.where(count > 0, count, 1), np.nan)
    return CodeImpact(mean, count)


def top_codes(impact: CodeImpact, names: Sequence[str], event_index: int, k: int = 20):
    """Top ``k`` codes by mean gap, ties broken alphabetically; absent codes skipped."""
    rows = [
        (names[c], float(impact.mean_gap[c, event_index]), int(impact.count[c, event_index]))
        for c in range(len(names)) if impact.count[c, event_index] > 0
    ]
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows[:k]
