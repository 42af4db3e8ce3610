"""Padded array view of a cohort, as consumed by the network and the loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..survival import target_event_rate
from .records import PatientRecord
from .vocabulary import EVENT_TYPES, VOCAB


@dataclass
class SequenceData:
    """Right-padded arrays for ``n`` patients and ``T`` = longest sequence.

    ``delta_fwd[b, k]`` is the gap before visit k in chronological order.
    The backward scan reads visits in reverse (per patient, padding kept at the
    end): ``rev[b, k]`` maps scan position to chronological index and
    ``delta_bwd[b, k]`` is the gap to the previously scanned visit, i.e. the
    chronologically next one.
    """

    ids: list[str]
    codes: np.ndarray       # (n, T, p)
    times: np.ndarray       # (n, T)
    delta_fwd: np.ndarray   # (n, T)
    delta_bwd: np.ndarray   # (n, T) in backward-scan order
    rev: np.ndarray         # (n, T) int
    lengths: np.ndarray     # (n,)
    targets: np.ndarray     # (n, T, S) ground-truth W, zero on padding
    observed: np.ndarray    # (n, S)
    mu: np.ndarray          # (n, S) zero-based event visit index, -1 if censored

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.codes.shape[1])[None, :] < self.lengths[:, None]

    @property
    def censored(self) -> np.ndarray:
        return ~self.observed.any(axis=1)

    def subset(self, idx) -> "SequenceData":
        idx = np.asarray(idx, dtype=int)
        t = int(self.lengths[idx].max())
        return SequenceData(
            ids=[self.ids[i] for i in idx],
            codes=self.codes[idx, :t],
            times=self.times[idx, :t],
            delta_fwd=self.delta_fwd[idx, :t],
            delta_bwd=self.delta_bwd[idx, :t],
            rev=self.rev[idx, :t],
            lengths=self.lengths[idx],
            targets=self.targets[idx, :t],
            observed=self.observed[idx],
            mu=self.mu[idx],
        )

    def with_times(self, times: np.ndarray) -> "SequenceData":
        """Same codes and labels on a different (n, T) visit-time grid."""
        times = np.where(self.mask, np.asarray(times, dtype=np.float64), 0.0)
        fwd, bwd = _deltas(times, self.lengths, self.rev)
        return SequenceData(self.ids, self.codes, times, fwd, bwd, self.rev, self.lengths,
                            self.targets, self.observed, self.mu)


def _reverse_index(lengths: np.ndarray, t: int) -> np.ndarray:
    k = np.arange(t)[None, :]
    n = lengths[:, None]
    return np.where(k < n, n - 1 - k, k)


def _deltas(times: np.ndarray, lengths: np.ndarray, rev: np.ndarray):
    mask = np.arange(times.shape[1])[None, :] < lengths[:, None]
    fwd = np.zeros_like(times)
    fwd[:, 1:] = times[:, 1:] - times[:, :-1]
    fwd = np.where(mask, fwd, 0.0)
    trev = np.take_along_axis(times, rev, axis=1)
    bwd = np.zeros_like(times)
    bwd[:, 1:] = trev[:, :-1] - trev[:, 1:]
    bwd = np.where(mask, bwd, 0.0)
    return fwd, bwd


def encode(records: Sequence[PatientRecord], event_types: Sequence[str] = EVENT_TYPES, p: int = len(VOCAB)) -> SequenceData:
    n = len(records)
    if n == 0:
        raise ValueError("cannot encode an empty cohort")
    lengths = np.array([len(r.visits) for r in records])
    t = int(lengths.max())
    s_count = len(event_types)
    codes = np.zeros((n, t, p))
    times = np.zeros((n, t))
    targets = np.zeros((n, t, s_count))
    observed = np.zeros((n, s_count), dtype=bool)
    mu = np.full((n, s_count), -1)
    for b, rec in enumerate(records):
        for k, v in enumerate(rec.visits):
            codes[b, k, list(v.codes)] = 1.0
            times[b, k] = v.time
        vt = rec.times
        for j, s in enumerate(event_types):
            lab = rec.labels[s]
            targets[b, : len(vt), j] = target_event_rate(lab.observed, lab.time, vt)
            if lab.observed:
                observed[b, j] = True
                mu[b, j] = rec.event_index(s)
    rev = _reverse_index(lengths, t)
    fwd, bwd = _deltas(times, lengths, rev)
    return SequenceData([r.id for r in records], codes, times, fwd, bwd, rev, lengths, targets, observed, mu)
