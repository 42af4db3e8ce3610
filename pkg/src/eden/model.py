"""Code embedding, bi-directional time-aware LSTM, and the hazard head.

Parameters live in a flat ``dict[str, ndarray]``. Gate blocks are stacked
column-wise in the order forget, input, output, candidate, so ``fwd.W`` of
shape ``(n_emb, 4 * n_hidden)`` holds W_f | W_i | W_o | W_c.
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data.arrays import SequenceData
from .numkernel import sigmoid
from .survival import HAZARD_EPS, chain_rule_backward

GATES = ("f", "i", "o", "c")


@dataclass
class ModelConfig:
    vocab_size: int = 47
    n_emb: int = 50
    n_hidden: int = 128
    fc_size: int = 1024
    dropout_rate: float = 0.5
    n_events: int = 3
    time_aware: bool = True
    bidirectional: bool = True
    survival_output: bool = True

    def __post_init__(self):
        for name in ("vocab_size", "n_emb", "n_hidden", "fc_size", "n_events"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.bidirectional else ("fwd",)


@dataclass
class VisitInput:
    codes: np.ndarray
    delta: float


def discount(delta):
    """Short-term memory discount 1 / log(e + delta), delta in days."""
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta < 0):
        raise ValueError("elapsed time must be non-negative")
    return 1.0 / np.log(np.e + delta)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    h = cfg.n_hidden
    r = 1.0 / np.sqrt(h)
    p = {"M_emb": rng.uniform(-0.05, 0.05, (cfg.n_emb, cfg.vocab_size))}
    for d in cfg.directions:
        p[f"{d}.W"] = rng.uniform(-r, r, (cfg.n_emb, 4 * h))
        p[f"{d}.U"] = rng.uniform(-r, r, (h, 4 * h))
        p[f"{d}.b"] = np.zeros(4 * h)
        if cfg.time_aware:
            p[f"{d}.W_d"] = rng.uniform(-r, r, (h, h))
            p[f"{d}.b_d"] = np.zeros(h)
    d_in = h * len(cfg.directions)
    p["fc.W1"] = rng.uniform(-r, r, (d_in, cfg.fc_size))
    p["fc.b1"] = np.zeros(cfg.fc_size)
    p["fc.W2"] = rng.uniform(-r, r, (cfg.fc_size, cfg.n_events))
    p["fc.b2"] = np.zeros(cfg.n_events)
    return p


def n_parameters(cfg: ModelConfig) -> int:
    h, e = cfg.n_hidden, cfg.n_emb
    per_dir = e * 4 * h + h * 4 * h + 4 * h + ((h * h + h) if cfg.time_aware else 0)
    d_in = h * len(cfg.directions)
    return e * cfg.vocab_size + len(cfg.directions) * per_dir + d_in * cfg.fc_size + cfg.fc_size + cfg.fc_size * cfg.n_events + cfg.n_events


# -- single-step and single-sequence operations ------------------------------------

def embed(codes, params) -> np.ndarray:
    m = params["M_emb"]
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape[-1] != m.shape[1]:
        raise ValueError(f"code vector length {codes.shape[-1]} != vocabulary size {m.shape[1]}")
    return codes @ m.T


def _cell(xw_t, g_t, h_prev, c_prev, U, W_d, b_d):
    """One batched step. ``xw_t`` already holds x @ W + b; ``g_t`` is None for a plain LSTM."""
    if g_t is None:
        cs = None
        c_star = c_prev
    else:
        cs = np.tanh(c_prev @ W_d + b_d)
        # C^L + C^S * g written as C - C^S * (1 - g): equal algebraically and exact when g == 1
        c_star = c_prev - cs * (1.0 - g_t)[:, None]
    z = xw_t + h_prev @ U
    n = h_prev.shape[1]
    f = sigmoid(z[:, :n])
    i = sigmoid(z[:, n:2 * n])
    o = sigmoid(z[:, 2 * n:3 * n])
    ct = np.tanh(z[:, 3 * n:])
    c = f * c_star + i * ct
    tc = np.tanh(c)
    h = o * tc
    return h, c, (cs, c_star, f, i, o, ct, tc)


def tlstm_step(x_emb, delta, prev_hidden, prev_memory, params, direction: str = "fwd", time_aware: bool = True):
    """Single T-LSTM step for one visit (1-D vectors). Returns (hidden, memory)."""
    x = np.atleast_2d(x_emb)
    xw = x @ params[f"{direction}.W"] + params[f"{direction}.b"]
    g = np.atleast_1d(discount(delta)) if time_aware else None
    h, c, _ = _cell(
        xw, g, np.atleast_2d(prev_hidden), np.atleast_2d(prev_memory), params[f"{direction}.U"],
        params.get(f"{direction}.W_d"), params.get(f"{direction}.b_d"),
    )
    return h[0], c[0]


def forward_sequence(visits: Sequence[VisitInput], params, direction: str = "fwd", time_aware: bool = True) -> list[np.ndarray]:
    """Hidden states in chronological order for one patient.

    The backward direction scans the reversed list; the gap attached to a
    visit is then the gap to its chronological successor, and the first
    scanned visit (the last one) gets zero.
    """
    if not visits:
        raise ValueError("empty visit sequence")
    n_hidden = params[f"{direction}.U"].shape[0]
    deltas = [float(v.delta) for v in visits]
    order = list(range(len(visits)))
    if direction == "bwd":
        order = order[::-1]
        deltas = [0.0] + deltas[:0:-1]
    h = np.zeros(n_hidden)
    c = np.zeros(n_hidden)
    out = []
    for pos, j in enumerate(order):
        h, c = tlstm_step(embed(visits[j].codes, params), deltas[pos], h, c, params, direction, time_aware)
        out.append(h)
    return out[::-1] if direction == "bwd" else out


def head(hidden_concat, params, dropout_active: bool = False, dropout_rate: float = 0.0, rng=None) -> np.ndarray:
    """Per-visit hazards sigmoid(W2 . dropout(tanh(W1 y + b1)) + b2)."""
    u = np.tanh(np.asarray(hidden_concat) @ params["fc.W1"] + params["fc.b1"])
    if dropout_active and dropout_rate > 0:
        u = u * _dropout_mask(u.shape, dropout_rate, rng)
    return sigmoid(u @ params["fc.W2"] + params["fc.b2"])


def _dropout_mask(shape, rate, rng):
    if rng is None:
        raise ValueError("dropout needs a random generator")
    return (rng.random(shape) >= rate) / (1.0 - rate)


# -- batched network ----------------------------------------------------------------

class Network:
    """Batched forward/backward over :class:`SequenceData`."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params

    def _scan(self, xw, g, d):
        p = self.params
        U, W_d, b_d = p[f"{d}.U"], p.get(f"{d}.W_d"), p.get(f"{d}.b_d")
        bsz, t, _ = xw.shape
        n = self.cfg.n_hidden
        h = np.zeros((bsz, n))
        c = np.zeros((bsz, n))
        hs = np.empty((bsz, t, n))
        tape = []
        for k in range(t):
            h_prev, c_prev = h, c
            h, c, inner = _cell(xw[:, k], None if g is None else g[:, k], h_prev, c_prev, U, W_d, b_d)
            hs[:, k] = h
            tape.append((h_prev, c_prev) + inner)
        return hs, tape

    def _scan_backward(self, dhs, tape, g, d, grads):
        p = self.params
        U = p[f"{d}.U"]
        W_d = p.get(f"{d}.W_d")
        bsz, t, n = dhs.shape
        dxw = np.empty((bsz, t, 4 * n))
        dU = np.zeros_like(U)
        dWd = None if W_d is None else np.zeros_like(W_d)
        dbd = None if W_d is None else np.zeros(n)
        dh_next = np.zeros((bsz, n))
        dc_next = np.zeros((bsz, n))
        for k in range(t - 1, -1, -1):
            h_prev, c_prev, cs, c_star, f, i, o, ct, tc = tape[k]
            dh = dhs[:, k] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dc * c_star * f * (1.0 - f),
                dc * ct * i * (1.0 - i),
                do * o * (1.0 - o),
                dc * i * (1.0 - ct * ct),
            ], axis=1)
            dxw[:, k] = dz
            dU += h_prev.T @ dz
            dh_next = dz @ U.T
            dc_star = dc * f
            if cs is None:
                dc_next = dc_star
            else:
                da = -dc_star * (1.0 - g[:, k])[:, None] * (1.0 - cs * cs)
                dWd += c_prev.T @ da
                dbd += da.sum(axis=0)
                dc_next = dc_star + da @ W_d.T
        grads[f"{d}.U"] = dU
        if dWd is not None:
            grads[f"{d}.W_d"] = dWd
            grads[f"{d}.b_d"] = dbd
        return dxw

    def forward(self, data: SequenceData, train: bool = False, rng: np.random.Generator | None = None):
        """Returns (W_tilde of shape (B, T, S), cache). Padded positions carry junk."""
        cfg, p = self.cfg, self.params
        x = data.codes @ p["M_emb"].T
        rev3 = data.rev[:, :, None]
        cache = {"x": x}
        outs = []
        for d in cfg.directions:
            xd = x if d == "fwd" else np.take_along_axis(x, rev3, axis=1)
            deltas = data.delta_fwd if d == "fwd" else data.delta_bwd
            g = discount(deltas) if cfg.time_aware else None
            hs, tape = self._scan(xd @ p[f"{d}.W"] + p[f"{d}.b"], g, d)
            if d == "bwd":
                hs = np.take_along_axis(hs, rev3, axis=1)
            cache[d] = (xd, g, tape)
            outs.append(hs)
        y = outs[0] if len(outs) == 1 else np.concatenate(outs, axis=2)
        u = np.tanh(y @ p["fc.W1"] + p["fc.b1"])
        mask = None
        if train and cfg.dropout_rate > 0:
            mask = _dropout_mask(u.shape, cfg.dropout_rate, rng)
            ud = u * mask
        else:
            ud = u
        hz = sigmoid(ud @ p["fc.W2"] + p["fc.b2"])
        if cfg.survival_output:
            hc = np.clip(hz, HAZARD_EPS, 1.0 - HAZARD_EPS)
            w = 1.0 - np.cumprod(1.0 - hc, axis=1)
        else:
            hc = None
            w = hz
        cache.update(y=y, u=u, mask=mask, ud=ud, hz=hz, hc=hc, rev3=rev3, codes=data.codes)
        return w, cache

    def backward(self, cache, dw: np.ndarray) -> dict[str, np.ndarray]:
        cfg, p = self.cfg, self.params
        grads: dict[str, np.ndarray] = {}
        hz = cache["hz"]
        if cfg.survival_output:
            hc = cache["hc"]
            dh = chain_rule_backward(hc, dw, axis=1) * (hz == hc)
        else:
            dh = dw
        dzo = dh * hz * (1.0 - hz)
        s = cfg.n_events
        ud = cache["ud"]
        grads["fc.W2"] = ud.reshape(-1, ud.shape[-1]).T @ dzo.reshape(-1, s)
        grads["fc.b2"] = dzo.sum(axis=(0, 1))
        du = dzo @ p["fc.W2"].T
        if cache["mask"] is not None:
            du = du * cache["mask"]
        u = cache["u"]
        da = du * (1.0 - u * u)
        y = cache["y"]
        grads["fc.W1"] = y.reshape(-1, y.shape[-1]).T @ da.reshape(-1, da.shape[-1])
        grads["fc.b1"] = da.sum(axis=(0, 1))
        dy = da @ p["fc.W1"].T
        n = cfg.n_hidden
        x = cache["x"]
        dx = np.zeros_like(x)
        rev3 = cache["rev3"]
        for j, d in enumerate(cfg.directions):
            xd, g, tape = cache[d]
            dhs = dy[:, :, j * n:(j + 1) * n]
            if d == "bwd":
                dhs = np.take_along_axis(dhs, rev3, axis=1)
            dxw = self._scan_backward(dhs, tape, g, d, grads)
            e = xd.shape[-1]
            grads[f"{d}.W"] = xd.reshape(-1, e).T @ dxw.reshape(-1, 4 * n)
            grads[f"{d}.b"] = dxw.sum(axis=(0, 1))
            dxd = dxw @ p[f"{d}.W"].T
            dx += dxd if d == "fwd" else np.take_along_axis(dxd, rev3, axis=1)
        codes = cache["codes"]
        grads["M_emb"] = dx.reshape(-1, dx.shape[-1]).T @ codes.reshape(-1, codes.shape[-1])
        return grads

    def predict(self, data: SequenceData, chunk: int = 64) -> np.ndarray:
        """Evaluation-mode event rates, (n, T, S), computed in chunks."""
        out = np.zeros(data.targets.shape)
        for start in range(0, data.n, chunk):
            idx = np.arange(start, min(start + chunk, data.n))
            sub = data.subset(idx)
            w, _ = self.forward(sub, train=False)
            out[idx, : w.shape[1]] = w
        return np.where(data.mask[:, :, None], out, 0.0)


# -- checkpoints --------------------------------------------------------------------

def save_checkpoint(path, cfg: ModelConfig, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write config header + named parameter blocks; the final file appears atomically."""
    path = Path(path)
    header = json.dumps({"config": asdict(cfg), "meta": meta or {}}, sort_keys=True)
    tmp = path.with_name(path.name + ".partial")
    arrays = {"__header__": np.frombuffer(header.encode(), dtype=np.uint8)}
    arrays.update((f"param/{k}", params[k]) for k in sorted(params))
    # an npz archive with fixed entry timestamps, so equal inputs give equal bytes
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        params = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
    return ModelConfig(**header["config"]), params, header["meta"]
