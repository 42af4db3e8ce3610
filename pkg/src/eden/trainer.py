"""Adam training with class-balanced mini-batches, checkpoint selection and search."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .data.arrays import SequenceData
from .loss import BatchTargets, LossWeights, betas_from_data, total_loss
from .metrics import auc, tune_threshold
from .model import ModelConfig, Network, init_params, n_parameters
from .seeding import stream

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "L1", "L2", "L3", "L4", "L_total")
# validation AUC columns use short event names
LOG_EVENT_NAMES = {"second_cancer": "second"}


def log_columns(event_names) -> list[str]:
    return [*LOG_COLUMNS, *(f"val_AUC_{LOG_EVENT_NAMES.get(s, s)}" for s in event_names)]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, detail: str):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 500
    batches_per_epoch: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    grad_clip: float = 5.0
    seed: int = 0
    alpha1: float = 10.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    alpha4: float = 1.0
    time_aware: bool = True
    bidirectional: bool = True
    survival_output: bool = True
    use_L2: bool = True
    use_L3: bool = True
    use_L4: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batches_per_epoch < 1:
            raise ValueError("batches_per_epoch must be >= 1")

    @property
    def alpha(self) -> tuple[float, float, float, float]:
        return (
            self.alpha1,
            self.alpha2 if self.use_L2 else 0.0,
            self.alpha3 if self.use_L3 else 0.0,
            self.alpha4 if self.use_L4 else 0.0,
        )

    def architecture(self, cfg: ModelConfig) -> ModelConfig:
        return replace(cfg, time_aware=self.time_aware, bidirectional=self.bidirectional,
                       survival_output=self.survival_output)


@dataclass
class SearchSpace:
    n_emb: tuple[int, ...] = (25, 50, 128, 256)
    n_hidden: tuple[int, ...] = (128, 256, 512, 1024, 2048)
    fc_size: tuple[int, ...] = (128, 256, 512, 1024, 2048)
    dropout_rate: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75)
    trials: int = 10
    search_epochs: int = 10


# -- batching ---------------------------------------------------------------------

def make_balanced_batches(censored, batches_per_epoch: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Split uncensored patients across batches and pair each with as many censored ones.

    Censored patients are drawn without replacement, cycling through fresh
    permutations only when more are needed than exist.
    """
    censored = np.asarray(censored, dtype=bool)
    unc = np.flatnonzero(~censored)
    cen = np.flatnonzero(censored)
    if len(unc) < batches_per_epoch:
        raise ValueError(f"need at least {batches_per_epoch} uncensored patients, have {len(unc)}")
    if len(cen) == 0:
        raise ValueError("no censored patients to balance the batches with")
    parts = np.array_split(rng.permutation(unc), batches_per_epoch)
    need = sum(len(p) for p in parts)
    pool = np.concatenate([rng.permutation(cen) for _ in range(-(-need // len(cen)))])[:need]
    batches, start = [], 0
    for part in parts:
        batches.append(np.concatenate([part, pool[start:start + len(part)]]))
        start += len(part)
    return batches


# -- optimiser ---------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """In-place Adam update with bias correction."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# -- evaluation helpers ------------------------------------------------------------

def scores_from_rates(rates: np.ndarray, data: SequenceData) -> np.ndarray:
    """Per-patient, per-event max of W over real visits -> (n, S)."""
    return np.where(data.mask[:, :, None], rates, -np.inf).max(axis=1)


@dataclass
class ValidationSummary:
    aucs: list[float | None]
    thresholds: list[float]
    macro_f1: float
    loss: float


def validation_summary(net: Network, data: SequenceData, weights: LossWeights) -> ValidationSummary:
    rates = net.predict(data)
    scores = scores_from_rates(rates, data)
    aucs, thresholds, f1s = [], [], []
    for j in range(scores.shape[1]):
        aucs.append(auc(scores[:, j], data.observed[:, j]))
        t, f1 = tune_threshold(scores[:, j], data.observed[:, j])
        thresholds.append(t)
        f1s.append(f1)
    loss = total_loss(rates, BatchTargets.from_data(data), weights).total
    return ValidationSummary(aucs, thresholds, float(np.mean(f1s)), loss)


@dataclass
class TrainResult:
    config: ModelConfig
    params: dict[str, np.ndarray]
    thresholds: list[float]
    best_epoch: int
    best_macro_f1: float
    betas: tuple[float, float]
    log: list[dict] = field(default_factory=list)
    diverged_at: int | None = None

    @property
    def network(self) -> Network:
        return Network(self.config, self.params)


def train(model_cfg: ModelConfig, train_data: SequenceData, val_data: SequenceData,
          cfg: TrainConfig, event_names=None, epoch_callback=None) -> TrainResult:
    """Train and return the parameters of the epoch with the best validation macro-F1."""
    if set(train_data.ids) & set(val_data.ids):
        raise ValueError("train and validation sets share patients")
    arch = cfg.architecture(model_cfg)
    params = init_params(arch, stream(cfg.seed, "init"))
    net = Network(arch, params)
    weights = LossWeights(alpha=cfg.alpha, beta=betas_from_data(train_data))
    state = AdamState()
    names = list(event_names or [str(j) for j in range(arch.n_events)])
    columns = log_columns(names)
    best = None
    history = []
    diverged_at = None
    for epoch in range(1, cfg.epochs + 1):
        batches = make_balanced_batches(train_data.censored, cfg.batches_per_epoch, stream(cfg.seed, "batching", epoch))
        drop_rng = stream(cfg.seed, "dropout", epoch)
        sums = np.zeros(5)
        try:
            for idx in batches:
                batch = train_data.subset(np.sort(idx))
                w, cache = net.forward(batch, train=True, rng=drop_rng)
                res = total_loss(w, BatchTargets.from_data(batch), weights, grad=True)
                if not np.isfinite(res.total):
                    raise FloatingPointError("non-finite loss")
                grads = net.backward(cache, res.grad)
                clip_global_norm(grads, cfg.grad_clip)
                adam_step(params, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
                sums += (*res.components, res.total)
        except FloatingPointError as e:
            diverged_at = epoch
            log.warning("epoch %d aborted: %s", epoch, e)
            if best is None:
                raise TrainingDiverged(epoch, str(e)) from None
            break
        means = sums / len(batches)
        val = validation_summary(net, val_data, weights)
        row = dict(zip(columns, (epoch, *map(float, means), *(np.nan if a is None else float(a) for a in val.aucs))))
        history.append(row)
        # equal macro-F1 goes to the lower validation loss
        key = (val.macro_f1, -val.loss)
        if best is None or key > best[0]:
            best = (key, epoch, {k: v.copy() for k, v in params.items()}, val.thresholds)
        if epoch_callback is not None:
            epoch_callback(row)
        log.info("epoch %d loss %.4f val macro-F1 %.3f", epoch, means[-1], val.macro_f1)
    (macro_f1, _), epoch, best_params, thresholds = best
    return TrainResult(arch, best_params, thresholds, epoch, macro_f1, weights.beta, history, diverged_at)


def initial_loss_breakdown(model_cfg: ModelConfig, train_data: SequenceData, cfg: TrainConfig):
    """L1..L4 at initialisation over the whole training set, for choosing alphas."""
    arch = cfg.architecture(model_cfg)
    net = Network(arch, init_params(arch, stream(cfg.seed, "init")))
    weights = LossWeights(alpha=cfg.alpha, beta=betas_from_data(train_data))
    w = net.predict(train_data)
    return total_loss(w, BatchTargets.from_data(train_data), weights).components


# -- hyper-parameter search and ablations ------------------------------------------------

def random_search(space: SearchSpace, train_data, val_data, base: ModelConfig, cfg: TrainConfig, rng):
    """Sample ``trials`` configurations, train each briefly, keep the best validation macro-F1."""
    if space.trials < 1:
        raise ValueError("trials must be >= 1")
    short = replace(cfg, epochs=space.search_epochs)
    results = []
    for trial in range(space.trials):
        cand = replace(
            base,
            n_emb=int(rng.choice(space.n_emb)),
            n_hidden=int(rng.choice(space.n_hidden)),
            fc_size=int(rng.choice(space.fc_size)),
            dropout_rate=float(rng.choice(space.dropout_rate)),
        )
        res = train(cand, train_data, val_data, short)
        results.append((cand, res.best_macro_f1))
        log.info("trial %d %s -> macro-F1 %.3f", trial, cand, res.best_macro_f1)
    best = max(results, key=lambda r: (r[1], -n_parameters(short.architecture(r[0]))))
    return best[0], results


ABLATIONS = (
    ("LSTM", dict(time_aware=False, bidirectional=False, survival_output=False, use_L2=False, use_L3=False, use_L4=False)),
    ("T-LSTM", dict(time_aware=True, bidirectional=False, survival_output=False, use_L2=False, use_L3=False, use_L4=False)),
    ("Bi-T-LSTM", dict(time_aware=True, bidirectional=True, survival_output=False, use_L2=False, use_L3=False, use_L4=False)),
    ("Bi-T-LSTM - survival output - L1", dict(time_aware=True, bidirectional=True, survival_output=True, use_L2=False, use_L3=False, use_L4=False)),
    ("Bi-T-LSTM - survival output - L1 + L2", dict(time_aware=True, bidirectional=True, survival_output=True, use_L2=True, use_L3=False, use_L4=False)),
    ("Bi-T-LSTM - survival output - L1 + L2 + L3", dict(time_aware=True, bidirectional=True, survival_output=True, use_L2=True, use_L3=True, use_L4=False)),
    ("EDEN", dict(time_aware=True, bidirectional=True, survival_output=True, use_L2=True, use_L3=True, use_L4=True)),
)


def config_fields(cls) -> tuple[str, ...]:
    return tuple(f.name for f in fields(cls))
