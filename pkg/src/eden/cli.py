"""Command-line workflows: generate, train, evaluate, predict, ablate, search, interpret, stats."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import LSTM_BASELINE, adhoc_cohort, lstm_train_config, write_predictions
from .config import ConfigError, build, read_kv, run_config
from .data import (
    EVENT_TYPES,
    VOCAB,
    CohortFormatError,
    GeneratorSpec,
    InfeasibleSpecError,
    compute_stats,
    encode,
    generate_cohort,
    read_cohort,
    split_cohort,
    write_cohort,
)
from .evaluation import ablation_suite, evaluate_network, network_rates
from .metrics import METRIC_COLUMNS, code_impact, predictions_from_rates, report, top_codes
from .model import Network, load_checkpoint, save_checkpoint
from .seeding import stream
from .trainer import TrainingDiverged, initial_loss_breakdown, log_columns, random_search, train

log = logging.getLogger("eden")

SPLITS = ("train", "val", "test")


class UsageError(Exception):
    pass


# -- small output helpers -----------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if np.isnan(x) else f"{float(x):.6f}"
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for r in rows:
            out.writerow([_fmt(v) for v in r])
    os.replace(tmp, path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, args, seed: int, outputs) -> None:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    manifest = {
        "command": args.command,
        "flags": {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()},
        "seed": seed,
        "version": __version__,
        "outputs": {p.name: _sha256(p) for p in sorted(outputs)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UsageError(f"cannot create output directory {out}: {e.strerror}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _read_split(data_dir: Path, name: str):
    path = Path(data_dir) / f"{name}.tsv"
    if not path.exists():
        raise UsageError(f"missing {path}")
    return read_cohort(path)


def _load_model(path):
    if not Path(path).exists():
        raise UsageError(f"no checkpoint at {path}")
    cfg, params, meta = load_checkpoint(path)
    return Network(cfg, params), meta


def _run_config(args):
    values = read_kv(args.config) if getattr(args, "config", None) else {}
    model, train_cfg, search = run_config(values)
    over = {}
    if getattr(args, "epochs", None) is not None:
        over["epochs"] = args.epochs
    over["seed"] = args.seed
    for flag in ("time_aware", "bidirectional", "survival_output", "use_L2", "use_L3", "use_L4"):
        v = getattr(args, flag, None)
        if v is not None:
            over[flag] = v
    train_cfg = replace(train_cfg, **over)
    if getattr(args, "lstm_baseline", False):
        model, train_cfg = LSTM_BASELINE, lstm_train_config(train_cfg)
    return model, train_cfg, search


# -- commands -------------------------------------------------------------------------

def cmd_generate(args) -> list[Path]:
    values = read_kv(args.spec) if args.spec else {}
    spec = build(GeneratorSpec, values)
    spec = replace(spec, seed=args.seed)
    if args.n_patients is not None:
        spec = replace(spec, n_patients=args.n_patients)
    if args.noise is not None:
        spec = replace(spec, noise=args.noise)
    records = generate_cohort(spec)
    out = _out_dir(args)
    written = []
    rows = []
    for name, part in zip(SPLITS, split_cohort(records)):
        path = out / f"{name}.tsv"
        write_cohort(part, path)
        written.append(path)
        if part:
            rows += [(name, k, v) for k, v in compute_stats(part).rows()]
    rows += [("all", k, v) for k, v in compute_stats(records).rows()]
    _write_csv(out / "stats.csv", ("split", "statistic", "value"), rows)
    return written + [out / "stats.csv"]


def cmd_stats(args) -> list[Path]:
    records = read_cohort(args.data)
    if not records:
        raise UsageError(f"{args.data} holds no patients")
    out = _out_dir(args)
    _write_csv(out / "stats.csv", ("statistic", "value"), compute_stats(records).rows())
    return [out / "stats.csv"]


def cmd_train(args) -> list[Path]:
    model, cfg, _ = _run_config(args)
    tr, va = _read_split(args.data, "train"), _read_split(args.data, "val")
    dtr = encode(tr, EVENT_TYPES, model.vocab_size)
    dva = encode(va, EVENT_TYPES, model.vocab_size)
    out = _out_dir(args)
    written = []
    if args.calibrate:
        comps = initial_loss_breakdown(model, dtr, cfg)
        rows = [(f"L{k + 1}", c, a, a * c) for k, (c, a) in enumerate(zip(comps, cfg.alpha))]
        _write_csv(out / "calibration.csv", ("component", "value", "alpha", "weighted"), rows)
        written.append(out / "calibration.csv")
    res = train(model, dtr, dva, cfg, EVENT_TYPES)
    columns = log_columns(EVENT_TYPES)
    _write_csv(out / "train_log.csv", columns, ([row[c] for c in columns] for row in res.log))
    _write_csv(out / "thresholds.csv", ("event_type", "threshold"), zip(EVENT_TYPES, res.thresholds))
    meta = {
        "thresholds": dict(zip(EVENT_TYPES, res.thresholds)),
        "best_epoch": res.best_epoch,
        "val_macro_f1": res.best_macro_f1,
        "betas": list(res.betas),
        "train_config": asdict(cfg),
        "diverged_at": res.diverged_at,
    }
    save_checkpoint(out / "model.npz", res.config, res.params, meta)
    return written + [out / "train_log.csv", out / "thresholds.csv", out / "model.npz"]


METRICS_HEADER = ("model", "cohort", "event_type", *METRIC_COLUMNS, "threshold", "concordance")


def _metric_rows(model_name, cohort, rep):
    for s, m in rep.per_event.items():
        yield (model_name, cohort, s, m.auc, m.accuracy, m.delta_t, m.f1, m.brier, m.c_error,
               m.threshold, m.concordance)


def _km_rows(model_name, rep):
    for s, curves in rep.km.items():
        for source, km in curves.items():
            for t, v in zip(km.times, km.survival):
                yield (model_name, s, source, t, v)


def cmd_evaluate(args) -> list[Path]:
    records = read_cohort(args.data)
    if not records:
        raise UsageError(f"{args.data} holds no patients")
    cohort = Path(args.data).stem
    wanted = [b for b in (args.baselines or "").split(",") if b]
    for b in wanted:
        if b not in ("adhoc", "lstm"):
            raise UsageError(f"unknown baseline {b!r} (choose from adhoc, lstm)")
    if "lstm" in wanted and not args.lstm_model:
        raise UsageError("--baselines lstm needs --lstm-model")
    systems = []
    net, meta = _load_model(args.model)
    preds, rates, rep = evaluate_network(net, meta["thresholds"], records)
    systems.append(("EDEN", preds, rep))
    if "adhoc" in wanted:
        apreds, arates = adhoc_cohort(records)
        systems.append(("adhoc", apreds, report(records, apreds, arates)))
    if "lstm" in wanted:
        lnet, lmeta = _load_model(args.lstm_model)
        lpreds, _, lrep = evaluate_network(lnet, lmeta["thresholds"], records)
        systems.append(("LSTM", lpreds, lrep))
    out = _out_dir(args)
    metric_rows, km_rows = [], []
    for name, _, rep in systems:
        metric_rows += list(_metric_rows(name, cohort, rep))
        km_rows += list(_km_rows(name, rep))
    _write_csv(out / "metrics.csv", METRICS_HEADER, metric_rows)
    _write_csv(out / "km.csv", ("model", "event_type", "source", "time", "survival"), km_rows)
    written = [out / "metrics.csv", out / "km.csv"]
    for name, p, _ in systems:
        path = out / f"predictions_{name}.csv"
        write_predictions(path, records, p)
        written.append(path)
    return written


def cmd_predict(args) -> list[Path]:
    records = read_cohort(args.data)
    net, meta = _load_model(args.model)
    out = _out_dir(args)
    rates = network_rates(net, records)
    preds = predictions_from_rates(records, rates, meta["thresholds"])
    write_predictions(out / "predictions.csv", records, preds)
    rows = []
    for s in EVENT_TYPES:
        for r, w in zip(records, rates[s]):
            rows += [(r.id, s, v.time, x) for v, x in zip(r.visits, w)]
    _write_csv(out / "event_rates.csv", ("patient_id", "event_type", "day", "event_rate"), rows)
    return [out / "predictions.csv", out / "event_rates.csv"]


def cmd_ablate(args) -> list[Path]:
    model, cfg, _ = _run_config(args)
    splits = [_read_split(args.data, s) for s in SPLITS]
    rows = ablation_suite(model, *splits, cfg)
    out = _out_dir(args)
    table = []
    for row in rows:
        for s, m in row.report.per_event.items():
            table.append((row.variant, s, m.auc, m.accuracy, m.delta_t, m.f1, row.report.macro_f1))
    header = ("variant", "event_type", "AUC", "Acc", "delta_T_pred_minus_true", "F1", "macro_F1")
    _write_csv(out / "ablation.csv", header, table)
    return [out / "ablation.csv"]


def cmd_search(args) -> list[Path]:
    model, cfg, space = _run_config(args)
    if args.trials is not None:
        space = replace(space, trials=args.trials)
    if args.search_epochs is not None:
        space = replace(space, search_epochs=args.search_epochs)
    tr, va = _read_split(args.data, "train"), _read_split(args.data, "val")
    dtr = encode(tr, EVENT_TYPES, model.vocab_size)
    dva = encode(va, EVENT_TYPES, model.vocab_size)
    best, trials = random_search(space, dtr, dva, model, cfg, stream(args.seed, "search"))
    out = _out_dir(args)
    _write_csv(out / "search.csv", ("trial", "n_emb", "n_hidden", "fc_size", "dropout_rate", "val_macro_F1"),
               [(k, c.n_emb, c.n_hidden, c.fc_size, c.dropout_rate, f1) for k, (c, f1) in enumerate(trials)])
    lines = [f"{k} = {getattr(best, k)}" for k in ("n_emb", "n_hidden", "fc_size", "dropout_rate")]
    (out / "best_config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [out / "search.csv", out / "best_config.txt"]


def cmd_interpret(args) -> list[Path]:
    if args.top < 1:
        raise UsageError("--top must be >= 1")
    records = read_cohort(args.data)
    if not records:
        raise UsageError(f"{args.data} holds no patients")
    net, _ = _load_model(args.model)
    rates = network_rates(net, records)
    per_patient = [np.stack([rates[s][b] for s in EVENT_TYPES], axis=1) for b in range(len(records))]
    impact = code_impact(per_patient, records, len(VOCAB))
    rows = []
    for j, s in enumerate(EVENT_TYPES):
        rows += [(s, name, gap, count) for name, gap, count in top_codes(impact, VOCAB.names, j, args.top)]
    out = _out_dir(args)
    _write_csv(out / "code_impact.csv", ("event_type", "code", "mean_gap", "count"), rows)
    return [out / "code_impact.csv"]


# -- parser ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    p.add_argument("--out", required=True, help="output directory")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="directory with train.tsv / val.tsv / test.tsv")
    p.add_argument("--config", help="key = value file; missing keys use the defaults")
    p.add_argument("--epochs", type=int)
    bool_flag = argparse.BooleanOptionalAction
    p.add_argument("--time-aware", dest="time_aware", action=bool_flag, default=None)
    p.add_argument("--bidirectional", action=bool_flag, default=None)
    p.add_argument("--survival-output", dest="survival_output", action=bool_flag, default=None)
    p.add_argument("--L2", dest="use_L2", action=bool_flag, default=None)
    p.add_argument("--L3", dest="use_L3", action=bool_flag, default=None)
    p.add_argument("--L4", dest="use_L4", action=bool_flag, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eden", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesise a cohort and split it 3:1:1")
    p.add_argument("--spec", help="generator key = value file")
    p.add_argument("--n-patients", dest="n_patients", type=int)
    p.add_argument("--noise", type=float)
    _common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stats", help="cohort statistics")
    p.add_argument("--data", required=True)
    _common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model on DIR/train.tsv, select on DIR/val.tsv")
    _train_flags(p)
    p.add_argument("--lstm-baseline", dest="lstm_baseline", action="store_true",
                   help="train the plain LSTM baseline instead")
    p.add_argument("--calibrate", action="store_true", help="also write the loss breakdown at initialisation")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics for a model and optional baselines")
    p.add_argument("--data", required=True, help="cohort file")
    p.add_argument("--model", required=True)
    p.add_argument("--baselines", default="", help="comma list from: adhoc, lstm")
    p.add_argument("--lstm-model", dest="lstm_model")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-patient predictions and event-rate curves")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="train and test the seven ablation variants")
    _train_flags(p)
    _common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("search", help="random search over architecture sizes")
    _train_flags(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--search-epochs", dest="search_epochs", type=int)
    _common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("interpret", help="mean event-rate gap around each code")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--top", type=int, default=20)
    _common(p)
    p.set_defaults(func=cmd_interpret)
    return parser


EXPECTED_ERRORS = (UsageError, ConfigError, CohortFormatError, InfeasibleSpecError, TrainingDiverged,
                   FileNotFoundError, PermissionError, IsADirectoryError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        outputs = args.func(args)
        _write_manifest(Path(args.out), args, args.seed, outputs)
    except EXPECTED_ERRORS as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"eden {args.command}: error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
