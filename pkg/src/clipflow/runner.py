"""Experiment runner: trains from an ExperimentConfig and writes the run artifacts."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from clipflow import metrics, ntk, privacy, svg
from clipflow.config import ExperimentConfig
from clipflow.clipping import compute_factors
from clipflow.datasets import generate
from clipflow.net import Batch, Network, forward, mean_loss, per_sample_grads
from clipflow.optimizers import skip_step, step, subsample

log = logging.getLogger(__name__)

RUNLOG_FIELDS = (
    "step", "train_loss", "test_loss", "train_acc", "test_acc", "clip_min", "clip_mean", "eps",
)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite training loss {loss} after step {step}; run aborted")
        self.step = step


@dataclass
class RunLog:
    rows: list[dict] = field(default_factory=list)
    initial: dict = field(default_factory=dict)
    ledger: privacy.PrivacyLedger | None = None
    net: Network | None = None
    calibration: metrics.CalibrationReport | None = None
    mia: metrics.MIAResult | None = None
    mia_per_class: dict = field(default_factory=dict)
    ntk_reports: dict = field(default_factory=dict)
    first_factors: np.ndarray | None = None

    def summary(self, config: ExperimentConfig) -> dict:
        last = self.rows[-1] if self.rows else {}
        out = {
            "config": config.to_dict(),
            "steps": last.get("step", 0),
            "initial": self.initial,
            "final": {k: last.get(k) for k in RUNLOG_FIELDS if k != "step"},
            "privacy": self.ledger.to_dict() if self.ledger else None,
        }
        if self.calibration is not None:
            out["calibration"] = {"ece": self.calibration.ece, "mce": self.calibration.mce}
        if self.mia is not None:
            out["mia"] = {"auc": self.mia.auc, "per_class": self.mia_per_class, "notes": self.mia.notes}
        return out


def total_steps(config: ExperimentConfig, n_train: int) -> int:
    if config.steps is not None:
        return config.steps
    p = config.subsample.sampling_rate(n_train)
    return config.epochs * max(1, math.ceil(1.0 / p))


def build_network(config: ExperimentConfig, train: Batch) -> Network:
    sizes = [train.inputs.shape[1], *config.network.hidden, train.targets.shape[1]]
    acts = [*config.network.hidden_activations(), "identity"]
    return Network.init(sizes, acts, seed=config.seed)


def _accuracy(net: Network, batch: Batch | None):
    if batch is None or not batch.classification:
        return None
    f, _ = forward(net, batch)
    return float(np.mean(np.argmax(f, axis=1) == batch.labels))


def _eps(config: ExperimentConfig, ledger: privacy.PrivacyLedger) -> float:
    if config.clip.mode in ("none", "batch"):
        return math.inf
    return ledger.eps


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _parse(v: str, key: str):
    if v == "":
        return None
    return int(v) if key == "step" else float(v)


def write_runlog(rows: list[dict], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUNLOG_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in RUNLOG_FIELDS])


def read_runlog(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [{k: _parse(r[k], k) for k in RUNLOG_FIELDS} for r in csv.DictReader(fh)]


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[k]) if not isinstance(r[k], str) else r[k] for k in header])


def _ntk_snapshot(net: Network, train: Batch, config: ExperimentConfig) -> dict:
    k = min(config.analyzers.ntk_samples, len(train))
    sub = train.subset(np.arange(k))
    loss = config.loss_kind
    factors = None
    if config.clip.mode in ("local", "global"):
        factors = compute_factors(per_sample_grads(net, sub, loss), config.clip)
    return ntk.analyze(net, sub, factors, loss).to_dict()


def run(config: ExperimentConfig, out: str | Path | None = None) -> RunLog:
    """Train per ``config``; artifacts go to ``out`` (or ``config.out``) when set."""
    out = Path(out) if out is not None else (Path(config.out) if config.out else None)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    train, test = generate(config.dataset)
    loss = config.loss_kind
    net = build_network(config, train)
    state = config.optimizer.state()
    state.init_buffers(net.n_params)
    n = len(train)
    T = total_steps(config, n)
    p = config.subsample.sampling_rate(n)
    ledger = privacy.PrivacyLedger(config.noise.sigma, p, config.delta)
    logrun = RunLog(ledger=ledger)
    logrun.initial = {
        "train_loss": mean_loss(net, train, loss),
        "test_loss": mean_loss(net, test, loss) if test is not None else None,
        "train_acc": _accuracy(net, train),
        "test_acc": _accuracy(net, test),
    }
    every = config.analyzers.log_every
    ntk_every = config.analyzers.ntk_every
    if ntk_every:
        logrun.ntk_reports[0] = _ntk_snapshot(net, train, config)
    lo, tot, cnt = math.inf, 0.0, 0
    try:
        for t in range(1, T + 1):
            idx = subsample(config.subsample, n, state.t)
            if idx.size == 0:
                res = skip_step(state, net)
            else:
                res = step(state, net, train.subset(idx), config.clip, config.noise, loss)
            net = res.net
            if not np.all(np.isfinite(net.params)):
                raise TrainingDiverged(t, math.nan)
            ledger.advance()
            if res.factors is not None:
                v = res.factors.values
                lo = min(lo, float(v.min()))
                tot += float(v.sum())
                cnt += v.size
                if logrun.first_factors is None:
                    logrun.first_factors = v.copy()
            elif res.batch_size:
                lo, tot, cnt = min(lo, 1.0), tot + res.batch_size, cnt + res.batch_size
            if t % every and t != T:
                continue
            tl = mean_loss(net, train, loss)
            if not math.isfinite(tl):
                raise TrainingDiverged(t, tl)
            logrun.rows.append({
                "step": t,
                "train_loss": tl,
                "test_loss": mean_loss(net, test, loss) if test is not None else None,
                "train_acc": _accuracy(net, train),
                "test_acc": _accuracy(net, test),
                "clip_min": lo if cnt else None,
                "clip_mean": tot / cnt if cnt else None,
                "eps": _eps(config, ledger),
            })
            lo, tot, cnt = math.inf, 0.0, 0
            if ntk_every and t % ntk_every == 0:
                logrun.ntk_reports[t] = _ntk_snapshot(net, train, config)
    except TrainingDiverged:
        if out is not None:
            write_runlog(logrun.rows, out / "runlog.csv")
        raise
    logrun.net = net

    if config.analyzers.calibration:
        evalset = test if test is not None else train
        _, probs = forward(net, evalset)
        conf, correct = metrics.confidences(probs, evalset.labels)
        logrun.calibration = metrics.calibration(conf, correct, config.analyzers.n_bins)
    if config.analyzers.mia:
        if test is None or len(test) < 2:
            log.warning("membership inference needs a held-out set; skipped")
        else:
            f_tr, _ = forward(net, train)
            f_te, _ = forward(net, test)
            m = train.targets.shape[1]
            logrun.mia = metrics.mia_attack(f_tr, train.labels, f_te, test.labels,
                                            seed=config.seed, n_classes=m)
            per, notes = metrics.per_class_auc(logrun.mia)
            logrun.mia_per_class = {str(k): v for k, v in per.items()}
            logrun.mia.notes.extend(notes)
    if out is not None:
        write_artifacts(logrun, config, out)
    return logrun


def write_artifacts(logrun: RunLog, config: ExperimentConfig, out: Path) -> None:
    write_runlog(logrun.rows, out / "runlog.csv")
    (out / "summary.json").write_text(json.dumps(logrun.summary(config), indent=2, default=_json_default) + "\n")
    (out / "model.json").write_text(json.dumps(logrun.net.to_dict()) + "\n")
    for k, rep in logrun.ntk_reports.items():
        (out / f"ntk_step_{k}.json").write_text(json.dumps(rep, indent=2, default=_json_default) + "\n")
    if logrun.calibration is not None:
        bins = metrics.reliability_bins(logrun.calibration)
        _write_csv(out / "reliability.csv", ("edge_lo", "edge_hi", "count", "accuracy", "mean_confidence"), bins)
        hist = [{k: b[k] for k in ("edge_lo", "edge_hi", "count")} for b in bins]
        _write_csv(out / "histogram.csv", ("edge_lo", "edge_hi", "count"), hist)
    if logrun.mia is not None:
        write_mia_csv(out / "mia.csv", logrun.mia.auc, logrun.mia_per_class)
    if config.analyzers.charts and logrun.rows:
        steps = [r["step"] for r in logrun.rows]
        series = {"train": (steps, [r["train_loss"] for r in logrun.rows])}
        if logrun.rows[0]["test_loss"] is not None:
            series["test"] = (steps, [r["test_loss"] for r in logrun.rows])
        (out / "loss.svg").write_text(svg.line_chart(series, "loss", "step", "loss", log_y=True))
        if logrun.calibration is not None:
            (out / "reliability.svg").write_text(
                svg.reliability_chart(metrics.reliability_bins(logrun.calibration))
            )


def write_mia_csv(path: Path, overall: float, per_class: dict) -> None:
    rows = [{"class": "all", "auc": overall}]
    rows += [{"class": str(k), "auc": v} for k, v in per_class.items()]
    _write_csv(path, ("class", "auc"), rows)


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


@dataclass
class PairedRun:
    local: RunLog
    global_: RunLog
    diff: dict


def run_paired(config: ExperimentConfig, out: str | Path | None = None) -> PairedRun:
    """Local and global clipping with identical seeds and noise, run one after the other.

    Raises :class:`privacy.LedgerMismatch` if the two privacy ledgers differ.
    """
    if config.clip.mode not in ("local", "global"):
        raise ValueError("paired runs compare local and global clipping")
    out = Path(out) if out is not None else (Path(config.out) if config.out else None)
    a = run(config.with_mode("local"), out / "local" if out else None)
    b = run(config.with_mode("global"), out / "global" if out else None)
    privacy.ledger_equality_check(a.ledger, b.ledger)
    la, lb = a.rows[-1], b.rows[-1]
    diff = {
        "ledgers_identical": True,
        "privacy": a.ledger.to_dict(),
        "final_train_loss": {"local": la["train_loss"], "global": lb["train_loss"]},
        "final_test_loss": {"local": la["test_loss"], "global": lb["test_loss"]},
        "final_test_acc": {"local": la["test_acc"], "global": lb["test_acc"]},
        "first_step_factors": {
            "local": _stats(a.first_factors),
            "global": _stats(b.first_factors),
        },
    }
    if a.calibration is not None:
        diff["ece"] = {"local": a.calibration.ece, "global": b.calibration.ece,
                       "margin": a.calibration.ece - b.calibration.ece}
    if a.mia is not None and b.mia is not None:
        diff["mia_auc"] = {"local": a.mia.auc, "global": b.mia.auc}
    if out is not None:
        (out / "paired_summary.json").write_text(json.dumps(diff, indent=2, default=_json_default) + "\n")
    return PairedRun(a, b, diff)


def _stats(v):
    if v is None:
        return None
    return {"min": float(v.min()), "mean": float(v.mean()), "max": float(v.max())}

