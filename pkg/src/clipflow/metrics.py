"""Calibration metrics and a membership-inference attack harness."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from clipflow import rng
from clipflow.net import log_softmax


class MetricsError(ValueError):
    pass


# -- calibration ----------------------------------------------------------------


def confidences(probs, labels) -> tuple[np.ndarray, np.ndarray]:
    """Top-class probability and 0/1 correctness (argmax ties go to the lowest index)."""
    pi = np.asarray(probs, dtype=float)
    y = np.asarray(labels, dtype=int)
    if pi.ndim != 2 or pi.shape[0] != y.shape[0]:
        raise MetricsError(f"probabilities {pi.shape} do not match {y.shape[0]} labels")
    if pi.shape[0] == 0:
        raise MetricsError("no predictions")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-9):
        raise MetricsError("probability rows must be nonnegative and sum to 1")
    pred = np.argmax(pi, axis=1)
    return pi[np.arange(len(y)), pred], (pred == y).astype(float)


def bin_edges(n_bins: int) -> np.ndarray:
    return np.arange(n_bins + 1) / n_bins


def bin_index(conf: np.ndarray, n_bins: int) -> np.ndarray:
    """Bin b (0-based) covers (b/B, (b+1)/B]; a confidence of exactly 0 goes to bin 0."""
    idx = np.searchsorted(bin_edges(n_bins), conf, side="left") - 1
    return np.clip(idx, 0, n_bins - 1)


@dataclass(frozen=True)
class CalibrationReport:
    edges: np.ndarray
    counts: np.ndarray
    mean_confidence: np.ndarray
    accuracy: np.ndarray
    ece: float
    mce: float

    @property
    def gaps(self) -> np.ndarray:
        return np.abs(self.accuracy - self.mean_confidence)

    def to_dict(self) -> dict:
        return {"ece": self.ece, "mce": self.mce, "bins": reliability_bins(self)}


def calibration(conf, correct, n_bins: int = 10) -> CalibrationReport:
    """Binned ECE (count-weighted mean gap) and MCE (largest gap over nonempty bins)."""
    if n_bins < 1:
        raise MetricsError("need at least one bin")
    conf = np.asarray(conf, dtype=float)
    correct = np.asarray(correct, dtype=float)
    if conf.size == 0:
        raise MetricsError("empty input")
    if conf.shape != correct.shape:
        raise MetricsError("confidence and correctness lengths differ")
    idx = bin_index(conf, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    sum_conf = np.bincount(idx, weights=conf, minlength=n_bins)
    sum_acc = np.bincount(idx, weights=correct, minlength=n_bins)
    nonempty = counts > 0
    mean_conf = np.zeros(n_bins)
    acc = np.zeros(n_bins)
    mean_conf[nonempty] = sum_conf[nonempty] / counts[nonempty]
    acc[nonempty] = sum_acc[nonempty] / counts[nonempty]
    gaps = np.abs(acc - mean_conf)
    ece = float(np.sum(counts[nonempty] / conf.size * gaps[nonempty]))
    mce = float(np.max(gaps[nonempty]))
    return CalibrationReport(bin_edges(n_bins), counts, mean_conf, acc, ece, mce)


def reliability_bins(report: CalibrationReport) -> list[dict]:
    """Rows (edge_lo, edge_hi, count, accuracy, mean_confidence); empty bins included."""
    e = report.edges
    return [
        {
            "edge_lo": float(e[b]),
            "edge_hi": float(e[b + 1]),
            "count": int(report.counts[b]),
            "accuracy": float(report.accuracy[b]),
            "mean_confidence": float(report.mean_confidence[b]),
        }
        for b in range(len(report.counts))
    ]


def confidence_histogram(conf, n_bins: int = 10) -> list[dict]:
    conf = np.asarray(conf, dtype=float)
    counts = np.bincount(bin_index(conf, n_bins), minlength=n_bins)
    e = bin_edges(n_bins)
    return [
        {"edge_lo": float(e[b]), "edge_hi": float(e[b + 1]), "count": int(counts[b])}
        for b in range(n_bins)
    ]


# -- membership inference -------------------------------------------------------


def auc(pos_scores, neg_scores) -> float:
    """ROC AUC as the Mann-Whitney statistic; ties count one half."""
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise MetricsError("AUC needs both positive and negative scores")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = np.sum(ranks[:pos.size]) - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def attack_features(logits, labels, n_classes: int) -> np.ndarray:
    """concat(normalized logits, one-hot label).

    Logits are shifted by their log-sum-exp, which leaves the predicted
    distribution unchanged but removes the arbitrary per-row offset.
    """
    z = log_softmax(np.atleast_2d(np.asarray(logits, dtype=float)))
    onehot = np.eye(n_classes)[np.asarray(labels, dtype=int)]
    return np.hstack([z, onehot])


def fit_logistic(x: np.ndarray, y: np.ndarray, iters: int = 500, lr: float = 0.1,
                 l2: float = 1e-4) -> tuple[np.ndarray, float]:
    """Full-batch gradient descent on the L2-penalized logistic loss."""
    w = np.zeros(x.shape[1])
    b = 0.0
    n = x.shape[0]
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        err = p - y
        w -= lr * (x.T @ err / n + l2 * w)
        b -= lr * float(np.mean(err))
    return w, b


@dataclass
class MIAResult:
    weights: np.ndarray
    bias: float
    member_scores: np.ndarray
    nonmember_scores: np.ndarray
    member_labels: np.ndarray
    nonmember_labels: np.ndarray
    auc: float
    notes: list[str] = field(default_factory=list)


def _split(n: int, seed: int, tag: str) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.generator(seed, 0, tag).permutation(n)
    half = n // 2
    return perm[:half], perm[half:]


def mia_attack(member_logits, member_labels, nonmember_logits, nonmember_labels,
               seed: int = 0, n_classes: int | None = None, train_fraction: float = 0.5) -> MIAResult:
    """Train a logistic attacker on half of each set, report AUC on the other half."""
    ml = np.asarray(member_labels, dtype=int)
    nl = np.asarray(nonmember_labels, dtype=int)
    if ml.size < 2 or nl.size < 2:
        raise MetricsError("member and non-member sets each need at least two samples")
    if n_classes is None:
        n_classes = int(max(ml.max(), nl.max())) + 1
    fm = attack_features(member_logits, ml, n_classes)
    fn = attack_features(nonmember_logits, nl, n_classes)
    m_tr, m_te = _split(len(ml), seed, "mia/members")
    n_tr, n_te = _split(len(nl), seed, "mia/nonmembers")
    x_tr = np.vstack([fm[m_tr], fn[n_tr]])
    y_tr = np.concatenate([np.ones(len(m_tr)), np.zeros(len(n_tr))])
    if y_tr.min() == y_tr.max():
        raise MetricsError("degenerate attack training split")
    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0)
    sd[sd == 0] = 1.0
    w, b = fit_logistic((x_tr - mu) / sd, y_tr)

    def score(f):
        return ((f - mu) / sd) @ w + b

    ms, ns = score(fm[m_te]), score(fn[n_te])
    return MIAResult(w, b, ms, ns, ml[m_te], nl[n_te], auc(ms, ns))


def per_class_auc(result: MIAResult) -> tuple[dict[int, float], list[str]]:
    """AUC restricted to held-out samples of each class."""
    out, notes = {}, []
    classes = sorted(set(result.member_labels.tolist()) | set(result.nonmember_labels.tolist()))
    for k in classes:
        pos = result.member_scores[result.member_labels == k]
        neg = result.nonmember_scores[result.nonmember_labels == k]
        if pos.size == 0 or neg.size == 0:
            notes.append(f"class {k} absent from the {'member' if pos.size == 0 else 'non-member'} set")
            continue
        out[k] = auc(pos, neg)
    return out, notes
