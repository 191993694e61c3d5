"""Anomaly injection, ranking metrics and the end-to-end evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .ingest import Dataset
from .exceptions import UndefinedMetricError
from .model import ApeModel

logger = logging.getLogger(__name__)

REPLACEMENT_MODES = ("uniform", "unigram")


def _check_labels(labels, scores):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ValueError("labels and scores must be 1-d arrays of equal length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 (normal) or 1 (anomalous)")
    labels = labels.astype(np.int64)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise UndefinedMetricError("ranking metrics need both normal and anomalous examples")
    return labels, scores, n_pos


def roc_auc(labels, scores) -> float:
    """Probability that an anomaly outscores a normal event, ties counting one half."""
    labels, scores, n_pos = _check_labels(labels, scores)
    n_neg = len(labels) - n_pos
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(labels, scores) -> float:
    """Mean of precision@k over the ranks k of the anomalies.

    Ranking is by descending score; within a tie normals are placed first,
    which gives the pessimistic value.
    """
    labels, scores, n_pos = _check_labels(labels, scores)
    order = np.lexsort((labels, -scores))
    hits = labels[order]
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return math.fsum(precision[hits == 1]) / n_pos


def curve_points(labels, scores) -> list[dict]:
    """Threshold sweep for ROC and PR curves, as flat records for CSV export."""
    from sklearn.metrics import precision_recall_curve, roc_curve

    labels, scores, _ = _check_labels(labels, scores)
    fpr, tpr, roc_thr = roc_curve(labels, scores)
    precision, recall, pr_thr = precision_recall_curve(labels, scores)
    out = [
        {"curve": "roc", "threshold": float(t), "x": float(x), "y": float(y)}
        for x, y, t in zip(fpr, tpr, roc_thr)
    ]
    # the last PR point has no threshold
    out += [
        {"curve": "pr", "threshold": float(t), "x": float(r), "y": float(p)}
        for r, p, t in zip(recall, precision, np.append(pr_thr, np.inf))
    ]
    return out


def inject_anomalies(
    test: Dataset,
    c: int,
    forbidden: set | None,
    rng: np.random.Generator,
    mode: str = "uniform",
    max_retries: int = 100,
) -> tuple[Dataset, int]:
    """One c-replacement anomaly per test event.

    ``c`` distinct types are picked uniformly among those with at least two
    known entities, and each picked attribute is replaced by a different
    entity of its type. Candidates found in ``forbidden`` are redrawn, up to
    ``max_retries`` times; events that exhaust the budget are skipped.
    Returns the anomalies and the number of skipped events.
    """
    vocab = test.vocab
    m = test.schema.m
    if mode not in REPLACEMENT_MODES:
        raise ValueError(f"replacement mode must be one of {REPLACEMENT_MODES}")
    eligible = np.array([t for t in range(m) if vocab.arities[t] >= 2])
    if not 1 <= c <= m:
        raise ValueError(f"c must lie in [1, {m}], got {c}")
    if len(eligible) < c:
        raise ValueError(f"only {len(eligible)} types have two or more entities, cannot replace {c}")
    forbidden = forbidden if forbidden is not None else set()
    unigram = [cnt / cnt.sum() for cnt in vocab.counts] if mode == "unigram" else None

    def draw(t, current):
        arity = vocab.arities[t]
        j = vocab.lookup(t, current)
        if unigram is None:
            if j is None:
                return vocab.entities[t][rng.integers(arity)]
            r = int(rng.integers(arity - 1))
            return vocab.entities[t][r + (r >= j)]
        while True:
            r = int(rng.choice(arity, p=unigram[t]))
            if r != j:
                return vocab.entities[t][r]

    out, skipped = [], 0
    for row in test.rows():
        for _ in range(max_retries):
            cand = list(row)
            for t in rng.choice(eligible, size=c, replace=False):
                cand[t] = draw(int(t), row[t])
            cand = tuple(cand)
            if cand not in forbidden:
                out.append(cand)
                break
        else:
            skipped += 1
    if skipped:
        logger.warning("skipped %d events after %d rejected replacements each", skipped, max_retries)
    return Dataset.from_rows(out, test.schema, vocab, allow_unk=True, source=f"injected(c={c})"), skipped


@dataclass
class LabeledScores:
    scores: np.ndarray
    labels: np.ndarray
    rows: list[tuple[str, ...]]


@dataclass
class EvalReport:
    roc_auc: float
    average_precision: float
    n_normal: int
    n_anomalous: int
    c: int
    n_skipped: int = 0
    top: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    model: ApeModel,
    test: Dataset,
    c: int,
    rng: np.random.Generator,
    train: Dataset | None = None,
    mode: str = "uniform",
    top: int = 20,
    sample_fraction: float | None = None,
) -> tuple[EvalReport, LabeledScores]:
    """Label ``test`` events normal, inject one anomaly per event, and rank both.

    ``test`` is expected to hold only new events (see
    :func:`~ape_anomaly.ingest.filter_new_events`). Injected anomalies avoid
    every event of ``train`` and ``test``.
    """
    if sample_fraction is not None:
        if not 0 < sample_fraction <= 1:
            raise ValueError("sample_fraction must lie in (0, 1]")
        k = max(1, int(round(sample_fraction * len(test))))
        test = test.subset(np.sort(rng.choice(len(test), size=k, replace=False)))
    forbidden = set(test.rows())
    if train is not None:
        forbidden.update(train.rows())
    anomalies, skipped = inject_anomalies(test, c, forbidden, rng, mode=mode)

    rows = test.rows() + anomalies.rows()
    events = np.concatenate([test.events, anomalies.events])
    labels = np.r_[np.zeros(len(test), dtype=np.int64), np.ones(len(anomalies), dtype=np.int64)]
    scores = model.anomaly_score(events)
    report = EvalReport(
        roc_auc=roc_auc(labels, scores),
        average_precision=average_precision(labels, scores),
        n_normal=len(test),
        n_anomalous=len(anomalies),
        c=c,
        n_skipped=skipped,
    )
    names = model.schema.types
    for idx in np.argsort(-scores, kind="stable")[:top]:
        report.top.append(
            {
                "event": dict(zip(names, rows[idx])),
                "anomaly_score": float(scores[idx]),
                "label": int(labels[idx]),
                "pairs": [
                    {"types": [names[i], names[j]], "contribution": v}
                    for (i, j), v in model.pair_attribution(events[idx])[:3]
                ],
            }
        )
    return report, LabeledScores(scores, labels, rows)
