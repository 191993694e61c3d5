"""Noise-contrastive training of :class:`~ape_anomaly.model.ApeModel`.

Each observed event is contrasted with ``k = m * negatives_per_type`` noise
events. Per example the maximized objective is::

    log sig(lp(e) - lkpn(e)) + sum_e' log sig(-(lp(e') - lkpn(e')))

where ``lp`` is the model log-probability and ``lkpn`` the log of ``k``
times the noise density (approximated, or fixed at 0 for ablations).
"""
from __future__ import annotations

import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import Dataset, split_validation
from .model import MODES, ApeModel, init_model
from .noise import (
    NoiseModel,
    build_noise,
    log_factorized,
    log_kpn_negative,
    log_kpn_observed,
    sample_context_independent,
)

logger = logging.getLogger(__name__)

NOISE_MODES = ("context_dependent", "context_independent")
PN_MODES = ("approx", "zero")
LR_DECAYS = ("linear", "constant")


@dataclass
class TrainConfig:
    dim: int = 10
    negatives_per_type: int = 3
    batch_size: int = 128
    epochs: int = 10
    learning_rate: float = 0.25
    lr_decay: str = "linear"
    noise_mode: str = "context_dependent"
    pn_mode: str = "approx"
    weight_mode: str = "weighted"
    noise_smoothing: float = 1.0
    seed: int = 0
    validation_fraction: float = 0.1
    early_stopping: bool = False
    patience: int = 2
    workers: int = 1

    def __post_init__(self):
        for name in ("dim", "negatives_per_type", "batch_size", "epochs", "patience", "workers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")
        if not self.noise_smoothing > 0:
            raise ValueError("noise_smoothing must be > 0")
        for name, allowed in (
            ("lr_decay", LR_DECAYS),
            ("noise_mode", NOISE_MODES),
            ("pn_mode", PN_MODES),
            ("weight_mode", MODES),
        ):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    updates: int = 0
    seconds: float = 0.0
    n_train: int = 0
    n_validation: int = 0
    early_stopped: bool = False
    deterministic: bool = True
    embedding_norm: float = 0.0
    weights: list[float] = field(default_factory=list)
    c: float = 0.0

    @property
    def train_objective(self) -> list[float]:
        return [e["train_objective"] for e in self.epochs]

    def to_dict(self) -> dict:
        return asdict(self)


def log_sigmoid(x):
    """``log(1 / (1 + exp(-x)))`` without overflow in either tail."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))
    return float(out) if out.ndim == 0 else out


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return float(out) if out.ndim == 0 else out


# -- negatives ------------------------------------------------------------------


def draw_negatives(batch: np.ndarray, nm: NoiseModel, cfg: TrainConfig, rng: np.random.Generator):
    """Noise events for a batch, with the log-``k Pn`` terms of every event.

    Returns ``(negatives, lkpn_observed, lkpn_negative)`` of shapes
    ``(B, k, m)``, ``(B,)`` and ``(B, k)``.
    """
    B, m = batch.shape
    kt = cfg.negatives_per_type
    k = m * kt
    if cfg.noise_mode == "context_dependent":
        neg = np.repeat(batch[:, None, :], k, axis=1)
        lk_neg = np.empty((B, k))
        for i in range(m):
            new = nm.draw(i, rng, (B, kt))
            slots = slice(i * kt, (i + 1) * kt)
            neg[:, slots, i] = new
            lk_neg[:, slots] = nm.log_probs[i][new]
        lk_obs = log_kpn_observed(nm, batch)
    else:
        neg = sample_context_independent(nm, rng, (B, k))
        lk_obs = math.log(k) + log_factorized(nm, batch)
        lk_neg = math.log(k) + log_factorized(nm, neg)
    if cfg.pn_mode == "zero":
        lk_obs = np.zeros(B)
        lk_neg = np.zeros((B, k))
    return neg, np.atleast_1d(lk_obs), lk_neg


def nce_example_objective(
    model: ApeModel,
    event,
    negatives,
    nm: NoiseModel,
    pn_mode: str = "approx",
    noise_mode: str = "context_dependent",
) -> float:
    """Objective for one observed event and its noise events.

    ``negatives`` holds ``(event, replaced_type, new_entity)`` triples; the
    last two are ignored for context-independent noise.
    """
    neg_events = [np.asarray(n[0]) for n in negatives]
    k = len(neg_events)
    if pn_mode == "zero":
        lk_obs, lk_neg = 0.0, [0.0] * k
    elif noise_mode == "context_dependent":
        lk_obs = log_kpn_observed(nm, event)
        lk_neg = [log_kpn_negative(nm, t, a) for _, t, a in negatives]
    else:
        lk_obs = math.log(k) + log_factorized(nm, event)
        lk_neg = [math.log(k) + log_factorized(nm, e) for e in neg_events]
    total = log_sigmoid(model.log_prob(event) - lk_obs)
    for e, lk in zip(neg_events, lk_neg):
        total += log_sigmoid(-(model.log_prob(e) - lk))
    return float(total)


def batch_gradient(model: ApeModel, batch, negatives, lk_obs, lk_neg):
    """Summed objective over a batch and its gradient.

    Returns ``(objective, rows, grad_rows, grad_weights, grad_c)`` where
    ``grad_rows[r]`` is the gradient for embedding-table row ``rows[r]``.
    UNK rows are excluded.
    """
    B, k, m = negatives.shape
    events = np.concatenate([batch[:, None, :], negatives], axis=1).reshape(-1, m)
    lk = np.concatenate([lk_obs[:, None], lk_neg], axis=1).ravel()
    sign = np.tile(np.r_[1.0, -np.ones(k)], B)

    Xt = model.gather(events)
    dots = model.pair_dots(Xt)
    margin = sign * (dots @ model.weights + model.c - lk)
    objective = float(log_sigmoid(margin).sum())
    coef = sign * sigmoid(-margin)

    grad_w = coef @ dots
    grad_c = float(coef.sum())
    n, d = len(events), model.dim
    W = model.weight_matrix(symmetric=True)
    grad_X = (W @ Xt.reshape(m, -1)).reshape(m, n, d) * coef[None, :, None]

    # scatter-add per dimension; bincount is much faster than np.add.at here
    rows = model.rows(events).T.ravel()
    n_rows = len(model.table)
    flat = grad_X.reshape(-1, d)
    dense = np.stack([np.bincount(rows, weights=flat[:, k], minlength=n_rows) for k in range(d)], axis=1)
    touched = np.bincount(rows, minlength=n_rows) > 0
    touched[model.unk_rows] = False
    idx = np.flatnonzero(touched)
    return objective, idx, dense[idx], grad_w, grad_c


def apply_update(model: ApeModel, rows, grad_rows, grad_w, grad_c, step: float) -> None:
    """Ascent step, then projection of the pair weights onto ``w >= 0``."""
    model.table[rows] += step * grad_rows
    if not model.frozen_weights:
        model.weights += step * grad_w
        np.maximum(model.weights, 0.0, out=model.weights)
    model.c += step * grad_c


def train_step(
    model: ApeModel,
    batch,
    nm: NoiseModel,
    cfg: TrainConfig,
    rng: np.random.Generator,
    lr: float | None = None,
) -> float:
    """One synchronous mini-batch update; returns the summed batch objective."""
    batch = np.asarray(batch, dtype=np.int64)
    if batch.ndim != 2 or len(batch) == 0:
        raise ValueError("train_step needs a non-empty (B, m) batch")
    lr = cfg.learning_rate if lr is None else lr
    neg, lk_obs, lk_neg = draw_negatives(batch, nm, cfg, rng)
    obj, rows, g_rows, g_w, g_c = batch_gradient(model, batch, neg, lk_obs, lk_neg)
    apply_update(model, rows, g_rows, g_w, g_c, lr / len(batch))
    return obj


def mean_objective(model, events, nm, cfg, rng, chunk=4096) -> float:
    total = 0.0
    for s in range(0, len(events), chunk):
        batch = events[s:s + chunk]
        neg, lk_obs, lk_neg = draw_negatives(batch, nm, cfg, rng)
        total += batch_gradient(model, batch, neg, lk_obs, lk_neg)[0]
    return total / max(len(events), 1)


def _lr_at(cfg: TrainConfig, update: int, total: int) -> float:
    if cfg.lr_decay == "constant":
        return cfg.learning_rate
    return cfg.learning_rate * max(1.0 - update / total, 1e-4)


def train(
    train_data: Dataset,
    cfg: TrainConfig | None = None,
    validation: Dataset | None = None,
    model: ApeModel | None = None,
) -> tuple[ApeModel, TrainReport]:
    """Fit a model on ``train_data``.

    Unless ``validation`` is given, ``cfg.validation_fraction`` of the events
    is held out. Deterministic for a fixed seed when ``cfg.workers == 1``.
    """
    cfg = cfg or TrainConfig()
    if len(train_data) == 0:
        raise ValueError("cannot train on an empty dataset")
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    split_rng, shuffle_rng, noise_rng, val_seed = (np.random.default_rng(s) for s in seeds)

    fit_data = train_data
    if validation is None and cfg.validation_fraction > 0 and len(train_data) > 1:
        fit_data, validation = split_validation(train_data, cfg.validation_fraction, split_rng)
    events = fit_data.events
    val_events = None if validation is None or len(validation) == 0 else validation.events

    nm = build_noise(train_data.vocab, cfg.noise_smoothing)
    if model is None:
        model = init_model(train_data.schema, train_data.vocab, cfg.dim, cfg.seed, cfg.weight_mode)
    n = len(events)
    n_batches = math.ceil(n / cfg.batch_size)
    total_updates = cfg.epochs * n_batches
    report = TrainReport(n_train=n, n_validation=0 if val_events is None else len(val_events))
    report.deterministic = cfg.workers == 1

    start = time.perf_counter()
    update = 0
    best, stale = -math.inf, 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        batches = [events[perm[s:s + cfg.batch_size]] for s in range(0, n, cfg.batch_size)]
        if cfg.workers == 1:
            obj = 0.0
            for batch in batches:
                obj += train_step(model, batch, nm, cfg, noise_rng, _lr_at(cfg, update, total_updates))
                update += 1
        else:
            obj = _train_epoch_lockfree(model, batches, nm, cfg, noise_rng, update, total_updates)
            update += len(batches)
        entry = {
            "epoch": epoch + 1,
            "train_objective": obj / n,
            "learning_rate": _lr_at(cfg, update - 1, total_updates),
            "seconds": time.perf_counter() - t0,
        }
        if val_events is not None:
            # same noise draws every epoch so the numbers are comparable
            entry["validation_objective"] = mean_objective(
                model, val_events, nm, cfg, np.random.default_rng(val_seed.bit_generator.seed_seq)
            )
        report.epochs.append(entry)
        logger.info("epoch %d: %s", epoch + 1, entry)
        if cfg.early_stopping and val_events is not None:
            if entry["validation_objective"] > best:
                best, stale = entry["validation_objective"], 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    report.early_stopped = True
                    break

    report.updates = update
    report.seconds = time.perf_counter() - start
    report.embedding_norm = float(np.linalg.norm(model.table))
    report.weights = model.weights.tolist()
    report.c = model.c
    model.metadata = {
        "config": cfg.to_dict(),
        "epochs_run": len(report.epochs),
        "updates": update,
        "n_train": n,
    }
    return model, report


def _train_epoch_lockfree(model, batches, nm, cfg, rng, update0, total_updates) -> float:
    """Workers update the shared parameters without locks; not reproducible."""
    worker_rngs = [np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(cfg.workers)]
    totals = [0.0] * cfg.workers
    counter = iter(range(len(batches)))
    lock = threading.Lock()

    def work(w):
        while True:
            with lock:  # only guards the batch cursor, never the parameters
                b = next(counter, None)
            if b is None:
                return
            lr = _lr_at(cfg, update0 + b, total_updates)
            totals[w] += train_step(model, batches[b], nm, cfg, worker_rngs[w], lr)

    with ThreadPoolExecutor(cfg.workers) as pool:
        list(pool.map(work, range(cfg.workers)))
    return sum(totals)
