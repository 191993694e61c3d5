"""scikit-learn compatible wrapper around vocabulary building and training."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_is_fitted

from .core import EventSchema, encode_events
from .exceptions import SchemaMismatchError
from .ingest import Dataset
from .trainer import TrainConfig, train


def check_events(X, n_types: int | None = None) -> tuple[list[tuple[str, ...]], list[str] | None]:
    """Coerce ``X`` to a list of string tuples.

    Accepts a 2-d array-like or a DataFrame (whose columns become type
    names). Every value is converted with ``str``.
    """
    columns = None
    if hasattr(X, "columns") and hasattr(X, "to_numpy"):
        columns = [str(c) for c in X.columns]
        X = X.to_numpy()
    arr = np.asarray(X, dtype=object)
    if arr.ndim == 1 and arr.size and isinstance(arr[0], (tuple, list)):
        arr = np.array([list(r) for r in arr], dtype=object)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d array of categorical events, got {arr.ndim}-d input")
    if n_types is not None and arr.shape[1] != n_types:
        raise SchemaMismatchError(f"X has {arr.shape[1]} columns, the detector was fitted on {n_types}")
    rows = [tuple(str(v) for v in r) for r in arr]
    return rows, columns


class APEDetector(OutlierMixin, BaseEstimator):
    """Unsupervised detector for categorical events.

    ``fit`` learns entity embeddings and pair weights by noise-contrastive
    estimation; ``score_samples`` returns the unnormalized log-likelihood
    (lower is more abnormal), following the scikit-learn outlier API.
    Unseen entities at prediction time fall back to a zero UNK embedding.

    Parameters mirror :class:`~ape_anomaly.trainer.TrainConfig`;
    ``contamination`` only sets the threshold used by ``predict``.
    """

    def __init__(
        self,
        dim=10,
        negatives_per_type=3,
        batch_size=128,
        epochs=10,
        learning_rate=0.25,
        lr_decay="linear",
        noise_mode="context_dependent",
        pn_mode="approx",
        weight_mode="weighted",
        noise_smoothing=1.0,
        validation_fraction=0.1,
        early_stopping=False,
        contamination=0.1,
        type_names=None,
        random_state=0,
    ):
        self.dim = dim
        self.negatives_per_type = negatives_per_type
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.noise_mode = noise_mode
        self.pn_mode = pn_mode
        self.weight_mode = weight_mode
        self.noise_smoothing = noise_smoothing
        self.validation_fraction = validation_fraction
        self.early_stopping = early_stopping
        self.contamination = contamination
        self.type_names = type_names
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            dim=self.dim,
            negatives_per_type=self.negatives_per_type,
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            lr_decay=self.lr_decay,
            noise_mode=self.noise_mode,
            pn_mode=self.pn_mode,
            weight_mode=self.weight_mode,
            noise_smoothing=self.noise_smoothing,
            seed=0 if self.random_state is None else int(self.random_state),
            validation_fraction=self.validation_fraction,
            early_stopping=self.early_stopping,
        )

    def fit(self, X, y=None):
        if not 0 < self.contamination <= 0.5:
            raise ValueError(f"contamination must lie in (0, 0.5], got {self.contamination}")
        rows, columns = check_events(X)
        names = self.type_names or columns or [f"t{i}" for i in range(len(rows[0]) if rows else 0)]
        schema = EventSchema(tuple(names))
        if rows and len(rows[0]) != schema.m:
            raise SchemaMismatchError(f"{len(names)} type names for {len(rows[0])} columns")
        data = Dataset.from_rows(rows, schema)
        self.model_, self.report_ = train(data, self._config())
        self.schema_ = schema
        self.vocabulary_ = data.vocab
        self.n_features_in_ = schema.m
        self.offset_ = float(np.quantile(self.model_.log_prob(data.events), self.contamination))
        return self

    def _encode(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        rows, _ = check_events(X, self.n_features_in_)
        return encode_events(rows, self.vocabulary_, allow_unk=True)

    def score_samples(self, X) -> np.ndarray:
        return self.model_.log_prob(self._encode(X))

    def anomaly_score(self, X) -> np.ndarray:
        return -self.score_samples(X)

    def decision_function(self, X) -> np.ndarray:
        """Shifted log-likelihood; negative values are predicted outliers."""
        return self.score_samples(X) - self.offset_

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) < 0, -1, 1)

    def explain(self, X) -> list[list[tuple[tuple[str, str], float]]]:
        """Pair contributions per event, lowest (most suspicious) first."""
        names = self.schema_.types
        return [
            [((names[i], names[j]), v) for (i, j), v in self.model_.pair_attribution(e)]
            for e in self._encode(X)
        ]

    @property
    def pair_weights_(self) -> dict[tuple[str, str], float]:
        check_is_fitted(self, "model_")
        names = self.schema_.types
        m = self.model_
        return {(names[i], names[j]): float(w) for i, j, w in zip(m.pair_i, m.pair_j, m.weights)}
