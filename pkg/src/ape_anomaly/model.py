"""The pairwise-interaction event model.

Each (type, entity) pair owns a ``d``-vector; the score of an event is the
weighted sum over type pairs ``i < j`` of ``w_ij * <v_ai, v_aj>`` and the
unnormalized log-probability adds a learned offset ``c``.

All embeddings live in one ``(rows, d)`` table; type ``i`` occupies rows
``offsets[i]:offsets[i + 1]`` and its last row is the UNK vector, kept at
zero.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .core import EventSchema, Vocabulary, validate_events
from .exceptions import ChecksumError, ModelFormatError, SchemaMismatchError, VersionMismatchError

MODES = ("weighted", "no_weight")
FORMAT_VERSION = 1
MAGIC = b"APEMODEL"


@dataclass
class Gradient:
    """Partials of the log-probability of one event.

    ``embeddings`` is sparse: it maps ``(type, entity index)`` to a d-vector
    and only holds entities present in the event.
    """

    embeddings: dict[tuple[int, int], np.ndarray]
    weights: np.ndarray
    c: float


@dataclass
class ApeModel:
    schema: EventSchema
    vocab: Vocabulary
    dim: int
    table: np.ndarray
    weights: np.ndarray
    c: float = 0.0
    mode: str = "weighted"
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        m = self.schema.m
        self.offsets = np.concatenate([[0], np.cumsum(np.asarray(self.vocab.arities) + 1)]).astype(np.int64)
        self.unk_rows = self.offsets[1:] - 1
        pairs = list(combinations(range(m), 2))
        self.pair_i = np.array([p[0] for p in pairs], dtype=np.int64)
        self.pair_j = np.array([p[1] for p in pairs], dtype=np.int64)
        self.table = np.ascontiguousarray(self.table, dtype=np.float64)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.table.shape != (self.offsets[-1], self.dim):
            raise ValueError(f"embedding table shape {self.table.shape} != {(int(self.offsets[-1]), self.dim)}")
        if self.weights.shape != (len(pairs),):
            raise ValueError(f"expected {len(pairs)} pair weights, got shape {self.weights.shape}")
        self.c = float(self.c)

    @property
    def m(self) -> int:
        return self.schema.m

    @property
    def n_pairs(self) -> int:
        return len(self.pair_i)

    @property
    def frozen_weights(self) -> bool:
        return self.mode == "no_weight"

    @property
    def embeddings(self) -> list[np.ndarray]:
        """Per-type views into the embedding table, UNK row last."""
        return [self.table[self.offsets[i]:self.offsets[i + 1]] for i in range(self.m)]

    def weight_matrix(self, symmetric: bool = False) -> np.ndarray:
        W = np.zeros((self.m, self.m))
        W[self.pair_i, self.pair_j] = self.weights
        if symmetric:
            W[self.pair_j, self.pair_i] = self.weights
        return W

    def pair_index(self, i: int, j: int) -> int:
        i, j = min(i, j), max(i, j)
        if i == j:
            raise ValueError("a pair needs two distinct types")
        # row-major position of (i, j) in the upper triangle
        return i * self.m - i * (i + 1) // 2 + (j - i - 1)

    # -- batched primitives shared with the trainer -------------------------

    def rows(self, events: np.ndarray) -> np.ndarray:
        return events + self.offsets[:-1]

    def gather(self, events: np.ndarray) -> np.ndarray:
        """Embeddings of a batch in type-major layout ``(m, n, d)``."""
        rows = self.rows(events)
        return np.stack([self.table[rows[:, i]] for i in range(self.m)])

    def pair_dots(self, Xt: np.ndarray) -> np.ndarray:
        """Type-major embeddings ``(m, n, d)`` -> ``(n, n_pairs)`` dot products."""
        out = np.empty((Xt.shape[1], self.n_pairs))
        for p, (i, j) in enumerate(zip(self.pair_i, self.pair_j)):
            np.einsum("nd,nd->n", Xt[i], Xt[j], out=out[:, p])
        return out

    # -- public scoring API -------------------------------------------------

    def _check(self, events) -> tuple[np.ndarray, bool]:
        arr = np.asarray(events)
        single = arr.ndim == 1
        return validate_events(arr, self.vocab.arities), single

    def score(self, events):
        """Pairwise interaction score; a float for one event, an array for a batch."""
        ev, single = self._check(events)
        s = self.pair_dots(self.gather(ev)) @ self.weights
        return float(s[0]) if single else s

    def log_prob(self, events):
        ev, single = self._check(events)
        lp = self.pair_dots(self.gather(ev)) @ self.weights + self.c
        return float(lp[0]) if single else lp

    def anomaly_score(self, events):
        """Negative unnormalized log-likelihood; larger means more anomalous."""
        lp = self.log_prob(events)
        return -lp

    def grad_log_prob(self, event) -> Gradient:
        ev, _ = self._check(event)
        e = ev[0]
        X = self.table[self.rows(ev)][0]
        G = self.weight_matrix(symmetric=True) @ X
        emb = {}
        for i, a in enumerate(e):
            # UNK rows are pinned at zero
            emb[(i, int(a))] = np.zeros(self.dim) if a == self.vocab.unk_index(i) else G[i].copy()
        dots = np.einsum("pd,pd->p", X[self.pair_i], X[self.pair_j])
        return Gradient(emb, dots, 1.0)

    def pair_attribution(self, event) -> list[tuple[tuple[int, int], float]]:
        """Per type-pair contributions to the score, lowest first."""
        ev, _ = self._check(event)
        dots = self.pair_dots(self.gather(ev))[0]
        contrib = self.weights * dots
        order = np.argsort(contrib, kind="stable")
        return [((int(self.pair_i[p]), int(self.pair_j[p])), float(contrib[p])) for p in order]

    def log_total_mass(self, limit: int = 10**6) -> float:
        """``log sum_e exp(score(e) + c)`` by enumerating every event without UNK."""
        arities = self.vocab.arities
        size = int(np.prod(arities, dtype=np.float64))
        if size > limit:
            raise ValueError(f"event space has {size} events, above the enumeration limit {limit}")
        grid = np.indices(arities).reshape(self.m, -1).T
        return float(logsumexp(self.score(grid))) + self.c

    def copy(self) -> "ApeModel":
        return ApeModel(
            self.schema, self.vocab, self.dim, self.table.copy(), self.weights.copy(),
            self.c, self.mode, self.seed, json.loads(json.dumps(self.metadata)),
        )

    def save(self, path) -> None:
        save_model(self, path)


def init_model(
    schema: EventSchema,
    vocab: Vocabulary,
    d: int = 10,
    seed: int | None = 0,
    mode: str = "weighted",
) -> ApeModel:
    """Random uniform embeddings in ``[-0.5/d, 0.5/d]``, unit weights, ``c = 0``."""
    if d < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {d}")
    if vocab.schema != schema:
        raise SchemaMismatchError("vocabulary was built for a different schema")
    rng = np.random.default_rng(seed)
    blocks = []
    for arity in vocab.arities:
        block = np.zeros((arity + 1, d))
        block[:arity] = rng.uniform(-0.5 / d, 0.5 / d, size=(arity, d))
        blocks.append(block)
    m = schema.m
    table = np.concatenate(blocks) if blocks else np.zeros((0, d))
    return ApeModel(schema, vocab, d, table, np.ones(m * (m - 1) // 2), 0.0, mode, seed)


# -- persistence ---------------------------------------------------------------
#
# MAGIC | u64 header length | JSON header | float64 LE payload | u32 CRC-32
# The CRC covers every byte between the magic and the checksum itself.


def _header(model: ApeModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "schema": model.schema.to_dict(),
        "dim": model.dim,
        "mode": model.mode,
        "seed": model.seed,
        "metadata": model.metadata,
        "vocabulary": model.vocab.to_dict(),
    }


def to_bytes(model: ApeModel) -> bytes:
    header = json.dumps(_header(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(
        [
            model.table.astype("<f8").tobytes(order="C"),
            model.weights.astype("<f8").tobytes(),
            np.array([model.c], dtype="<f8").tobytes(),
        ]
    )
    body = struct.pack("<Q", len(header)) + header + payload
    return MAGIC + body + struct.pack("<I", zlib.crc32(body))


def from_bytes(data: bytes, schema: EventSchema | None = None) -> ApeModel:
    if data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if len(data) < len(MAGIC) + 12:
        raise ChecksumError("model file truncated")
    body, crc = data[len(MAGIC):-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise ChecksumError("model file checksum mismatch (truncated or corrupted)")
    (hlen,) = struct.unpack("<Q", body[:8])
    header = json.loads(body[8:8 + hlen].decode("utf-8"))
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"model format version {version}, this build reads {FORMAT_VERSION}")
    file_schema = EventSchema.from_dict(header["schema"])
    if schema is not None and schema != file_schema:
        raise SchemaMismatchError(f"model schema {list(file_schema.types)} != expected {list(schema.types)}")
    vocab = Vocabulary.from_dict(file_schema, header["vocabulary"])
    d = int(header["dim"])
    rows = sum(a + 1 for a in vocab.arities)
    m = file_schema.m
    n_w = m * (m - 1) // 2
    payload = np.frombuffer(body[8 + hlen:], dtype="<f8")
    if payload.size != rows * d + n_w + 1:
        raise ModelFormatError(f"payload holds {payload.size} floats, header implies {rows * d + n_w + 1}")
    table = payload[: rows * d].reshape(rows, d).astype(np.float64)
    weights = payload[rows * d: rows * d + n_w].astype(np.float64)
    return ApeModel(
        file_schema, vocab, d, table, weights, float(payload[-1]),
        header["mode"], header["seed"], header["metadata"],
    )


def save_model(model: ApeModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load_model(path, schema: EventSchema | None = None) -> ApeModel:
    return from_bytes(Path(path).read_bytes(), schema)

