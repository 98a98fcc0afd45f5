"""Hashed sparse-feature emission scorer, trainer and model files.

The emission of tag ``c`` at token ``i`` for entity type ``k`` is
``W_k[:, c] . z_i + b_k[c]`` where ``z_i`` is a hashed sparse feature vector
shared by every type.

Model file layout (little-endian)::

    b"NSEQ"                     magic
    u32                         format version (FORMAT_VERSION)
    u32                         length L of the config block
    L bytes                     UTF-8 JSON config: types, hash_size, features,
                                step, has_optimizer_state
    per type, in config order:
      5 x f64                   bias b_k
      hash_size x 5 x f64       weights W_k, feature-major
      if has_optimizer_state:
        hash_size x 5 x f64     Adam first moment of W_k
        hash_size x 5 x f64     Adam second moment of W_k
        5 x f64, 5 x f64        Adam moments of b_k
"""

from __future__ import annotations

import copy
import json
import logging
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Document, corpus_types
from .decode import nested_decode
from .evaluation import score
from .lattice import LatticeScores
from .objective import EXCLUDE_GOLD_PARENT, OBJECTIVE_NESTED, loss_and_grad
from .tagging import NUM_TAGS, Mention, levelize

log = logging.getLogger(__name__)

MAGIC = b"NSEQ"
FORMAT_VERSION = 1
DEFAULT_HASH_SIZE = 2**20
PAD = "<PAD>"


class ModelConfigError(ValueError):
    pass


class ModelFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ModelVersionError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class FeatureConfig:
    window: int = 2
    affix_max: int = 3


@dataclass(frozen=True)
class FeatureVector:
    ids: np.ndarray
    values: np.ndarray
    names: Tuple[str, ...] = ()


def word_shape(token: str) -> str:
    out = []
    for ch in token:
        if ch.isupper():
            out.append("A")
        elif ch.islower():
            out.append("a")
        elif ch.isdigit():
            out.append("0")
        else:
            out.append(ch)
    return "".join(out)


def _token_features(token: str, affix_max: int) -> List[str]:
    feats = [f"word={token}", f"lower={token.lower()}", f"shape={word_shape(token)}"]
    for j in range(1, affix_max + 1):
        if len(token) >= j:
            feats.append(f"prefix{j}={token[:j]}")
            feats.append(f"suffix{j}={token[-j:]}")
    return feats


def feature_names(tokens: Sequence[str], config: FeatureConfig = FeatureConfig()) -> List[List[str]]:
    per_token = [_token_features(t, config.affix_max) for t in tokens]
    out = []
    for i in range(len(tokens)):
        names = list(per_token[i])
        for off in range(-config.window, config.window + 1):
            if off == 0:
                continue
            j = i + off
            if 0 <= j < len(tokens):
                names.extend(f"{off:+d}:{f}" for f in per_token[j])
            else:
                names.append(f"{off:+d}:word={PAD}")
        out.append(names)
    return out


def hash_feature(name: str, hash_size: int) -> int:
    return zlib.crc32(name.encode("utf-8")) % hash_size


def featurize(tokens: Sequence[str], config: FeatureConfig = FeatureConfig(),
              hash_size: int = DEFAULT_HASH_SIZE) -> List[FeatureVector]:
    if not tokens:
        raise InputError("cannot featurize an empty token list")
    out = []
    for names in feature_names(tokens, config):
        ids = np.array([hash_feature(f, hash_size) for f in names], dtype=np.int64)
        uniq, counts = np.unique(ids, return_counts=True)
        out.append(FeatureVector(uniq, counts.astype(np.float64), tuple(names)))
    return out


@dataclass(frozen=True)
class PackedFeatures:
    """A sentence's feature vectors concatenated for vectorised scoring."""

    ids: np.ndarray
    values: np.ndarray
    offsets: np.ndarray
    token_index: np.ndarray

    @property
    def n(self) -> int:
        return len(self.offsets)

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector]) -> "PackedFeatures":
        lengths = [len(v.ids) for v in vectors]
        offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        return cls(
            ids=np.concatenate([v.ids for v in vectors]),
            values=np.concatenate([v.values for v in vectors]),
            offsets=offsets,
            token_index=np.repeat(np.arange(len(vectors)), lengths),
        )


# ---------------------------------------------------------------------------
# parameters


@dataclass
class AdamState:
    step: int = 0
    m_w: Dict[Hashable, np.ndarray] = field(default_factory=dict)
    v_w: Dict[Hashable, np.ndarray] = field(default_factory=dict)
    m_b: Dict[Hashable, np.ndarray] = field(default_factory=dict)
    v_b: Dict[Hashable, np.ndarray] = field(default_factory=dict)


@dataclass
class ModelParams:
    types: List[str]
    hash_size: int = DEFAULT_HASH_SIZE
    features: FeatureConfig = field(default_factory=FeatureConfig)
    weights: Dict[str, np.ndarray] = field(default_factory=dict)
    biases: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: Optional[AdamState] = None

    @classmethod
    def zeros(cls, types: Sequence[str], hash_size: int = DEFAULT_HASH_SIZE,
              features: FeatureConfig = FeatureConfig()) -> "ModelParams":
        if len(set(types)) != len(types):
            raise ModelConfigError("entity types must be distinct")
        if hash_size < 1:
            raise ModelConfigError("hash_size must be positive")
        return cls(
            types=list(types),
            hash_size=hash_size,
            features=features,
            weights={k: np.zeros((hash_size, NUM_TAGS)) for k in types},
            biases={k: np.zeros(NUM_TAGS) for k in types},
        )

    def featurize(self, tokens: Sequence[str]) -> PackedFeatures:
        return PackedFeatures.from_vectors(featurize(tokens, self.features, self.hash_size))

    def config_dict(self) -> Dict:
        return {
            "types": list(self.types),
            "hash_size": self.hash_size,
            "features": asdict(self.features),
        }


def emissions(params: ModelParams, features, entity_type: str) -> np.ndarray:
    """Emission matrix ``P`` of shape ``5 x n``."""
    if entity_type not in params.weights:
        raise ModelConfigError(f"unknown entity type {entity_type!r}")
    if not isinstance(features, PackedFeatures):
        features = PackedFeatures.from_vectors(features)
    w = params.weights[entity_type]
    contrib = w[features.ids] * features.values[:, None]
    p = np.add.reduceat(contrib, features.offsets, axis=0) + params.biases[entity_type][None, :]
    return p.T


def lattices(params: ModelParams, features: PackedFeatures) -> List[LatticeScores]:
    return [LatticeScores(k, emissions(params, features, k)) for k in params.types]


def predict(params: ModelParams, tokens: Sequence[str], max_depth: Optional[int] = None,
            features: Optional[PackedFeatures] = None, stats=None) -> List[Mention]:
    feats = features if features is not None else params.featurize(tokens)
    return nested_decode(lattices(params, feats), len(tokens), max_depth, stats)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-2
    clip: float = 5.0
    batch_size: int = 32
    seed: int = 0
    patience: int = 20
    hash_size: int = DEFAULT_HASH_SIZE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    exclude: str = EXCLUDE_GOLD_PARENT
    objective: str = OBJECTIVE_NESTED
    include_leaf_spans: bool = True
    eval_max_depth: Optional[int] = None

    def check(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ModelConfigError("epochs >= 0, batch_size >= 1 and patience >= 1 are required")
        if self.lr < 0 or self.clip <= 0:
            raise ModelConfigError("lr must be non-negative and clip positive")


@dataclass
class _Example:
    features: PackedFeatures
    gold: object


def _prepare(params: ModelParams, docs: Sequence[Document], config: TrainConfig) -> List[_Example]:
    return [
        _Example(params.featurize(d.tokens),
                 levelize(d.mentions, len(d.tokens), params.types, config.include_leaf_spans))
        for d in docs
    ]


def batch_gradient(params: ModelParams, batch: Sequence[_Example], config: TrainConfig):
    """Mean loss over ``batch`` and its sparse gradient.

    Returns ``(loss, {type: (feature_ids, rows)}, {type: bias_grad})`` with
    ``rows[j]`` the gradient of ``W[feature_ids[j]]``.
    """
    scale = 1.0 / len(batch)
    total = 0.0
    ids_acc: Dict[str, List[np.ndarray]] = {k: [] for k in params.types}
    rows_acc: Dict[str, List[np.ndarray]] = {k: [] for k in params.types}
    g_b = {k: np.zeros(NUM_TAGS) for k in params.types}
    for ex in batch:
        lats = lattices(params, ex.features)
        breakdown, grads = loss_and_grad(lats, ex.gold, exclude=config.exclude, objective=config.objective)
        total += breakdown.total
        f = ex.features
        for k in params.types:
            dp = grads[k] * scale
            ids_acc[k].append(f.ids)
            rows_acc[k].append(dp[:, f.token_index].T * f.values[:, None])
            g_b[k] += dp.sum(axis=1)
    g_w = {}
    for k in params.types:
        ids = np.concatenate(ids_acc[k])
        rows = np.concatenate(rows_acc[k])
        uniq, inv = np.unique(ids, return_inverse=True)
        summed = np.zeros((len(uniq), NUM_TAGS))
        np.add.at(summed, inv, rows)
        g_w[k] = (uniq, summed)
    return total * scale, g_w, g_b


def _clip(g_w, g_b, max_norm: float) -> float:
    sq = sum(float(np.sum(rows**2)) for _, rows in g_w.values()) + sum(float(np.sum(b**2)) for b in g_b.values())
    norm = math.sqrt(sq)
    if norm > max_norm:
        factor = max_norm / norm
        for k in g_w:
            g_w[k] = (g_w[k][0], g_w[k][1] * factor)
            g_b[k] = g_b[k] * factor
    return norm


class _Adam:
    """Adam restricted to rows that have ever received gradient.

    Untouched rows have zero moments and therefore a zero update, so this is
    exactly dense Adam.
    """

    def __init__(self, params: ModelParams, config: TrainConfig):
        self.p = params
        self.cfg = config
        if params.optimizer is None:
            params.optimizer = AdamState(
                m_w={k: np.zeros_like(params.weights[k]) for k in params.types},
                v_w={k: np.zeros_like(params.weights[k]) for k in params.types},
                m_b={k: np.zeros(NUM_TAGS) for k in params.types},
                v_b={k: np.zeros(NUM_TAGS) for k in params.types},
            )
        st = params.optimizer
        touched = [np.flatnonzero(np.any(st.v_w[k] != 0, axis=1)) for k in params.types]
        self.active = np.unique(np.concatenate(touched)) if touched else np.zeros(0, np.int64)

    def step(self, g_w, g_b) -> None:
        st, cfg = self.p.optimizer, self.cfg
        st.step += 1
        b1, b2 = cfg.beta1, cfg.beta2
        corr1 = 1 - b1**st.step
        corr2 = 1 - b2**st.step
        new_ids = np.concatenate([ids for ids, _ in g_w.values()])
        self.active = np.union1d(self.active, new_ids)
        rows = self.active
        for k in self.p.types:
            ids, g = g_w[k]
            m, v = st.m_w[k], st.v_w[k]
            m_rows = m[rows] * b1
            v_rows = v[rows] * b2
            pos = np.searchsorted(rows, ids)
            m_rows[pos] += (1 - b1) * g
            v_rows[pos] += (1 - b2) * g * g
            m[rows] = m_rows
            v[rows] = v_rows
            self.p.weights[k][rows] -= cfg.lr * (m_rows / corr1) / (np.sqrt(v_rows / corr2) + cfg.eps)
            st.m_b[k] = b1 * st.m_b[k] + (1 - b1) * g_b[k]
            st.v_b[k] = b2 * st.v_b[k] + (1 - b2) * g_b[k] ** 2
            self.p.biases[k] -= cfg.lr * (st.m_b[k] / corr1) / (np.sqrt(st.v_b[k] / corr2) + cfg.eps)


def evaluate_f1(params: ModelParams, docs: Sequence[Document], max_depth: Optional[int] = None,
                features: Optional[Sequence[PackedFeatures]] = None) -> float:
    feats = features or [params.featurize(d.tokens) for d in docs]
    preds = [predict(params, d.tokens, max_depth, f) for d, f in zip(docs, feats)]
    return score(docs, preds).f1


def train(corpus: Sequence[Document], dev: Sequence[Document], config: Optional[TrainConfig] = None,
          types: Optional[Sequence[str]] = None, params: Optional[ModelParams] = None):
    """Minimise the mean sentence loss with clipped mini-batch Adam.

    After each epoch the model is scored on ``dev`` (micro-F1 of nested
    decoding); the best-scoring parameters are kept, ties favouring the
    earlier epoch, and training stops after ``patience`` epochs without
    improvement. Returns ``(params, log)``.
    """
    config = config or TrainConfig()
    config.check()
    if not corpus:
        raise InputError("training corpus is empty")
    if params is None:
        types = list(types) if types is not None else corpus_types(list(corpus) + list(dev))
        if not types:
            raise InputError("corpus has no entity types")
        params = ModelParams.zeros(types, config.hash_size)
    examples = _prepare(params, corpus, config)
    dev_feats = [params.featurize(d.tokens) for d in dev]
    rng = np.random.default_rng(config.seed)
    optim = _Adam(params, config)
    history = []
    best_f1, best_epoch, best_snapshot = -1.0, 0, None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(examples))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[start:start + config.batch_size]]
            loss, g_w, g_b = batch_gradient(params, batch, config)
            if not math.isfinite(loss):
                raise TrainingError("loss is not finite", epoch)
            grad_norm = _clip(g_w, g_b, config.clip)
            if not math.isfinite(grad_norm):
                raise TrainingError("gradient is not finite", epoch)
            optim.step(g_w, g_b)
            epoch_loss += loss * len(batch)
        record = {"epoch": epoch, "loss": epoch_loss / len(examples)}
        if dev:
            f1 = evaluate_f1(params, dev, config.eval_max_depth, dev_feats)
            record["dev_f1"] = f1
            if f1 > best_f1:
                best_f1, best_epoch = f1, epoch
                best_snapshot = _snapshot(params)
        record["best_dev_f1"] = max(best_f1, 0.0) if dev else None
        history.append(record)
        log.info("epoch %d loss %.4f dev_f1 %s", epoch, record["loss"], record.get("dev_f1"))
        if dev and epoch - best_epoch >= config.patience:
            log.info("early stopping after epoch %d (best %d)", epoch, best_epoch)
            break
    if best_snapshot is not None:
        _restore(params, best_snapshot)
    return params, {"epochs": history, "best_epoch": best_epoch, "best_dev_f1": max(best_f1, 0.0)}


def _snapshot(params: ModelParams):
    return copy.deepcopy(params.weights), copy.deepcopy(params.biases)


def _restore(params: ModelParams, snap) -> None:
    params.weights, params.biases = snap
    # Moments no longer match the restored weights.
    params.optimizer = None


# ---------------------------------------------------------------------------
# persistence


def save_model(params: ModelParams, path, include_optimizer: bool = False) -> None:
    has_opt = include_optimizer and params.optimizer is not None
    config = params.config_dict()
    config["has_optimizer_state"] = has_opt
    config["step"] = params.optimizer.step if has_opt else 0
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for k in params.types:
            fh.write(np.ascontiguousarray(params.biases[k], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(params.weights[k], dtype="<f8").tobytes())
            if has_opt:
                st = params.optimizer
                for arr in (st.m_w[k], st.v_w[k], st.m_b[k], st.v_b[k]):
                    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise ModelFormatError(f"truncated file while reading {what}", self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def floats(self, shape, what: str) -> np.ndarray:
        count = int(np.prod(shape))
        arr = np.frombuffer(self.take(8 * count, what), dtype="<f8").astype(np.float64)
        return arr.reshape(shape)


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise ModelFormatError("bad magic bytes, not a model file", 0)
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"model format version {version} is not supported (expected {FORMAT_VERSION})")
    (size,) = struct.unpack("<I", r.take(4, "config length"))
    start = r.offset
    try:
        config = json.loads(r.take(size, "config").decode("utf-8"))
        types = [str(t) for t in config["types"]]
        hash_size = int(config["hash_size"])
        features = FeatureConfig(**config["features"])
        has_opt = bool(config["has_optimizer_state"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"invalid config block: {exc}", start) from exc
    params = ModelParams(types=types, hash_size=hash_size, features=features)
    opt = AdamState(step=int(config.get("step", 0))) if has_opt else None
    for k in types:
        params.biases[k] = r.floats((NUM_TAGS,), f"bias of {k!r}")
        params.weights[k] = r.floats((hash_size, NUM_TAGS), f"weights of {k!r}")
        if has_opt:
            opt.m_w[k] = r.floats((hash_size, NUM_TAGS), f"optimizer state of {k!r}")
            opt.v_w[k] = r.floats((hash_size, NUM_TAGS), f"optimizer state of {k!r}")
            opt.m_b[k] = r.floats((NUM_TAGS,), f"optimizer state of {k!r}")
            opt.v_b[k] = r.floats((NUM_TAGS,), f"optimizer state of {k!r}")
    if r.offset != len(data):
        raise ModelFormatError("trailing bytes after last parameter block", r.offset)
    for k in types:
        if not (np.all(np.isfinite(params.weights[k])) and np.all(np.isfinite(params.biases[k]))):
            raise ModelFormatError(f"non-finite parameters for {k!r}", start)
    params.optimizer = opt
    return params
