"""Joint Adagrad training, accuracy / oracle evaluation and checkpoint files."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import ExamplePair, tokenize
from .embeddings import EmbeddingTable
from .errors import DomainError, ParseError, StateError
from .kg import STRATEGIES, ConceptGraph, KnowledgeGraph, build_graph, order_concepts
from .models import LABELS, MatchModel, ModelConfig, PairFeatures
from .tensor import ParamStore, Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 40
    epochs: int = 20
    seed: int = 7
    adagrad_epsilon: float = 1e-10
    graph_strategy: str = "concepts_only"
    graph_model: str = "gmatch"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if self.batch_size < 1:
            raise DomainError("batch_size must be at least 1")
        if self.epochs < 0:
            raise DomainError("epochs must be nonnegative")
        if self.graph_strategy not in STRATEGIES:
            raise DomainError(f"graph_strategy must be one of {STRATEGIES}")
        if self.graph_model == "gmatch" and self.graph_strategy != "concepts_only":
            raise DomainError("gmatch needs text-ordered concepts: use graph_strategy=concepts_only")


def cross_entropy_loss(logits: Tensor, label: int) -> Tensor:
    """``-log softmax(logits)[label]`` computed through log-sum-exp."""
    if label not in (0, 1):
        raise DomainError(f"label must be 0 or 1, got {label!r}")
    z = logits.data
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    p = np.exp(z - lse)

    def grad_fn(g):
        d = p.copy()
        d[label] -= 1.0
        return (g * d,)

    return T.record(np.array(lse - z[label]), (logits,), grad_fn)


class AdagradState:
    """Per-parameter running sum of squared gradients."""

    def __init__(self, params: ParamStore):
        self.accum = {name: np.zeros_like(params[name].data) for name in params}


def adagrad_step(state: AdagradState, params: ParamStore, lr: float, eps: float = 1e-10) -> None:
    for name in params:
        p = params[name]
        if p.grad is None:
            raise StateError(f"no gradient for parameter {name!r}; call zero_grad and backward first")
        g = p.grad
        acc = state.accum[name]
        acc += g * g
        p.data -= lr * g / (np.sqrt(acc) + eps)


def concept_key(label: str) -> str:
    """Embedding-file key for a normalised concept label."""
    return label.replace(" ", "_")


class Featurizer:
    """Turns raw pairs into model inputs: word vectors and concept vectors."""

    def __init__(self, kg: KnowledgeGraph, word_table: EmbeddingTable,
                 concept_table: EmbeddingTable, strategy: str = "concepts_only",
                 ordered: bool = True, lowercase: bool = True):
        if strategy not in STRATEGIES:
            raise DomainError(f"unknown graph strategy {strategy!r}")
        self.kg = kg
        self.word_table = word_table
        self.concept_table = concept_table
        self.strategy = strategy
        self.ordered = ordered
        self.lowercase = lowercase

    def graphs(self, pair: ExamplePair) -> tuple[ConceptGraph, ConceptGraph]:
        return (build_graph(self.kg, tokenize(pair.premise, self.lowercase), self.strategy),
                build_graph(self.kg, tokenize(pair.hypothesis, self.lowercase), self.strategy))

    def _concepts(self, graph: ConceptGraph) -> np.ndarray:
        ids = order_concepts(graph, self.kg) if self.ordered else graph.vertices
        return self.concept_table.matrix([concept_key(self.kg.labels[v]) for v in ids])

    def __call__(self, pair: ExamplePair) -> PairFeatures:
        p_tok = tokenize(pair.premise, self.lowercase)
        h_tok = tokenize(pair.hypothesis, self.lowercase)
        if not p_tok or not h_tok:
            raise DomainError(f"pair has no tokens on one side: {pair!r}")
        pg, hg = self.graphs(pair)
        return PairFeatures(self.word_table.matrix(p_tok), self.word_table.matrix(h_tok),
                            self._concepts(pg), self._concepts(hg))

    @classmethod
    def for_model(cls, kg, word_table, concept_table, model_cfg: ModelConfig,
                  strategy: str, lowercase: bool = True) -> "Featurizer":
        return cls(kg, word_table, concept_table, strategy,
                   ordered=model_cfg.graph_model == "gmatch", lowercase=lowercase)


@dataclass
class Checkpoint:
    config: dict
    params: ParamStore
    best_params: ParamStore | None = None

    def model(self, best: bool = False) -> MatchModel:
        cfg = ModelConfig(**self.config["model"])
        params = self.best_params if best and self.best_params is not None else self.params
        return MatchModel(cfg, params)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_accuracy: float | None
    steps: int


def _batch_loss(model: MatchModel, feats: Sequence[PairFeatures], targets: Sequence[int]):
    merged, probes = [], []
    for f, y in zip(feats, targets):
        out = model.forward(f)
        merged.append(cross_entropy_loss(out.logits, y))
        for lg in (out.text_logits, out.graph_logits):
            if lg is not None:
                probes.append(cross_entropy_loss(lg, y))
    n = len(merged)
    loss = T.scale(T.add_n(merged), 1.0 / n)
    total = loss if not probes else T.add(loss, T.scale(T.add_n(probes), 1.0 / n))
    return loss, total


def train(model: MatchModel, dataset: Sequence[ExamplePair], featurizer: Featurizer,
          config: TrainConfig, dev: Sequence[ExamplePair] | None = None,
          echo: dict | None = None) -> tuple[Checkpoint, list[EpochStats]]:
    """Minibatch Adagrad on the merged cross-entropy; probe heads ride along.

    Each epoch uses a permutation seeded by ``(seed, epoch)``; the last partial
    batch is kept. Returns the final checkpoint (with the best-dev parameters
    attached when ``dev`` is given) and one record per epoch.
    """
    if not dataset:
        raise DomainError("cannot train on an empty dataset")
    if config.graph_model != model.config.graph_model:
        raise DomainError(f"config trains {config.graph_model!r} but the model is "
                          f"{model.config.graph_model!r}")
    feats = [featurizer(p) for p in dataset]
    targets = [p.target for p in dataset]
    dev_feats = [featurizer(p) for p in dev] if dev else None
    params = model.params
    state = AdagradState(params)
    history: list[EpochStats] = []
    best_acc, best_params = -1.0, None
    n = len(feats)
    steps = 0
    for epoch in range(1, config.epochs + 1):
        perm = np.random.default_rng([config.seed, epoch]).permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            params.zero_grad()
            loss, total = _batch_loss(model, [feats[i] for i in idx], [targets[i] for i in idx])
            T.backward(total)
            adagrad_step(state, params, config.learning_rate, config.adagrad_epsilon)
            losses.append(loss.item())
            steps += 1
        dev_acc = None
        if dev_feats:
            dev_acc = evaluate_features(model, dev_feats, [p.target for p in dev]).accuracy
            if dev_acc > best_acc:
                best_acc = dev_acc
                best_params = ParamStore({k: Tensor(v) for k, v in params.state_dict().items()})
        stats = EpochStats(epoch, float(np.mean(losses)), dev_acc, steps)
        history.append(stats)
        log.info("epoch %d loss %.6f dev %s", epoch, stats.train_loss, dev_acc)
    if echo is None:
        echo = {"model": model.config.to_dict(), "train": asdict(config)}
    return Checkpoint(echo, params, best_params), history


@dataclass
class EvalReport:
    accuracy: float
    predictions: list[str]
    probabilities: list[float] = field(default_factory=list)
    text_accuracy: float | None = None
    graph_accuracy: float | None = None
    oracle_accuracy: float | None = None

    def summary(self) -> dict:
        out = {"accuracy": self.accuracy, "n": len(self.predictions)}
        for key in ("text_accuracy", "graph_accuracy", "oracle_accuracy"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out


MODES = ("merged", "text_only", "graph_only")


def _pick(out, mode: str) -> Tensor:
    logits = {"merged": out.logits, "text_only": out.text_logits,
              "graph_only": out.graph_logits}[mode]
    if logits is None:
        raise DomainError(f"model has no {mode} head (needs probes and a graph model)")
    return logits


def _argmax(logits: Tensor) -> int:
    z = logits.data
    return 1 if z[1] > z[0] else 0


def evaluate_features(model: MatchModel, feats: Sequence[PairFeatures], targets: Sequence[int],
                      mode: str = "merged", oracle: bool = False) -> EvalReport:
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}")
    if not feats:
        raise DomainError("cannot evaluate an empty dataset")
    preds, probs, text_p, graph_p = [], [], [], []
    with T.no_grad():
        for f in feats:
            out = model.forward(f, probes=mode != "merged" or oracle)
            logits = _pick(out, mode)
            z = logits.data - logits.data.max()
            k = _argmax(logits)
            preds.append(k)
            probs.append(float(np.exp(z[k]) / np.exp(z).sum()))
            if oracle:
                text_p.append(_argmax(_pick(out, "text_only")))
                graph_p.append(_argmax(_pick(out, "graph_only")))
    report = EvalReport(accuracy(preds, targets), [LABELS[k] for k in preds], probs)
    if oracle:
        report.text_accuracy = accuracy(text_p, targets)
        report.graph_accuracy = accuracy(graph_p, targets)
        report.oracle_accuracy = oracle_accuracy(text_p, graph_p, targets)
    return report


def evaluate(model: MatchModel, dataset: Sequence[ExamplePair], featurizer: Featurizer,
             mode: str = "merged", oracle: bool = False) -> EvalReport:
    """Accuracy of argmax predictions (ties predict neutral)."""
    if not dataset:
        raise DomainError("cannot evaluate an empty dataset")
    return evaluate_features(model, [featurizer(p) for p in dataset],
                             [p.target for p in dataset], mode, oracle)


def accuracy(preds: Sequence, labels: Sequence) -> float:
    if len(preds) != len(labels):
        raise DomainError(f"{len(preds)} predictions for {len(labels)} labels")
    if not labels:
        raise DomainError("accuracy of an empty dataset")
    return sum(p == y for p, y in zip(preds, labels)) / len(labels)


def oracle_accuracy(text_preds: Sequence, graph_preds: Sequence, labels: Sequence) -> float:
    """Fraction of examples where either model is right."""
    if not len(text_preds) == len(graph_preds) == len(labels):
        raise DomainError("prediction and label lists differ in length")
    if not labels:
        raise DomainError("oracle accuracy of an empty dataset")
    hits = sum(t == y or g == y for t, g, y in zip(text_preds, graph_preds, labels))
    return hits / len(labels)


# Checkpoint container: magic, u32 version, u32 config length + UTF-8 JSON,
# u32 tensor count, then per tensor: u16 name length + UTF-8 name, u8 ndim,
# u32 per dimension, float64 little-endian values. All integers little-endian.
MAGIC = b"CSQN"
FORMAT_VERSION = 1
BEST_PREFIX = "best/"


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    tensors = [(name, ckpt.params[name].data) for name in ckpt.params]
    if ckpt.best_params is not None:
        tensors += [(BEST_PREFIX + name, ckpt.best_params[name].data) for name in ckpt.best_params]
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<HB", len(raw), arr.ndim))
            fh.write(raw)
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise ParseError("truncated checkpoint", path)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise ParseError("not a checkpoint (bad magic)", path)
    version, cfg_len = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", path)
    config = json.loads(take(cfg_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    params, best = ParamStore(), ParamStore()
    for _ in range(count):
        name_len, ndim = struct.unpack("<HB", take(3))
        name = take(name_len).decode("utf-8")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        if name.startswith(BEST_PREFIX):
            best.add(name[len(BEST_PREFIX):], Tensor(arr))
        else:
            params.add(name, Tensor(arr))
    if pos != len(buf):
        raise ParseError("trailing bytes after checkpoint", path)
    return Checkpoint(config, params, best if len(best) else None)


def write_history(history: Sequence[EpochStats], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h in history:
            dev = "nan" if h.dev_accuracy is None else repr(h.dev_accuracy)
            fh.write(f"{h.epoch}\t{h.train_loss!r}\t{dev}\n")
