"""Text matcher, the two graph matchers, and the merged classifier.

All functions take a :class:`ParamStore` and read the entries under fixed
name prefixes (``text.``, ``graph.``, ``classifier.``, ``probe.``).
Inputs are row matrices: one row per token or concept.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, DomainError
from .layers import bigru_encode, bigru_shapes, ffn_apply, ffn_shapes, init_params
from .tensor import ParamStore, Tensor

GRAPH_MODELS = ("gmatch", "gconattn", "none")
LABELS = ("neutral", "entails")


@dataclass
class ModelConfig:
    word_dim: int = 16
    concept_dim: int = 16
    hidden_size: int = 32
    graph_model: str = "gmatch"
    # Detached 2-logit heads on x_text / x_graph for text-only, graph-only
    # and oracle evaluation. They never feed gradient into the encoders.
    probes: bool = True

    def __post_init__(self):
        if self.graph_model not in GRAPH_MODELS:
            raise DomainError(f"graph_model must be one of {GRAPH_MODELS}, got {self.graph_model!r}")
        for name in ("word_dim", "concept_dim", "hidden_size"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive")

    @property
    def text_width(self) -> int:
        return 2 * self.hidden_size

    @property
    def graph_width(self) -> int:
        return {"gmatch": 2 * self.hidden_size,
                "gconattn": 4 * self.hidden_size,
                "none": 0}[self.graph_model]

    def to_dict(self) -> dict:
        return asdict(self)


def head_dims(width: int) -> list[int]:
    return [width, max(8, width // 2), 2]


def model_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    h = cfg.hidden_size
    shapes = {}
    shapes.update(bigru_shapes("text.encoder", cfg.word_dim, h))
    shapes.update(bigru_shapes("text.matcher", 4 * 2 * h, h))
    if cfg.graph_model == "gmatch":
        shapes.update(bigru_shapes("graph.gmatch.encoder", cfg.concept_dim, h))
        shapes.update(bigru_shapes("graph.gmatch.matcher", 4 * 2 * h, h))
    elif cfg.graph_model == "gconattn":
        shapes.update(ffn_shapes("graph.gconattn.ffn", [4 * cfg.concept_dim, h]))
    if cfg.graph_model != "none":
        shapes["graph.sentinel"] = (cfg.concept_dim,)
    shapes.update(ffn_shapes("classifier", head_dims(cfg.text_width + cfg.graph_width)))
    if cfg.probes:
        shapes.update(ffn_shapes("probe.text", head_dims(cfg.text_width)))
        if cfg.graph_model != "none":
            shapes.update(ffn_shapes("probe.graph", head_dims(cfg.graph_width)))
    return shapes


def build_params(cfg: ModelConfig, seed: int) -> ParamStore:
    params = init_params(seed, model_shapes(cfg))
    if "graph.sentinel" in params:
        rng = np.random.default_rng([seed, 1])
        params["graph.sentinel"].data[:] = rng.uniform(-0.1, 0.1, cfg.concept_dim)
    return params


def attention_weights(P: Tensor, H: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Scores ``E = P H^T`` and both normalisations.

    Returns ``(E, over_premise, over_hypothesis)``: row ``j`` of
    ``over_premise`` (J x K) weights premise rows for hypothesis row ``j``;
    row ``i`` of ``over_hypothesis`` (K x J) weights hypothesis rows for
    premise row ``i``.
    """
    if P.shape[-1] != H.shape[-1]:
        raise DimensionError(f"attention: widths of {P.shape} and {H.shape} differ")
    E = T.matmul(P, H.T)
    return E, T.softmax_rows(E.T), T.softmax_rows(E)


def attention_align(P: Tensor, H: Tensor) -> tuple[Tensor, Tensor]:
    """Dot-product attention ``E = P H^T`` and, per hypothesis row ``j``,
    the premise mixture ``alpha_j`` normalised over premise rows."""
    E, over_premise, _ = attention_weights(P, H)
    return E, T.matmul(over_premise, P)


def matcher_features(h: Tensor, a: Tensor) -> Tensor:
    """``[h; a; h - a; h * a]`` along the last axis."""
    if h.shape != a.shape:
        raise DimensionError(f"matcher features: shapes {h.shape} and {a.shape} differ")
    return T.concat([h, a, T.sub(h, a), T.mul(h, a)], axis=-1)


def _match_lstm(params, prefix: str, P_in: Tensor, H_in: Tensor) -> Tensor:
    P = bigru_encode(params, f"{prefix}.encoder", P_in)
    H = bigru_encode(params, f"{prefix}.encoder", H_in)
    _, alpha = attention_align(P, H)
    M = bigru_encode(params, f"{prefix}.matcher", matcher_features(H, alpha))
    return T.reduce("max", M, axis=0)


def _rows(x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if x.data.ndim != 2:
        raise DimensionError(f"expected a row matrix, got shape {x.shape}")
    return x


def text_match_forward(params, premise, hypothesis) -> Tensor:
    """Word vectors of both sentences -> max-pooled matching state (width 2h)."""
    premise, hypothesis = _rows(premise), _rows(hypothesis)
    if premise.shape[0] == 0 or hypothesis.shape[0] == 0:
        raise DomainError("text matcher needs nonempty premise and hypothesis")
    return _match_lstm(params, "text", premise, hypothesis)


def _or_sentinel(params, concepts) -> Tensor:
    concepts = _rows(concepts)
    if concepts.shape[0] == 0:
        return T.stack([params["graph.sentinel"]])
    return concepts


def gmatch_forward(params, premise_concepts, hypothesis_concepts) -> Tensor:
    """Match-LSTM over text-ordered concept vectors."""
    P = _or_sentinel(params, premise_concepts)
    H = _or_sentinel(params, hypothesis_concepts)
    return _match_lstm(params, "graph.gmatch", P, H)


def gconattn_forward(params, premise_concepts, hypothesis_concepts) -> Tensor:
    """Two-way attention over unordered concept vectors, FFN matcher,
    max and mean pooling per side. Output width 4h."""
    P = _or_sentinel(params, premise_concepts)
    H = _or_sentinel(params, hypothesis_concepts)
    _, over_premise, over_hypothesis = attention_weights(P, H)
    beta = T.matmul(over_hypothesis, H)
    alpha = T.matmul(over_premise, P)
    Pm = ffn_apply(params, "graph.gconattn.ffn", matcher_features(P, beta), ["relu"])
    Hm = ffn_apply(params, "graph.gconattn.ffn", matcher_features(H, alpha), ["relu"])
    return T.concat([T.reduce("max", Pm, 0), T.reduce("mean", Pm, 0),
                     T.reduce("max", Hm, 0), T.reduce("mean", Hm, 0)])


def merged_predict(params, x_text: Tensor, x_graph: Tensor | None) -> Tensor:
    """Classifier over ``[x_text; x_graph]``. Logit 0 is neutral, 1 entails."""
    x = x_text if x_graph is None else T.concat([x_text, x_graph])
    return ffn_apply(params, "classifier", x, ["relu", "identity"])


def head_predict(params, prefix: str, x: Tensor) -> Tensor:
    return ffn_apply(params, prefix, x, ["relu", "identity"])


def classify(logits) -> tuple[str, float]:
    """Softmax decision; ties go to neutral."""
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    z = z - z.max()
    p = np.exp(z) / np.exp(z).sum()
    k = 1 if p[1] > p[0] else 0
    return LABELS[k], float(p[k])


@dataclass
class PairFeatures:
    """Model inputs for one pair; concept matrices may have zero rows."""
    premise_words: np.ndarray
    hypothesis_words: np.ndarray
    premise_concepts: np.ndarray
    hypothesis_concepts: np.ndarray


@dataclass
class ForwardResult:
    logits: Tensor
    x_text: Tensor
    x_graph: Tensor | None
    text_logits: Tensor | None = None
    graph_logits: Tensor | None = None


class MatchModel:
    """Text matcher plus at most one graph matcher, merged by a classifier."""

    def __init__(self, config: ModelConfig, params: ParamStore):
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config: ModelConfig, seed: int) -> "MatchModel":
        return cls(config, build_params(config, seed))

    def graph_forward(self, feats: PairFeatures) -> Tensor | None:
        kind = self.config.graph_model
        if kind == "gmatch":
            return gmatch_forward(self.params, feats.premise_concepts, feats.hypothesis_concepts)
        if kind == "gconattn":
            return gconattn_forward(self.params, feats.premise_concepts, feats.hypothesis_concepts)
        return None

    def forward(self, feats: PairFeatures, probes: bool | None = None) -> ForwardResult:
        x_text = text_match_forward(self.params, feats.premise_words, feats.hypothesis_words)
        x_graph = self.graph_forward(feats)
        out = ForwardResult(merged_predict(self.params, x_text, x_graph), x_text, x_graph)
        if probes is None:
            probes = self.config.probes
        if probes and self.config.probes:
            out.text_logits = head_predict(self.params, "probe.text", T.detach(x_text))
            if x_graph is not None:
                out.graph_logits = head_predict(self.params, "probe.graph", T.detach(x_graph))
        return out

    @property
    def merged_params(self) -> ParamStore:
        """Everything the merged prediction depends on (probe heads excluded)."""
        return self.params.subset(("text.", "graph.", "classifier."))


def param_count(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for s in model_shapes(cfg).values())
