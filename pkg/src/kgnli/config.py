"""Run configuration: a JSON document with four sections.

.. code-block:: json

    {"paths": {"train": "train.jsonl", "dev": "dev.jsonl", "test": null,
               "kg": "kg.tsv", "word_emb": "word_emb.txt",
               "concept_emb": "concept_emb.txt",
               "checkpoint": "model.ckpt", "history": "history.tsv"},
     "model": {"emb_dim": 16, "hidden_size": 32, "probes": true},
     "train": {"learning_rate": 0.001, "batch_size": 40, "epochs": 20,
               "seed": 7, "adagrad_epsilon": 1e-10,
               "graph_strategy": "concepts_only", "graph_model": "gmatch"},
     "tokenizer": {"lowercase": true}}

Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ParseError
from .models import ModelConfig
from .training import TrainConfig

PATH_KEYS = ("train", "dev", "test", "kg", "word_emb", "concept_emb", "checkpoint", "history")


@dataclass
class RunConfig:
    paths: dict = field(default_factory=lambda: {k: None for k in PATH_KEYS})
    emb_dim: int = 16
    hidden_size: int = 32
    probes: bool = True
    lowercase: bool = True
    training: TrainConfig = field(default_factory=TrainConfig)

    def model_config(self) -> ModelConfig:
        return ModelConfig(word_dim=self.emb_dim, concept_dim=self.emb_dim,
                           hidden_size=self.hidden_size,
                           graph_model=self.training.graph_model, probes=self.probes)

    def to_dict(self) -> dict:
        return {"paths": {k: self.paths.get(k) for k in PATH_KEYS},
                "model": {"emb_dim": self.emb_dim, "hidden_size": self.hidden_size,
                          "probes": self.probes},
                "train": asdict(self.training),
                "tokenizer": {"lowercase": self.lowercase}}

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ParseError("config must be a JSON object")
        unknown = set(doc) - {"paths", "model", "train", "tokenizer"}
        if unknown:
            raise ParseError(f"unknown config sections {sorted(unknown)}")
        paths = {k: None for k in PATH_KEYS}
        for k, v in doc.get("paths", {}).items():
            if k not in PATH_KEYS:
                raise ParseError(f"unknown path key {k!r}")
            if v is not None:
                p = Path(v)
                if base_dir is not None and not p.is_absolute():
                    p = base_dir / p
                v = str(p)
            paths[k] = v
        model = dict(doc.get("model", {}))
        allowed = {"emb_dim", "hidden_size", "probes"}
        if set(model) - allowed:
            raise ParseError(f"unknown model keys {sorted(set(model) - allowed)}")
        train_keys = {f.name for f in fields(TrainConfig)}
        train = dict(doc.get("train", {}))
        if set(train) - train_keys:
            raise ParseError(f"unknown train keys {sorted(set(train) - train_keys)}")
        tok = dict(doc.get("tokenizer", {}))
        return cls(paths=paths, training=TrainConfig(**train),
                   lowercase=bool(tok.get("lowercase", True)), **model)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", path, exc.lineno) from None
        return cls.from_dict(doc, path.parent)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
