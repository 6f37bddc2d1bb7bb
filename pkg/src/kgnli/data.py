"""Sentence-pair datasets, tokenisation and the synthetic verification corpus."""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingTable
from .errors import DomainError, ParseError, ValidationError

LABEL_NAMES = ("neutral", "entails")


@dataclass(frozen=True)
class ExamplePair:
    premise: str
    hypothesis: str
    label: str

    @property
    def target(self) -> int:
        return LABEL_NAMES.index(self.label)

    def to_json(self) -> str:
        return json.dumps({"premise": self.premise, "hypothesis": self.hypothesis,
                           "label": self.label})


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    """Whitespace split, edge ASCII punctuation stripped, empties dropped."""
    if lowercase:
        text = text.lower()
    tokens = (tok.strip(string.punctuation) for tok in text.split())
    return [t for t in tokens if t]


def load_dataset(path) -> list[ExamplePair]:
    """One JSON object per line with string ``premise``, ``hypothesis``, ``label``."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("record is not an object", path, lineno)
            for key in ("premise", "hypothesis", "label"):
                if not isinstance(rec.get(key), str):
                    raise ParseError(f"missing or non-string field {key!r}", path, lineno)
            if rec["label"] not in LABEL_NAMES:
                raise ValidationError(f"unknown label {rec['label']!r}", path, lineno)
            if not rec["premise"].strip() or not rec["hypothesis"].strip():
                raise ValidationError("empty premise or hypothesis", path, lineno)
            pairs.append(ExamplePair(rec["premise"], rec["hypothesis"], rec["label"]))
    return pairs


def save_dataset(pairs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(p.to_json() + "\n")


@dataclass
class SyntheticCorpus:
    train: list[ExamplePair]
    dev: list[ExamplePair]
    triples: list[tuple[str, str, str]]
    word_table: EmbeddingTable
    concept_table: EmbeddingTable

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"train": out / "train.jsonl", "dev": out / "dev.jsonl",
                 "kg": out / "kg.tsv", "word_emb": out / "word_emb.txt",
                 "concept_emb": out / "concept_emb.txt"}
        save_dataset(self.train, paths["train"])
        save_dataset(self.dev, paths["dev"])
        with open(paths["kg"], "w", encoding="utf-8") as fh:
            fh.write("# head\trelation\ttail\n")
            for h, r, t in self.triples:
                fh.write(f"{h}\t{r}\t{t}\n")
        self.word_table.save(paths["word_emb"])
        self.concept_table.save(paths["concept_emb"])
        return paths


N_CATEGORIES = 5
SYNONYM_FRACTION = 0.6
PREMISE_LEN = (4, 6)
HYPOTHESIS_LEN = (2, 3)
CONCEPT_SCALE = 2.0
MIN_REPLACED = 0.5  # least fraction of hypothesis words swapped out in neutral pairs


def synthetic_label(premise: list[str], hypothesis: list[str], synonyms: dict[str, str]) -> str:
    """Entails iff each hypothesis word is a premise word or a synonym of one."""
    support = set(premise) | {synonyms[w] for w in premise if w in synonyms}
    return "entails" if all(w in support for w in hypothesis) else "neutral"


def gen_synthetic(seed: int, n_train: int = 2000, n_dev: int = 500, vocab_size: int = 200,
                  dim: int = 16) -> SyntheticCorpus:
    """Seeded entailment corpus whose label is a fixed rule over a generated KG.

    Words come in synonym pairs (most of them) or stand alone; every word is
    also attached to one of a few category concepts. The text model only sees
    independent word vectors, while synonym concepts get near-identical concept
    vectors, so synonym substitutions are only visible through the graph side.
    """
    if vocab_size < 10:
        raise DomainError("vocab_size must be at least 10")
    rng = np.random.default_rng(seed)
    words = [f"w{i:03d}" for i in range(vocab_size)]
    order = rng.permutation(vocab_size)
    n_pairs = int(SYNONYM_FRACTION * vocab_size) // 2
    synonyms: dict[str, str] = {}
    triples = []
    for k in range(n_pairs):
        a, b = words[order[2 * k]], words[order[2 * k + 1]]
        synonyms[a], synonyms[b] = b, a
        triples.append((a, "synonym", b))
    categories = [f"category_{c}" for c in range(N_CATEGORIES)]
    for w in words:
        triples.append((w, "is_a", categories[rng.integers(N_CATEGORIES)]))

    word_vecs = {w: rng.uniform(-1.0, 1.0, dim) for w in words}
    concept_vecs: dict[str, np.ndarray] = {}
    for w in words:
        if w in concept_vecs:
            continue
        base = rng.uniform(-CONCEPT_SCALE, CONCEPT_SCALE, dim)
        concept_vecs[w] = base + rng.normal(0.0, 0.05 * CONCEPT_SCALE, dim)
        if w in synonyms:
            concept_vecs[synonyms[w]] = base + rng.normal(0.0, 0.05 * CONCEPT_SCALE, dim)
    for c in categories:
        concept_vecs[c] = rng.uniform(-CONCEPT_SCALE, CONCEPT_SCALE, dim)

    def make(n: int) -> list[ExamplePair]:
        labels = np.array(["entails"] * (n // 2) + ["neutral"] * (n - n // 2))
        labels = labels[rng.permutation(n)]
        out = []
        for label in labels:
            n_p = int(rng.integers(PREMISE_LEN[0], PREMISE_LEN[1] + 1))
            prem = [words[i] for i in rng.choice(vocab_size, n_p, replace=False)]
            support = set(prem) | {synonyms[w] for w in prem if w in synonyms}
            n_h = int(rng.integers(HYPOTHESIS_LEN[0], HYPOTHESIS_LEN[1] + 1))
            picks = [prem[i] for i in rng.choice(len(prem), n_h, replace=False)]
            hyp = [synonyms[w] if w in synonyms and rng.random() < 0.5 else w for w in picks]
            if label == "neutral":
                outside = [w for w in words if w not in support]
                k = int(rng.integers(max(1, int(np.ceil(MIN_REPLACED * n_h))), n_h + 1))
                slots = rng.choice(n_h, k, replace=False)
                fresh = rng.choice(len(outside), k, replace=False)
                for s, f in zip(slots, fresh):
                    hyp[s] = outside[f]
            assert synthetic_label(prem, hyp, synonyms) == label
            out.append(ExamplePair(_sentence(prem), _sentence(hyp), str(label)))
        return out

    train = make(n_train)
    dev = make(n_dev)
    return SyntheticCorpus(train, dev, triples,
                           EmbeddingTable(dim, word_vecs, oov_seed=seed),
                           EmbeddingTable(dim, concept_vecs, oov_seed=seed + 1))


def _sentence(tokens: list[str]) -> str:
    text = " ".join(tokens)
    return text[0].upper() + text[1:] + "."
