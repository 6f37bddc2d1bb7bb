"""Knowledge-graph store, phrase-to-concept matching and subgraph builders.

Concept ids are assigned in sorted label order once all triples are read, so
every derived structure is independent of the order of lines in the source
file. Neighbourhoods ignore edge direction; stored edges keep it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DomainError, ParseError

MAX_NGRAM = 5
STRATEGIES = ("concepts_only", "one_hop", "two_hop")

_SPACES = re.compile(r"[\s_]+")


def normalize_label(text: str) -> str:
    """Lowercase and collapse runs of whitespace/underscores to one space."""
    return _SPACES.sub(" ", text.lower()).strip()


@dataclass(frozen=True)
class MatchSpan:
    start: int
    end: int  # inclusive
    concept: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1


class KnowledgeGraph:
    """Immutable concept vocabulary plus labelled directed edges."""

    def __init__(self, triples: Iterable[tuple[str, str, str]] = ()):
        norm = {(normalize_label(h), r.strip(), normalize_label(t)) for h, r, t in triples}
        labels = sorted({h for h, _, _ in norm} | {t for _, _, t in norm})
        self.labels: list[str] = labels
        self.label_index: dict[str, int] = {lab: i for i, lab in enumerate(labels)}
        ix = self.label_index
        self.edges: list[tuple[int, str, int]] = sorted((ix[h], r, ix[t]) for h, r, t in norm)
        self.relations: list[str] = sorted({r for _, r, _ in self.edges})
        self.neighbors: dict[int, frozenset[int]] = {}
        self.incident: dict[int, list[tuple[int, str, int]]] = {}
        self._index()

    def _index(self) -> None:
        nbrs: dict[int, set[int]] = {i: set() for i in range(len(self.labels))}
        inc: dict[int, list] = {i: [] for i in range(len(self.labels))}
        for e in self.edges:
            h, _, t = e
            nbrs[h].add(t)
            nbrs[t].add(h)
            inc[h].append(e)
            if t != h:
                inc[t].append(e)
        self.neighbors = {i: frozenset(s) for i, s in nbrs.items()}
        self.incident = inc

    @classmethod
    def load(cls, path) -> "KnowledgeGraph":
        return cls(read_triples(path))

    def __len__(self) -> int:
        return len(self.labels)

    def concept_id(self, label: str) -> int | None:
        return self.label_index.get(normalize_label(label))

    def induced_edges(self, vertices: Iterable[int]) -> list[tuple[int, str, int]]:
        vs = set(vertices)
        out = set()
        for v in vs:
            for e in self.incident[v]:
                if e[0] in vs and e[2] in vs:
                    out.add(e)
        return sorted(out)

    def check_index(self) -> bool:
        """Rebuild the adjacency index from the edge list and compare."""
        saved = self.neighbors, self.incident
        self._index()
        same = saved[0] == self.neighbors and saved[1] == self.incident
        self.neighbors, self.incident = saved
        return same


def read_triples(path) -> list[tuple[str, str, str]]:
    """Parse ``head<TAB>relation<TAB>tail`` lines; ``#`` lines and blanks skipped."""
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}",
                                 path, lineno)
            h, r, t = parts
            if not normalize_label(h) or not r.strip() or not normalize_label(t):
                raise ParseError("empty head, relation or tail", path, lineno)
            triples.append((h, r, t))
    return triples


def kg_stats(kg: KnowledgeGraph) -> tuple[int, int, int]:
    """(concepts, distinct relation labels, facts)."""
    return len(kg.labels), len(kg.relations), len(kg.edges)


def match_concepts(tokens: Sequence[str], kg: KnowledgeGraph) -> list[MatchSpan]:
    """Greedy left-to-right longest match of token n-grams against concept labels."""
    norm = [normalize_label(t) for t in tokens]
    spans = []
    i = 0
    while i < len(norm):
        for n in range(min(MAX_NGRAM, len(norm) - i), 0, -1):
            cid = kg.label_index.get(" ".join(norm[i:i + n]))
            if cid is not None:
                spans.append(MatchSpan(i, i + n - 1, cid))
                i += n
                break
        else:
            i += 1
    return spans


@dataclass
class ConceptGraph:
    vertices: list[int] = field(default_factory=list)
    edges: list[tuple[int, str, int]] = field(default_factory=list)
    origin_spans: dict[int, list[tuple[int, int]]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.vertices)

    def describe(self, kg: KnowledgeGraph) -> dict:
        """Label-level view for inspection output."""
        lab = kg.labels
        return {
            "vertices": [lab[v] for v in self.vertices],
            "edges": [[lab[h], r, lab[t]] for h, r, t in self.edges],
            "spans": {lab[v]: [list(s) for s in spans] for v, spans in self.origin_spans.items()},
        }


def build_concepts_only(kg: KnowledgeGraph, spans: Iterable[MatchSpan]) -> ConceptGraph:
    origin: dict[int, list[tuple[int, int]]] = {}
    for s in spans:
        origin.setdefault(s.concept, []).append((s.start, s.end))
    vertices = sorted(origin)
    return ConceptGraph(vertices, kg.induced_edges(vertices), origin)


def build_one_hop(kg: KnowledgeGraph, base: ConceptGraph) -> ConceptGraph:
    vs = set(base.vertices)
    for v in base.vertices:
        vs |= kg.neighbors[v]
    vertices = sorted(vs)
    return ConceptGraph(vertices, kg.induced_edges(vertices), dict(base.origin_spans))


def build_two_hop(kg: KnowledgeGraph, base: ConceptGraph) -> ConceptGraph:
    """Add every vertex adjacent to at least two distinct base vertices."""
    basis = set(base.vertices)
    hits: dict[int, int] = {}
    for v in base.vertices:
        for x in kg.neighbors[v]:
            hits[x] = hits.get(x, 0) + 1
    vs = basis | {x for x, k in hits.items() if k >= 2}
    vertices = sorted(vs)
    return ConceptGraph(vertices, kg.induced_edges(vertices), dict(base.origin_spans))


def build_graph(kg: KnowledgeGraph, tokens: Sequence[str], strategy: str) -> ConceptGraph:
    if strategy not in STRATEGIES:
        raise DomainError(f"unknown graph strategy {strategy!r}; expected one of {STRATEGIES}")
    graph = build_concepts_only(kg, match_concepts(tokens, kg))
    if strategy == "one_hop":
        graph = build_one_hop(kg, graph)
    elif strategy == "two_hop":
        graph = build_two_hop(kg, graph)
    return graph


def order_concepts(graph: ConceptGraph, kg: KnowledgeGraph) -> list[int]:
    """Text order: earliest start, then longer span, then label."""
    keys = []
    for v in graph.vertices:
        spans = graph.origin_spans.get(v)
        if not spans:
            raise DomainError(f"concept {kg.labels[v]!r} has no text span; "
                              "only Concepts Only graphs can be ordered")
        start, end = min(spans, key=lambda s: (s[0], -(s[1] - s[0])))
        keys.append(((start, -(end - start + 1), kg.labels[v]), v))
    return [v for _, v in sorted(keys)]


def avg_graph_size(pairs, kg: KnowledgeGraph, strategy: str, tokenize) -> tuple[float, float]:
    """Mean premise and hypothesis vertex counts, rounded to one decimal."""
    pairs = list(pairs)
    if not pairs:
        raise DomainError("avg_graph_size of an empty dataset")
    prem = sum(len(build_graph(kg, tokenize(p.premise), strategy)) for p in pairs)
    hyp = sum(len(build_graph(kg, tokenize(p.hypothesis), strategy)) for p in pairs)
    return round(prem / len(pairs), 1), round(hyp / len(pairs), 1)
