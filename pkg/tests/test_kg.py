import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgnli.data import ExamplePair, tokenize
from kgnli.errors import DomainError, ParseError
from kgnli.kg import (ConceptGraph, KnowledgeGraph, MatchSpan, avg_graph_size, build_concepts_only,
                      build_graph, build_one_hop, build_two_hop, kg_stats, match_concepts,
                      normalize_label, order_concepts, read_triples)

from oracles import random_triples, subgraphs


@pytest.fixture
def small(fixtures):
    return KnowledgeGraph.load(fixtures / "kg_small.tsv")


def base_graph(kg, labels):
    spans = [MatchSpan(i, i, kg.concept_id(lab)) for i, lab in enumerate(labels)]
    return build_concepts_only(kg, spans)


def labelled(kg, graph):
    return ({kg.labels[v] for v in graph.vertices},
            {(kg.labels[h], r, kg.labels[t]) for h, r, t in graph.edges})


def solar_kg():
    return KnowledgeGraph([("solar panel", "r", "power"), ("panel", "r", "power")])


class TestLoad:
    def test_fixture_counts(self, small):
        assert kg_stats(small) == (4, 3, 4)

    def test_empty(self):
        assert kg_stats(KnowledgeGraph()) == (0, 0, 0)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("")
        assert kg_stats(KnowledgeGraph.load(path)) == (0, 0, 0)

    def test_duplicate_after_normalization(self, fixtures):
        kg = KnowledgeGraph.load(fixtures / "kg_dup.tsv")
        assert len(kg.edges) == 2
        assert kg.labels == ["panel", "power", "solar panel"]

    def test_normalize(self):
        assert normalize_label("Solar_Panel") == "solar panel"
        assert normalize_label("  solar \t panel ") == "solar panel"

    @pytest.mark.parametrize("name, line", [("kg_bad_fields.tsv", 3), ("kg_empty_head.tsv", 2),
                                            ("kg_extra_field.tsv", 1)])
    def test_malformed_lines(self, fixtures, name, line):
        with pytest.raises(ParseError, match=f"line {line}:") as info:
            read_triples(fixtures / name)
        assert info.value.lineno == line

    def test_adjacency_ignores_direction(self, small):
        a, b, c, d = (small.concept_id(x) for x in "abcd")
        assert small.neighbors[c] == {a, b, d}
        assert small.neighbors[d] == {c}
        assert small.check_index()

    def test_line_order_does_not_matter(self):
        rng = np.random.default_rng(0)
        triples = random_triples(rng)
        shuffled = [triples[i] for i in rng.permutation(len(triples))]
        a, b = KnowledgeGraph(triples), KnowledgeGraph(shuffled)
        assert a.labels == b.labels and a.edges == b.edges
        tokens = [f"n{i}" for i in range(10)]
        for strategy in ("concepts_only", "one_hop", "two_hop"):
            assert build_graph(a, tokens, strategy) == build_graph(b, tokens, strategy)


class TestMatch:
    def test_longest_first(self):
        kg = solar_kg()
        spans = match_concepts(["solar", "panel", "power"], kg)
        assert [(s.start, s.end, kg.labels[s.concept]) for s in spans] == \
            [(0, 1, "solar panel"), (2, 2, "power")]

    def test_greedy_left_to_right(self):
        kg = solar_kg()
        spans = match_concepts(["panel", "solar", "panel"], kg)
        assert [(s.start, s.end, kg.labels[s.concept]) for s in spans] == \
            [(0, 0, "panel"), (1, 2, "solar panel")]

    def test_no_match(self):
        assert match_concepts(["nothing", "here"], solar_kg()) == []
        assert match_concepts([], solar_kg()) == []

    def test_ngram_cap(self):
        kg = KnowledgeGraph([("a b c d e f", "r", "x"), ("a b c d e", "r", "x")])
        spans = match_concepts("a b c d e f".split(), kg)
        assert [(s.start, s.end) for s in spans] == [(0, 4)]

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.sampled_from(["a", "b", "c", "d", "x"]), max_size=12))
    def test_spans_sorted_and_disjoint(self, tokens):
        kg = KnowledgeGraph([("a b", "r", "c"), ("b c d", "r", "a"), ("d", "r", "a b c")])
        spans = match_concepts(tokens, kg)
        for s in spans:
            assert " ".join(tokens[s.start:s.end + 1]) == kg.labels[s.concept]
        for s, t in zip(spans, spans[1:]):
            assert s.end < t.start


class TestSubgraphs:
    def test_concepts_only(self, small):
        assert labelled(small, base_graph(small, ["a", "c"])) == \
            ({"a", "c"}, {("a", "related_to", "c")})
        assert labelled(small, base_graph(small, ["d"])) == ({"d"}, set())
        assert len(base_graph(small, [])) == 0

    def test_one_hop(self, small):
        g = build_one_hop(small, base_graph(small, ["a", "c"]))
        vs, es = labelled(small, g)
        assert vs == {"a", "b", "c", "d"} and len(es) == 4
        assert len(build_one_hop(small, ConceptGraph())) == 0

    def test_one_hop_isolated_vertex(self):
        kg = KnowledgeGraph([("x", "r", "x"), ("y", "r", "z")])
        g = base_graph(kg, ["x"])
        assert build_one_hop(kg, g).vertices == g.vertices

    def test_two_hop(self, small):
        g = build_two_hop(small, base_graph(small, ["a", "c"]))
        assert labelled(small, g) == ({"a", "b", "c"}, {("a", "related_to", "b"),
                                                        ("b", "is_a", "c"),
                                                        ("a", "related_to", "c")})

    def test_two_hop_single_vertex_unchanged(self, small):
        g = base_graph(small, ["c"])
        assert build_two_hop(small, g) == g

    def test_hop_vertices_have_no_spans(self, small):
        g = build_one_hop(small, base_graph(small, ["a"]))
        assert set(g.origin_spans) == {small.concept_id("a")}

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        triples = random_triples(rng)
        kg = KnowledgeGraph(triples)
        base = [lab for lab in kg.labels if rng.random() < 0.3]
        g0 = base_graph(kg, base)
        built = {"concepts_only": g0, "one_hop": build_one_hop(kg, g0),
                 "two_hop": build_two_hop(kg, g0)}
        for name, expected in subgraphs(triples, base).items():
            assert labelled(kg, built[name]) == expected, name
        v0, v1, v2 = (set(built[k].vertices) for k in ("concepts_only", "one_hop", "two_hop"))
        assert v0 <= v2 <= v1

    def test_unknown_strategy(self, small):
        with pytest.raises(DomainError):
            build_graph(small, ["a"], "three_hop")


class TestOrder:
    def test_position_rule(self):
        kg = KnowledgeGraph([("x", "r", "y")])
        g = build_concepts_only(kg, [MatchSpan(2, 2, 0), MatchSpan(0, 0, 1)])
        assert order_concepts(g, kg) == [1, 0]

    def test_longer_first_at_same_start(self):
        kg = KnowledgeGraph([("x", "r", "y")])
        g = ConceptGraph([0, 1], [], {0: [(0, 0)], 1: [(0, 1)]})
        assert order_concepts(g, kg) == [1, 0]

    def test_singleton(self, small):
        assert order_concepts(base_graph(small, ["b"]), small) == [small.concept_id("b")]

    def test_earliest_occurrence_counts(self):
        kg = KnowledgeGraph([("x", "r", "y")])
        g = build_concepts_only(kg, [MatchSpan(0, 0, 1), MatchSpan(1, 1, 0), MatchSpan(2, 2, 1)])
        assert order_concepts(g, kg) == [1, 0]

    def test_hop_vertex_rejected(self, small):
        g = build_one_hop(small, base_graph(small, ["d"]))
        with pytest.raises(DomainError):
            order_concepts(g, small)


class TestAverages:
    def test_arithmetic(self, small):
        pairs = [ExamplePair("a c", "b", "neutral"), ExamplePair("a b c d", "zzz", "entails")]
        assert avg_graph_size(pairs, small, "concepts_only", tokenize) == (3.0, 0.5)

    def test_all_empty(self, small):
        pairs = [ExamplePair("x", "y", "neutral")]
        assert avg_graph_size(pairs, small, "two_hop", tokenize) == (0.0, 0.0)

    def test_empty_dataset(self, small):
        with pytest.raises(DomainError):
            avg_graph_size([], small, "one_hop", tokenize)

    def test_describe(self, small):
        g = build_graph(small, ["a", "c"], "concepts_only")
        assert g.describe(small) == {"vertices": ["a", "c"], "edges": [["a", "related_to", "c"]],
                                     "spans": {"a": [[0, 0]], "c": [[1, 1]]}}
