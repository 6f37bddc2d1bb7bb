import struct

import numpy as np
import pytest

from kgnli import tensor as T
from kgnli.data import ExamplePair, gen_synthetic
from kgnli.errors import DomainError, ParseError, StateError
from kgnli.kg import KnowledgeGraph
from kgnli.models import MatchModel, ModelConfig
from kgnli.tensor import ParamStore, Tensor
from kgnli.training import (AdagradState, Checkpoint, EpochStats, Featurizer, TrainConfig,
                            accuracy, adagrad_step, cross_entropy_loss, evaluate,
                            evaluate_features, load_checkpoint, oracle_accuracy,
                            save_checkpoint, train, write_history)

SMALL = dict(word_dim=4, concept_dim=4, hidden_size=4)


@pytest.fixture(scope="module")
def tiny():
    corpus = gen_synthetic(0, n_train=24, n_dev=12, vocab_size=20, dim=4)
    kg = KnowledgeGraph(corpus.triples)
    return corpus, kg


def featurizer(tiny, kind="gmatch"):
    corpus, kg = tiny
    return Featurizer.for_model(kg, corpus.word_table, corpus.concept_table,
                                ModelConfig(graph_model=kind, **SMALL), "concepts_only")


class TestLoss:
    def test_uniform_logits(self):
        for y in (0, 1):
            assert cross_entropy_loss(Tensor([0.0, 0.0]), y).item() == \
                pytest.approx(0.6931471805599453, abs=1e-15)

    def test_confident(self):
        assert cross_entropy_loss(Tensor([10.0, -10.0]), 0).item() == \
            pytest.approx(2.061153620314381e-09, rel=1e-9)

    def test_large_logits_are_finite(self):
        assert cross_entropy_loss(Tensor([1000.0, -1000.0]), 1).item() == pytest.approx(2000.0)

    def test_gradient(self):
        z = Tensor([0.3, -1.1], requires_grad=True)
        T.backward(cross_entropy_loss(z, 1))
        p = np.exp([0.3, -1.1]) / np.exp([0.3, -1.1]).sum()
        np.testing.assert_allclose(z.grad, p - [0, 1], atol=1e-15)

    def test_invalid_label(self):
        with pytest.raises(DomainError):
            cross_entropy_loss(Tensor([0.0, 0.0]), 2)


class TestAdagrad:
    def test_first_step(self):
        params = ParamStore({"w": np.array([0.0])})
        params["w"].grad = np.array([3.0])
        state = AdagradState(params)
        adagrad_step(state, params, lr=0.1)
        assert params["w"].data[0] == pytest.approx(-0.09999999999666669, abs=1e-17)
        assert state.accum["w"][0] == 9.0

    def test_zero_gradient(self):
        params = ParamStore({"w": np.array([1.5])})
        params.zero_grad()
        state = AdagradState(params)
        adagrad_step(state, params, lr=0.1)
        assert params["w"].data[0] == 1.5 and state.accum["w"][0] == 0.0

    def test_accumulator_non_decreasing(self):
        rng = np.random.default_rng(0)
        params = ParamStore({"w": rng.normal(size=5)})
        state = AdagradState(params)
        prev = state.accum["w"].copy()
        for _ in range(20):
            params["w"].grad = rng.normal(size=5)
            adagrad_step(state, params, lr=0.01)
            assert np.all(state.accum["w"] >= prev)
            prev = state.accum["w"].copy()

    def test_missing_grad(self):
        params = ParamStore({"w": np.zeros(2)})
        with pytest.raises(StateError):
            adagrad_step(AdagradState(params), params, lr=0.1)


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.learning_rate, cfg.batch_size, cfg.adagrad_epsilon) == (0.001, 40, 1e-10)

    @pytest.mark.parametrize("kwargs", [dict(learning_rate=0), dict(batch_size=0),
                                        dict(graph_strategy="three_hop"),
                                        dict(graph_model="gmatch", graph_strategy="one_hop")])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            TrainConfig(**kwargs)


class TestTrain:
    def test_one_example_one_step(self, tiny):
        corpus, _ = tiny
        model = MatchModel.create(ModelConfig(**SMALL), 0)
        _, hist = train(model, corpus.train[:1], featurizer(tiny), TrainConfig(epochs=1))
        assert [h.steps for h in hist] == [1]

    def test_partial_batch_kept(self, tiny):
        corpus, _ = tiny
        model = MatchModel.create(ModelConfig(**SMALL), 0)
        _, hist = train(model, corpus.train[:10], featurizer(tiny),
                        TrainConfig(epochs=2, batch_size=4))
        assert [h.steps for h in hist] == [3, 6]

    def test_empty_dataset(self, tiny):
        with pytest.raises(DomainError):
            train(MatchModel.create(ModelConfig(**SMALL), 0), [], featurizer(tiny), TrainConfig())

    def test_model_config_mismatch(self, tiny):
        corpus, _ = tiny
        model = MatchModel.create(ModelConfig(graph_model="gconattn", **SMALL), 0)
        with pytest.raises(DomainError):
            train(model, corpus.train, featurizer(tiny), TrainConfig(graph_model="gmatch"))

    def test_same_seed_same_history(self, tiny):
        corpus, _ = tiny
        runs = []
        for _ in range(2):
            model = MatchModel.create(ModelConfig(**SMALL), 5)
            ckpt, hist = train(model, corpus.train, featurizer(tiny),
                               TrainConfig(epochs=2, batch_size=8), corpus.dev)
            runs.append((hist, ckpt.params.state_dict()))
        assert runs[0][0] == runs[1][0]
        assert all(runs[0][1][k].tobytes() == runs[1][1][k].tobytes() for k in runs[0][1])

    def test_repeated_example_loss_decreases(self, tiny):
        corpus, _ = tiny
        model = MatchModel.create(ModelConfig(**SMALL), 1)
        feats = featurizer(tiny)(corpus.train[0])
        state = AdagradState(model.params)
        losses = []
        for _ in range(15):
            model.params.zero_grad()
            loss = cross_entropy_loss(model.forward(feats).logits, corpus.train[0].target)
            T.backward(loss)
            adagrad_step(state, model.params, lr=0.01)
            losses.append(loss.item())
        assert all(b < a for a, b in zip(losses[3:], losses[4:]))

    def test_best_params_tracked(self, tiny):
        corpus, _ = tiny
        model = MatchModel.create(ModelConfig(**SMALL), 2)
        ckpt, hist = train(model, corpus.train, featurizer(tiny),
                           TrainConfig(epochs=3, batch_size=8), corpus.dev)
        feat = featurizer(tiny)
        best = max(h.dev_accuracy for h in hist)
        assert evaluate(ckpt.model(best=True), corpus.dev, feat).accuracy == best
        assert evaluate(ckpt.model(), corpus.dev, feat).accuracy == hist[-1].dev_accuracy


class TestEvaluate:
    def test_accuracy(self):
        assert accuracy([1, 0, 1, 1], [1, 0, 1, 1]) == 1.0
        assert accuracy([1, 0, 1, 0], [1, 0, 1, 1]) == 0.75

    def test_oracle(self):
        labels = [1, 1, 1, 1]
        # text right on examples 1 and 2, graph right on 2 and 3 (1-based)
        assert oracle_accuracy([1, 1, 0, 0], [0, 1, 1, 0], labels) == 0.75
        assert oracle_accuracy([1, 1, 0, 0], [0, 0, 0, 0], labels) == accuracy([1, 1, 0, 0], labels)
        assert oracle_accuracy([1, 1, 0, 0], [0, 0, 1, 1], labels) == 1.0

    def test_oracle_length_mismatch(self):
        with pytest.raises(DomainError):
            oracle_accuracy([1], [1, 0], [1, 0])

    def test_empty(self, tiny):
        with pytest.raises(DomainError):
            evaluate(MatchModel.create(ModelConfig(**SMALL), 0), [], featurizer(tiny))

    @pytest.mark.parametrize("kind", ["gmatch", "gconattn"])
    def test_report_bounds(self, tiny, kind):
        corpus, _ = tiny
        model = MatchModel.create(ModelConfig(graph_model=kind, **SMALL), 3)
        rep = evaluate(model, corpus.dev, featurizer(tiny, kind), oracle=True)
        assert max(rep.text_accuracy, rep.graph_accuracy) <= rep.oracle_accuracy
        assert rep.oracle_accuracy <= min(1.0, rep.text_accuracy + rep.graph_accuracy)
        assert len(rep.predictions) == len(corpus.dev) == len(rep.probabilities)
        assert all(0.5 <= p <= 1 for p in rep.probabilities)

    def test_modes(self, tiny):
        corpus, _ = tiny
        model = MatchModel.create(ModelConfig(**SMALL), 3)
        feats = [featurizer(tiny)(p) for p in corpus.dev]
        targets = [p.target for p in corpus.dev]
        oracle = evaluate_features(model, feats, targets, oracle=True)
        assert evaluate_features(model, feats, targets, "text_only").accuracy == oracle.text_accuracy
        assert evaluate_features(model, feats, targets, "graph_only").accuracy == oracle.graph_accuracy
        with pytest.raises(DomainError):
            evaluate_features(model, feats, targets, "bogus")

    def test_graph_only_needs_graph_model(self, tiny):
        corpus, _ = tiny
        model = MatchModel.create(ModelConfig(graph_model="none", **SMALL), 3)
        with pytest.raises(DomainError):
            evaluate(model, corpus.dev, featurizer(tiny, "none"), "graph_only")


class TestFeaturizer:
    def test_shapes_and_order(self, tiny):
        corpus, kg = tiny
        pair = ExamplePair("W001 w002 nothing.", "w002", "neutral")
        feats = featurizer(tiny)(pair)
        assert feats.premise_words.shape == (3, 4)
        assert feats.premise_concepts.shape == (2, 4)
        np.testing.assert_array_equal(feats.premise_concepts[0],
                                      corpus.concept_table.lookup("w001"))

    def test_no_tokens(self, tiny):
        with pytest.raises(DomainError):
            featurizer(tiny)(ExamplePair("...", "w001", "neutral"))


class TestCheckpoint:
    def make(self):
        model = MatchModel.create(ModelConfig(**SMALL), 4)
        best = ParamStore({k: v * 2 for k, v in model.params.state_dict().items()})
        return Checkpoint({"model": model.config.to_dict(), "note": "x"}, model.params, best)

    def test_round_trip_bitwise(self, tmp_path):
        ckpt = self.make()
        save_checkpoint(ckpt, tmp_path / "a.ckpt")
        back = load_checkpoint(tmp_path / "a.ckpt")
        assert back.config == ckpt.config
        for store, orig in ((back.params, ckpt.params), (back.best_params, ckpt.best_params)):
            assert list(store) == list(orig)
            assert all(store[k].data.tobytes() == orig[k].data.tobytes() for k in store)
        save_checkpoint(back, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_layout(self, tmp_path):
        save_checkpoint(self.make(), tmp_path / "a.ckpt")
        raw = (tmp_path / "a.ckpt").read_bytes()
        assert raw[:4] == b"CSQN"
        assert struct.unpack("<I", raw[4:8]) == (1,)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        save_checkpoint(self.make(), tmp_path / "a.ckpt")
        raw = (tmp_path / "a.ckpt").read_bytes()
        (tmp_path / "t.ckpt").write_bytes(raw[:-5])
        with pytest.raises(ParseError):
            load_checkpoint(tmp_path / "t.ckpt")
        (tmp_path / "t.ckpt").write_bytes(raw + b"\0")
        with pytest.raises(ParseError):
            load_checkpoint(tmp_path / "t.ckpt")

    def test_history_format(self, tmp_path):
        write_history([EpochStats(1, 0.5, 0.75, 3), EpochStats(2, 0.25, None, 6)],
                      tmp_path / "h.tsv")
        assert (tmp_path / "h.tsv").read_text() == "1\t0.5\t0.75\n2\t0.25\tnan\n"
