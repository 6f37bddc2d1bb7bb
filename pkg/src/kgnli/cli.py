"""Command-line entry point: ``kgnli <command> [options]``.

Exit status is 0 on success, 1 on usage errors (bad flags, missing files)
and 2 on data errors (malformed or invalid input files).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .data import ExamplePair, gen_synthetic, load_dataset, tokenize
from .embeddings import EmbeddingTable, load_embeddings
from .errors import DomainError, ParseError
from .kg import STRATEGIES, KnowledgeGraph, avg_graph_size, build_graph, kg_stats
from .models import MatchModel, classify
from .tensor import no_grad
from .training import (Featurizer, evaluate, load_checkpoint, save_checkpoint, train,
                       write_history)

log = logging.getLogger("kgnli")

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _existing(path) -> Path:
    if path is None:
        raise UsageError("a required file path is missing")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _tables(run: RunConfig) -> tuple[EmbeddingTable, EmbeddingTable]:
    seed = run.training.seed
    tables = []
    for key, salt in (("word_emb", 0), ("concept_emb", 1)):
        path = run.paths.get(key)
        if path is None:
            tables.append(EmbeddingTable(run.emb_dim, oov_seed=seed + salt))
        else:
            tables.append(load_embeddings(_existing(path), run.emb_dim, oov_seed=seed + salt))
    return tables[0], tables[1]


def _featurizer(run: RunConfig) -> Featurizer:
    kg = KnowledgeGraph.load(_existing(run.paths.get("kg")))
    words, concepts = _tables(run)
    return Featurizer.for_model(kg, words, concepts, run.model_config(),
                                run.training.graph_strategy, run.lowercase)


def _load_run(args) -> RunConfig:
    run = RunConfig.load(_existing(args.config))
    for flag, key in (("word_emb", "word_emb"), ("concept_emb", "concept_emb")):
        value = getattr(args, flag, None)
        if value is not None:
            run.paths[key] = str(Path(value).resolve())
    if getattr(args, "emb_dim", None) is not None:
        run.emb_dim = args.emb_dim
    return run


def cmd_train(args) -> int:
    run = _load_run(args)
    for key in ("checkpoint", "history"):
        if run.paths.get(key) is None:
            raise UsageError(f"config needs paths.{key}")
    train_set = load_dataset(_existing(run.paths.get("train")))
    dev_path = run.paths.get("dev")
    dev_set = load_dataset(_existing(dev_path)) if dev_path else None
    featurizer = _featurizer(run)
    model = MatchModel.create(run.model_config(), run.training.seed)
    echo = {"run": run.to_dict(), "model": model.config.to_dict()}
    ckpt, history = train(model, train_set, featurizer, run.training, dev_set, echo=echo)
    save_checkpoint(ckpt, run.paths["checkpoint"])
    write_history(history, run.paths["history"])
    last = history[-1] if history else None
    print(json.dumps({"checkpoint": run.paths["checkpoint"], "history": run.paths["history"],
                      "epochs": len(history),
                      "train_loss": last.train_loss if last else None,
                      "dev_accuracy": last.dev_accuracy if last else None}))
    return 0


_MODE_NAMES = {"merged": "merged", "text": "text_only", "graph": "graph_only"}


def cmd_eval(args) -> int:
    run = _load_run(args)
    ckpt = load_checkpoint(_existing(args.checkpoint))
    model = ckpt.model(best=args.best)
    split = run.paths.get(args.split)
    dataset = load_dataset(_existing(split))
    report = evaluate(model, dataset, _featurizer(run), _MODE_NAMES[args.mode], args.oracle)
    summary = {"split": args.split, "mode": args.mode, **report.summary()}
    print(json.dumps(summary))
    if args.predictions:
        with open(args.predictions, "w", encoding="utf-8") as fh:
            for label, p in zip(report.predictions, report.probabilities):
                fh.write(f"{label}\t{p!r}\n")
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(_existing(args.checkpoint))
    run = RunConfig.from_dict(ckpt.config["run"])
    model = ckpt.model(best=args.best)
    featurizer = _featurizer(run)
    pair = ExamplePair(args.premise, args.hypothesis, "neutral")
    if not tokenize(pair.premise, run.lowercase) or not tokenize(pair.hypothesis, run.lowercase):
        raise UsageError("premise and hypothesis must contain at least one token")
    with no_grad():
        out = model.forward(featurizer(pair), probes=False)
    label, prob = classify(out.logits)
    pg, hg = featurizer.graphs(pair)
    kg = featurizer.kg
    print(json.dumps({"label": label, "probability": prob,
                      "premise_graph": pg.describe(kg), "hypothesis_graph": hg.describe(kg)},
                     indent=2))
    return 0


def cmd_build_graphs(args) -> int:
    kg = KnowledgeGraph.load(_existing(args.kg))
    pairs = load_dataset(_existing(args.dataset))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for i, pair in enumerate(pairs):
                pg = build_graph(kg, tokenize(pair.premise), args.strategy)
                hg = build_graph(kg, tokenize(pair.hypothesis), args.strategy)
                fh.write(json.dumps({"index": i, "premise_graph": pg.describe(kg),
                                     "hypothesis_graph": hg.describe(kg)}) + "\n")
    prem, hyp = avg_graph_size(pairs, kg, args.strategy, tokenize)
    print(json.dumps({"strategy": args.strategy, "pairs": len(pairs),
                      "avg_concepts_premise": prem, "avg_concepts_hypothesis": hyp}))
    return 0


def cmd_kg_stats(args) -> int:
    path = args.kg or args.kg_file
    concepts, relations, facts = kg_stats(KnowledgeGraph.load(_existing(path)))
    print(f"concepts\t{concepts}\nrelations\t{relations}\nfacts\t{facts}")
    return 0


def cmd_gen_synthetic(args) -> int:
    corpus = gen_synthetic(args.seed, args.n_train, args.n_dev, args.vocab_size, args.emb_dim)
    paths = corpus.write(args.out)
    out = Path(args.out)
    run = RunConfig(emb_dim=args.emb_dim)
    run.paths.update({k: v.name for k, v in paths.items()})
    run.paths.update({"checkpoint": "model.ckpt", "history": "history.tsv"})
    run.training.seed = args.seed
    run.training.graph_model = args.graph_model
    run.save(out / "config.json")
    print(json.dumps({"out": str(out), "train": len(corpus.train), "dev": len(corpus.dev),
                      "facts": len(corpus.triples)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgnli", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def emb_flags(p):
        p.add_argument("--word-emb", help="word vectors, 'key v1 .. vd' per line")
        p.add_argument("--concept-emb", help="concept vectors, same format")
        p.add_argument("--emb-dim", type=int, help="vector width of both tables")

    p = sub.add_parser("train", help="train and write checkpoint + history")
    p.add_argument("--config", required=True)
    emb_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy on a dataset split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=sorted(_MODE_NAMES), default="merged")
    p.add_argument("--oracle", action="store_true", help="also report text, graph and oracle accuracy")
    p.add_argument("--split", choices=("train", "dev", "test"), default="dev")
    p.add_argument("--best", action="store_true", help="use the best-dev parameters")
    p.add_argument("--predictions", help="write one 'label<TAB>probability' line per pair")
    emb_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one pair and show its concept graphs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--premise", required=True)
    p.add_argument("--hypothesis", required=True)
    p.add_argument("--best", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("build-graphs", help="concept graphs per pair and average sizes")
    p.add_argument("--kg", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default="concepts_only")
    p.add_argument("--out", help="write per-pair graphs as JSON lines")
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("kg-stats", help="concept, relation and fact counts")
    p.add_argument("kg_file", nargs="?")
    p.add_argument("--kg")
    p.set_defaults(func=cmd_kg_stats)

    p = sub.add_parser("gen-synthetic", help="write a seeded synthetic corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-dev", type=int, default=500)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--emb-dim", type=int, default=16)
    p.add_argument("--graph-model", choices=("gmatch", "gconattn", "none"), default="gmatch")
    p.set_defaults(func=cmd_gen_synthetic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"kgnli: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, DomainError) as exc:
        print(f"kgnli: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
