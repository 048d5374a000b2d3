"""Command-line entry point.

Subcommands: synth (dataset generation and poisoning), train, eval, trace
(print a predicted label tree), and check (the randomized verification
suites). Every subcommand is deterministic given its flags; an optional JSON
config file supplies defaults that explicit flags override. Exit codes:
0 success, 1 check or evaluation failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .datagen import (
    ConfigError,
    DatasetError,
    SynthConfig,
    default_shortcuts,
    generate_trigger_dataset,
    poison_with_shortcuts,
    read_jsonl,
    read_vocab,
    shortcut_tokens,
    write_jsonl,
    write_vocab,
)
from .evaluation import evaluate, format_label_tree, predict_label_tree
from .labels import LabelVocabulary, yield_frontier, yield_labels
from .model import (
    CheckpointError,
    VocabError,
    init_model,
    load_checkpoint,
    require_compatible,
    save_checkpoint,
)
from .trees import (
    ParseTree,
    build_balanced_tree,
    build_random_tree,
    build_right_branching_tree,
    parse_sexpr,
    serialize_sexpr,
)
from .training import TrainConfig, train
from .verify import run_all

TREE_SOURCES = ("balanced", "right", "random", "file")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


class _Resolver:
    """Flag value if given, else config-file value, else the default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = _load_config(getattr(args, "config", None))

    def get(self, name: str, default=None):
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        return self.config.get(name, default)

    def flag(self, name: str) -> bool:
        return bool(getattr(self.args, name, False) or self.config.get(name, False))


def build_tree(n: int, source: str, seed: int, index: int = 0) -> ParseTree:
    if source == "balanced":
        return build_balanced_tree(n)
    if source == "right":
        return build_right_branching_tree(n)
    if source == "random":
        return build_random_tree(n, seed * 1_000_003 + index)
    raise ConfigError(f"unknown tree source {source!r}")


def trees_for_examples(examples, source: str, seed: int) -> list[ParseTree]:
    trees = []
    for idx, ex in enumerate(examples):
        if source == "file":
            if ex.tree is None:
                raise DatasetError(
                    f"example {idx}: tree source 'file' but no tree recorded"
                )
            trees.append(parse_sexpr(ex.tree))
            if trees[-1].leaf_count != len(ex.tokens):
                raise DatasetError(
                    f"example {idx}: tree has {trees[-1].leaf_count} leaves for "
                    f"{len(ex.tokens)} tokens"
                )
        else:
            trees.append(build_tree(len(ex.tokens), source, seed, idx))
    return trees


def cmd_synth(args) -> int:
    r = _Resolver(args)
    config = SynthConfig(
        vocab_size=r.get("vocab_size", 50),
        n_labels=r.get("labels", 4),
        trigger_length_range=(r.get("trigger_min", 2), r.get("trigger_max", 3)),
        sentence_length_range=(r.get("sentence_min", 8), r.get("sentence_max", 16)),
        examples=r.get("examples", 1000),
        multi_label_probability=r.get("multi_label_prob", 0.3),
        seed=r.get("seed", 0),
        allow_duplicate_triggers=r.flag("allow_duplicate_triggers"),
        neutral_fraction=r.get("neutral_frac", 0.0),
    )
    data = generate_trigger_dataset(config)
    examples = data.examples
    tokens = list(data.token_vocab)
    poison = r.get("poison", 0.0)
    n_poisoned = 0
    if poison:
        shortcuts = default_shortcuts(data.label_vocab)
        examples = poison_with_shortcuts(
            examples, poison, shortcuts, seed=config.seed + 1
        )
        tokens.extend(shortcut_tokens(shortcuts))
        n_poisoned = len(examples) - len(data.examples)
    tree_source = r.get("trees", "none")
    if tree_source != "none":
        for idx, ex in enumerate(examples):
            ex.tree = serialize_sexpr(
                build_tree(len(ex.tokens), tree_source, config.seed, idx)
            )
    write_jsonl(examples, args.output)
    vocab_path = r.get("vocab") or args.output + ".vocab"
    write_vocab(tokens, vocab_path)
    by_label: dict[str, int] = {}
    for ex in examples:
        for label in ex.gold_labels:
            by_label[label] = by_label.get(label, 0) + 1
    print(f"wrote {len(examples)} examples to {args.output} ({n_poisoned} poisoned)")
    print(f"wrote {len(tokens)} tokens to {vocab_path}")
    print("label counts: " + ", ".join(f"{k}={v}" for k, v in sorted(by_label.items())))
    return 0


def _label_vocab_for(examples, override: str | None) -> LabelVocabulary:
    if override:
        return LabelVocabulary(tuple(override.split(",")))
    seen = sorted({label for ex in examples for label in ex.gold_labels})
    if not seen:
        raise ConfigError("dataset has no labels; pass --labels explicitly")
    return LabelVocabulary(tuple(seen))


def cmd_train(args) -> int:
    r = _Resolver(args)
    tokens = read_vocab(args.vocab)
    examples = read_jsonl(args.dataset)
    if not examples:
        raise ConfigError(f"dataset {args.dataset} is empty")
    label_vocab = _label_vocab_for(examples, r.get("labels"))
    config = TrainConfig(
        learning_rate=r.get("lr", 5e-3),
        epochs=r.get("epochs", 10),
        batch_size=r.get("batch_size", 16),
        seed=r.get("seed", 0),
        use_topdown=r.flag("topdown"),
        exclusive=r.flag("exclusive"),
        objective=r.get("objective", "factorized"),
        embedding_dim=r.get("dim", 16),
        hidden_dim=r.get("hidden", 32),
        workers=r.get("workers", 1),
        warmup_epochs=r.get("warmup_epochs", 0),
    )
    model_kind = r.get("model", "symbolic")
    tree_source = r.get("tree", "balanced")
    trees = trees_for_examples(examples, tree_source, config.seed)
    params = init_model(
        tokens, label_vocab, config.embedding_dim, config.hidden_dim,
        config.seed, model_kind,
    )
    params.use_topdown = config.use_topdown or model_kind in ("mil", "mimll")
    dev_path = r.get("dev")
    dev = None
    if dev_path:
        dev_examples = read_jsonl(dev_path)
        dev_trees = trees_for_examples(dev_examples, tree_source, config.seed)
        dev = (dev_examples, dev_trees)
    log_lines: list[str] = []

    def hook(epoch: int, model, mean_loss: float):
        line = f"epoch {epoch} loss {mean_loss:.6f}"
        if dev is not None:
            report = evaluate(model, dev[0], dev[1], use_topdown=model.use_topdown)
            line += f" dev_exact_match {report['sentence']['exact_match']:.4f}"
        log_lines.append(line)
        print(line)
        return False

    train(params, examples, trees, config, epoch_hook=hook)
    save_checkpoint(params, args.checkpoint)
    log_path = r.get("log")
    if log_path:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(log_lines) + "\n")
    print(f"saved checkpoint to {args.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    r = _Resolver(args)
    params = load_checkpoint(args.checkpoint)
    tokens = read_vocab(args.vocab) if args.vocab else params.token_vocab
    require_compatible(params, tokens, params.vocab)
    examples = read_jsonl(args.dataset)
    seed = r.get("seed", 0)
    tree_source = r.get("tree", "balanced")
    trees = trees_for_examples(examples, tree_source, seed)
    use_topdown = r.flag("topdown") or params.use_topdown
    buckets = None
    if r.get("buckets"):
        buckets = [float(b) for b in str(r.get("buckets")).split(",")]
    report = evaluate(
        params, examples, trees,
        use_topdown=use_topdown,
        bucket_boundaries=buckets,
        top_k=r.get("top_k", 4),
    )
    report_path = r.get("report")
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    s = report["sentence"]
    print(f"examples          {report['examples']}")
    print(
        f"sentence          exact_match={s['exact_match']:.4f} "
        f"precision={s['precision']:.4f} recall={s['recall']:.4f} f1={s['f1']:.4f}"
    )
    if "span_attribution" in report:
        a = report["span_attribution"]
        print(
            f"span attribution  precision={a['precision']:.4f} "
            f"recall={a['recall']:.4f} f1={a['f1']:.4f}"
        )
        for name, rep in (a.get("buckets") or {}).items():
            if rep is None:
                print(f"  bucket {name:<12} (no examples)")
            else:
                print(f"  bucket {name:<12} f1={rep['f1']:.4f}")
    if "shortcut" in report:
        sc = report["shortcut"]
        print(
            f"shortcut          top{sc['k']}_precision={sc['top_k_precision']:.4f} "
            f"span_label_precision={sc['span_label_precision']:.4f} "
            f"({sc['examples']} poisoned examples)"
        )
    return 0


def cmd_trace(args) -> int:
    r = _Resolver(args)
    params = load_checkpoint(args.checkpoint)
    tokens = list(args.tokens)
    unknown = [t for t in tokens if t not in params.token_index]
    if unknown:
        raise VocabError(f"tokens not in the checkpoint vocabulary: {unknown}")
    tree_source = r.get("tree", "balanced")
    if tree_source == "file":
        raise ConfigError("trace builds its tree; use balanced, right, or random")
    tree = build_tree(len(tokens), tree_source, r.get("seed", 0))
    use_topdown = r.flag("topdown") or params.use_topdown
    lt, dists = predict_label_tree(params, tokens, tree, use_topdown)
    for line in format_label_tree(lt, dists, tokens):
        print(line)
    frontier = yield_frontier(lt)
    print(
        "frontier: "
        + (
            " ".join(f"({i},{j},{label})" for i, j, label in frontier)
            if frontier
            else "(none)"
        )
    )
    labels = yield_labels(lt)
    print("yield: {" + ", ".join(sorted(labels)) + "}")
    return 0


def cmd_check(args) -> int:
    r = _Resolver(args)
    instances = r.get("seeds", 200)
    results = run_all(
        dp_instances=instances,
        gradient_cases=r.get("gradient_cases", 50),
        model_cases=r.get("model_cases", 12),
        seed=r.get("seed", 0),
        inject_fault=r.flag("inject_fault"),
    )
    for result in results:
        print(result.line())
    report_path = r.get("report")
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump([result.__dict__ for result in results], fh, indent=2)
            fh.write("\n")
    if all(result.passed for result in results):
        print("all suites passed")
        return 0
    print("verification FAILED", file=sys.stderr)
    return 1


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON defaults; flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treelabel",
        description="Constituent label trees: synthesis, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic trigger dataset")
    _add_common(p)
    p.add_argument("--output", required=True, help="dataset JSONL path")
    p.add_argument("--vocab", default=None, help="vocabulary path (default: <output>.vocab)")
    p.add_argument("--labels", type=int, default=None)
    p.add_argument("--examples", type=int, default=None)
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=None)
    p.add_argument("--sentence-min", dest="sentence_min", type=int, default=None)
    p.add_argument("--sentence-max", dest="sentence_max", type=int, default=None)
    p.add_argument("--trigger-min", dest="trigger_min", type=int, default=None)
    p.add_argument("--trigger-max", dest="trigger_max", type=int, default=None)
    p.add_argument("--multi-label-prob", dest="multi_label_prob", type=float, default=None)
    p.add_argument("--neutral-frac", dest="neutral_frac", type=float, default=None)
    p.add_argument("--allow-duplicate-triggers", dest="allow_duplicate_triggers",
                   action="store_true")
    p.add_argument("--poison", type=float, default=None, help="extra poisoned fraction")
    p.add_argument("--trees", choices=("none",) + TREE_SOURCES[:3], default=None,
                   help="embed per-example trees")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dev", default=None, help="dev dataset for per-epoch metrics")
    p.add_argument("--labels", default=None, help="comma-separated label inventory")
    p.add_argument("--model", choices=("symbolic", "mil", "mimll"), default=None)
    p.add_argument("--objective", choices=("factorized", "full_permutation"), default=None)
    p.add_argument("--tree", choices=TREE_SOURCES, default=None)
    p.add_argument("--topdown", action="store_true")
    p.add_argument("--exclusive", action="store_true")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--warmup-epochs", dest="warmup_epochs", type=int, default=None,
                   help="initial epochs with the head on bottom-up vectors")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--log", default=None, help="write the per-epoch metrics log here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tree", choices=TREE_SOURCES, default=None)
    p.add_argument("--topdown", action="store_true")
    p.add_argument("--buckets", default=None, help="span-length bucket boundaries, e.g. 2,5")
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", help="print the predicted label tree for a sentence")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tree", choices=TREE_SOURCES[:3], default=None)
    p.add_argument("--topdown", action="store_true")
    p.add_argument("tokens", nargs="+", help="sentence tokens")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("check", help="run the verification suites")
    _add_common(p)
    p.add_argument("--seeds", type=int, default=None,
                   help="number of random DP instances (default 200)")
    p.add_argument("--gradient-cases", dest="gradient_cases", type=int, default=None)
    p.add_argument("--model-cases", dest="model_cases", type=int, default=None)
    p.add_argument("--inject-fault", dest="inject_fault", action="store_true",
                   help="test hook: perturb one value so the suite must fail")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CheckpointError, VocabError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
