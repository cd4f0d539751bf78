"""Command-line interface: ``convact {train,adapt,eval,predict,verify,synth}``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .checkpoint import Checkpoint, CheckpointError
from .corpus import CorpusFormatError, chunk_corpus, parse_corpus, write_corpus
from .embeddings import VectorFormatError
from .metrics import RunReport, confusion, confusion_csv
from .output import TAGS, LabelError
from .synth import ProfileError, SynthProfile, synth_generate
from .training import (
    ConfigError,
    DivergenceError,
    Pools,
    RegimeError,
    TrainConfig,
    evaluate,
    fit,
    predict_conversation,
)
from .verify import SUITES, report, timed_suite

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("convact")


class UsageError(Exception):
    pass


_INPUT_ERRORS = (
    UsageError, ConfigError, RegimeError, CorpusFormatError, CheckpointError,
    VectorFormatError, ProfileError, LabelError, OSError,
)


def _load_config(path, seed) -> TrainConfig:
    config = TrainConfig.load(path) if path else TrainConfig()
    if seed is not None:
        config = config.replace(seed=seed)
    return config


def _history_path(out: Path) -> Path:
    return out.with_name(out.name + ".history.json")


def _finish_training(args, pools: Pools, config: TrainConfig) -> int:
    model, ckpt, history = fit(pools, config)
    out = Path(args.out)
    ckpt.save(out)
    _history_path(out).write_text(json.dumps(history, indent=2) + "\n", encoding="utf-8")
    scored = [h for h in history if h["dev_macro_f1"] is not None]
    if scored:
        best = max(scored, key=lambda h: h["dev_macro_f1"])
        print(f"best dev epoch {best['epoch']} ({best['phase']}): "
              f"accuracy {best['dev_accuracy']:.4f}  macro-F1 {best['dev_macro_f1']:.4f}")
    else:
        print(f"trained {len(history)} epochs without a dev set; saved the final epoch")
    print(f"checkpoint: {out}\nhistory: {_history_path(out)}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args.config, args.seed)
    if config.regime in ("adapt-unsup", "adapt-semisup", "adapt-sup"):
        raise UsageError("adversarial regimes run through 'convact adapt'")
    train = parse_corpus(args.train)
    dev = parse_corpus(args.dev)
    source = parse_corpus(args.source) if args.source else []
    if config.regime in ("merge", "finetune") and not source:
        raise UsageError(f"regime {config.regime} needs --source in addition to --train")
    if config.regime == "transfer":
        pools = Pools(source=train, dev=dev)
    else:
        pools = Pools(source=source, target_labeled=train, dev=dev)
    return _finish_training(args, pools, config)


def cmd_adapt(args) -> int:
    mode = args.mode
    if mode == "unsup" and args.target_labeled:
        raise UsageError("--target-labeled is not allowed with --mode unsup (target labels would leak)")
    if mode != "unsup" and not args.target_labeled:
        raise UsageError(f"--mode {mode} needs --target-labeled")
    if mode == "unsup" and not args.target_unlabeled:
        raise UsageError("--mode unsup needs --target-unlabeled")
    if args.target_fraction != 1.0 and mode != "semisup":
        raise UsageError("--target-fraction applies to --mode semisup only")
    config = _load_config(args.config, args.seed).replace(
        regime=f"adapt-{mode}", target_label_fraction=args.target_fraction
    )
    config = TrainConfig.from_dict(config.to_dict())  # re-validate after the overrides
    pools = Pools(
        source=parse_corpus(args.source),
        target_labeled=parse_corpus(args.target_labeled) if args.target_labeled else [],
        target_unlabeled=[c.strip_labels() for c in parse_corpus(args.target_unlabeled)]
        if args.target_unlabeled else [],
        dev=parse_corpus(args.dev) if args.dev else [],
    )
    return _finish_training(args, pools, config)


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.model)
    model = ckpt.build_model()
    max_chunk = int(ckpt.config.get("max_chunk", 100))
    test = parse_corpus(args.test)
    unlabeled = [c.id for c in test if not c.is_labeled]
    if unlabeled:
        raise UsageError(f"test set has unlabeled sentences in conversations: {', '.join(unlabeled)}")
    rep, cm, _ = evaluate(model, chunk_corpus(test, max_chunk))
    Path(args.report).write_text(rep.to_json() + "\n", encoding="utf-8")
    if args.confusion:
        Path(args.confusion).write_text(confusion_csv(cm), encoding="utf-8", newline="\n")
    sys.stdout.write(rep.to_text())
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = Checkpoint.load(args.model)
    model = ckpt.build_model()
    max_chunk = int(ckpt.config.get("max_chunk", 100))
    convs = parse_corpus(args.input)
    out, gold, pred = [], [], []
    for conv in convs:
        tags = iter(predict_conversation(model, conv, max_chunk))
        comments = []
        for c in conv.comments:
            sents = []
            for s in c.sentences:
                t = next(tags)
                if s.act is None:
                    s = dataclasses.replace(s, act=TAGS[t])
                else:
                    gold.append(s.act_code)
                    pred.append(t)
                sents.append(s)
            comments.append(dataclasses.replace(c, sentences=tuple(sents)))
        out.append(dataclasses.replace(conv, comments=tuple(comments)))
    write_corpus(out, args.out)
    if gold:
        rep = RunReport.from_confusion(confusion(gold, pred))
        agree = sum(g == p for g, p in zip(gold, pred))
        print(f"agreement with existing labels: {agree}/{len(gold)} "
              f"(accuracy {rep.accuracy:.4f}, macro-F1 {rep.macro_f1:.4f})", file=sys.stderr)
    else:
        print("no existing labels to compare against", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    results, elapsed = timed_suite(args.suite)
    sys.stdout.write(report(results, elapsed))
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"first failure: {failed[0].line()}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_synth(args) -> int:
    profile = SynthProfile.load(args.profile) if args.profile else SynthProfile()
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    source, target = synth_generate(profile, args.n, args.seed)
    write_corpus(source, args.out_source)
    write_corpus(target, args.out_target)
    print(f"wrote {len(source)} source and {len(target)} target conversations")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convact", description="Speech-act tagging for conversations.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a tagger (in-domain and baseline regimes)")
    p.add_argument("--config", help="TrainConfig JSON (defaults used when omitted)")
    p.add_argument("--train", required=True, help="labeled training corpus (JSONL)")
    p.add_argument("--dev", required=True, help="labeled dev corpus for model selection")
    p.add_argument("--source", help="source corpus for the merge and finetune regimes")
    p.add_argument("--out", required=True, help="checkpoint path; history goes to <out>.history.json")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="adversarial domain adaptation")
    p.add_argument("--mode", required=True, choices=("unsup", "semisup", "sup"))
    p.add_argument("--source", required=True, help="labeled source corpus")
    p.add_argument("--target-labeled", help="labeled target corpus (semisup/sup)")
    p.add_argument("--target-unlabeled", help="unlabeled target corpus; any labels are ignored")
    p.add_argument("--target-fraction", type=float, default=1.0,
                   help="fraction of target-labeled conversations that keep labels (semisup)")
    p.add_argument("--config", help="TrainConfig JSON; regime is set from --mode")
    p.add_argument("--dev", help="labeled target dev corpus for model selection")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="score a checkpoint on a labeled test corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--report", required=True, help="RunReport JSON output")
    p.add_argument("--confusion", help="optional confusion-matrix CSV output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="fill missing act fields")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("verify", help="run built-in numerical self-checks")
    p.add_argument("--suite", default="all", choices=SUITES + ("all",))
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", help="generate synthetic source/target corpora")
    p.add_argument("--profile", help="SynthProfile JSON (defaults used when omitted)")
    p.add_argument("--n", type=int, required=True, help="conversations per domain")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-source", required=True)
    p.add_argument("--out-target", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
