"""Command-line entry points.

One experiment step per invocation; every source of randomness derives from
--seed, so re-running a command with identical inputs reproduces its output
files byte for byte. Human-readable summaries go to stdout, machine-readable
results to the paths given by --out.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .attacks import ATTACKS, AttackConfig, evaluate_asr
from .lexer import MINILANG, LanguageProfile
from .minilang import GenConfig, generate_corpus, load_jsonl, save_jsonl
from .reports import ExperimentReport, config_hash, emit_plot_data, merge_report_files
from .runtime import tune_allocator
from .training import MODES, TrainConfig
from .transforms import DEFAULT_ADV_SPECS, TransformSpec, build_adv_testset
from .verification import run_grad_suite

log = logging.getLogger(__name__)


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_train_flags(p):
    p.add_argument("--mode", choices=MODES, help="training regime")
    p.add_argument("--epsilon", type=float, help="perturbation bound (Frobenius)")
    p.add_argument("--eta", type=float, help="adversarial learning rate")
    p.add_argument("--steps", type=int, help="inner ascent steps K")
    p.add_argument("--alpha", type=float, help="parameter learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)


def build_parser() -> _Parser:
    parser = _Parser(prog="spacecode", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a labelled MiniLang corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--defect-rate", type=float, default=0.5)
    p.add_argument("--config", help="GenConfig JSON file")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-bpe", help="train a BPE tokenizer on a corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--merges", type=int, default=400)
    p.add_argument("--profile", help="LanguageProfile JSON file")
    p.set_defaults(func=cmd_train_bpe)

    p = sub.add_parser("train", help="train a classifier checkpoint")
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--data", required=True)
    p.add_argument("--dev", help="held-out dev JSONL (default: split from --data)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--merges", type=int, default=400)
    p.add_argument("--metrics", help="per-epoch metrics JSONL path")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="clean / transformed accuracy of a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--transformed", help="transformed test set JSONL")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attack", help="run a renaming attack and report ASR")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--attack", required=True, choices=sorted(ATTACKS))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=400)
    p.add_argument("--candidates", type=int, default=30)
    p.add_argument("--population", type=int, default=30)
    p.add_argument("--generations", type=int, default=50)
    p.add_argument("--max-samples", type=int, help="attack only the first N samples")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("transform", help="build a transformation-based adversarial test set")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--specs", help="TransformSpec JSON array file")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("grad-check", help="run the gradient verification suite")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("report", help="merge report JSON files into a plot CSV")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def cmd_gen_data(args) -> int:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            gen = GenConfig.from_dict(json.load(fh))
    else:
        gen = GenConfig(defect_rate=args.defect_rate)
    samples = generate_corpus(args.seed, args.n, gen)
    save_jsonl(samples, args.out)
    positive = sum(s.label for s in samples)
    print(f"wrote {len(samples)} samples to {args.out} "
          f"({positive} defective, {len(samples) - positive} clean)")
    return 0


def cmd_train_bpe(args) -> int:
    from .bpe import train_bpe
    profile = LanguageProfile.load(args.profile) if args.profile else MINILANG
    samples = load_jsonl(args.data, profile)
    model = train_bpe([s.program.source for s in samples], args.merges, profile)
    model.save(args.out)
    print(f"trained BPE model: {model.vocab_size} symbols, "
          f"{len(model.merges)} merges -> {args.out}")
    return 0


def _train_config(args) -> TrainConfig:
    base = TrainConfig.load(args.config).to_dict() if args.config else TrainConfig().to_dict()
    overrides = {"mode": args.mode, "epsilon": args.epsilon, "eta": args.eta,
                 "steps": args.steps, "alpha": args.alpha, "epochs": args.epochs,
                 "batch_size": args.batch_size, "seed": args.seed}
    base.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(base)


def cmd_train(args) -> int:
    from .estimator import SpaceClassifier
    cfg = _train_config(args)
    samples = load_jsonl(args.data)
    clf = SpaceClassifier(mode=cfg.mode, epsilon=cfg.epsilon, eta=cfg.eta,
                          steps=cfg.steps, learning_rate=cfg.alpha,
                          epochs=cfg.epochs, batch_size=cfg.batch_size,
                          seed=cfg.seed, num_merges=args.merges,
                          optimizer=cfg.optimizer)
    X = [s.program.source for s in samples]
    y = [s.label for s in samples]
    dev = None
    if args.dev:
        dev_samples = load_jsonl(args.dev)
        dev = ([s.program.source for s in dev_samples],
               [s.label for s in dev_samples])
    clf.fit(X, y, dev=dev)
    clf.save(args.out)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as fh:
            for record in clf.history_:
                fh.write(json.dumps(record) + "\n")
    best = max((h["dev_acc"] for h in clf.history_), default=0.0)
    print(f"trained mode={cfg.mode} seed={cfg.seed}: best dev acc {best:.4f} -> {args.out}")
    return 0


def _load_classifier(path):
    from .estimator import SpaceClassifier
    return SpaceClassifier.from_checkpoint(path)


def cmd_evaluate(args) -> int:
    clf = _load_classifier(args.model)
    samples = load_jsonl(args.data, clf.profile_)
    clean_acc = clf.accuracy_on(samples)
    cfg = clf.train_config_
    report = ExperimentReport(
        run_id=f"{cfg.mode}-s{cfg.seed}", mode=cfg.mode, seed=cfg.seed,
        config_hash=config_hash(cfg.to_dict()), clean_acc=clean_acc)
    line = f"clean acc {clean_acc:.4f}"
    if args.transformed:
        transformed = load_jsonl(args.transformed, clf.profile_)
        report.transformed_acc = clf.accuracy_on(transformed)
        report.drop_transform = clean_acc - report.transformed_acc
        line += (f", transformed acc {report.transformed_acc:.4f}"
                 f" (drop {report.drop_transform:.4f})")
    report.save(args.out)
    print(f"{report.run_id}: {line} -> {args.out}")
    return 0


def cmd_attack(args) -> int:
    clf = _load_classifier(args.model)
    samples = load_jsonl(args.data, clf.profile_)
    if args.max_samples:
        samples = samples[: args.max_samples]
    cfg = AttackConfig(budget=args.budget, candidates=args.candidates,
                       population=args.population, generations=args.generations,
                       seed=args.seed)
    report = evaluate_asr(clf, samples, args.attack, cfg, profile=clf.profile_,
                          mode=clf.train_config_.mode)
    report.seed = clf.train_config_.seed
    report.save(args.out)
    asr = "undefined" if report.undefined else f"{report.asr:.4f}"
    print(f"{args.attack} on {report.mode}: N+={report.n_plus} N-={report.n_minus} "
          f"ASR={asr} -> {args.out}")
    return 0


def cmd_transform(args) -> int:
    samples = load_jsonl(args.data)
    if args.specs:
        with open(args.specs, encoding="utf-8") as fh:
            specs = [TransformSpec.from_dict(d) for d in json.load(fh)]
    else:
        specs = list(DEFAULT_ADV_SPECS)
    transformed = build_adv_testset(samples, specs, seed=args.seed)
    save_jsonl(transformed, args.out)
    print(f"transformed {len(transformed)} samples "
          f"({', '.join(s.id for s in specs)}) -> {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    return 0 if run_grad_suite(verbose=True) else 2


def cmd_report(args) -> int:
    reports = merge_report_files(args.inputs)
    emit_plot_data(reports, args.out)
    print(f"wrote {len(reports)} rows -> {args.out}")
    return 0


def run_cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    tune_allocator()
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr)
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
