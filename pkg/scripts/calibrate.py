"""Desk-scale calibration runs for the robustness experiment."""

import argparse
import json
import sys
import time

import numpy as np

from spacecode.runtime import tune_allocator
from spacecode.attacks import AttackConfig, evaluate_asr
from spacecode.estimator import SpaceClassifier
from spacecode.minilang import GenConfig, generate_corpus
from spacecode.transforms import DEFAULT_ADV_SPECS, build_adv_testset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--modes", nargs="+", default=["baseline", "adv", "space"])
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--epsilon", type=float, default=1.0)
    ap.add_argument("--eta", type=float, default=5e-4)
    ap.add_argument("--train-n", type=int, default=4000)
    ap.add_argument("--test-n", type=int, default=1000)
    ap.add_argument("--attack-samples", type=int, default=150)
    ap.add_argument("--budget", type=int, default=120)
    ap.add_argument("--out", default="/tmp/calibration.jsonl")
    args = ap.parse_args()

    tune_allocator()
    data = generate_corpus(100, args.train_n + args.test_n)
    train_data, test_data = data[: args.train_n], data[args.train_n:]
    X = [s.program.source for s in train_data]
    y = [s.label for s in train_data]
    test_sources = [s.program.source for s in test_data]
    test_labels = np.array([s.label for s in test_data])
    transformed = build_adv_testset(test_data, DEFAULT_ADV_SPECS, seed=999)

    sink = open(args.out, "a", buffering=1)
    for seed in args.seeds:
        for mode in args.modes:
            t0 = time.time()
            clf = SpaceClassifier(mode=mode, epsilon=args.epsilon, eta=args.eta,
                                  epochs=args.epochs, seed=seed)
            clf.fit(X, y)
            t_train = time.time() - t0
            clean_acc = float((clf.predict(test_sources) == test_labels).mean())
            t_clean = time.time() - t0 - t_train
            trans_acc = clf.accuracy_on(transformed)
            acfg = AttackConfig(budget=args.budget, candidates=30, seed=7)
            t0a = time.time()
            report = evaluate_asr(clf, test_data[: args.attack_samples], "mhm", acfg,
                                  mode=mode)
            row = {
                "mode": mode, "seed": seed, "epochs": args.epochs,
                "epsilon": args.epsilon, "eta": args.eta,
                "clean_acc": round(clean_acc, 4),
                "trans_acc": round(trans_acc, 4),
                "drop": round(clean_acc - trans_acc, 4),
                "asr_mhm": None if report.undefined else round(report.asr, 4),
                "n_plus": report.n_plus,
                "t_train": round(t_train, 1), "t_attack": round(time.time() - t0a, 1),
                "dev": [round(h["dev_acc"], 3) for h in clf.history_],
            }
            print(json.dumps(row), flush=True)
            sink.write(json.dumps(row) + "\n")
    sink.close()


if __name__ == "__main__":
    main()
