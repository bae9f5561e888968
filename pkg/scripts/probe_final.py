"""Full single-seed readout: clean, rename channels, transforms, MHM ASR."""

import json
import sys

import numpy as np

from spacecode.runtime import tune_allocator
from spacecode.attacks import AttackConfig, evaluate_asr, generate_fresh_names
from spacecode.estimator import SpaceClassifier
from spacecode.minilang import DEFAULT_NAME_POOL, generate_corpus
from spacecode.seeding import derive_rng
from spacecode.transforms import DEFAULT_ADV_SPECS, build_adv_testset, rename_identifiers

tune_allocator()

data = generate_corpus(100, 5000)
train_data, test_data = data[:4000], data[4000:]
X = [s.program.source for s in train_data]
y = [s.label for s in train_data]
labels = np.array([s.label for s in test_data])
sources = [s.program.source for s in test_data]
transformed = build_adv_testset(test_data, DEFAULT_ADV_SPECS, seed=999)


def invocab_names(rng, count, exclude):
    out = []
    while len(out) < count:
        stem = DEFAULT_NAME_POOL[rng.integers(len(DEFAULT_NAME_POOL))]
        roll = rng.random()
        name = stem + str(rng.integers(10)) if roll < 0.3 else (
            f"{stem}_{rng.integers(10)}" if roll < 0.45 else stem)
        if name not in exclude and name not in out:
            out.append(name)
    return out


def renamed_accuracy(clf, namer, seed, n=400):
    correct = 0
    for idx, s in enumerate(test_data[:n]):
        rng = derive_rng(seed, "chan", idx)
        names = sorted(s.program.identifiers)
        subs = namer(rng, len(names), s.program.identifiers)
        renamed = rename_identifiers(s.program, dict(zip(names, subs)))
        pred = int(clf.predict_proba_one(renamed.source).argmax())
        correct += pred == s.label
    return correct / n


args = sys.argv[1:]
seeds = [int(a) for a in args] or [0]
for seed in seeds:
    for mode, eps, eta in [("baseline", 1.0, 0.35), ("adv", 1.0, 0.35),
                           ("space", 1.0, 0.35)]:
        clf = SpaceClassifier(mode=mode, epsilon=eps, eta=eta, seed=seed)
        clf.fit(X, y)
        clean = float((clf.predict(sources) == labels).mean())
        trans = clf.accuracy_on(transformed)
        report = evaluate_asr(clf, test_data[:150], "mhm",
                              AttackConfig(budget=120, seed=7), mode=mode)
        row = {"mode": mode, "seed": seed, "eps": eps, "eta": eta,
               "clean": round(clean, 4), "trans_drop": round(clean - trans, 4),
               "asr": None if report.undefined else round(report.asr, 4),
               "inv": round(renamed_accuracy(clf, invocab_names, 1), 4),
               "camel": round(renamed_accuracy(clf, generate_fresh_names, 2), 4),
               "dev": [round(h["dev_acc"], 3) for h in clf.history_]}
        print(json.dumps(row), flush=True)
