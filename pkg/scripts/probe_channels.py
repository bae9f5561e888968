"""Separate the rename attack channels: in-vocabulary content swaps vs
length-changing out-of-vocabulary names."""

import json

import numpy as np

from spacecode.runtime import tune_allocator
from spacecode.estimator import SpaceClassifier
from spacecode.minilang import DEFAULT_NAME_POOL, generate_corpus
from spacecode.seeding import derive_rng
from spacecode.transforms import rename_identifiers

tune_allocator()

data = generate_corpus(100, 4400)
train_data, test_data = data[:4000], data[4000:4400]
X = [s.program.source for s in train_data]
y = [s.label for s in train_data]
labels = np.array([s.label for s in test_data])


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


def camel_names(rng, count, exclude):
    from spacecode.attacks import generate_fresh_names
    return generate_fresh_names(rng, count, exclude)


def renamed_accuracy(clf, namer, seed):
    correct = 0
    for idx, s in enumerate(test_data):
        rng = derive_rng(seed, "chan", idx)
        names = sorted(s.program.identifiers)
        subs = namer(rng, len(names), s.program.identifiers)
        renamed = rename_identifiers(s.program, dict(zip(names, subs)))
        pred = int(clf.predict_proba_one(renamed.source).argmax())
        correct += pred == s.label
    return correct / len(test_data)


for mode, eps, eta in [("baseline", 1.0, 5e-4), ("space", 0.5, 0.25),
                       ("space", 1.0, 0.5)]:
    clf = SpaceClassifier(mode=mode, epsilon=eps, eta=eta, seed=0)
    clf.fit(X, y)
    clean = float((clf.predict([s.program.source for s in test_data]) == labels).mean())
    row = {"mode": mode, "eps": eps, "eta": eta, "clean": round(clean, 4),
           "rename_invocab": round(renamed_accuracy(clf, invocab_names, 1), 4),
           "rename_camel": round(renamed_accuracy(clf, camel_names, 2), 4)}
    print(json.dumps(row), flush=True)
