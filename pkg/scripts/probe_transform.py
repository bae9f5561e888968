"""Which transformation drives the accuracy drop, per training mode."""

import json
import sys

import numpy as np

from spacecode.runtime import tune_allocator
from spacecode.estimator import SpaceClassifier
from spacecode.minilang import generate_corpus
from spacecode.transforms import TransformSpec, build_adv_testset

tune_allocator()

data = generate_corpus(100, 5000)
train_data, test_data = data[:4000], data[4000:4600]
X = [s.program.source for s in train_data]
y = [s.label for s in train_data]

variants = {
    "clean": test_data,
    "rename_all": build_adv_testset(test_data, [TransformSpec("rename", 1, 1.0)], 999),
    "rename_half": build_adv_testset(test_data, [TransformSpec("rename", 1, 0.5)], 999),
    "dead_code": build_adv_testset(test_data, [TransformSpec("dead_code", 2)], 999),
    "identity": build_adv_testset(test_data, [TransformSpec("identity_rewrite", 3, 0.6)], 999),
}

for mode in sys.argv[1:] or ["baseline", "space"]:
    clf = SpaceClassifier(mode=mode, seed=0)
    clf.fit(X, y)
    row = {"mode": mode}
    for name, testset in variants.items():
        row[name] = round(clf.accuracy_on(testset), 4)
    print(json.dumps(row), flush=True)
