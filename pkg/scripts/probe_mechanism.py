"""Mechanism probe: is the tied-perturbation training actually buying
robustness to identifier-content shifts (as opposed to length/position
shifts)?"""

import json
import sys

import numpy as np

from spacecode.runtime import tune_allocator
from spacecode import tensor as T
from spacecode.estimator import SpaceClassifier
from spacecode.minilang import generate_corpus
from spacecode.model import forward
from spacecode.seeding import derive_rng
from spacecode.training import PerturbationSet, project, scatter

tune_allocator()

data = generate_corpus(100, 4600)
train_data, test_data = data[:4000], data[4000:4400]
X = [s.program.source for s in train_data]
y = [s.label for s in train_data]


def content_noise_accuracy(clf, samples, sigma, seed=0):
    """Accuracy with Gaussian noise of Frobenius norm `sigma` injected on
    every identifier's (tied) embedding rows. Pure content shift: lengths and
    positions untouched."""
    correct = 0
    with T.no_grad():
        for idx, s in enumerate(samples):
            seq, idmap = clf.analyze(s.program.source)
            rng = derive_rng(seed, "noise", idx)
            mats = {e.name: project(rng.standard_normal((e.k, clf.embed_dim))
                                    .astype(np.float32) * 10, sigma)
                    for e in idmap.entries}
            perts = PerturbationSet(idmap, clf.embed_dim, mats)
            delta = scatter(perts, idmap, seq.n, clf.embed_dim)
            logits = forward(clf.params_, seq.ids, delta)
            correct += int(logits.data.argmax()) == s.label
    return correct / len(samples)


rows = []
for mode, eps, eta in [("baseline", 1.0, 5e-4),
                       ("space", 0.5, 0.25),
                       ("space", 1.0, 0.5),
                       ("space", 2.0, 1.0)]:
    clf = SpaceClassifier(mode=mode, epsilon=eps, eta=eta, seed=0)
    clf.fit(X, y)
    clean = float((clf.predict([s.program.source for s in test_data])
                   == np.array([s.label for s in test_data])).mean())
    row = {"mode": mode, "eps": eps, "eta": eta, "clean": round(clean, 4)}
    for sigma in (0.25, 0.5, 1.0, 2.0):
        row[f"noise{sigma}"] = round(content_noise_accuracy(clf, test_data[:200], sigma), 4)
    print(json.dumps(row), flush=True)
    rows.append(row)
