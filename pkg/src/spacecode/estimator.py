"""Scikit-learn style facade over the tokenizer, encoder and trainer.

`SpaceClassifier` is a drop-in estimator: `fit(X, y)` on raw code strings,
`predict` / `predict_proba` / `score`, plus `get_params` / `set_params` so
it composes with pipelines and model selection. It also exposes the
low-level hooks (`analyze`, `predict_proba_ids`) that the attack harness
drives.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .alignment import IdentifierMap, build_identifier_map
from .bpe import BpeModel, encode, train_bpe
from .lexer import MINILANG, LanguageProfile, lex
from .minilang import LabeledSample, Program
from .model import EncoderConfig, EncoderParams, pad_batch, predict_proba_batch
from .seeding import derive_rng
from .training import EncodedSample, TrainConfig, evaluate_accuracy, train
from .transforms import expand_for_augmentation


def _check_corpus(X, y=None):
    if not isinstance(X, (list, tuple)) or not X:
        raise ValueError("X must be a nonempty list of source strings")
    if not all(isinstance(item, str) for item in X):
        raise ValueError("X must contain source code strings")
    if y is None:
        return None
    labels = np.asarray(y)
    if labels.shape != (len(X),):
        raise ValueError(f"y has shape {labels.shape}, expected ({len(X)},)")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("y must hold integer class labels")
    return labels


class SpaceClassifier(ClassifierMixin, BaseEstimator):
    """Code defect classifier with identifier-aware adversarial training.

    Parameters mirror the training regimes: `mode` picks the regime,
    `epsilon` / `eta` / `steps` drive the inner perturbation loop, the rest
    size the tokenizer and encoder.
    """

    def __init__(self, mode="space", epsilon=1.0, eta=0.35, steps=3,
                 learning_rate=1.5e-3, epochs=5, batch_size=32, seed=0,
                 num_merges=400, max_len=256, embed_dim=64, num_layers=2,
                 num_heads=4, ff_dim=256, dropout=0.1, dev_fraction=0.1,
                 optimizer="adam", position_jitter=True, profile=None):
        self.mode = mode
        self.epsilon = epsilon
        self.eta = eta
        self.steps = steps
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.num_merges = num_merges
        self.max_len = max_len
        self.embed_dim = embed_dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.ff_dim = ff_dim
        self.dropout = dropout
        self.dev_fraction = dev_fraction
        self.optimizer = optimizer
        self.position_jitter = position_jitter
        self.profile = profile

    # -- the attack-facing protocol -----------------------------------------

    @property
    def unknown_id(self) -> int:
        return self.bpe_.unknown_id

    def analyze(self, source: str):
        """Tokenize one source string: (SubwordSeq, IdentifierMap)."""
        profile = self.profile_
        tokens = lex(source, profile)
        seq = encode(self.bpe_, tokens, self.max_len)
        return seq, build_identifier_map(seq, tokens, profile)

    def predict_proba_ids(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int32)
        return predict_proba_batch(self.params_, ids[None, :],
                                   np.array([ids.shape[0]]))[0]

    # -- sklearn surface -----------------------------------------------------

    def encode_sample(self, sample: LabeledSample) -> EncodedSample:
        seq, idmap = self.analyze(sample.program.source)
        return EncodedSample(seq.ids, idmap, int(sample.label), sample.sample_id)

    def _encode_sources(self, X, y) -> list:
        out = []
        for i, (source, label) in enumerate(zip(X, y)):
            seq, idmap = self.analyze(source)
            out.append(EncodedSample(seq.ids, idmap, int(label), i))
        return out

    def fit(self, X, y, dev=None):
        """Train the tokenizer and encoder on code strings X with labels y.

        `dev` optionally supplies a held-out (X_dev, y_dev) pair; otherwise
        `dev_fraction` of the training data is split off deterministically.
        """
        labels = _check_corpus(X, y)
        self.profile_ = self.profile or MINILANG
        self.classes_ = np.unique(labels)
        self.bpe_ = train_bpe(list(X), self.num_merges, self.profile_)

        self.encoder_config_ = EncoderConfig(
            vocab_size=self.bpe_.vocab_size, d=self.embed_dim,
            layers=self.num_layers, heads=self.num_heads, d_ff=self.ff_dim,
            max_len=self.max_len, classes=max(2, len(self.classes_)),
            dropout=self.dropout)
        self.train_config_ = TrainConfig(
            mode=self.mode, epsilon=self.epsilon, eta=self.eta, steps=self.steps,
            alpha=self.learning_rate, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed, optimizer=self.optimizer,
            position_jitter=self.position_jitter)

        encoded = self._encode_sources(list(X), labels)
        if dev is not None:
            dev_x, dev_y = dev
            dev_set = self._encode_sources(list(dev_x), _check_corpus(dev_x, dev_y))
            train_set = encoded
        else:
            order = derive_rng(self.seed, "dev-split").permutation(len(encoded))
            n_dev = max(1, int(round(len(encoded) * self.dev_fraction)))
            dev_set = [encoded[i] for i in order[:n_dev]]
            train_set = [encoded[i] for i in order[n_dev:]]

        if self.mode == "augment":
            samples = [LabeledSample(Program.from_source(x, self.profile_), int(l), None, i)
                       for i, (x, l) in enumerate(zip(X, labels))]
            keep = {s.sample_id for s in train_set}
            originals = [s for s in samples if s.sample_id in keep]
            variant_sets = expand_for_augmentation(originals, self.steps, self.seed,
                                                   self.profile_)
            by_id = {vs[0].sample_id: vs for vs in variant_sets}
            for enc in train_set:
                enc.variants = [self.encode_sample(v) for v in by_id[enc.sample_id]]

        self.params_, self.history_ = train(self.train_config_, train_set, dev_set,
                                            self.encoder_config_)
        return self

    def predict_proba(self, X) -> np.ndarray:
        _check_corpus(X)
        probs = []
        for start in range(0, len(X), 64):
            chunk = X[start: start + 64]
            seqs = [self.analyze(source)[0].ids for source in chunk]
            ids, lengths = pad_batch(seqs)
            probs.append(predict_proba_batch(self.params_, ids, lengths))
        return np.concatenate(probs, axis=0)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=-1)

    def predict_proba_one(self, source: str) -> np.ndarray:
        seq, _ = self.analyze(source)
        return self.predict_proba_ids(seq.ids)

    def accuracy_on(self, samples: list) -> float:
        """Accuracy over LabeledSamples (convenience for report files)."""
        encoded = [self.encode_sample(s) for s in samples]
        return evaluate_accuracy(self.params_, encoded)

    # -- persistence ----------------------------------------------------------

    def save(self, path):
        from .checkpoint import save_checkpoint
        save_checkpoint(self.params_, self.encoder_config_, self.train_config_,
                        self.bpe_, self.profile_, path)

    @classmethod
    def from_checkpoint(cls, path) -> "SpaceClassifier":
        from .checkpoint import load_checkpoint
        loaded = load_checkpoint(path)
        cfg = loaded.train_config
        enc = loaded.encoder_config
        clf = cls(mode=cfg.mode, epsilon=cfg.epsilon, eta=cfg.eta, steps=cfg.steps,
                  learning_rate=cfg.alpha, epochs=cfg.epochs,
                  batch_size=cfg.batch_size, seed=cfg.seed, max_len=enc.max_len,
                  embed_dim=enc.d, num_layers=enc.layers, num_heads=enc.heads,
                  ff_dim=enc.d_ff, dropout=enc.dropout)
        clf.profile_ = loaded.profile
        clf.bpe_ = loaded.bpe
        clf.encoder_config_ = enc
        clf.train_config_ = cfg
        clf.params_ = loaded.params
        clf.classes_ = np.arange(enc.classes)
        clf.history_ = []
        return clf
