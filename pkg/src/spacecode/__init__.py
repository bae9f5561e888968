"""Identifier-aware adversarial training for small code classifiers.

The package trains a transformer defect classifier under tied,
per-identifier embedding perturbations, attacks it with black-box
renaming searches, and measures the robustness / accuracy trade-off on a
synthetic corpus whose labels are provably renaming-invariant.
"""

__version__ = "0.1.0"

from .alignment import IdentifierEntry, IdentifierMap, build_identifier_map
from .bpe import BpeModel, SubwordSeq, encode, train_bpe
from .estimator import SpaceClassifier
from .lexer import MINILANG, LanguageProfile, LexToken, lex
from .minilang import (GenConfig, LabeledSample, Program, generate,
                       generate_corpus, load_jsonl, oracle_label, save_jsonl)
from .model import EncoderConfig, EncoderParams, forward, init_params, loss
from .tensor import Tensor, backward, grad_check, no_grad, primitive_forward
from .training import (EncodedSample, PerturbationSet, TrainConfig, ascent_step,
                       project, scatter, train)
from .transforms import (TransformSpec, build_adv_testset, insert_dead_code,
                         rename_identifiers, rewrite_identities)
from .attacks import (AttackConfig, AttackReport, candidate_names, evaluate_asr,
                      genetic_attack, greedy_attack, mhm_attack)
