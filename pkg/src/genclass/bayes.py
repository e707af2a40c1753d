"""Classification via Bayes' rule with pluggable priors, the bias-only and
discriminative baselines, and the discriminative fine-tuning objective.

All probability arithmetic is in log space; posteriors are normalized with
log-sum-exp. The implied-bias op marginalizes the remainder exhaustively so
the uniform-prior elimination theorem can be checked to 1e-6 rather than
assumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .data import LABELS, BiasSplit, Example
from .seqmodel import (
    ClsConfig,
    SeqModel,
    TextClassifier,
    enumerate_terminated_remainders,
    remainder_log_probs,
)
from .vocab import SEP, Vocabulary


def joined_input(ex: Example) -> tuple[str, ...]:
    """Full input X for the discriminative baseline: premise SEP hypothesis."""
    return ex.premise + (SEP,) + ex.hypothesis


# ---------------------------------------------------------------------------
# priors


class UniformPrior:
    """p(y | B) = 1/|Y| exactly, for any B."""

    kind = "uniform"
    frozen = True

    def __init__(self, n_labels: int = len(LABELS)):
        self.n_labels = n_labels

    def probs(self, b_tokens: Sequence[str]) -> np.ndarray:
        return np.full(self.n_labels, 1.0 / self.n_labels)

    def log_probs_many(self, b_seqs: Sequence[Sequence[str]]) -> np.ndarray:
        return np.full((len(b_seqs), self.n_labels), -np.log(self.n_labels))


class EmpiricalPrior:
    """Label frequencies of a dataset, constant in B."""

    kind = "empirical"
    frozen = True

    def __init__(self, frequencies: Sequence[float]):
        freq = np.asarray(frequencies, dtype=np.float64)
        if freq.ndim != 1 or abs(freq.sum() - 1.0) > 1e-9:
            raise ValueError("empirical prior frequencies must sum to 1")
        self.frequencies = freq
        self.n_labels = len(freq)

    @classmethod
    def from_dataset(cls, dataset: Sequence[Example],
                     n_labels: int = len(LABELS)) -> "EmpiricalPrior":
        counts = np.bincount([ex.label for ex in dataset], minlength=n_labels)
        return cls(counts / counts.sum())

    def probs(self, b_tokens: Sequence[str]) -> np.ndarray:
        return self.frequencies.copy()

    def log_probs_many(self, b_seqs: Sequence[Sequence[str]]) -> np.ndarray:
        self._check_positive()
        return np.broadcast_to(np.log(self.frequencies),
                               (len(b_seqs), self.n_labels)).copy()

    def _check_positive(self):
        if np.any(self.frequencies <= 0):
            raise ValueError("prior assigns zero probability to a label; "
                             "log-space inference is undefined")


class LearnedPrior:
    """A frozen bias-only classifier p(y | B)."""

    kind = "learned"

    def __init__(self, classifier: TextClassifier, frozen: bool = True):
        self.classifier = classifier
        self.frozen = frozen
        self.n_labels = classifier.n_labels

    def probs(self, b_tokens: Sequence[str]) -> np.ndarray:
        return self.classifier.predict_proba([b_tokens])[0]

    def log_probs_many(self, b_seqs: Sequence[Sequence[str]]) -> np.ndarray:
        with ag.no_grad():
            ids = [self.classifier.vocab.encode(toks) for toks in b_seqs]
            z = self.classifier.logits(ids).data
        shifted = z - z.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


Prior = UniformPrior | EmpiricalPrior | LearnedPrior


def _log_prior_rows(prior: Prior, b_seqs: Sequence[Sequence[str]]) -> np.ndarray:
    rows = prior.log_probs_many(b_seqs)
    if not np.all(np.isfinite(rows)):
        raise ValueError("prior assigns zero probability to a label; "
                         "log-space inference is undefined")
    return rows


# ---------------------------------------------------------------------------
# posterior and prediction


def _posterior_from_log_scores(log_scores: np.ndarray,
                               log_prior: np.ndarray) -> np.ndarray:
    """softmax(log p(R|y,B) + log p(y|B)) along the last axis."""
    z = log_scores + log_prior
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def label_log_likelihoods(model: SeqModel, splits: Sequence[BiasSplit],
                          chunk: int = 256) -> np.ndarray:
    """log p(R | y, B) for every split under every label; (N, Y)."""
    n_labels = model.vocab.n_labels
    items = [model.condition(s.b, y, s.r) for s in splits for y in range(n_labels)]
    out = np.empty(len(items))
    with ag.no_grad():
        for lo in range(0, len(items), chunk):
            part = items[lo: lo + chunk]
            out[lo: lo + len(part)] = model.sequence_log_probs(part).data
    return out.reshape(len(splits), n_labels)


def posteriors(model: SeqModel, prior: Prior,
               splits: Sequence[BiasSplit]) -> np.ndarray:
    """Bayes posteriors p(y | B, R) for a batch of splits; rows sum to 1."""
    log_lik = label_log_likelihoods(model, splits)
    log_prior = _log_prior_rows(prior, [s.b for s in splits])
    return _posterior_from_log_scores(log_lik, log_prior)


def posterior(model: SeqModel, prior: Prior, split: BiasSplit) -> np.ndarray:
    return posteriors(model, prior, [split])[0]


def predict_many(model: SeqModel, prior: Prior,
                 splits: Sequence[BiasSplit]) -> np.ndarray:
    """Argmax labels; ties break toward the lowest label index."""
    return np.argmax(posteriors(model, prior, splits), axis=1)


def predict(model: SeqModel, prior: Prior, split: BiasSplit) -> int:
    return int(predict_many(model, prior, [split])[0])


# ---------------------------------------------------------------------------
# implied bias (exhaustive marginalization of R)


def implied_bias(model: SeqModel, prior: Prior, b_tokens: Sequence[str],
                 max_r_len: int | None = None) -> np.ndarray:
    """The label distribution the model can extract from B alone,
    sum_R p(y | R, B) p(R | B), enumerated over every terminated remainder
    up to the length bound. For a generative classifier this must equal the
    prior, which is exactly what the theorem tests assert."""
    max_r = model.max_r_len if max_r_len is None else min(max_r_len, model.max_r_len)
    remainders = enumerate_terminated_remainders(model.vocab, max_r)
    n_labels = model.vocab.n_labels
    log_lik = np.stack([
        remainder_log_probs(model, b_tokens, y, remainders)
        for y in range(n_labels)
    ])  # (Y, R)
    log_prior = _log_prior_rows(prior, [b_tokens])[0]
    log_joint = log_lik + log_prior[:, None]
    m = log_joint.max(axis=0, keepdims=True)
    log_p_r = np.log(np.exp(log_joint - m).sum(axis=0, keepdims=True)) + m  # (1, R)
    post = np.exp(log_joint - log_p_r)            # p(y | R, B) per remainder
    return post @ np.exp(log_p_r[0])              # sum_R p(y|R,B) p(R|B)


# ---------------------------------------------------------------------------
# discriminative fine-tuning (label cross-entropy through the posterior)


def _finetune_loss_from_scores(scores: ag.Tensor, log_prior: np.ndarray,
                               gold: np.ndarray) -> ag.Tensor:
    """Mean label NLL of softmax(scores + log_prior); scores is (N, Y) and
    carries the gradient, the prior rows are frozen constants."""
    logits = ag.add(scores, ag.Tensor(log_prior))
    return ag.multiply(ag.cross_entropy(logits, gold), 1.0 / len(gold))


def finetune_loss(model: SeqModel, prior: Prior,
                  batch: Sequence[tuple[BiasSplit, int]]) -> ag.Tensor:
    """Differentiable label cross-entropy through the Bayes posterior. The
    prior must be frozen: only the generative parameters receive gradients."""
    if not batch:
        raise ValueError("empty batch")
    if not prior.frozen:
        raise ValueError("fine-tuning requires a frozen prior")
    n_labels = model.vocab.n_labels
    items = [model.condition(s.b, y, s.r) for s, _ in batch for y in range(n_labels)]
    scores = ag.reshape(model.sequence_log_probs(items), (len(batch), n_labels))
    log_prior = _log_prior_rows(prior, [s.b for s, _ in batch])
    gold = np.asarray([y for _, y in batch], dtype=np.intp)
    return _finetune_loss_from_scores(scores, log_prior, gold)


# ---------------------------------------------------------------------------
# baseline classifier training


@dataclass
class LabeledTokens:
    """Classifier training view: a token sequence and its gold label."""

    tokens: tuple[str, ...]
    label: int


def train_bias_only(train: Sequence[Example], val: Sequence[Example],
                    splitter, vocabulary: Vocabulary,
                    config: ClsConfig | None = None,
                    train_config=None) -> tuple[TextClassifier, object]:
    """Train p(y | B) on (B_i, y_i) pairs only; the result is meant to be
    frozen (wrap it in LearnedPrior for fine-tuning)."""
    items = [LabeledTokens(splitter(ex).b, ex.label) for ex in train]
    val_items = [LabeledTokens(splitter(ex).b, ex.label) for ex in val]
    return _train_classifier(items, val_items, vocabulary, config, train_config)


def train_discriminative(train: Sequence[Example], val: Sequence[Example],
                         vocabulary: Vocabulary,
                         config: ClsConfig | None = None,
                         train_config=None) -> tuple[TextClassifier, object]:
    """Standard supervised baseline on the full input X."""
    items = [LabeledTokens(joined_input(ex), ex.label) for ex in train]
    val_items = [LabeledTokens(joined_input(ex), ex.label) for ex in val]
    return _train_classifier(items, val_items, vocabulary, config, train_config)


def _train_classifier(items, val_items, vocabulary, config, train_config):
    from .training import TrainConfig, fit  # deferred: training drives all objectives

    cfg = train_config or TrainConfig(objective="discriminative-ce")
    if cfg.objective != "discriminative-ce":
        raise ValueError("classifier training requires the discriminative-ce objective")
    model = TextClassifier(vocabulary, vocabulary.n_labels,
                           config or ClsConfig(), seed=cfg.seed)
    log = fit(model, items, val_items, cfg)
    return model, log
