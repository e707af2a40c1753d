"""Optimization shared by every trainable component: AdamW, word dropout,
and a deterministic fit loop with accuracy-based early stopping.

Training is a pure function of (data, config, seed): parameter init comes
from the component's own seed, shuffle order and word dropout derive from the
config seed, so identical configs give identical TrainLogs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autograd as ag
from .vocab import UNK, Vocabulary

OBJECTIVES = ("generative-nll", "discriminative-ce", "finetune-bayes")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    max_epochs: int = 30
    batch_size: int = 64
    patience: int = 3
    word_dropout: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    objective: str = "generative-nll"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.patience < 0 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("patience must be >= 0, epochs and batch size >= 1")
        if not 0.0 <= self.word_dropout <= 1.0:
            raise ValueError("word dropout probability must be in [0, 1]")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}; "
                             f"expected one of {OBJECTIVES}")


def finetune_config(base: TrainConfig) -> TrainConfig:
    """Fine-tuning defaults: half the pretraining rate, 5 epochs, word
    dropout 0.1 and weight decay 0.1."""
    return replace(base, learning_rate=base.learning_rate * 0.5, max_epochs=5,
                   word_dropout=0.1, weight_decay=0.1,
                   objective="finetune-bayes")


@dataclass
class TrainLog:
    train_losses: list[float] = field(default_factory=list)
    val_metrics: list[float] = field(default_factory=list)
    best_epoch: int = -1
    checkpoint_path: str | None = None


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, params: dict[str, ag.Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0


def adam_step(params: dict[str, ag.Tensor], state: AdamState, lr: float,
              weight_decay: float = 0.0, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place AdamW update from each tensor's accumulated grad (a missing
    grad counts as zero). Decay is decoupled: applied straight to the weights,
    scaled by lr."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if np.isnan(g).any():
            raise TrainingDiverged(f"NaN gradient in parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data -= lr * (update + weight_decay * p.data)


def zero_grads(params: dict[str, ag.Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


def word_dropout(tokens: Sequence[str], prob: float, rng: np.random.Generator,
                 vocabulary: Vocabulary) -> tuple[str, ...]:
    """Replace each non-reserved token by UNK with the given probability."""
    if not 0.0 <= prob <= 1.0:
        raise ValueError("word dropout probability must be in [0, 1]")
    if prob == 0.0:
        return tuple(tokens)
    out = []
    for t in tokens:
        token_id = vocabulary.token_to_id.get(t, vocabulary.unk_id)
        if not vocabulary.is_reserved_id(token_id) and rng.random() < prob:
            out.append(UNK)
        else:
            out.append(t)
    return tuple(out)


# ---------------------------------------------------------------------------
# the fit loop


def _batch_loss(component, batch, cfg: TrainConfig, prior, rng) -> ag.Tensor:
    if cfg.objective == "generative-nll":
        items = [component.condition(s.b, y, s.r) for s, y in batch]
        return component.nll_loss(items)
    if cfg.objective == "finetune-bayes":
        from .bayes import finetune_loss
        if cfg.word_dropout > 0:
            batch = [(replace_b(s, word_dropout(s.b, cfg.word_dropout, rng,
                                                component.vocab)), y)
                     for s, y in batch]
        return finetune_loss(component, prior, batch)
    # discriminative-ce
    ids = [component.vocab.encode(it.tokens) for it in batch]
    return component.loss(ids, [it.label for it in batch])


def replace_b(split, new_b):
    from dataclasses import replace as dc_replace
    return dc_replace(split, b=tuple(new_b))


def _val_accuracy(component, val_data, cfg: TrainConfig, prior) -> float:
    if cfg.objective == "discriminative-ce":
        preds = component.predict([it.tokens for it in val_data])
        gold = np.asarray([it.label for it in val_data])
    else:
        from .bayes import UniformPrior, predict_many
        inference_prior = prior if cfg.objective == "finetune-bayes" \
            else UniformPrior(component.vocab.n_labels)
        preds = predict_many(component, inference_prior,
                             [s for s, _ in val_data])
        gold = np.asarray([y for _, y in val_data])
    return float((preds == gold).mean())


def fit(component, train_data, val_data, cfg: TrainConfig,
        prior=None, checkpoint_path: str | None = None) -> TrainLog:
    """Train until max_epochs or until validation accuracy fails to improve
    for more than `patience` epochs; the best-epoch parameters are restored
    into the component (and saved when a checkpoint path is given)."""
    if not train_data:
        raise ValueError("empty training set")
    if cfg.objective == "finetune-bayes" and prior is None:
        raise ValueError("fine-tuning requires a prior")
    params = component.parameters()
    state = AdamState(params)
    shuffle_rng = np.random.default_rng(cfg.seed)
    log = TrainLog()
    best_metric = -math.inf
    best_params = None
    since_best = 0

    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(len(train_data))
        epoch_loss, n_batches = 0.0, 0
        for bi, lo in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_data[i] for i in order[lo: lo + cfg.batch_size]]
            drop_rng = np.random.default_rng([cfg.seed, epoch, bi])
            loss = _batch_loss(component, batch, cfg, prior, drop_rng)
            value = loss.item()
            if math.isnan(value):
                raise TrainingDiverged(f"loss became NaN at epoch {epoch}")
            zero_grads(params)
            loss.backward()
            adam_step(params, state, cfg.learning_rate, cfg.weight_decay)
            epoch_loss += value
            n_batches += 1
        log.train_losses.append(epoch_loss / n_batches)

        metric = _val_accuracy(component, val_data, cfg, prior)
        log.val_metrics.append(metric)
        if metric > best_metric:
            best_metric = metric
            best_params = {k: p.data.copy() for k, p in params.items()}
            log.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.patience:
                break

    if best_params is not None:
        for k, p in params.items():
            p.data = best_params[k]
    zero_grads(params)
    if checkpoint_path is not None:
        from .checkpoint import save_model
        save_model(checkpoint_path, component)
        log.checkpoint_path = str(checkpoint_path)
    return log
