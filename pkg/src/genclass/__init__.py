"""Generative-classifier debiasing for paired-text classification.

Train label-conditioned sequence models, classify through Bayes' rule with
controllable priors, inject and measure structural bias on a synthetic
NLI-like task, and fine-tune the generative model with a discriminative
objective.
"""

from .bayes import (
    EmpiricalPrior,
    LearnedPrior,
    UniformPrior,
    finetune_loss,
    implied_bias,
    posterior,
    posteriors,
    predict,
    predict_many,
    train_bias_only,
    train_discriminative,
)
from .checkpoint import load_model, load_model_with_meta, save_model
from .data import (
    LABELS,
    BiasSplit,
    CorpusSpec,
    Example,
    SyntheticBiasConfig,
    TokenOracle,
    build_hard_set,
    build_vocabulary,
    debias_eval_set,
    generate_corpus,
    inject_synthetic_bias,
    read_jsonl,
    split_hypothesis_only,
    split_overlap,
    split_synthetic_token,
    write_jsonl,
)
from .metrics import MetricsReport, PredictionRecord, accuracy, bleu, delta, rho, self_bleu
from .seqmodel import ClsConfig, SeqConfig, SeqModel, TextClassifier
from .training import TrainConfig, TrainLog, adam_step, fit, word_dropout
from .vocab import Vocabulary, tokenize

__version__ = "0.1.0"
