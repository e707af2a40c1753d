"""Optimizer and fit-loop contracts: AdamW updates, word dropout statistics,
early stopping semantics, determinism, and the generative smoke training."""

import numpy as np
import pytest

from genclass import autograd as ag
from genclass.bayes import LabeledTokens, UniformPrior, train_discriminative
from genclass.data import (
    CorpusSpec,
    build_vocabulary,
    generate_corpus,
    split_hypothesis_only,
)
from genclass.seqmodel import ClsConfig, SeqConfig, SeqModel
from genclass.training import (
    AdamState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    finetune_config,
    fit,
    word_dropout,
    zero_grads,
)
from genclass.vocab import UNK

SMALL_SEQ = SeqConfig(d_model=32, n_heads=2, n_enc_layers=1, n_dec_layers=1,
                      d_ff=64, max_len=32)
SMALL_CLS = ClsConfig(d_model=32, n_heads=2, n_layers=1, d_ff=64, max_len=32)


# ---------------------------------------------------------------------------
# adam


def test_adam_zero_grad_zero_decay_is_identity():
    p = ag.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    params = {"w": p}
    state = AdamState(params)
    before = p.data.copy()
    adam_step(params, state, lr=0.1, weight_decay=0.0)
    assert np.array_equal(p.data, before)


def test_adam_step_descends_quadratic():
    p = ag.Tensor(np.array([1.0]), requires_grad=True)
    params = {"w": p}
    state = AdamState(params)
    loss = ag.multiply(p, p)
    loss.backward()
    adam_step(params, state, lr=0.05)
    assert 0 < float(p.data[0]) < 1.0


def test_adam_converges_on_2d_quadratic():
    # f(w) = 0.5 * (w - a)^T diag(c) (w - a), minimum at a
    a = np.array([1.5, -0.75])
    c = np.array([3.0, 0.5])
    p = ag.Tensor(np.zeros(2), requires_grad=True)
    params = {"w": p}
    state = AdamState(params)
    for _ in range(200):
        p.grad = c * (p.data - a)
        adam_step(params, state, lr=0.05)
        p.zero_grad()
    assert np.abs(p.data - a).max() < 1e-3


def test_adam_weight_decay_shrinks_norm_on_zero_grads():
    p = ag.Tensor(np.array([2.0, -4.0]), requires_grad=True)
    params = {"w": p}
    state = AdamState(params)
    before = np.linalg.norm(p.data)
    adam_step(params, state, lr=0.1, weight_decay=0.1)
    assert np.linalg.norm(p.data) < before


def test_adam_nan_gradient_names_parameter():
    p = ag.Tensor(np.ones(2), requires_grad=True)
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(TrainingDiverged, match="'w_bad'"):
        adam_step({"w_bad": p}, AdamState({"w_bad": p}), lr=0.1)


# ---------------------------------------------------------------------------
# word dropout


@pytest.fixture(scope="module")
def corpus_and_vocab():
    corpus = generate_corpus(CorpusSpec(entities=8, attr_types=2,
                                        values_per_type=3, per_label=170, seed=5))
    return corpus, build_vocabulary(corpus)


def test_word_dropout_identity_at_zero(corpus_and_vocab):
    _, vocab = corpus_and_vocab
    toks = ("e1", "has", "color", "red")
    rng = np.random.default_rng(0)
    assert word_dropout(toks, 0.0, rng, vocab) == toks


def test_word_dropout_all_at_one(corpus_and_vocab):
    _, vocab = corpus_and_vocab
    toks = ("e1", "has", "color", "red", "SEP", "BIAS-ENT")
    out = word_dropout(toks, 1.0, np.random.default_rng(0), vocab)
    # natural tokens all become UNK; SEP and bias tokens are reserved
    assert out == (UNK, UNK, UNK, UNK, "SEP", "BIAS-ENT")


def test_word_dropout_rate(corpus_and_vocab):
    _, vocab = corpus_and_vocab
    toks = tuple(["red"] * 10_000)
    out = word_dropout(toks, 0.1, np.random.default_rng(3), vocab)
    frac = sum(t == UNK for t in out) / len(out)
    assert abs(frac - 0.1) < 0.01


# ---------------------------------------------------------------------------
# fit loop


def generative_pairs(corpus):
    return [(split_hypothesis_only(ex), ex.label) for ex in corpus]


def small_train_config(**kw):
    base = dict(learning_rate=3e-4, max_epochs=3, batch_size=64, patience=3,
                seed=1, objective="generative-nll")
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def smoke_run(corpus_and_vocab):
    corpus, vocab = corpus_and_vocab
    train, val = generative_pairs(corpus[:440]), generative_pairs(corpus[440:500])
    model = SeqModel(vocab, SMALL_SEQ, seed=0)
    log = fit(model, train, val, small_train_config())
    return model, log, corpus, vocab


@pytest.mark.slow
def test_smoke_training_reduces_loss(smoke_run):
    _, log, _, _ = smoke_run
    assert log.train_losses[-1] < 0.7 * log.train_losses[0]


@pytest.mark.slow
def test_trained_model_is_label_sensitive(smoke_run):
    model, _, corpus, _ = smoke_run
    heldout = corpus[500:560]
    wins = 0
    for ex in heldout:
        s = split_hypothesis_only(ex)
        gold = model.score(s.b, ex.label, s.r)
        others = [model.score(s.b, y, s.r) for y in range(3) if y != ex.label]
        wins += gold > max(others)
    assert wins > len(heldout) / 2


@pytest.mark.slow
def test_fit_is_deterministic(corpus_and_vocab):
    corpus, vocab = corpus_and_vocab
    train = generative_pairs(corpus[:80])
    val = generative_pairs(corpus[80:110])
    cfg = small_train_config(max_epochs=2, seed=7)
    models, logs = [], []
    for _ in range(2):
        m = SeqModel(vocab, SMALL_SEQ, seed=7)
        logs.append(fit(m, train, val, cfg))
        models.append(m)
    assert logs[0] == logs[1]
    for a, b in zip(models[0].parameters().values(),
                    models[1].parameters().values()):
        assert np.array_equal(a.data, b.data)


def test_early_stopping_patience_zero():
    # hand-driven: metric goes up then down; patience 0 stops at the first
    # non-improving epoch and keeps the best checkpoint
    class Stub:
        def __init__(self):
            self.x = ag.Tensor(np.zeros(1), requires_grad=True)

        def parameters(self):
            return {"x": self.x}

        def predict(self, seqs):
            return np.zeros(len(seqs), dtype=int)

        def loss(self, ids, labels):
            return ag.multiply(self.x, self.x)

        @property
        def vocab(self):
            from genclass.vocab import Vocabulary, label_token
            return Vocabulary(
                tokens=["<pad>", "<bos>", "<eos>", "<unk>", "MASK"]
                + [label_token(k) for k in range(3)], n_labels=3)

    stub = Stub()
    items = [LabeledTokens(("<unk>",), 0)] * 4
    # validation accuracy is constant -> epoch 0 improves (from -inf), epoch 1
    # does not -> with patience=0 training stops after epoch 1
    cfg = TrainConfig(max_epochs=10, patience=0, batch_size=2, seed=0,
                      objective="discriminative-ce")
    log = fit(stub, items, items, cfg)
    assert len(log.val_metrics) == 2
    assert log.best_epoch == 0


def test_best_checkpoint_is_running_max(corpus_and_vocab, tmp_path):
    corpus, vocab = corpus_and_vocab
    items = [LabeledTokens(ex.hypothesis, ex.label) for ex in corpus[:120]]
    val = [LabeledTokens(ex.hypothesis, ex.label) for ex in corpus[120:160]]
    cfg = TrainConfig(max_epochs=4, patience=4, batch_size=32, seed=2,
                      objective="discriminative-ce")
    clf, log = (None, None)
    from genclass.seqmodel import TextClassifier
    clf = TextClassifier(vocab, 3, SMALL_CLS, seed=2)
    log = fit(clf, items, val, cfg, checkpoint_path=tmp_path / "best.ckpt")
    assert log.val_metrics[log.best_epoch] == max(log.val_metrics)
    assert (tmp_path / "best.ckpt").exists()


def test_fit_rejects_bad_inputs(corpus_and_vocab):
    corpus, vocab = corpus_and_vocab
    model = SeqModel(vocab, SMALL_SEQ, seed=0)
    with pytest.raises(ValueError, match="empty"):
        fit(model, [], [], small_train_config())
    with pytest.raises(ValueError, match="prior"):
        fit(model, generative_pairs(corpus[:4]), generative_pairs(corpus[:4]),
            small_train_config(objective="finetune-bayes"))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(patience=-1)
    with pytest.raises(ValueError):
        TrainConfig(word_dropout=1.5)
    with pytest.raises(ValueError):
        TrainConfig(objective="nonsense")


def test_finetune_config_defaults():
    base = TrainConfig(learning_rate=3e-4)
    ft = finetune_config(base)
    assert ft.learning_rate == pytest.approx(1.5e-4)
    assert ft.max_epochs == 5
    assert ft.word_dropout == 0.1
    assert ft.weight_decay == 0.1
    assert ft.objective == "finetune-bayes"


@pytest.mark.slow
def test_discriminative_training_separable_and_deterministic(corpus_and_vocab):
    corpus, vocab = corpus_and_vocab
    # trivially separable: the hypothesis's first token encodes the label
    toy = []
    from genclass.data import Example
    for i in range(120):
        label = i % 3
        toy.append(Example(id=f"s{i}", premise=("p",),
                           hypothesis=(("red", "blue", "green")[label], "has"),
                           label=label))
    voc = build_vocabulary(toy)
    cfg = TrainConfig(learning_rate=1e-3, max_epochs=8, batch_size=32,
                      patience=8, seed=3, objective="discriminative-ce")
    clf1, _ = train_discriminative(toy, toy, voc, SMALL_CLS, cfg)
    preds = clf1.predict([ex.premise + ("SEP",) + ex.hypothesis for ex in toy])
    gold = np.array([ex.label for ex in toy])
    assert (preds == gold).mean() == 1.0
    clf2, _ = train_discriminative(toy, toy, voc, SMALL_CLS, cfg)
    for a, b in zip(clf1.parameters().values(), clf2.parameters().values()):
        assert np.array_equal(a.data, b.data)


@pytest.mark.slow
def test_label_shuffled_data_trains_to_chance(corpus_and_vocab):
    corpus, vocab = corpus_and_vocab
    rng = np.random.default_rng(0)
    shuffled = []
    from genclass.data import Example
    for ex in corpus[:300]:
        shuffled.append(Example(id=ex.id, premise=ex.premise,
                                hypothesis=ex.hypothesis,
                                label=int(rng.integers(3))))
    heldout = corpus[300:420]
    cfg = TrainConfig(learning_rate=3e-4, max_epochs=3, batch_size=64,
                      patience=3, seed=4, objective="discriminative-ce")
    clf, _ = train_discriminative(shuffled, shuffled[:60], vocab, SMALL_CLS, cfg)
    from genclass.bayes import joined_input
    preds = clf.predict([joined_input(ex) for ex in heldout])
    gold = np.array([ex.label for ex in heldout])
    acc = (preds == gold).mean()
    assert abs(acc - 1 / 3) < 0.15
