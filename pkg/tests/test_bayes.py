"""Bayes-rule inference contracts: posterior normalization against a
brute-force enumerated joint table, the prior-elimination theorem, argmax
tie-breaking, and the fine-tuning objective's gradients."""

import math

import numpy as np
import pytest

from genclass import autograd as ag
from genclass.bayes import (
    EmpiricalPrior,
    LearnedPrior,
    UniformPrior,
    _finetune_loss_from_scores,
    _posterior_from_log_scores,
    finetune_loss,
    implied_bias,
    label_log_likelihoods,
    posterior,
    predict,
    predict_many,
)
from genclass.data import BiasSplit
from genclass.seqmodel import (
    ClsConfig,
    SeqConfig,
    SeqModel,
    TextClassifier,
    enumerate_terminated_remainders,
    remainder_log_probs,
)
from genclass.vocab import BOS, EOS, MASK, PAD, UNK, Vocabulary, label_token

MICRO_CFG = SeqConfig(d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1,
                      d_ff=16, max_len=5)


def tiny_vocab(content=()):
    tokens = [PAD, BOS, EOS, UNK, MASK] + [label_token(k) for k in range(3)]
    return Vocabulary(tokens=tokens + list(content), n_labels=3)


def tiny_split(b, r):
    return BiasSplit(b=tuple(b), r=tuple(r), split_name="hypothesis-only",
                     example_id="t0")


@pytest.fixture(scope="module")
def micro_model():
    return SeqModel(tiny_vocab(("a", "b")), MICRO_CFG, seed=21)


# ---------------------------------------------------------------------------
# posterior math


def test_posterior_from_likelihoods_uniform_prior():
    log_scores = np.log([0.2, 0.1, 0.1])
    log_prior = np.log([1 / 3, 1 / 3, 1 / 3])
    post = _posterior_from_log_scores(log_scores, log_prior)
    assert np.allclose(post, [0.5, 0.25, 0.25], atol=1e-12)


def test_posterior_equal_likelihoods_returns_prior():
    log_scores = np.log([0.05, 0.05, 0.05])
    log_prior = np.log([0.7, 0.2, 0.1])
    post = _posterior_from_log_scores(log_scores, log_prior)
    assert np.allclose(post, [0.7, 0.2, 0.1], atol=1e-12)


def test_posterior_shift_invariance():
    rng = np.random.default_rng(5)
    log_scores = rng.normal(size=3)
    log_prior = np.log([0.5, 0.3, 0.2])
    base = _posterior_from_log_scores(log_scores, log_prior)
    shifted = _posterior_from_log_scores(log_scores + 123.456, log_prior)
    assert np.allclose(base, shifted, atol=1e-12)
    assert np.argmax(base) == np.argmax(shifted)


def test_posterior_sums_to_one(micro_model):
    split = tiny_split(["a"], ["b", "a"])
    post = posterior(micro_model, UniformPrior(), split)
    assert abs(post.sum() - 1.0) < 1e-9


def test_posterior_matches_enumerated_joint_table(micro_model):
    """Brute-force oracle: build the full joint p(R, y | B) by enumeration,
    then read the posterior for one specific R off the table."""
    m = micro_model
    prior = EmpiricalPrior([0.6, 0.3, 0.1])
    b = ["a"]
    remainders = enumerate_terminated_remainders(m.vocab, m.max_r_len)
    table = np.stack([
        np.exp(remainder_log_probs(m, b, y, remainders)) * prior.probs(b)[y]
        for y in range(3)
    ])  # (Y, R) joint table
    target = tuple(m.vocab.encode(["b", "a"]))
    col = remainders.index(target)
    oracle = table[:, col] / table[:, col].sum()
    post = posterior(m, prior, tiny_split(b, ["b", "a"]))
    assert np.abs(post - oracle).max() < 1e-9


def test_prior_zero_probability_rejected(micro_model):
    prior = EmpiricalPrior([0.5, 0.5, 0.0])
    with pytest.raises(ValueError, match="zero probability"):
        posterior(micro_model, prior, tiny_split(["a"], ["b"]))


def test_predict_argmax_and_tie_break():
    m = SeqModel(tiny_vocab(("a", "b")), MICRO_CFG, seed=2)
    m.proj.w.data[:] = 0.0
    m.proj.b.data[:] = 0.0
    # label-independent model: posterior is exactly uniform, tie -> label 0
    assert predict(m, UniformPrior(), tiny_split(["a"], ["b"])) == 0


def test_predict_uniform_never_consults_prior_values(micro_model):
    """Swapping the uniform prior for a constant equal-vector prior built
    through a different code path changes nothing."""
    splits = [tiny_split(["a"], ["b"]), tiny_split(["b", "a"], ["a"]),
              tiny_split([MASK], ["a", "b", "a"])]
    p_uni = predict_many(micro_model, UniformPrior(), splits)
    p_const = predict_many(micro_model, EmpiricalPrior([1 / 3, 1 / 3, 1 / 3]), splits)
    assert np.array_equal(p_uni, p_const)


# ---------------------------------------------------------------------------
# implied bias / theorem


def test_implied_bias_equals_prior_for_random_models():
    priors = [UniformPrior(), EmpiricalPrior([0.7, 0.2, 0.1])]
    for seed in range(3):
        m = SeqModel(tiny_vocab(), MICRO_CFG, seed=seed)
        for prior in priors:
            for b in (["a"], [UNK, MASK]):
                implied = implied_bias(m, prior, b)
                assert np.abs(implied - prior.probs(b)).max() <= 1e-6


def test_implied_bias_label_blind_model_returns_prior_exactly():
    m = SeqModel(tiny_vocab(), MICRO_CFG, seed=4)
    m.proj.w.data[:] = 0.0
    m.proj.b.data[:] = 0.0
    prior = EmpiricalPrior([0.7, 0.2, 0.1])
    implied = implied_bias(m, prior, [MASK])
    assert np.abs(implied - [0.7, 0.2, 0.1]).max() < 1e-12


def test_implied_bias_respects_enumeration_guard():
    voc = tiny_vocab(tuple(f"w{i}" for i in range(60)))
    m = SeqModel(voc, SeqConfig(d_model=8, n_heads=2, n_enc_layers=1,
                                n_dec_layers=1, d_ff=16, max_len=6), seed=0)
    with pytest.raises(ValueError, match="enumeration bound"):
        implied_bias(m, UniformPrior(), ["w0"])


# ---------------------------------------------------------------------------
# fine-tuning objective


def test_finetune_loss_equal_likelihoods_is_log3():
    m = SeqModel(tiny_vocab(("a", "b")), MICRO_CFG, seed=3)
    m.proj.w.data[:] = 0.0
    m.proj.b.data[:] = 0.0
    batch = [(tiny_split(["a"], ["b"]), 0), (tiny_split(["b"], ["a", "a"]), 2)]
    loss = finetune_loss(m, UniformPrior(), batch)
    assert abs(float(loss.data) - math.log(3.0)) < 1e-12


def test_finetune_loss_perfect_scores_approach_zero():
    gold = np.array([0, 1])
    scores = ag.Tensor(np.array([[0.0, -50.0, -50.0], [-50.0, 0.0, -50.0]]))
    log_prior = np.full((2, 3), -math.log(3.0))
    loss = _finetune_loss_from_scores(scores, log_prior, gold)
    assert float(loss.data) < 1e-9


def test_finetune_loss_label_permutation_equivariant():
    rng = np.random.default_rng(11)
    scores = rng.normal(size=(5, 3))
    log_prior = np.log(np.full((5, 3), 1 / 3))
    gold = rng.integers(3, size=5)
    base = float(_finetune_loss_from_scores(ag.Tensor(scores), log_prior, gold).data)
    perm = np.array([2, 0, 1])
    inv = np.argsort(perm)
    permuted = float(_finetune_loss_from_scores(
        ag.Tensor(scores[:, inv]), log_prior, perm[gold]).data)
    assert math.isclose(base, permuted, rel_tol=1e-12)


def test_finetune_loss_requires_frozen_prior(micro_model):
    clf = TextClassifier(micro_model.vocab, 3,
                         ClsConfig(d_model=8, n_heads=2, n_layers=1, d_ff=16,
                                   max_len=5), seed=0)
    prior = LearnedPrior(clf, frozen=False)
    with pytest.raises(ValueError, match="frozen"):
        finetune_loss(micro_model, prior, [(tiny_split(["a"], ["b"]), 0)])
    with pytest.raises(ValueError, match="empty"):
        finetune_loss(micro_model, UniformPrior(), [])


def test_finetune_loss_gradient_matches_finite_differences():
    m = SeqModel(tiny_vocab(("a",)), MICRO_CFG, seed=6)
    prior = EmpiricalPrior([0.5, 0.25, 0.25])
    batch = [(tiny_split(["a"], [UNK, "a"]), 1), (tiny_split([MASK], ["a"]), 0)]

    loss = finetune_loss(m, prior, batch)
    loss.backward()
    h = 1e-5
    for name, p in m.parameters().items():
        assert p.grad is not None
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        idx = np.random.default_rng(hash(name) % 2**32).choice(
            flat.size, size=min(4, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(finetune_loss(m, prior, batch).data)
            flat[i] = orig - h
            fm = float(finetune_loss(m, prior, batch).data)
            flat[i] = orig
            fd = (fp - fm) / (2 * h)
            denom = max(abs(fd), abs(gflat[i]), 1e-4)
            assert abs(fd - gflat[i]) / denom <= 1e-4, \
                f"{name}[{i}]: analytic {gflat[i]:.6e} vs fd {fd:.6e}"


def test_finetune_loss_gradients_reach_only_the_generative_model(micro_model):
    clf = TextClassifier(micro_model.vocab, 3,
                         ClsConfig(d_model=8, n_heads=2, n_layers=1, d_ff=16,
                                   max_len=5), seed=1)
    prior = LearnedPrior(clf)
    loss = finetune_loss(micro_model, prior, [(tiny_split(["a"], ["b"]), 0)])
    loss.backward()
    assert all(p.grad is None for p in clf.parameters().values())
    assert any(p.grad is not None for p in micro_model.parameters().values())
    for p in micro_model.parameters().values():
        p.zero_grad()


# ---------------------------------------------------------------------------
# prior contracts


def test_uniform_prior_exact():
    prior = UniformPrior(3)
    p = prior.probs(["anything"])
    assert np.all(p == 1.0 / 3.0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_empirical_prior_from_dataset():
    from genclass.data import Example
    data = [Example(id=str(i), premise=("p",), hypothesis=("h",), label=i % 3)
            for i in range(9)]
    prior = EmpiricalPrior.from_dataset(data)
    assert np.allclose(prior.probs(["b"]), [1 / 3, 1 / 3, 1 / 3])
    assert abs(prior.probs(["b"]).sum() - 1.0) <= 1e-12


def test_learned_prior_is_valid_distribution(micro_model):
    clf = TextClassifier(micro_model.vocab, 3,
                         ClsConfig(d_model=8, n_heads=2, n_layers=1, d_ff=16,
                                   max_len=5), seed=5)
    prior = LearnedPrior(clf)
    p = prior.probs(["a", MASK])
    assert p.shape == (3,) and abs(p.sum() - 1.0) <= 1e-12
    rows = prior.log_probs_many([["a"], [MASK, MASK]])
    assert np.abs(np.exp(rows).sum(axis=1) - 1.0).max() <= 1e-12
