"""Label-conditioned encoder-decoder over the minimal autograd engine.

The generative model estimates p(R | y, B): the encoder reads [LABEL-y] ++ B,
the decoder is teacher-forced on [BOS] ++ R and predicts R ++ [EOS]. The
distribution is over variable-length sequences with a hard remainder-length
bound: once R has reached max length the next-token distribution is a point
mass on EOS, so the probabilities of all terminated sequences sum to one
exactly. An encoder-only classifier for the discriminative baselines lives
here too, since it shares the same blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .vocab import Vocabulary

NEG_INF = -1e9


@dataclass
class SeqConfig:
    d_model: int = 128
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    max_len: int = 64
    tie_output: bool = False

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.max_len < 3:
            raise ValueError("max_len must allow BOS + one token + EOS")


@dataclass
class ClsConfig:
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    max_len: int = 64

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.w = ag.parameter((n_in, n_out), rng)
        self.b = ag.parameter(np.zeros(n_out))

    def __call__(self, x: ag.Tensor) -> ag.Tensor:
        return ag.add(ag.matmul(x, self.w), self.b)

    def named_params(self, prefix: str):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


class LayerNorm:
    def __init__(self, n: int):
        self.gain = ag.parameter(np.ones(n))
        self.bias = ag.parameter(np.zeros(n))

    def __call__(self, x: ag.Tensor) -> ag.Tensor:
        return ag.layer_norm(x, self.gain, self.bias)

    def named_params(self, prefix: str):
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.bias", self.bias


class Attention:
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def __call__(self, q_in: ag.Tensor, kv_in: ag.Tensor, mask: np.ndarray) -> ag.Tensor:
        n, tq, d = q_in.shape
        tk = kv_in.shape[1]
        h, dh = self.n_heads, self.d_head

        def split(x, t):
            x = ag.reshape(x, (n, t, h, dh))
            return ag.transpose(x, (0, 2, 1, 3))

        q = split(self.wq(q_in), tq)
        k = split(self.wk(kv_in), tk)
        v = split(self.wv(kv_in), tk)
        att = ag.multiply(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))),
                          1.0 / math.sqrt(dh))
        att = ag.add(att, ag.Tensor(np.broadcast_to(mask, (n, h, tq, tk)).copy()))
        out = ag.matmul(ag.softmax(att), v)
        out = ag.reshape(ag.transpose(out, (0, 2, 1, 3)), (n, tq, d))
        return self.wo(out)

    def named_params(self, prefix: str):
        for name, lin in (("wq", self.wq), ("wk", self.wk),
                          ("wv", self.wv), ("wo", self.wo)):
            yield from lin.named_params(f"{prefix}.{name}")


class FeedForward:
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.lin1 = Linear(d_model, d_ff, rng)
        self.lin2 = Linear(d_ff, d_model, rng)

    def __call__(self, x: ag.Tensor) -> ag.Tensor:
        return self.lin2(ag.gelu(self.lin1(x)))

    def named_params(self, prefix: str):
        yield from self.lin1.named_params(f"{prefix}.lin1")
        yield from self.lin2.named_params(f"{prefix}.lin2")


class EncoderLayer:
    def __init__(self, cfg, rng):
        self.ln1 = LayerNorm(cfg.d_model)
        self.attn = Attention(cfg.d_model, cfg.n_heads, rng)
        self.ln2 = LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng)

    def __call__(self, x, mask):
        h = self.ln1(x)
        x = ag.add(x, self.attn(h, h, mask))
        return ag.add(x, self.ff(self.ln2(x)))

    def named_params(self, prefix):
        for name, mod in (("ln1", self.ln1), ("attn", self.attn),
                          ("ln2", self.ln2), ("ff", self.ff)):
            yield from mod.named_params(f"{prefix}.{name}")


class DecoderLayer:
    def __init__(self, cfg, rng):
        self.ln1 = LayerNorm(cfg.d_model)
        self.self_attn = Attention(cfg.d_model, cfg.n_heads, rng)
        self.ln2 = LayerNorm(cfg.d_model)
        self.cross_attn = Attention(cfg.d_model, cfg.n_heads, rng)
        self.ln3 = LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng)

    def __call__(self, x, enc_out, self_mask, cross_mask):
        h = self.ln1(x)
        x = ag.add(x, self.self_attn(h, h, self_mask))
        x = ag.add(x, self.cross_attn(self.ln2(x), enc_out, cross_mask))
        return ag.add(x, self.ff(self.ln3(x)))

    def named_params(self, prefix):
        for name, mod in (("ln1", self.ln1), ("self_attn", self.self_attn),
                          ("ln2", self.ln2), ("cross_attn", self.cross_attn),
                          ("ln3", self.ln3), ("ff", self.ff)):
            yield from mod.named_params(f"{prefix}.{name}")


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int,
              length: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences; returns (ids, mask) with mask 1.0 at real
    positions."""
    n = len(seqs)
    t = length if length is not None else max(len(s) for s in seqs)
    ids = np.full((n, t), pad_id, dtype=np.intp)
    mask = np.zeros((n, t))
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def _key_pad_mask(key_mask: np.ndarray) -> np.ndarray:
    # (N, Tk) real-token mask -> additive (N, 1, 1, Tk)
    return (1.0 - key_mask)[:, None, None, :] * NEG_INF


def _causal_mask(t: int) -> np.ndarray:
    return np.triu(np.full((t, t), NEG_INF), k=1)


@dataclass(frozen=True)
class ConditionedInput:
    """Teacher-forcing view of one (B, y, R) triple."""

    encoder_ids: tuple[int, ...]   # [LABEL-y] ++ B
    decoder_in: tuple[int, ...]    # [BOS] ++ R
    targets: tuple[int, ...]       # R ++ [EOS]


class SeqModel:
    """Encoder-decoder with learned positional embeddings; all parameters
    are float64 leaves registered by name."""

    def __init__(self, vocabulary: Vocabulary, config: SeqConfig = SeqConfig(),
                 seed: int = 0):
        self.vocab = vocabulary
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.d_model
        v = len(vocabulary)
        self.tok_emb = ag.parameter((v, d), rng, scale=0.02)
        self.pos_emb = ag.parameter((config.max_len, d), rng, scale=0.02)
        self.enc_layers = [EncoderLayer(config, rng) for _ in range(config.n_enc_layers)]
        self.dec_layers = [DecoderLayer(config, rng) for _ in range(config.n_dec_layers)]
        self.enc_ln = LayerNorm(d)
        self.dec_ln = LayerNorm(d)
        self.proj = None if config.tie_output else Linear(d, v, rng)
        self._params = dict(self._iter_params())

    def _iter_params(self):
        yield "tok_emb", self.tok_emb
        yield "pos_emb", self.pos_emb
        for i, layer in enumerate(self.enc_layers):
            yield from layer.named_params(f"enc{i}")
        for i, layer in enumerate(self.dec_layers):
            yield from layer.named_params(f"dec{i}")
        yield from self.enc_ln.named_params("enc_ln")
        yield from self.dec_ln.named_params("dec_ln")
        if self.proj is not None:
            yield from self.proj.named_params("proj")

    def parameters(self) -> dict[str, ag.Tensor]:
        return self._params

    @property
    def max_r_len(self) -> int:
        # decoder target is [BOS] ++ R ++ [EOS] within max_len
        return self.config.max_len - 2

    def _embed(self, ids: np.ndarray) -> ag.Tensor:
        n, t = ids.shape
        if t > self.config.max_len:
            raise ValueError(
                f"sequence length {t} exceeds model maximum {self.config.max_len}"
            )
        pos = np.broadcast_to(np.arange(t), (n, t))
        return ag.add(ag.embedding_lookup(self.tok_emb, ids),
                      ag.embedding_lookup(self.pos_emb, pos))

    def encode(self, enc_ids: np.ndarray, enc_mask: np.ndarray) -> ag.Tensor:
        x = self._embed(enc_ids)
        mask = _key_pad_mask(enc_mask)
        for layer in self.enc_layers:
            x = layer(x, mask)
        return self.enc_ln(x)

    def decode_logits(self, dec_ids: np.ndarray, dec_mask: np.ndarray,
                      enc_out: ag.Tensor, enc_mask: np.ndarray) -> ag.Tensor:
        t = dec_ids.shape[1]
        x = self._embed(dec_ids)
        self_mask = _key_pad_mask(dec_mask) + _causal_mask(t)[None, None]
        cross_mask = _key_pad_mask(enc_mask)
        for layer in self.dec_layers:
            x = layer(x, enc_out, self_mask, cross_mask)
        x = self.dec_ln(x)
        if self.proj is not None:
            return self.proj(x)
        return ag.matmul(x, ag.transpose(self.tok_emb, (1, 0)))

    # ------------------------------------------------------------------
    # conditioning and scoring

    def condition(self, b_tokens: Sequence[str], label: int,
                  r_tokens: Sequence[str]) -> ConditionedInput:
        voc = self.vocab
        enc = [voc.label_id(label)] + voc.encode(b_tokens)
        if len(enc) > self.config.max_len:
            raise ValueError(
                f"conditioning side has {len(enc)} tokens; the model limit is "
                f"{self.config.max_len} (including the label prefix)"
            )
        r_ids = voc.encode(r_tokens)
        if len(r_ids) > self.max_r_len:
            raise ValueError(
                f"remainder has {len(r_ids)} tokens; the model limit is "
                f"{self.max_r_len} (max_len {self.config.max_len} minus BOS/EOS)"
            )
        return ConditionedInput(
            encoder_ids=tuple(enc),
            decoder_in=tuple([voc.bos_id] + r_ids),
            targets=tuple(r_ids + [voc.eos_id]),
        )

    def sequence_log_probs(self, items: Sequence[ConditionedInput]) -> ag.Tensor:
        """Teacher-forced log p(R, EOS | y, B) for each item, as a (N,)
        differentiable tensor. Positions where EOS is forced by the length
        bound contribute exactly zero."""
        if not items:
            raise ValueError("empty batch")
        voc = self.vocab
        enc_ids, enc_mask = pad_batch([it.encoder_ids for it in items], voc.pad_id)
        dec_ids, dec_mask = pad_batch([it.decoder_in for it in items], voc.pad_id)
        n, t = dec_ids.shape
        targets = np.full((n, t), voc.pad_id, dtype=np.intp)
        weights = np.zeros((n, t))
        for i, it in enumerate(items):
            k = len(it.targets)
            targets[i, :k] = it.targets
            weights[i, :k] = 1.0
            if k - 1 == self.max_r_len:  # the EOS slot is forced, log-prob 0
                weights[i, k - 1] = 0.0
        enc_out = self.encode(enc_ids, enc_mask)
        logits = self.decode_logits(dec_ids, dec_mask, enc_out, enc_mask)
        flat = ag.reshape(logits, (n * t, len(voc)))
        nll = ag.cross_entropy(flat, targets.reshape(-1),
                               weights=weights.reshape(-1), reduce="none")
        per_item = ag.sum_tensor(ag.reshape(nll, (n, t)), axis=1)
        return ag.multiply(per_item, -1.0)

    def score(self, b_tokens: Sequence[str], label: int,
              r_tokens: Sequence[str]) -> float:
        """log p(R | y, B), teacher-forced, EOS term included."""
        item = self.condition(b_tokens, label, r_tokens)
        with ag.no_grad():
            return float(self.sequence_log_probs([item]).data[0])

    def nll_loss(self, items: Sequence[ConditionedInput]) -> ag.Tensor:
        """Batch NLL: total -log p summed over items, divided by the total
        number of target tokens in the batch."""
        if not items:
            raise ValueError("empty batch")
        total_tokens = sum(len(it.targets) for it in items)
        logp = self.sequence_log_probs(items)
        return ag.multiply(ag.sum_tensor(logp), -1.0 / total_tokens)

    # ------------------------------------------------------------------
    # generation

    def generate(self, b_tokens: Sequence[str], label: int,
                 mode: str = "greedy", max_len: int | None = None,
                 temperature: float = 1.0,
                 seed: int | None = None) -> list[str]:
        """Decode a remainder sequence; greedy is deterministic, sample mode
        is reproducible for a fixed seed. BOS/EOS are not returned."""
        if max_len is None:
            max_len = self.max_r_len
        if max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {max_len}")
        max_len = min(max_len, self.max_r_len)
        if mode not in ("greedy", "sample"):
            raise ValueError(f"unknown decoding mode {mode!r}")
        rng = np.random.default_rng(seed) if mode == "sample" else None
        voc = self.vocab
        enc = [voc.label_id(label)] + voc.encode(b_tokens)
        if len(enc) > self.config.max_len:
            raise ValueError(
                f"conditioning side has {len(enc)} tokens; the model limit is "
                f"{self.config.max_len}"
            )
        out: list[int] = []
        with ag.no_grad():
            enc_ids, enc_mask = pad_batch([enc], voc.pad_id)
            enc_out = self.encode(enc_ids, enc_mask)
            while len(out) < max_len:
                dec_ids, dec_mask = pad_batch([[voc.bos_id] + out], voc.pad_id)
                logits = self.decode_logits(dec_ids, dec_mask, enc_out, enc_mask)
                last = logits.data[0, len(out)]
                if mode == "greedy":
                    nxt = int(np.argmax(last))
                else:
                    probs = np.exp(last / temperature - np.max(last / temperature))
                    probs /= probs.sum()
                    nxt = int(rng.choice(len(probs), p=probs))
                if nxt == voc.eos_id:
                    break
                out.append(nxt)
        return voc.decode(out)


ENUMERATION_TERM_LIMIT = 10_000_000


def enumerate_terminated_remainders(vocabulary: Vocabulary,
                                    max_r_len: int) -> list[tuple[int, ...]]:
    """Every remainder id sequence of length <= max_r_len over the non-EOS
    alphabet. Each entry is one terminated sequence (scoring appends the EOS
    step). Guarded so exhaustive enumeration stays tractable."""
    v = len(vocabulary)
    if v ** (max_r_len + 1) > ENUMERATION_TERM_LIMIT:
        raise ValueError(
            f"enumeration bound exceeded: |V|^(L+1) = {v}^{max_r_len + 1} "
            f"> {ENUMERATION_TERM_LIMIT}"
        )
    alphabet = [i for i in range(v) if i != vocabulary.eos_id]
    out: list[tuple[int, ...]] = [()]
    frontier: list[tuple[int, ...]] = [()]
    for _ in range(max_r_len):
        frontier = [seq + (a,) for seq in frontier for a in alphabet]
        out.extend(frontier)
    return out


def remainder_log_probs(model: "SeqModel", b_tokens: Sequence[str], label: int,
                        remainders: Sequence[tuple[int, ...]],
                        chunk: int = 1024) -> np.ndarray:
    """log p(R | y, B) for a list of remainder id sequences, batched."""
    items = [model.condition(b_tokens, label, model.vocab.decode(r))
             for r in remainders]
    out = np.empty(len(items))
    with ag.no_grad():
        for lo in range(0, len(items), chunk):
            part = items[lo: lo + chunk]
            out[lo: lo + len(part)] = model.sequence_log_probs(part).data
    return out


class TextClassifier:
    """Encoder + classification head over the label set; consumes exactly the
    token sequence it is given (a bias-only model is simply handed B)."""

    def __init__(self, vocabulary: Vocabulary, n_labels: int,
                 config: ClsConfig = ClsConfig(), seed: int = 0):
        self.vocab = vocabulary
        self.n_labels = n_labels
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.d_model
        self.tok_emb = ag.parameter((len(vocabulary), d), rng, scale=0.02)
        self.pos_emb = ag.parameter((config.max_len, d), rng, scale=0.02)
        self.layers = [EncoderLayer(config, rng) for _ in range(config.n_layers)]
        self.final_ln = LayerNorm(d)
        self.head = Linear(d, n_labels, rng)
        self._params = dict(self._iter_params())

    def _iter_params(self):
        yield "tok_emb", self.tok_emb
        yield "pos_emb", self.pos_emb
        for i, layer in enumerate(self.layers):
            yield from layer.named_params(f"enc{i}")
        yield from self.final_ln.named_params("final_ln")
        yield from self.head.named_params("head")

    def parameters(self) -> dict[str, ag.Tensor]:
        return self._params

    def logits(self, id_seqs: Sequence[Sequence[int]]) -> ag.Tensor:
        if not id_seqs:
            raise ValueError("empty batch")
        ids, mask = pad_batch(id_seqs, self.vocab.pad_id)
        n, t = ids.shape
        if t > self.config.max_len:
            raise ValueError(
                f"sequence length {t} exceeds model maximum {self.config.max_len}"
            )
        pos = np.broadcast_to(np.arange(t), (n, t))
        x = ag.add(ag.embedding_lookup(self.tok_emb, ids),
                   ag.embedding_lookup(self.pos_emb, pos))
        add_mask = _key_pad_mask(mask)
        for layer in self.layers:
            x = layer(x, add_mask)
        x = self.final_ln(x)
        # masked mean pool via a constant row-stochastic matrix
        pool = (mask / mask.sum(axis=1, keepdims=True))[:, None, :]
        pooled = ag.reshape(ag.matmul(ag.Tensor(pool), x), (n, self.config.d_model))
        return self.head(pooled)

    def predict_proba(self, token_seqs: Sequence[Sequence[str]]) -> np.ndarray:
        with ag.no_grad():
            ids = [self.vocab.encode(toks) for toks in token_seqs]
            z = self.logits(ids).data
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def predict(self, token_seqs: Sequence[Sequence[str]]) -> np.ndarray:
        return np.argmax(self.predict_proba(token_seqs), axis=1)

    def loss(self, id_seqs: Sequence[Sequence[int]], labels: Sequence[int]) -> ag.Tensor:
        logits = self.logits(id_seqs)
        return ag.multiply(
            ag.cross_entropy(logits, np.asarray(labels, dtype=np.intp)),
            1.0 / len(labels))
