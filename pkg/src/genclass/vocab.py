"""Whitespace tokenizer and closed vocabulary with reserved control tokens.

Natural text is lowercased; recognized control spellings (MASK, SEP, LABEL-k,
BIAS-*) keep their case so they can never collide with corpus words.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK, MASK = "<pad>", "<bos>", "<eos>", "<unk>", "MASK"
SEP = "SEP"

PAD_ID, BOS_ID, EOS_ID, UNK_ID, MASK_ID = 0, 1, 2, 3, 4
_FIXED = (PAD, BOS, EOS, UNK, MASK)


def label_token(index: int) -> str:
    return f"LABEL-{index}"


def bias_token(label_name: str) -> str:
    """Bias-channel token for a label, e.g. entailment -> BIAS-ENT."""
    return f"BIAS-{label_name[:3].upper()}"


def _is_control(token: str) -> bool:
    return (token in _FIXED or token == SEP
            or token.startswith("LABEL-") or token.startswith("BIAS-"))


def tokenize(text: str) -> list[str]:
    """Whitespace split; lowercase everything except control spellings."""
    return [t if _is_control(t) else t.lower() for t in text.split()]


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


@dataclass
class Vocabulary:
    """Token/id bijection. Ids 0..4 are PAD/BOS/EOS/UNK/MASK, the next
    n_labels ids are the label-conditioning tokens, and content tokens
    (including SEP and bias tokens when present in the corpus) follow."""

    tokens: list[str]
    n_labels: int
    token_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        expected = list(_FIXED) + [label_token(k) for k in range(self.n_labels)]
        if self.tokens[: len(expected)] != expected:
            raise ValueError("reserved tokens missing or out of order")

    @classmethod
    def build(cls, corpus_tokens: Iterable[Iterable[str]], n_labels: int,
              extra: Sequence[str] = ()) -> "Vocabulary":
        """Closed vocabulary from a training corpus; deterministic order
        (reserved block, extras, then sorted content tokens)."""
        reserved = list(_FIXED) + [label_token(k) for k in range(n_labels)]
        seen = set(reserved) | set(extra)
        content = sorted({t for seq in corpus_tokens for t in seq} - seen)
        return cls(tokens=reserved + list(extra) + content, n_labels=n_labels)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def bos_id(self) -> int:
        return BOS_ID

    @property
    def eos_id(self) -> int:
        return EOS_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    @property
    def mask_id(self) -> int:
        return MASK_ID

    def label_id(self, label: int) -> int:
        if not 0 <= label < self.n_labels:
            raise ValueError(f"label {label} outside 0..{self.n_labels - 1}")
        return 5 + label

    def is_reserved_id(self, token_id: int) -> bool:
        """Reserved = the fixed block, label tokens, and control spellings
        (SEP / BIAS-*) wherever they landed. Word dropout must skip these."""
        if token_id < 5 + self.n_labels:
            return True
        return _is_control(self.tokens[token_id])

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]
