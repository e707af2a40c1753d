"""Structural-bias machinery: (B, R) splitters, the synthetic attribute-world
corpus, controlled bias-token injection, and hard-set filtering.

All randomized operations derive a per-example seed from (global seed,
example id, salt) so parallel and serial runs agree and re-runs are
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .vocab import MASK, SEP, Vocabulary, bias_token, tokenize

LABELS = ("entailment", "neutral", "contradiction")
ENTAILMENT, NEUTRAL, CONTRADICTION = 0, 1, 2


@dataclass(frozen=True)
class Example:
    id: str
    premise: tuple[str, ...]
    hypothesis: tuple[str, ...]
    label: int

    def __post_init__(self):
        if not self.premise or not self.hypothesis:
            raise ValueError(f"example {self.id}: premise/hypothesis must be non-empty")


@dataclass(frozen=True)
class BiasSplit:
    """The (B, R) decomposition of one example under a named splitter."""

    b: tuple[str, ...]
    r: tuple[str, ...]
    split_name: str
    example_id: str


def split_hypothesis_only(ex: Example) -> BiasSplit:
    """B = hypothesis, R = premise."""
    return BiasSplit(b=ex.hypothesis, r=ex.premise,
                     split_name="hypothesis-only", example_id=ex.id)


def split_overlap(ex: Example) -> BiasSplit:
    """B = premise ++ SEP ++ hypothesis with every token that does not occur
    in both sides replaced by MASK (SEP itself is never masked); R is the
    unmasked concatenation."""
    shared = {t.lower() for t in ex.premise} & {t.lower() for t in ex.hypothesis}
    masked = tuple(t if t.lower() in shared else MASK
                   for t in ex.premise + (SEP,) + ex.hypothesis)
    # the SEP delimiter is structural, restore it unconditionally
    b = masked[: len(ex.premise)] + (SEP,) + masked[len(ex.premise) + 1:]
    r = ex.premise + (SEP,) + ex.hypothesis
    return BiasSplit(b=b, r=r, split_name="overlap", example_id=ex.id)


def split_synthetic_token(ex: Example, label_names: Sequence[str] = LABELS) -> BiasSplit:
    """B = the injected bias token alone; R = everything else. Only valid on
    injected datasets."""
    tokens = {bias_token(name) for name in label_names}
    if ex.hypothesis[0] not in tokens:
        raise ValueError(
            f"example {ex.id}: hypothesis does not start with a bias token"
        )
    return BiasSplit(b=(ex.hypothesis[0],),
                     r=ex.premise + (SEP,) + ex.hypothesis[1:],
                     split_name="synthetic-token", example_id=ex.id)


SPLITTERS: dict[str, Callable[[Example], BiasSplit]] = {
    "hypothesis-only": split_hypothesis_only,
    "overlap": split_overlap,
    "synthetic-token": split_synthetic_token,
}


def derived_rng(seed: int, example_id: str, salt: str) -> np.random.Generator:
    """Stable per-example generator: hash of (seed, id, salt)."""
    digest = hashlib.sha256(f"{seed}:{example_id}:{salt}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


# ---------------------------------------------------------------------------
# synthetic bias injection


@dataclass(frozen=True)
class SyntheticBiasConfig:
    bias_ratio: float
    seed: int
    label_names: tuple[str, ...] = LABELS

    def __post_init__(self):
        if not 0.0 <= self.bias_ratio <= 1.0:
            raise ValueError(f"bias ratio must be in [0, 1], got {self.bias_ratio}")

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(bias_token(name) for name in self.label_names)


def inject_synthetic_bias(dataset: Sequence[Example],
                          cfg: SyntheticBiasConfig) -> list[Example]:
    """Prefix one bias token to every hypothesis: the true label's token with
    probability p, else a token drawn uniformly from all labels (the true one
    included, so the effective match rate is p + (1-p)/|Y|)."""
    tokens = cfg.tokens
    for ex in dataset:
        if any(t in tokens for t in ex.premise + ex.hypothesis):
            raise ValueError(f"example {ex.id} already contains a bias token")
    out = []
    for ex in dataset:
        rng = derived_rng(cfg.seed, ex.id, "inject")
        if rng.random() < cfg.bias_ratio:
            tok = tokens[ex.label]
        else:
            tok = tokens[int(rng.integers(len(tokens)))]
        out.append(Example(id=ex.id, premise=ex.premise,
                           hypothesis=(tok,) + ex.hypothesis, label=ex.label))
    return out


def debias_eval_set(dataset: Sequence[Example], cfg: SyntheticBiasConfig,
                    mode: str = "strip") -> list[Example]:
    """Counterpart eval sets for an injected dataset. mode="strip" removes
    the leading bias token wherever present (idempotent); mode="rerandomize"
    replaces it with a uniformly random token and requires every example to
    carry one."""
    tokens = cfg.tokens
    out = []
    for ex in dataset:
        has_token = ex.hypothesis[0] in tokens
        if mode == "strip":
            hyp = ex.hypothesis[1:] if has_token else ex.hypothesis
        elif mode == "rerandomize":
            if not has_token:
                raise ValueError(
                    f"example {ex.id}: expected a bias token to re-randomize, "
                    f"found {ex.hypothesis[0]!r}"
                )
            rng = derived_rng(cfg.seed, ex.id, "rerand")
            hyp = (tokens[int(rng.integers(len(tokens)))],) + ex.hypothesis[1:]
        else:
            raise ValueError(f"unknown debias mode {mode!r}")
        out.append(Example(id=ex.id, premise=ex.premise, hypothesis=hyp,
                           label=ex.label))
    return out


# ---------------------------------------------------------------------------
# synthetic attribute-world corpus

_ATTR_BANKS = (
    ("color", ("red", "blue", "green", "yellow", "purple", "orange", "white", "black")),
    ("size", ("big", "small", "tiny", "huge", "giant", "little", "medium", "narrow")),
    ("shape", ("round", "square", "flat", "long", "curved", "pointy", "oval", "wide")),
    ("material", ("wood", "metal", "glass", "stone", "cloth", "paper", "clay", "wax")),
    ("texture", ("smooth", "rough", "soft", "hard", "fuzzy", "slick", "bumpy", "grainy")),
    ("speed", ("fast", "slow", "quick", "sluggish", "rapid", "steady", "brisk", "lazy")),
)


@dataclass(frozen=True)
class CorpusSpec:
    entities: int = 20
    attr_types: int = 4
    values_per_type: int = 5
    per_label: int = 2000
    seed: int = 0
    # premises list a variable number of assertions so that models cannot
    # key on absolute token positions
    min_assertions: int = 2
    max_assertions: int = 4

    def __post_init__(self):
        if self.entities < 1 or self.attr_types < 1 or self.per_label < 1:
            raise ValueError("entities, attr_types and per_label must be positive")
        if self.values_per_type < 2:
            raise ValueError(
                "values_per_type must be >= 2 (contradictions need an alternative value)"
            )
        if not 1 <= self.min_assertions <= self.max_assertions:
            raise ValueError("need 1 <= min_assertions <= max_assertions")
        if self.entities * self.attr_types - 1 < self.max_assertions:
            raise ValueError(
                "not enough (entity, attribute) pairs for the requested premise length"
            )


def _attribute_world(spec: CorpusSpec) -> list[tuple[str, tuple[str, ...]]]:
    world = []
    for k in range(spec.attr_types):
        if k < len(_ATTR_BANKS):
            name, bank = _ATTR_BANKS[k]
        else:
            name, bank = f"attr{k}", ()
        values = list(bank[: spec.values_per_type])
        while len(values) < spec.values_per_type:
            values.append(f"{name}{len(values)}")
        world.append((name, tuple(values)))
    return world


def generate_corpus(spec: CorpusSpec) -> list[Example]:
    """Balanced NLI-like corpus over entity-attribute assertions.

    Every round draws one hypothesis fact and emits a matched triple sharing
    that hypothesis string: a premise asserting the fact (entailment), one
    asserting a different value of the same attribute for that entity
    (contradiction), and one silent about that entity-attribute (neutral).
    Sharing the hypothesis across all three labels makes the corpus free of
    hypothesis-only bias by construction. Premises never assert the same
    (entity, attribute) pair twice.
    """
    rng = np.random.default_rng(spec.seed)
    world = _attribute_world(spec)
    entities = [f"e{i + 1}" for i in range(spec.entities)]
    n_pairs = spec.entities * spec.attr_types

    def sample_fillers(exclude_pair: int, count: int) -> list[tuple[str, str, str]]:
        pool = [p for p in range(n_pairs) if p != exclude_pair]
        chosen = rng.choice(len(pool), size=count, replace=False)
        fillers = []
        for c in chosen:
            pair = pool[int(c)]
            ent, (tname, values) = entities[pair // spec.attr_types], world[pair % spec.attr_types]
            fillers.append((ent, tname, values[int(rng.integers(len(values)))]))
        return fillers

    def premise_tokens(assertions: list[tuple[str, str, str]]) -> tuple[str, ...]:
        order = rng.permutation(len(assertions))
        toks: list[str] = []
        for i in order:
            ent, tname, val = assertions[int(i)]
            toks += [ent, "has", tname, val, "."]
        return tuple(toks)

    examples: list[Example] = []
    for round_idx in range(spec.per_label):
        pair = int(rng.integers(n_pairs))
        ent, (tname, values) = entities[pair // spec.attr_types], world[pair % spec.attr_types]
        v_idx = int(rng.integers(len(values)))
        value = values[v_idx]
        hypothesis = (ent, "has", tname, value)
        other_value = values[int((v_idx + 1 + rng.integers(len(values) - 1)) % len(values))]

        k = spec.assertions_per_premise
        triples = (
            (ENTAILMENT, [(ent, tname, value)] + sample_fillers(pair, k - 1)),
            (NEUTRAL, sample_fillers(pair, k)),
            (CONTRADICTION, [(ent, tname, other_value)] + sample_fillers(pair, k - 1)),
        )
        for label, assertions in triples:
            examples.append(Example(
                id=f"{round_idx:06d}-{LABELS[label][:3]}",
                premise=premise_tokens(assertions),
                hypothesis=hypothesis,
                label=label,
            ))
    order = rng.permutation(len(examples))
    return [examples[int(i)] for i in order]


def build_hard_set(dataset: Sequence[Example], bias_model,
                   splitter: Callable[[Example], BiasSplit]) -> list[Example]:
    """Subset where the bias-only model's argmax disagrees with gold; order
    and ids preserved."""
    if not dataset:
        return []
    preds = bias_model.predict([splitter(ex).b for ex in dataset])
    hard = [ex for ex, p in zip(dataset, preds) if int(p) != ex.label]
    if not hard:
        warnings.warn("hard set is empty: the bias model is never wrong here")
    return hard


class TokenOracle:
    """The fully biased reference for injected data: predicts the label whose
    bias token prefixes the input."""

    def __init__(self, label_names: Sequence[str] = LABELS):
        self.token_to_label = {bias_token(n): i for i, n in enumerate(label_names)}

    def predict(self, token_seqs: Iterable[Sequence[str]]) -> np.ndarray:
        out = []
        for toks in token_seqs:
            for t in toks:
                if t in self.token_to_label:
                    out.append(self.token_to_label[t])
                    break
            else:
                raise ValueError("token oracle: no bias token in input")
        return np.asarray(out)


def build_vocabulary(dataset: Sequence[Example], n_labels: int = len(LABELS),
                     extra: Sequence[str] | None = None) -> Vocabulary:
    """Closed vocabulary from a dataset. SEP and the bias tokens are always
    included so the same model can read joined, masked or injected inputs."""
    if extra is None:
        extra = (SEP,) + tuple(bias_token(n) for n in LABELS[:n_labels])
    seqs = [ex.premise + ex.hypothesis for ex in dataset]
    return Vocabulary.build(seqs, n_labels, extra=extra)


# ---------------------------------------------------------------------------
# JSONL dataset files


def read_jsonl(path: str | Path, label_names: Sequence[str] = LABELS) -> list[Example]:
    """SNLI/MNLI-style JSONL: one object per line with id, premise,
    hypothesis (strings) and label (name)."""
    name_to_idx = {n: i for i, n in enumerate(label_names)}
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            try:
                label = name_to_idx[obj["label"]]
                out.append(Example(
                    id=str(obj["id"]),
                    premise=tuple(tokenize(obj["premise"])),
                    hypothesis=tuple(tokenize(obj["hypothesis"])),
                    label=label,
                ))
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing or unknown field {exc}") from exc
    return out


def write_jsonl(path: str | Path, dataset: Sequence[Example],
                label_names: Sequence[str] = LABELS) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            fh.write(json.dumps({
                "id": ex.id,
                "premise": " ".join(ex.premise),
                "hypothesis": " ".join(ex.hypothesis),
                "label": label_names[ex.label],
            }) + "\n")
