"""Bias and quality metrics: accuracy, the o.o.d generalization gap, the
bias-correlation score (multiclass Matthews correlation over prediction
pairs), and corpus BLEU / self-BLEU.

BLEU conventions, fixed once: BLEU-4, add-one smoothing on the n >= 2
precisions only (a zero unigram precision stays zero), brevity penalty from
the per-candidate closest reference length with ties toward the shorter.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class PredictionRecord:
    id: str
    gold: int
    pred: int
    posterior: list[float] | None = None

    def __post_init__(self):
        if self.posterior is not None and abs(sum(self.posterior) - 1.0) > 1e-9:
            raise ValueError(f"record {self.id}: posterior does not sum to 1")


@dataclass
class MetricsReport:
    accuracy_test: float | None = None
    accuracy_hard: float | None = None
    delta: float | None = None
    rho: float | None = None
    bleu: float | None = None
    self_bleu: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if None not in (self.accuracy_test, self.accuracy_hard, self.delta):
            if self.delta != self.accuracy_test - self.accuracy_hard:
                raise ValueError("delta must equal accuracy_test - accuracy_hard")

    def to_json(self) -> str:
        payload = {k: v for k, v in self.__dict__.items()}
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_table(self) -> str:
        """Aligned plain-text rendering; accuracies in percent, 2 decimals."""
        rows = []
        for name, value in (("accuracy (test)", self.accuracy_test),
                            ("accuracy (hard)", self.accuracy_hard),
                            ("delta", self.delta)):
            if value is not None:
                rows.append((name, f"{100 * value:.2f}"))
        for name, value in (("rho", self.rho), ("bleu", self.bleu),
                            ("self-bleu", self.self_bleu)):
            if value is not None:
                rows.append((name, f"{value:.4f}"))
        width = max((len(n) for n, _ in rows), default=0)
        return "\n".join(f"{n:<{width}}  {v:>8}" for n, v in rows)


def accuracy(records: Sequence[PredictionRecord]) -> float:
    if not records:
        raise ValueError("accuracy of an empty record set is undefined")
    return sum(r.pred == r.gold for r in records) / len(records)


def delta(acc_test: float, acc_hard: float) -> float:
    """o.o.d generalization gap; accepts fractions or percents and preserves
    the input scale."""
    return acc_test - acc_hard


def matthews_corrcoef(a: Sequence[int], b: Sequence[int]) -> float:
    """Multiclass MCC from the confusion matrix; 0 when either side is
    constant (the undefined case)."""
    a = np.asarray(a, dtype=np.intp)
    b = np.asarray(b, dtype=np.intp)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ValueError("MCC needs two equal-length non-empty label sequences")
    k = int(max(a.max(), b.max())) + 1
    c = np.zeros((k, k))
    np.add.at(c, (a, b), 1.0)
    n = c.sum()
    correct = np.trace(c)
    pa = c.sum(axis=1)  # marginals of a
    pb = c.sum(axis=0)  # marginals of b
    cov = correct * n - pa @ pb
    denom = math.sqrt(float(n * n - pa @ pa)) * math.sqrt(float(n * n - pb @ pb))
    if denom == 0.0:
        return 0.0
    return float(cov / denom)


def rho(records_a: Sequence[PredictionRecord],
        records_b: Sequence[PredictionRecord]) -> float:
    """Correlation between two models' predictions on the same examples,
    aligned by example id; records_b is conventionally the bias model."""
    by_id = {r.id: r for r in records_b}
    if len(by_id) != len(records_b) or {r.id for r in records_a} != set(by_id):
        raise ValueError("rho: record sets must carry the same example ids")
    preds_a = [r.pred for r in records_a]
    preds_b = [by_id[r.id].pred for r in records_a]
    return matthews_corrcoef(preds_a, preds_b)


# ---------------------------------------------------------------------------
# BLEU


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def _normalize_references(candidates, references):
    if len(candidates) != len(references):
        raise ValueError("bleu: candidate and reference counts differ")
    out = []
    for refs in references:
        if refs and isinstance(refs[0], str):
            refs = [refs]
        refs = [list(r) for r in refs]
        if not refs:
            raise ValueError("bleu: every candidate needs at least one reference")
        out.append(refs)
    return out


def bleu(candidates: Sequence[Sequence[str]], references, max_order: int = 4) -> float:
    """Corpus BLEU. references[i] is either one token sequence or a list of
    them for candidate i."""
    if not candidates:
        raise ValueError("bleu: empty candidate set")
    references = _normalize_references(candidates, references)
    matches = [0] * max_order
    totals = [0] * max_order
    cand_len, ref_len = 0, 0
    for cand, refs in zip(candidates, references):
        cand = list(cand)
        cand_len += len(cand)
        ref_len += min((len(r) for r in refs),
                       key=lambda L: (abs(L - len(cand)), L))
        for n in range(1, max_order + 1):
            counts = _ngrams(cand, n)
            if not counts:
                continue
            clipped = Counter()
            for r in refs:
                ref_counts = _ngrams(r, n)
                for gram, cnt in counts.items():
                    clipped[gram] = max(clipped[gram], min(cnt, ref_counts[gram]))
            matches[n - 1] += sum(clipped.values())
            totals[n - 1] += sum(counts.values())
    if totals[0] == 0 or matches[0] == 0:
        return 0.0
    log_precisions = [math.log(matches[0] / totals[0])]
    for n in range(2, max_order + 1):
        log_precisions.append(
            math.log((matches[n - 1] + 1) / (totals[n - 1] + 1)))
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(sum(log_precisions) / max_order)


def self_bleu(corpus: Sequence[Sequence[str]]) -> float:
    """Mean BLEU of each sentence against all the others; high values mean
    low diversity."""
    if len(corpus) < 2:
        raise ValueError("self-bleu needs at least 2 sentences")
    sentences = [list(s) for s in corpus]
    scores = []
    for i, sent in enumerate(sentences):
        others = sentences[:i] + sentences[i + 1:]
        scores.append(bleu([sent], [others]))
    return sum(scores) / len(scores)


# ---------------------------------------------------------------------------
# predictions files


def write_predictions(path: str | Path, records: Sequence[PredictionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj = {"id": r.id, "gold": r.gold, "pred": r.pred}
            if r.posterior is not None:
                obj["posterior"] = list(r.posterior)
            fh.write(json.dumps(obj) + "\n")


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(PredictionRecord(id=str(obj["id"]), gold=int(obj["gold"]),
                                        pred=int(obj["pred"]),
                                        posterior=obj.get("posterior")))
    return out
