"""Span-based extraction head.

Enumerates every candidate span up to a width cap, classifies each from the
boundary rows, the mean over the span, and a width embedding, and decodes a
non-overlapping span set greedily by score.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import EntitySpan
from .errors import ContractError
from .tensor import Tensor

logger = logging.getLogger(__name__)

NULL = 0  # classifier index for "not an entity"


@dataclass
class SpanHeadParams:
    width_emb: Tensor  # [max_width, d_w]
    w_cls: Tensor  # [3*d_model + d_w, C+1]
    b_cls: Tensor  # [C+1]
    classes: list[str]  # classifier column c+1 predicts classes[c]

    @property
    def max_width(self) -> int:
        return self.width_emb.shape[0]

    def named(self) -> dict[str, Tensor]:
        return {"width_emb": self.width_emb, "w_cls": self.w_cls, "b_cls": self.b_cls}


def init_span(
    d_model: int, classes: Sequence[str], seed: int, max_width: int = 8, d_w: int = 8
) -> SpanHeadParams:
    from .encoder import xavier

    if max_width < 1:
        raise ContractError(f"max_width must be >= 1, got {max_width}")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    return SpanHeadParams(
        width_emb=xavier(rng, max_width, d_w),
        w_cls=xavier(rng, 3 * d_model + d_w, len(classes) + 1),
        b_cls=Tensor(np.zeros(len(classes) + 1), requires_grad=True),
        classes=list(classes),
    )


@dataclass
class ScoredSpan:
    start: int
    end: int
    logits: Tensor  # (C+1,), differentiable


def score_all_spans(h: Tensor, params: SpanHeadParams) -> list[ScoredSpan]:
    """Classify every span (i, j) with j - i < max_width -> one ScoredSpan each.

    Representation per span: concat(h[i], h[j], mean(h[i..j]), width_emb[j-i]).
    All candidates are scored in one batched affine map; each ScoredSpan's
    logits stay differentiable back to h and the head parameters.
    """
    n = h.shape[0]
    if n < 1:
        raise ContractError("score_all_spans requires at least one position")
    bounds = [
        (i, j) for i in range(n) for j in range(i, min(n, i + params.max_width))
    ]
    starts = [i for i, _ in bounds]
    ends = [j for _, j in bounds]
    widths = np.array([j - i + 1 for i, j in bounds], dtype=np.float64)

    prefix = T.prefix_sums0(h)
    sums = T.sub(T.rows(prefix, [j + 1 for j in ends]), T.rows(prefix, starts))
    means = T.scale_rows(sums, 1.0 / widths)
    rep = T.concat_cols(
        [T.rows(h, starts), T.rows(h, ends), means, T.rows(params.width_emb, [w - 1 for w in widths.astype(int)])]
    )
    logits = T.add_rowwise(T.matmul(rep, params.w_cls), params.b_cls)
    return [
        ScoredSpan(i, j, T.row1d(logits, r)) for r, (i, j) in enumerate(bounds)
    ]


def span_loss(
    candidates: Sequence[ScoredSpan],
    gold: Sequence[EntitySpan],
    classes: Sequence[str],
    neg_ratio: float = 3.0,
    seed: int = 0,
) -> Tensor:
    """Mean cross-entropy over gold-labeled candidates with subsampled negatives.

    Null candidates are cut down to at most neg_ratio * max(1, positives),
    chosen by a seeded draw so training steps stay reproducible.  Gold spans
    wider than the candidate cap cannot be matched and are dropped with a
    warning.
    """
    if not candidates:
        raise ContractError("span_loss requires at least one candidate")
    class_index = {cls: c + 1 for c, cls in enumerate(classes)}
    max_width = max(c.end - c.start + 1 for c in candidates)
    gold_by_bounds = {}
    for span in gold:
        if span.end - span.start + 1 > max_width:
            logger.warning("gold span %s wider than max_width %d; dropped", span, max_width)
            continue
        gold_by_bounds[(span.start, span.end)] = class_index[span.cls]

    labels = [gold_by_bounds.get((c.start, c.end), NULL) for c in candidates]
    retained = subsample_negatives(labels, neg_ratio, seed)
    logits = T.stack_rows([candidates[i].logits for i in retained])
    return T.mean_cross_entropy(logits, [labels[i] for i in retained])


def subsample_negatives(labels: Sequence[int], neg_ratio: float, seed: int) -> list[int]:
    """Indices to train on: all positives plus at most neg_ratio * max(1, P) nulls."""
    positives = [i for i, lab in enumerate(labels) if lab != NULL]
    negatives = [i for i, lab in enumerate(labels) if lab == NULL]
    cap = int(neg_ratio * max(1, len(positives)))
    if len(negatives) > cap:
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        picked = rng.choice(len(negatives), size=cap, replace=False)
        negatives = [negatives[i] for i in sorted(picked)]
    return sorted(positives + negatives)


def decode_spans(
    candidates: Sequence[ScoredSpan], classes: Sequence[str]
) -> list[EntitySpan]:
    """Greedy non-overlapping decode: best winning logit first, ties by (start, end)."""
    winners = []
    for c in candidates:
        values = c.logits.values
        cls = int(values.argmax())
        if cls != NULL:
            winners.append((-float(values[cls]), c.start, c.end, cls))
    winners.sort()
    taken: list[EntitySpan] = []
    occupied: set[int] = set()
    for _, start, end, cls in winners:
        positions = range(start, end + 1)
        if any(p in occupied for p in positions):
            continue
        occupied.update(positions)
        taken.append(EntitySpan(start, end, classes[cls - 1]))
    taken.sort(key=lambda s: (s.start, s.end))
    return taken
