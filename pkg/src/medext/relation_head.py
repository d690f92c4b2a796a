"""Relation extraction over entity pairs.

Each entity is summarized by the mean of its encoder rows; an ordered pair is
scored by an affine map over the concatenated pair representation and trained
with cross-entropy.  Label index 0 is always "no-relation" and is never
emitted as a prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import NO_RELATION, RELATION_LABELS, EntitySpan, RelationInstance
from .errors import ContractError
from .tensor import Tensor


@dataclass
class RelationHeadParams:
    w: Tensor  # [2*d_model, R]
    b: Tensor  # [R]
    labels: list[str]  # index 0 is "no-relation"

    def named(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


def init_relation(
    d_model: int, seed: int, labels: Sequence[str] = RELATION_LABELS
) -> RelationHeadParams:
    from .encoder import xavier

    if len(labels) < 2 or labels[0] != NO_RELATION:
        raise ContractError(f"labels must start with {NO_RELATION!r}, got {labels!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    return RelationHeadParams(
        w=xavier(rng, 2 * d_model, len(labels)),
        b=Tensor(np.zeros(len(labels)), requires_grad=True),
        labels=list(labels),
    )


def entity_pool(h: Tensor, span: EntitySpan) -> Tensor:
    """Mean of the encoder rows covered by the span -> (d_model,)."""
    if not 0 <= span.start <= span.end < h.shape[0]:
        raise ContractError(f"span {span} out of range for {h.shape[0]} positions")
    return T.mean0(T.slice_rows(h, span.start, span.end + 1))


def relation_logits(h_e1: Tensor, h_e2: Tensor, params: RelationHeadParams) -> Tensor:
    """Affine score of the ordered pair: w.T @ concat(h_e1, h_e2) + b -> (R,)."""
    if h_e1.shape != h_e2.shape or 2 * h_e1.shape[0] != params.w.shape[0]:
        raise ContractError(
            f"relation_logits: vectors {h_e1.shape}/{h_e2.shape} vs w {params.w.shape}"
        )
    return T.add(T.vecmat(T.concat1d([h_e1, h_e2]), params.w), params.b)


def relation_loss(
    pairs: Sequence[tuple[Tensor, Tensor, str]], params: RelationHeadParams
) -> Tensor:
    """Mean cross-entropy of softmax(relation_logits) against gold labels."""
    if not pairs:
        raise ContractError("relation_loss requires a nonempty pair list")
    targets = []
    for _, _, label in pairs:
        if label not in params.labels:
            raise ContractError(f"unknown relation label {label!r}")
        targets.append(params.labels.index(label))
    logits = T.stack_rows([relation_logits(h1, h2, params) for h1, h2, _ in pairs])
    return T.mean_cross_entropy(logits, targets)


def predict_relations(
    h: Tensor, spans: Sequence[EntitySpan], params: RelationHeadParams
) -> list[RelationInstance]:
    """Argmax label for every ordered pair of distinct spans; no-relation omitted."""
    pooled = [entity_pool(h, span) for span in spans]
    predictions: list[RelationInstance] = []
    for i in range(len(spans)):
        for j in range(len(spans)):
            if i == j:
                continue
            logits = relation_logits(pooled[i], pooled[j], params)
            label = int(np.argmax(logits.values))
            if label != 0:
                predictions.append(RelationInstance(i, j, params.labels[label]))
    return predictions
