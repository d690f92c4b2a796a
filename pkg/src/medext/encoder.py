"""Mini transformer encoder and a masked-token pretraining objective.

The encoder maps a subword-id sequence to contextual representations through
stacked self-attention blocks (post-norm, learned positional embeddings,
ReLU feed-forward).  ``mlm_step`` is the small-scale stand-in for domain
pretraining: corrupt a seeded subset of positions and score the model's
reconstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import MASK
from .errors import ContractError
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 32
    heads: int = 2
    layers: int = 2
    d_ff: int = 64
    max_len: int = 64
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ContractError("vocab_size must cover the reserved entries")
        if self.d_model % self.heads != 0 or self.d_model // self.heads < 1:
            raise ContractError(
                f"d_model={self.d_model} must be divisible by heads={self.heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError(f"dropout_rate {self.dropout_rate} outside [0, 1)")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


@dataclass
class LayerParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


@dataclass
class EncoderParams:
    tok_emb: Tensor
    pos_emb: Tensor
    layers: list[LayerParams] = field(default_factory=list)
    mlm_proj: Tensor = None

    def named(self) -> dict[str, Tensor]:
        out = {"tok_emb": self.tok_emb, "pos_emb": self.pos_emb, "mlm_proj": self.mlm_proj}
        for i, layer in enumerate(self.layers):
            for name, value in vars(layer).items():
                out[f"layer{i}.{name}"] = value
        return out


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Seeded Xavier-uniform weights; zero biases; unit layer-norm gains."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    d, ff = config.d_model, config.d_ff
    params = EncoderParams(
        tok_emb=xavier(rng, config.vocab_size, d),
        pos_emb=xavier(rng, config.max_len, d),
    )
    for _ in range(config.layers):
        params.layers.append(
            LayerParams(
                w_q=xavier(rng, d, d),
                w_k=xavier(rng, d, d),
                w_v=xavier(rng, d, d),
                w_o=xavier(rng, d, d),
                ff_w1=xavier(rng, d, ff),
                ff_b1=Tensor(np.zeros(ff), requires_grad=True),
                ff_w2=xavier(rng, ff, d),
                ff_b2=Tensor(np.zeros(d), requires_grad=True),
                ln1_gain=Tensor(np.ones(d), requires_grad=True),
                ln1_bias=Tensor(np.zeros(d), requires_grad=True),
                ln2_gain=Tensor(np.ones(d), requires_grad=True),
                ln2_bias=Tensor(np.zeros(d), requires_grad=True),
            )
        )
    params.mlm_proj = xavier(rng, d, config.vocab_size)
    return params


MASK_BIAS = -1e9  # additive stand-in for -inf; keeps arithmetic finite


def attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: Sequence[bool] | None = None,
    return_weights: bool = False,
):
    """Scaled dot-product attention: softmax(q kᵀ / sqrt(d_k)) v.

    ``mask`` flags visible positions; masked (False) positions receive a
    -1e9 score bias so their attention weight underflows to zero.
    """
    n, d_k = q.shape
    if k.shape != (n, d_k) or v.shape[0] != n:
        raise ContractError(f"attention: shapes {q.shape}, {k.shape}, {v.shape} disagree")
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d_k))
    if mask is not None:
        visible = np.asarray(mask, dtype=bool)
        if visible.shape != (n,):
            raise ContractError(f"mask length {visible.shape} does not match n={n}")
        if not visible.any():
            raise ContractError("attention requires at least one unmasked position")
        bias = np.where(visible, 0.0, MASK_BIAS)
        scores = T.add(scores, Tensor(np.tile(bias, (n, 1))))
    weights = T.softmax_rows(scores)
    out = T.matmul(weights, v)
    return (out, weights) if return_weights else out


def encode(
    ids: Sequence[int],
    params: EncoderParams,
    config: EncoderConfig,
    training: bool = False,
    dropout_seed: int | None = None,
    mask: Sequence[bool] | None = None,
    attn_sink: list | None = None,
) -> Tensor:
    """Run the full encoder stack over one subword-id sequence -> [n, d_model].

    Deterministic when ``training`` is false; dropout requires an explicit
    seed so training runs stay reproducible.  ``attn_sink``, when given,
    collects every per-head attention weight matrix (diagnostics only).
    """
    n = len(ids)
    if n == 0:
        raise ContractError("encode requires a nonempty sequence")
    if n > config.max_len:
        raise ContractError(f"sequence length {n} exceeds max_len {config.max_len}")
    dropping = training and config.dropout_rate > 0.0
    if dropping and dropout_seed is None:
        raise ContractError("training with dropout requires a dropout_seed")
    rng = (
        np.random.default_rng(np.random.SeedSequence([dropout_seed]))
        if dropping
        else None
    )

    x = T.add(T.rows(params.tok_emb, ids), T.rows(params.pos_emb, range(n)))
    d_k = config.d_k
    for layer in params.layers:
        q = T.matmul(x, layer.w_q)
        k = T.matmul(x, layer.w_k)
        v = T.matmul(x, layer.w_v)
        heads = []
        for h in range(config.heads):
            lo, hi = h * d_k, (h + 1) * d_k
            head_out, weights = attention(
                T.slice_cols(q, lo, hi),
                T.slice_cols(k, lo, hi),
                T.slice_cols(v, lo, hi),
                mask=mask,
                return_weights=True,
            )
            if attn_sink is not None:
                attn_sink.append(weights)
            heads.append(head_out)
        attn = T.matmul(T.concat_cols(heads), layer.w_o)
        if dropping:
            attn = T.dropout(attn, config.dropout_rate, rng)
        x = T.layer_norm(T.add(x, attn), layer.ln1_gain, layer.ln1_bias)

        hidden = T.relu(T.add_rowwise(T.matmul(x, layer.ff_w1), layer.ff_b1))
        ff = T.add_rowwise(T.matmul(hidden, layer.ff_w2), layer.ff_b2)
        if dropping:
            ff = T.dropout(ff, config.dropout_rate, rng)
        x = T.layer_norm(T.add(x, ff), layer.ln2_gain, layer.ln2_bias)
    return x


def plan_masking(
    ids: Sequence[int],
    mask_prob: float,
    vocab_size: int,
    rng: np.random.Generator,
) -> tuple[list[int], list[int]]:
    """Choose and corrupt max(1, floor(mask_prob*n)) positions.

    Of the selected positions, floor(0.8k) become [MASK], floor(0.1k) a
    random non-reserved id, and the remainder stay unchanged.
    """
    n = len(ids)
    count = max(1, int(mask_prob * n))
    positions = [int(p) for p in rng.choice(n, size=count, replace=False)]
    n_masked = int(0.8 * count)
    n_random = int(0.1 * count)
    corrupted = list(ids)
    for j, pos in enumerate(positions):
        if j < n_masked:
            corrupted[pos] = MASK
        elif j < n_masked + n_random:
            corrupted[pos] = int(rng.integers(4, vocab_size))
    return corrupted, positions


def mlm_step(
    batch: Sequence[Sequence[int]],
    params: EncoderParams,
    config: EncoderConfig,
    mask_prob: float = 0.15,
    seed: int = 0,
) -> Tensor:
    """Mean cross-entropy of reconstructing the selected positions of a batch."""
    if not batch:
        raise ContractError("mlm_step requires a nonempty batch")
    if not 0.0 < mask_prob < 1.0:
        raise ContractError(f"mask_prob must be in (0, 1), got {mask_prob}")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    per_position_losses = []
    total_positions = 0
    for i, ids in enumerate(batch):
        corrupted, positions = plan_masking(ids, mask_prob, config.vocab_size, rng)
        h = encode(
            corrupted, params, config, training=True,
            dropout_seed=None if config.dropout_rate == 0.0 else seed * 100003 + i,
        )
        logits = T.matmul(T.rows(h, positions), params.mlm_proj)
        targets = [ids[p] for p in positions]
        ce = T.sub(
            T.logsumexp_rows(logits),
            T.take2d(logits, range(len(positions)), targets),
        )
        per_position_losses.append(ce.sum())
        total_positions += len(positions)
    total = per_position_losses[0]
    for extra in per_position_losses[1:]:
        total = T.add(total, extra)
    return T.scale(total, 1.0 / total_positions)
