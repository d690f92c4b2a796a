"""Linear-chain CRF head over BIO tags.

Scores a tag sequence as start + emissions + adjacent-tag transitions + stop,
normalizes with the exact forward algorithm in log space, and decodes with
Viterbi.  ``brute_force_oracle`` enumerates every sequence and exists purely
to cross-check the dynamic programs.

All transitions are permitted: BIO validity is learned, not hard-coded, and
repair-mode span decoding handles any residual violations downstream.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor


@dataclass
class CRFParams:
    w_emit: Tensor  # [d_model, K]
    b_emit: Tensor  # [K]
    trans: Tensor  # [K, K]; trans[a, b] scores tag b following tag a
    start: Tensor  # [K]
    stop: Tensor  # [K]

    def named(self) -> dict[str, Tensor]:
        return {
            "w_emit": self.w_emit,
            "b_emit": self.b_emit,
            "trans": self.trans,
            "start": self.start,
            "stop": self.stop,
        }


def init_crf(d_model: int, num_tags: int, seed: int) -> CRFParams:
    from .encoder import xavier

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    zeros = lambda *shape: Tensor(np.zeros(shape), requires_grad=True)
    return CRFParams(
        w_emit=xavier(rng, d_model, num_tags),
        b_emit=zeros(num_tags),
        trans=zeros(num_tags, num_tags),
        start=zeros(num_tags),
        stop=zeros(num_tags),
    )


def emissions(h: Tensor, params: CRFParams) -> Tensor:
    """Per-position tag scores: h @ w_emit + b_emit -> [n, K]."""
    if h.values.ndim != 2 or h.shape[1] != params.w_emit.shape[0]:
        raise ShapeError(f"emissions: h {h.shape} vs w_emit {params.w_emit.shape}")
    return T.add_rowwise(T.matmul(h, params.w_emit), params.b_emit)


def _check_sequence(e: Tensor, y: Sequence[int] | None = None) -> int:
    n = e.shape[0]
    if n < 1:
        raise ContractError("CRF requires at least one position")
    if y is not None and len(y) != n:
        raise ContractError(f"{len(y)} tags for {n} positions")
    return n


def sequence_score(
    e: Tensor, trans: Tensor, start: Tensor, stop: Tensor, y: Sequence[int]
) -> Tensor:
    """start[y1] + sum_i e[i, yi] + sum_i trans[y(i-1), yi] + stop[yn]."""
    n = _check_sequence(e, y)
    score = T.add(
        T.take2d(e, range(n), y).sum(),
        T.add(T.take1d(start, [y[0]]).sum(), T.take1d(stop, [y[-1]]).sum()),
    )
    if n > 1:
        score = T.add(score, T.take2d(trans, y[:-1], y[1:]).sum())
    return score


def log_partition(e: Tensor, trans: Tensor, start: Tensor, stop: Tensor) -> Tensor:
    """Exact log of the summed exponentiated scores over all K^n sequences.

    Forward recursion: alpha1 = start + e[0];
    alpha_i[b] = e[i, b] + logsumexp_a(alpha_(i-1)[a] + trans[a, b]).
    """
    n = _check_sequence(e)
    alpha = T.add(start, T.row1d(e, 0))
    trans_t = T.transpose(trans)
    for i in range(1, n):
        # row b of (trans_t + alpha) holds alpha[a] + trans[a, b] over a
        alpha = T.add(T.row1d(e, i), T.logsumexp_rows(T.add_rowwise(trans_t, alpha)))
    return T.logsumexp(T.add(alpha, stop))


def crf_nll(
    e: Tensor, trans: Tensor, start: Tensor, stop: Tensor, y: Sequence[int]
) -> Tensor:
    """Negative log-likelihood: log_partition - sequence_score(y); always >= 0."""
    return T.sub(log_partition(e, trans, start, stop), sequence_score(e, trans, start, stop, y))


def viterbi(
    e: Tensor, trans: Tensor, start: Tensor, stop: Tensor
) -> tuple[list[int], float]:
    """Highest-scoring tag sequence; ties break toward the lower tag index."""
    ev, tv = e.values, trans.values
    n = _check_sequence(e)
    score = start.values + ev[0]
    backptr = np.zeros((n, ev.shape[1]), dtype=np.intp)
    for i in range(1, n):
        cand = score[:, None] + tv
        backptr[i] = cand.argmax(axis=0)  # argmax picks the lowest index on ties
        score = ev[i] + cand.max(axis=0)
    final = score + stop.values
    best = int(final.argmax())
    tags = [best]
    for i in range(n - 1, 0, -1):
        tags.append(int(backptr[i, tags[-1]]))
    tags.reverse()
    return tags, float(final[best])


def brute_force_oracle(
    e: Tensor, trans: Tensor, start: Tensor, stop: Tensor
) -> tuple[float, list[int], float]:
    """Exhaustive (log partition, best sequence, best score) over all sequences.

    The best-sequence tie break minimizes (yn, ..., y1) lexicographically,
    which is exactly what backpointer decoding with lowest-index argmax does.
    """
    n = _check_sequence(e)
    k = e.shape[1]
    if k**n > 100_000:
        raise ContractError(f"brute force over {k}^{n} sequences is too large")
    ev, tv, sv, pv = e.values, trans.values, start.values, stop.values
    scores = []
    best_seq: tuple[int, ...] | None = None
    best_score = -np.inf
    for seq in itertools.product(range(k), repeat=n):
        score = sv[seq[0]] + pv[seq[-1]] + sum(ev[i, t] for i, t in enumerate(seq))
        score += sum(tv[a, b] for a, b in zip(seq, seq[1:]))
        scores.append(score)
        if score > best_score or (
            score == best_score and tuple(reversed(seq)) < tuple(reversed(best_seq))
        ):
            best_score, best_seq = score, seq
    arr = np.array(scores)
    m = arr.max()
    log_z = float(m + np.log(np.exp(arr - m).sum()))
    return log_z, list(best_seq), float(best_score)
