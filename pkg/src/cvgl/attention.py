"""Satellite-wise cross-attention.

Each satellite candidate queries the UAV scene tokens; keys and values are
projected once from the UAV tokens and shared. Candidates never see each
other, so one candidate's output depends only on its own tokens, the UAV
tokens and the weights.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, InputError


@dataclass(frozen=True, eq=False)
class TokenMatrix:
    tokens: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        t = np.array(self.tokens, dtype=np.float64, copy=True)
        if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] < 1:
            raise InputError(f"token matrix must be L×D with L, D >= 1, got shape {t.shape}")
        if not np.isfinite(t).all():
            raise InputError(f"token matrix {self.source_id!r} has non-finite entries")
        t.setflags(write=False)
        object.__setattr__(self, "tokens", t)

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True, eq=False)
class AttentionWeights:
    """Bias-free projections; a token ``t`` (row) maps to ``W @ t``."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    head_count: int = 1

    def __post_init__(self):
        mats = [np.array(m, dtype=np.float64, copy=True) for m in (self.w_q, self.w_k, self.w_v)]
        D = mats[0].shape[0]
        for m in mats:
            if m.shape != (D, D):
                raise DimensionMismatch(f"projection matrices must be D×D, got {m.shape}")
            m.setflags(write=False)
        if self.head_count < 1 or D % self.head_count:
            raise DimensionMismatch(f"D={D} is not divisible by head_count={self.head_count}")
        object.__setattr__(self, "w_q", mats[0])
        object.__setattr__(self, "w_k", mats[1])
        object.__setattr__(self, "w_v", mats[2])

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.head_count

    @classmethod
    def identity(cls, dim: int, head_count: int = 1) -> "AttentionWeights":
        eye = np.eye(dim)
        return cls(eye, eye, eye, head_count)

    @classmethod
    def random(cls, dim: int, seed: int = 0, head_count: int = 1) -> "AttentionWeights":
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((3, dim, dim)) / math.sqrt(dim)
        return cls(w[0], w[1], w[2], head_count)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    s = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, h: int) -> np.ndarray:
    L, D = x.shape
    return x.reshape(L, h, D // h).transpose(1, 0, 2)   # (h, L, dk)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, L, dk = x.shape
    return x.transpose(1, 0, 2).reshape(L, h * dk)


def _check_dims(sat_tokens: Sequence[TokenMatrix], uav_tokens: TokenMatrix, weights: AttentionWeights):
    D = weights.dim
    if uav_tokens.dim != D:
        raise DimensionMismatch(f"UAV tokens have D={uav_tokens.dim}, weights expect {D}")
    for s in sat_tokens:
        if s.dim != D:
            raise DimensionMismatch(f"satellite tokens {s.source_id!r} have D={s.dim}, weights expect {D}")


def attention_probabilities(queries: np.ndarray, keys: np.ndarray, head_count: int = 1) -> np.ndarray:
    """Per-head row-stochastic attention maps, shape (h, Lq, Lk)."""
    dk = queries.shape[1] // head_count
    q = _split_heads(queries, head_count)
    k = _split_heads(keys, head_count)
    return _softmax_rows(q @ k.transpose(0, 2, 1) / math.sqrt(dk))


def satellite_wise_attention(
    sat_tokens: Sequence[TokenMatrix],
    uav_tokens: TokenMatrix,
    weights: AttentionWeights,
    max_workers: Optional[int] = None,
) -> list[TokenMatrix]:
    """Residual cross-attention of every candidate onto the shared UAV keys/values.

    ``output_i = softmax(Q_i K^T / sqrt(d_k)) V + sat_i`` with heads
    concatenated. The UAV tokens are read-only here.
    """
    _check_dims(sat_tokens, uav_tokens, weights)
    h = weights.head_count
    K = uav_tokens.tokens @ weights.w_k.T
    V = _split_heads(uav_tokens.tokens @ weights.w_v.T, h)

    def one(sat: TokenMatrix) -> TokenMatrix:
        Q = sat.tokens @ weights.w_q.T
        A = attention_probabilities(Q, K, h)
        return TokenMatrix(_merge_heads(A @ V) + sat.tokens, sat.source_id)

    if max_workers and max_workers > 1 and len(sat_tokens) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(one, sat_tokens))
    return [one(s) for s in sat_tokens]


def masked_global_oracle(
    sat_tokens: Sequence[TokenMatrix],
    uav_tokens: TokenMatrix,
    weights: AttentionWeights,
    masked: bool = True,
) -> list[TokenMatrix]:
    """Dense attention over the concatenation of all tokens.

    With ``masked`` set, satellite queries are forbidden from attending to any
    satellite key (their own included), which must reproduce
    :func:`satellite_wise_attention`. ``masked=False`` is plain global
    attention, kept as a negative control and as the dense cost baseline.
    """
    _check_dims(sat_tokens, uav_tokens, weights)
    if not sat_tokens:
        return []
    h = weights.head_count
    n_u = uav_tokens.length
    X = np.vstack([uav_tokens.tokens] + [s.tokens for s in sat_tokens])
    Q = _split_heads(X @ weights.w_q.T, h)
    K = _split_heads(X @ weights.w_k.T, h)
    V = _split_heads(X @ weights.w_v.T, h)
    scores = Q @ K.transpose(0, 2, 1) / math.sqrt(weights.head_dim)
    if masked:
        scores[:, n_u:, n_u:] = -np.inf
    out = _merge_heads(_softmax_rows(scores) @ V) + X
    results = []
    start = n_u
    for s in sat_tokens:
        results.append(TokenMatrix(out[start:start + s.length], s.source_id))
        start += s.length
    return results


class FlopCount(NamedTuple):
    attention: int
    projection: int

    @property
    def total(self) -> int:
        return self.attention + self.projection


def count_kernel_flops(n_uav: int, sat_sizes: Sequence[int], dim: int, variant: str) -> FlopCount:
    """Score+value flops, with projection flops reported separately."""
    if n_uav < 1 or dim < 1 or any(n < 1 for n in sat_sizes):
        raise InputError("sizes must be positive")
    n_s = int(sum(sat_sizes))
    if variant == "satellite_wise":
        return FlopCount(2 * dim * n_uav * n_s, 2 * dim * dim * (n_s + 2 * n_uav))
    if variant == "global":
        n = n_uav + n_s
        return FlopCount(2 * dim * n * n, 2 * dim * dim * 3 * n)
    raise InputError(f"unknown variant {variant!r}")


BENCH_FIELDS = ("variant", "K", "N_u", "N_s", "D", "flops", "wall_ns")


def _time_ns(fn, repeats: int) -> int:
    best = None
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        dt = time.perf_counter_ns() - t0
        best = dt if best is None else min(best, dt)
    return int(best)


def run_benchmark(
    k_values: Sequence[int] = (1, 2, 4, 8, 16),
    n_uav: int = 256,
    n_sat: int = 256,
    dim: int = 64,
    repeats: int = 5,
    seed: int = 0,
    variants: Sequence[str] = ("satellite_wise", "global"),
) -> list[dict]:
    """Wall-clock sweep over candidate counts; best-of-``repeats`` timings."""
    rng = np.random.default_rng(seed)
    weights = AttentionWeights.random(dim, seed)
    uav = TokenMatrix(rng.standard_normal((n_uav, dim)), "uav")
    pool = [TokenMatrix(rng.standard_normal((n_sat, dim)), f"sat{i}") for i in range(max(k_values))]
    rows = []
    for variant in variants:
        for k in k_values:
            sats = pool[:k]
            if variant == "satellite_wise":
                fn = lambda: satellite_wise_attention(sats, uav, weights)  # noqa: E731
            else:
                fn = lambda: masked_global_oracle(sats, uav, weights, masked=False)  # noqa: E731
            fn()  # warm-up
            flops = count_kernel_flops(n_uav, [n_sat] * k, dim, variant).attention
            rows.append(dict(variant=variant, K=k, N_u=n_uav, N_s=n_sat, D=dim,
                             flops=flops, wall_ns=_time_ns(fn, repeats)))
    return rows
