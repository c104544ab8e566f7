"""Adaptive-rank compression and arithmetic on low-rank blocks.

Compression uses a truncated column-pivoted Householder QR with running
column-norm downdating, stopped as soon as the uncompressed remainder drops
below the relative Frobenius tolerance.  Sums of low-rank blocks are
re-compressed on every addition via rounded addition (concatenate factors,
thin QR both sides, SVD of the small core, truncate).  All outputs keep the
left factor column-orthonormal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flops
from .core import LowRankBlock, Block

__all__ = [
    "ToleranceConfig",
    "compress_rrqr",
    "rounded_add",
    "lr_add_into_dense",
    "lr_times_dense",
    "lr_times_lr",
]


@dataclass(frozen=True)
class ToleranceConfig:
    """Relative Frobenius tolerance plus the dense-fallback rank cutoff."""

    epsilon: float
    dense_fallback_fraction: float = 0.5

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0 < self.dense_fallback_fraction <= 1:
            raise ValueError("dense_fallback_fraction must lie in (0, 1]")


def _householder(x: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Reflector (v, tau, beta) with v[0] = 1 and (I - tau v v.T) x = beta e1.

    beta = -sign(x[0]) * ||x||, x[0] = 0 counted positive; tau = 0 when the
    tail is already zero.
    """
    x0 = x[0]
    sigma = x[1:] @ x[1:]
    v = x.copy()
    v[0] = 1.0
    if sigma == 0.0:
        return v, 0.0, x0
    mu = np.sqrt(x0 * x0 + sigma)
    beta = -mu if x0 >= 0 else mu
    v0 = x0 - beta
    v[1:] /= v0
    tau = (beta - x0) / beta
    return v, tau, beta


def truncated_pivoted_qr(
    a: np.ndarray, epsilon: float, max_rank: int
) -> tuple[np.ndarray, np.ndarray] | None:
    """Rank-adaptive RRQR: a ~ u @ v.T with ||a - u v.T||_F <= epsilon ||a||_F.

    Pivots on the largest running column norm (ties to the lowest index) and
    stops at the smallest rank meeting the bound.  Returns None if that rank
    would exceed max_rank.  u is column-orthonormal.
    """
    m, n = a.shape
    fro2 = float(np.sum(a * a))
    if fro2 == 0.0:
        return np.zeros((m, 0)), np.zeros((n, 0))
    thresh2 = (epsilon * epsilon) * fro2

    r_work = np.array(a, dtype=float, copy=True)
    piv = np.arange(n)
    col2 = np.sum(r_work * r_work, axis=0)
    col2_orig = col2.copy()
    vs: list[np.ndarray] = []
    taus: list[float] = []

    rank = 0
    limit = min(m, n)
    remaining = fro2
    while remaining > thresh2:
        if rank >= limit:
            # factorization exhausted: remainder is exactly zero, the
            # running estimate merely drifted
            break
        if rank >= max_rank:
            return None
        k = rank
        j = k + int(np.argmax(col2[k:]))
        if j != k:
            r_work[:, [k, j]] = r_work[:, [j, k]]
            col2[[k, j]] = col2[[j, k]]
            col2_orig[[k, j]] = col2_orig[[j, k]]
            piv[[k, j]] = piv[[j, k]]
        v, tau, beta = _householder(r_work[k:, k])
        if tau != 0.0:
            w = tau * (v @ r_work[k:, k + 1 :])
            r_work[k:, k + 1 :] -= np.outer(v, w)
        r_work[k, k] = beta
        r_work[k + 1 :, k] = 0.0
        vs.append(v)
        taus.append(tau)
        rank += 1
        # downdate running squared column norms, recomputing on cancellation
        if k + 1 < n:
            dropped = r_work[k, k + 1 :] ** 2
            col2[k + 1 :] -= dropped
            unsafe = col2[k + 1 :] < 1e-14 * col2_orig[k + 1 :]
            if np.any(unsafe):
                idx = k + 1 + np.nonzero(unsafe)[0]
                col2[idx] = np.sum(r_work[k + 1 :, idx] ** 2, axis=0)
        remaining = max(float(np.sum(col2[rank:])), 0.0) if rank < n else 0.0

    # u = leading `rank` columns of Q, accumulated in reverse
    u = np.zeros((m, rank))
    u[np.arange(rank), np.arange(rank)] = 1.0
    for k in range(rank - 1, -1, -1):
        if taus[k] == 0.0:
            continue
        v = vs[k]
        w = taus[k] * (v @ u[k:, :])
        u[k:, :] -= np.outer(v, w)

    v_fac = np.zeros((n, rank))
    v_fac[piv, :] = r_work[:rank, :].T
    flops.add("compress", flops.rrqr_cost(m, n, rank))
    return u, v_fac


def compress_rrqr(a: np.ndarray, cfg: ToleranceConfig) -> Block:
    """Compress a dense block, falling back to dense when the rank is large.

    The result is low-rank only if the adaptive rank stays within
    dense_fallback_fraction of the block size; otherwise the input is
    returned unchanged.  A zero block compresses to rank 0.
    """
    m, n = a.shape
    max_rank = int(cfg.dense_fallback_fraction * min(m, n))
    out = truncated_pivoted_qr(a, cfg.epsilon, max_rank)
    if out is None:
        return a
    return LowRankBlock(*out)


def compress_to_lowrank(a: np.ndarray, epsilon: float) -> LowRankBlock:
    """Compression without the dense fallback, for cells whose stored form is
    fixed low-rank by the structure map."""
    out = truncated_pivoted_qr(a, epsilon, min(a.shape))
    assert out is not None
    return LowRankBlock(*out)


def _lr_norm(a: LowRankBlock) -> float:
    """Frobenius norm from the factors without expanding the block."""
    if a.rank == 0:
        return 0.0
    gram = a.u.T @ a.u
    return float(np.sqrt(max(np.sum((a.v @ gram) * a.v), 0.0)))


# singular values this far below the operand magnitudes are rounding noise
NOISE_FLOOR = 64 * np.finfo(float).eps


def rounded_add(
    a: LowRankBlock, bk: LowRankBlock, cfg: ToleranceConfig
) -> LowRankBlock:
    """Sum of two low-rank blocks, re-compressed to the tolerance.

    Concatenates the factor pairs, takes thin QRs of both sides, an SVD of
    the small core, and keeps the smallest rank whose discarded singular
    values carry at most epsilon of the sum's Frobenius norm.  Singular
    values indistinguishable from rounding noise of the operands are
    dropped, so exact cancellation yields rank 0.
    """
    if (a.rows, a.cols) != (bk.rows, bk.cols):
        raise ValueError("operands must have equal dimensions")
    if a.rank == 0 and bk.rank == 0:
        return LowRankBlock(a.u, a.v)
    m, n = a.rows, a.cols
    c = a.rank + bk.rank
    u_cat = np.hstack([a.u, bk.u])
    v_cat = np.hstack([a.v, bk.v])
    qu, ru = np.linalg.qr(u_cat)
    qv, rv = np.linalg.qr(v_cat)
    core = ru @ rv.T
    uu, sigma, vvt = np.linalg.svd(core)
    flops.add(
        "rounded_add",
        flops.qr_cost(m, c)
        + flops.qr_cost(n, c)
        + flops.mm_cost(core.shape[0], c, core.shape[1])
        + flops.svd_cost(core.shape[0]),
    )

    floor = NOISE_FLOOR * np.hypot(_lr_norm(a), _lr_norm(bk))
    significant = int(np.sum(sigma > floor))
    total2 = float(np.sum(sigma * sigma))
    if total2 == 0.0 or significant == 0:
        return LowRankBlock(np.zeros((m, 0)), np.zeros((n, 0)))
    # tail2[k] = energy dropped when keeping the first k singular values
    tail2 = np.concatenate([np.cumsum((sigma * sigma)[::-1])[::-1], [0.0]])
    thresh2 = (cfg.epsilon * cfg.epsilon) * total2
    rank = min(int(np.searchsorted(-tail2, -thresh2)), significant)
    if rank == 0:
        return LowRankBlock(np.zeros((m, 0)), np.zeros((n, 0)))
    u_out = qu @ uu[:, :rank]
    v_out = qv @ (vvt[:rank, :].T * sigma[:rank])
    flops.add(
        "rounded_add",
        flops.mm_cost(m, qu.shape[1], rank) + flops.mm_cost(n, qv.shape[1], rank),
    )
    return LowRankBlock(u_out, v_out)


def lr_add_into_dense(d: np.ndarray, a: LowRankBlock) -> np.ndarray:
    """Dense + low-rank, expanding the factors (the Low-Rank + Dense rule)."""
    if d.shape != (a.rows, a.cols):
        raise ValueError("operands must have equal dimensions")
    if a.rank == 0:
        return d.copy()
    flops.add("expand", flops.mm_cost(a.rows, a.rank, a.cols))
    return d + a.u @ a.v.T


def lr_times_dense(a: LowRankBlock, d: np.ndarray, side: str) -> LowRankBlock:
    """Product of a low-rank block and a dense block, rank unchanged.

    side="right" computes a @ d keeping the left factor; side="left"
    computes d @ a, re-orthonormalizing the new left factor by a thin QR
    whose triangle is folded into v.
    """
    if side == "right":
        if a.cols != d.shape[0]:
            raise ValueError("inner dimensions do not conform")
        if a.rank == 0:
            return LowRankBlock(a.u, np.zeros((d.shape[1], 0)))
        flops.add("lr_mul", flops.mm_cost(d.shape[1], a.cols, a.rank))
        return LowRankBlock(a.u, d.T @ a.v)
    if side == "left":
        if d.shape[1] != a.rows:
            raise ValueError("inner dimensions do not conform")
        if a.rank == 0:
            return LowRankBlock(np.zeros((d.shape[0], 0)), a.v)
        qn, rr = np.linalg.qr(d @ a.u)
        flops.add(
            "lr_mul",
            flops.mm_cost(d.shape[0], a.rows, a.rank)
            + flops.qr_cost(d.shape[0], a.rank)
            + flops.mm_cost(a.cols, a.rank, a.rank),
        )
        return LowRankBlock(qn, a.v @ rr.T)
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def lr_times_lr(a: LowRankBlock, bk: LowRankBlock) -> LowRankBlock:
    """Product of two low-rank blocks at representation rank min(ra, rb).

    Keeps a's left factor when it is the smaller one; otherwise folds the
    core through a thin QR so the output left factor stays orthonormal.
    No tolerance-based truncation happens here.
    """
    if a.cols != bk.rows:
        raise ValueError("inner dimensions do not conform")
    if a.rank == 0 or bk.rank == 0:
        return LowRankBlock(np.zeros((a.rows, 0)), np.zeros((bk.cols, 0)))
    core = bk.u.T @ a.v
    flops.add("lr_mul", flops.mm_cost(bk.rank, a.cols, a.rank))
    if a.rank <= bk.rank:
        flops.add("lr_mul", flops.mm_cost(bk.cols, bk.rank, a.rank))
        return LowRankBlock(a.u, bk.v @ core)
    qn, rr = np.linalg.qr(a.u @ core.T)
    flops.add(
        "lr_mul",
        flops.mm_cost(a.rows, a.rank, bk.rank)
        + flops.qr_cost(a.rows, bk.rank)
        + flops.mm_cost(bk.cols, bk.rank, bk.rank),
    )
    return LowRankBlock(qn, bk.v @ rr.T)
