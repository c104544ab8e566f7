"""Dense panel kernels: compact-WY Householder QR, triangular-pentagonal
updates, and modified Gram-Schmidt panel QR.

The Householder kernels wrap LAPACK's geqrt/tpqrt, which use the
beta = -sign(x1)*||x|| reflector convention (x1 = 0 counts as positive) and
the forward columnwise T accumulation.  Applications are explicit GEMM
chains so the flop model can follow them.  All functions are pure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from . import flops

__all__ = [
    "WYReflector",
    "TPReflector",
    "RankDeficiencyWarning",
    "qr_compact_wy",
    "apply_wy",
    "apply_wy_transpose",
    "tp_qr",
    "apply_tp",
    "apply_tp_transpose",
    "mgs_panel_qr",
]


class RankDeficiencyWarning(UserWarning):
    """Panel column collapsed below the representable range during MGS."""


@dataclass
class WYReflector:
    """Accumulated Householder product Q = I - y @ t @ y.T.

    y is m x n unit lower trapezoidal (unit diagonal stored explicitly),
    t is n x n upper triangular.
    """

    y: np.ndarray
    t: np.ndarray

    @property
    def rows(self) -> int:
        return self.y.shape[0]

    @property
    def cols(self) -> int:
        return self.y.shape[1]

    def q_matrix(self) -> np.ndarray:
        """Materialized m x m orthogonal factor (testing / metrics scale)."""
        return np.eye(self.rows) - self.y @ self.t @ self.y.T


@dataclass
class TPReflector:
    """Structured product Q = I - [I; y] @ t @ [I; y].T.

    The implicit identity sits over an n x n triangle; y holds the k x n
    rows that act on the block being annihilated.
    """

    y: np.ndarray
    t: np.ndarray

    @property
    def bot_rows(self) -> int:
        return self.y.shape[0]

    @property
    def cols(self) -> int:
        return self.y.shape[1]

    def q_matrix(self) -> np.ndarray:
        n, k = self.cols, self.bot_rows
        yfull = np.vstack([np.eye(n), self.y])
        return np.eye(n + k) - yfull @ self.t @ yfull.T


def qr_compact_wy(a: np.ndarray) -> tuple[WYReflector, np.ndarray]:
    """Householder QR of a tall panel, Q kept as a compact-WY pair.

    Returns (reflector, r) with (I - y t y.T) @ [r; 0] == a to backward
    stable accuracy.  Rejects wide inputs.
    """
    m, n = a.shape
    if m < n:
        raise ValueError(f"panel must be tall: got {m} x {n}")
    packed, t, info = lapack.dgeqrt(n, a)
    if info != 0:
        raise RuntimeError(f"geqrt failed with info={info}")
    r = np.ascontiguousarray(np.triu(packed[:n, :]))
    y = np.tril(packed, -1)
    np.fill_diagonal(y, 1.0)
    flops.add("panel_qr", flops.qr_cost(m, n) + flops.tgen_cost(m, n))
    return WYReflector(np.ascontiguousarray(y), np.ascontiguousarray(np.triu(t))), r


def _check_rows(ref_rows: int, c: np.ndarray, what: str) -> None:
    if c.ndim != 2 or c.shape[0] != ref_rows:
        raise ValueError(f"{what}: operand rows {c.shape} do not match {ref_rows}")


def _apply_wy(ref: WYReflector, c: np.ndarray, t: np.ndarray) -> np.ndarray:
    m, n = ref.y.shape
    nc = c.shape[1]
    w = t @ (ref.y.T @ c)
    flops.add("apply_wy", flops.mm_cost(n, m, nc) + flops.mm_cost(n, n, nc) + flops.mm_cost(m, n, nc))
    return c - ref.y @ w


def apply_wy(ref: WYReflector, c: np.ndarray) -> np.ndarray:
    """Left-multiply by Q = I - y t y.T."""
    _check_rows(ref.rows, c, "apply_wy")
    return _apply_wy(ref, c, ref.t)


def apply_wy_transpose(ref: WYReflector, c: np.ndarray) -> np.ndarray:
    """Left-multiply by Q.T, i.e. c - y @ (t.T @ (y.T @ c))."""
    _check_rows(ref.rows, c, "apply_wy_transpose")
    return _apply_wy(ref, c, ref.t.T)


def tp_qr(r_top: np.ndarray, a_bot: np.ndarray) -> tuple[TPReflector, np.ndarray]:
    """QR of [r_top; a_bot] with r_top upper triangular.

    Exploits the structure: the returned reflector has the implicit-identity
    top so only the k x n part over a_bot is stored.  Q.T @ [r_top; a_bot]
    == [r_new; 0].
    """
    n = r_top.shape[0]
    if r_top.shape != (n, n):
        raise ValueError("top block must be square upper triangular")
    if a_bot.ndim != 2 or a_bot.shape[1] != n:
        raise ValueError(
            f"bottom block has {a_bot.shape[1]} cols, expected {n}"
        )
    k = a_bot.shape[0]
    if k == 0:
        return TPReflector(np.zeros((0, n)), np.zeros((n, n))), r_top.copy()
    r_new, y, t, info = lapack.dtpqrt(0, n, r_top, a_bot)
    if info != 0:
        raise RuntimeError(f"tpqrt failed with info={info}")
    flops.add("update_qr", flops.qr_cost(n + k, n) + flops.tgen_cost(n + k, n))
    return (
        TPReflector(np.ascontiguousarray(y), np.ascontiguousarray(np.triu(t))),
        np.ascontiguousarray(np.triu(r_new)),
    )


def _apply_tp(
    ref: TPReflector, c_top: np.ndarray, c_bot: np.ndarray, t: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    k, n = ref.y.shape
    _check_rows(n, c_top, "apply_tp top")
    _check_rows(k, c_bot, "apply_tp bottom")
    if c_top.shape[1] != c_bot.shape[1]:
        raise ValueError("top/bottom column counts differ")
    nc = c_top.shape[1]
    w = t @ (c_top + ref.y.T @ c_bot)
    flops.add(
        "apply_tp",
        flops.mm_cost(n, k, nc) + flops.mm_cost(n, n, nc) + flops.mm_cost(k, n, nc),
    )
    return c_top - w, c_bot - ref.y @ w


def apply_tp(
    ref: TPReflector, c_top: np.ndarray, c_bot: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Left-multiply the stacked pair by Q."""
    return _apply_tp(ref, c_top, c_bot, ref.t)


def apply_tp_transpose(
    ref: TPReflector, c_top: np.ndarray, c_bot: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Left-multiply the stacked pair by Q.T."""
    return _apply_tp(ref, c_top, c_bot, ref.t.T)


UNDERFLOW_FLOOR = 1e-300


def mgs_panel_qr(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Modified Gram-Schmidt QR of a tall panel.

    Each column is orthogonalized against the already-computed q columns one
    at a time, re-projecting the running residual (not the original column).
    Residual accuracy is backward stable; orthogonality of q degrades with
    the conditioning of a, which is the behaviour callers probe for.  A
    diagonal entry of r underflowing below 1e-300 signals rank deficiency
    with a RankDeficiencyWarning but does not abort.
    """
    m, n = a.shape
    if m < n:
        raise ValueError(f"panel must be tall: got {m} x {n}")
    q = np.array(a, dtype=float, copy=True)
    r = np.zeros((n, n))
    for j in range(n):
        w = q[:, j]
        for i in range(j):
            rij = q[:, i] @ w
            w -= rij * q[:, i]
            r[i, j] = rij
        rjj = np.linalg.norm(w)
        if rjj < UNDERFLOW_FLOOR:
            warnings.warn(
                f"panel column {j} collapsed (|r_jj|={rjj:.3e})",
                RankDeficiencyWarning,
                stacklevel=2,
            )
            r[j, j] = rjj
            continue
        r[j, j] = rjj
        q[:, j] = w / rjj
    flops.add("panel_qr", flops.mgs_cost(m, n))
    return q, r
