"""The three QR factorizations over a block low-rank grid.

Each algorithm is decomposed into block-level tasks held by a state object
(one method per task kind), so the sequential loop, fork-join and task-DAG
engines drive the exact same code.  Every task accumulates in a fixed order,
which makes results bitwise reproducible for any schedule that respects the
declared read/write sets.

Kind-dispatch helpers implement the dense / low-rank product and accumulation
rules: products never truncate, every low-rank + low-rank addition is a
rounded addition, and writes are coerced to the structural kind of the target
cell (expand into dense cells, re-compress into low-rank cells).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import flops
from .core import (
    BlrMatrix,
    BlrStructure,
    Block,
    LowRankBlock,
    block_to_dense,
    is_lowrank,
    zero_block,
)
from .kernels import (
    WYReflector,
    apply_wy,
    apply_wy_transpose,
    mgs_panel_qr,
    qr_compact_wy,
    tp_qr,
)
from .lowrank import (
    ToleranceConfig,
    compress_to_lowrank,
    lr_add_into_dense,
    rounded_add,
)

__all__ = [
    "ReflectorColumn",
    "TileReflectorStore",
    "FactorizationResult",
    "triangularize_block_column",
    "apply_block_column_reflector",
    "blocked_householder_qr",
    "blocked_apply_q",
    "tiled_householder_qr",
    "tiled_apply_q",
    "blocked_mgs_qr",
    "BlockedState",
    "TiledState",
    "MgsState",
]


# ---------------------------------------------------------------------------
# kind-dispatch block arithmetic
# ---------------------------------------------------------------------------


def _mul(x: Block, y: Block) -> Block:
    """x @ y for any dense / low-rank combination (no truncation)."""
    if is_lowrank(x):
        if is_lowrank(y):
            core = y.u.T @ x.v
            flops.add("lr_mul", flops.mm_cost(y.rank, x.cols, x.rank))
            flops.add("lr_mul", flops.mm_cost(y.cols, y.rank, x.rank))
            return LowRankBlock(x.u, y.v @ core)
        flops.add("lr_mul", flops.mm_cost(y.shape[1], x.cols, x.rank))
        return LowRankBlock(x.u, y.T @ x.v)
    if is_lowrank(y):
        flops.add("lr_mul", flops.mm_cost(x.shape[0], x.shape[1], y.rank))
        return LowRankBlock(x @ y.u, y.v)
    flops.add("gemm", flops.mm_cost(x.shape[0], x.shape[1], y.shape[1]))
    return x @ y


def _mul_t(x: Block, y: Block) -> Block:
    """x.T @ y for any dense / low-rank combination (no truncation)."""
    if is_lowrank(x):
        if is_lowrank(y):
            core = y.u.T @ x.u
            flops.add("lr_mul", flops.mm_cost(y.rank, x.rows, x.rank))
            flops.add("lr_mul", flops.mm_cost(y.cols, y.rank, x.rank))
            return LowRankBlock(x.v, y.v @ core)
        flops.add("lr_mul", flops.mm_cost(y.shape[1], x.rows, x.rank))
        return LowRankBlock(x.v, y.T @ x.u)
    if is_lowrank(y):
        flops.add("lr_mul", flops.mm_cost(x.shape[1], x.shape[0], y.rank))
        return LowRankBlock(x.T @ y.u, y.v)
    flops.add("gemm", flops.mm_cost(x.shape[1], x.shape[0], y.shape[1]))
    return x.T @ y


def _dense_times(t: np.ndarray, s: Block) -> Block:
    """Dense t @ s keeping s's kind."""
    if is_lowrank(s):
        flops.add("lr_mul", flops.mm_cost(t.shape[0], t.shape[1], s.rank))
        return LowRankBlock(t @ s.u, s.v)
    flops.add("gemm", flops.mm_cost(t.shape[0], t.shape[1], s.shape[1]))
    return t @ s


def _neg(x: Block) -> Block:
    if is_lowrank(x):
        return LowRankBlock(x.u, -x.v)
    return -x


def _acc(s: Block, term: Block, cfg: ToleranceConfig) -> Block:
    """s + term; rounded addition for low-rank pairs, expansion otherwise."""
    if is_lowrank(s):
        if is_lowrank(term):
            return rounded_add(s, term, cfg)
        return lr_add_into_dense(term, s)
    if is_lowrank(term):
        return lr_add_into_dense(s, term)
    return s + term


def _sub_into(target: Block, term: Block, lowrank_cell: bool, cfg: ToleranceConfig) -> Block:
    """target - term, coerced to the cell's structural kind."""
    if lowrank_cell:
        if is_lowrank(term):
            return rounded_add(target, _neg(term), cfg)
        # dense update landing in a low-rank cell: expand, subtract, recompress
        dense = block_to_dense(target) - term
        return compress_to_lowrank(dense, cfg.epsilon)
    if is_lowrank(term):
        return lr_add_into_dense(target, _neg(term))
    return target - term


# ---------------------------------------------------------------------------
# result containers
# ---------------------------------------------------------------------------


@dataclass
class ReflectorColumn:
    """Block-column reflector: per-row Y blocks plus the shared T factor.

    The implied orthogonal factor is I - Y T Y.T with Y the stacked entries;
    an entry is low-rank exactly when the source block was.
    """

    col: int
    entries: list[tuple[int, Block]]
    t: np.ndarray


@dataclass
class TileReflectorStore:
    """Reflectors produced by the tiled algorithm.

    diag[k] holds the compact-WY pair of the k-th diagonal tile QR; updates
    [(i, k)] holds the (Y block, T) pair that annihilated tile (i, k).
    """

    diag: dict[int, WYReflector] = field(default_factory=dict)
    updates: dict[tuple[int, int], tuple[Block, np.ndarray]] = field(
        default_factory=dict
    )


@dataclass
class FactorizationResult:
    algorithm: str
    r: BlrMatrix
    q_columns: list[ReflectorColumn] | None = None
    q_tiles: TileReflectorStore | None = None
    q_explicit: BlrMatrix | None = None


# ---------------------------------------------------------------------------
# blocked Householder
# ---------------------------------------------------------------------------


def triangularize_block_column(
    a: BlrMatrix, k: int, cfg: ToleranceConfig
) -> ReflectorColumn:
    """Triangularize block-column k in place and return its reflector.

    Low-rank blocks contribute only their rank-many V-part rows to the
    stacked panel; the left factors re-enter through the per-block Y
    products, kept in factored form.
    """
    s = a.structure
    b = s.b
    diag = a.blocks[k][k]
    if is_lowrank(diag):
        raise ValueError(f"diagonal block {k} must be dense")
    parts: list[np.ndarray] = [diag]
    heights: list[int] = [b]
    for i in range(k + 1, s.p):
        blk = a.blocks[i][k]
        if is_lowrank(blk):
            parts.append(blk.v.T)
            heights.append(blk.rank)
        else:
            parts.append(blk)
            heights.append(b)
    panel = np.vstack(parts)
    ref, r_kk = qr_compact_wy(panel)

    entries: list[tuple[int, Block]] = []
    offset = 0
    for idx, i in enumerate(range(k, s.p)):
        h = heights[idx]
        y_i = ref.y[offset : offset + h, :]
        offset += h
        orig = a.blocks[i][k]
        if i != k and is_lowrank(orig):
            entries.append((i, LowRankBlock(orig.u, np.ascontiguousarray(y_i.T))))
        else:
            entries.append((i, np.ascontiguousarray(y_i)))

    a.blocks[k][k] = r_kk
    for i in range(k + 1, s.p):
        a.blocks[i][k] = zero_block(b, b, s.admissible[i, k])
    return ReflectorColumn(k, entries, ref.t)


def _refcol_apply_blr(
    ref: ReflectorColumn,
    a: BlrMatrix,
    j: int,
    cfg: ToleranceConfig,
    transpose: bool,
) -> None:
    """Reflector-column action on block-column j of a block low-rank operand."""
    s = a.structure
    acc: Block | None = None
    for i, y in ref.entries:
        term = _mul_t(y, a.blocks[i][j])
        acc = term if acc is None else _acc(acc, term, cfg)
    t_use = ref.t.T if transpose else ref.t
    z = _dense_times(t_use, acc)
    for i, y in ref.entries:
        upd = _mul(y, z)
        a.blocks[i][j] = _sub_into(a.blocks[i][j], upd, s.admissible[i, j], cfg)


def apply_block_column_reflector(
    ref: ReflectorColumn, a: BlrMatrix, j: int, cfg: ToleranceConfig
) -> None:
    """Apply the transposed block-column reflector to column j in place.

    The cross-block sum is accumulated in ascending block-row order with
    rounded additions; each block keeps the kind its cell declares.
    """
    if j <= ref.col:
        raise ValueError("update column must lie right of the reflector column")
    _refcol_apply_blr(ref, a, j, cfg, transpose=True)


class BlockedState:
    """Task container for the blocked Householder factorization."""

    def __init__(self, a: BlrMatrix, cfg: ToleranceConfig):
        if a.p < a.q:
            raise ValueError("grid must have at least as many block rows as columns")
        self.work = a.copy()
        self.cfg = cfg
        self.columns: list[ReflectorColumn] = []

    def panel(self, k: int) -> None:
        self.columns.append(triangularize_block_column(self.work, k, self.cfg))

    def apply_column(self, k: int, j: int) -> None:
        apply_block_column_reflector(self.columns[k], self.work, j, self.cfg)

    def result(self) -> FactorizationResult:
        return FactorizationResult("blocked-hh", self.work, q_columns=self.columns)


def blocked_householder_qr(a: BlrMatrix, cfg: ToleranceConfig) -> FactorizationResult:
    """Blocked Householder QR: one reflector column per block-column sweep."""
    state = BlockedState(a, cfg)
    for k in range(a.q):
        state.panel(k)
        for j in range(k + 1, a.q):
            state.apply_column(k, j)
    return state.result()


def _refcol_apply_dense(
    ref: ReflectorColumn, c: np.ndarray, b: int, transpose: bool
) -> None:
    """Apply one reflector column to a dense matrix, in place by row slices."""
    nc = c.shape[1]
    acc = np.zeros((ref.t.shape[0], nc))
    for i, y in ref.entries:
        ci = c[i * b : (i + 1) * b]
        if is_lowrank(y):
            if y.rank == 0:
                continue
            flops.add("apply_wy", flops.mm_cost(y.rank, y.rows, nc) + flops.mm_cost(y.cols, y.rank, nc))
            acc += y.v @ (y.u.T @ ci)
        else:
            flops.add("apply_wy", flops.mm_cost(y.shape[1], y.shape[0], nc))
            acc += y.T @ ci
    t_use = ref.t.T if transpose else ref.t
    z = t_use @ acc
    flops.add("apply_wy", flops.mm_cost(*ref.t.shape, nc))
    for i, y in ref.entries:
        sl = slice(i * b, (i + 1) * b)
        if is_lowrank(y):
            if y.rank == 0:
                continue
            flops.add("apply_wy", flops.mm_cost(y.rank, y.cols, nc) + flops.mm_cost(y.rows, y.rank, nc))
            c[sl] -= y.u @ (y.v.T @ z)
        else:
            flops.add("apply_wy", flops.mm_cost(y.shape[0], y.shape[1], nc))
            c[sl] -= y @ z


def blocked_apply_q(
    result: FactorizationResult,
    c: BlrMatrix | np.ndarray,
    transpose: bool,
    cfg: ToleranceConfig | None = None,
) -> BlrMatrix | np.ndarray:
    """Multiply by Q (or Q.T) from the blocked factorization.

    Dense operands are updated with plain dense arithmetic; block low-rank
    operands go through the same kind-aware updates as the factorization,
    which requires a tolerance config.
    """
    columns = result.q_columns
    if columns is None:
        raise ValueError("result does not carry blocked reflector columns")
    order = range(len(columns)) if transpose else range(len(columns) - 1, -1, -1)
    if isinstance(c, np.ndarray):
        m = sum(
            y.rows if is_lowrank(y) else y.shape[0] for _, y in columns[0].entries
        )
        if c.shape[0] != m:
            raise ValueError(f"operand has {c.shape[0]} rows, expected {m}")
        out = c.copy()
        b = result.r.b
        for k in order:
            _refcol_apply_dense(columns[k], out, b, transpose)
        return out
    if cfg is None:
        raise ValueError("block low-rank operands need a tolerance config")
    if c.structure.m != result.r.structure.m:
        raise ValueError("operand row count does not match the factorization")
    out = c.copy()
    for k in order:
        for j in range(out.q):
            _refcol_apply_blr(columns[k], out, j, cfg, transpose)
    return out


# ---------------------------------------------------------------------------
# tiled Householder
# ---------------------------------------------------------------------------


class TiledState:
    """Task container for the tiled Householder factorization."""

    def __init__(self, a: BlrMatrix, cfg: ToleranceConfig):
        if a.p < a.q:
            raise ValueError("grid must have at least as many block rows as columns")
        self.work = a.copy()
        self.cfg = cfg
        self.store = TileReflectorStore()

    def diag_qr(self, k: int) -> None:
        blk = self.work.blocks[k][k]
        if is_lowrank(blk):
            raise ValueError(f"diagonal block {k} must be dense")
        ref, r_kk = qr_compact_wy(blk)
        self.store.diag[k] = ref
        self.work.blocks[k][k] = r_kk

    def apply_block_reflector(self, k: int, j: int) -> None:
        ref = self.store.diag[k]
        blk = self.work.blocks[k][j]
        if is_lowrank(blk):
            if blk.rank:
                u_new = apply_wy_transpose(ref, blk.u)
                blk = LowRankBlock(u_new, blk.v)
            self.work.blocks[k][j] = blk
        else:
            self.work.blocks[k][j] = apply_wy_transpose(ref, blk)

    def update_qr(self, k: int, i: int) -> None:
        r_kk = self.work.blocks[k][k]
        blk = self.work.blocks[i][k]
        if is_lowrank(blk):
            ref, r_new = tp_qr(r_kk, np.ascontiguousarray(blk.v.T))
            y_block: Block = LowRankBlock(blk.u, np.ascontiguousarray(ref.y.T))
        else:
            ref, r_new = tp_qr(r_kk, blk)
            y_block = ref.y
        self.store.updates[(i, k)] = (y_block, ref.t)
        self.work.blocks[k][k] = r_new
        self.work.blocks[i][k] = zero_block(
            self.work.b, self.work.b, self.work.structure.admissible[i, k]
        )

    def apply_trap_reflector(self, k: int, i: int, j: int) -> None:
        s = self.work.structure
        y_block, t = self.store.updates[(i, k)]
        r_kj = self.work.blocks[k][j]
        a_ij = self.work.blocks[i][j]
        new_top, new_bot = _trap_apply_pair(
            y_block, t, r_kj, a_ij, True, s.admissible[k, j], s.admissible[i, j], self.cfg
        )
        self.work.blocks[k][j] = new_top
        self.work.blocks[i][j] = new_bot

    def result(self) -> FactorizationResult:
        return FactorizationResult("tiled-hh", self.work, q_tiles=self.store)


def _trap_apply_pair(
    y_block: Block,
    t: np.ndarray,
    top: Block,
    bot: Block,
    transpose: bool,
    top_lowrank: bool,
    bot_lowrank: bool,
    cfg: ToleranceConfig,
) -> tuple[Block, Block]:
    """One trapezoidal-reflector application to a stacked block pair."""
    prod = _mul_t(y_block, bot)
    ssum = _acc(top, prod, cfg)
    w = _dense_times(t.T if transpose else t, ssum)
    new_top = _sub_into(top, w, top_lowrank, cfg)
    new_bot = _sub_into(bot, _mul(y_block, w), bot_lowrank, cfg)
    return new_top, new_bot


def tiled_householder_qr(a: BlrMatrix, cfg: ToleranceConfig) -> FactorizationResult:
    """Tiled Householder QR: diagonal-tile QR plus pairwise update sweeps."""
    state = TiledState(a, cfg)
    for k in range(a.q):
        state.diag_qr(k)
        for j in range(k + 1, a.q):
            state.apply_block_reflector(k, j)
        for i in range(k + 1, a.p):
            state.update_qr(k, i)
            for j in range(k + 1, a.q):
                state.apply_trap_reflector(k, i, j)
    return state.result()


def _trap_apply_dense(
    y_block: Block, t: np.ndarray, c_top: np.ndarray, c_bot: np.ndarray, transpose: bool
) -> None:
    """Trapezoidal application on dense row slices, in place."""
    nc = c_top.shape[1]
    if is_lowrank(y_block):
        if y_block.rank == 0:
            yt_cb = np.zeros_like(c_top)
        else:
            flops.add(
                "apply_tp",
                flops.mm_cost(y_block.rank, y_block.rows, nc)
                + flops.mm_cost(y_block.cols, y_block.rank, nc),
            )
            yt_cb = y_block.v @ (y_block.u.T @ c_bot)
    else:
        flops.add("apply_tp", flops.mm_cost(y_block.shape[1], y_block.shape[0], nc))
        yt_cb = y_block.T @ c_bot
    w = (t.T if transpose else t) @ (c_top + yt_cb)
    flops.add("apply_tp", flops.mm_cost(*t.shape, nc))
    c_top -= w
    if is_lowrank(y_block):
        if y_block.rank:
            flops.add(
                "apply_tp",
                flops.mm_cost(y_block.rank, y_block.cols, nc)
                + flops.mm_cost(y_block.rows, y_block.rank, nc),
            )
            c_bot -= y_block.u @ (y_block.v.T @ w)
    else:
        flops.add("apply_tp", flops.mm_cost(y_block.shape[0], y_block.shape[1], nc))
        c_bot -= y_block @ w


def tiled_apply_q(
    result: FactorizationResult,
    c: BlrMatrix | np.ndarray,
    transpose: bool,
    cfg: ToleranceConfig | None = None,
) -> BlrMatrix | np.ndarray:
    """Multiply by Q (or Q.T) from the tiled factorization."""
    store = result.q_tiles
    if store is None:
        raise ValueError("result does not carry tiled reflectors")
    rm = result.r.structure
    p, q, b = rm.p, rm.q, rm.b
    if isinstance(c, np.ndarray):
        if c.shape[0] != rm.m:
            raise ValueError(f"operand has {c.shape[0]} rows, expected {rm.m}")
        out = c.copy()
        rows = [out[i * b : (i + 1) * b] for i in range(p)]
        if transpose:
            for k in range(q):
                rows[k][:] = apply_wy_transpose(store.diag[k], rows[k])
                for i in range(k + 1, p):
                    y_block, t = store.updates[(i, k)]
                    _trap_apply_dense(y_block, t, rows[k], rows[i], True)
        else:
            for k in range(q - 1, -1, -1):
                for i in range(p - 1, k, -1):
                    y_block, t = store.updates[(i, k)]
                    _trap_apply_dense(y_block, t, rows[k], rows[i], False)
                rows[k][:] = apply_wy(store.diag[k], rows[k])
        return out
    if cfg is None:
        raise ValueError("block low-rank operands need a tolerance config")
    if c.structure.m != rm.m:
        raise ValueError("operand row count does not match the factorization")
    out = c.copy()
    adm = out.structure.admissible

    def diag_apply(k: int) -> None:
        ref = store.diag[k]
        for j in range(out.q):
            blk = out.blocks[k][j]
            if is_lowrank(blk):
                if blk.rank:
                    fn = apply_wy_transpose if transpose else apply_wy
                    out.blocks[k][j] = LowRankBlock(fn(ref, blk.u), blk.v)
            else:
                fn = apply_wy_transpose if transpose else apply_wy
                out.blocks[k][j] = fn(ref, blk)

    if transpose:
        for k in range(q):
            diag_apply(k)
            for i in range(k + 1, p):
                y_block, t = store.updates[(i, k)]
                for j in range(out.q):
                    top, bot = _trap_apply_pair(
                        y_block, t, out.blocks[k][j], out.blocks[i][j],
                        True, adm[k, j], adm[i, j], cfg,
                    )
                    out.blocks[k][j] = top
                    out.blocks[i][j] = bot
    else:
        for k in range(q - 1, -1, -1):
            for i in range(p - 1, k, -1):
                y_block, t = store.updates[(i, k)]
                for j in range(out.q):
                    top, bot = _trap_apply_pair(
                        y_block, t, out.blocks[k][j], out.blocks[i][j],
                        False, adm[k, j], adm[i, j], cfg,
                    )
                    out.blocks[k][j] = top
                    out.blocks[i][j] = bot
            diag_apply(k)
    return out


# ---------------------------------------------------------------------------
# blocked MGS
# ---------------------------------------------------------------------------


class MgsState:
    """Task container for the blocked MGS factorization.

    Unlike the Householder variants this produces the orthogonal factor
    explicitly, as a block low-rank matrix sharing the input structure.
    """

    def __init__(self, a: BlrMatrix, cfg: ToleranceConfig):
        if a.p < a.q:
            raise ValueError("grid must have at least as many block rows as columns")
        self.work = a.copy()
        self.cfg = cfg
        s = a.structure
        self.qmat = BlrMatrix(
            s,
            [[zero_block(s.b, s.b, s.admissible[i, j]) for j in range(s.q)]
             for i in range(s.p)],
        )
        # R is q x q and inherits the kind of the matching input cells
        r_adm = s.admissible[: s.q, :].copy()
        d = np.arange(s.q)
        r_adm[d, d] = False
        self.r_struct = BlrStructure(s.n, s.n, s.b, r_adm)
        self.rmat = BlrMatrix(
            self.r_struct,
            [[zero_block(s.b, s.b, r_adm[i, j]) for j in range(s.q)]
             for i in range(s.q)],
        )

    def panel(self, j: int) -> None:
        s = self.work.structure
        b = s.b
        parts: list[np.ndarray] = []
        heights: list[int] = []
        for i in range(s.p):
            blk = self.work.blocks[i][j]
            if is_lowrank(blk):
                parts.append(blk.v.T)
                heights.append(blk.rank)
            else:
                parts.append(blk)
                heights.append(b)
        panel = np.vstack(parts)
        qb, rb = mgs_panel_qr(panel)
        offset = 0
        for i in range(s.p):
            h = heights[i]
            q_i = qb[offset : offset + h, :]
            offset += h
            blk = self.work.blocks[i][j]
            if is_lowrank(blk):
                self.qmat.blocks[i][j] = LowRankBlock(
                    blk.u, np.ascontiguousarray(q_i.T)
                )
            else:
                self.qmat.blocks[i][j] = np.ascontiguousarray(q_i)
        self.rmat.blocks[j][j] = rb

    def project(self, j: int, k: int) -> None:
        """R[j,k] = Q_j.T @ A_k, accumulated over block rows."""
        acc: Block | None = None
        for i in range(self.work.p):
            term = _mul_t(self.qmat.blocks[i][j], self.work.blocks[i][k])
            acc = term if acc is None else _acc(acc, term, self.cfg)
        lowrank_cell = self.r_struct.admissible[j, k]
        if lowrank_cell and not is_lowrank(acc):
            acc = compress_to_lowrank(acc, self.cfg.epsilon)
        elif not lowrank_cell and is_lowrank(acc):
            acc = block_to_dense(acc)
        self.rmat.blocks[j][k] = acc

    def update(self, j: int, i: int, k: int) -> None:
        """A[i,k] -= Q[i,j] @ R[j,k]."""
        term = _mul(self.qmat.blocks[i][j], self.rmat.blocks[j][k])
        self.work.blocks[i][k] = _sub_into(
            self.work.blocks[i][k],
            term,
            self.work.structure.admissible[i, k],
            self.cfg,
        )

    def result(self) -> FactorizationResult:
        return FactorizationResult("mgs", self.rmat, q_explicit=self.qmat)


def blocked_mgs_qr(a: BlrMatrix, cfg: ToleranceConfig) -> FactorizationResult:
    """Blocked modified Gram-Schmidt QR with an explicit orthogonal factor."""
    state = MgsState(a, cfg)
    for j in range(a.q):
        state.panel(j)
        for k in range(j + 1, a.q):
            state.project(j, k)
        for k in range(j + 1, a.q):
            for i in range(a.p):
                state.update(j, i, k)
    return state.result()
