"""Block low-rank matrix container: a flat grid of dense and low-rank blocks.

A matrix is cut into a p x q grid of b x b tiles.  Tiles flagged admissible
are held as a factor pair ``u @ v.T`` with a column-orthonormal left factor;
everything else (always including the diagonal) stays dense.  All scalars are
float64 and dense payloads are row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LowRankBlock",
    "Block",
    "BlrStructure",
    "BlrMatrix",
    "is_lowrank",
    "zero_block",
    "block_to_dense",
    "blr_to_dense",
    "max_rank",
    "memory_footprint",
]

SCALAR_BYTES = 8


@dataclass
class LowRankBlock:
    """Factor pair representing the block ``u @ v.T``.

    u has shape (rows, rank) and is kept column-orthonormal for blocks stored
    inside a BlrMatrix; v has shape (cols, rank).  rank 0 encodes an exact
    zero block.
    """

    u: np.ndarray
    v: np.ndarray

    @property
    def rows(self) -> int:
        return self.u.shape[0]

    @property
    def cols(self) -> int:
        return self.v.shape[0]

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    def to_dense(self) -> np.ndarray:
        if self.rank == 0:
            return np.zeros((self.rows, self.cols))
        return self.u @ self.v.T

    def transpose(self) -> "LowRankBlock":
        # swaps the factors; the result's left factor is generally not
        # orthonormal, so only use transiently
        return LowRankBlock(self.v, self.u)

    def scaled(self, alpha: float) -> "LowRankBlock":
        return LowRankBlock(self.u, alpha * self.v)


# a block is either a dense float64 2-d array or a LowRankBlock
Block = np.ndarray | LowRankBlock


def is_lowrank(block: Block) -> bool:
    return isinstance(block, LowRankBlock)


def zero_block(rows: int, cols: int, lowrank: bool) -> Block:
    """Structural zero: rank-0 factors for admissible cells, dense zeros else."""
    if lowrank:
        return LowRankBlock(np.zeros((rows, 0)), np.zeros((cols, 0)))
    return np.zeros((rows, cols))


def block_to_dense(block: Block) -> np.ndarray:
    if is_lowrank(block):
        return block.to_dense()
    return block


@dataclass
class BlrStructure:
    """Grid geometry plus the admissibility map (True = low-rank candidate)."""

    m: int
    n: int
    b: int
    admissible: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.m % self.b or self.n % self.b:
            raise ValueError(
                f"block size {self.b} must divide matrix dims {self.m} x {self.n}"
            )
        self.admissible = np.asarray(self.admissible, dtype=bool)
        if self.admissible.shape != (self.p, self.q):
            raise ValueError(
                f"admissibility map must be {self.p} x {self.q}, "
                f"got {self.admissible.shape}"
            )
        d = min(self.p, self.q)
        if self.admissible[np.arange(d), np.arange(d)].any():
            raise ValueError("diagonal blocks must be dense")

    @property
    def p(self) -> int:
        return self.m // self.b

    @property
    def q(self) -> int:
        return self.n // self.b


def weak_admissibility(p: int, q: int) -> np.ndarray:
    """All off-diagonal cells admissible."""
    adm = np.ones((p, q), dtype=bool)
    d = min(p, q)
    adm[np.arange(d), np.arange(d)] = False
    return adm


def dense_admissibility(p: int, q: int) -> np.ndarray:
    return np.zeros((p, q), dtype=bool)


@dataclass
class BlrMatrix:
    structure: BlrStructure
    blocks: list[list[Block]]

    @property
    def p(self) -> int:
        return self.structure.p

    @property
    def q(self) -> int:
        return self.structure.q

    @property
    def b(self) -> int:
        return self.structure.b

    def block(self, i: int, j: int) -> Block:
        return self.blocks[i][j]

    def set_block(self, i: int, j: int, block: Block) -> None:
        self.blocks[i][j] = block

    def validate(self) -> None:
        """Check grid completeness, block shapes and the dense map."""
        s = self.structure
        if len(self.blocks) != s.p or any(len(row) != s.q for row in self.blocks):
            raise ValueError("block grid does not match structure")
        for i in range(s.p):
            for j in range(s.q):
                blk = self.blocks[i][j]
                if is_lowrank(blk):
                    if not s.admissible[i, j]:
                        raise ValueError(f"cell ({i},{j}) must be dense")
                    shape = (blk.rows, blk.cols)
                    if blk.rank > min(shape):
                        raise ValueError(f"cell ({i},{j}) rank exceeds dimensions")
                else:
                    shape = blk.shape
                if shape != (s.b, s.b):
                    raise ValueError(
                        f"cell ({i},{j}) has shape {shape}, expected {(s.b, s.b)}"
                    )

    def copy(self) -> "BlrMatrix":
        blocks = [
            [
                LowRankBlock(blk.u.copy(), blk.v.copy())
                if is_lowrank(blk)
                else blk.copy()
                for blk in row
            ]
            for row in self.blocks
        ]
        return BlrMatrix(self.structure, blocks)


def blr_to_dense(a: BlrMatrix) -> np.ndarray:
    """Expand to the explicit m x n dense matrix."""
    s = a.structure
    out = np.empty((s.m, s.n))
    for i in range(s.p):
        for j in range(s.q):
            out[i * s.b : (i + 1) * s.b, j * s.b : (j + 1) * s.b] = block_to_dense(
                a.blocks[i][j]
            )
    return out


def max_rank(a: BlrMatrix) -> int:
    """Largest rank among low-rank blocks; 0 when every block is dense."""
    best = 0
    for row in a.blocks:
        for blk in row:
            if is_lowrank(blk):
                best = max(best, blk.rank)
    return best


def memory_footprint(a: BlrMatrix) -> int:
    """Stored scalar entries times the scalar width, in bytes."""
    entries = 0
    b = a.b
    for row in a.blocks:
        for blk in row:
            if is_lowrank(blk):
                entries += 2 * b * blk.rank
            else:
                entries += b * b
    return entries * SCALAR_BYTES


def dense_to_blr(
    dense: np.ndarray,
    b: int,
    admissible: np.ndarray,
    epsilon: float,
    dense_fallback_fraction: float = 0.5,
) -> BlrMatrix:
    """Cut a dense matrix into blocks, compressing the admissible cells.

    Admissible cells whose compression rank exceeds the fallback fraction of b
    are stored dense and the admissibility map is updated accordingly.
    """
    from .lowrank import ToleranceConfig, compress_rrqr

    m, n = dense.shape
    structure = BlrStructure(m, n, b, admissible.copy())
    cfg = ToleranceConfig(epsilon, dense_fallback_fraction)
    blocks: list[list[Block]] = []
    for i in range(structure.p):
        row: list[Block] = []
        for j in range(structure.q):
            tile = np.ascontiguousarray(
                dense[i * b : (i + 1) * b, j * b : (j + 1) * b]
            )
            if structure.admissible[i, j]:
                blk = compress_rrqr(tile, cfg)
                if not is_lowrank(blk):
                    structure.admissible[i, j] = False
            else:
                blk = tile
            row.append(blk)
        blocks.append(row)
    return BlrMatrix(structure, blocks)
