"""Benchmark matrix families.

Three generators, each returning the block low-rank matrix together with the
exact dense original it was built from:

* random: dense diagonal blocks, fixed-rank outer-product off-diagonals,
  weakly admissible;
* slp: single-layer log-kernel operator on the unit circle (panel-pair
  Galerkin entries in closed form, chord-panel self term), weakly
  admissible and increasingly ill-conditioned with n;
* exp3d: exponential covariance kernel on a uniform 3-d grid in Morton
  order, with geometry-based strong admissibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    BlrMatrix,
    BlrStructure,
    LowRankBlock,
    weak_admissibility,
)

__all__ = [
    "GeneratorSpec",
    "gen_random_blr",
    "gen_slp_circle",
    "gen_exp_kernel_3d",
    "generate",
    "default_block_size",
]

FAMILIES = ("random", "slp", "exp3d")


@dataclass
class GeneratorSpec:
    family: str
    n: int
    m: int | None = None
    b: int = 0
    epsilon: float = 1e-10
    rank: int = 1
    seed: int = 0
    eta: float = 0.3
    ell: float = 0.1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.m is None:
            self.m = self.n
        if self.b <= 0:
            self.b = default_block_size(self.n)
        if self.m % self.b or self.n % self.b:
            raise ValueError(
                f"block size {self.b} must divide {self.m} x {self.n}"
            )


def default_block_size(n: int) -> int:
    """Largest power of two not exceeding 2*sqrt(n)."""
    return 1 << int(np.log2(2 * np.sqrt(n)))


def gen_random_blr(spec: GeneratorSpec) -> tuple[BlrMatrix, np.ndarray]:
    """Random weakly-admissible matrix with fixed-rank off-diagonal blocks.

    Diagonal blocks are i.i.d. uniform(-1, 1); every off-diagonal block is
    the outer product of two b x rank uniform factors, stored low-rank with
    the left factor orthonormalized.  rank 0 gives a block-diagonal matrix.
    """
    rng = np.random.default_rng(spec.seed)
    b, m, n = spec.b, spec.m, spec.n
    p, q = m // b, n // b
    adm = weak_admissibility(p, q)
    blocks: list[list] = []
    dense = np.zeros((m, n))
    for i in range(p):
        row = []
        for j in range(q):
            if adm[i, j]:
                x = rng.uniform(-1.0, 1.0, (b, spec.rank))
                y = rng.uniform(-1.0, 1.0, (b, spec.rank))
                if spec.rank:
                    qx, rx = np.linalg.qr(x)
                    blk = LowRankBlock(qx, y @ rx.T)
                else:
                    blk = LowRankBlock(x, y)
                row.append(blk)
                dense[i * b : (i + 1) * b, j * b : (j + 1) * b] = blk.to_dense()
            else:
                tile = rng.uniform(-1.0, 1.0, (b, b))
                row.append(tile)
                dense[i * b : (i + 1) * b, j * b : (j + 1) * b] = tile
        blocks.append(row)
    return BlrMatrix(BlrStructure(m, n, b, adm), blocks), dense


# --- single-layer potential on the unit circle ------------------------------


def _clausen_pair_integral(delta: float, h: float) -> float:
    """Exact Galerkin entry for two arc panels at angular offset delta.

    Integral of log(2|sin(v/2)|) against the triangular offset weight,
    evaluated through the Clausen-function antiderivatives.
    """
    import mpmath

    def f1(w: float) -> float:  # antiderivative of log(2|sin(v/2)|)
        return -float(mpmath.clsin(2, w))

    def f2(w: float) -> float:  # antiderivative of v log(2|sin(v/2)|)
        return -w * float(mpmath.clsin(2, w)) - float(mpmath.clcos(3, w))

    lo, mid, hi = delta - h, delta, delta + h
    right = (h + delta) * (f1(hi) - f1(mid)) - (f2(hi) - f2(mid))
    left = (h - delta) * (f1(mid) - f1(lo)) + (f2(mid) - f2(lo))
    return right + left


def slp_dense(n: int) -> np.ndarray:
    """Dense single-layer potential matrix on n unit-circle panels.

    Entries are -1/(2 pi) times the pairwise panel integrals of log|x - y|;
    the log|2 sin| on-circle form gives them in closed form per angular
    offset (the matrix is circulant).  The self term uses the standard
    analytic integral over the chord panel, which also regularizes the
    otherwise singular constant mode.
    """
    from scipy.linalg import circulant

    h = 2 * np.pi / n
    g = np.zeros(n)
    for d in range(1, n // 2 + 1):
        g[d] = _clausen_pair_integral(d * h, h)
        g[n - d] = g[d]
    chord = 2 * np.sin(h / 2)
    g[0] = chord * chord * (np.log(chord) - 1.5)
    return -(1.0 / (2 * np.pi)) * circulant(g)


def gen_slp_circle(spec: GeneratorSpec) -> tuple[BlrMatrix, np.ndarray]:
    """Ill-conditioned boundary-integral family, weakly admissible."""
    if spec.m != spec.n:
        raise ValueError("this family is square")
    dense = slp_dense(spec.n)
    a = _compress_family(dense, spec.b, weak_admissibility(spec.n // spec.b, spec.n // spec.b), spec.epsilon)
    return a, dense


# --- exponential kernel on a uniform 3-d grid -------------------------------


def _morton_key(x: int, y: int, z: int, bits: int) -> int:
    key = 0
    for t in range(bits):
        key |= ((x >> t) & 1) << (3 * t)
        key |= ((y >> t) & 1) << (3 * t + 1)
        key |= ((z >> t) & 1) << (3 * t + 2)
    return key


def morton_grid(g: int) -> np.ndarray:
    """Points of the uniform g^3 grid in the unit cube, Morton (Z-curve)
    ordered so contiguous index ranges have compact bounding boxes."""
    bits = max(1, int(np.ceil(np.log2(max(g, 2)))))
    coords = [
        (x, y, z) for x in range(g) for y in range(g) for z in range(g)
    ]
    coords.sort(key=lambda c: _morton_key(*c, bits))
    pts = (np.asarray(coords, dtype=float) + 0.5) / g
    return pts


def geometric_admissibility(
    points: np.ndarray, b: int, eta: float
) -> np.ndarray:
    """Strong admissibility from bounding boxes of index-contiguous blocks.

    Block pair (I, J) is admissible iff the distance between their boxes
    exceeds eta times the larger box diameter.  Diagonal cells stay dense.
    """
    n = points.shape[0]
    p = n // b
    los = np.empty((p, 3))
    his = np.empty((p, 3))
    for i in range(p):
        chunk = points[i * b : (i + 1) * b]
        los[i] = chunk.min(axis=0)
        his[i] = chunk.max(axis=0)
    diams = np.linalg.norm(his - los, axis=1)
    adm = np.zeros((p, p), dtype=bool)
    for i in range(p):
        for j in range(p):
            if i == j:
                continue
            gap = np.maximum(
                np.maximum(los[i] - his[j], los[j] - his[i]), 0.0
            )
            dist = float(np.linalg.norm(gap))
            adm[i, j] = dist > eta * max(diams[i], diams[j])
    return adm


def gen_exp_kernel_3d(spec: GeneratorSpec) -> tuple[BlrMatrix, np.ndarray]:
    """Exponential covariance kernel exp(-|x_s - x_t| / ell) on a uniform
    Morton-ordered 3-d grid, compressed under strong admissibility."""
    if spec.m != spec.n:
        raise ValueError("this family is square")
    g = round(spec.n ** (1.0 / 3.0))
    if g**3 != spec.n:
        raise ValueError(f"n={spec.n} is not a perfect cube")
    pts = morton_grid(g)
    diff = pts[:, None, :] - pts[None, :, :]
    dense = np.exp(-np.linalg.norm(diff, axis=2) / spec.ell)
    adm = geometric_admissibility(pts, spec.b, spec.eta)
    a = _compress_family(dense, spec.b, adm, spec.epsilon)
    return a, dense


def _compress_family(
    dense: np.ndarray, b: int, adm: np.ndarray, epsilon: float
) -> BlrMatrix:
    """Blocks of a generated dense matrix, compressing admissible cells.

    Admissible cells always store the low-rank form here (the map already
    encodes the admissibility decision), without the b/2 dense fallback.
    """
    from .lowrank import compress_to_lowrank

    m, n = dense.shape
    structure = BlrStructure(m, n, b, adm)
    blocks = []
    for i in range(structure.p):
        row = []
        for j in range(structure.q):
            tile = np.ascontiguousarray(dense[i * b : (i + 1) * b, j * b : (j + 1) * b])
            if adm[i, j]:
                row.append(compress_to_lowrank(tile, epsilon))
            else:
                row.append(tile)
        blocks.append(row)
    return BlrMatrix(structure, blocks)


def generate(spec: GeneratorSpec) -> tuple[BlrMatrix, np.ndarray]:
    if spec.family == "random":
        return gen_random_blr(spec)
    if spec.family == "slp":
        return gen_slp_circle(spec)
    return gen_exp_kernel_3d(spec)
