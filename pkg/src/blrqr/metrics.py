"""Accuracy and resource reporting for a factorization run.

Res is the relative factorization residual ||Q R - A||_F / ||A||_F and Orth
the normalized orthogonality defect ||Q.T Q - I||_F / sqrt(n), both measured
on the economy orthogonal factor (m x n) materialized by applying the stored
Q representation to an identity slab.  Feasible at desk scale only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import BlrMatrix, blr_to_dense, max_rank, memory_footprint
from .factorize import FactorizationResult, blocked_apply_q, tiled_apply_q

__all__ = ["AccuracyReport", "compute_metrics", "materialize_q", "kappa_fro"]

DENSE_METRIC_LIMIT = 8192
KAPPA_LIMIT = 2048


@dataclass
class AccuracyReport:
    algorithm: str
    m: int
    n: int
    b: int
    epsilon: float
    res: float
    orth: float
    max_rank: int
    memory_bytes: int
    flops: dict[str, int] = field(default_factory=dict)
    flops_total: int = 0
    wall_ms: dict[str, float] = field(default_factory=dict)
    kappa_f: float | None = None

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(asdict(self), indent=indent, sort_keys=True)


def materialize_q(result: FactorizationResult) -> np.ndarray:
    """Economy orthogonal factor (m x n) from the stored representation."""
    if result.q_explicit is not None:
        return blr_to_dense(result.q_explicit)
    s = result.r.structure
    m = s.m
    n = min(s.n, m)
    slab = np.zeros((m, n))
    slab[np.arange(n), np.arange(n)] = 1.0
    if result.q_columns is not None:
        return blocked_apply_q(result, slab, transpose=False)
    return tiled_apply_q(result, slab, transpose=False)


def kappa_fro(dense: np.ndarray) -> float:
    """Frobenius condition estimate from the full singular spectrum."""
    sigma = np.linalg.svd(dense, compute_uv=False)
    if sigma[-1] == 0:
        return float("inf")
    return float(
        np.sqrt(np.sum(sigma**2)) * np.sqrt(np.sum(sigma**-2.0))
    )


def compute_metrics(
    a_dense: np.ndarray,
    result: FactorizationResult,
    epsilon: float,
    flops: dict[str, int] | None = None,
    wall_ms: dict[str, float] | None = None,
    with_kappa: bool = False,
) -> AccuracyReport:
    """Res / Orth / rank / memory report against the exact dense original."""
    m, n = a_dense.shape
    if n > DENSE_METRIC_LIMIT:
        raise ValueError(
            f"dense metrics limited to n <= {DENSE_METRIC_LIMIT}, got {n}"
        )
    q = materialize_q(result)
    r_dense = blr_to_dense(result.r)[:n, :]
    res = float(np.linalg.norm(q @ r_dense - a_dense) / np.linalg.norm(a_dense))
    gram = q.T @ q
    gram[np.arange(n), np.arange(n)] -= 1.0
    orth = float(np.linalg.norm(gram) / np.sqrt(n))
    kappa = None
    if with_kappa:
        if n > KAPPA_LIMIT:
            raise ValueError(f"condition estimate limited to n <= {KAPPA_LIMIT}")
        kappa = kappa_fro(a_dense)
    flop_map = dict(flops or {})
    return AccuracyReport(
        algorithm=result.algorithm,
        m=m,
        n=n,
        b=result.r.b,
        epsilon=epsilon,
        res=res,
        orth=orth,
        max_rank=max_rank(result.r),
        memory_bytes=memory_footprint(result.r),
        flops=flop_map,
        flops_total=sum(flop_map.values()),
        wall_ms=dict(wall_ms or {}),
        kappa_f=kappa,
    )
