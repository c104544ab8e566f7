"""QR factorization of block low-rank matrices.

Three factorization algorithms (blocked MGS, blocked Householder, tiled
Householder) over a flat grid of dense / low-rank blocks, with sequential,
fork-join and priority task-DAG execution engines, matrix generators for
benchmark families, and accuracy / flop reporting.
"""

from .core import (
    BlrMatrix,
    BlrStructure,
    LowRankBlock,
    blr_to_dense,
    dense_to_blr,
    max_rank,
    memory_footprint,
)
from .lowrank import (
    ToleranceConfig,
    compress_rrqr,
    lr_add_into_dense,
    lr_times_dense,
    lr_times_lr,
    rounded_add,
)
from .kernels import (
    WYReflector,
    TPReflector,
    RankDeficiencyWarning,
    apply_tp,
    apply_tp_transpose,
    apply_wy,
    apply_wy_transpose,
    mgs_panel_qr,
    qr_compact_wy,
    tp_qr,
)

__all__ = [
    "BlrMatrix",
    "BlrStructure",
    "LowRankBlock",
    "blr_to_dense",
    "dense_to_blr",
    "max_rank",
    "memory_footprint",
    "ToleranceConfig",
    "compress_rrqr",
    "rounded_add",
    "lr_add_into_dense",
    "lr_times_dense",
    "lr_times_lr",
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

__version__ = "0.1.0"
