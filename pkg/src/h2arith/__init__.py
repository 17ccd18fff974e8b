"""H2-matrix arithmetic built on local low-rank updates.

The package provides cluster and block trees, H2-matrices with nested
cluster bases, recompression, global and local low-rank updates, the
recursive arithmetic (multiply-add, block substitution, LR and Cholesky
factorization, inversion) and FEM/BEM model problems with a preconditioned
CG benchmark driver.
"""
from .arithmetic import (OpCounters, TriangularH2, cholesky_factorize, invert,
                         lr_factorize, multiply_add, solve_lower_left,
                         solve_triangular_vector, solve_upper_right)
from .cluster import BlockTree, ClusterTree, build_block_tree, build_cluster_tree, sparsity_constant
from .compression import (build_truncated_basis, compute_weights, project_to_bases,
                          recompress)
from .h2 import (ClusterBasis, H2Matrix, densify, h2_from_dense, h2_from_sparse,
                 load_h2, materialize_basis, matvec, random_h2, rmatvec, save_h2,
                 storage_report)
from .linalg_core import FactorizationBreakdown, TruncationControl
from .problems import assemble_bem_slp, assemble_fem_poisson, make_instance
from .solver import estimate_convergence_factor, make_preconditioner, pcg
from .update import LowRankFactor, add_lowrank_global, add_lowrank_local

__version__ = "0.1.0"

__all__ = [
    "BlockTree", "ClusterBasis", "ClusterTree", "FactorizationBreakdown", "H2Matrix",
    "LowRankFactor", "OpCounters", "TriangularH2", "TruncationControl",
    "add_lowrank_global", "add_lowrank_local", "assemble_bem_slp", "assemble_fem_poisson",
    "build_block_tree", "build_cluster_tree", "build_truncated_basis", "cholesky_factorize",
    "compute_weights", "densify", "estimate_convergence_factor", "h2_from_dense",
    "h2_from_sparse", "invert", "load_h2", "lr_factorize", "make_instance",
    "make_preconditioner", "materialize_basis", "matvec", "multiply_add", "pcg",
    "project_to_bases", "random_h2", "recompress", "rmatvec", "save_h2",
    "solve_lower_left", "solve_triangular_vector", "solve_upper_right",
    "sparsity_constant", "storage_report",
]
