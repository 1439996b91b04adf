"""PDE coefficient estimation on tensor meshes with source-parallel forward solves."""

__version__ = "0.1.0"

from . import errors
from .mesh import (
    TensorMesh,
    build_tensor_mesh,
    divergence_operator,
    face_average_operator,
    gradient_operator,
    interp_mesh_to_mesh,
)
from .solvers import (
    SolverHandle,
    factorize_spd,
    factorize_symmetric,
    krylov_solve,
    make_preconditioner,
    spmv,
)

__all__ = [
    "errors",
    "TensorMesh",
    "build_tensor_mesh",
    "gradient_operator",
    "divergence_operator",
    "face_average_operator",
    "interp_mesh_to_mesh",
    "SolverHandle",
    "factorize_spd",
    "factorize_symmetric",
    "krylov_solve",
    "make_preconditioner",
    "spmv",
]
