from .dc import DcProblem, assemble_dc_operator, dc_forward, dc_sens_matvec, dc_sens_tmatvec
from .eikonal import (
    EikonalProblem,
    eikonal_sens_matvec,
    eikonal_sens_tmatvec,
    fast_marching_solve,
)
from .helmholtz import (
    HelmholtzProblem,
    assemble_helmholtz,
    build_attenuation_layer,
    helmholtz_forward,
    helmholtz_sens_matvec,
    helmholtz_sens_tmatvec,
)

__all__ = [
    "DcProblem",
    "assemble_dc_operator",
    "dc_forward",
    "dc_sens_matvec",
    "dc_sens_tmatvec",
    "HelmholtzProblem",
    "build_attenuation_layer",
    "assemble_helmholtz",
    "helmholtz_forward",
    "helmholtz_sens_matvec",
    "helmholtz_sens_tmatvec",
    "EikonalProblem",
    "fast_marching_solve",
    "eikonal_sens_matvec",
    "eikonal_sens_tmatvec",
]
