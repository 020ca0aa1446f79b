"""Discrete Gaussian free fields on meshes: Markov property, reflection
positivity, sewing and Wick-ordered interactions, checked numerically."""

__version__ = "0.1.0"

from .mesh import (
    GluedMesh,
    Involution,
    InvolutionError,
    Mesh,
    MeshError,
    RegionPartition,
    build_mesh,
    glue_meshes,
    icosphere,
    load_mesh,
    make_partition,
    save_mesh,
    torus_lattice,
    validate_involution,
)
from .sobolev import FieldOperator, assemble_operator, premarkov_residual, project_support, triple_decompose
from .wick import (
    PlainPolynomial,
    WickPolynomial,
    apply_gamma,
    conditional_expectation,
    convert,
    gaussian_moment,
    sample_field,
    wick_inner,
)
from .positivity import GramReport, SupportError, rp_gram
from .sewing import CapSpec, SewReport, SewSetup, build_sew_setup, sew_check
from .interacting import NuEstimate, Potential, nu_conditional, nu_markov_report, nu_moment, wick_potential

__all__ = [
    "GluedMesh",
    "Involution",
    "InvolutionError",
    "Mesh",
    "MeshError",
    "RegionPartition",
    "build_mesh",
    "glue_meshes",
    "icosphere",
    "load_mesh",
    "make_partition",
    "save_mesh",
    "torus_lattice",
    "validate_involution",
    "PlainPolynomial",
    "WickPolynomial",
    "apply_gamma",
    "conditional_expectation",
    "convert",
    "gaussian_moment",
    "sample_field",
    "wick_inner",
    "FieldOperator",
    "assemble_operator",
    "premarkov_residual",
    "project_support",
    "triple_decompose",
    "GramReport",
    "SupportError",
    "rp_gram",
    "CapSpec",
    "SewReport",
    "SewSetup",
    "build_sew_setup",
    "sew_check",
    "NuEstimate",
    "Potential",
    "nu_conditional",
    "nu_markov_report",
    "nu_moment",
    "wick_potential",
]
