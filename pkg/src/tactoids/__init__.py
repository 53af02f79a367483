"""Equilibrium shapes and order of nematic tactoids by constrained energy minimization."""

from .energy import (
    DimensionalParams,
    EnergyBreakdown,
    GradientVector,
    MaterialParams,
    bulk_density,
    constraint,
    constraint_grad,
    critical_order,
    energy,
    energy_and_grad,
    fd_gradient,
    grad,
    nondimensionalize,
)
from .mesh import (
    BoundaryFrame,
    MeshError,
    MeshQualityReport,
    RefinementMap,
    SimplicialMesh,
    boundary_frames,
    build_ball,
    build_coarse_disc,
    build_disc,
    equiangulate,
    mesh_quality,
    refine_uniform,
    total_measure,
)
from .qfield import (
    FULL,
    PLANAR,
    Director,
    NodalQField,
    QTensor,
    eigen_decompose,
    embed_components,
    field_orders,
    from_director,
    prolong,
    surface_preferred,
)

__version__ = "0.1.0"
