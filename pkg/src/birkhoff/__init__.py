"""Birkhoff curve shortening, sweepout tightening and width estimates on
surfaces in R^3."""

__version__ = "0.1.0"

from .curve import (
    DiscreteCurve,
    PartitionGrid,
    energy,
    evaluate,
    from_samples,
    length,
    reparametrize_constant_speed,
    w12_distance,
    wirtinger_gap,
)
from .manifold import (
    Surface,
    SurfaceSpec,
    TangentVector,
    geodesic_bvp,
    geodesic_ivp,
    intrinsic_distance,
    normalize,
    project,
    tangent_project,
)
from .shortening import (
    even_replacement,
    geodesic_residual,
    odd_replacement,
    psi,
    psi_symmetric,
    shorten_to_geodesic,
)
from .sweepout import (
    Sweepout,
    degree,
    great_circle_fit,
    latitude_sweepout,
    linearize,
    max_energy,
    near_max_slices,
    tighten,
    tighten_once,
)

__all__ = [
    "DiscreteCurve",
    "PartitionGrid",
    "energy",
    "evaluate",
    "from_samples",
    "length",
    "reparametrize_constant_speed",
    "w12_distance",
    "wirtinger_gap",
    "Surface",
    "SurfaceSpec",
    "TangentVector",
    "geodesic_bvp",
    "geodesic_ivp",
    "intrinsic_distance",
    "normalize",
    "project",
    "tangent_project",
    "even_replacement",
    "geodesic_residual",
    "odd_replacement",
    "psi",
    "psi_symmetric",
    "shorten_to_geodesic",
    "Sweepout",
    "degree",
    "great_circle_fit",
    "latitude_sweepout",
    "linearize",
    "max_energy",
    "near_max_slices",
    "tighten",
    "tighten_once",
]
