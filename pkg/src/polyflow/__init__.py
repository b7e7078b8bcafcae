"""Modeling, sampling, and density evaluation on convex polytopes."""

from .balltransform import (
    BallMapConfig,
    NonDifferentiablePointError,
    OutsideDomainError,
    from_ball,
    jacobian_ball,
    to_ball,
)
from .flows import (
    BaseDist,
    ManifoldSpec,
    TrainConfig,
    TrainedFlow,
    integrate,
    project_polytope,
    train_flow,
)
from .lp import LPError, LPSolution, SolveStatus, simplex_solve
from .mcmc import ChainDiagnostics, ProposalDist, ess_autocorr, rhat, run_chains
from .metrics import (
    MetricsReport,
    estimate_volume,
    estimate_Z,
    flow_metrics,
)
from .nets import Adam, VectorFieldNet
from .polytope import (
    CanonicalModel,
    HPolytope,
    PolytopeError,
    VPolytope,
    canonicalize,
    enumerate_vertices,
    find_implicit_equalities,
    load_model,
    remove_redundant,
    save_model,
    solve_lp,
)
from .rounding import (
    AffineEmbedding,
    ConvergenceError,
    RoundingTransform,
    TransformChain,
    chebyshev_center,
    john_polytope,
    max_volume_ellipsoid,
    round_polytope,
    rref_embedding,
    svd_embedding,
)
from .simplexcoords import (
    IlrProjection,
    fit_projection,
    from_zt,
    helmert_basis,
    ilr,
    ilr_inv,
    logdet_jvt,
    mec,
    to_zt,
)
from .splines import CircularSpline, RQSpline
from .targets import (
    MixtureOfGaussians,
    box_mixture_2d,
    build_example_model,
    cube_mixture,
    cube_polytope,
    rounded_mixture,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AffineEmbedding",
    "BallMapConfig",
    "BaseDist",
    "CanonicalModel",
    "ChainDiagnostics",
    "CircularSpline",
    "ConvergenceError",
    "HPolytope",
    "IlrProjection",
    "LPError",
    "LPSolution",
    "ManifoldSpec",
    "MetricsReport",
    "MixtureOfGaussians",
    "NonDifferentiablePointError",
    "OutsideDomainError",
    "PolytopeError",
    "ProposalDist",
    "RQSpline",
    "RoundingTransform",
    "SolveStatus",
    "TrainConfig",
    "TrainedFlow",
    "TransformChain",
    "VPolytope",
    "VectorFieldNet",
    "box_mixture_2d",
    "build_example_model",
    "canonicalize",
    "chebyshev_center",
    "cube_mixture",
    "cube_polytope",
    "enumerate_vertices",
    "ess_autocorr",
    "estimate_Z",
    "estimate_volume",
    "find_implicit_equalities",
    "fit_projection",
    "flow_metrics",
    "from_ball",
    "from_zt",
    "helmert_basis",
    "ilr",
    "ilr_inv",
    "integrate",
    "jacobian_ball",
    "john_polytope",
    "load_model",
    "logdet_jvt",
    "max_volume_ellipsoid",
    "mec",
    "project_polytope",
    "remove_redundant",
    "rhat",
    "rounded_mixture",
    "round_polytope",
    "rref_embedding",
    "run_chains",
    "save_model",
    "simplex_solve",
    "solve_lp",
    "svd_embedding",
    "to_ball",
    "to_zt",
    "train_flow",
]
