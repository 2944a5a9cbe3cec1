"""Global optimization of reverse-convex programs by active-set enumeration."""
from .approximation import ApproxSpec, PiecewiseConcave, approximation_error, parabola_pieces, pwl_convex_pieces, required_pieces
from .decomposition import DecompositionMap, build_rcp, decompose_factorable
from .enumeration import BinaryMask, Config, MaskBasis, SolveReport, solve
from .nlp import Factor, FactorableNlp, FExpr, Product, linear_expr
from .problem import (
    Affine,
    ConcaveExpr,
    Constraint,
    ConstraintMeta,
    ExpTerm,
    QuadDiag,
    QuadFull,
    RcpProblem,
    validate_problem,
)
from .problem_io import SchemaError, ValidationError, emit_problem, parse_problem

__all__ = [
    "Affine", "ApproxSpec", "BinaryMask", "ConcaveExpr", "Config", "Constraint", "ConstraintMeta",
    "DecompositionMap", "ExpTerm", "FExpr", "Factor", "FactorableNlp", "MaskBasis", "PiecewiseConcave",
    "Product", "QuadDiag", "QuadFull", "RcpProblem", "SchemaError", "SolveReport", "ValidationError",
    "approximation_error", "build_rcp", "decompose_factorable", "emit_problem", "linear_expr",
    "parabola_pieces", "parse_problem", "pwl_convex_pieces", "required_pieces", "solve", "validate_problem",
]
