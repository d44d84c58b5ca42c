"""Complete-class reduction and locally optimal designs for nonlinear
regression models whose information matrix factors through a scalar design
variable.

The toolkit classifies design problems into small complete classes (support
bound plus forced endpoints) by scanning the definiteness of a
quotient-derivative table built from the model's basis functions,
constructively dominates arbitrary designs by small-support designs in the
Loewner order via moment matching, and optimizes standard information
criteria restricted to the class.
"""

from .kernel import backend_name
from .expressions import parse, to_source
from .jets import Jet, eval_jet, eval_series, eval_values
from .designs import Design, MomentVector, assemble_C, assemble_info, loewner_gap, moment_vector
from .models import ModelSpec, builtin, from_config, map_interval
from .reduction import ReductionTable, build_table, scan_definiteness, region_scan
from .chebyshev import (
    FunctionSystem,
    alternation_certificate,
    chebyshev_det,
    chebyshev_from_table,
    is_chebyshev_sampled,
)
from .complete_class import CompleteClassDescriptor, classify, classify_from_chebyshev, classify_model
from .dominance import DominanceCertificate, dominate_once, reduce_design, verify_dominance
from .optimize import Criterion, OptimizationResult, brute_force_reference, optimize, sensitivity

__version__ = "0.1.0"

__all__ = [
    "backend_name",
    "parse",
    "to_source",
    "Jet",
    "eval_jet",
    "eval_series",
    "eval_values",
    "Design",
    "MomentVector",
    "assemble_C",
    "assemble_info",
    "loewner_gap",
    "moment_vector",
    "ModelSpec",
    "builtin",
    "from_config",
    "map_interval",
    "ReductionTable",
    "build_table",
    "scan_definiteness",
    "region_scan",
    "FunctionSystem",
    "chebyshev_det",
    "is_chebyshev_sampled",
    "chebyshev_from_table",
    "alternation_certificate",
    "CompleteClassDescriptor",
    "classify",
    "classify_from_chebyshev",
    "classify_model",
    "DominanceCertificate",
    "dominate_once",
    "reduce_design",
    "verify_dominance",
    "Criterion",
    "OptimizationResult",
    "brute_force_reference",
    "optimize",
    "sensitivity",
    "__version__",
]
