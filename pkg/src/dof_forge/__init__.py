"""dof-forge: plan-fragment synthesis and incremental geometric constraint
solving for 2D sketch constraints via degrees-of-freedom analysis."""

from .kernel import (
    BBox,
    Circle,
    Coincident,
    Direction2,
    Empty,
    GeometryError,
    IntersectionResult,
    Line,
    Locus1d,
    Point2,
    Points,
    Ray,
    Tolerance,
    Vector2,
)
from .geoms import (
    CIRCLE,
    LINE_SEGMENT,
    CircleSignature,
    CircleState,
    SegmentSignature,
    SegmentState,
    Signature,
    apply_action,
    invariant_residual,
    signature_of,
)
from .rules import (
    RuleBase,
    builtin_action_rules,
    canonical_signature,
    default_rule_base,
    derive_signature_scheme,
    geo_match,
    parse_rule_base,
    reformulate,
)
from .terms import Term, parse_term, print_term, unify

__version__ = "0.1.0"
