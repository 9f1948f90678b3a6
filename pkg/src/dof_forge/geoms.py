"""Geom-specific knowledge: geom kinds, configuration state, the seven
invariant types, the three actions, and signatures.

Invariants exist in two forms.  The symbolic form is a term such as
``(fixed-distance-line $c $L1 $dist1 BIAS_COUNTERCLOCKWISE)`` and is what the
rules engine rewrites.  The ground form (dataclasses below) carries kernel
values and supports numeric residual evaluation.  ``signature_of`` works on
the symbolic form since it only inspects structure.

Distance-constraint semantics: a fixed-distance-line places the circle body
tangent to the line displaced by ``dist`` (center at signed distance
``dist + radius``); a fixed-distance-point places the body tangent to the
circle of radius ``dist`` around the anchor.  For line segments a
fixed-distance-line makes the segment collinear with the displaced line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

from .kernel import (
    Circle,
    DEFAULT_TOL,
    Direction2,
    GeometryError,
    Line,
    Locus1d,
    Point2,
    ReservedConic,
    Ray,
    Tolerance,
    Vector2,
    make_displaced_line,
    residual_on_locus,
    rotate_point,
    signed_distance,
    v_sub,
)
from .terms import App, Const, Term, term_sort_key

CIRCLE = "circle"
LINE_SEGMENT = "line-segment"
GEOM_KINDS = (CIRCLE, LINE_SEGMENT)

# Configuration-variable schemas (2D): circle center(2)+radius(1),
# segment end1(2)+end2(2).
DOF_COUNT = {CIRCLE: 3, LINE_SEGMENT: 4}

CCW = "BIAS_COUNTERCLOCKWISE"
CW = "BIAS_CLOCKWISE"
INSIDE = "BIAS_INSIDE"
OUTSIDE = "BIAS_OUTSIDE"
BIAS_LEFT = "BIAS_LEFT"
BIAS_RIGHT = "BIAS_RIGHT"

LINE_BIASES = (CCW, CW)
POINT_BIASES = (INSIDE, OUTSIDE)
SIDE_BIASES = (BIAS_LEFT, BIAS_RIGHT)


def side_of(bias: str) -> str:
    """LEFT/RIGHT displacement side for a CCW/CW constraint bias."""
    if bias == CCW or bias == BIAS_LEFT:
        return "LEFT"
    if bias == CW or bias == BIAS_RIGHT:
        return "RIGHT"
    raise GeometryError(f"no displacement side for bias {bias!r}")


def bias_sign(bias: str) -> float:
    if bias in (CCW, OUTSIDE):
        return 1.0
    if bias in (CW, INSIDE):
        return -1.0
    raise GeometryError(f"no sign for bias {bias!r}")


class NonPositiveDimension(ValueError):
    """A scale drove the radius or length to zero or below."""


class OverConstrained(ValueError):
    """Invariant counts exceed signature field ranges."""


@dataclass(frozen=True)
class CircleState:
    name: str
    center: Point2
    radius: float

    kind = CIRCLE

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise GeometryError("circle radius must be positive")

    def accessor(self, field_name: str):
        if field_name == "center":
            return self.center
        if field_name == "radius":
            return self.radius
        raise GeometryError(f"circle has no field {field_name!r}")


@dataclass(frozen=True)
class SegmentState:
    name: str
    end1: Point2
    end2: Point2

    kind = LINE_SEGMENT

    def __post_init__(self) -> None:
        if (self.end2 - self.end1).norm() <= DEFAULT_TOL.abs_eps:
            raise GeometryError("degenerate segment: coincident endpoints")

    @property
    def direction(self) -> Direction2:
        return Direction2.of_vector(self.end2 - self.end1)

    @property
    def length(self) -> float:
        return (self.end2 - self.end1).norm()

    def accessor(self, field_name: str):
        if field_name == "end1":
            return self.end1
        if field_name == "end2":
            return self.end2
        if field_name == "direction":
            return self.direction
        if field_name == "length":
            return self.length
        raise GeometryError(f"segment has no field {field_name!r}")


GeomState = Union[CircleState, SegmentState]


# --- Ground actions -------------------------------------------------------


@dataclass(frozen=True)
class Translate:
    vec: Vector2


@dataclass(frozen=True)
class Rotate:
    pt: Point2
    amt: float  # radians; axis is the out-of-plane normal in 2D


@dataclass(frozen=True)
class Scale:
    pt: Point2
    amt: float  # change in radius (circle) or length (segment)


Action = Union[Translate, Rotate, Scale]


def apply_action(state: GeomState, action: Action, tol: Tolerance = DEFAULT_TOL) -> GeomState:
    """Apply a ground action, returning a fresh state.

    Raises NonPositiveDimension when a scale would drive the dimensional
    variable to zero or below (the runtime exception condition).
    """
    if isinstance(action, Translate):
        v = action.vec
        if isinstance(state, CircleState):
            return replace(state, center=state.center + v)
        return replace(state, end1=state.end1 + v, end2=state.end2 + v)

    if isinstance(action, Rotate):
        if isinstance(state, CircleState):
            return replace(state, center=rotate_point(state.center, action.pt, action.amt))
        return replace(
            state,
            end1=rotate_point(state.end1, action.pt, action.amt),
            end2=rotate_point(state.end2, action.pt, action.amt),
        )

    if isinstance(action, Scale):
        if isinstance(state, CircleState):
            new_r = state.radius + action.amt
            if new_r <= tol.abs_eps:
                raise NonPositiveDimension(
                    f"scale drives radius of {state.name} to {new_r:.6g}"
                )
            d = v_sub(state.center, action.pt)
            if d.norm() <= tol.abs_eps:
                return replace(state, radius=new_r)
            # Scaling about a non-center point: uniform similarity.
            k = new_r / state.radius
            return CircleState(state.name, action.pt + d.scaled(k), new_r)
        seg = state
        new_len = seg.length + action.amt
        if new_len <= tol.abs_eps:
            raise NonPositiveDimension(
                f"scale drives length of {seg.name} to {new_len:.6g}"
            )
        d = seg.direction.as_vector()
        if (action.pt - seg.end1).norm() <= tol.abs_eps:
            return replace(seg, end2=seg.end1 + d.scaled(new_len))
        if (action.pt - seg.end2).norm() <= tol.abs_eps:
            return replace(seg, end1=seg.end2 + d.scaled(-new_len))
        raise GeometryError("segment scale pivot must be an endpoint")

    raise GeometryError(f"unknown action {action!r}")


# --- Ground invariants ----------------------------------------------------


@dataclass(frozen=True)
class InvariantPoint:
    geom: str
    pt: str  # accessor name
    glb_coords: Point2


@dataclass(frozen=True)
class OneDConstrainedPoint:
    geom: str
    pt: str
    locus: Locus1d


@dataclass(frozen=True)
class TwoDConstrainedPoint:
    geom: str
    pt: str
    region: str = "PLANE"  # whole workplane; the only 2D region in scope


@dataclass(frozen=True)
class FixedDistancePoint:
    geom: str
    anchor: Point2
    dist: float
    bias: str  # INSIDE | OUTSIDE

    def __post_init__(self) -> None:
        if self.bias not in POINT_BIASES:
            raise GeometryError(f"fixed-distance-point bias must be INSIDE/OUTSIDE, got {self.bias}")
        if self.dist < 0:
            raise GeometryError("distance must be >= 0")


@dataclass(frozen=True)
class FixedDistanceLine:
    geom: str
    line: Line
    dist: float
    bias: str  # CCW | CW

    def __post_init__(self) -> None:
        if self.bias not in LINE_BIASES:
            raise GeometryError(f"fixed-distance-line bias must be CCW/CW, got {self.bias}")
        if self.dist < 0:
            raise GeometryError("distance must be >= 0")


@dataclass(frozen=True)
class InvariantDirection:
    geom: str
    dir: Direction2


@dataclass(frozen=True)
class InvariantDimension:
    geom: str
    value: float  # radius or segment length

    def __post_init__(self) -> None:
        if self.value <= 0:
            raise GeometryError("dimension must be positive")


Invariant = Union[
    InvariantPoint,
    OneDConstrainedPoint,
    TwoDConstrainedPoint,
    FixedDistancePoint,
    FixedDistanceLine,
    InvariantDirection,
    InvariantDimension,
]


def invariant_residual(state: GeomState, inv: Invariant) -> float:
    """Numeric defect of the invariant on the state; 0 iff it holds.

    Bias violations report the magnitude of the sign defect rather than the
    unsigned near-miss, so a circle on the wrong side of a line scores the
    full gap.
    """
    if isinstance(inv, InvariantPoint):
        return (state.accessor(inv.pt) - inv.glb_coords).norm()

    if isinstance(inv, OneDConstrainedPoint):
        return residual_on_locus(inv.locus, state.accessor(inv.pt))

    if isinstance(inv, TwoDConstrainedPoint):
        return 0.0  # the workplane region is the whole plane

    if isinstance(inv, FixedDistancePoint):
        if isinstance(state, CircleState):
            d = (state.center - inv.anchor).norm()
            target = inv.dist + bias_sign(inv.bias) * state.radius
            return abs(d - target)
        # Segment: the designated body point is end1's nearest approach is not
        # part of the vocabulary; fixed-distance-point does not apply.
        raise GeometryError("fixed-distance-point applies to circles only")

    if isinstance(inv, FixedDistanceLine):
        if isinstance(state, CircleState):
            sd = signed_distance(inv.line, state.center)
            target = bias_sign(inv.bias) * (inv.dist + state.radius)
            return abs(sd - target)
        # Segment: collinear with the displaced line.
        carrier = make_displaced_line(inv.line, side_of(inv.bias), inv.dist)
        return max(
            abs(signed_distance(carrier, state.end1)),
            abs(signed_distance(carrier, state.end2)),
        )

    if isinstance(inv, InvariantDirection):
        if not isinstance(state, SegmentState):
            raise GeometryError("invariant-direction applies to line segments only")
        cur = state.direction
        ang = math.atan2(
            cur.as_vector().cross(inv.dir.as_vector()),
            cur.as_vector().dot(inv.dir.as_vector()),
        )
        return abs(ang)

    if isinstance(inv, InvariantDimension):
        current = state.radius if isinstance(state, CircleState) else state.length
        return abs(inv.value - current)

    raise GeometryError(f"unknown invariant {inv!r}")


# --- Signatures -----------------------------------------------------------

FREE, L1, FIXED = "Free", "L1", "Fixed"

INVARIANT_HEADS = (
    "invariant-point",
    "1d-constrained-point",
    "2d-constrained-point",
    "fixed-distance-point",
    "fixed-distance-line",
    "invariant-direction",
    "invariant-dimension",
)


@dataclass(frozen=True, order=True)
class CircleSignature:
    center: str = FREE
    radius: str = FREE
    fixed_pts: int = 0
    fixed_lines: int = 0

    kind = CIRCLE

    def __str__(self) -> str:
        return (
            f"<Center-{self.center},Radius-{self.radius},"
            f"FixedPts-{self.fixed_pts},FixedLines-{self.fixed_lines}>"
        )


@dataclass(frozen=True, order=True)
class SegmentSignature:
    end1: str = FREE
    end2: str = FREE
    direction: str = FREE
    length: str = FREE
    fixed_lines: int = 0

    kind = LINE_SEGMENT

    def __str__(self) -> str:
        return (
            f"<End1-{self.end1},End2-{self.end2},Direction-{self.direction},"
            f"Length-{self.length},FixedLines-{self.fixed_lines}>"
        )


Signature = Union[CircleSignature, SegmentSignature]


def _accessor_of(inv_term: App) -> Optional[str]:
    # invariant terms carry the point accessor as (>> ?g field)
    if len(inv_term.args) >= 2:
        acc = inv_term.args[1]
        if isinstance(acc, App) and acc.head == ">>" and len(acc.args) == 2:
            fld = acc.args[1]
            if isinstance(fld, App):
                return fld.head
    return None


def _point_state(heads: list[str]) -> str:
    if "invariant-point" in heads:
        return FIXED
    if "1d-constrained-point" in heads:
        return L1
    return FREE


def signature_of(kind: str, invariants: Sequence[Term]) -> Signature:
    """Map a symbolic invariant multiset to its signature tuple.

    Deterministic and invariant under permutation.  Raises OverConstrained
    when counts exceed the field ranges (more than one governing invariant on
    a point slot, more than two distance constraints).
    """
    by_accessor: dict[str, list[str]] = {}
    fixed_pts = 0
    fixed_lines = 0
    dim_fixed = False
    dir_fixed = False
    for inv in invariants:
        if not isinstance(inv, App) or inv.head not in INVARIANT_HEADS:
            raise GeometryError(f"not an invariant term: {inv!r}")
        if inv.head == "fixed-distance-point":
            fixed_pts += 1
            continue
        if inv.head == "fixed-distance-line":
            fixed_lines += 1
            continue
        if inv.head == "invariant-dimension":
            if dim_fixed:
                raise OverConstrained("duplicate dimension invariant")
            dim_fixed = True
            continue
        if inv.head == "invariant-direction":
            if dir_fixed:
                raise OverConstrained("duplicate direction invariant")
            dir_fixed = True
            continue
        if inv.head == "2d-constrained-point":
            continue  # vacuous in 2D
        acc = _accessor_of(inv)
        if acc is None:
            raise GeometryError(f"invariant lacks a point accessor: {inv!r}")
        by_accessor.setdefault(acc, []).append(inv.head)

    for acc, heads in by_accessor.items():
        if heads.count("invariant-point") > 1 or heads.count("1d-constrained-point") > 2:
            raise OverConstrained(f"too many point invariants on {acc}")

    if kind == CIRCLE:
        if fixed_pts > 2 or fixed_lines > 2:
            raise OverConstrained("fixed-distance counts exceed 2")
        if dir_fixed:
            raise GeometryError("circles carry no direction invariant")
        return CircleSignature(
            center=_point_state(by_accessor.get("center", [])),
            radius=FIXED if dim_fixed else FREE,
            fixed_pts=fixed_pts,
            fixed_lines=fixed_lines,
        )

    if kind == LINE_SEGMENT:
        if fixed_pts:
            raise GeometryError("fixed-distance-point does not apply to line segments")
        if fixed_lines > 2:
            raise OverConstrained("fixed-distance-line count exceeds 2")
        return SegmentSignature(
            end1=_point_state(by_accessor.get("end1", [])),
            end2=_point_state(by_accessor.get("end2", [])),
            direction=FIXED if dir_fixed else FREE,
            length=FIXED if dim_fixed else FREE,
            fixed_lines=fixed_lines,
        )

    raise GeometryError(f"unknown geom kind {kind!r}")


def enumerate_raw_signatures(kind: str) -> list[Signature]:
    """The full raw signature space: 54 for circles, 108 for segments."""
    if kind == CIRCLE:
        return [
            CircleSignature(c, r, p, l)
            for c in (FREE, L1, FIXED)
            for r in (FREE, FIXED)
            for p in (0, 1, 2)
            for l in (0, 1, 2)
        ]
    if kind == LINE_SEGMENT:
        return [
            SegmentSignature(e1, e2, d, n, l)
            for e1 in (FREE, L1, FIXED)
            for e2 in (FREE, L1, FIXED)
            for d in (FREE, FIXED)
            for n in (FREE, FIXED)
            for l in (0, 1, 2)
        ]
    raise GeometryError(f"unknown geom kind {kind!r}")


def sort_invariants(invs: Sequence[Term]) -> list[Term]:
    """Canonical deterministic order for an invariant multiset."""
    rank = {h: i for i, h in enumerate(INVARIANT_HEADS)}

    def key(t: Term):
        assert isinstance(t, App)
        return (rank.get(t.head, 99), term_sort_key(t))

    return sorted(invs, key=key)
