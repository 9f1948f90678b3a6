"""Measurement-term evaluation, plan-fragment execution, and the incremental
constraint engine.

The engine satisfies a scene's constraints one at a time: the geom's
preserved invariants plus the new constraint are rewritten to canonical form,
the canonical signature indexes the plan-fragment library, and the fragments
stored there are tried in priority order until one executes with all
residuals inside tolerance.  The verifier recomputes residuals directly from
the invariant definitions and shares nothing with plan execution beyond the
geometry kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

from . import kernel
from .kernel import (
    BBox,
    Circle,
    Coincident,
    DEFAULT_TOL,
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
    UnsupportedLocus,
    Vector2,
    angle_between,
    angular_bisector,
    discretize,
    intersect_0d,
    make_displaced_line,
    point_at,
    signed_distance,
    translate_locus,
    v_sub,
)
from .geoms import (
    CIRCLE,
    LINE_SEGMENT,
    CircleState,
    FixedDistanceLine,
    FixedDistancePoint,
    GeomState,
    Invariant,
    InvariantDimension,
    InvariantDirection,
    InvariantPoint,
    NonPositiveDimension,
    OneDConstrainedPoint,
    Rotate,
    Scale,
    SegmentState,
    Translate,
    TwoDConstrainedPoint,
    apply_action,
    invariant_residual,
    side_of,
    signature_of,
    sort_invariants,
)
from .phase2 import (
    Abort,
    Apply,
    Bind,
    Case,
    ChooseOnLocus,
    ChoosePoint,
    DEFAULT_MOTION,
    DimSpec,
    ForMin,
    MotionSpec,
    PlanFragment,
    Step,
    least_motion_search,
)
from .rules import (
    FLAG_PRESERVED,
    FLAG_TBA,
    RuleBase,
    canonicalize,
    default_rule_base,
    normalize_endpoint_labels,
    reformulate_flagged,
    swap_endpoints,
)
from .terms import App, Const, Term, Var


class EvalError(ValueError):
    """Unbound name or type mismatch during term evaluation."""


class UnboundName(EvalError):
    pass


class TypeMismatch(EvalError):
    pass


class MissingPlanFragment(LookupError):
    def __init__(self, signature) -> None:
        super().__init__(
            f"no plan fragment for signature {signature}; "
            "suspect missing reformulation or action rules"
        )
        self.signature = signature


@dataclass(frozen=True)
class Diagnostic:
    constraint_id: str
    routine: str
    message: str

    def __str__(self) -> str:
        return f"[{self.constraint_id}] {self.routine}: {self.message}"


class PlanAborted(RuntimeError):
    def __init__(self, diagnostic: Diagnostic) -> None:
        super().__init__(str(diagnostic))
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class SolveConfig:
    tolerance: Tolerance = DEFAULT_TOL
    residual_tol: float = 1e-9
    discretize_n: int = 64
    bbox_inflate: float = 2.0
    max_passes: int = 4
    refine_factor: int = 10
    max_depth: int = 6


DEFAULT_CONFIG = SolveConfig()


# --- Scene ------------------------------------------------------------------

Entity = Union[Point2, Line]


@dataclass
class Scene:
    entities: dict[str, Entity] = field(default_factory=dict)
    geoms: dict[str, GeomState] = field(default_factory=dict)
    preserved: dict[str, list[Term]] = field(default_factory=dict)
    constraints: list[tuple[str, Term]] = field(default_factory=list)
    tolerance: Tolerance = DEFAULT_TOL

    def copy(self) -> "Scene":
        return Scene(
            entities=dict(self.entities),
            geoms=dict(self.geoms),
            preserved={k: list(v) for k, v in self.preserved.items()},
            constraints=list(self.constraints),
            tolerance=self.tolerance,
        )

    def bbox(self) -> BBox:
        pts: list[Point2] = []
        for e in self.entities.values():
            if isinstance(e, Point2):
                pts.append(e)
            elif isinstance(e, Line):
                pts.append(e.through)
        for g in self.geoms.values():
            if isinstance(g, CircleState):
                pts.append(g.center)
                pts.append(Point2(g.center.x + g.radius, g.center.y + g.radius))
                pts.append(Point2(g.center.x - g.radius, g.center.y - g.radius))
            else:
                pts.append(g.end1)
                pts.append(g.end2)
        return BBox.around(pts)


# --- Evaluation ---------------------------------------------------------------

_BIAS_TO_SIDE = {"BIAS_LEFT": "LEFT", "BIAS_RIGHT": "RIGHT"}
_BIAS_TO_TURN = {"BIAS_COUNTERCLOCKWISE": "CCW", "BIAS_CLOCKWISE": "CW"}
_ZERO_ARY_SYMBOLS = {
    "BIAS_LEFT",
    "BIAS_RIGHT",
    "BIAS_COUNTERCLOCKWISE",
    "BIAS_CLOCKWISE",
    "BIAS_INSIDE",
    "BIAS_OUTSIDE",
    "PLANE",
}

Value = object


@dataclass
class EvalContext:
    scene: Scene
    env: dict[str, Value] = field(default_factory=dict)
    geom_states: Optional[dict[str, GeomState]] = None  # overrides scene.geoms
    accessor_map: Optional[dict[str, str]] = None  # endpoint relabeling

    def geom(self, name: str) -> GeomState:
        if self.geom_states is not None and name in self.geom_states:
            return self.geom_states[name]
        if name in self.scene.geoms:
            return self.scene.geoms[name]
        raise UnboundName(f"unknown geom {name!r}")


def _as_number(v: Value) -> float:
    if isinstance(v, (int, float)):
        return float(v)
    raise TypeMismatch(f"expected a number, got {v!r}")


def _as_point(v: Value) -> Point2:
    if isinstance(v, Point2):
        return v
    if isinstance(v, Points) and len(v.points) == 1:
        return v.points[0]
    raise TypeMismatch(f"expected a point, got {v!r}")


def _as_vector(v: Value) -> Vector2:
    if isinstance(v, Vector2):
        return v
    if isinstance(v, Direction2):
        return v.as_vector()
    raise TypeMismatch(f"expected a vector, got {v!r}")


def _as_direction(v: Value) -> Direction2:
    if isinstance(v, Direction2):
        return v
    if isinstance(v, Vector2):
        return Direction2.of_vector(v)
    raise TypeMismatch(f"expected a direction, got {v!r}")


def _as_line(v: Value) -> Line:
    if isinstance(v, Line):
        return v
    raise TypeMismatch(f"expected a line, got {v!r}")


def _as_locus(v: Value) -> Locus1d:
    if isinstance(v, (Line, Ray, Circle)):
        return v
    if isinstance(v, Coincident):
        return _as_locus(v.locus)
    raise TypeMismatch(f"expected a 1d locus, got {v!r}")


@dataclass(frozen=True)
class _GeomRef:
    """Marker resolving a geom constant to the current state during eval."""

    name: str


def eval_expr(expr: Term, ctx: EvalContext) -> Value:
    """Recursive measurement evaluation over the geometry kernel."""
    if isinstance(expr, Var):
        if expr.name in ctx.env:
            v = ctx.env[expr.name]
            return ctx.geom(v.name) if isinstance(v, _GeomRef) else v
        raise UnboundName(f"unbound variable {expr.name}")
    if isinstance(expr, Const):
        if expr.value is not None:
            return expr.value
        if expr.name in ctx.env:
            v = ctx.env[expr.name]
            return ctx.geom(v.name) if isinstance(v, _GeomRef) else v
        bare = expr.name.lstrip("$")
        if bare in ctx.scene.entities:
            return ctx.scene.entities[bare]
        if expr.name in ctx.scene.entities:
            return ctx.scene.entities[expr.name]
        if bare in ctx.scene.geoms or (
            ctx.geom_states is not None and bare in ctx.geom_states
        ):
            return ctx.geom(bare)
        raise UnboundName(f"unbound constant {expr.name}")

    head = expr.head
    if not expr.args:
        if head in _ZERO_ARY_SYMBOLS:
            return head
        raise EvalError(f"cannot evaluate bare symbol {head!r}")

    if head == ">>":
        obj = eval_expr(expr.args[0], ctx)
        fld = expr.args[1]
        if not isinstance(fld, App):
            raise EvalError(f"bad accessor field {fld!r}")
        fname = fld.head
        if fname == "arbitrary-point":
            raise EvalError(
                "arbitrary-point reached evaluation; elaboration should have "
                "replaced it with a search parameter"
            )
        if isinstance(obj, (CircleState, SegmentState)):
            if ctx.accessor_map and fname in ctx.accessor_map:
                fname = ctx.accessor_map[fname]
            return obj.accessor(fname)
        if isinstance(obj, Vector2) and fname == "magnitude":
            return obj.norm()
        if isinstance(obj, Line) and fname == "direction":
            return obj.dir
        raise TypeMismatch(f"no field {fname!r} on {obj!r}")

    args = [eval_expr(a, ctx) for a in expr.args]

    if head == "v-":
        return v_sub(_as_point(args[0]), _as_point(args[1]))
    if head == "plus":
        a, b = args
        if isinstance(a, Point2) and isinstance(b, Vector2):
            return a + b
        if isinstance(a, Vector2) and isinstance(b, Vector2):
            return a + b
        return _as_number(a) + _as_number(b)
    if head == "minus":
        return _as_number(args[0]) - _as_number(args[1])
    if head == "magnitude":
        return _as_vector(args[0]).norm()
    if head == "signed-distance":
        return signed_distance(_as_line(args[0]), _as_point(args[1]))
    if head == "make-line-locus":
        return kernel.make_line_locus(_as_point(args[0]), _as_direction(args[1]))
    if head == "make-displaced-line":
        side = _BIAS_TO_SIDE.get(args[1], args[1])
        if side in _BIAS_TO_TURN:  # CCW/CW map to their displacement side
            side = "LEFT" if side == "BIAS_COUNTERCLOCKWISE" else "RIGHT"
        return make_displaced_line(_as_line(args[0]), side, _as_number(args[2]))
    if head == "make-circle-locus":
        return Circle(_as_point(args[0]), _as_number(args[1]))
    if head == "make-ray-locus":
        return Ray(_as_point(args[0]), _as_direction(args[1]))
    if head == "translate-locus":
        return translate_locus(_as_locus(args[0]), _as_vector(args[1]))
    if head == "reverse-direction":
        return _as_direction(args[0]).reversed()
    if head == "direction-of":
        return Direction2.of_vector(_as_vector(args[0]))
    if head == "angular-bisector":
        b1 = _BIAS_TO_TURN.get(args[2], None)
        b2 = _BIAS_TO_TURN.get(args[3], None)
        if b1 is None or b2 is None:
            raise TypeMismatch("angular-bisector needs CCW/CW biases")
        return angular_bisector(
            _as_line(args[0]), _as_line(args[1]), b1, b2, ctx.scene.tolerance
        )
    if head == "0d-intersection":
        return intersect_0d(_as_locus(args[0]), _as_locus(args[1]), ctx.scene.tolerance)
    if head == "angle-between":
        return angle_between(_as_vector(args[0]), _as_vector(args[1]))
    if head in ("equidistant-point-point", "equidistant-point-line"):
        raise UnsupportedLocus(f"conic locus '{head}' is reserved, not implemented")
    raise EvalError(f"unknown operator {head!r}")


# --- Grounding invariants -------------------------------------------------------


def ground_invariant(term: Term, ctx: EvalContext) -> list[Invariant]:
    """Evaluate an invariant term's slots to kernel values.

    Returns one or more ground alternatives: a point slot fed by a two-point
    intersection grounds to one alternative per point (the constraint is the
    disjunction)."""
    if not isinstance(term, App):
        raise EvalError(f"not an invariant term: {term!r}")
    head = term.head
    geom_term = term.args[0]
    gname = geom_term.name.lstrip("$") if isinstance(geom_term, Const) else str(geom_term)

    def acc_name(t: Term) -> str:
        if isinstance(t, App) and t.head == ">>" and isinstance(t.args[1], App):
            fname = t.args[1].head
            if ctx.accessor_map and fname in ctx.accessor_map:
                return ctx.accessor_map[fname]
            return fname
        raise EvalError(f"bad point accessor {t!r}")

    if head == "invariant-point":
        target = eval_expr(term.args[2], ctx)
        pts: list[Point2]
        if isinstance(target, Points):
            pts = list(target.points)
        elif isinstance(target, Point2):
            pts = [target]
        elif isinstance(target, (Coincident, Empty)):
            raise PlanAborted(
                Diagnostic(gname, "0d-intersection", "point target degenerated")
            )
        else:
            raise TypeMismatch(f"invariant-point target {target!r}")
        return [InvariantPoint(gname, acc_name(term.args[1]), p) for p in pts]

    if head == "1d-constrained-point":
        locus = _as_locus(eval_expr(term.args[2], ctx))
        return [OneDConstrainedPoint(gname, acc_name(term.args[1]), locus)]

    if head == "2d-constrained-point":
        return [TwoDConstrainedPoint(gname, acc_name(term.args[1]))]

    if head == "fixed-distance-point":
        anchor = _as_point(eval_expr(term.args[1], ctx))
        dist = _as_number(eval_expr(term.args[2], ctx))
        bias = eval_expr(term.args[3], ctx)
        return [FixedDistancePoint(gname, anchor, dist, str(bias))]

    if head == "fixed-distance-line":
        line = _as_line(eval_expr(term.args[1], ctx))
        dist = _as_number(eval_expr(term.args[2], ctx))
        bias = eval_expr(term.args[3], ctx)
        return [FixedDistanceLine(gname, line, dist, str(bias))]

    if head == "invariant-direction":
        return [InvariantDirection(gname, _as_direction(eval_expr(term.args[1], ctx)))]

    if head == "invariant-dimension":
        return [InvariantDimension(gname, _as_number(eval_expr(term.args[1], ctx)))]

    raise EvalError(f"unknown invariant {head!r}")


def invariant_term_residual(term: Term, state: GeomState, ctx: EvalContext) -> float:
    """Residual of a symbolic invariant on a state (min over alternatives)."""
    alts = ground_invariant(term, ctx)
    return min(invariant_residual(state, inv) for inv in alts)


# --- Execution trace -------------------------------------------------------------


@dataclass
class ExecutionTrace:
    records: list[tuple] = field(default_factory=list)

    def add(self, *record) -> None:
        self.records.append(tuple(record))


@dataclass
class _ExecState:
    ctx: EvalContext
    state: GeomState
    motion: float
    trace: ExecutionTrace
    config: SolveConfig
    motion_spec: MotionSpec
    geom_name: str
    fragment: PlanFragment
    replay: Optional[list[tuple]] = None
    replay_pos: int = 0

    def clone(self) -> "_ExecState":
        ctx2 = EvalContext(
            scene=self.ctx.scene,
            env=dict(self.ctx.env),
            geom_states=dict(self.ctx.geom_states or {}),
            accessor_map=self.ctx.accessor_map,
        )
        return _ExecState(
            ctx=ctx2,
            state=self.state,
            motion=self.motion,
            trace=ExecutionTrace(list(self.trace.records)),
            config=self.config,
            motion_spec=self.motion_spec,
            geom_name=self.geom_name,
            fragment=self.fragment,
            replay=self.replay,
            replay_pos=self.replay_pos,
        )

    def adopt(self, other: "_ExecState") -> None:
        self.ctx.env = other.ctx.env
        self.ctx.geom_states = other.ctx.geom_states
        self.state = other.state
        self.motion = other.motion
        self.trace = other.trace
        self.replay_pos = other.replay_pos

    def set_state(self, st: GeomState) -> None:
        self.state = st
        if self.ctx.geom_states is None:
            self.ctx.geom_states = {}
        self.ctx.geom_states[self.geom_name] = st

    def next_replay(self, kind: str) -> Optional[tuple]:
        if self.replay is None:
            return None
        while self.replay_pos < len(self.replay):
            rec = self.replay[self.replay_pos]
            self.replay_pos += 1
            if rec[0] == kind:
                return rec
        raise EvalError(f"replay trace exhausted looking for {kind!r}")


def _characteristic_length(state: GeomState) -> float:
    if isinstance(state, CircleState):
        return state.radius
    return state.length / 2.0


def _apply_action_term(ex: _ExecState, action: Term) -> None:
    if not (isinstance(action, App) and action.head in ("translate", "rotate", "scale")):
        raise EvalError(f"not an action term: {action!r}")
    if action.head == "translate":
        vec = _as_vector(eval_expr(action.args[1], ex.ctx))
        ground: object = Translate(vec)
        magnitude = vec.norm()
    elif action.head == "rotate":
        pt = _as_point(eval_expr(action.args[1], ex.ctx))
        amt = _as_number(eval_expr(action.args[3], ex.ctx))
        ground = Rotate(pt, amt)
        magnitude = abs(amt) * _characteristic_length(ex.state)
    else:
        pt = _as_point(eval_expr(action.args[1], ex.ctx))
        amt = _as_number(eval_expr(action.args[2], ex.ctx))
        ground = Scale(pt, amt)
        magnitude = abs(amt)
    new_state = apply_action(ex.state, ground, ex.config.tolerance)
    ex.set_state(new_state)
    ex.motion += ex.motion_spec.cost(action.head, magnitude)
    ex.trace.add("apply", action.head, magnitude, repr(ground))


def _final_residual_ok(ex: _ExecState) -> bool:
    try:
        for inv in ex.fragment.invariants:
            if invariant_term_residual(inv, ex.state, ex.ctx) > ex.config.residual_tol:
                return False
    except (EvalError, GeometryError, PlanAborted):
        return False
    return True


def _dim_candidates(ex: _ExecState, dim: DimSpec) -> list[Value]:
    if dim.kind == "locus":
        locus = _as_locus(eval_expr(dim.locus, ex.ctx))
        box = ex.ctx.scene.bbox().inflated(ex.config.bbox_inflate)
        params = discretize(locus, box, ex.config.discretize_n)
        if not params:
            raise PlanAborted(
                Diagnostic(
                    ex.geom_name,
                    "discretize",
                    "free-parameter locus does not meet the scene bounding box",
                )
            )
        return [point_at(locus, t) for t in params]
    box = ex.ctx.scene.bbox().inflated(ex.config.bbox_inflate)
    span = max(box.xmax - box.xmin, box.ymax - box.ymin)
    n = ex.config.discretize_n
    if dim.kind == "angle":
        return [-math.pi + 2 * math.pi * (k + 1) / n for k in range(n)]
    return [-span + 2 * span * k / (n - 1) for k in range(n)]


def _refined_candidates(
    ex: _ExecState, dim: DimSpec, winner: Value, cands: list[Value]
) -> list[Value]:
    """Re-discretize one grid interval either side of the winner at higher
    resolution (the single refinement pass bounding grid error)."""
    try:
        idx = cands.index(winner)
    except ValueError:
        return cands
    lo = max(0, idx - 1)
    hi = min(len(cands) - 1, idx + 1)
    k = max(3, 2 * ex.config.refine_factor + 1)
    if dim.kind == "locus":
        locus = _as_locus(eval_expr(dim.locus, ex.ctx))
        box = ex.ctx.scene.bbox().inflated(ex.config.bbox_inflate)
        params = discretize(locus, box, ex.config.discretize_n)
        if len(params) != len(cands):
            return cands
        t_lo, t_hi = params[lo], params[hi]
        return [point_at(locus, t_lo + (t_hi - t_lo) * i / (k - 1)) for i in range(k)]
    a, b = _as_number(cands[lo]), _as_number(cands[hi])
    return [a + (b - a) * i / (k - 1) for i in range(k)]


def _run_formin(ex: _ExecState, st: ForMin) -> None:
    rec = ex.next_replay("formin")
    if rec is not None:
        _, values, _obj = rec
        for dim, v in zip(st.dims, values):
            ex.ctx.env[dim.local] = v
        _run_steps(ex, st.body)
        return

    dims_cands = [_dim_candidates(ex, d) for d in st.dims]

    def objective(assignment: tuple) -> float:
        trial = ex.clone()
        trial.replay = None
        base_motion = trial.motion
        for dim, v in zip(st.dims, assignment):
            trial.ctx.env[dim.local] = v
        try:
            _run_steps(trial, st.body)
        except (PlanAborted, EvalError, GeometryError, NonPositiveDimension):
            return math.inf
        if not _final_residual_ok(trial):
            return math.inf
        return trial.motion - base_motion

    winner, best = least_motion_search(dims_cands, objective, ex.config.max_passes)
    # One refinement pass around the winner at higher resolution.
    if best < math.inf:
        refined = [
            _refined_candidates(ex, d, w, c)
            for d, w, c in zip(st.dims, winner, dims_cands)
        ]
        refined = [
            r if w in r else [w] + r for r, w in zip(refined, winner)
        ]
        winner2, best2 = least_motion_search(refined, objective, ex.config.max_passes)
        if best2 < best:
            winner, best = winner2, best2
    if best == math.inf:
        raise PlanAborted(
            Diagnostic(
                ex.geom_name,
                "least-motion search",
                "no feasible candidate satisfies the constraints",
            )
        )
    for dim, v in zip(st.dims, winner):
        ex.ctx.env[dim.local] = v
    ex.trace.add("formin", tuple(winner), best)
    _run_steps(ex, st.body)


def _choice_values(ex: _ExecState, st: Step) -> list[Value]:
    source = ex.ctx.env[st.source]
    if isinstance(st, ChoosePoint):
        if not isinstance(source, Points):
            raise TypeMismatch(f"choose-point over {source!r}")
        return list(source.points)
    assert isinstance(st, ChooseOnLocus)
    if not isinstance(source, Coincident):
        raise TypeMismatch(f"choose-on-locus over {source!r}")
    locus = _as_locus(source.locus)
    box = ex.ctx.scene.bbox().inflated(ex.config.bbox_inflate)
    params = discretize(locus, box, ex.config.discretize_n)
    if not params:
        raise PlanAborted(
            Diagnostic(ex.geom_name, "discretize", "singular locus misses the scene")
        )
    return [point_at(locus, t) for t in params]


def _run_choice(ex: _ExecState, st: Step, rest: Sequence[Step]) -> None:
    rec = ex.next_replay("choose")
    if rec is not None:
        ex.ctx.env[st.local] = rec[1]
        _run_steps(ex, rest)
        return
    values = _choice_values(ex, st)
    best: Optional[_ExecState] = None
    best_cost = math.inf
    best_value: Value = None
    for v in values:
        trial = ex.clone()
        trial.replay = None
        trial.ctx.env[st.local] = v
        base = trial.motion
        try:
            _run_steps(trial, rest)
        except (PlanAborted, EvalError, GeometryError, NonPositiveDimension):
            continue
        cost = trial.motion - base
        if cost < best_cost:
            best = trial
            best_cost = cost
            best_value = v
    if best is None:
        raise PlanAborted(
            Diagnostic(ex.geom_name, "intersection choice", "no feasible branch")
        )
    # The choice record must precede the adopted remainder records.
    best.trace.records.insert(len(ex.trace.records), ("choose", best_value))
    ex.adopt(best)


def _run_steps(ex: _ExecState, steps: Sequence[Step]) -> None:
    i = 0
    while i < len(steps):
        st = steps[i]
        if isinstance(st, Bind):
            val = eval_expr(st.expr, ex.ctx)
            ex.ctx.env[st.local] = val
            ex.trace.add("bind", st.local, repr(val))
        elif isinstance(st, Apply):
            _apply_action_term(ex, st.action)
        elif isinstance(st, ForMin):
            _run_formin(ex, st)
        elif isinstance(st, Case):
            value = ex.ctx.env[st.on]
            if isinstance(value, Points):
                ex.trace.add("case", st.on, "points")
                _run_steps(ex, st.points)
            elif isinstance(value, Coincident):
                ex.trace.add("case", st.on, "coincident")
                _run_steps(ex, st.coincident)
            elif isinstance(value, Empty):
                ex.trace.add("case", st.on, "empty")
                _run_steps(ex, st.empty)
            else:
                raise TypeMismatch(f"case over non-intersection {value!r}")
        elif isinstance(st, (ChoosePoint, ChooseOnLocus)):
            _run_choice(ex, st, steps[i + 1 :])
            return  # the choice ran the remainder of this step list
        elif isinstance(st, Abort):
            raise PlanAborted(Diagnostic(ex.geom_name, "plan fragment", st.message))
        else:
            raise EvalError(f"unknown step {st!r}")
        i += 1


def execute_plan(
    frag: PlanFragment,
    scene: Scene,
    geom_name: str,
    args: dict[str, Value],
    config: SolveConfig = DEFAULT_CONFIG,
    motion: MotionSpec = DEFAULT_MOTION,
    accessor_map: Optional[dict[str, str]] = None,
    replay: Optional[ExecutionTrace] = None,
) -> tuple[GeomState, ExecutionTrace]:
    """Interpret a fragment body against a scene.

    args binds the fragment's parameter constants (and its geom constant) to
    values or terms.  Raises PlanAborted with a Diagnostic when an Empty case
    arm fires, a scale drives a dimension nonpositive, or the final state
    misses an invariant."""
    state = scene.geoms[geom_name]
    env: dict[str, Value] = dict(args)
    # The geom constant tracks the evolving state through a reference.
    env[frag.geom_const] = _GeomRef(geom_name)
    ctx = EvalContext(
        scene=scene, env=env, geom_states={geom_name: state}, accessor_map=accessor_map
    )
    ex = _ExecState(
        ctx=ctx,
        state=state,
        motion=0.0,
        trace=ExecutionTrace(),
        config=config,
        motion_spec=motion,
        geom_name=geom_name,
        fragment=frag,
        replay=list(replay.records) if replay is not None else None,
    )
    try:
        _run_steps(ex, frag.body)
    except NonPositiveDimension as e:
        raise PlanAborted(Diagnostic(geom_name, "scale", str(e)))
    for inv in frag.invariants:
        r = invariant_term_residual(inv, ex.state, ex.ctx)
        ex.trace.add("residual", repr(inv), r)
        if r > config.residual_tol:
            raise PlanAborted(
                Diagnostic(
                    geom_name,
                    "verification",
                    f"invariant residual {r:.3e} over tolerance: {inv!r}",
                )
            )
    return ex.state, ex.trace


# --- Plan library ---------------------------------------------------------------


@dataclass
class PlanLibrary:
    kind: str
    fragments: dict[object, list[PlanFragment]] = field(default_factory=dict)
    rulebase_hash: str = ""
    config: dict = field(default_factory=dict)

    def add(self, frag: PlanFragment) -> None:
        self.fragments.setdefault(frag.signature, []).append(frag)

    def lookup(self, signature) -> list[PlanFragment]:
        return self.fragments.get(signature, [])


def bind_fragment_args(
    frag: PlanFragment, invariants: Sequence[Term]
) -> Optional[dict[str, Term]]:
    """Structurally match the fragment's representative invariants against a
    scene's canonical multiset, binding representative constants to scene
    subterms.  None when shapes or biases disagree."""

    def match(pat: Term, actual: Term, binding: dict[str, Term]) -> bool:
        if isinstance(pat, Const):
            if pat.name in binding:
                return binding[pat.name] == actual
            binding[pat.name] = actual
            return True
        if isinstance(pat, App):
            if not isinstance(actual, App) or pat.head != actual.head:
                return False
            if len(pat.args) != len(actual.args):
                return False
            return all(match(p, a, binding) for p, a in zip(pat.args, actual.args))
        return pat == actual

    pats = sort_invariants(frag.invariants)
    actuals = sort_invariants(invariants)
    if len(pats) != len(actuals):
        return None

    import itertools as _it

    for perm in _it.permutations(range(len(actuals))):
        binding: dict[str, Term] = {}
        ok = True
        for p, idx in zip(pats, perm):
            if not match(p, actuals[idx], binding):
                ok = False
                break
        if ok:
            return binding
    return None


def _resolve_args(
    binding: dict[str, Term], frag: PlanFragment, scene: Scene, geom_name: str
) -> dict[str, Value]:
    ctx = EvalContext(scene=scene, env={}, geom_states=None)
    args: dict[str, Value] = {}
    for name, term in binding.items():
        if name == frag.geom_const:
            continue
        # Loci and measurement terms stay symbolic; plain values evaluate.
        if isinstance(term, Const) and term.value is not None:
            args[name] = term.value
        elif isinstance(term, Const):
            args[name] = eval_expr(term, ctx)
        elif isinstance(term, App) and not term.args:
            args[name] = eval_expr(term, ctx)
        else:
            args[name] = eval_expr(term, ctx)
    return args


@dataclass
class SolveReport:
    traces: list[tuple[str, ExecutionTrace]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


def solve_scene(
    scene: Scene,
    lib: PlanLibrary,
    config: SolveConfig = DEFAULT_CONFIG,
    base: Optional[RuleBase] = None,
) -> tuple[Scene, SolveReport]:
    """Satisfy the scene's constraints incrementally.

    Raises MissingPlanFragment when a canonical signature has no library
    entry, PlanAborted when every stored fragment fails on a constraint."""
    base = base or default_rule_base()
    out = scene.copy()
    report = SolveReport()
    for idx, (geom_name, new_inv) in enumerate(scene.constraints):
        if geom_name not in out.geoms:
            raise UnboundName(f"constraint references unknown geom {geom_name!r}")
        kind = out.geoms[geom_name].kind
        flagged = [(t, FLAG_PRESERVED) for t in out.preserved.get(geom_name, [])]
        flagged.append((new_inv, FLAG_TBA))
        canon_flagged, _ = reformulate_flagged(kind, flagged, base)
        canon_terms = sort_invariants([t for t, _ in canon_flagged])
        lookup_terms, swapped = normalize_endpoint_labels(kind, canon_terms)
        sig = signature_of(kind, lookup_terms)
        fragments = lib.lookup(sig)
        if not fragments:
            raise MissingPlanFragment(sig)
        accessor_map = {"end1": "end2", "end2": "end1"} if swapped else None
        last_diag: Optional[Diagnostic] = None
        solved = False
        for frag in fragments:
            binding = bind_fragment_args(frag, lookup_terms)
            if binding is None:
                continue
            args = _resolve_args(binding, frag, out, geom_name)
            try:
                new_state, trace = execute_plan(
                    frag,
                    out,
                    geom_name,
                    args,
                    config=config,
                    accessor_map=accessor_map,
                )
            except PlanAborted as e:
                last_diag = e.diagnostic
                continue
            out.geoms[geom_name] = new_state
            out.preserved[geom_name] = list(canon_terms)
            report.traces.append((f"constraint-{idx}", trace))
            solved = True
            break
        if not solved:
            if last_diag is not None:
                raise PlanAborted(
                    Diagnostic(
                        f"constraint-{idx}", last_diag.routine, last_diag.message
                    )
                )
            raise MissingPlanFragment(sig)
    return out, report


# --- Verification -----------------------------------------------------------------


@dataclass(frozen=True)
class ResidualEntry:
    constraint_id: str
    geom: str
    invariant: str
    residual: float
    ok: bool


@dataclass
class VerifyReport:
    entries: list[ResidualEntry] = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max((e.residual for e in self.entries), default=0.0)

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    def format(self) -> str:
        lines = [f"{'constraint':<16} {'geom':<10} {'residual':>12}  status"]
        for e in self.entries:
            status = "pass" if e.ok else "FAIL"
            lines.append(
                f"{e.constraint_id:<16} {e.geom:<10} {e.residual:>12.3e}  {status}"
            )
        lines.append(f"max residual: {self.max_residual:.3e}")
        return "\n".join(lines)


def verify_scene(
    scene: Scene, tol: float = 1e-9
) -> VerifyReport:
    """Independent residual check of every constraint, straight from the
    invariant definitions."""
    report = VerifyReport()
    ctx = EvalContext(scene=scene, env={})
    for idx, (geom_name, inv) in enumerate(scene.constraints):
        state = scene.geoms[geom_name]
        try:
            r = invariant_term_residual(inv, state, ctx)
        except (EvalError, GeometryError, PlanAborted):
            r = math.inf
        report.entries.append(
            ResidualEntry(f"constraint-{idx}", geom_name, repr(inv), r, r <= tol)
        )
    return report
