"""Skeletal-plan selection and elaboration.

Redundant actions are eliminated, plans are ordered by subsumption and a
weight table, and the survivors are compiled into executable plan fragments:
free parameters become least-motion loops, every intersection evaluation is
wrapped in a case over its Points / Coincident / Empty outcomes, and the
Empty arm aborts with a diagnostic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

from .geoms import CIRCLE, LINE_SEGMENT, Signature
from .phase1 import SkeletalPlan
from .terms import (
    App,
    Const,
    Term,
    Var,
    alpha_canonical,
    apply_subst,
    free_vars,
    subterms,
    term_sort_key,
    unify,
)


# --- Motion ---------------------------------------------------------------


def _default_translate_cost(amount: float) -> float:
    return amount * amount


@dataclass(frozen=True)
class MotionSpec:
    """Motion functions per action kind; cost is 0 for identity actions.

    translate: squared displacement of the positional reference (circle
    center / segment midpoint); rotate: (angle * characteristic length)^2;
    scale: squared dimensional change.  Summation is ordinary addition.
    """

    translate: Callable[[float], float] = _default_translate_cost
    rotate: Callable[[float], float] = _default_translate_cost
    scale: Callable[[float], float] = _default_translate_cost

    def cost(self, action_kind: str, magnitude: float) -> float:
        if action_kind == "translate":
            return self.translate(magnitude)
        if action_kind == "rotate":
            return self.rotate(magnitude)
        if action_kind == "scale":
            return self.scale(magnitude)
        raise ValueError(f"unknown action kind {action_kind!r}")


DEFAULT_MOTION = MotionSpec()


def total_motion(trace: Sequence[tuple[str, float]], motion: MotionSpec = DEFAULT_MOTION) -> float:
    """Sum of per-action motion costs for (action kind, magnitude) records."""
    return sum(motion.cost(kind, mag) for kind, mag in trace)


# --- Redundancy elimination -------------------------------------------------


def _is_arb_point(t: Term) -> bool:
    return (
        isinstance(t, App)
        and t.head == ">>"
        and len(t.args) == 2
        and isinstance(t.args[1], App)
        and t.args[1].head == "arbitrary-point"
    )


def _point_accessor(t: Term) -> bool:
    return (
        isinstance(t, App)
        and t.head == ">>"
        and len(t.args) == 2
        and isinstance(t.args[1], App)
        and t.args[1].head in ("center", "end1", "end2")
    )


def _positional_refs(t: Term, slide_locus: Optional[Term]) -> bool:
    """True when t references a positional parameter of the geom, treating
    rigid same-geom offsets and references confined to the slide locus as
    non-positional."""
    if isinstance(t, App):
        if t.head == "v-" and len(t.args) == 2 and _point_accessor(t.args[0]) and _point_accessor(t.args[1]):
            return False  # rigid offset between the geom's own points
        if (
            slide_locus is not None
            and t.head == "make-line-locus"
            and alpha_canonical(t) == alpha_canonical(slide_locus)
        ):
            return False  # the locus the earlier step slides along
        if _point_accessor(t):
            return True
        return any(_positional_refs(a, slide_locus) for a in t.args)
    return False


def _translate_parts(step: Term) -> Optional[tuple[Term, Term]]:
    # (translate g (v- TARGET FROM)) -> (TARGET, FROM)
    if isinstance(step, App) and step.head == "translate" and len(step.args) == 2:
        vec = step.args[1]
        if isinstance(vec, App) and vec.head == "v-" and len(vec.args) == 2:
            return vec.args[0], vec.args[1]
    return None


def eliminate_redundant(plan: SkeletalPlan) -> SkeletalPlan:
    """Drop earlier same-kind actions made irrelevant by later exact actions.

    A translate to an arbitrary locus point is redundant when the following
    translate's target is independent of the geom's positional parameters
    (rigid offsets and the slide locus itself do not count as positional).
    Idempotent.
    """
    steps = list(plan.steps)
    changed = True
    while changed:
        changed = False
        for i in range(len(steps) - 1):
            a, b = steps[i], steps[i + 1]
            pa, pb = _translate_parts(a), _translate_parts(b)
            if pa is None or pb is None:
                continue
            target_a, _ = pa
            target_b, _ = pb
            if not _is_arb_point(target_a):
                continue
            slide_locus = target_a.args[0]
            if not _positional_refs(target_b, slide_locus):
                del steps[i]
                changed = True
                break
    out = replace(plan, steps=tuple(steps))
    return _normalize_plan(out)


def _normalize_term(t: Term, invariants: Sequence[Term]) -> Term:
    """Canonical measurement forms: a line through the center parallel to a
    constraint line is the displaced carrier line of that constraint;
    intersection arguments are order-normalized."""
    if isinstance(t, App):
        args = tuple(_normalize_term(a, invariants) for a in t.args)
        t = App(t.head, args)
        if t.head == "make-line-locus" and len(t.args) == 2:
            through, direction = t.args
            if (
                _point_accessor(through)
                and isinstance(direction, App)
                and direction.head == ">>"
            ):
                line_term = direction.args[0]
                geom_term = through.args[0]
                for inv in invariants:
                    if (
                        isinstance(inv, App)
                        and inv.head == "fixed-distance-line"
                        and inv.args[1] == line_term
                    ):
                        side = (
                            App("BIAS_LEFT", ())
                            if inv.args[3] == App("BIAS_COUNTERCLOCKWISE", ())
                            else App("BIAS_RIGHT", ())
                        )
                        dim = App("radius", ()) if inv.args[0] == geom_term else App("radius", ())
                        return App(
                            "make-displaced-line",
                            (
                                line_term,
                                side,
                                App("plus", (inv.args[2], App(">>", (geom_term, dim)))),
                            ),
                        )
        if t.head == "0d-intersection" and len(t.args) == 2:
            a, b = t.args
            if term_sort_key(b) < term_sort_key(a):
                return App("0d-intersection", (b, a))
    return t


def _normalize_plan(plan: SkeletalPlan) -> SkeletalPlan:
    steps = tuple(_normalize_term(s, plan.invariants) for s in plan.steps)
    return replace(plan, steps=steps)


def dedupe_plans(plans: Sequence[SkeletalPlan]) -> list[SkeletalPlan]:
    out: list[SkeletalPlan] = []
    seen = set()
    for p in plans:
        key = alpha_canonical(App("plan", p.steps))
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


# --- Prioritization ---------------------------------------------------------


def plan_weight(plan: SkeletalPlan) -> tuple[int, int]:
    """Lookup-table default: (#distinct action kinds, -#steps)."""
    kinds = {s.head for s in plan.steps if isinstance(s, App)}
    return (len(kinds), -len(plan.steps))


def subsumes(a: SkeletalPlan, b: SkeletalPlan) -> bool:
    """Structural subsumption: b's steps embed in order into a's steps under a
    consistent binding of a's free parameters, surplus a-steps having free
    amounts (instantiable to the identity)."""
    if len(b.steps) > len(a.steps):
        return False

    def try_embed(ai: int, bi: int, subst) -> bool:
        if bi == len(b.steps):
            # remaining a-steps must be identity-capable: free amount params
            for s in a.steps[ai:]:
                s = apply_subst(s, subst)
                if not (
                    isinstance(s, App)
                    and s.head in ("scale", "rotate")
                    and isinstance(s.args[-1], Var)
                ):
                    return False
            return True
        if ai == len(a.steps):
            return False
        s = unify(apply_subst(a.steps[ai], subst), b.steps[bi], dict(subst))
        if s is not None and try_embed(ai + 1, bi + 1, s):
            return True
        # skip a's step if identity-capable
        sk = apply_subst(a.steps[ai], subst)
        if (
            isinstance(sk, App)
            and sk.head in ("scale", "rotate")
            and isinstance(sk.args[-1], Var)
        ):
            return try_embed(ai + 1, bi, subst)
        return False

    return try_embed(0, 0, {}) and alpha_canonical(App("p", a.steps)) != alpha_canonical(
        App("p", b.steps)
    )


def prioritize(plans: Sequence[SkeletalPlan]) -> list[SkeletalPlan]:
    """Maximal elements of the subsumption partial order first; ties broken by
    the weight table, then canonical plan text."""
    ordered = sorted(
        plans,
        key=lambda p: (plan_weight(p), repr(alpha_canonical(App("p", p.steps)))),
        reverse=True,
    )
    # Stable bubble: a plan must precede any plan it subsumes.
    changed = True
    while changed:
        changed = False
        for i in range(len(ordered) - 1):
            if subsumes(ordered[i + 1], ordered[i]):
                ordered[i], ordered[i + 1] = ordered[i + 1], ordered[i]
                changed = True
    return ordered


# --- Plan-fragment IR -------------------------------------------------------


@dataclass(frozen=True)
class Bind:
    local: str
    expr: Term


@dataclass(frozen=True)
class Apply:
    action: Term


@dataclass(frozen=True)
class DimSpec:
    """One search dimension of a least-motion loop."""

    local: str
    kind: str  # "locus" | "angle" | "length"
    locus: Optional[Term] = None  # for kind == "locus"


@dataclass(frozen=True)
class ForMin:
    dims: tuple[DimSpec, ...]
    body: tuple["Step", ...]


@dataclass(frozen=True)
class ChoosePoint:
    """Select the least-motion member of an intersection's point set."""

    local: str
    source: str  # local holding the IntersectionResult


@dataclass(frozen=True)
class ChooseOnLocus:
    """Coincident arm: continue with the singular locus as the constraint."""

    local: str
    source: str


@dataclass(frozen=True)
class Case:
    on: str  # local holding an IntersectionResult
    points: tuple["Step", ...]
    coincident: tuple["Step", ...]
    empty: tuple["Step", ...]


@dataclass(frozen=True)
class Abort:
    message: str


Step = Union[Bind, Apply, ForMin, Case, ChoosePoint, ChooseOnLocus, Abort]


@dataclass(frozen=True)
class PlanFragment:
    name: str
    kind: str
    signature: Signature
    geom_const: str  # representative constant naming the geom, e.g. "$g"
    params: tuple[str, ...]  # constant names bound from the scene at run time
    invariants: tuple[Term, ...]  # contract: all hold on success
    body: tuple[Step, ...]

    def describe(self) -> str:
        return format_fragment(self)


class ElaborationError(ValueError):
    pass


def _collect_params(invariants: Sequence[Term], steps: Sequence[Term], geom_const: str) -> tuple[str, ...]:
    names: list[str] = []
    for t in itertools.chain(invariants, steps):
        for s in subterms(t):
            if isinstance(s, Const) and s.name != geom_const and s.name not in names:
                names.append(s.name)
    return tuple(sorted(names))


def _geom_const_of(invariants: Sequence[Term]) -> str:
    for inv in invariants:
        if isinstance(inv, App) and inv.args and isinstance(inv.args[0], Const):
            return inv.args[0].name
    return "$g"


def _scalar_dim_kind(parent: App, idx: int) -> str:
    if parent.head == "rotate" and idx == 3:
        return "angle"
    if parent.head == "scale" and idx == 2:
        return "length"
    raise ElaborationError(
        f"free scalar parameter in unsupported position: {parent!r} arg {idx}"
    )


def elaborate(
    plan: SkeletalPlan,
    motion: MotionSpec = DEFAULT_MOTION,
    name: str = "fragment",
) -> PlanFragment:
    """Compile a prioritized skeletal plan into an executable fragment.

    Every free positional parameter becomes a least-motion loop dimension;
    every intersection evaluation is wrapped in a Points/Coincident/Empty
    case whose Empty arm aborts with a diagnostic.
    """
    geom_const = _geom_const_of(plan.invariants)
    dims: list[DimSpec] = []
    body: list[Step] = []
    counter = itertools.count()

    def lift_free(t: Term, parent: Optional[App] = None, idx: int = 0) -> Term:
        if _is_arb_point(t):
            local = f"?%p{next(counter)}"
            dims.append(DimSpec(local=local, kind="locus", locus=t.args[0]))
            return Var(local)
        if isinstance(t, Var):
            # The rotate axis is the out-of-plane normal in 2D: fixed, not a
            # search dimension.
            if parent is not None and parent.head == "rotate" and idx == 2:
                return App("axis-2d", ())
            kind = _scalar_dim_kind(parent, idx) if parent is not None else "length"
            local = f"?%s{next(counter)}"
            dims.append(DimSpec(local=local, kind=kind))
            return Var(local)
        if isinstance(t, App):
            return App(
                t.head,
                tuple(lift_free(a, t, i) for i, a in enumerate(t.args)),
            )
        return t

    for step in plan.steps:
        lifted = lift_free(step)
        # Hoist the outermost intersection, if any, into a bind + case.
        inter = next(
            (s for s in subterms(lifted) if isinstance(s, App) and s.head == "0d-intersection"),
            None,
        )
        if inter is None:
            body.append(Apply(lifted))
            continue
        res_local = f"?%r{next(counter)}"
        pt_local = f"?%q{next(counter)}"

        def swap(t: Term) -> Term:
            if t == inter:
                return Var(pt_local)
            if isinstance(t, App):
                return App(t.head, tuple(swap(a) for a in t.args))
            return t

        rewritten = Apply(swap(lifted))
        body.append(Bind(res_local, inter))
        body.append(
            Case(
                on=res_local,
                points=(ChoosePoint(pt_local, res_local), rewritten),
                coincident=(ChooseOnLocus(pt_local, res_local), rewritten),
                empty=(
                    Abort(
                        f"loci do not intersect: {inter!r}"
                    ),
                ),
            )
        )

    if dims:
        body = [ForMin(tuple(dims), tuple(body))]

    return PlanFragment(
        name=name,
        kind=plan.kind,
        signature=plan.source_signature,
        geom_const=geom_const,
        params=_collect_params(plan.invariants, plan.steps, geom_const),
        invariants=tuple(plan.invariants),
        body=tuple(body),
    )


# --- Least-motion search ------------------------------------------------------


def least_motion_search(
    dimensions: Sequence[Sequence[object]],
    objective: Callable[[tuple[object, ...]], float],
    max_passes: int = 4,
) -> tuple[tuple[object, ...], float]:
    """Coordinate descent over discrete candidate lists.

    Scans each dimension in turn holding the others fixed, keeping the best
    feasible value (objective +inf marks infeasible); repeats passes until a
    full pass makes no improvement or max_passes is reached.  Deterministic
    given candidate order.
    """
    if not dimensions or any(len(d) == 0 for d in dimensions):
        raise ValueError("least_motion_search requires nonempty dimensions")
    current = [d[0] for d in dimensions]
    best = objective(tuple(current))
    for _ in range(max_passes):
        improved = False
        for i, cands in enumerate(dimensions):
            best_val = current[i]
            for cand in cands:
                if cand == current[i]:
                    continue
                trial = list(current)
                trial[i] = cand
                v = objective(tuple(trial))
                if v < best:
                    best = v
                    best_val = cand
                    improved = True
            current[i] = best_val
        if not improved:
            break
    return tuple(current), best


# --- Pretty printer -----------------------------------------------------------


def format_fragment(frag: PlanFragment) -> str:
    lines = [
        f"fragment {frag.name} for {frag.kind} {frag.signature}",
        f"  params: geom {frag.geom_const}, " + ", ".join(frag.params),
        "  achieves:",
    ]
    for inv in frag.invariants:
        lines.append(f"    {inv!r}")
    lines.append("  body:")

    def emit(steps: Sequence[Step], indent: int) -> None:
        pad = "    " * indent
        for st in steps:
            if isinstance(st, Bind):
                lines.append(f"{pad}bind {st.local} := {st.expr!r}")
            elif isinstance(st, Apply):
                lines.append(f"{pad}apply {st.action!r}")
            elif isinstance(st, ForMin):
                dims = ", ".join(
                    f"{d.local} over {d.locus!r}" if d.kind == "locus" else f"{d.local}:{d.kind}"
                    for d in st.dims
                )
                lines.append(f"{pad}for-min ({dims}) minimizing total motion:")
                emit(st.body, indent + 1)
            elif isinstance(st, Case):
                lines.append(f"{pad}case {st.on}:")
                lines.append(f"{pad}  points ->")
                emit(st.points, indent + 2)
                lines.append(f"{pad}  coincident ->")
                emit(st.coincident, indent + 2)
                lines.append(f"{pad}  empty ->")
                emit(st.empty, indent + 2)
            elif isinstance(st, ChoosePoint):
                lines.append(f"{pad}choose {st.local} := least-motion point of {st.source}")
            elif isinstance(st, ChooseOnLocus):
                lines.append(f"{pad}choose {st.local} := least-motion point on {st.source}")
            elif isinstance(st, Abort):
                lines.append(f"{pad}abort: {st.message}")

    emit(frag.body, 1)
    return "\n".join(lines)
