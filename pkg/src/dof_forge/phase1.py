"""Breadth-first skeletal-plan synthesis.

A search state is a (preserved, to-be-achieved) pair of invariant multisets.
Expansion combines preserve actions with achieve actions through geometric
unification, generates achieve-only children whose clobbered invariants move
back to the TBA list, and (from the root only) alternative-configuration
moves that change the geom's configuration without touching the invariants.
States repeating an earlier non-solution state are pruned, which keeps the
tree at quiescence scale.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .geoms import LINE_SEGMENT, Signature, signature_of, sort_invariants
from .rules import (
    FLAG_PRESERVED,
    FLAG_TBA,
    ActionRule,
    RuleBase,
    default_rule_base,
    geo_match,
    reformulate_flagged,
)
from .terms import (
    App,
    Substitution,
    Term,
    alpha_canonical,
    apply_subst,
    free_vars,
    term_sort_key,
    unify,
    Var,
    _FreshCounter,
)


class DepthExceeded(RuntimeError):
    """Search did not quiesce within the depth bound; suspect missing rules."""


@dataclass
class SearchState:
    preserved: tuple[Term, ...]
    tba: tuple[Term, ...]
    steps: tuple[Term, ...]
    parent: Optional["SearchState"]
    depth: int
    label: str
    classification: str = "Open"
    node_id: int = 0
    children: list["SearchState"] = field(default_factory=list)


@dataclass(frozen=True)
class SkeletalPlan:
    steps: tuple[Term, ...]
    source_signature: Signature
    bindings: Substitution
    kind: str
    invariants: tuple[Term, ...]  # the canonical spec multiset the plan serves


def state_key(preserved: Sequence[Term], tba: Sequence[Term]) -> Term:
    joint = App(
        "state",
        (
            App("p", tuple(sort_invariants(preserved))),
            App("t", tuple(sort_invariants(tba))),
        ),
    )
    return alpha_canonical(joint)


def classify(state: SearchState) -> str:
    """Solution / Cycle / Open.

    Cycle: the (preserved, tba) pair alpha-equals a proper ancestor at
    distance two or more.  The immediate parent is exempt so that
    alternative-configuration children (which deliberately repeat their
    parent's invariants) can be expanded once.
    """
    if not state.tba:
        return "Solution"
    key = state_key(state.preserved, state.tba)
    anc = state.parent.parent if state.parent else None
    while anc is not None:
        if state_key(anc.preserved, anc.tba) == key:
            return "Cycle"
        anc = anc.parent
    return "Open"


def _instantiate_rules(
    inv: Term, rules: Sequence[ActionRule], counter: _FreshCounter
) -> list[tuple[list[Term], list[Term]]]:
    """All (preserve actions, achieve actions) instantiations for an invariant."""
    out = []
    for rule in rules:
        # Freshen rule variables per use so free parameters never collide.
        mapping: Substitution = {}
        for v in sorted(
            free_vars(App("r", (rule.pattern,) + rule.to_preserve + rule.to_achieve)),
            key=lambda x: x.name,
        ):
            mapping[v] = counter.fresh(v.name)
        pat = apply_subst(rule.pattern, mapping)
        s = unify(pat, inv)
        if s is None:
            continue
        pres = [apply_subst(apply_subst(a, mapping), s) for a in rule.to_preserve]
        ach = [apply_subst(apply_subst(a, mapping), s) for a in rule.to_achieve]
        out.append((pres, ach))
    return out


def _same_geom_point_accessor(t: Term) -> bool:
    return (
        isinstance(t, App)
        and t.head == ">>"
        and len(t.args) == 2
        and isinstance(t.args[1], App)
        and t.args[1].head in ("center", "end1", "end2")
    )


def statically_preserves(action: Term, inv: Term, kind: str) -> bool:
    """Conservative structural test: does the action surely keep the invariant?

    Used for the clobber bookkeeping of achieve-only children; anything not
    provably preserved is treated as clobbered.
    """
    if not (isinstance(action, App) and isinstance(inv, App)):
        return False
    ih = inv.head
    if ih == "2d-constrained-point":
        return True
    if action.head == "translate":
        return ih in ("invariant-direction", "invariant-dimension")
    if action.head == "rotate":
        pivot = action.args[1]
        if ih == "invariant-dimension":
            return True
        if ih in ("invariant-point", "1d-constrained-point"):
            return len(inv.args) >= 2 and inv.args[1] == pivot
        if ih == "fixed-distance-point":
            return len(inv.args) >= 2 and inv.args[1] == pivot
        return False
    if action.head == "scale":
        pivot = action.args[1]
        if ih in ("invariant-point", "1d-constrained-point"):
            return len(inv.args) >= 2 and inv.args[1] == pivot
        if ih == "invariant-direction":
            return True  # segment scale stretches along the current direction
        return False
    return False


class Planner:
    def __init__(
        self,
        kind: str,
        base: Optional[RuleBase] = None,
        max_depth: int = 6,
    ) -> None:
        self.kind = kind
        self.base = base or default_rule_base()
        self.max_depth = max_depth
        self.counter = _FreshCounter()
        self._next_id = 0

    def _new_state(self, **kw) -> SearchState:
        st = SearchState(**kw)
        st.node_id = self._next_id
        self._next_id += 1
        if st.parent is not None:
            st.parent.children.append(st)
        return st

    def _rules_for(self, inv: Term) -> list[tuple[list[Term], list[Term]]]:
        return _instantiate_rules(inv, self.base.actions_for(self.kind), self.counter)

    def _fold_preserving(self, action: Term, preserved: Sequence[Term]) -> Optional[Term]:
        """Match the action against one preserve action of every preserved
        invariant; None when some invariant cannot be preserved."""
        current = action
        for inv in preserved:
            matched = None
            for pres_actions, _ in self._rules_for(inv):
                for pa in pres_actions:
                    m = geo_match(current, pa, self.base.match_rules)
                    if m is not None:
                        matched = m
                        break
                if matched is not None:
                    break
            if matched is None:
                return None
            current = matched
        return current

    def expand(self, state: SearchState) -> list[SearchState]:
        children: list[SearchState] = []
        preserved = list(state.preserved)
        tba = list(state.tba)

        # (a) achieve one TBA invariant while preserving everything.
        for i, goal in enumerate(tba):
            rest = tba[:i] + tba[i + 1 :]
            for _, achieve_actions in self._rules_for(goal):
                for aa in achieve_actions:
                    combined = self._fold_preserving(aa, preserved)
                    if combined is None:
                        continue
                    children.append(
                        self._new_state(
                            preserved=tuple(sort_invariants(preserved + [goal])),
                            tba=tuple(sort_invariants(rest)),
                            steps=state.steps + (combined,),
                            parent=state,
                            depth=state.depth + 1,
                            label=f"achieve+preserve {goal!r}",
                        )
                    )

        # (b) achieve-only: clobbered preserved invariants move to the TBA list.
        for i, goal in enumerate(tba):
            rest = tba[:i] + tba[i + 1 :]
            for _, achieve_actions in self._rules_for(goal):
                for aa in achieve_actions:
                    kept = [
                        p for p in preserved if statically_preserves(aa, p, self.kind)
                    ]
                    clobbered = [p for p in preserved if p not in kept]
                    if not clobbered:
                        continue  # identical to an (a) child
                    children.append(
                        self._new_state(
                            preserved=tuple(sort_invariants(kept + [goal])),
                            tba=tuple(sort_invariants(rest + clobbered)),
                            steps=state.steps + (aa,),
                            parent=state,
                            depth=state.depth + 1,
                            label=f"achieve-only {goal!r}",
                        )
                    )

        # (c) alternative-configuration moves: generated from the root state
        # only (they exist to move the geom off its arbitrary initial
        # configuration), one child per action kind.
        if state.parent is None and preserved:
            for action_head in ("translate", "rotate", "scale"):
                first = None
                for pres_actions, _ in self._rules_for(preserved[0]):
                    for pa in pres_actions:
                        if isinstance(pa, App) and pa.head == action_head:
                            first = pa
                            break
                    if first is not None:
                        break
                if first is None:
                    continue
                combined = self._fold_preserving(first, preserved[1:])
                if combined is None:
                    continue
                children.append(
                    self._new_state(
                        preserved=tuple(preserved),
                        tba=tuple(tba),
                        steps=state.steps + (combined,),
                        parent=state,
                        depth=state.depth + 1,
                        label=f"alternative-configuration {action_head}",
                    )
                )
        return children


def synthesize_skeletal(
    spec: dict,
    base: Optional[RuleBase] = None,
    max_depth: int = 6,
    reformulate_spec: bool = True,
) -> list[SkeletalPlan]:
    plans, _ = synthesize_with_tree(
        spec, base=base, max_depth=max_depth, reformulate_spec=reformulate_spec
    )
    return plans


def synthesize_with_tree(
    spec: dict,
    base: Optional[RuleBase] = None,
    max_depth: int = 6,
    reformulate_spec: bool = True,
) -> tuple[list[SkeletalPlan], SearchState]:
    """BFS to quiescence; returns deduplicated solution plans and the tree root.

    spec: {"kind": geom kind, "preserved": [terms], "tba": [terms]}.
    reformulate_spec=False skips the root reformulation (library specs are
    already canonical and carry pre-decomposed goals).
    Raises DepthExceeded when the bound cuts off an unquiesced search that
    produced no solutions (the missing-rule failure mode).
    """
    kind = spec["kind"]
    base = base or default_rule_base()
    planner = Planner(kind, base, max_depth)

    flagged = [(t, FLAG_PRESERVED) for t in spec.get("preserved", [])] + [
        (t, FLAG_TBA) for t in spec.get("tba", [])
    ]
    if reformulate_spec:
        canon, _trace = reformulate_flagged(kind, flagged, base)
    else:
        canon = flagged
    preserved0 = tuple(sort_invariants([t for t, f in canon if f == FLAG_PRESERVED]))
    tba0 = tuple(sort_invariants([t for t, f in canon if f == FLAG_TBA]))
    all_invs = tuple(sort_invariants([t for t, _ in canon]))

    root = planner._new_state(
        preserved=preserved0,
        tba=tba0,
        steps=(),
        parent=None,
        depth=0,
        label="reformulate",
    )
    source_sig = signature_of(kind, all_invs)

    solutions: list[SearchState] = []
    visited: set = {state_key(root.preserved, root.tba)}
    queue: deque[SearchState] = deque([root])
    root.classification = classify(root)
    if root.classification == "Solution":
        solutions.append(root)
        queue.clear()
    cut_off = False

    while queue:
        state = queue.popleft()
        if state.depth >= max_depth:
            cut_off = True
            continue
        for child in planner.expand(state):
            child.classification = classify(child)
            if child.classification == "Solution":
                solutions.append(child)
                continue
            if child.classification == "Cycle":
                continue
            key = state_key(child.preserved, child.tba)
            is_alt = child.label.startswith("alternative-configuration")
            if key in visited and not is_alt:
                child.classification = "Cycle"
                continue
            visited.add(key)
            queue.append(child)

    if not solutions and cut_off:
        raise DepthExceeded(
            f"no solution within depth {max_depth} for signature {source_sig}; "
            "suspect missing rules"
        )

    plans: list[SkeletalPlan] = []
    seen_steps: set = set()
    for sol in solutions:
        key = alpha_canonical(App("plan", sol.steps))
        if key in seen_steps:
            continue
        seen_steps.add(key)
        plans.append(
            SkeletalPlan(
                steps=sol.steps,
                source_signature=source_sig,
                bindings={},
                kind=kind,
                invariants=all_invs,
            )
        )
    return plans, root


def format_tree(root: SearchState) -> str:
    """Textual outline of the search tree for the explain output."""
    lines: list[str] = []

    def fmt_invs(invs: Sequence[Term]) -> str:
        return "[" + ", ".join(repr(t) for t in invs) + "]"

    def rec(node: SearchState, indent: int) -> None:
        pad = "  " * indent
        lines.append(f"{pad}#{node.node_id} {node.label} -> {node.classification}")
        lines.append(f"{pad}  Preserved: {fmt_invs(node.preserved)}")
        lines.append(f"{pad}  TBA:       {fmt_invs(node.tba)}")
        if node.steps:
            lines.append(f"{pad}  last step: {node.steps[-1]!r}")
        for ch in node.children:
            rec(ch, indent + 1)

    rec(root, 0)
    return "\n".join(lines)
