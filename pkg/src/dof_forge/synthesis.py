"""Library synthesis driver: one prioritized fragment list per canonical
signature (and per bias assignment of its distance constraints).

Planning specs are built with an empty preserved set and the whole canonical
multiset to achieve, so the stored fragments re-establish every invariant and
work regardless of which constraint arrived last.  Two constructions keep the
specs inside the action vocabulary:

* a segment's fixed-distance-line goal becomes its two endpoint-on-carrier
  goals (collinearity with the displaced line);
* a second pinned endpoint becomes direction + length goals relative to the
  first pin (the endpoint-pair / direction-length equivalence).

Both are planning-spec constructions, not rewrite rules; the fragment's
recorded contract keeps the original invariants.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .geoms import CIRCLE, LINE_SEGMENT, Signature, sort_invariants
from .phase1 import DepthExceeded, synthesize_skeletal
from .phase2 import (
    PlanFragment,
    dedupe_plans,
    elaborate,
    eliminate_redundant,
    prioritize,
)
from .rules import (
    RuleBase,
    canonical_multisets,
    default_rule_base,
)
from .runtime import PlanLibrary, SolveConfig, DEFAULT_CONFIG
from .terms import App, Const, Term

_BIAS_ALTERNATIVES = {
    "fixed-distance-line": ("BIAS_COUNTERCLOCKWISE", "BIAS_CLOCKWISE"),
    "fixed-distance-point": ("BIAS_OUTSIDE", "BIAS_INSIDE"),
}


def bias_variants(invs: list[Term]) -> list[list[Term]]:
    """Every assignment of CCW/CW (and OUTSIDE/INSIDE) to the distance
    constraints of a representative multiset."""
    variants: list[list[Term]] = [[]]
    for inv in invs:
        if isinstance(inv, App) and inv.head in _BIAS_ALTERNATIVES:
            alts = []
            for bias in _BIAS_ALTERNATIVES[inv.head]:
                alts.append(App(inv.head, inv.args[:-1] + (App(bias, ()),)))
            variants = [v + [alt] for v in variants for alt in alts]
        else:
            variants = [v + [inv] for v in variants]
    return variants


def _acc(g: Term, fld: str) -> App:
    return App(">>", (g, App(fld, ())))


def _displaced(line: Term, bias: str, dist: Term) -> App:
    side = "BIAS_LEFT" if bias == "BIAS_COUNTERCLOCKWISE" else "BIAS_RIGHT"
    return App("make-displaced-line", (line, App(side, ()), dist))


def decompose_goals(kind: str, invs: list[Term]) -> list[Term]:
    """Rewrite goals the action rules cannot reach directly (see module doc)."""
    out: list[Term] = []
    seen_point_pin: Optional[Term] = None
    for inv in sort_invariants(invs):
        if not isinstance(inv, App):
            out.append(inv)
            continue
        if kind == LINE_SEGMENT and inv.head == "fixed-distance-line":
            g, line, dist, bias = inv.args
            carrier = _displaced(line, bias.head, dist)
            out.append(App("1d-constrained-point", (g, _acc(g, "end1"), carrier)))
            out.append(App("1d-constrained-point", (g, _acc(g, "end2"), carrier)))
            continue
        if kind == LINE_SEGMENT and inv.head == "invariant-point":
            if seen_point_pin is None:
                seen_point_pin = inv
                out.append(inv)
                continue
            # Second pin: direction + length relative to the first.
            g = inv.args[0]
            first_target = seen_point_pin.args[2]
            offset = App("v-", (inv.args[2], first_target))
            out.append(App("invariant-direction", (g, App("direction-of", (offset,)))))
            out.append(App("invariant-dimension", (g, App("magnitude", (offset,)))))
            continue
        out.append(inv)
    return out


@dataclass(frozen=True)
class SignatureReport:
    signature: Signature
    status: str  # "solved" | "no-solution" | "missing-rule-suspect"
    fragments: int
    detail: str = ""


@dataclass
class SynthesisSummary:
    kind: str
    reports: list[SignatureReport] = field(default_factory=list)

    @property
    def solved(self) -> int:
        return sum(1 for r in self.reports if r.status == "solved")

    @property
    def total(self) -> int:
        return len(self.reports)

    def format(self) -> str:
        lines = [f"{self.kind}: {self.solved}/{self.total} signatures solved"]
        for r in self.reports:
            extra = f" ({r.detail})" if r.detail else ""
            lines.append(f"  {r.signature}  {r.status}  fragments={r.fragments}{extra}")
        return "\n".join(lines)


def synthesize_fragments_for(
    kind: str,
    sig: Signature,
    rep: list[Term],
    base: Optional[RuleBase] = None,
    config: SolveConfig = DEFAULT_CONFIG,
) -> list[PlanFragment]:
    """All prioritized fragments for one canonical signature, bias variants
    included (variant-major order)."""
    base = base or default_rule_base()
    frags: list[PlanFragment] = []
    for vi, variant in enumerate(bias_variants(list(rep))):
        goals = decompose_goals(kind, variant)
        plans = synthesize_skeletal(
            {"kind": kind, "preserved": [], "tba": goals},
            base=base,
            max_depth=config.max_depth,
            reformulate_spec=False,
        )
        ordered = prioritize(dedupe_plans([eliminate_redundant(p) for p in plans]))
        for pi, plan in enumerate(ordered):
            frag = elaborate(plan, name=f"{sig}#v{vi}p{pi}")
            frag = replace(
                frag, signature=sig, invariants=tuple(sort_invariants(variant))
            )
            frags.append(frag)
    return frags


def build_library(
    kind: str,
    base: Optional[RuleBase] = None,
    config: SolveConfig = DEFAULT_CONFIG,
) -> tuple[PlanLibrary, SynthesisSummary]:
    """Derive the signature scheme and synthesize the full fragment library."""
    base = base or default_rule_base()
    lib = PlanLibrary(kind=kind)
    summary = SynthesisSummary(kind=kind)
    for sig, rep in canonical_multisets(kind, base).items():
        try:
            frags = synthesize_fragments_for(kind, sig, rep, base, config)
        except DepthExceeded as e:
            summary.reports.append(
                SignatureReport(sig, "missing-rule-suspect", 0, str(e))
            )
            continue
        if not frags:
            summary.reports.append(SignatureReport(sig, "no-solution", 0))
            continue
        for f in frags:
            lib.add(f)
        summary.reports.append(SignatureReport(sig, "solved", len(frags)))
    summary.reports.sort(key=lambda r: str(r.signature))
    return lib, summary
