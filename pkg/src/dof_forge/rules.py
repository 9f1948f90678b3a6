"""The symbolic layer: rule bases, geometric unification, invariant
reformulation, and signature-scheme derivation.

Rule bases are data, parsed from an S-expression text format (see
``data/builtin_rules.sexp``).  Reformulation runs to a fixpoint under a
well-founded complexity measure; the measure is asserted to decrease at every
step, so user rule sets cannot loop silently.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional, Sequence

from .geoms import (
    CIRCLE,
    FIXED,
    FREE,
    L1,
    LINE_SEGMENT,
    CircleSignature,
    SegmentSignature,
    Signature,
    signature_of,
    sort_invariants,
)
from .terms import (
    App,
    Const,
    Substitution,
    Term,
    TermSyntaxError,
    Var,
    alpha_canonical,
    alpha_equal,
    apply_subst,
    check_arity,
    parse_terms,
    term_sort_key,
    unify,
)


class RuleBaseError(ValueError):
    """Malformed rule file or rule structure."""


@dataclass(frozen=True)
class ActionRule:
    """(pattern, to-preserve, to-achieve) triple for one invariant type."""

    name: str
    kind: str  # geom kind the rule belongs to
    pattern: Term
    to_preserve: tuple[Term, ...]
    to_achieve: tuple[Term, ...]


@dataclass(frozen=True)
class MatchRule:
    name: str
    lhs: tuple[Term, Term]
    rhs: Term
    guard: Optional[tuple[str, tuple[Term, ...]]] = None


@dataclass(frozen=True)
class ReformRule:
    name: str
    kind: str
    lhs: tuple[Term, ...]
    rhs: tuple[Term, ...]


@dataclass
class RuleBase:
    action_rules: dict[str, list[ActionRule]] = field(default_factory=dict)
    match_rules: list[MatchRule] = field(default_factory=list)
    reform_rules: dict[str, list[ReformRule]] = field(default_factory=dict)

    def actions_for(self, kind: str) -> list[ActionRule]:
        return self.action_rules.get(kind, [])

    def reforms_for(self, kind: str) -> list[ReformRule]:
        return self.reform_rules.get(kind, [])

    def without_reform(self, name: str) -> "RuleBase":
        """Copy with one reformulation rule removed (missing-rule experiments)."""
        return RuleBase(
            action_rules={k: list(v) for k, v in self.action_rules.items()},
            match_rules=list(self.match_rules),
            reform_rules={
                k: [r for r in v if r.name != name]
                for k, v in self.reform_rules.items()
            },
        )


# --- Rule file parsing ----------------------------------------------------

_SECTION_HEADS = ("ACTION-RULES", "MATCH-RULES", "REFORM-RULES")


def _clauses(form: App) -> dict[str, list[Term]]:
    out: dict[str, list[Term]] = {}
    for arg in form.args[1:]:
        if not isinstance(arg, App):
            raise RuleBaseError(f"bad clause in rule {form.args[0]!r}: {arg!r}")
        out[arg.head] = list(arg.args)
    return out


def parse_rule_base(text: str) -> RuleBase:
    """Parse a rule-base file: sections followed by (rule ...) forms."""
    base = RuleBase()
    section: Optional[str] = None
    kind: Optional[str] = None
    try:
        forms = parse_terms(text)
    except TermSyntaxError:
        raise
    for form in forms:
        if not isinstance(form, App):
            raise RuleBaseError(f"unexpected toplevel atom {form!r}")
        if form.head in _SECTION_HEADS:
            section = form.head
            kind = form.args[0].head if form.args else None
            if section != "MATCH-RULES" and kind not in (CIRCLE, LINE_SEGMENT):
                raise RuleBaseError(f"section {section} needs a geom kind")
            continue
        if form.head != "rule":
            raise RuleBaseError(f"expected (rule ...), got ({form.head} ...)")
        if section is None:
            raise RuleBaseError("rule appears before any section header")
        if not form.args or not isinstance(form.args[0], App):
            raise RuleBaseError("rule needs a name")
        name = form.args[0].head
        clauses = _clauses(form)
        for terms in clauses.values():
            for t in terms:
                check_arity(t)
        if section == "ACTION-RULES":
            if "pattern" not in clauses or len(clauses["pattern"]) != 1:
                raise RuleBaseError(f"action rule {name} needs one pattern")
            rule = ActionRule(
                name=name,
                kind=kind or "",
                pattern=clauses["pattern"][0],
                to_preserve=tuple(clauses.get("preserve", [])),
                to_achieve=tuple(clauses.get("achieve", [])),
            )
            base.action_rules.setdefault(rule.kind, []).append(rule)
        elif section == "MATCH-RULES":
            lhs = clauses.get("lhs", [])
            rhs = clauses.get("rhs", [])
            if len(lhs) != 2 or len(rhs) != 1:
                raise RuleBaseError(f"match rule {name} needs (lhs t1 t2) and (rhs t)")
            guard = None
            if "guard" in clauses:
                g = clauses["guard"]
                if not g or not isinstance(g[0], App):
                    raise RuleBaseError(f"bad guard in match rule {name}")
                guard = (g[0].head, tuple(g[1:]))
            base.match_rules.append(MatchRule(name, (lhs[0], lhs[1]), rhs[0], guard))
        else:
            lhs = clauses.get("lhs", [])
            rhs = clauses.get("rhs", [])
            if not lhs or not rhs:
                raise RuleBaseError(f"reform rule {name} needs lhs and rhs")
            base.reform_rules.setdefault(kind or "", []).append(
                ReformRule(name, kind or "", tuple(lhs), tuple(rhs))
            )
    return base


def builtin_rule_base() -> RuleBase:
    text = resources.files("dof_forge.data").joinpath("builtin_rules.sexp").read_text()
    return parse_rule_base(text)


_builtin_cache: Optional[RuleBase] = None


def default_rule_base() -> RuleBase:
    global _builtin_cache
    if _builtin_cache is None:
        _builtin_cache = builtin_rule_base()
    return _builtin_cache


def builtin_action_rules(kind: str) -> list[ActionRule]:
    """The shipped action-rule base for a geom kind (8 circle, 12 segment)."""
    return default_rule_base().actions_for(kind)


# --- Guards ---------------------------------------------------------------


def _guard_distinct_constants(args: Sequence[Term], subst: Substitution) -> bool:
    vals = [apply_subst(a, subst) for a in args]
    consts = [v for v in vals if isinstance(v, Const)]
    if len(consts) != len(vals):
        return False
    return len({c.name for c in consts}) == len(consts)


GUARDS: dict[str, Callable[[Sequence[Term], Substitution], bool]] = {
    "distinct-constants": _guard_distinct_constants,
}


# --- Geometric unification ------------------------------------------------


def _try_match_rules(t1: Term, t2: Term, rules: Sequence[MatchRule]) -> Optional[Term]:
    for rule in rules:
        for a, b in ((t1, t2), (t2, t1)):
            s = unify(rule.lhs[0], a)
            if s is None:
                continue
            s = unify(rule.lhs[1], b, s)
            if s is None:
                continue
            if rule.guard is not None:
                fn = GUARDS.get(rule.guard[0])
                if fn is None or not fn(rule.guard[1], s):
                    continue
            return apply_subst(rule.rhs, s)
    return None


def geo_match(t1: Term, t2: Term, rules: Sequence[MatchRule]) -> Optional[Term]:
    """Geometry-aware matching: a term whose ground instances specialize both
    inputs.

    Matching rules are tried on the outermost expression first; failing that
    the arguments are matched pairwise; failing that the algorithm degenerates
    to standard unification.  Returns None on failure.
    """
    if t1 == t2:
        return t1
    s = unify(t1, t2)
    if s is not None:
        return apply_subst(t1, s)
    m = _try_match_rules(t1, t2, rules)
    if m is not None:
        return m
    if (
        isinstance(t1, App)
        and isinstance(t2, App)
        and t1.head == t2.head
        and len(t1.args) == len(t2.args)
    ):
        args = []
        for a, b in zip(t1.args, t2.args):
            r = geo_match(a, b, rules)
            if r is None:
                return None
            args.append(r)
        return App(t1.head, tuple(args))
    return None


# --- Reformulation --------------------------------------------------------

_TYPE_RANK = {
    "2d-constrained-point": 1,
    "1d-constrained-point": 2,
    "invariant-point": 3,
    "invariant-dimension": 4,
    "invariant-direction": 5,
    "fixed-distance-point": 8,
    "fixed-distance-line": 8,
}


def complexity(invs: Sequence[Term]) -> tuple[int, int, int]:
    """Well-founded measure: (#distance constraints, count, type-rank sum)."""
    fd = sum(
        1
        for t in invs
        if isinstance(t, App) and t.head in ("fixed-distance-point", "fixed-distance-line")
    )
    ranks = sum(_TYPE_RANK.get(t.head, 9) for t in invs if isinstance(t, App))
    return (fd, len(invs), ranks)


@dataclass(frozen=True)
class RewriteStep:
    rule: str
    consumed: tuple[Term, ...]
    produced: tuple[Term, ...]


FLAG_PRESERVED = "preserved"
FLAG_TBA = "tba"


def _match_lhs(
    lhs: Sequence[Term], invs: Sequence[Term]
) -> Optional[tuple[tuple[int, ...], Substitution]]:
    """First (lexicographically smallest) selection of distinct invariants
    unifying with the lhs patterns in order."""
    n = len(invs)
    for combo in itertools.permutations(range(n), len(lhs)):
        s: Optional[Substitution] = {}
        for pat, idx in zip(lhs, combo):
            s = unify(pat, invs[idx], s)
            if s is None:
                break
        if s is not None:
            return combo, s
    return None


def reformulate_flagged(
    kind: str,
    invs: Sequence[tuple[Term, str]],
    base: Optional[RuleBase] = None,
) -> tuple[list[tuple[Term, str]], list[RewriteStep]]:
    """Rewrite a flagged invariant multiset to canonical form.

    Flags mark invariants as preserved or to-be-achieved.  A product that
    equals one of the consumed inputs keeps that input's flag; novel products
    are to-be-achieved if any consumed input was, else preserved.
    """
    base = base or default_rule_base()
    rules = base.reforms_for(kind)
    current: list[tuple[Term, str]] = sorted(
        invs, key=lambda p: (_TYPE_RANK.get(p[0].head, 9) if isinstance(p[0], App) else 99, term_sort_key(p[0]))
    )
    trace: list[RewriteStep] = []
    progress = True
    while progress:
        progress = False
        terms = [t for t, _ in current]
        for rule in rules:
            found = _match_lhs(rule.lhs, terms)
            if found is None:
                continue
            combo, s = found
            consumed = [current[i] for i in combo]
            produced_terms = [apply_subst(r, s) for r in rule.rhs]
            before = complexity(terms)
            after_terms = [t for i, (t, _) in enumerate(current) if i not in combo] + produced_terms
            after = complexity(after_terms)
            if not after < before:
                raise RuleBaseError(
                    f"reform rule {rule.name} does not decrease complexity "
                    f"({before} -> {after})"
                )
            any_tba = any(fl == FLAG_TBA for _, fl in consumed)
            produced: list[tuple[Term, str]] = []
            for pt in produced_terms:
                flag = None
                for ct, cf in consumed:
                    if ct == pt:
                        flag = cf
                        break
                if flag is None:
                    flag = FLAG_TBA if any_tba else FLAG_PRESERVED
                produced.append((pt, flag))
            remaining = [p for i, p in enumerate(current) if i not in combo]
            current = sorted(
                remaining + produced,
                key=lambda p: (_TYPE_RANK.get(p[0].head, 9) if isinstance(p[0], App) else 99, term_sort_key(p[0])),
            )
            trace.append(
                RewriteStep(rule.name, tuple(t for t, _ in consumed), tuple(produced_terms))
            )
            progress = True
            break
    return current, trace


def reformulate(
    kind: str, invs: Sequence[Term], base: Optional[RuleBase] = None
) -> tuple[list[Term], list[RewriteStep]]:
    """Plain (unflagged) reformulation to canonical form."""
    flagged = [(t, FLAG_PRESERVED) for t in invs]
    out, trace = reformulate_flagged(kind, flagged, base)
    return [t for t, _ in out], trace


# --- Endpoint-label normalization for segments ------------------------------

_SWAP = {"end1": "end2", "end2": "end1"}


def swap_endpoints(t: Term) -> Term:
    if isinstance(t, App):
        if t.head == ">>" and len(t.args) == 2:
            fld = t.args[1]
            if isinstance(fld, App) and fld.head in _SWAP:
                return App(">>", (swap_endpoints(t.args[0]), App(_SWAP[fld.head], ())))
        return App(t.head, tuple(swap_endpoints(a) for a in t.args))
    return t


def _multiset_key(invs: Sequence[Term]) -> tuple:
    return tuple(term_sort_key(t) for t in sort_invariants(invs))


def normalize_endpoint_labels(kind: str, invs: Sequence[Term]) -> tuple[list[Term], bool]:
    """Segment canonicalization: relabel end1/end2 when no signed direction
    invariant blocks it and the swapped multiset orders lower.

    Returns (multiset, swapped).  Plan fragments are generic in endpoint
    labels, so one canonical labeling per situation halves the library.
    """
    if kind != LINE_SEGMENT:
        return list(invs), False
    if any(isinstance(t, App) and t.head == "invariant-direction" for t in invs):
        return list(invs), False
    swapped = [swap_endpoints(t) for t in invs]
    if _multiset_key(swapped) < _multiset_key(invs):
        return swapped, True
    return list(invs), False


def canonicalize(
    kind: str, invs: Sequence[Term], base: Optional[RuleBase] = None
) -> tuple[list[Term], bool, list[RewriteStep]]:
    """Reformulate to a fixpoint, then normalize endpoint labels.

    Returns (canonical multiset, labels_swapped, trace).
    """
    out, trace = reformulate(kind, invs, base)
    out2, swapped = normalize_endpoint_labels(kind, out)
    return sort_invariants(out2), swapped, trace


def canonical_signature(
    kind: str, invs: Sequence[Term], base: Optional[RuleBase] = None
) -> tuple[Signature, bool, list[Term]]:
    """Canonical signature of an invariant multiset, plus the label swap flag
    and the canonical multiset itself."""
    canon, swapped, _ = canonicalize(kind, invs, base)
    return signature_of(kind, canon), swapped, canon


# --- Signature scheme derivation -------------------------------------------


def _geom_const(kind: str) -> Const:
    return Const("$g")


def _acc(g: Term, fld: str) -> App:
    return App(">>", (g, App(fld, ())))


def instantiate_signature(kind: str, sig: Signature) -> list[Term]:
    """A representative invariant multiset for a raw signature tuple.

    Distance constraints alternate CCW/CW (and OUTSIDE/INSIDE) so the shipped
    pair rules apply to the representative.
    """
    g = _geom_const(kind)
    invs: list[Term] = []
    if isinstance(sig, CircleSignature):
        if sig.center == L1:
            invs.append(App("1d-constrained-point", (g, _acc(g, "center"), Const("$locus0"))))
        elif sig.center == FIXED:
            invs.append(App("invariant-point", (g, _acc(g, "center"), Const("$point0"))))
        if sig.radius == FIXED:
            invs.append(App("invariant-dimension", (g, Const("$dim0"))))
        for i in range(sig.fixed_pts):
            bias = App("BIAS_OUTSIDE", ()) if i == 0 else App("BIAS_INSIDE", ())
            invs.append(
                App("fixed-distance-point", (g, Const(f"$anchor{i}"), Const(f"$pdist{i}"), bias))
            )
        for i in range(sig.fixed_lines):
            bias = App("BIAS_COUNTERCLOCKWISE", ()) if i == 0 else App("BIAS_CLOCKWISE", ())
            invs.append(
                App("fixed-distance-line", (g, Const(f"$line{i}"), Const(f"$ldist{i}"), bias))
            )
        return sort_invariants(invs)

    assert isinstance(sig, SegmentSignature)
    for end, state, tag in (("end1", sig.end1, "a"), ("end2", sig.end2, "b")):
        if state == L1:
            invs.append(App("1d-constrained-point", (g, _acc(g, end), Const(f"$locus_{tag}"))))
        elif state == FIXED:
            invs.append(App("invariant-point", (g, _acc(g, end), Const(f"$point_{tag}"))))
    if sig.direction == FIXED:
        invs.append(App("invariant-direction", (g, Const("$dir0"))))
    if sig.length == FIXED:
        invs.append(App("invariant-dimension", (g, Const("$len0"))))
    for i in range(sig.fixed_lines):
        bias = App("BIAS_COUNTERCLOCKWISE", ()) if i == 0 else App("BIAS_CLOCKWISE", ())
        invs.append(
            App("fixed-distance-line", (g, Const(f"$line{i}"), Const(f"$ldist{i}"), bias))
        )
    return sort_invariants(invs)


def derive_signature_scheme(
    kind: str, base: Optional[RuleBase] = None
) -> list[Signature]:
    """Enumerate raw signatures, reduce each representative to canonical form,
    re-extract signatures, deduplicate, sort."""
    from .geoms import enumerate_raw_signatures

    seen: dict[Signature, None] = {}
    for raw in enumerate_raw_signatures(kind):
        invs = instantiate_signature(kind, raw)
        sig, _, _ = canonical_signature(kind, invs, base)
        seen.setdefault(sig, None)
    return sorted(seen.keys())


def canonical_multisets(
    kind: str, base: Optional[RuleBase] = None
) -> dict[Signature, list[Term]]:
    """Canonical signature -> representative invariant multiset.

    Canonical signatures are reformulation fixpoints, so instantiating them
    directly gives the generic representative with plain symbolic constants
    (asserted below)."""
    out: dict[Signature, list[Term]] = {}
    for sig in derive_signature_scheme(kind, base):
        invs = instantiate_signature(kind, sig)
        canon, swapped, _ = canonicalize(kind, invs, base)
        if swapped or _multiset_key(canon) != _multiset_key(invs):
            raise RuleBaseError(
                f"canonical signature {sig} is not a reformulation fixpoint"
            )
        out[sig] = canon
    return out
