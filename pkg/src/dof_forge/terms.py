"""Symbolic term language: variables, constants, applications.

Lexical conventions follow the rule-file format: ``?name`` is a variable,
``$name`` a named constant, bare symbols are applications (zero-arity for
enum-like symbols such as ``BIAS_LEFT`` or field names).  Numeric literals
are constants carrying their value.

Provides standard first-order unification with occurs check.  Failure is a
value (None), not an exception.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union


@dataclass(frozen=True)
class Var:
    name: str  # includes the leading '?'

    def __repr__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Const:
    name: str  # '$'-prefixed symbolic name, or printed literal
    value: object = None  # literal payload (float) when numeric

    def __repr__(self) -> str:
        return self.name


@dataclass(frozen=True)
class App:
    head: str
    args: tuple["Term", ...] = ()

    def __repr__(self) -> str:
        if not self.args:
            return self.head
        return "(" + " ".join([self.head] + [repr(a) for a in self.args]) + ")"


Term = Union[Var, Const, App]

# Head arity table.  Accessor fields and bias symbols are zero-arity heads.
HEAD_ARITIES: dict[str, int] = {
    "translate": 2,
    "rotate": 4,
    "scale": 3,
    "v-": 2,
    "plus": 2,
    "minus": 2,
    "magnitude": 1,
    ">>": 2,
    "make-line-locus": 2,
    "make-displaced-line": 3,
    "make-circle-locus": 2,
    "make-ray-locus": 2,
    "translate-locus": 2,
    "angular-bisector": 4,
    "0d-intersection": 2,
    "signed-distance": 2,
    "angle-between": 2,
    "direction-of": 1,
    "reverse-direction": 1,
    "equidistant-point-point": 6,
    "equidistant-point-line": 6,
    # invariant constructors
    "invariant-point": 3,
    "1d-constrained-point": 3,
    "2d-constrained-point": 3,
    "fixed-distance-point": 4,
    "fixed-distance-line": 4,
    "invariant-direction": 2,
    "invariant-dimension": 2,
    # zero-arity symbols
    "arbitrary-point": 0,
    "axis-2d": 0,
    "center": 0,
    "end1": 0,
    "end2": 0,
    "direction": 0,
    "length": 0,
    "radius": 0,
    "BIAS_LEFT": 0,
    "BIAS_RIGHT": 0,
    "BIAS_COUNTERCLOCKWISE": 0,
    "BIAS_CLOCKWISE": 0,
    "BIAS_INSIDE": 0,
    "BIAS_OUTSIDE": 0,
    "PLANE": 0,
}


class TermSyntaxError(ValueError):
    """Raised on malformed term text; carries line/column."""

    def __init__(self, message: str, line: int, col: int) -> None:
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


def sym(name: str) -> App:
    return App(name, ())


def num(value: float) -> Const:
    v = float(value)
    text = repr(v) if v != int(v) else str(int(v))
    return Const(text, v)


def is_number(t: Term) -> bool:
    return isinstance(t, Const) and t.value is not None


def subterms(t: Term) -> Iterator[Term]:
    yield t
    if isinstance(t, App):
        for a in t.args:
            yield from subterms(a)


def free_vars(t: Term) -> set[Var]:
    return {s for s in subterms(t) if isinstance(s, Var)}


Substitution = dict[Var, Term]


def walk(t: Term, subst: Substitution) -> Term:
    while isinstance(t, Var) and t in subst:
        t = subst[t]
    return t


def apply_subst(t: Term, subst: Substitution) -> Term:
    t = walk(t, subst)
    if isinstance(t, App) and t.args:
        return App(t.head, tuple(apply_subst(a, subst) for a in t.args))
    return t


def occurs(v: Var, t: Term, subst: Substitution) -> bool:
    t = walk(t, subst)
    if t == v:
        return True
    if isinstance(t, App):
        return any(occurs(v, a, subst) for a in t.args)
    return False


def unify(t1: Term, t2: Term, subst: Optional[Substitution] = None) -> Optional[Substitution]:
    """Most general unifier with occurs check, or None."""
    s: Substitution = dict(subst) if subst else {}
    stack = [(t1, t2)]
    while stack:
        a, b = stack.pop()
        a = walk(a, s)
        b = walk(b, s)
        if a == b:
            continue
        if isinstance(a, Var):
            if occurs(a, b, s):
                return None
            s[a] = b
            continue
        if isinstance(b, Var):
            if occurs(b, a, s):
                return None
            s[b] = a
            continue
        if isinstance(a, Const) and isinstance(b, Const):
            if a.name != b.name:
                return None
            continue
        if isinstance(a, App) and isinstance(b, App):
            if a.head != b.head or len(a.args) != len(b.args):
                return None
            stack.extend(zip(a.args, b.args))
            continue
        return None
    return s


def alpha_canonical(t: Term) -> Term:
    """Rename variables to a canonical sequence in traversal order."""
    mapping: dict[Var, Var] = {}

    def rec(u: Term) -> Term:
        if isinstance(u, Var):
            if u not in mapping:
                mapping[u] = Var(f"?_{len(mapping)}")
            return mapping[u]
        if isinstance(u, App) and u.args:
            return App(u.head, tuple(rec(a) for a in u.args))
        return u

    return rec(t)


def alpha_equal(t1: Term, t2: Term) -> bool:
    return alpha_canonical(t1) == alpha_canonical(t2)


def term_sort_key(t: Term) -> tuple:
    """Total deterministic order on terms (used for canonical multiset order)."""
    if isinstance(t, Var):
        return (0, t.name)
    if isinstance(t, Const):
        return (1, t.name)
    return (2, t.head, len(t.args)) + tuple(term_sort_key(a) for a in t.args)


class _FreshCounter:
    def __init__(self) -> None:
        self.n = 0

    def fresh(self, base: str) -> Var:
        self.n += 1
        return Var(f"{base}_{self.n}")


def rename_apart(t: Term, counter: _FreshCounter) -> tuple[Term, Substitution]:
    """Freshen every variable in t (monotone counter per synthesis session)."""
    mapping: Substitution = {}
    for v in sorted(free_vars(t), key=lambda x: x.name):
        mapping[v] = counter.fresh(v.name)
    return apply_subst(t, mapping), mapping


# --- S-expression reader -------------------------------------------------


def _tokens(text: str) -> Iterator[tuple[str, int, int]]:
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c in "()":
            yield c, line, col
            i += 1
            col += 1
            continue
        j = i
        while j < n and text[j] not in " \t\r\n();":
            j += 1
        yield text[i:j], line, col
        col += j - i
        i = j


def _atom(tok: str, line: int, col: int) -> Term:
    if tok.startswith("?"):
        return Var(tok)
    if tok.startswith("$"):
        return Const(tok)
    try:
        return num(float(tok))
    except ValueError:
        pass
    return App(tok, ())


def parse_terms(text: str) -> list[Term]:
    """Parse every toplevel S-expression in text."""
    out: list[Term] = []
    stack: list[list] = []
    positions: list[tuple[int, int]] = []
    for tok, line, col in _tokens(text):
        if tok == "(":
            stack.append([])
            positions.append((line, col))
        elif tok == ")":
            if not stack:
                raise TermSyntaxError("unbalanced ')'", line, col)
            items = stack.pop()
            positions.pop()
            if not items:
                raise TermSyntaxError("empty application", line, col)
            head = items[0]
            if not (isinstance(head, App) and not head.args):
                raise TermSyntaxError("application head must be a symbol", line, col)
            node = App(head.head, tuple(items[1:]))
            if stack:
                stack[-1].append(node)
            else:
                out.append(node)
        else:
            node = _atom(tok, line, col)
            if stack:
                stack[-1].append(node)
            else:
                out.append(node)
    if stack:
        line, col = positions[-1]
        raise TermSyntaxError("unbalanced '('", line, col)
    return out


def parse_term(text: str) -> Term:
    terms = parse_terms(text)
    if len(terms) != 1:
        raise TermSyntaxError(f"expected one term, got {len(terms)}", 1, 1)
    return terms[0]


def check_arity(t: Term) -> None:
    """Arity-check every application against the head table."""
    for s in subterms(t):
        if isinstance(s, App):
            expected = HEAD_ARITIES.get(s.head)
            if expected is not None and expected != len(s.args):
                raise ValueError(
                    f"head '{s.head}' expects {expected} args, got {len(s.args)}: {s!r}"
                )


def print_term(t: Term) -> str:
    return repr(t)
