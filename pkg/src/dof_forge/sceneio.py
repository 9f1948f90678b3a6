"""File formats: scene documents, plan-library documents (both JSON), and
the S-expression rule-base text handled by the rules module.

Scene invariants use short bias names ("CCW", "CW", "INSIDE", "OUTSIDE") and
may reference named entities or carry inline geometry.  Documents are
validated strictly: unknown fields are rejected.
"""

from __future__ import annotations

import json
from typing import Any, Optional

from .geoms import (
    CIRCLE,
    CircleSignature,
    CircleState,
    LINE_SEGMENT,
    SegmentSignature,
    SegmentState,
    Signature,
)
from .kernel import Circle, Direction2, Line, Point2, Ray, Tolerance
from .phase2 import (
    Abort,
    Apply,
    Bind,
    Case,
    ChooseOnLocus,
    ChoosePoint,
    DimSpec,
    ForMin,
    PlanFragment,
    Step,
)
from .runtime import PlanLibrary, Scene
from .terms import App, Const, Term, num, parse_term, print_term


class FormatError(ValueError):
    """Malformed document."""


_SHORT_BIAS = {
    "BIAS_COUNTERCLOCKWISE": "CCW",
    "BIAS_CLOCKWISE": "CW",
    "BIAS_LEFT": "LEFT",
    "BIAS_RIGHT": "RIGHT",
    "BIAS_INSIDE": "INSIDE",
    "BIAS_OUTSIDE": "OUTSIDE",
}
_LONG_BIAS = {v: k for k, v in _SHORT_BIAS.items()}


def _require_keys(obj: dict, required: set[str], optional: set[str], what: str) -> None:
    keys = set(obj)
    missing = required - keys
    unknown = keys - required - optional
    if missing:
        raise FormatError(f"{what}: missing fields {sorted(missing)}")
    if unknown:
        raise FormatError(f"{what}: unknown fields {sorted(unknown)}")


def _xy(v: Any, what: str) -> tuple[float, float]:
    if (
        not isinstance(v, (list, tuple))
        or len(v) != 2
        or not all(isinstance(c, (int, float)) for c in v)
    ):
        raise FormatError(f"{what}: expected [x, y], got {v!r}")
    return float(v[0]), float(v[1])


def _point(v: Any, what: str) -> Point2:
    x, y = _xy(v, what)
    return Point2(x, y)


_counter = 0


def _lit(value: object) -> Const:
    global _counter
    _counter += 1
    return Const(f"$_lit{_counter}", value)


def _locus_term(v: Any, what: str) -> Term:
    if isinstance(v, dict) and set(v) == {"entity"}:
        return Const(f"${v['entity']}")
    if not isinstance(v, dict) or "kind" not in v:
        raise FormatError(f"{what}: bad locus {v!r}")
    kind = v["kind"]
    if kind == "line":
        _require_keys(v, {"kind", "through", "dir"}, set(), what)
        return _lit(Line(_point(v["through"], what), Direction2(*_xy(v["dir"], what))))
    if kind == "ray":
        _require_keys(v, {"kind", "origin", "dir"}, set(), what)
        return _lit(Ray(_point(v["origin"], what), Direction2(*_xy(v["dir"], what))))
    if kind == "circle":
        _require_keys(v, {"kind", "center", "radius"}, set(), what)
        return _lit(Circle(_point(v["center"], what), float(v["radius"])))
    raise FormatError(f"{what}: unknown locus kind {kind!r}")


def _point_term(v: Any, what: str) -> Term:
    if isinstance(v, dict) and set(v) == {"entity"}:
        return Const(f"${v['entity']}")
    return _lit(_point(v, what))


def _acc(geom: str, pt: str) -> App:
    if pt not in ("center", "end1", "end2"):
        raise FormatError(f"bad point accessor {pt!r}")
    return App(">>", (Const(f"${geom}"), App(pt, ())))


def invariant_from_json(geom: str, doc: Any) -> Term:
    if not isinstance(doc, dict) or "type" not in doc:
        raise FormatError(f"invariant for {geom}: expected an object with a type")
    t = doc["type"]
    g = Const(f"${geom}")
    what = f"invariant {t} on {geom}"
    if t == "invariant-point":
        _require_keys(doc, {"type", "pt", "coords"}, set(), what)
        return App("invariant-point", (g, _acc(geom, doc["pt"]), _point_term(doc["coords"], what)))
    if t == "1d-constrained-point":
        _require_keys(doc, {"type", "pt", "locus"}, set(), what)
        return App(
            "1d-constrained-point", (g, _acc(geom, doc["pt"]), _locus_term(doc["locus"], what))
        )
    if t == "2d-constrained-point":
        _require_keys(doc, {"type", "pt"}, {"region"}, what)
        return App("2d-constrained-point", (g, _acc(geom, doc["pt"]), App("PLANE", ())))
    if t == "fixed-distance-point":
        _require_keys(doc, {"type", "anchor", "dist", "bias"}, set(), what)
        if doc["bias"] not in ("INSIDE", "OUTSIDE"):
            raise FormatError(f"{what}: bias must be INSIDE or OUTSIDE")
        return App(
            "fixed-distance-point",
            (
                g,
                _point_term(doc["anchor"], what),
                num(float(doc["dist"])),
                App(_LONG_BIAS[doc["bias"]], ()),
            ),
        )
    if t == "fixed-distance-line":
        _require_keys(doc, {"type", "line", "dist", "bias"}, set(), what)
        if doc["bias"] not in ("CCW", "CW"):
            raise FormatError(f"{what}: bias must be CCW or CW")
        line = doc["line"]
        if isinstance(line, dict) and set(line) == {"entity"}:
            line_term: Term = Const(f"${line['entity']}")
        else:
            line_term = _locus_term(dict(line, kind="line") if "kind" not in line else line, what)
        return App(
            "fixed-distance-line",
            (g, line_term, num(float(doc["dist"])), App(_LONG_BIAS[doc["bias"]], ())),
        )
    if t == "invariant-direction":
        _require_keys(doc, {"type", "dir"}, set(), what)
        return App("invariant-direction", (g, _lit(Direction2(*_xy(doc["dir"], what)))))
    if t == "invariant-dimension":
        _require_keys(doc, {"type", "value"}, set(), what)
        return App("invariant-dimension", (g, num(float(doc["value"]))))
    raise FormatError(f"{what}: unknown invariant type")


def invariant_to_json(term: Term) -> dict:
    if not isinstance(term, App):
        raise FormatError(f"cannot serialize invariant {term!r}")

    def pt_name(acc: Term) -> str:
        if isinstance(acc, App) and acc.head == ">>" and isinstance(acc.args[1], App):
            return acc.args[1].head
        raise FormatError(f"cannot serialize accessor {acc!r}")

    def point_json(t: Term) -> Any:
        if isinstance(t, Const) and t.value is None:
            return {"entity": t.name.lstrip("$")}
        if isinstance(t, Const) and isinstance(t.value, Point2):
            return [t.value.x, t.value.y]
        raise FormatError(f"cannot serialize point slot {t!r}")

    def locus_json(t: Term) -> Any:
        if isinstance(t, Const) and t.value is None:
            return {"entity": t.name.lstrip("$")}
        if isinstance(t, Const) and isinstance(t.value, Line):
            v = t.value
            return {"kind": "line", "through": [v.through.x, v.through.y], "dir": [v.dir.dx, v.dir.dy]}
        if isinstance(t, Const) and isinstance(t.value, Ray):
            v = t.value
            return {"kind": "ray", "origin": [v.origin.x, v.origin.y], "dir": [v.dir.dx, v.dir.dy]}
        if isinstance(t, Const) and isinstance(t.value, Circle):
            v = t.value
            return {"kind": "circle", "center": [v.center.x, v.center.y], "radius": v.radius}
        raise FormatError(f"cannot serialize locus slot {t!r}")

    def number(t: Term) -> float:
        if isinstance(t, Const) and isinstance(t.value, (int, float)):
            return float(t.value)
        raise FormatError(f"cannot serialize number slot {t!r}")

    def bias(t: Term) -> str:
        if isinstance(t, App) and t.head in _SHORT_BIAS:
            return _SHORT_BIAS[t.head]
        raise FormatError(f"cannot serialize bias {t!r}")

    h = term.head
    if h == "invariant-point":
        return {"type": h, "pt": pt_name(term.args[1]), "coords": point_json(term.args[2])}
    if h == "1d-constrained-point":
        return {"type": h, "pt": pt_name(term.args[1]), "locus": locus_json(term.args[2])}
    if h == "2d-constrained-point":
        return {"type": h, "pt": pt_name(term.args[1])}
    if h == "fixed-distance-point":
        return {
            "type": h,
            "anchor": point_json(term.args[1]),
            "dist": number(term.args[2]),
            "bias": bias(term.args[3]),
        }
    if h == "fixed-distance-line":
        line = term.args[1]
        if isinstance(line, Const) and line.value is None:
            line_doc: Any = {"entity": line.name.lstrip("$")}
        else:
            line_doc = locus_json(line)
        return {"type": h, "line": line_doc, "dist": number(term.args[2]), "bias": bias(term.args[3])}
    if h == "invariant-direction":
        d = term.args[1]
        if isinstance(d, Const) and isinstance(d.value, Direction2):
            return {"type": h, "dir": [d.value.dx, d.value.dy]}
        raise FormatError(f"cannot serialize direction {d!r}")
    if h == "invariant-dimension":
        return {"type": h, "value": number(term.args[1])}
    raise FormatError(f"cannot serialize invariant {term!r}")


def scene_from_json(doc: Any) -> Scene:
    if not isinstance(doc, dict):
        raise FormatError("scene document must be an object")
    _require_keys(
        doc, {"entities", "geoms", "constraints"}, {"tolerance"}, "scene"
    )
    tol = Tolerance()
    if "tolerance" in doc:
        t = doc["tolerance"]
        _require_keys(t, set(), {"abs_eps", "rel_eps"}, "tolerance")
        tol = Tolerance(float(t.get("abs_eps", 1e-9)), float(t.get("rel_eps", 1e-9)))
    scene = Scene(tolerance=tol)
    for e in doc["entities"]:
        _require_keys(e, {"name", "kind", "data"}, set(), "entity")
        name = e["name"]
        if name in scene.entities:
            raise FormatError(f"duplicate entity name {name!r}")
        if e["kind"] == "point":
            scene.entities[name] = _point(e["data"], f"entity {name}")
        elif e["kind"] == "line":
            d = e["data"]
            _require_keys(d, {"through", "dir"}, set(), f"entity {name}")
            scene.entities[name] = Line(
                _point(d["through"], name), Direction2(*_xy(d["dir"], name))
            )
        else:
            raise FormatError(f"entity {name}: unknown kind {e['kind']!r}")
    for g in doc["geoms"]:
        _require_keys(g, {"name", "kind", "state"}, {"preserved"}, "geom")
        name = g["name"]
        if name in scene.geoms or name in scene.entities:
            raise FormatError(f"duplicate name {name!r}")
        st = g["state"]
        if g["kind"] == CIRCLE:
            _require_keys(st, {"center", "radius"}, set(), f"geom {name}")
            scene.geoms[name] = CircleState(name, _point(st["center"], name), float(st["radius"]))
        elif g["kind"] == LINE_SEGMENT:
            _require_keys(st, {"end1", "end2"}, set(), f"geom {name}")
            scene.geoms[name] = SegmentState(
                name, _point(st["end1"], name), _point(st["end2"], name)
            )
        else:
            raise FormatError(f"geom {name}: unknown kind {g['kind']!r}")
        scene.preserved[name] = [
            invariant_from_json(name, inv) for inv in g.get("preserved", [])
        ]
    for c in doc["constraints"]:
        _require_keys(c, {"geom", "invariant"}, set(), "constraint")
        if c["geom"] not in scene.geoms:
            raise FormatError(f"constraint references unknown geom {c['geom']!r}")
        scene.constraints.append((c["geom"], invariant_from_json(c["geom"], c["invariant"])))
    return scene


def scene_to_json(scene: Scene, preserved_override: Optional[dict] = None) -> dict:
    entities = []
    for name in scene.entities:
        e = scene.entities[name]
        if isinstance(e, Point2):
            entities.append({"name": name, "kind": "point", "data": [e.x, e.y]})
        else:
            entities.append(
                {
                    "name": name,
                    "kind": "line",
                    "data": {
                        "through": [e.through.x, e.through.y],
                        "dir": [e.dir.dx, e.dir.dy],
                    },
                }
            )
    geoms = []
    for name, g in scene.geoms.items():
        preserved_terms = (
            preserved_override.get(name, []) if preserved_override is not None
            else scene.preserved.get(name, [])
        )
        entry: dict[str, Any] = {"name": name, "kind": g.kind}
        if isinstance(g, CircleState):
            entry["state"] = {"center": [g.center.x, g.center.y], "radius": g.radius}
        else:
            entry["state"] = {"end1": [g.end1.x, g.end1.y], "end2": [g.end2.x, g.end2.y]}
        entry["preserved"] = [invariant_to_json(t) for t in preserved_terms]
        geoms.append(entry)
    return {
        "tolerance": {"abs_eps": scene.tolerance.abs_eps, "rel_eps": scene.tolerance.rel_eps},
        "entities": entities,
        "geoms": geoms,
        "constraints": [
            {"geom": g, "invariant": invariant_to_json(t)} for g, t in scene.constraints
        ],
    }


# --- Plan library documents -----------------------------------------------------


def signature_to_json(sig: Signature) -> dict:
    if isinstance(sig, CircleSignature):
        return {
            "kind": CIRCLE,
            "center": sig.center,
            "radius": sig.radius,
            "fixed_pts": sig.fixed_pts,
            "fixed_lines": sig.fixed_lines,
        }
    assert isinstance(sig, SegmentSignature)
    return {
        "kind": LINE_SEGMENT,
        "end1": sig.end1,
        "end2": sig.end2,
        "direction": sig.direction,
        "length": sig.length,
        "fixed_lines": sig.fixed_lines,
    }


def signature_from_json(doc: dict) -> Signature:
    if doc.get("kind") == CIRCLE:
        return CircleSignature(doc["center"], doc["radius"], doc["fixed_pts"], doc["fixed_lines"])
    if doc.get("kind") == LINE_SEGMENT:
        return SegmentSignature(
            doc["end1"], doc["end2"], doc["direction"], doc["length"], doc["fixed_lines"]
        )
    raise FormatError(f"bad signature {doc!r}")


def _step_to_json(step: Step) -> dict:
    if isinstance(step, Bind):
        return {"step": "bind", "local": step.local, "expr": print_term(step.expr)}
    if isinstance(step, Apply):
        return {"step": "apply", "action": print_term(step.action)}
    if isinstance(step, ForMin):
        return {
            "step": "for-min",
            "dims": [
                {
                    "local": d.local,
                    "kind": d.kind,
                    "locus": print_term(d.locus) if d.locus is not None else None,
                }
                for d in step.dims
            ],
            "body": [_step_to_json(s) for s in step.body],
        }
    if isinstance(step, Case):
        return {
            "step": "case",
            "on": step.on,
            "points": [_step_to_json(s) for s in step.points],
            "coincident": [_step_to_json(s) for s in step.coincident],
            "empty": [_step_to_json(s) for s in step.empty],
        }
    if isinstance(step, ChoosePoint):
        return {"step": "choose-point", "local": step.local, "source": step.source}
    if isinstance(step, ChooseOnLocus):
        return {"step": "choose-on-locus", "local": step.local, "source": step.source}
    if isinstance(step, Abort):
        return {"step": "abort", "message": step.message}
    raise FormatError(f"cannot serialize step {step!r}")


def _step_from_json(doc: dict) -> Step:
    kind = doc.get("step")
    if kind == "bind":
        return Bind(doc["local"], parse_term(doc["expr"]))
    if kind == "apply":
        return Apply(parse_term(doc["action"]))
    if kind == "for-min":
        return ForMin(
            tuple(
                DimSpec(
                    local=d["local"],
                    kind=d["kind"],
                    locus=parse_term(d["locus"]) if d.get("locus") else None,
                )
                for d in doc["dims"]
            ),
            tuple(_step_from_json(s) for s in doc["body"]),
        )
    if kind == "case":
        return Case(
            on=doc["on"],
            points=tuple(_step_from_json(s) for s in doc["points"]),
            coincident=tuple(_step_from_json(s) for s in doc["coincident"]),
            empty=tuple(_step_from_json(s) for s in doc["empty"]),
        )
    if kind == "choose-point":
        return ChoosePoint(doc["local"], doc["source"])
    if kind == "choose-on-locus":
        return ChooseOnLocus(doc["local"], doc["source"])
    if kind == "abort":
        return Abort(doc["message"])
    raise FormatError(f"unknown step {doc!r}")


def library_to_json(lib: PlanLibrary) -> dict:
    frags = []
    for sig in sorted(lib.fragments.keys()):
        for f in lib.fragments[sig]:
            frags.append(
                {
                    "name": f.name,
                    "signature": signature_to_json(f.signature),
                    "geom_const": f.geom_const,
                    "params": list(f.params),
                    "invariants": [print_term(t) for t in f.invariants],
                    "body": [_step_to_json(s) for s in f.body],
                }
            )
    return {
        "geom_kind": lib.kind,
        "rulebase_hash": lib.rulebase_hash,
        "config": lib.config,
        "fragments": frags,
    }


def library_from_json(doc: dict) -> PlanLibrary:
    _require_keys(doc, {"geom_kind", "fragments"}, {"rulebase_hash", "config"}, "library")
    lib = PlanLibrary(
        kind=doc["geom_kind"],
        rulebase_hash=doc.get("rulebase_hash", ""),
        config=doc.get("config", {}),
    )
    for f in doc["fragments"]:
        _require_keys(
            f,
            {"name", "signature", "geom_const", "params", "invariants", "body"},
            set(),
            "fragment",
        )
        frag = PlanFragment(
            name=f["name"],
            kind=doc["geom_kind"],
            signature=signature_from_json(f["signature"]),
            geom_const=f["geom_const"],
            params=tuple(f["params"]),
            invariants=tuple(parse_term(t) for t in f["invariants"]),
            body=tuple(_step_from_json(s) for s in f["body"]),
        )
        lib.add(frag)
    return lib


def dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"
