"""Exact-semantics 2D geometry primitives.

Points, vectors, directed lines, rays and circles as loci, plus the
measurement routines (intersection, displacement, bisectors) used by the
constraint machinery.  Singular and degenerate outcomes are explicit values,
never silent failures: intersecting two coincident loci yields
``Coincident``, disjoint loci yield ``Empty``.

Every value is immutable and every operation is a pure function, so results
are bit-reproducible for identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Union


class GeometryError(ValueError):
    """Raised on invalid kernel inputs (non-finite numbers, bad locus kinds)."""


class UnsupportedLocus(GeometryError):
    """Raised when a reserved conic tag reaches a kernel operation."""


@dataclass(frozen=True)
class Tolerance:
    """Mixed absolute/relative comparison tolerance.

    Two scalars a, b are geometrically equal iff
    ``|a - b| <= abs_eps + rel_eps * max(|a|, |b|)``.
    """

    abs_eps: float = 1e-9
    rel_eps: float = 1e-9

    def __post_init__(self) -> None:
        if not (self.abs_eps > 0 and self.rel_eps > 0):
            raise GeometryError("tolerance epsilons must be positive")

    def eq(self, a: float, b: float) -> bool:
        return abs(a - b) <= self.abs_eps + self.rel_eps * max(abs(a), abs(b))

    def is_zero(self, a: float) -> bool:
        return self.eq(a, 0.0)


DEFAULT_TOL = Tolerance()


def _check_finite(*vals: float) -> None:
    for v in vals:
        if not math.isfinite(v):
            raise GeometryError(f"non-finite coordinate: {v!r}")


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self) -> None:
        _check_finite(self.x, self.y)

    def __add__(self, v: "Vector2") -> "Point2":
        return Point2(self.x + v.x, self.y + v.y)

    def __sub__(self, other: "Point2") -> "Vector2":
        return Vector2(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Vector2:
    x: float
    y: float

    def __post_init__(self) -> None:
        _check_finite(self.x, self.y)

    def __add__(self, other: "Vector2") -> "Vector2":
        return Vector2(self.x + other.x, self.y + other.y)

    def __neg__(self) -> "Vector2":
        return Vector2(-self.x, -self.y)

    def scaled(self, k: float) -> "Vector2":
        return Vector2(self.x * k, self.y * k)

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def dot(self, other: "Vector2") -> float:
        return self.x * other.x + self.y * other.y

    def cross(self, other: "Vector2") -> float:
        return self.x * other.y - self.y * other.x


@dataclass(frozen=True)
class Direction2:
    """Unit vector; construction normalizes and rejects near-zero input."""

    dx: float
    dy: float

    def __post_init__(self) -> None:
        _check_finite(self.dx, self.dy)
        n = math.hypot(self.dx, self.dy)
        if n == 0.0:
            raise GeometryError("zero vector has no direction")
        if abs(n - 1.0) > 1e-12:
            object.__setattr__(self, "dx", self.dx / n)
            object.__setattr__(self, "dy", self.dy / n)

    @staticmethod
    def of_vector(v: Vector2) -> "Direction2":
        return Direction2(v.x, v.y)

    def as_vector(self) -> Vector2:
        return Vector2(self.dx, self.dy)

    def left_normal(self) -> Vector2:
        return Vector2(-self.dy, self.dx)

    def reversed(self) -> "Direction2":
        return Direction2(-self.dx, -self.dy)

    def angle(self) -> float:
        return math.atan2(self.dy, self.dx)


@dataclass(frozen=True)
class Line:
    """Infinite directed line through a point."""

    through: Point2
    dir: Direction2


@dataclass(frozen=True)
class Ray:
    """Half-line from origin along dir (parameter t >= 0)."""

    origin: Point2
    dir: Direction2


@dataclass(frozen=True)
class Circle:
    center: Point2
    radius: float

    def __post_init__(self) -> None:
        _check_finite(self.radius)
        if self.radius <= 0:
            raise GeometryError(f"circle radius must be positive, got {self.radius}")


# Reserved conic tags: recognised by name, construction rejected.
RESERVED_CONICS = ("parabola", "hyperbola", "ellipse")


@dataclass(frozen=True)
class ReservedConic:
    """Placeholder for conic loci named by the vocabulary but not implemented."""

    tag: str

    def __post_init__(self) -> None:
        if self.tag not in RESERVED_CONICS:
            raise GeometryError(f"unknown conic tag {self.tag!r}")


Locus1d = Union[Line, Ray, Circle, ReservedConic]


def _require_supported(locus: Locus1d) -> None:
    if isinstance(locus, ReservedConic):
        raise UnsupportedLocus(f"conic locus '{locus.tag}' is reserved, not implemented")


@dataclass(frozen=True)
class Points:
    """Transversal intersection outcome: one or two points, lexicographic order."""

    points: tuple[Point2, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.points) <= 2:
            raise GeometryError("Points carries one or two intersection points")


@dataclass(frozen=True)
class Coincident:
    """Singular outcome: the two loci are geometrically equal."""

    locus: Locus1d


@dataclass(frozen=True)
class Empty:
    """Degenerate outcome: the loci do not intersect."""


IntersectionResult = Union[Points, Coincident, Empty]


def v_sub(a: Point2, b: Point2) -> Vector2:
    """Vector from b to a."""
    return Vector2(a.x - b.x, a.y - b.y)


def magnitude(v: Vector2) -> float:
    return v.norm()


def make_line_locus(through: Point2, direction: Direction2) -> Line:
    return Line(through, direction)


LEFT = "LEFT"
RIGHT = "RIGHT"


def make_displaced_line(line: Line, bias: str, dist: float) -> Line:
    """Parallel line at distance dist on the LEFT or RIGHT of the directed line."""
    if not isinstance(line, Line):
        raise GeometryError(f"make_displaced_line requires a Line, got {type(line).__name__}")
    if bias not in (LEFT, RIGHT):
        raise GeometryError(f"bad displacement bias {bias!r}")
    _check_finite(dist)
    n = line.dir.left_normal()
    sign = 1.0 if bias == LEFT else -1.0
    return Line(line.through + n.scaled(sign * dist), line.dir)


def signed_distance(line: Line, p: Point2) -> float:
    """Perpendicular distance, positive iff p lies left of the directed line."""
    if not isinstance(line, Line):
        raise GeometryError(f"signed_distance requires a Line, got {type(line).__name__}")
    return line.dir.as_vector().cross(p - line.through)


def _lines_parallel(l1: Line, l2: Line, tol: Tolerance) -> bool:
    return tol.is_zero(l1.dir.as_vector().cross(l2.dir.as_vector()))


def _line_line_point(l1: Line, l2: Line) -> Point2:
    # Solve l1.through + t*d1 = l2.through + s*d2 for t.
    d1 = l1.dir.as_vector()
    d2 = l2.dir.as_vector()
    denom = d1.cross(d2)
    w = l2.through - l1.through
    t = w.cross(d2) / denom
    return l1.through + d1.scaled(t)


def angular_bisector(l1: Line, l2: Line, bias1: str, bias2: str, tol: Tolerance = DEFAULT_TOL) -> Locus1d:
    """One of the four bisectors of two directed lines, selected by biases.

    bias_i is "CCW" (positive signed-distance half-plane of l_i) or "CW"
    (negative half-plane).  Transversal case: the ray from the intersection
    point along which signed_distance(l1,q)*s1 == signed_distance(l2,q)*s2 >= 0
    with s = +1 for CCW and -1 for CW.  Parallel distinct lines: the midline.
    Coincident lines: l1 itself.
    """
    for b in (bias1, bias2):
        if b not in ("CCW", "CW"):
            raise GeometryError(f"bad bisector bias {b!r}")
    if not (isinstance(l1, Line) and isinstance(l2, Line)):
        raise GeometryError("angular_bisector requires two Lines")
    s1 = 1.0 if bias1 == "CCW" else -1.0
    s2 = 1.0 if bias2 == "CCW" else -1.0
    if _lines_parallel(l1, l2, tol):
        off = signed_distance(l1, l2.through)
        if tol.is_zero(off):
            return l1
        mid = l1.through + l1.dir.left_normal().scaled(off / 2.0)
        return Line(mid, l1.dir)
    apex = _line_line_point(l1, l2)
    w = l1.dir.left_normal().scaled(s1) + l2.dir.left_normal().scaled(s2)
    return Ray(apex, Direction2.of_vector(w))


def point_at(locus: Locus1d, t: float) -> Point2:
    """Parameterization: Line/Ray map t via origin + t*dir, Circle by angle."""
    _require_supported(locus)
    if isinstance(locus, Line):
        return locus.through + locus.dir.as_vector().scaled(t)
    if isinstance(locus, Ray):
        if t < 0:
            raise GeometryError("ray parameter must be >= 0")
        return locus.origin + locus.dir.as_vector().scaled(t)
    return locus.center + Vector2(math.cos(t), math.sin(t)).scaled(locus.radius)


def _sorted_points(pts: Iterable[Point2], tol: Tolerance) -> tuple[Point2, ...]:
    uniq: list[Point2] = []
    for p in pts:
        if not any(tol.eq(p.x, q.x) and tol.eq(p.y, q.y) for q in uniq):
            uniq.append(p)
    return tuple(sorted(uniq, key=lambda p: (p.x, p.y)))


def _on_ray(ray: Ray, p: Point2, tol: Tolerance) -> bool:
    t = (p - ray.origin).dot(ray.dir.as_vector())
    return t >= -tol.abs_eps


def _line_of(locus: Union[Line, Ray]) -> Line:
    if isinstance(locus, Line):
        return locus
    return Line(locus.origin, locus.dir)


def _line_circle_points(line: Line, circle: Circle, tol: Tolerance) -> list[Point2]:
    d = signed_distance(line, circle.center)
    if abs(d) > circle.radius + tol.abs_eps + tol.rel_eps * circle.radius:
        return []
    # Foot of perpendicular from center, then offsets along the line.
    foot = circle.center + line.dir.left_normal().scaled(-d)
    h2 = circle.radius * circle.radius - d * d
    if h2 <= 0 or tol.is_zero(abs(d) - circle.radius):
        return [foot]
    h = math.sqrt(h2)
    u = line.dir.as_vector()
    return [foot + u.scaled(-h), foot + u.scaled(h)]


def _circles_equal(c1: Circle, c2: Circle, tol: Tolerance) -> bool:
    return (
        tol.eq(c1.center.x, c2.center.x)
        and tol.eq(c1.center.y, c2.center.y)
        and tol.eq(c1.radius, c2.radius)
    )


def _circle_circle_points(c1: Circle, c2: Circle, tol: Tolerance) -> list[Point2]:
    d = (c2.center - c1.center).norm()
    r1, r2 = c1.radius, c2.radius
    if d < tol.abs_eps:  # concentric, not coincident
        return []
    if d > r1 + r2 + tol.abs_eps or d < abs(r1 - r2) - tol.abs_eps:
        return []
    a = (r1 * r1 - r2 * r2 + d * d) / (2 * d)
    h2 = r1 * r1 - a * a
    u = (c2.center - c1.center).scaled(1.0 / d)
    base = c1.center + u.scaled(a)
    if h2 <= 0 or tol.is_zero(d - (r1 + r2)) or tol.is_zero(d - abs(r1 - r2)):
        return [base]
    h = math.sqrt(h2)
    n = Vector2(-u.y, u.x)
    return [base + n.scaled(h), base + n.scaled(-h)]


def intersect_0d(l1: Locus1d, l2: Locus1d, tol: Tolerance = DEFAULT_TOL) -> IntersectionResult:
    """Intersection with explicit singular (Coincident) and degenerate (Empty) cases."""
    _require_supported(l1)
    _require_supported(l2)

    straight1 = isinstance(l1, (Line, Ray))
    straight2 = isinstance(l2, (Line, Ray))

    if straight1 and straight2:
        a, b = _line_of(l1), _line_of(l2)
        if _lines_parallel(a, b, tol):
            if tol.is_zero(signed_distance(a, b.through)):
                # Geometrically equal carrier lines.  Rays of opposite
                # direction or disjoint spans are treated as coincident
                # carriers; plan execution only needs the singular tag.
                return Coincident(l1)
            return Empty()
        p = _line_line_point(a, b)
        for locus in (l1, l2):
            if isinstance(locus, Ray) and not _on_ray(locus, p, tol):
                return Empty()
        return Points((p,))

    if straight1 and isinstance(l2, Circle):
        pts = _line_circle_points(_line_of(l1), l2, tol)
        if isinstance(l1, Ray):
            pts = [p for p in pts if _on_ray(l1, p, tol)]
        return Points(_sorted_points(pts, tol)) if pts else Empty()

    if isinstance(l1, Circle) and straight2:
        res = intersect_0d(l2, l1, tol)
        return res

    if isinstance(l1, Circle) and isinstance(l2, Circle):
        if _circles_equal(l1, l2, tol):
            return Coincident(l1)
        pts = _circle_circle_points(l1, l2, tol)
        return Points(_sorted_points(pts, tol)) if pts else Empty()

    raise GeometryError("unreachable locus combination")


def closest_point(locus: Locus1d, p: Point2) -> tuple[float, Point2]:
    """Parameter and point on the locus minimizing distance to p."""
    _require_supported(locus)
    if isinstance(locus, Line):
        t = (p - locus.through).dot(locus.dir.as_vector())
        return t, point_at(locus, t)
    if isinstance(locus, Ray):
        t = max(0.0, (p - locus.origin).dot(locus.dir.as_vector()))
        return t, point_at(locus, t)
    v = p - locus.center
    if v.norm() == 0.0:
        return 0.0, point_at(locus, 0.0)
    t = math.atan2(v.y, v.x) % (2 * math.pi)
    return t, point_at(locus, t)


@dataclass(frozen=True)
class BBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        _check_finite(self.xmin, self.ymin, self.xmax, self.ymax)
        if self.xmax < self.xmin or self.ymax < self.ymin:
            raise GeometryError("empty bbox")

    def contains(self, p: Point2, slack: float = 1e-9) -> bool:
        return (
            self.xmin - slack <= p.x <= self.xmax + slack
            and self.ymin - slack <= p.y <= self.ymax + slack
        )

    def inflated(self, factor: float) -> "BBox":
        cx = (self.xmin + self.xmax) / 2.0
        cy = (self.ymin + self.ymax) / 2.0
        hx = max((self.xmax - self.xmin) / 2.0, 0.5) * factor
        hy = max((self.ymax - self.ymin) / 2.0, 0.5) * factor
        return BBox(cx - hx, cy - hy, cx + hx, cy + hy)

    @staticmethod
    def around(points: Iterable[Point2]) -> "BBox":
        pts = list(points)
        if not pts:
            return BBox(-1.0, -1.0, 1.0, 1.0)
        return BBox(
            min(p.x for p in pts),
            min(p.y for p in pts),
            max(p.x for p in pts),
            max(p.y for p in pts),
        )


def _clip_param_range(locus: Union[Line, Ray], bbox: BBox) -> tuple[float, float] | None:
    # Liang-Barsky style clip of origin + t*dir against the box.
    origin = locus.through if isinstance(locus, Line) else locus.origin
    d = locus.dir.as_vector()
    t0 = -math.inf if isinstance(locus, Line) else 0.0
    t1 = math.inf
    for comp_o, comp_d, lo, hi in (
        (origin.x, d.x, bbox.xmin, bbox.xmax),
        (origin.y, d.y, bbox.ymin, bbox.ymax),
    ):
        if abs(comp_d) < 1e-15:
            if not (lo - 1e-12 <= comp_o <= hi + 1e-12):
                return None
            continue
        ta = (lo - comp_o) / comp_d
        tb = (hi - comp_o) / comp_d
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    if t0 > t1:
        return None
    return t0, t1


def discretize(locus: Locus1d, bbox: BBox, n: int) -> list[float]:
    """n parameters evenly spaced over the locus portion inside bbox.

    Circles always sample n angles over [0, 2*pi); unbounded loci are clipped
    first.  Returns [] when the locus misses the box.
    """
    _require_supported(locus)
    if n < 2:
        raise GeometryError("discretize needs n >= 2")
    if isinstance(locus, Circle):
        if not any(
            bbox.contains(point_at(locus, 2 * math.pi * k / n)) for k in range(n)
        ):
            return []
        return [2 * math.pi * k / n for k in range(n)]
    rng = _clip_param_range(locus, bbox)
    if rng is None:
        return []
    t0, t1 = rng
    if not (math.isfinite(t0) and math.isfinite(t1)):
        return []
    step = (t1 - t0) / (n - 1)
    return [t0 + step * k for k in range(n)]


def residual_on_locus(locus: Locus1d, p: Point2) -> float:
    """Distance from p to the locus (0 iff p lies on it)."""
    _require_supported(locus)
    if isinstance(locus, Line):
        return abs(signed_distance(locus, p))
    if isinstance(locus, Ray):
        _, q = closest_point(locus, p)
        return (p - q).norm()
    return abs((p - locus.center).norm() - locus.radius)


def rotate_point(p: Point2, pivot: Point2, angle: float) -> Point2:
    c, s = math.cos(angle), math.sin(angle)
    v = p - pivot
    return Point2(pivot.x + c * v.x - s * v.y, pivot.y + s * v.x + c * v.y)


def angle_between(target: Vector2, current: Vector2) -> float:
    """Signed angle rotating `current` onto `target` (range (-pi, pi])."""
    if target.norm() == 0.0 or current.norm() == 0.0:
        raise GeometryError("angle_between needs nonzero vectors")
    return math.atan2(current.cross(target), current.dot(target))


def translate_locus(locus: Locus1d, v: Vector2) -> Locus1d:
    """The locus rigidly translated by v."""
    _require_supported(locus)
    if isinstance(locus, Line):
        return Line(locus.through + v, locus.dir)
    if isinstance(locus, Ray):
        return Ray(locus.origin + v, locus.dir)
    return Circle(locus.center + v, locus.radius)
