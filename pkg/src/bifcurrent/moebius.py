"""Determinant-one 2x2 matrices acting on the hyperbolic plane.

The plane is the upper half-plane with curvature -1 and base point i.
Elements are projective (g and -g act identically) and are stored with a
canonical sign so equality testing is meaningful. Scalar helpers here are
deliberately allocation-light; array-heavy modules keep their own vectorized
copies of the few formulas they need.

A useful exact fact used throughout: for a determinant-1 matrix g,
``frobenius_sq(g) == 2*cosh(d(i, g.i))`` and ``2*log(op_norm(g)) ==
d(i, g.i)`` hold exactly (singular value decomposition through the base
point), so norms and orbit displacements are interchangeable.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from .errors import (
    ClassificationError,
    DegenerateElementError,
    InvalidPointError,
)

__all__ = [
    "BASE_POINT",
    "INFINITY",
    "DEFAULT_TOL",
    "MoebiusElement",
    "ScaledElement",
    "chordal_distance",
    "classify",
    "distance_h2",
    "ensure_h2_point",
    "fixed_point_gap",
    "fixed_points",
    "from_disk",
    "frobenius_sq",
    "log_op_norm",
    "norms",
    "op_norm",
    "orbit_displacement",
    "scaled_log_norm_product",
    "scaled_product",
    "to_disk",
    "translation_length",
]

BASE_POINT = 1j
INFINITY = complex("inf")
DEFAULT_TOL = 1e-9

_DET_TOL = 1e-12
_RESCALE_EVERY = 16
_RESCALE_LIMIT = 1e30

IDENTITY = "identity"
PARABOLIC = "parabolic"
ELLIPTIC = "elliptic"
LOXODROMIC = "loxodromic"


def _canonical_sign(a, b, c, d):
    # First entry (scan order a, b, c, d) of significant size gets its
    # argument pinned to (-pi/2, pi/2].
    for e in (a, b, c, d):
        if abs(e) > 1e-12:
            if e.real < 0.0 or (e.real == 0.0 and e.imag < 0.0):
                return -a, -b, -c, -d
            return a, b, c, d
    raise DegenerateElementError("zero matrix has no projective sign")


class MoebiusElement:
    """A PSL(2, C) element held as a sign-canonical SL(2, C) matrix."""

    __slots__ = ("a", "b", "c", "d")

    def __init__(self, a, b, c, d):
        a, b, c, d = complex(a), complex(b), complex(c), complex(d)
        det = a * d - b * c
        if det == 0 or not cmath.isfinite(det):
            raise DegenerateElementError(f"determinant {det!r} is unusable")
        if abs(det - 1.0) > _DET_TOL:
            root = cmath.sqrt(det)
            a, b, c, d = a / root, b / root, c / root, d / root
        a, b, c, d = _canonical_sign(a, b, c, d)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)

    def __setattr__(self, name, value):
        raise AttributeError("MoebiusElement is immutable")

    @classmethod
    def identity(cls) -> "MoebiusElement":
        return cls(1.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_matrix(cls, m) -> "MoebiusElement":
        (a, b), (c, d) = m
        return cls(a, b, c, d)

    def as_tuple(self):
        return (self.a, self.b, self.c, self.d)

    def to_matrix(self):
        import numpy as np

        return np.array([[self.a, self.b], [self.c, self.d]], dtype=complex)

    @property
    def trace(self) -> complex:
        return self.a + self.d

    @property
    def trace_sq(self) -> complex:
        t = self.a + self.d
        return t * t

    def __matmul__(self, other: "MoebiusElement") -> "MoebiusElement":
        return MoebiusElement(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def inverse(self) -> "MoebiusElement":
        return MoebiusElement(self.d, -self.b, -self.c, self.a)

    def apply(self, z: complex) -> complex:
        """Fractional-linear action on the Riemann sphere."""
        if z == INFINITY:
            if self.c == 0:
                return INFINITY
            return self.a / self.c
        den = self.c * z + self.d
        if den == 0:
            return INFINITY
        return (self.a * z + self.b) / den

    def apply_h2(self, z: complex) -> complex:
        """Action on the upper half-plane (real entries expected)."""
        z = ensure_h2_point(z)
        w = self.apply(z)
        if not (cmath.isfinite(w) and w.imag > 0.0):
            raise InvalidPointError(
                f"image {w!r} left the upper half-plane; element is not real"
            )
        return w

    def approx_eq(self, other: "MoebiusElement", tol: float = DEFAULT_TOL) -> bool:
        return (
            abs(self.a - other.a) <= tol
            and abs(self.b - other.b) <= tol
            and abs(self.c - other.c) <= tol
            and abs(self.d - other.d) <= tol
        )

    def __repr__(self):
        return f"MoebiusElement({self.a!r}, {self.b!r}, {self.c!r}, {self.d!r})"


def ensure_h2_point(z) -> complex:
    z = complex(z)
    if not (cmath.isfinite(z) and z.imag > 0.0):
        raise InvalidPointError(f"not an upper half-plane point: {z!r}")
    return z


def distance_h2(z, w) -> float:
    """Hyperbolic distance, stable for nearby and for far-apart points."""
    z = ensure_h2_point(z)
    w = ensure_h2_point(w)
    q = abs(z - w) / (2.0 * math.sqrt(z.imag * w.imag))
    return 2.0 * math.asinh(q)


def to_disk(z) -> complex:
    """Cayley transform to the unit-disk model centered at the base point.

    Sends ``i`` to 0; a point at hyperbolic distance d from ``i`` lands on
    the circle of Euclidean radius tanh(d/2), so ``abs(to_disk(z))`` and
    ``cmath.phase(to_disk(z))`` are polar coordinates around the base point.
    """
    z = ensure_h2_point(z)
    return (z - BASE_POINT) / (z + BASE_POINT)


def from_disk(w) -> complex:
    """Inverse Cayley transform; ``w`` must lie in the open unit disk."""
    w = complex(w)
    if not abs(w) < 1.0:
        raise InvalidPointError(f"not an open-unit-disk point: {w!r}")
    return BASE_POINT * (1.0 + w) / (1.0 - w)


def frobenius_sq(g: MoebiusElement) -> float:
    return (
        abs(g.a) ** 2 + abs(g.b) ** 2 + abs(g.c) ** 2 + abs(g.d) ** 2
    )


def op_norm(g: MoebiusElement) -> float:
    f = frobenius_sq(g)
    return math.sqrt((f + math.sqrt(max(f * f - 4.0, 0.0))) / 2.0)


def log_op_norm(g: MoebiusElement) -> float:
    """log of the largest singular value; safe for huge entries."""
    f = frobenius_sq(g)
    ratio = max(1.0 - 4.0 / (f * f), 0.0)
    return 0.5 * (math.log(f) + math.log((1.0 + math.sqrt(ratio)) / 2.0))


def norms(g: MoebiusElement):
    """(operator norm, squared Frobenius norm)."""
    return op_norm(g), frobenius_sq(g)


def orbit_displacement(g: MoebiusElement) -> float:
    """d(i, g.i), computed from the Frobenius norm (exact identity)."""
    f = frobenius_sq(g)
    return 2.0 * math.asinh(0.5 * math.sqrt(max(f - 2.0, 0.0)))


def classify(g: MoebiusElement, tol: float = DEFAULT_TOL) -> str:
    """One of "identity", "parabolic", "elliptic", "loxodromic".

    Rule order matters: identity is recognized before parabolic (both have
    trace_sq = 4), and "elliptic" requires trace_sq real within tol and in
    [0, 4).
    """
    t2 = g.trace_sq
    if (
        abs(g.b) < tol
        and abs(g.c) < tol
        and abs(t2 - 4.0) < tol
        and abs(g.a - g.d) < tol
    ):
        return IDENTITY
    if abs(t2 - 4.0) < tol:
        return PARABOLIC
    if abs(t2.imag) < tol and -tol <= t2.real < 4.0:
        return ELLIPTIC
    return LOXODROMIC


def translation_length(g: MoebiusElement, tol: float = DEFAULT_TOL) -> float:
    """Displacement along the axis of a loxodromic element.

    For real trace this is 2*arccosh(|tr|/2); for complex trace the real
    part of the complex length 2*arccosh(tr/2) is returned (principal
    branch), which is the axial displacement in hyperbolic 3-space.
    """
    kind = classify(g, tol)
    if kind != LOXODROMIC:
        raise ClassificationError(
            f"translation length requires a loxodromic element, got {kind}"
        )
    return abs((2.0 * cmath.acosh(g.trace / 2.0)).real)


def fixed_points(g: MoebiusElement, tol: float = DEFAULT_TOL):
    """Fixed points on the Riemann sphere; one point for parabolics."""
    kind = classify(g, tol)
    if kind == IDENTITY:
        raise DegenerateElementError("identity fixes everything")
    a, b, c, d = g.a, g.b, g.c, g.d
    scale = max(abs(a), abs(d), 1.0)
    if abs(c) <= tol * scale:
        if kind == PARABOLIC:
            return (INFINITY,)
        return (b / (d - a), INFINITY)
    if kind == PARABOLIC:
        return ((a - d) / (2.0 * c),)
    disc = cmath.sqrt(g.trace_sq - 4.0)
    return (((a - d) + disc) / (2.0 * c), ((a - d) - disc) / (2.0 * c))


def chordal_distance(z: complex, w: complex) -> float:
    """Chordal metric on the sphere, normalized to diameter 1.

    Antipodal points (for instance 0 and infinity) are at distance exactly 1.
    """
    z_inf = z == INFINITY or abs(z) > 1e150
    w_inf = w == INFINITY or abs(w) > 1e150
    if z_inf and w_inf:
        return 0.0
    if z_inf:
        return 1.0 / math.sqrt(1.0 + abs(w) ** 2)
    if w_inf:
        return 1.0 / math.sqrt(1.0 + abs(z) ** 2)
    return abs(z - w) / math.sqrt((1.0 + abs(z) ** 2) * (1.0 + abs(w) ** 2))


def fixed_point_gap(g: MoebiusElement, tol: float = DEFAULT_TOL) -> float:
    """Chordal gap between the fixed points; 0 for parabolics."""
    kind = classify(g, tol)
    if kind == IDENTITY:
        raise DegenerateElementError("identity has no fixed-point gap")
    pts = fixed_points(g, tol)
    if len(pts) == 1:
        return 0.0
    return chordal_distance(pts[0], pts[1])


def _mul4(x, y):
    a1, b1, c1, d1 = x
    a2, b2, c2, d2 = y
    return (
        a1 * a2 + b1 * c2,
        a1 * b2 + b1 * d2,
        c1 * a2 + d1 * c2,
        c1 * b2 + d1 * d2,
    )


@dataclass(frozen=True)
class ScaledElement:
    """A matrix together with a factored-out log magnitude.

    The represented matrix is exp(log_scale) * m. When it comes from a
    product of determinant-1 factors, det(m) = exp(-2*log_scale) and the
    true determinant is 1; log-scale quantities below rely on that.
    """

    m: tuple
    log_scale: float

    @property
    def raw_trace(self) -> complex:
        return self.m[0] + self.m[3]

    def log_op_norm(self) -> float:
        f = sum(abs(e) ** 2 for e in self.m)
        if f == 0.0:
            raise DegenerateElementError("zero scaled matrix")
        log_f = math.log(f)
        # ratio = 4*exp(-4s)/f^2, computed in logs to dodge under/overflow
        ratio_log = math.log(4.0) - 4.0 * self.log_scale - 2.0 * log_f
        if ratio_log < -50.0:
            corr = 0.0
        else:
            ratio = min(math.exp(ratio_log), 1.0)
            corr = math.log((1.0 + math.sqrt(1.0 - ratio)) / 2.0)
        return self.log_scale + 0.5 * (log_f + corr)

    def log_abs_trace_sq_minus(self, t: complex = 0.0) -> float:
        """log |trace(true)^2 - t| without forming the huge trace."""
        tr = self.raw_trace
        expo = -2.0 * self.log_scale
        if expo > 700.0:
            # the true matrix is vanishingly small; t dominates
            a = abs(complex(t))
            return math.log(a) if a > 0.0 else -math.inf
        shifted = tr * tr - complex(t) * math.exp(expo)
        a = abs(shifted)
        if a == 0.0:
            return -math.inf
        return 2.0 * self.log_scale + math.log(a)

    def log_abs_trace_sq(self) -> float:
        return self.log_abs_trace_sq_minus(0.0)

    def to_element(self) -> MoebiusElement:
        if abs(self.log_scale) > 300.0:
            raise DegenerateElementError("scale too extreme for a plain matrix")
        s = math.exp(self.log_scale)
        return MoebiusElement(*(e * s for e in self.m))


def _rescale(m, s):
    mx = max(abs(e) for e in m)
    if mx == 0.0:
        raise DegenerateElementError("product collapsed to zero")
    return tuple(e / mx for e in m), s + math.log(mx)


def scaled_product_tuples(tuples) -> ScaledElement:
    """Left-to-right product of 4-tuples with periodic renormalization."""
    m = (1.0 + 0.0j, 0.0j, 0.0j, 1.0 + 0.0j)
    s = 0.0
    k = 0
    for t in tuples:
        m = _mul4(m, t)
        k += 1
        if k % _RESCALE_EVERY == 0 or abs(m[0]) > _RESCALE_LIMIT:
            m, s = _rescale(m, s)
    m, s = _rescale(m, s)
    return ScaledElement(m, s)


def scaled_product(elements) -> ScaledElement:
    return scaled_product_tuples(g.as_tuple() for g in elements)


def scaled_log_norm_product(elements):
    """(log operator norm of the product, the scaled product itself).

    Agrees with the naive product wherever the naive product is
    representable; keeps working far beyond float overflow.
    """
    gs = list(elements)
    if not gs:
        raise DegenerateElementError("empty product")
    scaled = scaled_product(gs)
    return scaled.log_op_norm(), scaled
