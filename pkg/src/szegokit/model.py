"""Polynomial models, points, and frequencies.

A model is the graph manifold ``{(z, w) : Im w = P(x)}`` with ``P = a * p``
for a scalar profile polynomial ``p`` and a direction vector ``a`` of length
``n``.  Coefficients of ``p`` are stored in increasing-degree order.  All
types are immutable and safe to share between tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonSuperlinear, ZeroLastDirection

__all__ = [
    "PolynomialModel",
    "ManifoldPoint",
    "Frequency",
    "build_model",
    "p_derivative",
]


@dataclass(frozen=True)
class PolynomialModel:
    """Profile polynomial and direction vector, with derived data.

    ``p_coeffs`` holds the coefficients of p in increasing degree (trailing
    zeros stripped), ``a`` the direction vector, ``b`` its first n-1 entries.
    ``convex`` is True when p'' >= 0 on all of R; operations that need
    convexity check this flag rather than re-deriving it.
    """

    p_coeffs: tuple[float, ...]
    a: tuple[float, ...]
    n: int
    b: tuple[float, ...]
    degree: int
    convex: bool
    normalized: bool = field(default=False)  # True iff a_n == 1 exactly

    @property
    def a_n(self) -> float:
        return self.a[-1]

    def p(self, x):
        """Evaluate p at x (scalar or ndarray) by Horner's scheme."""
        acc = np.zeros_like(np.asarray(x, dtype=float))
        for c in reversed(self.p_coeffs):
            acc = acc * x + c
        return acc if acc.ndim else float(acc)


@dataclass(frozen=True)
class ManifoldPoint:
    """A point (x, y, t) in the flattened coordinates, t of length n."""

    x: float
    y: float
    t: tuple[float, ...]

    @property
    def s(self) -> tuple[float, ...]:
        return self.t[:-1]

    @property
    def t_n(self) -> float:
        return self.t[-1]

    @staticmethod
    def of(x: float, y: float, *t: float) -> "ManifoldPoint":
        return ManifoldPoint(float(x), float(y), tuple(float(v) for v in t))


@dataclass(frozen=True)
class Frequency:
    """A dual frequency (eta, tau), tau of length n."""

    eta: float
    tau: tuple[float, ...]

    @property
    def sigma(self) -> tuple[float, ...]:
        return self.tau[:-1]

    @property
    def tau_n(self) -> float:
        return self.tau[-1]

    @staticmethod
    def of(eta: float, *tau: float) -> "Frequency":
        return Frequency(float(eta), tuple(float(v) for v in tau))


def _derivative_coeffs(coeffs: tuple[float, ...], k: int) -> tuple[float, ...]:
    """Coefficients of the k-th derivative, by k coefficient shifts."""
    cur = list(coeffs)
    for _ in range(k):
        cur = [j * cur[j] for j in range(1, len(cur))]
        if not cur:
            return (0.0,)
    return tuple(cur) if cur else (0.0,)


def _eval_poly(coeffs, x):
    acc = np.zeros_like(np.asarray(x, dtype=float))
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc if np.ndim(acc) else float(acc)


def _is_convex(coeffs: tuple[float, ...]) -> bool:
    """Decide p'' >= 0 on R.

    Fast sufficient condition: only even powers, all nonnegative.  Otherwise
    minimize p'' over the real line: p'' has even degree with positive leading
    coefficient for any constructible model, so its minimum is attained at a
    real critical point (a real root of p''').
    """
    if all(c == 0.0 for j, c in enumerate(coeffs) if j % 2 == 1) and all(
        c >= 0.0 for j, c in enumerate(coeffs) if j % 2 == 0
    ):
        return True
    d2 = _derivative_coeffs(coeffs, 2)
    if len(d2) == 1:
        return d2[0] >= 0.0
    if len(d2) % 2 == 0 or d2[-1] < 0.0:
        # odd degree, or even degree with negative leading term: unbounded below
        return False
    d3 = _derivative_coeffs(coeffs, 3)
    roots = np.roots(list(reversed(d3)))
    real = roots[np.abs(roots.imag) < 1e-9].real
    if real.size == 0:
        return _eval_poly(d2, 0.0) >= 0.0
    scale = max(abs(c) for c in d2)
    vals = _eval_poly(d2, real)
    return bool(np.min(vals) >= -1e-12 * scale)


def build_model(p_coeffs, a) -> PolynomialModel:
    """Validate and build a model from raw coefficients and direction vector.

    Raises NonSuperlinear when the profile has odd leading degree or a
    nonpositive leading coefficient (the weight integral would diverge for
    every frequency), and ZeroLastDirection when a_n == 0.
    """
    coeffs = [float(c) for c in p_coeffs]
    if not coeffs:
        raise NonSuperlinear("empty coefficient list")
    while len(coeffs) > 1 and coeffs[-1] == 0.0:
        coeffs.pop()
    degree = len(coeffs) - 1
    if degree < 2 or degree % 2 == 1 or coeffs[-1] <= 0.0:
        raise NonSuperlinear(
            f"profile must have even degree >= 2 with positive leading "
            f"coefficient; got degree {degree}, leading {coeffs[-1]!r}"
        )
    avec = tuple(float(v) for v in a)
    if not avec:
        raise ZeroLastDirection("empty direction vector")
    if avec[-1] == 0.0:
        raise ZeroLastDirection("last entry of the direction vector is zero")
    return PolynomialModel(
        p_coeffs=tuple(coeffs),
        a=avec,
        n=len(avec),
        b=avec[:-1],
        degree=degree,
        convex=_is_convex(tuple(coeffs)),
        normalized=(avec[-1] == 1.0),
    )


def p_derivative(model: PolynomialModel, k: int, x):
    """k-th derivative of the profile at x.

    Exact via coefficient shifting plus Horner evaluation; k beyond the
    degree returns 0.
    """
    if k < 0:
        raise ValueError("derivative order must be nonnegative")
    if k > model.degree:
        return 0.0 if np.ndim(x) == 0 else np.zeros_like(np.asarray(x, dtype=float))
    return _eval_poly(_derivative_coeffs(model.p_coeffs, k), x)


def p_derivative_coeffs(model: PolynomialModel, k: int) -> tuple[float, ...]:
    """Coefficient list (increasing degree) of the k-th derivative of p."""
    if k > model.degree:
        return (0.0,)
    return _derivative_coeffs(model.p_coeffs, k)
