"""Frequency weights: C = integral over R of exp(4*pi*(x*eta - p(x)*(a.tau))).

Everything is computed in log space with the exponent recentered at its
maximum; C spans hundreds of orders of magnitude over the frequency ranges
the kernel and projection quadratures touch.  The weight is finite exactly
when a.tau > 0 (superlinear profile), and the boundary a.tau = 0 is treated
as divergent for every eta.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import logsumexp

from .errors import Divergent, NonPositiveParameter, ToleranceNotMet
from .model import Frequency, PolynomialModel

__all__ = [
    "LogWeight",
    "sigma_contains",
    "log_weight_gaussian",
    "log_weight_quadrature",
    "log_weight_grid",
]

# exp(-46) < 1e-20: truncating the integrand 46 e-folds below its peak keeps
# the discarded tails far under every tolerance this module accepts.
TAIL_EFOLDS = 46.0


@dataclass(frozen=True)
class LogWeight:
    """Natural log of the weight, with a relative-error estimate.

    ``in_sigma`` False means the integral diverges; ``log_c`` then carries the
    +inf sentinel.
    """

    log_c: float
    est_error: float
    in_sigma: bool

    @staticmethod
    def divergent() -> "LogWeight":
        return LogWeight(log_c=math.inf, est_error=0.0, in_sigma=False)


def a_dot_tau(model: PolynomialModel, f: Frequency) -> float:
    if len(f.tau) != model.n:
        raise ValueError(f"tau has length {len(f.tau)}, model needs {model.n}")
    return float(np.dot(model.a, f.tau))


def sigma_contains(model: PolynomialModel, f: Frequency) -> bool:
    """True iff the weight integral converges at this frequency (a.tau > 0)."""
    return a_dot_tau(model, f) > 0.0


def log_weight_gaussian(lam: float, eta: float, tau_scalar: float) -> LogWeight:
    """Closed form for the quadric profile lam*x^2:

        log C = pi*eta^2/(lam*tau) - log(2*sqrt(lam*tau))
    """
    if lam <= 0.0 or tau_scalar <= 0.0:
        raise NonPositiveParameter(
            f"need lam > 0 and tau > 0, got lam={lam}, tau={tau_scalar}"
        )
    lt = lam * tau_scalar
    log_c = math.pi * eta * eta / lt - 0.5 * math.log(lt) - math.log(2.0)
    return LogWeight(log_c=log_c, est_error=0.0, in_sigma=True)


def _exponent_coeffs(model: PolynomialModel, eta: float, A: float) -> np.ndarray:
    """Coefficients (increasing degree) of q(x) = 4*pi*(x*eta - p(x)*A)."""
    q = -4.0 * math.pi * A * np.asarray(model.p_coeffs, dtype=float)
    q[1] += 4.0 * math.pi * eta
    return q


def _poly_eval(coeffs: np.ndarray, x):
    return np.polynomial.polynomial.polyval(x, coeffs)


def _poly_deriv(coeffs: np.ndarray) -> np.ndarray:
    return np.polynomial.polynomial.polyder(coeffs)


def _real_roots(coeffs: np.ndarray) -> np.ndarray:
    """Real roots of a polynomial given in increasing-degree order."""
    c = np.trim_zeros(coeffs, "b")
    if c.size <= 1:
        return np.array([])
    roots = np.polynomial.polynomial.polyroots(c)
    scale = 1.0 + np.abs(roots)
    return np.unique(roots[np.abs(roots.imag) < 1e-8 * scale].real)


def _exponent_peak(qc: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Global maximizer of q: all real critical points, Newton-polished.

    Returns (x_star, q_star, critical_points).  q has even degree with a
    negative leading coefficient, so the global max sits at a real root of q'.
    """
    dq = _poly_deriv(qc)
    d2q = _poly_deriv(dq)
    crit = _real_roots(dq)
    if crit.size == 0:
        crit = np.array([0.0])
    # polish: a couple of Newton steps on q' sharpens the companion-matrix roots
    for _ in range(3):
        slope = _poly_eval(d2q, crit)
        step = np.where(slope != 0.0, _poly_eval(dq, crit) / np.where(slope == 0, 1, slope), 0.0)
        moved = crit - step
        keep = np.abs(step) < 1.0 + np.abs(crit)
        crit = np.where(keep, moved, crit)
    vals = _poly_eval(qc, crit)
    i = int(np.argmax(vals))
    return float(crit[i]), float(vals[i]), crit


def _outer_crossing(qc: np.ndarray, start: float, target: float, direction: float) -> float:
    """Point beyond all critical points where q drops to ``target``.

    q is monotone on the outer branch, so expanding the bracket by doubling
    and bisecting is safe.
    """
    from scipy.optimize import brentq

    step = 1.0 + 0.1 * abs(start)
    x = start
    for _ in range(200):
        x_next = x + direction * step
        if _poly_eval(qc, x_next) < target:
            return float(
                brentq(lambda v: _poly_eval(qc, v) - target, min(x, x_next), max(x, x_next), xtol=1e-10)
            )
        x = x_next
        step *= 2.0
    raise ToleranceNotMet("could not bracket the exponent truncation point")


def _truncation_window(qc: np.ndarray) -> tuple[float, float, float, float]:
    """[L, R] enclosing {q >= q* - TAIL_EFOLDS}, plus (x*, q*)."""
    x_star, q_star, crit = _exponent_peak(qc)
    target = q_star - TAIL_EFOLDS
    left_edge = float(np.min(crit))
    right_edge = float(np.max(crit))
    L = _outer_crossing(qc, left_edge, target, -1.0)
    R = _outer_crossing(qc, right_edge, target, +1.0)
    return L, R, x_star, q_star


def log_weight_quadrature(model: PolynomialModel, f: Frequency, rel_tol: float = 1e-10) -> LogWeight:
    """Weight by adaptive quadrature of the recentered exponent.

    Locates the exponent peak q* through the real critical points of q',
    integrates exp(q - q*) over the window where q >= q* - 46, and returns
    q* + log(integral).  Raises Divergent outside the support set and
    ToleranceNotMet when the quadrature error estimate exceeds ``rel_tol``.
    """
    if not (1e-14 < rel_tol < 1e-2):
        raise ValueError(f"rel_tol must lie in (1e-14, 1e-2), got {rel_tol}")
    A = a_dot_tau(model, f)
    if A <= 0.0:
        raise Divergent(f"a.tau = {A} <= 0: weight integral diverges")
    qc = _exponent_coeffs(model, f.eta, A)
    L, R, _, q_star = _truncation_window(qc)

    def integrand(x: float) -> float:
        return math.exp(_poly_eval(qc, x) - q_star)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val, abserr = quad(integrand, L, R, epsabs=1e-300, epsrel=rel_tol / 10.0, limit=400)
    if val <= 0.0:
        raise ToleranceNotMet("quadrature returned a nonpositive integral")
    est = abserr / val + (R - L) * math.exp(-TAIL_EFOLDS) / val
    if est > rel_tol:
        raise ToleranceNotMet(f"estimated relative error {est:.3e} > rel_tol {rel_tol:.3e}")
    return LogWeight(log_c=q_star + math.log(val), est_error=est, in_sigma=True)


def log_weight_grid(
    model: PolynomialModel,
    A: float,
    etas: np.ndarray,
    nodes_per_width: int = 8,
    max_nodes: int = 6000,
) -> np.ndarray:
    """log C for a whole array of etas at fixed A = a.tau > 0, vectorized.

    Shares one x grid across the batch (covering every maximizer plus the
    46-e-fold decay window) and applies the trapezoid rule columnwise in log
    space.  The integrand decays super-exponentially at both window ends, so
    the trapezoid rule converges spectrally; agreement with
    ``log_weight_quadrature`` is pinned by tests at 1e-10.
    """
    if A <= 0.0:
        raise Divergent(f"a.tau = {A} <= 0")
    etas = np.asarray(etas, dtype=float)
    lo, hi = float(np.min(etas)), float(np.max(etas))
    windows = []
    widths = []
    for eta in {lo, hi, 0.5 * (lo + hi)}:
        qc = _exponent_coeffs(model, eta, A)
        L, R, x_star, _ = _truncation_window(qc)
        windows.append((L, R))
        d2 = _poly_eval(_poly_deriv(_poly_deriv(qc)), x_star)
        if d2 < 0.0:
            widths.append(1.0 / math.sqrt(-d2))
    L = min(w[0] for w in windows)
    R = max(w[1] for w in windows)
    span = R - L
    h_target = min(widths) / nodes_per_width if widths else span / 1200.0
    n = int(np.clip(math.ceil(span / h_target), 600, max_nodes)) + 1
    x = np.linspace(L, R, n)
    log_w = np.full(n, math.log(span / (n - 1)))
    log_w[0] -= math.log(2.0)
    log_w[-1] -= math.log(2.0)
    # q(x_i, eta_j) = 4*pi*(x_i*eta_j - p(x_i)*A), assembled by broadcasting
    px = model.p(x)
    Q = 4.0 * math.pi * (np.outer(x, etas) - (A * px)[:, None])
    return logsumexp(Q + log_w[:, None], axis=0)
