"""Kernel evaluation.

Three routes:

* ``quadric_kernel_1d`` -- exact closed form for the profile lam*x^2.
* ``nagel_kernel_numeric`` -- the 1-D frequency integral

      S(a, b) = int_{tau>0} int_R (1/C_{eta,tau})
                e^{2*pi*eta*((x+x') + i*(y-y'))}
                e^{-2*pi*tau*(p(x)+p(x') - i*(t-t'))} d(eta) d(tau)

  evaluated numerically: inner eta integral by recentered trapezoid sums
  (superexponential decay in eta), outer tau integral by adaptive
  Gauss-Legendre panels.  When the tau integrand does not decay (x=x',
  y=y') the tail is only conditionally convergent and is summed with a
  smooth erfc cutoff, certified by doubling the cutoff scale.
* ``factorized_kernel`` -- the high-codimension kernel as a distributional
  value: a 1-D amplitude times a Dirac delta of the leaf offset.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import erfc

from .errors import (
    NearDiagonal,
    OnDiagonal,
    ToleranceNotMet,
    UnsupportedProfile,
)
from .model import ManifoldPoint, PolynomialModel, build_model, p_derivative
from .weights import log_weight_grid

__all__ = [
    "DistributionalKernelValue",
    "LEAF_TOL",
    "quadric_kernel_1d",
    "quadric_kernel_1d_gradient",
    "nagel_kernel_numeric",
    "factorized_kernel",
    "pair_with_test_function",
]

# offsets are exact linear combinations of the inputs; the tolerance only
# absorbs rounding
LEAF_TOL = 1e-9


@dataclass(frozen=True)
class DistributionalKernelValue:
    """The kernel as amplitude * delta_0[leaf_offset].

    ``leaf_offset`` has length n-1 (empty when n = 1, in which case
    ``on_leaf`` is always True).  The represented distribution vanishes off
    the leaf; ``amplitude`` is the 1-D kernel factor on it.
    """

    leaf_offset: tuple[float, ...]
    amplitude: complex
    on_leaf: bool


def _require_1d(p: ManifoldPoint) -> None:
    if len(p.t) != 1:
        raise ValueError(f"expected a point with scalar t, got t of length {len(p.t)}")


def _quadric_denominator(lam: float, alpha: ManifoldPoint, beta: ManifoldPoint) -> complex:
    dx = alpha.x - beta.x
    dy = alpha.y - beta.y
    dt = alpha.t[0] - beta.t[0]
    xs = alpha.x + beta.x
    return math.pi * lam * (dx * dx + dy * dy) - 2.0j * math.pi * (dt + lam * xs * dy)


def quadric_kernel_1d(lam: float, alpha: ManifoldPoint, beta: ManifoldPoint) -> complex:
    """Closed form for the profile lam*x^2 (n = 1):

        S = 2*lam / (pi*lam*[(x-x')^2 + (y-y')^2]
                     - 2*pi*i*[(t-t') + lam*(x+x')*(y-y')])^2
    """
    if lam <= 0.0:
        raise UnsupportedProfile(f"quadric coefficient must be positive, got {lam}")
    _require_1d(alpha)
    _require_1d(beta)
    d = _quadric_denominator(lam, alpha, beta)
    d2 = d * d
    if abs(d2) < 1e-300:
        raise OnDiagonal("kernel is singular on the diagonal")
    return 2.0 * lam / d2


def quadric_kernel_1d_gradient(
    lam: float, alpha: ManifoldPoint, beta: ManifoldPoint
) -> tuple[complex, complex, complex]:
    """(S, X1 S, X2 S) with the tangential fields acting in the first slot.

    X1 = d/dx and X2 = d/dy - 2*lam*x*d/dt; all derivatives are exact
    derivatives of the closed form.
    """
    _require_1d(alpha)
    _require_1d(beta)
    d = _quadric_denominator(lam, alpha, beta)
    if abs(d * d) < 1e-300:
        raise OnDiagonal("kernel is singular on the diagonal")
    s = 2.0 * lam / (d * d)
    dx = alpha.x - beta.x
    dy = alpha.y - beta.y
    xs = alpha.x + beta.x
    dd_dx = 2.0 * math.pi * lam * dx - 2.0j * math.pi * lam * dy
    dd_dy = 2.0 * math.pi * lam * dy - 2.0j * math.pi * lam * xs
    dd_dt = -2.0j * math.pi
    grad_factor = -4.0 * lam / (d * d * d)
    s_x = grad_factor * dd_dx
    s_y = grad_factor * dd_dy
    s_t = grad_factor * dd_dt
    return s, s_x, s_y - 2.0 * lam * alpha.x * s_t


# ---------------------------------------------------------------------------
# numeric kernel: inner eta integral
# ---------------------------------------------------------------------------


class _SliceIntegrator:
    """Evaluates the inner eta integral A(tau) for one point pair.

    A(tau) = e^{-2*pi*tau*Q} * int_R (1/C_{eta,tau}) e^{2*pi*eta*(X + i*dy)} d(eta)

    with X = x + x', Q = p(x) + p(x').  The eta window (concave magnitude
    exponent, truncated 46 e-folds below its peak) is tracked across calls
    and rescaled between nearby tau values to avoid rediscovering it.
    """

    def __init__(self, model: PolynomialModel, X: float, dy: float, Q: float, inner_rel: float):
        self.model = model
        self.X = X
        self.dy = dy
        self.Q = Q
        self.inner_rel = inner_rel
        self._window: tuple[float, float, float] | None = None  # (tau, lo, hi)
        self.evals = 0

    def _exponent(self, tau: float, etas: np.ndarray) -> np.ndarray:
        logc = log_weight_grid(self.model, tau, etas, nodes_per_width=4, max_nodes=3000)
        return 2.0 * math.pi * etas * self.X - logc

    def _find_window(self, tau: float) -> tuple[float, float]:
        if self._window is not None:
            tau0, lo0, hi0 = self._window
            scale = math.sqrt(tau / tau0)
            c0 = 0.5 * (lo0 + hi0) * (tau / tau0)
            w0 = 0.5 * (hi0 - lo0) * scale * 1.3
            lo, hi = c0 - w0, c0 + w0
            etas = np.linspace(lo, hi, 24)
            h = self._exponent(tau, etas)
            self.evals += etas.size
            hmax = float(np.max(h))
            if h[0] < hmax - 46.0 and h[-1] < hmax - 46.0 and np.argmax(h) not in (0, 23):
                keep = np.nonzero(h >= hmax - 47.0)[0]
                pad = (hi - lo) / 23.0
                return float(etas[keep[0]] - pad), float(etas[keep[-1]] + pad)
        # fresh search: center where the tilted measure sits at the midpoint
        center = tau * p_derivative(self.model, 1, self.X / 2.0) * self.model.a[0]
        curv = 0.5 * abs(p_derivative(self.model, 2, self.X / 2.0)) * self.model.a[0]
        sigma = math.sqrt(max(curv, 1e-2) * tau / (2.0 * math.pi))
        lo, hi = center - 12.0 * sigma, center + 12.0 * sigma
        for _ in range(60):
            etas = np.linspace(lo, hi, 48)
            h = self._exponent(tau, etas)
            self.evals += etas.size
            hmax = float(np.max(h))
            grow_lo = h[0] > hmax - 52.0
            grow_hi = h[-1] > hmax - 52.0
            if not grow_lo and not grow_hi:
                keep = np.nonzero(h >= hmax - 47.0)[0]
                pad = (hi - lo) / 47.0
                return float(etas[keep[0]] - pad), float(etas[keep[-1]] + pad)
            width = hi - lo
            if grow_lo:
                lo -= width
            if grow_hi:
                hi += width
        raise ToleranceNotMet("eta truncation window did not close")

    def __call__(self, tau: float) -> complex:
        lo, hi = self._find_window(tau)
        self._window = (tau, lo, hi)
        sigma_est = (hi - lo) / 19.0
        step = min(sigma_est / 5.0, 1.0 / (8.0 * abs(self.dy) + 1e-30))
        n = int(np.clip(math.ceil((hi - lo) / step), 48, 6000))
        prev = None
        for _ in range(4):
            etas = np.linspace(lo, hi, n + 1)
            re = self._exponent(tau, etas) - 2.0 * math.pi * tau * self.Q
            self.evals += etas.size
            m = float(np.max(re))
            vals = np.exp(re - m + 2.0j * math.pi * etas * self.dy)
            w = np.full(n + 1, (hi - lo) / n)
            w[0] *= 0.5
            w[-1] *= 0.5
            total = complex(np.dot(w, vals)) * math.exp(m) if m > -700 else 0.0j
            if prev is not None:
                mag_floor = 1e-13 * math.exp(m) * (hi - lo) if m > -700 else 0.0
                if abs(total - prev) <= self.inner_rel * abs(total) + mag_floor:
                    return total
            prev = total
            n *= 2
        return prev


# ---------------------------------------------------------------------------
# numeric kernel: outer tau integral
# ---------------------------------------------------------------------------

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def _panel(f, a: float, b: float) -> tuple[complex, float]:
    """Gauss-Legendre 16 vs 32 on [a, b]; returns (I_32, |I_32 - I_16|)."""
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    x16, w16 = _gl(16)
    x32, w32 = _gl(32)
    v32 = np.array([f(mid + half * x) for x in x32])
    i32 = complex(half * np.dot(w32, v32))
    v16 = np.array([f(mid + half * x) for x in x16])
    i16 = complex(half * np.dot(w16, v16))
    return i32, abs(i32 - i16)


def _adaptive_panels(f, edges: list[float], rel_tol: float, max_panels: int) -> tuple[complex, float]:
    """Adaptive bisection over an initial panel partition.

    Splits the worst panel until the summed error estimate certifies rel_tol
    against the accumulated value (oscillatory cancellation included).
    """
    heap: list[tuple[float, float, float, complex]] = []
    total = 0.0j
    err_sum = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = _panel(f, a, b)
        total += val
        err_sum += err
        heapq.heappush(heap, (-err, a, b, val))
    count = len(heap)
    while err_sum > 0.45 * rel_tol * max(abs(total), 1e-300) and count < max_panels:
        neg_err, a, b, val = heapq.heappop(heap)
        err_sum += neg_err  # neg_err is negative
        total -= val
        mid = 0.5 * (a + b)
        for lo, hi in ((a, mid), (mid, b)):
            v, e = _panel(f, lo, hi)
            total += v
            err_sum += e
            heapq.heappush(heap, (-e, lo, hi, v))
        count += 1
    if err_sum > 0.45 * rel_tol * max(abs(total), 1e-300):
        raise ToleranceNotMet(
            f"tau quadrature stalled at {count} panels with error ratio "
            f"{err_sum / max(abs(total), 1e-300):.2e}"
        )
    return total, err_sum


def _initial_edges(T: float, width: float) -> list[float]:
    k = max(4, int(math.ceil(T / width)))
    return list(np.linspace(0.0, T, k + 1))


def _find_peak_scale(amp: _SliceIntegrator, tau0: float) -> tuple[float, float, bool]:
    """Doubling probe for the magnitude peak of A.

    Returns (tau_peak, |A|_peak, decaying) where ``decaying`` reports whether
    |A| was observed to fall off after the peak.
    """
    tau = tau0
    best_tau, best_mag = tau0, 0.0
    drops = 0
    for _ in range(60):
        mag = abs(amp(tau))
        if mag > best_mag:
            best_tau, best_mag = tau, mag
            drops = 0
        elif mag < 0.7 * best_mag:
            drops += 1
            if drops >= 2:
                return best_tau, best_mag, True
        tau *= 2.0
    return best_tau, best_mag, False


def _integrate_decaying(
    amp: _SliceIntegrator, nu: float, rel_tol: float, tau_peak: float, peak_mag: float
) -> complex:
    """Outer integral when |A| decays: extend in doubling blocks until the
    empirical tail bound and the quadrature error are both inside budget."""
    width = min(2.5 / max(nu, 1e-12), 2.0 * tau_peak)
    T = 4.0 * tau_peak
    total, err = _adaptive_panels(amp, _initial_edges(T, width), rel_tol, 600)
    for _ in range(40):
        a_end = abs(amp(T))
        a_mid = abs(amp(0.75 * T))
        if a_mid > 0 and a_end > 0 and a_end < a_mid:
            rate = math.log(a_mid / a_end) / (0.25 * T)
            tail = 2.0 * a_end / rate
            if tail <= 0.25 * rel_tol * abs(total) and a_end <= 1e-3 * peak_mag:
                return total
        block_edges = _initial_edges(T, width)
        block_edges = [T + e for e in block_edges]
        block, block_err = _adaptive_panels(amp, block_edges, rel_tol, 400)
        total += block
        err += block_err
        T *= 2.0
    raise NearDiagonal("tau tail did not decay inside the extension budget")


def _integrate_cutoff(amp: _SliceIntegrator, dt: float, rel_tol: float, t_struct: float) -> complex:
    """Oscillatory-only tail (x = x', y = y'): A is real and positive, the
    phase comes solely from exp(2*pi*i*tau*dt).

    Integrates A * phase * chi_T with a smooth erfc cutoff and certifies by
    doubling T; the cutoff makes the conditionally convergent integral
    converge to its Abel limit with Gaussian-small truncation error.
    """
    s_abs = abs(dt)
    T = max(16.0 / s_abs, 4.0 * t_struct)
    prev = None
    for _ in range(4):
        w = T / 10.0
        center = 0.55 * T

        def f(tau: float) -> complex:
            chi = 0.5 * erfc((tau - center) / w)
            if chi < 1e-18:
                return 0.0j
            return amp(tau) * np.exp(2.0j * math.pi * tau * dt) * chi

        width = min(2.5 / s_abs, T / 6.0)
        total, _ = _adaptive_panels(f, _initial_edges(center + 8.0 * w, width), rel_tol, 800)
        if prev is not None and abs(total - prev) <= 0.5 * rel_tol * abs(total):
            return total
        prev = total
        T *= 2.0
    raise ToleranceNotMet("cutoff scale doubling did not stabilize the tau tail")


def _effective_profile(model: PolynomialModel) -> PolynomialModel:
    """Fold the (scalar) direction coefficient into the profile so the
    frequency variable is plain tau > 0."""
    if model.n != 1:
        raise ValueError("numeric kernel needs a model with n = 1")
    a1 = model.a[0]
    if a1 <= 0.0:
        raise UnsupportedProfile("direction coefficient must be positive")
    if a1 == 1.0:
        return model
    return build_model([a1 * c for c in model.p_coeffs], [1.0])


def nagel_kernel_numeric(
    model: PolynomialModel,
    alpha: ManifoldPoint,
    beta: ManifoldPoint,
    rel_tol: float = 1e-4,
) -> complex:
    """Numeric 1-D kernel for a convex profile, certified to ``rel_tol``.

    The phase factor exp(2*pi*i*tau*(t-t')) makes the outer integral only
    conditionally convergent when x = x' and y = y'; that case goes through
    the smooth-cutoff summation.  Pairs where neither route certifies raise
    NearDiagonal.
    """
    if not model.convex:
        raise UnsupportedProfile("numeric kernel requires a convex profile")
    _require_1d(alpha)
    _require_1d(beta)
    if not (1e-11 < rel_tol < 0.1):
        raise ValueError(f"rel_tol must lie in (1e-11, 0.1), got {rel_tol}")
    eff = _effective_profile(model)
    dx = alpha.x - beta.x
    dy = alpha.y - beta.y
    dt = alpha.t[0] - beta.t[0]
    if dx == 0.0 and dy == 0.0 and dt == 0.0:
        raise OnDiagonal("kernel evaluation on the diagonal")

    X = alpha.x + beta.x
    Q = float(eff.p(alpha.x) + eff.p(beta.x))
    amp = _SliceIntegrator(eff, X, dy, Q, inner_rel=rel_tol / 30.0)

    # the tau phase seen by the integrand: explicit dt plus the rotation the
    # eta integral picks up from dy (quadric rate p''/2 * X * dy)
    lam_proxy = 0.5 * abs(p_derivative(eff, 2, X / 2.0))
    nu = abs(dt) + lam_proxy * abs(X * dy) + 1e-6

    tau0 = 0.02 / (1.0 + abs(Q) + abs(X))
    tau_peak, peak_mag, decaying = _find_peak_scale(amp, tau0)
    if decaying:
        phase = np.exp(2.0j * math.pi * dt) if dt else 1.0

        def f(tau: float) -> complex:
            return amp(tau) * np.exp(2.0j * math.pi * tau * dt) if dt else amp(tau)

        return _integrate_decaying(
            _WithPhase(amp, dt), nu, rel_tol, tau_peak, peak_mag
        )
    if dy == 0.0 and dt != 0.0:
        return _integrate_cutoff(amp, dt, rel_tol, tau_peak)
    raise NearDiagonal(
        "tau integrand neither decays nor is purely oscillatory at this separation"
    )


class _WithPhase:
    """A(tau) multiplied by the explicit exp(2*pi*i*tau*dt) phase."""

    def __init__(self, amp: _SliceIntegrator, dt: float):
        self.amp = amp
        self.dt = dt

    def __call__(self, tau: float) -> complex:
        v = self.amp(tau)
        if self.dt:
            v *= np.exp(2.0j * math.pi * tau * self.dt)
        return v


# ---------------------------------------------------------------------------
# factorized high-codimension kernel
# ---------------------------------------------------------------------------


def _is_quadric(model: PolynomialModel) -> float | None:
    """The coefficient lam when p(x) = lam*x^2 exactly, else None."""
    c = model.p_coeffs
    if len(c) == 3 and c[0] == 0.0 and c[1] == 0.0 and c[2] > 0.0:
        return c[2]
    return None


def factorized_kernel(
    model: PolynomialModel,
    alpha: ManifoldPoint,
    beta: ManifoldPoint,
    rel_tol: float = 1e-4,
    leaf_tol: float = LEAF_TOL,
) -> DistributionalKernelValue:
    """Kernel of a P = a*p model as amplitude * delta_0[offset].

    Normalized direction (a_n = 1): offset = (s-s') - b*(t_n-t_n') and the
    amplitude is the 1-D kernel of the profile p at the (x, y, t_n)
    projections.  General a_n > 0 is supported for the quadric profile
    p = x^2: offset = a_n*(s-s') - b*(t_n-t_n') with amplitude from the
    a_n*x^2 closed form.
    """
    if len(alpha.t) != model.n or len(beta.t) != model.n:
        raise ValueError("point dimension does not match the model")
    if model.a_n < 0.0:
        raise UnsupportedProfile("a_n < 0 is not supported; flip t_n -> -t_n first")
    ds = np.asarray(alpha.s, dtype=float) - np.asarray(beta.s, dtype=float)
    dtn = alpha.t_n - beta.t_n
    b = np.asarray(model.b, dtype=float)
    a1 = ManifoldPoint(alpha.x, alpha.y, (alpha.t_n,))
    b1 = ManifoldPoint(beta.x, beta.y, (beta.t_n,))
    lam = _is_quadric(model)

    if model.normalized:
        offset = ds - b * dtn
        if lam is not None:
            amplitude = quadric_kernel_1d(lam, a1, b1)
        elif model.convex:
            sub = build_model(model.p_coeffs, [1.0])
            amplitude = nagel_kernel_numeric(sub, a1, b1, rel_tol)
        else:
            raise UnsupportedProfile("profile is neither quadric nor convex")
    else:
        if lam is None or lam != 1.0:
            raise UnsupportedProfile(
                "general a_n != 1 is only supported for the quadric profile x^2"
            )
        offset = model.a_n * ds - b * dtn
        amplitude = quadric_kernel_1d(model.a_n, a1, b1)

    on_leaf = bool(offset.size == 0 or np.max(np.abs(offset)) <= leaf_tol)
    return DistributionalKernelValue(
        leaf_offset=tuple(float(v) for v in offset),
        amplitude=complex(amplitude),
        on_leaf=on_leaf,
    )


def pair_with_test_function(kernel_of_s, phi, mollifier_width: float) -> complex:
    """Pair a distributional kernel value against a test function.

    ``kernel_of_s`` maps a scalar s' (the single delta variable, n = 2) to a
    DistributionalKernelValue; the delta is replaced by a Gaussian of the
    given width and the integral over s' is evaluated numerically.  As the
    width shrinks this converges to amplitude * phi(s'_0) / |d offset / d s'|
    where s'_0 is the root of the offset.
    """
    if mollifier_width <= 0.0:
        raise ValueError("mollifier width must be positive")
    v0 = kernel_of_s(0.0)
    v1 = kernel_of_s(1.0)
    if len(v0.leaf_offset) != 1:
        raise ValueError("pairing is implemented for one delta variable (n = 2)")
    o0 = v0.leaf_offset[0]
    slope = v1.leaf_offset[0] - o0
    if slope == 0.0:
        raise ToleranceNotMet("offset does not depend on s'; pairing is ill-posed")
    center = -o0 / slope
    half = 12.0 * mollifier_width / abs(slope)
    norm = 1.0 / (mollifier_width * math.sqrt(2.0 * math.pi))

    def integrand(s: float) -> complex:
        val = kernel_of_s(s)
        u = val.leaf_offset[0]
        return val.amplitude * phi(s) * norm * math.exp(-0.5 * (u / mollifier_width) ** 2)

    re, re_err = quad(lambda s: integrand(s).real, center - half, center + half, limit=200)
    im, im_err = quad(lambda s: integrand(s).imag, center - half, center + half, limit=200)
    result = complex(re, im)
    if re_err + im_err > 1e-8 * max(abs(result), 1e-12):
        raise ToleranceNotMet("pairing quadrature error too large")
    return result
