"""Periodic orbits of the constrained-energy Euler-Lagrange equation.

A branch is determined by the multiplier ``lam`` < 0 and the integration
constant ``C0`` > 0 of the first integral

    f(v') = -A/(m-2) v^(1-m) - lam/2 v + C0 / v,

together with the stabilization amplitude A and exponent m.  For A = 0 the
orbit oscillates between the closed-form extrema (v1, v2); for A > 0 the
turning points (v1*, v2*) bracket [v1, v2] and are found by bisection on
the feasibility polynomial.  The period and the profile are recovered from
the quadrature form d(xi)/dv = num / sqrt(-P R) whose endpoint
inverse-square-root singularities are removed by the substitution
s = v1* + (v2* - v1*) sin^2(theta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .model import (
    FilmProfile,
    ModelParams,
    ParameterError,
    PeriodicGrid,
    pressure_values,
)


class BranchError(ValueError):
    """No admissible periodic orbit for the requested parameters."""


@dataclass(frozen=True)
class MinimizerBranch:
    """Analytic data of one periodic orbit.

    ``v1, v2`` are the A = 0 extrema; for A > 0 the actual turning points
    are ``v1_star < v1`` and ``v2_star > v2`` (they coincide with v1, v2
    when A = 0).  ``tau`` is the spatial period and ``touchdown`` flags
    orbits grazing the fibre radius.
    """

    lam: float
    C0: float
    A: float
    m: float
    r0: float
    v1: float
    v2: float
    v1_star: float
    v2_star: float
    tau: float
    touchdown: bool

    @property
    def B(self) -> float:
        """Shorthand 2A / (lam (m-2)); <= 0 on admissible branches."""
        if self.A == 0.0:
            return 0.0
        return 2.0 * self.A / (self.lam * (self.m - 2.0))


# ---------------------------------------------------------------------------
# extrema and admissibility windows
# ---------------------------------------------------------------------------

def extrema_A0(lam: float, C0: float) -> tuple[float, float]:
    """Closed-form oscillation extrema for A = 0.

    Requires lam < 0, C0 > 0 and -1/2 <= lam*C0 < 0; outside that window
    no nonnegative smooth periodic solution exists and ``BranchError`` is
    raised.  v1 = v2 exactly at lam*C0 = -1/2.
    """
    if not (lam < 0 and C0 > 0):
        raise BranchError(
            f"no smooth periodic solution for lam={lam}, C0={C0}: "
            "requires lam < 0 and C0 > 0"
        )
    p = lam * C0
    if p < -0.5 or p >= 0:
        raise BranchError(
            f"no smooth periodic solution: lam*C0 = {p} outside [-1/2, 0)"
        )
    root = np.sqrt(1.0 + 2.0 * p)
    return -(1.0 - root) / lam, -(1.0 + root) / lam


def g_poly(v, lam: float, C0: float, m: float):
    """Feasibility polynomial g(v) = v^(m-2) (v - v1)(v - v2)."""
    v1, v2 = extrema_A0(lam, C0)
    return v ** (m - 2.0) * (v - v1) * (v - v2)


def g_stationary_points(lam: float, C0: float, m: float) -> tuple[float, float]:
    """Stationary points of g: (location of g-max, location of g-min).

    The g-max sits below v1, the g-min inside (v1, v2); the g-max point
    has the smaller coordinate even though the conventional names suggest
    otherwise, so callers should order by value.
    """
    p = lam * C0
    lo = -((m - 1.0) ** 2) / (2.0 * m * (m - 2.0))
    if not (lo < p < 0):
        raise BranchError(
            f"lam*C0 = {p} outside ({lo}, 0): stationary points undefined"
        )
    disc = np.sqrt(1.0 + 2.0 * m * (m - 2.0) / (m - 1.0) ** 2 * p)
    pref = -(m - 1.0) / (m * lam)
    v_gmax = pref * (1.0 - disc)
    v_gmin = pref * (1.0 + disc)
    return v_gmax, v_gmin


def stabilization_limit(lam: float, C0: float, m: float) -> float:
    """Largest stabilization amplitude A* admitting a periodic orbit."""
    v_gmax, _ = g_stationary_points(lam, C0, m)
    return -lam * (m - 2.0) / 2.0 * g_poly(v_gmax, lam, C0, m)


def extrema_Apos(lam: float, C0: float, params: ModelParams) -> tuple[float, float]:
    """Turning points (v1*, v2*) for A > 0, bracketing [v1, v2].

    Roots of g(v) + 2A/(lam (m-2)) = 0; bisection brackets are guaranteed
    by the sign structure: g(g-max) > -B >= 0 = g(v1) and g grows beyond
    v2.  Tolerance 1e-12 relative.
    """
    A, m = params.A, params.m
    if A <= 0:
        raise ParameterError("extrema_Apos needs A > 0 (use extrema_A0 otherwise)")
    if m <= 2:
        raise ParameterError(f"A > 0 branches require m > 2, got m = {m}")
    v1, v2 = extrema_A0(lam, C0)
    a_max = stabilization_limit(lam, C0, m)
    if A > a_max * (1.0 + 1e-14):
        raise BranchError(
            f"no periodic solution: A = {A} exceeds A* = {a_max}"
        )
    target = -2.0 * A / (lam * (m - 2.0))  # > 0

    def rootfun(v):
        return g_poly(v, lam, C0, m) - target

    v_gmax, _ = g_stationary_points(lam, C0, m)
    if A == a_max:
        return v_gmax, _expand_bracket_root(rootfun, v2)
    v1s = brentq(rootfun, v_gmax, v1, xtol=1e-15, rtol=1e-12)
    v2s = _expand_bracket_root(rootfun, v2)
    return float(v1s), float(v2s)


def _expand_bracket_root(rootfun, lo: float) -> float:
    hi = 2.0 * lo
    for _ in range(200):
        if rootfun(hi) > 0:
            break
        hi *= 2.0
    else:
        raise BranchError("failed to bracket the upper turning point")
    return float(brentq(rootfun, lo, hi, xtol=1e-15, rtol=1e-12))


def lambda_star_from_C0(C0: float, params: ModelParams) -> float:
    """Touch-down multiplier lam* = -(2/r0^2)(r0 - C0 + A r0^(2-m)/(m-2)).

    C0 must sit in the touch-down window
    [ (r0 + A m r0^(2-m)/(m-2)) / 2,  r0 + A r0^(2-m)/(m-2) ),
    and A < r0^(m-1).
    """
    r0, A, m = params.r0, params.A, params.m
    if A > 0 and m <= 2:
        raise ParameterError(f"touch-down window with A > 0 requires m > 2, got {m}")
    if not (0 <= A < r0 ** (m - 1.0)):
        raise BranchError(f"touch-down branch needs A < r0^(m-1) = {r0 ** (m - 1.0)}")
    shift = A / (m - 2.0) * r0 ** (2.0 - m) if A > 0 else 0.0
    lo = 0.5 * (r0 + m * shift)
    hi = r0 + shift
    if not (lo <= C0 < hi):
        raise BranchError(
            f"C0 = {C0} outside the touch-down window [{lo}, {hi})"
        )
    return -(2.0 / r0**2) * (r0 - C0 + shift)


def C0_from_lambda_star(lambda_star: float, params: ModelParams) -> float:
    """Inverse of ``lambda_star_from_C0``."""
    r0, A, m = params.r0, params.A, params.m
    if A > 0 and m <= 2:
        raise ParameterError(f"touch-down window with A > 0 requires m > 2, got {m}")
    shift = A / (m - 2.0) * r0 ** (2.0 - m) if A > 0 else 0.0
    lo = A * r0 ** (-m) - 1.0 / r0
    if not (lo <= lambda_star < 0):
        raise BranchError(
            f"lam* = {lambda_star} outside the touch-down window [{lo}, 0)"
        )
    return r0 + shift + 0.5 * lambda_star * r0**2


# ---------------------------------------------------------------------------
# the quadrature form d(xi)/dv and the period
# ---------------------------------------------------------------------------

def _quadrature_parts(branch: MinimizerBranch):
    """Return (s(theta), integrand g(theta)) callables for one half-period.

    d(xi) = g(theta) d(theta) with g = 2 num / sqrt(W R), where
    -P(s) = (s - v1*)(v2* - s) W(s).  W is evaluated directly away from
    the turning points and by l'Hopital at them.
    """
    lam, C0, m, B = branch.lam, branch.C0, branch.m, branch.B
    v1, v2 = branch.v1, branch.v2
    a, b = branch.v1_star, branch.v2_star
    delta = b - a

    if branch.A == 0.0:

        def s_of_theta(th):
            return a + delta * np.sin(th) ** 2

        def g_of_theta(th):
            s = s_of_theta(th)
            num = s * s - 2.0 * C0 / lam
            return 2.0 * num / np.sqrt((s + v1) * (s + v2))

        return s_of_theta, g_of_theta

    def P(s):
        return s ** (m - 2.0) * (s - v1) * (s - v2) + B

    def dP(s):
        return (m - 2.0) * s ** (m - 3.0) * (s - v1) * (s - v2) + s ** (
            m - 2.0
        ) * (2.0 * s - v1 - v2)

    def W(s):
        s = np.asarray(s, dtype=float)
        out = np.empty_like(s)
        lo_edge = np.abs(s - a) < 1e-9 * delta
        hi_edge = np.abs(b - s) < 1e-9 * delta
        mid = ~(lo_edge | hi_edge)
        out[mid] = -P(s[mid]) / ((s[mid] - a) * (b - s[mid]))
        out[lo_edge] = -dP(a) / delta
        out[hi_edge] = dP(b) / delta
        return out

    def s_of_theta(th):
        return a + delta * np.sin(th) ** 2

    def g_of_theta(th):
        s = s_of_theta(th)
        num = s ** (m - 2.0) * (s * s - 2.0 * C0 / lam) + B
        R = s ** (m - 2.0) * (s + v1) * (s + v2) + B
        return 2.0 * num / np.sqrt(W(s) * R)

    return s_of_theta, g_of_theta


def _gl_refine(fun, rel_tol: float = 1e-8, n0: int = 48, n_max: int = 12288) -> float:
    """Gauss-Legendre on [0, pi/2] with node doubling to a relative tolerance."""
    prev = None
    n = n0
    while n <= n_max:
        x, w = np.polynomial.legendre.leggauss(n)
        th = 0.25 * np.pi * (x + 1.0)
        val = 0.25 * np.pi * np.sum(w * fun(th))
        if prev is not None and abs(val - prev) <= rel_tol * abs(val):
            return float(val)
        prev = val
        n *= 2
    raise BranchError("period quadrature failed to converge")


def period_tau(branch: MinimizerBranch, rel_tol: float = 1e-8) -> float:
    """Spatial period of the orbit, via the desingularized quadrature."""
    if not branch.v2_star > branch.v1_star:
        raise BranchError("degenerate branch (v1 = v2): period undefined")
    _, g = _quadrature_parts(branch)
    return 2.0 * _gl_refine(g, rel_tol)


def branch_mass(branch: MinimizerBranch, rel_tol: float = 1e-10) -> float:
    """Mass integral of v^2 over one exact period of the orbit."""
    s_of, g = _quadrature_parts(branch)
    return 2.0 * _gl_refine(lambda th: s_of(th) ** 2 * g(th), rel_tol)


def make_branch(lam: float, C0: float, params: ModelParams) -> MinimizerBranch:
    """Validate (lam, C0) against the admissibility windows and build the branch."""
    A, m, r0 = params.A, params.m, params.r0
    v1, v2 = extrema_A0(lam, C0)
    if v1 == v2:
        raise BranchError("degenerate branch (v1 = v2): period undefined")
    if A == 0.0:
        v1s, v2s = v1, v2
    else:
        v1s, v2s = extrema_Apos(lam, C0, params)
    touchdown = abs(v1s - r0) <= 1e-10 * max(r0, 1.0)
    branch = MinimizerBranch(
        lam=lam, C0=C0, A=A, m=m, r0=r0,
        v1=v1, v2=v2, v1_star=v1s, v2_star=v2s,
        tau=float("nan"), touchdown=touchdown,
    )
    tau = period_tau(branch)
    return MinimizerBranch(
        lam=lam, C0=C0, A=A, m=m, r0=r0,
        v1=v1, v2=v2, v1_star=v1s, v2_star=v2s,
        tau=tau, touchdown=touchdown,
    )


def touchdown_branch(lambda_star: float, params: ModelParams) -> MinimizerBranch:
    """Branch grazing v = r0, given its multiplier."""
    return make_branch(lambda_star, C0_from_lambda_star(lambda_star, params), params)


# ---------------------------------------------------------------------------
# profile reconstruction
# ---------------------------------------------------------------------------

_TABLE_SIZE = 8193


class _OrbitMap:
    """Invertible map theta <-> xi over one half-period of a branch."""

    def __init__(self, branch: MinimizerBranch):
        self.branch = branch
        s_of, g = _quadrature_parts(branch)
        self._s_of = s_of
        th = np.linspace(0.0, 0.5 * np.pi, _TABLE_SIZE)
        self._g_spline = CubicSpline(th, g(th))
        self._xi_spline = self._g_spline.antiderivative()
        self.half_period = float(self._xi_spline(0.5 * np.pi))

    def theta_of_xi(self, xi: np.ndarray) -> np.ndarray:
        """Newton inversion of the monotone map xi(theta); xi in [0, tau/2]."""
        xi = np.asarray(xi, dtype=float)
        th = np.clip(xi / self.half_period, 0.0, 1.0) * (0.5 * np.pi)
        tol = 1e-14 * max(self.half_period, 1.0)
        for _ in range(60):
            r = self._xi_spline(th) - xi
            if np.all(np.abs(r) <= tol):
                break
            th = np.clip(th - r / self._g_spline(th), 0.0, 0.5 * np.pi)
        else:
            raise BranchError("orbit map inversion did not converge")
        return th

    def values_at(self, xi: np.ndarray) -> np.ndarray:
        """Orbit values at arbitrary positions (periodic fold + mirror)."""
        tau = 2.0 * self.half_period
        y = np.mod(np.asarray(xi, dtype=float), tau)
        y = np.where(y > self.half_period, tau - y, y)
        return self._s_of(self.theta_of_xi(y))


def eval_minimizer(branch: MinimizerBranch, xi: np.ndarray) -> np.ndarray:
    """Orbit values v(xi) at arbitrary positions; v(0) is the minimum."""
    return _OrbitMap(branch).values_at(xi)


def minimizer_profile(branch: MinimizerBranch, n_points: int) -> FilmProfile:
    """One exact period of the orbit sampled on a uniform grid.

    v(0) = v1 (or v1*), the maximum sits at tau/2, and the profile is even
    about its maximum.
    """
    if n_points < 16:
        raise ParameterError(f"n_points must be >= 16, got {n_points}")
    grid = PeriodicGrid(branch.tau, n_points)
    values = eval_minimizer(branch, grid.nodes)
    return FilmProfile(grid, values)


def lagrange_multiplier_field(profile: FilmProfile, params: ModelParams) -> np.ndarray:
    """Nodal multiplier field lambda(xi) = J(v); piecewise constant on
    exact minimizers (lam* on droplets, A r0^-m - 1/r0 on dry regions)."""
    return pressure_values(profile.values, profile.grid.h, params)


# ---------------------------------------------------------------------------
# inverse problem: A = 0 branch with a prescribed period and mass
# ---------------------------------------------------------------------------

def branch_from_period_mass(L: float, M: float, params: ModelParams) -> MinimizerBranch:
    """A = 0 orbit with period L and one-period mass M.

    Uses the scaling family: at fixed rho = lam*C0 the period scales as
    1/|lam| and the mass as 1/|lam|^3, so M/L^3 depends on rho alone.
    Raises ``BranchError`` when M/L^3 leaves the attainable range.
    """
    p0 = params.replace(A=0.0)
    target = M / L**3

    def shape_ratio(rho):
        br = make_branch(-1.0, -rho, p0)
        return branch_mass(br) / br.tau**3

    rhos = -0.5 + 0.4999 * np.linspace(1e-4, 1.0, 40) ** 2
    rhos = np.sort(np.concatenate([rhos, [-1e-5]]))
    vals = np.array([shape_ratio(r) for r in rhos]) - target
    sign_change = np.nonzero(np.diff(np.sign(vals)) != 0)[0]
    if sign_change.size == 0:
        raise BranchError(
            f"no A = 0 branch with mass/L^3 = {target:.4g} "
            f"(attainable range [{(vals.min() + target):.4g}, {(vals.max() + target):.4g}])"
        )
    i = sign_change[0]
    rho = brentq(lambda r: shape_ratio(r) - target, rhos[i], rhos[i + 1],
                 xtol=1e-15, rtol=1e-13)
    scale_branch = make_branch(-1.0, -rho, p0)
    lam = -scale_branch.tau / L
    return make_branch(lam, rho / lam, p0)
