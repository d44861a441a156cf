"""Integral diagnostics: mass, energies, dissipation, entropy, wave-speed formulas.

Plain domain integrals use the periodic trapezoid rule (h * sum on a uniform
periodic grid).  Integrals weighted by 1/Q are evaluated at half-points with
the same mobility averaging as the flux discretization of the time stepper,
so that the flux constant of a converged travelling wave and the offset nu
computed here agree to solver tolerance rather than merely to O(h^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .model import (
    FilmDomainError,
    FilmProfile,
    ModelParams,
    SingularMobilityError,
    centered_slopes,
    half_average,
    half_slopes,
    mobility_Q,
    mobility_Q_reg,
    pressure_values,
)


class DegenerateProfileError(ValueError):
    """The wave-speed formulas degenerate (Cauchy-Schwarz equality case)."""


@dataclass(frozen=True)
class EnergyReport:
    """Scalar diagnostics of a single profile at one instant."""

    mass: float
    energy_E: float
    modified_E: float
    dissipation: float
    lambda_bar_J: float
    min_v: float
    max_v: float


@dataclass(frozen=True)
class GravityFrame:
    """Travelling-frame bookkeeping for the gravity case.

    ``F`` has N+1 entries: nodal values F(xi_0) .. F(xi_{N-1}) plus the
    wrap-around value F(L).  F[0] = 0 by construction and |F[-1]| stays
    below periodicity tolerance when ``nu`` comes from
    ``nu_for_periodicity``.
    """

    V: float
    nu: float
    F: np.ndarray


def mass(profile: FilmProfile) -> float:
    """Conserved mass integral of v^2 over one period."""
    g = profile.grid
    return float(g.h * np.sum(profile.values**2))


def energy_E(profile: FilmProfile, params: ModelParams) -> float:
    """Surface-tension plus stabilization energy of a profile.

    The v * Phi(v_xi) part takes slopes at half-points with v averaged to
    half-points; the stabilization part is a plain nodal sum.
    """
    params.require_energy_exponent()
    v = profile.values
    h = profile.grid.h
    s = half_slopes(v, h)
    e = np.sum(half_average(v) * np.sqrt(1.0 + s * s))
    if params.A != 0.0:
        e += np.sum(params.A / (params.m - 2.0) * v ** (2.0 - params.m))
    return float(h * e)


def lagrangian_L(profile: FilmProfile, params: ModelParams, lam: float) -> float:
    """Energy augmented by the mass constraint term lam/2 * mass."""
    return energy_E(profile, params) + 0.5 * lam * mass(profile)


def dissipation_rate(profile: FilmProfile, params: ModelParams) -> float:
    """Instantaneous energy dissipation sigma^-1 * sum Q (J_xi)^2.

    Uses the regularized mobility at half-point-averaged v and the same J
    stencil as the time stepper, so it matches -dE/dt of a simulation to
    first order in dt.
    """
    v = profile.values
    h = profile.grid.h
    J = pressure_values(v, h, params)
    q_half = mobility_Q_reg(half_average(v), params)
    jx = (np.roll(J, -1) - J) / h
    return float(h * np.sum(q_half * jx * jx) / params.sigma)


def entropy_G(z: float, alpha: float, s0: float, params: ModelParams) -> float:
    """Entropy-type double integral of |v|^alpha / |Q(v)| from s0 to z.

    Both limits must lie strictly above r0; the inner integrand has a
    non-integrable singularity at r0 (|Q| vanishes like |v - r0|^3 there).
    Nonnegative for z on either side of s0.
    """
    if not (z > params.r0 and s0 > params.r0):
        raise FilmDomainError(
            f"entropy_G needs z, s0 > r0 = {params.r0}, got z={z}, s0={s0}"
        )
    if z == s0:
        return 0.0

    def inner(s):
        val, _ = quad(
            lambda w: abs(w) ** alpha / abs(mobility_Q(w, params)),
            s0, s, epsabs=1e-10, epsrel=1e-10, limit=200,
        )
        return val

    val, _ = quad(
        lambda s: abs(s) * inner(s), s0, z,
        epsabs=1e-10, epsrel=1e-10, limit=200,
    )
    return float(val)


# ---------------------------------------------------------------------------
# gravity-frame machinery: nu, F, modified energy, wave-speed formulas
# ---------------------------------------------------------------------------

def _half_mobility_sums(profile: FilmProfile, params: ModelParams):
    """Half-point sums h*sum 1/Q, (v^2)/Q, (v^2)^2/Q over one period.

    (v^2) is averaged to half-points exactly as in the conservative flux,
    hence h * sum of the (v^2) half average equals the nodal mass exactly.
    """
    v = profile.values
    h = profile.grid.h
    if profile.min <= params.r0:
        raise SingularMobilityError(
            f"1/Q integrals need min(v) > r0; min(v) - r0 = {profile.min - params.r0:.3e}"
        )
    q = mobility_Q_reg(half_average(v), params)
    v2h = half_average(v * v)
    I0 = h * np.sum(1.0 / q)
    I2 = h * np.sum(v2h / q)
    I4 = h * np.sum(v2h * v2h / q)
    return I0, I2, I4


def nu_for_periodicity(profile: FilmProfile, V: float, params: ModelParams) -> float:
    """Flux offset nu that makes F periodic: F(0) = F(L)."""
    I0, I2, _ = _half_mobility_sums(profile, params)
    return float((0.5 * V * I2 - profile.grid.L) / I0)


def F_field(profile: FilmProfile, frame: GravityFrame, params: ModelParams) -> np.ndarray:
    """Cumulative gravitational-potential field F on nodes plus the wrap value.

    F(xi) = -sigma * int_0^xi (1 - (V/2) v^2/Q + nu/Q) dy, accumulated with
    the same half-point quadrature as ``nu_for_periodicity`` so the wrap
    value vanishes identically when nu comes from there.
    """
    v = profile.values
    h = profile.grid.h
    if profile.min <= params.r0:
        raise SingularMobilityError("F_field needs min(v) > r0")
    q = mobility_Q_reg(half_average(v), params)
    v2h = half_average(v * v)
    increments = -params.sigma * h * (1.0 - 0.5 * frame.V * v2h / q + frame.nu / q)
    F = np.empty(profile.grid.N + 1)
    F[0] = 0.0
    np.cumsum(increments, out=F[1:])
    return F


def build_gravity_frame(profile: FilmProfile, V: float, params: ModelParams) -> GravityFrame:
    """Assemble the GravityFrame with nu chosen by the periodicity condition."""
    nu = nu_for_periodicity(profile, V, params)
    frame = GravityFrame(V=V, nu=nu, F=np.empty(0))
    F = F_field(profile, frame, params)
    return GravityFrame(V=V, nu=nu, F=F)


def modified_energy(profile: FilmProfile, frame: GravityFrame, params: ModelParams) -> float:
    """Energy plus the gravitational potential term 1/2 int v^2 F dxi."""
    params.require_energy_exponent()
    v = profile.values
    h = profile.grid.h
    e = energy_E(profile, params)
    pot = 0.5 * h * np.sum(v * v * frame.F[:-1])
    total = e + pot
    # lower bound sanity: E_tilde >= (r0 + A/(m-2) Mbar^{-(m-2)/2} - sigma M / 2) L
    M = mass(profile)
    L = profile.grid.L
    k0 = params.r0 * L - 0.5 * params.sigma * M * L
    if params.A > 0:
        k0 += params.A / (params.m - 2.0) * (M / L) ** (-(params.m - 2.0) / 2.0) * L
    if total < k0 - 1e-6 * (abs(k0) + abs(total) + 1.0):
        raise FilmDomainError(
            f"modified energy {total:.6g} fell below its lower bound {k0:.6g}"
        )
    return float(total)


def tw_speed_formula(
    profile: FilmProfile,
    params: ModelParams,
    flux_correction: bool = True,
) -> tuple[float, float]:
    """Travelling-wave speed V and offset nu from the two integral conditions.

    Solves the 2x2 linear system

        (V/2) I2 - nu I0 = L
        (V/2) I4 - nu I2 = M + d

    where I0, I2, I4 are the half-point 1/Q, v^2/Q, v^4/Q sums and M is the
    nodal mass.  With ``flux_correction`` the right side keeps the discrete
    remainder d = sigma^-1 * sum (v^2)_half (J[i+1]-J[i]) of the summed
    first integral; it vanishes identically in the continuum and under grid
    refinement, and keeping it makes (V, -nu) match the (speed, flux
    constant) pair of a converged discrete travelling wave to solver
    tolerance instead of O(h^2).
    """
    I0, I2, I4 = _half_mobility_sums(profile, params)
    L = profile.grid.L
    M = mass(profile)
    den = I2 * I2 - I0 * I4
    scale = max(I2 * I2, abs(I0 * I4))
    if abs(den) < 1e-12 * scale:
        raise DegenerateProfileError(
            "wave-speed formula denominator vanishes (profile too close to constant)"
        )
    d = 0.0
    if flux_correction:
        v = profile.values
        h = profile.grid.h
        J = pressure_values(v, h, params)
        v2h = half_average(v * v)
        d = float(np.sum(v2h * (np.roll(J, -1) - J)) / params.sigma)
    V = 2.0 * (L * I2 - (M + d) * I0) / den
    # recover nu from the first equation so both conditions hold exactly
    nu = (0.5 * V * I2 - L) / I0
    return float(V), float(nu)


def mean_pressure(profile: FilmProfile, params: ModelParams) -> float:
    """Domain-mean multiplier bound Jbar (reported, never used in solves)."""
    v = profile.values
    h = profile.grid.h
    c = centered_slopes(v, h)
    f_node = 1.0 / np.sqrt(1.0 + c * c)
    out = -np.sum(f_node / v)
    if params.A != 0.0:
        out += np.sum(params.A * v ** (-params.m))
    return float(h * out / profile.grid.L)


def energy_report(
    profile: FilmProfile,
    params: ModelParams,
    frame: GravityFrame | None = None,
) -> EnergyReport:
    """Bundle the scalar diagnostics of a profile; modified_E is NaN
    without a gravity frame."""
    if frame is not None:
        mod = modified_energy(profile, frame, params)
    else:
        mod = float("nan")
    return EnergyReport(
        mass=mass(profile),
        energy_E=energy_E(profile, params),
        modified_E=mod,
        dissipation=dissipation_rate(profile, params),
        lambda_bar_J=mean_pressure(profile, params),
        min_v=profile.min,
        max_v=profile.max,
    )
