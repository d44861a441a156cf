"""Core model ingredients: mobility, curvature closures, dynamic pressure.

Everything downstream (integral diagnostics, minimizer construction, the
implicit time stepper, the travelling-wave solver) is built from the scalar
functions and the second-order periodic stencils defined here.  All
functions are pure and accept scalars or numpy arrays.

Conventions for the uniform periodic grid with nodes ``xi_i = i*h``:

* half-point quantities carry index ``i`` for the location ``i + 1/2``,
* ``half_slopes(v)[i] = (v[i+1] - v[i]) / h``,
* ``node_divergence(F)[i] = (F[i+1/2] - F[i-1/2]) / h``,

so a conservative flux form telescopes exactly over one period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ParameterError(ValueError):
    """Model parameters violate a structural requirement."""


class FilmDomainError(ValueError):
    """Film values outside the domain of the model functions (v <= 0)."""


class SingularMobilityError(ValueError):
    """An operation required 1/Q on a profile touching or crossing v = r0."""


@dataclass(frozen=True)
class ModelParams:
    """Physical and numerical constants of the coating model.

    Parameters
    ----------
    sigma : float
        Bond number, > 0.  Surface-tension fluxes carry the factor 1/sigma.
    r0 : float
        Dimensionless fibre radius, > 0.  The mobility vanishes at v = r0.
    A : float
        Amplitude of the film stabilization term A / v**m, >= 0.
    m : float
        Stabilization exponent, > 0.  Energy evaluation additionally
        requires m > 2 whenever A > 0.
    mu : int
        Gravity switch: 0 (no gravity) or 1 (with gravity).
    V : float
        Speed of the reference frame (0 in the lab frame).
    eps_reg : float
        Additive mobility regularization used by ``mobility_Q_reg``;
        keep 0 unless the dynamics approaches touch-down.
    """

    sigma: float
    r0: float
    A: float = 0.0
    m: float = 3.0
    mu: int = 0
    V: float = 0.0
    eps_reg: float = 0.0
    tol_touchdown: float = field(default=0.0, repr=False)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if not self.r0 > 0:
            raise ParameterError(f"r0 must be > 0, got {self.r0}")
        if self.A < 0:
            raise ParameterError(f"A must be >= 0, got {self.A}")
        if not self.m > 0:
            raise ParameterError(f"m must be > 0, got {self.m}")
        if self.mu not in (0, 1):
            raise ParameterError(f"mu must be 0 or 1, got {self.mu}")
        if self.eps_reg < 0:
            raise ParameterError(f"eps_reg must be >= 0, got {self.eps_reg}")
        if self.tol_touchdown == 0.0:
            object.__setattr__(self, "tol_touchdown", 1e-9 * self.r0)

    def require_energy_exponent(self):
        """Energy functionals need m > 2 when the stabilization is active."""
        if self.A > 0 and self.m <= 2:
            raise ParameterError(
                f"energy functionals with A > 0 require m > 2, got m = {self.m}"
            )

    def replace(self, **kw) -> "ModelParams":
        d = {
            "sigma": self.sigma, "r0": self.r0, "A": self.A, "m": self.m,
            "mu": self.mu, "V": self.V, "eps_reg": self.eps_reg,
        }
        d.update(kw)
        return ModelParams(**d)


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic mesh on [0, L) with N nodes and spacing h = L/N."""

    L: float
    N: int

    def __post_init__(self):
        if not self.L > 0:
            raise ParameterError(f"grid length must be > 0, got {self.L}")
        if self.N < 8:
            raise ParameterError(f"grid needs at least 8 nodes, got {self.N}")

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N) * self.h


def _frozen(values) -> np.ndarray:
    a = np.array(values, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FilmProfile:
    """Nodal film positions v(xi_i), measured from the fibre axis."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.grid.N,):
            raise ParameterError(
                f"profile has {v.size} values for a grid of {self.grid.N} nodes"
            )
        if not np.all(np.isfinite(v)):
            raise FilmDomainError("profile contains non-finite values")
        if np.any(v <= 0):
            raise FilmDomainError("profile contains non-positive values")
        object.__setattr__(self, "values", v)

    @property
    def min(self) -> float:
        return float(self.values.min())

    @property
    def max(self) -> float:
        return float(self.values.max())

    def clearance(self, params: ModelParams) -> float:
        """Signed distance of the profile minimum above the fibre radius."""
        return self.min - params.r0


@dataclass(frozen=True)
class PressureField:
    """Nodal values of J; -J is the dynamic pressure."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if not np.all(np.isfinite(v)):
            raise FilmDomainError("pressure field contains non-finite values")
        object.__setattr__(self, "values", v)


# ---------------------------------------------------------------------------
# scalar model functions
# ---------------------------------------------------------------------------

def mobility_Q(u, params: ModelParams):
    """Mobility Q(u) = u^4 log(u/r0)/4 - 3 (u^2 - r0^2)(u^2 - r0^2/3)/16.

    Positive for u > r0, zero at u = r0 (with a triple zero), negative on
    (0, r0).  Raises ``FilmDomainError`` for u <= 0.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or not np.all(np.isfinite(u)):
        raise FilmDomainError("mobility_Q requires u > 0")
    r0 = params.r0
    q = 0.25 * u**4 * np.log(u / r0) - (3.0 / 16.0) * (u * u - r0 * r0) * (
        u * u - r0 * r0 / 3.0
    )
    return q if q.shape else float(q)


def mobility_Q_prime(u, params: ModelParams):
    """dQ/du; vanishes at u = r0 together with Q'' (triple zero of Q)."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or not np.all(np.isfinite(u)):
        raise FilmDomainError("mobility_Q_prime requires u > 0")
    r0 = params.r0
    dq = u**3 * np.log(u / r0) - 0.5 * u**3 + 0.5 * r0 * r0 * u
    return dq if dq.shape else float(dq)


def mobility_Q_reg(u, params: ModelParams):
    """Regularized mobility |Q(u)| + eps_reg, >= eps_reg everywhere."""
    q = np.abs(mobility_Q(u, params)) + params.eps_reg
    return q if np.asarray(q).shape else float(q)


def mobility_Q_reg_prime(u, params: ModelParams):
    """Derivative of |Q(u)| + eps_reg, i.e. sign(Q) * Q'(u)."""
    q = np.asarray(mobility_Q(u, params))
    dq = np.asarray(mobility_Q_prime(u, params))
    out = np.sign(q) * dq
    return out if out.shape else float(out)


def curvature_fns(z):
    """Curvature closures (f, Phi, Phi', Phi'') of the slope z.

    f(z) = (1 + z^2)^(-1/2); Phi = 1/f; Phi' = z f; Phi'' = f^3.
    Total on finite input.
    """
    z = np.asarray(z, dtype=float)
    f = 1.0 / np.sqrt(1.0 + z * z)
    phi = 1.0 / f
    dphi = z * f
    d2phi = f * f * f
    if z.shape:
        return f, phi, dphi, d2phi
    return float(f), float(phi), float(dphi), float(d2phi)


def stabilization(u, params: ModelParams):
    """Film stabilization contribution A * u**(-m) as it enters J."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or not np.all(np.isfinite(u)):
        raise FilmDomainError("stabilization requires u > 0")
    if params.A == 0.0:
        out = np.zeros_like(u)
    else:
        out = params.A * u ** (-params.m)
    return out if out.shape else float(out)


# ---------------------------------------------------------------------------
# periodic stencils
# ---------------------------------------------------------------------------

def half_slopes(v: np.ndarray, h: float) -> np.ndarray:
    """Two-point slopes at half-points: (v[i+1] - v[i]) / h."""
    return (np.roll(v, -1) - v) / h


def centered_slopes(v: np.ndarray, h: float) -> np.ndarray:
    """Centered nodal slopes: (v[i+1] - v[i-1]) / (2h)."""
    return (np.roll(v, -1) - np.roll(v, 1)) / (2.0 * h)


def half_average(v: np.ndarray) -> np.ndarray:
    """Arithmetic average onto half-points: (v[i] + v[i+1]) / 2."""
    return 0.5 * (v + np.roll(v, -1))


def node_divergence(F: np.ndarray, h: float) -> np.ndarray:
    """Divergence of a half-point flux: (F[i+1/2] - F[i-1/2]) / h."""
    return (F - np.roll(F, 1)) / h


def pressure_values(v: np.ndarray, h: float, params: ModelParams) -> np.ndarray:
    """Nodal J for raw value arrays (no container validation).

    J_i = (Phi'(s_{i+1/2}) - Phi'(s_{i-1/2}))/h - f(c_i)/v_i + A v_i^(-m)
    with two-point half slopes s and centered nodal slopes c.  Exact on
    constant profiles; O(h^2) on smooth ones.
    """
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise FilmDomainError("pressure evaluation requires v > 0")
    s = half_slopes(v, h)
    dphi_half = s / np.sqrt(1.0 + s * s)
    c = centered_slopes(v, h)
    f_node = 1.0 / np.sqrt(1.0 + c * c)
    J = node_divergence(dphi_half, h) - f_node / v
    if params.A != 0.0:
        J = J + params.A * v ** (-params.m)
    return J


def pressure_J(profile: FilmProfile, params: ModelParams) -> PressureField:
    """Nodal pressure field J of a film profile."""
    J = pressure_values(profile.values, profile.grid.h, params)
    return PressureField(profile.grid, J)
