"""Fully implicit finite-difference time integrator for the film equation.

Backward Euler on the conservative variable v^2/2 with Newton iteration on
the nodal film values.  The spatial operator is the conservative flux form

    R_i = (v_i^2 - v_prev_i^2) / (2 dt) + (F_{i+1/2} - F_{i-1/2}) / h,
    F_{i+1/2} = Q_h (J_{i+1} - J_i) / (sigma h) + mu Q_h - (V/2) (v^2)_h,

with the regularized mobility Q_h at half-point-averaged v and the nodal
pressure J from :mod:`fibrefilm.model`.  The flux form telescopes, so mass
is conserved to Newton tolerance at every accepted step.  The Jacobian is
assembled analytically from sparse periodic difference operators; a
finite-difference Jacobian is available as a verification mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import functionals as fnl
from .minimizers import MinimizerBranch, _OrbitMap, make_branch
from .model import (
    FilmDomainError,
    FilmProfile,
    ModelParams,
    ParameterError,
    PeriodicGrid,
    SingularMobilityError,
    half_average,
    mobility_Q_reg,
    mobility_Q_reg_prime,
    node_divergence,
    pressure_values,
)


class StepRejected(RuntimeError):
    """Newton failed to converge for the attempted time step."""


class SolverError(RuntimeError):
    """Hard integrator failure; carries the last good state for inspection."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class SimConfig:
    """Time-stepping controls."""

    dt: float
    t_end: float
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    dt_min: float = 1e-13
    dt_max: float = 0.05
    snapshot_every: float = 0.0
    diagnostics_every: float = 0.0

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt <= self.dt_max):
            raise ParameterError(
                f"need 0 < dt_min <= dt <= dt_max, got "
                f"({self.dt_min}, {self.dt}, {self.dt_max})"
            )
        if self.t_end < 0:
            raise ParameterError(f"t_end must be >= 0, got {self.t_end}")


@dataclass(frozen=True)
class SimState:
    t: float
    profile: FilmProfile
    step_count: int = 0
    last_newton_iters: int = 0


@dataclass
class DiagnosticsSeries:
    """Time samples of the scalar diagnostics (plus gravity-frame extras)."""

    t: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    modified_energy: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    min_v: list = field(default_factory=list)
    max_v: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    nu: list = field(default_factory=list)
    F_wrap: list = field(default_factory=list)
    v2_Ft: list = field(default_factory=list)
    peak_xi: list = field(default_factory=list)
    max_step_mass_drift: float = 0.0

    def as_arrays(self) -> dict:
        return {
            k: np.asarray(getattr(self, k))
            for k in (
                "t", "mass", "energy", "modified_energy", "dissipation",
                "min_v", "max_v", "newton_iters", "nu", "F_wrap", "v2_Ft",
                "peak_xi",
            )
        }


@dataclass
class SimSinks:
    """Optional callbacks fired at diagnostic and snapshot times."""

    on_diagnostics: object = None
    on_snapshot: object = None


# ---------------------------------------------------------------------------
# spatial operator and Jacobian
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _shift_ops(N: int):
    """Periodic shift S (row i -> col i+1) and identity, CSR format."""
    idx = np.arange(N)
    S = sp.csr_matrix((np.ones(N), ((idx), ((idx + 1) % N))), shape=(N, N))
    return S, sp.identity(N, format="csr")


def flux_halfpoints(v: np.ndarray, h: float, params: ModelParams) -> np.ndarray:
    """Conservative flux at half-points for the current parameter frame."""
    J = pressure_values(v, h, params)
    q = mobility_Q_reg(half_average(v), params)
    F = q * (np.roll(J, -1) - J) / (h * params.sigma)
    if params.mu:
        F = F + q
    if params.V != 0.0:
        F = F - 0.5 * params.V * half_average(v * v)
    return F


def semidiscrete_residual(
    prev: np.ndarray,
    nxt: np.ndarray,
    dt: float,
    h: float,
    params: ModelParams,
    forcing: np.ndarray | None = None,
) -> np.ndarray:
    """Backward-Euler residual of the conservative scheme (nodal)."""
    R = (nxt * nxt - prev * prev) / (2.0 * dt) + node_divergence(
        flux_halfpoints(nxt, h, params), h
    )
    if forcing is not None:
        R = R - forcing
    return R


def flux_jacobian(v: np.ndarray, h: float, params: ModelParams) -> sp.csr_matrix:
    """d(F_half)/dv as a sparse periodic band matrix."""
    N = v.size
    S, eye = _shift_ops(N)
    D_half = (S - eye) / h
    A_half = 0.5 * (S + eye)
    C = (S - S.T) / (2.0 * h)

    s = (np.roll(v, -1) - v) / h
    c = (np.roll(v, -1) - np.roll(v, 1)) / (2.0 * h)
    f_c = 1.0 / np.sqrt(1.0 + c * c)
    fp_c = -c * f_c**3
    f3_s = (1.0 / np.sqrt(1.0 + s * s)) ** 3

    dJ = (
        (eye - S.T) / h @ (sp.diags(f3_s) @ D_half)
        - sp.diags(fp_c / v) @ C
        + sp.diags(f_c / (v * v))
    )
    if params.A != 0.0:
        dJ = dJ - sp.diags(params.A * params.m * v ** (-params.m - 1.0))

    vbar = half_average(v)
    q = mobility_Q_reg(vbar, params)
    dq = mobility_Q_reg_prime(vbar, params)
    J = pressure_values(v, h, params)
    jx = (np.roll(J, -1) - J) / h

    dF = sp.diags(jx * dq / params.sigma) @ A_half + sp.diags(q / params.sigma) @ (
        D_half @ dJ
    )
    if params.mu:
        dF = dF + sp.diags(dq) @ A_half
    if params.V != 0.0:
        dF = dF - params.V * (A_half @ sp.diags(v))
    return dF.tocsr()


def step_jacobian(v: np.ndarray, dt: float, h: float, params: ModelParams) -> sp.csr_matrix:
    """Analytic Jacobian of the backward-Euler residual."""
    N = v.size
    S, eye = _shift_ops(N)
    D_div = (eye - S.T) / h
    return (sp.diags(v / dt) + D_div @ flux_jacobian(v, h, params)).tocsr()


def fd_step_jacobian(
    prev: np.ndarray, v: np.ndarray, dt: float, h: float, params: ModelParams,
    rel_step: float = 1e-7,
) -> np.ndarray:
    """Dense finite-difference Jacobian (verification mode, O(N^2) cost)."""
    N = v.size
    base = semidiscrete_residual(prev, v, dt, h, params)
    out = np.empty((N, N))
    for j in range(N):
        dvj = rel_step * max(abs(v[j]), 1.0)
        vp = v.copy()
        vp[j] += dvj
        out[:, j] = (semidiscrete_residual(prev, vp, dt, h, params) - base) / dvj
    return out


# ---------------------------------------------------------------------------
# Newton step and time loop
# ---------------------------------------------------------------------------

def _newton(prev, dt, h, params, config, forcing=None):
    """Damped Newton from the previous profile; returns (v, iterations).

    Convergence is declared when the residual max-norm reaches
    ``newton_tol`` or when the Newton update falls to the rounding level
    of v itself (machine stationarity).  The second exit is required
    because the fourth-order operator amplifies ulp-level noise in v by
    roughly sigma^-1 * max(Q) * 16 / h^4, which puts an evaluation floor
    under the residual that an absolute tolerance cannot cross.
    """
    v = prev.copy()
    eps = np.finfo(float).eps
    # roundoff floor of the time-difference term alone
    tol = max(config.newton_tol, 4.0 * eps * float(np.max(prev * prev)) / dt)
    R = semidiscrete_residual(prev, v, dt, h, params, forcing)
    rnorm = np.max(np.abs(R))
    for it in range(1, config.newton_max_iter + 1):
        if rnorm <= tol:
            return v, it - 1
        Jac = step_jacobian(v, dt, h, params)
        dv = spsolve(Jac.tocsc(), -R)
        if not np.all(np.isfinite(dv)):
            raise StepRejected("Newton update is not finite")
        if np.max(np.abs(dv)) <= 4.0 * eps * np.max(np.abs(v)):
            return v, it  # stationary to machine precision
        alpha = 1.0
        for _ in range(12):
            vn = v + alpha * dv
            if np.all(vn > 0):
                try:
                    Rn = semidiscrete_residual(prev, vn, dt, h, params, forcing)
                except FilmDomainError:
                    Rn = None
                if Rn is not None and np.all(np.isfinite(Rn)):
                    rn = np.max(np.abs(Rn))
                    if rn < rnorm or alpha <= 1.0 / 1024:
                        v, R, rnorm = vn, Rn, rn
                        break
            alpha *= 0.5
        else:
            raise StepRejected("Newton line search failed")
    if rnorm <= tol:
        return v, config.newton_max_iter
    raise StepRejected(
        f"Newton stalled at residual {rnorm:.3e} (tol {tol:.1e})"
    )


def step(
    state: SimState,
    dt: float,
    params: ModelParams,
    config: SimConfig,
    forcing=None,
) -> SimState:
    """One accepted backward-Euler step; raises ``StepRejected`` on failure."""
    grid = state.profile.grid
    fvals = None
    if forcing is not None:
        fvals = np.asarray(forcing(grid.nodes, state.t + dt), dtype=float)
    v, iters = _newton(state.profile.values, dt, grid.h, params, config, fvals)
    return SimState(
        t=state.t + dt,
        profile=FilmProfile(grid, v),
        step_count=state.step_count + 1,
        last_newton_iters=iters,
    )


def _event_times(t_end: float, every: float) -> np.ndarray:
    if every <= 0 or t_end <= 0:
        return np.array([t_end] if t_end > 0 else [])
    k = int(np.floor(t_end / every + 1e-9))
    times = np.arange(1, k + 1) * every
    if times.size == 0 or times[-1] < t_end - 1e-12 * max(t_end, 1.0):
        times = np.append(times, t_end)
    return times


def _gravity_extras(profile, params, prev_F, prev_v2, dt_sample):
    """nu, F wrap value, modified energy and the v^2 F_t integral; NaN when
    the frame is singular (profile touching r0) or at the first sample."""
    try:
        frame = fnl.build_gravity_frame(profile, params.V, params)
    except SingularMobilityError:
        return float("nan"), float("nan"), float("nan"), float("nan"), None
    mod = fnl.modified_energy(profile, frame, params)
    v2 = profile.values**2
    v2ft = float("nan")
    if prev_F is not None and dt_sample > 0:
        h = profile.grid.h
        Ft = (frame.F[:-1] - prev_F[:-1]) / dt_sample
        v2mid = 0.5 * (v2 + prev_v2)
        v2ft = float(h * np.sum(v2mid * Ft))
    return frame.nu, float(frame.F[-1]), mod, v2ft, frame


def simulate(
    initial: FilmProfile,
    params: ModelParams,
    config: SimConfig,
    sinks: SimSinks | None = None,
    forcing=None,
) -> tuple[DiagnosticsSeries, SimState]:
    """Run the integrator to t_end with adaptive step control.

    The step is halved on Newton failure and grown by 1.2x after five
    consecutive successes (capped at dt_max); steps are clipped so that
    diagnostic and snapshot times are hit exactly.  Returns the diagnostic
    series and the final state.
    """
    state = SimState(t=0.0, profile=initial)
    series = DiagnosticsSeries()
    diag_times = list(_event_times(config.t_end, config.diagnostics_every))
    snap_times = list(_event_times(config.t_end, config.snapshot_every))

    gravity = params.mu == 1
    prev_F = prev_v2 = None
    prev_diag_t = 0.0

    def record(state, dt_sample):
        nonlocal prev_F, prev_v2
        profile = state.profile
        rep = fnl.energy_report(profile, params)
        nu = fw = mod = v2ft = float("nan")
        if gravity:
            nu, fw, mod, v2ft, frame = _gravity_extras(
                profile, params, prev_F, prev_v2, dt_sample
            )
            if frame is not None:
                prev_F, prev_v2 = frame.F, profile.values**2
        series.t.append(state.t)
        series.mass.append(rep.mass)
        series.energy.append(rep.energy_E)
        series.modified_energy.append(mod)
        series.dissipation.append(rep.dissipation)
        series.min_v.append(rep.min_v)
        series.max_v.append(rep.max_v)
        series.newton_iters.append(state.last_newton_iters)
        series.nu.append(nu)
        series.F_wrap.append(fw)
        series.v2_Ft.append(v2ft)
        series.peak_xi.append(peak_position(profile))
        if sinks is not None and sinks.on_diagnostics is not None:
            sinks.on_diagnostics(state.t, rep, series)

    def snapshot(state):
        if sinks is not None and sinks.on_snapshot is not None:
            sinks.on_snapshot(state.t, state.profile)

    record(state, 0.0)
    snapshot(state)
    if config.t_end == 0:
        return series, state

    dt_cur = config.dt
    streak = 0
    eps = 1e-12 * max(config.t_end, 1.0)
    mass_prev = fnl.mass(state.profile)
    while state.t < config.t_end - eps:
        next_stop = min(
            [config.t_end]
            + [tt for tt in diag_times if tt > state.t + eps][:1]
            + [tt for tt in snap_times if tt > state.t + eps][:1]
        )
        dt_try = min(dt_cur, next_stop - state.t)
        try:
            new_state = step(state, dt_try, params, config, forcing)
        except StepRejected:
            streak = 0
            dt_cur *= 0.5
            if dt_cur < config.dt_min:
                raise SolverError(
                    f"time step underflow at t = {state.t:.6g}", state
                )
            continue
        state = new_state
        mass_now = fnl.mass(state.profile)
        series.max_step_mass_drift = max(
            series.max_step_mass_drift,
            abs(mass_now - mass_prev) / max(abs(mass_prev), 1e-300),
        )
        mass_prev = mass_now
        if dt_try >= dt_cur:  # only full steps count toward growth
            streak += 1
            if streak >= 5:
                dt_cur = min(dt_cur * 1.2, config.dt_max)
                streak = 0
        hit = lambda times: times and abs(state.t - times[0]) <= eps
        if hit(diag_times):
            record(state, state.t - prev_diag_t)
            prev_diag_t = state.t
            diag_times.pop(0)
        if hit(snap_times):
            snapshot(state)
            snap_times.pop(0)
    return series, state


# ---------------------------------------------------------------------------
# initial data and wave-speed measurement
# ---------------------------------------------------------------------------

def perturbed_wave_ic(
    wave: FilmProfile, fbar: int, grid: PeriodicGrid | None = None
) -> tuple[FilmProfile, float]:
    """Travelling-wave profile plus a mass-neutral sinusoidal perturbation.

    The amplitude is fixed by the overlap integral eps = -(4/L) int v sin,
    which cancels the quadratic mass contribution exactly on the discrete
    grid for integer ``fbar``, so mass(v0) = mass(wave) to rounding.
    """
    if grid is None:
        grid = wave.grid
    if grid.N != wave.grid.N or abs(grid.L - wave.grid.L) > 1e-12 * grid.L:
        raise ParameterError("perturbed_tw initial data must use the wave's grid")
    L, h = grid.L, grid.h
    s = np.sin(2.0 * np.pi * fbar * grid.nodes / L)
    eps = -(4.0 / L) * h * float(np.sum(wave.values * s))
    return FilmProfile(grid, wave.values + eps * s), eps


def make_initial(kind: str, params: ModelParams, grid: PeriodicGrid, args: dict) -> FilmProfile:
    """Construct initial data.

    kinds: ``constant`` (value), ``minimizer`` (lam, C0; the orbit is
    stretched from its own period onto the grid length), ``perturbed_tw``
    (wave: FilmProfile, fbar: int), ``from_file`` (path).
    """
    if kind == "constant":
        return FilmProfile(grid, np.full(grid.N, float(args["value"])))
    if kind == "minimizer":
        branch = make_branch(float(args["lam"]), float(args["C0"]), params)
        orbit = _OrbitMap(branch)
        stretch = branch.tau / grid.L
        return FilmProfile(grid, orbit.values_at(grid.nodes * stretch))
    if kind == "perturbed_tw":
        profile, _ = perturbed_wave_ic(args["wave"], int(args.get("fbar", 1)), grid)
        return profile
    if kind == "from_file":
        from .csvio import read_profile_csv

        profile = read_profile_csv(args["path"])
        if profile.grid.N != grid.N or abs(profile.grid.L - grid.L) > 1e-9 * grid.L:
            raise ParameterError(
                f"profile file grid ({profile.grid.L}, {profile.grid.N}) does not "
                f"match requested grid ({grid.L}, {grid.N})"
            )
        return profile
    raise ParameterError(f"unknown initial-data kind {kind!r}")


def peak_position(profile: FilmProfile) -> float:
    """Location of the global maximum with quadratic sub-grid refinement."""
    v = profile.values
    h = profile.grid.h
    i = int(np.argmax(v))
    vm, v0, vp = v[(i - 1) % v.size], v[i], v[(i + 1) % v.size]
    denom = vm - 2.0 * v0 + vp
    offset = 0.0 if denom == 0 else 0.5 * h * (vm - vp) / denom
    return float((i * h + offset) % profile.grid.L)


def measure_wave_speed(
    times: np.ndarray, positions: np.ndarray, L: float, fit_fraction: float = 0.25
) -> float:
    """Least-squares speed of a periodically wrapping peak trajectory.

    Unwraps jumps larger than L/2 and fits a line through the final
    ``fit_fraction`` of the samples.
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(positions, dtype=float).copy()
    jumps = np.diff(x)
    shift = np.cumsum(np.where(jumps < -L / 2, L, np.where(jumps > L / 2, -L, 0.0)))
    x[1:] += shift
    n = max(2, int(np.ceil(fit_fraction * t.size)))
    return float(np.polyfit(t[-n:], x[-n:], 1)[0])
