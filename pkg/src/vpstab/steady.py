"""Isotropic steady states f0 = (Q')^{-1}(E0 - E) of the gravitational
Vlasov-Poisson system.

In terms of z(r) = E0 - U0(r) the Poisson equation becomes the singular
radial ODE ``(r^2 z')' / r^2 = -4 pi rho(z)``.  For the polytropic Casimir
``rho(z) = c_k z^(k+3/2) / (4 pi)`` and the solution family is closed under
``z_a(r) = a z(a^gamma r)`` with ``gamma = (k + 1/2)/2``, which is how states
of prescribed mass are produced.  Units: G = 1 in ``Laplace U = 4 pi rho``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import BPoly, CubicSpline
from scipy.optimize import brentq
from scipy.special import beta

from .casimir import CasimirFunction, check_k, qprime_inverse
from .errors import ConfigError, NumericFailure

FOUR_PI = 4.0 * math.pi
VEL_FACTOR = 4.0 * math.pi * math.sqrt(2.0)  # 4 pi v^2 dv = 4 pi sqrt(2) sqrt(E-U) dE

STEADY_CSV_HEADER = "r,U0,dU0,rho0"


def polytrope_constant(k):
    """Constant c_k with ``4 pi h_phi(u) = c_k (E0 - u)_+^(k+3/2)``.

    With ``phi(E) = A (E0 - E)_+^k``, ``A = (k/(k+1))^k``, the substitution
    ``E = u + t (E0 - u)`` reduces the velocity integral to ``B(3/2, k+1)``.
    """
    k = check_k(k)
    amp = (k / (k + 1.0)) ** k
    return 16.0 * math.pi**2 * math.sqrt(2.0) * amp * beta(1.5, k + 1.0)


def h_phi_eval(casimir, E0, u, epsrel=1e-11):
    """Spatial density of an energy-dependent f0 at potential value ``u``.

    Computes ``4 pi sqrt(2) int_u^E0 phi(E) sqrt(E - u) dE`` by adaptive
    quadrature after substituting ``E - u = (E0 - u) s^2``; this removes the
    square-root endpoint.  Works for any Casimir via :func:`qprime_inverse`.
    """
    u_arr = np.asarray(u, dtype=float)
    flat = np.atleast_1d(u_arr).ravel()
    out = np.zeros_like(flat)
    for i, ui in enumerate(flat):
        width = E0 - ui
        if width <= 0:
            continue

        def integrand(s, width=width):
            return qprime_inverse(casimir, width * (1.0 - s * s)) * s * s

        val, err = quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=epsrel, limit=200)
        if not np.isfinite(val) or err > 1e3 * epsrel * abs(val) + 1e-300:
            raise NumericFailure("h_phi quadrature did not converge", interval=(ui, E0), error=err)
        out[i] = VEL_FACTOR * 2.0 * width**1.5 * val
    out = out.reshape(u_arr.shape)
    return out if out.ndim else float(out)


class PolytropeMoments:
    """Velocity moments of ``A (E0-E)_+^k`` as functions of z = E0 - U."""

    def __init__(self, k):
        self.k = k
        amp = (k / (k + 1.0)) ** k
        self.n = k + 1.5
        self.rho_coef = polytrope_constant(k) / FOUR_PI
        self.kin_coef = VEL_FACTOR * amp * beta(2.5, k + 1.0)
        self.cas_coef = VEL_FACTOR * amp ** (1.0 + 1.0 / k) * beta(1.5, k + 2.0)

    def rho(self, z):
        return self.rho_coef * np.maximum(z, 0.0) ** self.n

    def kin(self, z):
        return self.kin_coef * np.maximum(z, 0.0) ** (self.k + 2.5)

    def cas(self, z):
        return self.cas_coef * np.maximum(z, 0.0) ** (self.k + 2.5)

    def source(self, z):
        return FOUR_PI * self.rho(z)


class GeneralMoments:
    """Tabulated velocity moments for a non-polytropic Casimir.

    Each moment ``int_0^z g(s) (z-s)^p ds`` is computed by algebraic-weight
    quadrature on a geometric z grid and interpolated in log-log space.
    """

    def __init__(self, casimir, z_max, n=240):
        self.casimir = casimir
        self.z_max = float(z_max)
        zs = np.geomspace(self.z_max * 1e-7, self.z_max, n)
        phi = lambda s: qprime_inverse(casimir, s)
        qphi = lambda s: float(casimir.Q(qprime_inverse(casimir, s)))
        self._tables = {}
        for name, g, p in (("rho", phi, 0.5), ("kin", phi, 1.5), ("cas", qphi, 0.5)):
            vals = np.array([_alg_quad(g, z, p) for z in zs]) * VEL_FACTOR
            if np.any(vals <= 0):
                raise NumericFailure("non-positive velocity moment", moment=name)
            spline = CubicSpline(np.log(zs), np.log(vals))
            self._tables[name] = (zs[0], spline)

    def _eval(self, name, z):
        z = np.asarray(z, dtype=float)
        z_lo, spline = self._tables[name]
        if np.any(z > self.z_max * (1 + 1e-12)):
            raise NumericFailure("moment table exceeded", z=float(np.max(z)), z_max=self.z_max)
        zc = np.clip(z, z_lo, self.z_max)
        val = np.exp(spline(np.log(zc)))
        # power-law continuation below the first node
        slope = spline(np.log(z_lo), 1)
        low = np.exp(spline(np.log(z_lo))) * (np.maximum(z, 0.0) / z_lo) ** slope
        return np.where(z <= 0, 0.0, np.where(z < z_lo, low, val))

    def rho(self, z):
        return self._eval("rho", z)

    def kin(self, z):
        return self._eval("kin", z)

    def cas(self, z):
        return self._eval("cas", z)

    def source(self, z):
        return FOUR_PI * self.rho(z)


def _alg_quad(g, z, p):
    val, _ = quad(g, 0.0, z, weight="alg", wvar=(0.0, p), epsabs=0.0, epsrel=1e-10, limit=200)
    return val


@dataclass(frozen=True)
class RadialSolution:
    """Solution of the radial ODE on [0, R] up to its first zero R.

    ``r``, ``z``, ``dz`` are node values; between nodes z is represented by
    a quintic Hermite interpolant built from (z, z', z'').
    """

    r: np.ndarray
    z: np.ndarray
    dz: np.ndarray
    R: float
    M: float
    k: float | None
    z0: float
    source: Callable = field(repr=False, compare=False)

    def __post_init__(self):
        r, z, dz = self.r, self.z, self.dz
        d2z = np.empty_like(z)
        d2z[0] = -self.source(z[0]) / 3.0
        d2z[1:] = -self.source(z[1:]) - 2.0 * dz[1:] / r[1:]
        poly = BPoly.from_derivatives(r, np.column_stack([z, dz, d2z]))
        object.__setattr__(self, "_poly", poly)
        object.__setattr__(self, "_dpoly", poly.derivative())

    def z_at(self, r):
        r = np.clip(np.asarray(r, dtype=float), 0.0, self.R)
        return self._poly(r)

    def dz_at(self, r):
        r = np.clip(np.asarray(r, dtype=float), 0.0, self.R)
        return self._dpoly(r)


def _shoot(source, z0, k, *, rtol=1e-12, n_grid=2049, r_max=None):
    if not z0 > 0:
        raise ConfigError(f"central value z0 must be positive, got {z0}")
    s0 = float(source(z0))
    if not s0 > 0:
        raise NumericFailure("source term vanishes at the centre", z0=z0)
    scale = math.sqrt(z0 / s0)
    r_s = 1e-4 * scale
    y0 = [z0 - s0 * r_s**2 / 6.0, -s0 * r_s / 3.0]
    r_max = 200.0 * scale if r_max is None else r_max

    def rhs(r, y):
        return [y[1], -float(source(y[0])) - 2.0 * y[1] / r]

    def crossing(r, y):
        return y[0]

    crossing.terminal = True
    crossing.direction = -1

    sol = solve_ivp(rhs, (r_s, r_max), y0, method="DOP853", rtol=rtol,
                    atol=[1e-3 * rtol * z0, 1e-3 * rtol * z0 / scale],
                    dense_output=True, events=crossing)
    if sol.status == -1:
        raise NumericFailure("radial integration failed", message=sol.message,
                             last_r=float(sol.t[-1]) if sol.t.size else r_s)
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        raise NumericFailure("no zero of z before r_max; exponent outside the admissible range?",
                             r_max=r_max, z_end=float(sol.y[0, -1]))

    r_event = float(sol.t_events[0][0])
    lo = float(sol.t[-2]) if sol.t.size >= 2 else r_s
    zfun = lambda r: float(sol.sol(r)[0])
    hi = r_event * (1.0 + 1e-9)
    if zfun(hi) > 0:
        hi = r_event * (1.0 + 1e-6)
    R = brentq(zfun, lo, hi, xtol=1e-15 * r_event, rtol=4 * np.finfo(float).eps, maxiter=200)

    r = np.linspace(0.0, R, n_grid)
    z = np.empty_like(r)
    dz = np.empty_like(r)
    near = r < r_s
    z[near] = z0 - s0 * r[near] ** 2 / 6.0
    dz[near] = -s0 * r[near] / 3.0
    y = sol.sol(r[~near])
    z[~near] = y[0]
    dz[~near] = y[1]
    z[-1] = 0.0
    M = -R * R * dz[-1]
    if not M > 0:
        raise NumericFailure("non-positive mass from shooting", R=R, dz_R=dz[-1])
    return RadialSolution(r=r, z=z, dz=dz, R=R, M=M, k=k, z0=z0, source=source)


def emden_fowler_shoot(k, z0, *, rtol=1e-12, n_grid=2049, r_max=None):
    """Integrate ``(r^2 z')'/r^2 = -c_k z_+^(k+3/2)`` from z(0)=z0, z'(0)=0.

    A second-order series is used on a tiny ball around r=0 to step off the
    singular point.  The first zero R is refined by Brent's method on the
    dense output and ``M = -R^2 z'(R)`` is reported.
    """
    k = check_k(k)
    moments = PolytropeMoments(k)
    return _shoot(moments.source, float(z0), k, rtol=rtol, n_grid=n_grid, r_max=r_max)


def scaling_exponents(k):
    """(gamma, mass exponent) of the family z_a(r) = a z(a^gamma r)."""
    gamma = (k + 0.5) / 2.0
    return gamma, k + 1.5 - 3.0 * gamma


def scale_to_mass(sol, M_target):
    """Member of the scaling family of ``sol`` whose mass is ``M_target``."""
    if sol.k is None:
        raise ValueError("scaling family only exists for polytropic solutions")
    if not M_target > 0:
        raise ConfigError(f"target mass must be positive, got {M_target}")
    gamma, mexp = scaling_exponents(sol.k)
    alpha = (M_target / sol.M) ** (1.0 / mexp)
    if alpha == 1.0:
        return sol
    shrink = alpha ** (-gamma)
    r = sol.r * shrink
    z = sol.z * alpha
    dz = sol.dz * alpha ** (1.0 + gamma)
    R = sol.R * shrink
    M = -R * R * dz[-1]
    return RadialSolution(r=r, z=z, dz=dz, R=R, M=M, k=sol.k, z0=sol.z0 * alpha, source=sol.source)


@dataclass(frozen=True)
class SteadyState:
    """A constructed minimiser: radial tables plus its energy bookkeeping.

    ``r``, ``U0``, ``dU0``, ``rho0`` tabulate the potential, its radial
    derivative and the density on ``[0, r_max]`` (``r_max >= 3R``).  Point
    evaluation inside the support goes through the Hermite interpolant of the
    radial solution; outside it uses the exact exterior ``U0 = -M/r``.
    """

    casimir: CasimirFunction
    M: float
    E0: float
    R: float
    solution: RadialSolution = field(repr=False)
    r: np.ndarray = field(repr=False)
    U0: np.ndarray = field(repr=False)
    dU0: np.ndarray = field(repr=False)
    rho0: np.ndarray = field(repr=False)
    e_kin: float = 0.0
    e_pot: float = 0.0
    casimir_value: float = 0.0
    h_M: float = 0.0
    rho_u_integral: float = 0.0
    moments: object = field(default=None, repr=False, compare=False)

    @property
    def k(self):
        return self.casimir.k

    @property
    def z0(self):
        return self.solution.z0

    @property
    def t_dyn(self):
        return 2.0 * math.pi * math.sqrt(self.R**3 / self.M)

    @property
    def r_max(self):
        return float(self.r[-1])

    def z(self, r):
        """E0 - U0(r); negative outside the support."""
        r = np.asarray(r, dtype=float)
        inside = r < self.R
        safe = np.where(inside, self.R, np.maximum(r, self.R))
        return np.where(inside, self.solution.z_at(r), self.M / safe - self.M / self.R)

    def potential(self, r):
        return self.E0 - self.z(r)

    def dpotential(self, r):
        r = np.asarray(r, dtype=float)
        inside = r < self.R
        safe = np.maximum(r, self.R)
        return np.where(inside, -self.solution.dz_at(r), self.M / safe**2)

    def density(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < self.R, self.moments.rho(self.z(r)), 0.0)

    def phi(self, E):
        """Energy profile f0 = (Q')^{-1}(E0 - E)."""
        return qprime_inverse(self.casimir, self.E0 - np.asarray(E, dtype=float))

    def to_files(self, json_path, csv_path):
        header = {
            "kind": self.casimir.kind,
            "k": self.k,
            "M": self.M,
            "E0": self.E0,
            "R": self.R,
            "h_M": self.h_M,
            "z0": self.z0,
            "e_kin": self.e_kin,
            "e_pot": self.e_pot,
            "casimir": self.casimir_value,
            "n_interior": int(self.solution.r.size),
        }
        Path(json_path).write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
        table = np.column_stack([self.r, self.U0, self.dU0, self.rho0])
        np.savetxt(csv_path, table, delimiter=",", header=STEADY_CSV_HEADER, comments="", fmt="%.17g")


def _energies(sol, moments, M):
    R = sol.R
    E0 = -M / R
    opts = dict(epsabs=0.0, epsrel=1e-12, limit=500)
    zf = lambda r: float(sol.z_at(r))
    kin, _ = quad(lambda r: FOUR_PI * r * r * float(moments.kin(zf(r))), 0.0, R, **opts)
    cas, _ = quad(lambda r: FOUR_PI * r * r * float(moments.cas(zf(r))), 0.0, R, **opts)
    grad2, _ = quad(lambda r: r * r * float(sol.dz_at(r)) ** 2, 0.0, R, **opts)
    rho_u, _ = quad(lambda r: FOUR_PI * r * r * float(moments.rho(zf(r))) * (E0 - zf(r)), 0.0, R,
                    **opts)
    e_pot = -0.5 * grad2 - M * M / (2.0 * R)
    return dict(e_kin=kin, e_pot=e_pot, casimir_value=cas, h_M=cas + kin + e_pot,
                rho_u_integral=rho_u)


def _assemble(casimir, sol, moments, *, n_exterior=1025, r_max_factor=3.0):
    M, R = sol.M, sol.R
    if r_max_factor < 3.0:
        raise ConfigError("r_max_factor must be at least 3")
    E0 = -M / R
    r_ext = np.linspace(R, r_max_factor * R, n_exterior)[1:]
    r = np.concatenate([sol.r, r_ext])
    U0 = np.concatenate([E0 - sol.z, -M / r_ext])
    dU0 = np.concatenate([-sol.dz, M / r_ext**2])
    rho0 = np.concatenate([moments.rho(sol.z), np.zeros_like(r_ext)])
    return SteadyState(casimir=casimir, M=M, E0=E0, R=R, solution=sol, r=r, U0=U0, dU0=dU0,
                       rho0=rho0, moments=moments, **_energies(sol, moments, M))


def build_steady(casimir, M, z0_seed=1.0, *, n_grid=2049, n_exterior=1025, r_max_factor=3.0,
                 rtol=1e-12):
    """Steady state of mass ``M`` for the given Casimir.

    Polytropes are shot once from ``z0_seed`` and rescaled; a general Q is
    shot repeatedly with the central value bracketed until the mass matches.
    ``E0 = -M/R`` follows from matching z(R)=0 to the exterior ``-M/r``.
    """
    if not M > 0:
        raise ConfigError(f"mass must be positive, got {M}")
    if casimir.is_polytropic:
        sol = emden_fowler_shoot(casimir.k, z0_seed, rtol=rtol, n_grid=n_grid)
        sol = scale_to_mass(sol, M)
        moments = PolytropeMoments(casimir.k)
        moments_source = moments.source
        if sol.source is not moments_source:
            sol = RadialSolution(r=sol.r, z=sol.z, dz=sol.dz, R=sol.R, M=sol.M, k=sol.k,
                                 z0=sol.z0, source=moments_source)
    else:
        sol, moments = _shoot_general_to_mass(casimir, M, z0_seed, rtol=rtol, n_grid=n_grid)
    return _assemble(casimir, sol, moments, n_exterior=n_exterior, r_max_factor=r_max_factor)


def _shoot_general_to_mass(casimir, M, z0_seed, *, rtol, n_grid):
    # masses grow with the central value; bracket geometrically, then Brent
    z_hi_cap = z0_seed * 1e4
    moments = GeneralMoments(casimir, z_hi_cap)

    def log_mass_defect(z0):
        return math.log(_shoot(moments.source, z0, None, rtol=rtol, n_grid=257).M / M)

    lo = hi = z0_seed
    f_lo = f_hi = log_mass_defect(z0_seed)
    for _ in range(60):
        if f_lo <= 0 <= f_hi:
            break
        if f_hi < 0:
            lo, f_lo = hi, f_hi
            hi *= 2.0
            if hi > z_hi_cap:
                raise NumericFailure("mass bracket exceeds moment table", z_hi=hi)
            f_hi = log_mass_defect(hi)
        else:
            hi, f_hi = lo, f_lo
            lo *= 0.5
            f_lo = log_mass_defect(lo)
    else:
        raise NumericFailure("could not bracket target mass", bracket=(lo, hi))
    z0 = brentq(log_mass_defect, lo, hi, xtol=1e-14 * hi, rtol=1e-14) if lo != hi else lo
    sol = _shoot(moments.source, z0, None, rtol=rtol, n_grid=n_grid)
    return sol, moments


def steady_from_table(casimir, header, table):
    """Rebuild a :class:`SteadyState` from its exported JSON header and CSV table."""
    if not casimir.is_polytropic:
        raise ValueError("only polytropic steady states can be reloaded")
    r, U0, dU0, rho0 = (np.asarray(table[:, i], dtype=float) for i in range(4))
    n_int = int(header["n_interior"])
    M, E0, R = float(header["M"]), float(header["E0"]), float(header["R"])
    moments = PolytropeMoments(casimir.k)
    sol = RadialSolution(r=r[:n_int], z=E0 - U0[:n_int], dz=-dU0[:n_int], R=R, M=M, k=casimir.k,
                         z0=float(header["z0"]), source=moments.source)
    return SteadyState(casimir=casimir, M=M, E0=E0, R=R, solution=sol, r=r, U0=U0, dU0=dU0,
                       rho0=rho0, moments=moments, **_energies(sol, moments, M))


def load_steady(json_path, csv_path):
    header = json.loads(Path(json_path).read_text())
    table = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    return steady_from_table(CasimirFunction.polytropic(header["k"]), header, table)


def f0_eval(steady, x, v):
    """Distribution function of the steady state at phase-space points.

    ``x`` and ``v`` have shape (..., 3).  Zero wherever ``E >= E0``.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    E = 0.5 * np.sum(v * v, axis=-1) + steady.potential(r)
    return qprime_inverse(steady.casimir, steady.E0 - E)
