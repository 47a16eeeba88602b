"""Energy-Casimir functional, its pieces, and the stability distances.

Every functional is available on both representations of a state: radial
quadrature for a :class:`~vpstab.steady.SteadyState` and marker sums for a
:class:`~vpstab.ensemble.ParticleEnsemble`.

Shift convention: the shifted state is ``f^a(x, v) = f(x + a, v)``, so a
marker at ``x_i`` in ``f`` sits at ``x_i - a`` in ``f^a``.  A copy of f0
translated by ``b`` is therefore matched by ``a = b``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.special import roots_legendre

from . import kernels
from .ensemble import ParticleEnsemble
from .errors import ConfigError
from .steady import FOUR_PI, SteadyState, f0_eval

REPORT_CSV_HEADER = ["t", "a_x", "a_y", "a_z", "e_kin", "e_pot", "casimir", "h_c", "p", "d",
                     "field_dist"]


@dataclass
class FunctionalReport:
    e_kin: float
    e_pot: float
    casimir_value: float
    h_c: float
    p_value: float
    d_value: float = 0.0
    field_distance: float = 0.0
    shift: tuple = (0.0, 0.0, 0.0)
    t: float = 0.0
    norms: dict = field(default_factory=dict)

    def csv_row(self):
        a = tuple(float(c) for c in self.shift)
        return [self.t, *a, self.e_kin, self.e_pot, self.casimir_value, self.h_c, self.p_value,
                self.d_value, self.field_distance]

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RadialDensity:
    """Spherical density profile ``rho(r)`` supported in ``[0, R]``."""

    rho: Callable
    R: float


def kinetic_energy(ens):
    if ens.n == 0:
        return 0.0
    return 0.5 * float(np.sum(ens.w * np.sum(ens.v * ens.v, axis=1)))


def potential_energy_particles(ens, softening=0.0, method="direct", theta=0.5):
    """``-1/2 sum_{i != j} w_i w_j / sqrt(|x_i - x_j|^2 + eps^2)``."""
    if softening < 0:
        raise ConfigError("softening must be non-negative")
    if ens.n < 2:
        return 0.0
    if method == "direct":
        return -kernels.direct_pair_sum(ens.x, ens.w, softening)
    if method == "tree":
        _, phi = kernels.tree_forces(ens.x, ens.w, theta=theta, softening=softening)
        return 0.5 * float(np.sum(ens.w * phi))
    raise ConfigError(f"unknown method {method!r}")


def softening_extrapolated_potential(ens, h, method="direct"):
    """Extrapolate the softened potential energy to zero softening.

    Evaluates at ``eps in (2h, h, h/2)`` and takes the constant term of the
    interpolating quadratic in eps.  Returns ``(value, {eps: W(eps)})``.
    """
    eps = np.array([2.0 * h, h, 0.5 * h])
    vals = np.array([potential_energy_particles(ens, e, method=method) for e in eps])
    coef = np.polyfit(eps, vals, 2)
    return float(coef[-1]), dict(zip(eps.tolist(), vals.tolist()))


@dataclass(frozen=True)
class PotentialEnergyReport:
    field_form: float
    double_integral: float
    mass: float
    discrepancy: float
    flagged: bool


def _nested_radial(rho, R):
    """Integrate m' = 4 pi r^2 rho, w' = 4 pi r rho m, g' = m^2 / r^2 on [0, R]."""

    def rhs(r, y):
        d = float(rho(r))
        m = y[0]
        return [FOUR_PI * r * r * d, FOUR_PI * r * d * m, (m / r) ** 2 if r > 0 else 0.0]

    sol = solve_ivp(rhs, (0.0, R), [0.0, 0.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-300)
    return sol.y[:, -1]


def potential_energy_radial(source, tol=1e-6):
    """Potential energy of a spherical profile in both of its representations.

    The field form ``-(1/8 pi) int |grad U|^2`` and the pair form
    ``-1/2 int int rho rho' / |x - y|`` (reduced to nested radial integrals)
    are computed independently; the report flags a relative discrepancy
    above ``tol``.  ``source`` is a SteadyState (field from its tabulated
    potential gradient) or a :class:`RadialDensity` (field from enclosed mass).
    """
    if isinstance(source, SteadyState):
        rho = lambda r: float(source.density(r))
        R = source.R
        mass, w_int, _ = _nested_radial(rho, R)
        grad2, _ = quad(lambda r: r * r * float(source.dpotential(r)) ** 2, 0.0, R,
                        epsabs=0.0, epsrel=1e-12, limit=500)
        field_form = -0.5 * grad2 - source.M**2 / (2.0 * R)
    else:
        R = source.R
        mass, w_int, g_int = _nested_radial(source.rho, R)
        field_form = -0.5 * g_int - mass**2 / (2.0 * R)
    double = -w_int
    scale = max(abs(field_form), abs(double))
    disc = abs(field_form - double) / scale if scale > 0 else 0.0
    return PotentialEnergyReport(field_form=field_form, double_integral=double, mass=mass,
                                 discrepancy=disc, flagged=disc > tol)


def casimir_functional(state, casimir=None):
    """``int int Q(f)``; on markers ``sum w_i Q(f_i)/f_i``."""
    if isinstance(state, SteadyState):
        return state.casimir_value
    if casimir is None:
        raise ConfigError("a Casimir function is needed for a marker ensemble")
    if state.n == 0:
        return 0.0
    if np.any(state.f <= 0):
        raise ConfigError("ensemble has markers with non-positive carried f")
    return float(np.sum(state.w * casimir.q_over_f(state.f)))


def _shifted_radius(ens, shift):
    x = ens.x if shift is None else ens.x - np.asarray(shift, dtype=float)
    return np.sqrt(np.sum(x * x, axis=1))


def _marker_terms(ens, steady, shift):
    """Per-marker ``Q(f)/f + E - E0`` with ``E`` taken in the shifted frame."""
    E = 0.5 * np.sum(ens.v * ens.v, axis=1) + steady.potential(_shifted_radius(ens, shift))
    return steady.casimir.q_over_f(ens.f) + E - steady.E0


def steady_reference_constant(steady):
    """``int int [Q(f0) + (E - E0) f0]`` by radial quadrature."""
    return (steady.casimir_value + steady.e_kin + steady.rho_u_integral - steady.E0 * steady.M)


def realization_reference(ens, steady):
    """Marker estimate of :func:`steady_reference_constant` on ``ens`` itself."""
    return float(np.sum(ens.w * _marker_terms(ens, steady, None)))


def d_distance(ens, steady, shift=None, reference="quadrature"):
    """``d(f^a, f0) = int int [Q(f) - Q(f0) + (E - E0)(f - f0)]``.

    Terms integrated against f are marker sums.  The terms integrated
    against f0 come either from radial quadrature (``"quadrature"``) or from
    the unperturbed realisation the ensemble was derived from
    (``"realization"``), which cancels the initial sampling noise.
    """
    if reference == "quadrature":
        const = steady_reference_constant(steady)
    elif reference == "realization":
        if ens.reference_sum is None:
            raise ConfigError("ensemble carries no realisation reference")
        const = ens.reference_sum
    else:
        raise ConfigError(f"unknown reference {reference!r}")
    return float(np.sum(ens.w * _marker_terms(ens, steady, shift))) - const


def d_noise_floor(ens, steady, shift=None):
    """One-sigma Monte Carlo error of the quadrature-referenced d.

    Mirror pairs in an antithetic realisation are not independent, so the
    effective sample size is taken as N/2.
    """
    g = _marker_terms(ens, steady, shift)
    M = ens.mass
    mean = np.sum(ens.w * g) / M
    var = np.sum(ens.w * (g - mean) ** 2) / M
    return M * math.sqrt(var / max(ens.n / 2.0, 1.0))


def pair_integral(ens):
    """``sum_{i != j} w_i w_j / |x_i - x_j|``, the marker estimate of
    ``int int rho rho' / |x - y|``."""
    return 2.0 * kernels.direct_pair_sum(ens.x, ens.w, 0.0)


def cross_integral(ens, steady, shift=None):
    """``int rho_{f^a} (-U0)`` as a marker sum."""
    return float(np.sum(ens.w * -steady.potential(_shifted_radius(ens, shift))))


def field_distance(ens, steady, shift=None, pair=None):
    """``(1/8 pi) ||grad U_{f^a} - grad U0||^2 = (I_ff + I_00 - 2 I_f0)/2``.

    ``I_ff`` is the marker pair integral (pass ``pair`` to reuse one),
    ``I_00 = -2 E_pot(f0)`` comes from quadrature and ``I_f0`` is evaluated
    exactly from the tabulated steady potential.
    """
    I_ff = pair_integral(ens) if pair is None else pair
    I_00 = -2.0 * steady.e_pot
    return 0.5 * (I_ff + I_00) - cross_integral(ens, steady, shift)


def dd_identity_check(ens, steady, shift=None, pair=None):
    """Residual of ``H(f^a) - H(f0) = d(f^a, f0) - field_distance``.

    Left side from the marker energy-Casimir functional and the quadrature
    value of H(f0); right side from the two distances.  Returns a dict with
    both sides and the residual relative to ``max(1, |H(f0)|)``.
    """
    I_ff = pair_integral(ens) if pair is None else pair
    h_f = (casimir_functional(ens, steady.casimir) + kinetic_energy(ens) - 0.5 * I_ff)
    lhs = h_f - steady.h_M
    d = d_distance(ens, steady, shift, reference="quadrature")
    fd = field_distance(ens, steady, shift, pair=I_ff)
    rhs = d - fd
    return dict(lhs=lhs, rhs=rhs, d=d, field_distance=fd,
                residual=abs(lhs - rhs) / max(1.0, abs(steady.h_M)))


def energy_casimir(state, steady=None, *, shift=None, softening=0.0, d_reference="quadrature",
                   pair=None, t=None):
    """Assemble a :class:`FunctionalReport` for a steady state or an ensemble.

    For an ensemble, ``steady`` enables the distances to f0.  The reported
    potential energy uses ``softening``; the distances always use the
    unsoftened pair integral.
    """
    if isinstance(state, SteadyState):
        return FunctionalReport(e_kin=state.e_kin, e_pot=state.e_pot,
                                casimir_value=state.casimir_value, h_c=state.h_M,
                                p_value=state.casimir_value + state.e_kin)
    casimir = steady.casimir if steady is not None else None
    kin = kinetic_energy(state)
    cas = casimir_functional(state, casimir)
    if softening == 0.0:
        I_ff = pair_integral(state) if pair is None else pair
        pot = -0.5 * I_ff
    else:
        pot = potential_energy_particles(state, softening)
        I_ff = pair
    rep = FunctionalReport(e_kin=kin, e_pot=pot, casimir_value=cas, h_c=cas + kin + pot,
                           p_value=cas + kin, t=state.t if t is None else t,
                           shift=tuple(np.zeros(3) if shift is None else np.asarray(shift, float)))
    if steady is not None:
        if I_ff is None:
            I_ff = pair_integral(state)
        rep.d_value = d_distance(state, steady, shift, reference=d_reference)
        rep.field_distance = field_distance(state, steady, shift, pair=I_ff)
    return rep


def lp_norm(state, p, n_per_shell=64):
    """L^p norm of the spatial density.

    Exact radial quadrature for steady states and :class:`RadialDensity`;
    for an ensemble a shell-binned density about the centre of mass is used
    (equal-count shells, diagnostic quality only).
    """
    if p < 1:
        raise ConfigError("p must be >= 1")
    if isinstance(state, (SteadyState, RadialDensity)):
        rho = state.density if isinstance(state, SteadyState) else state.rho
        val, _ = quad(lambda r: FOUR_PI * r * r * float(rho(r)) ** p, 0.0, state.R,
                      epsabs=0.0, epsrel=1e-12, limit=500)
        return val ** (1.0 / p)
    if not isinstance(state, ParticleEnsemble):
        raise ConfigError("unsupported state type")
    r = np.sqrt(np.sum((state.x - state.center_of_mass()) ** 2, axis=1))
    order = np.argsort(r)
    r, w = r[order], state.w[order]
    edges_idx = np.arange(0, state.n + 1, n_per_shell)
    if edges_idx[-1] != state.n:
        edges_idx = np.append(edges_idx, state.n)
    total = 0.0
    r_in = 0.0
    for a, b in zip(edges_idx[:-1], edges_idx[1:]):
        r_out = r[b - 1] if b < state.n else r[-1] * (1 + 1e-12)
        vol = FOUR_PI / 3.0 * (r_out**3 - r_in**3)
        if vol > 0:
            total += vol * (np.sum(w[a:b]) / vol) ** p
        r_in = r_out
    return total ** (1.0 / p)


def holder_exponent(n1):
    """theta with ``1/(6/5) = (1 - theta) + theta / (1 + 1/n1)``."""
    q = 1.0 + 1.0 / n1
    return (1.0 - 5.0 / 6.0) / (1.0 - 1.0 / q)


def e0_identity(steady, n_nodes=192):
    """``(1/M) int int (Q'(f0) + E) f0`` by tensor Gauss-Legendre quadrature.

    Independent of the radial moment formulas: f0 is evaluated pointwise
    through :func:`f0_eval`.  Substitutions ``r = R(1 - s^2)`` and
    ``v = v_esc(r)(1 - u^2)`` soften the edge behaviour of f0.  Returns
    ``(E0_estimate, mass_estimate)``.
    """
    t, wt = roots_legendre(n_nodes)
    s = 0.5 * (t + 1.0)
    ws = 0.5 * wt
    R = steady.R
    r = R * (1.0 - s * s)
    jr = 2.0 * R * s * ws
    z = steady.z(r)
    v_esc = np.sqrt(2.0 * np.maximum(z, 0.0))
    v = v_esc[:, None] * (1.0 - s[None, :] ** 2)
    jv = 2.0 * v_esc[:, None] * s[None, :] * ws[None, :]
    xs = np.zeros(v.shape + (3,))
    xs[..., 0] = r[:, None]
    vs = np.zeros(v.shape + (3,))
    vs[..., 0] = v
    f0 = f0_eval(steady, xs, vs)
    E = 0.5 * v * v + steady.potential(r)[:, None]
    meas = 16.0 * math.pi**2 * (r * r * jr)[:, None] * v * v * jv
    mass = float(np.sum(meas * f0))
    total = float(np.sum(meas * (steady.casimir.dQ(f0) + E) * f0))
    return total / steady.M, mass


def exterior_potential_residual(steady, r_min_factor=1.5):
    """``max |U(r) + M/r| / (M/r)`` over tabulated ``r >= r_min_factor R``.

    ``U`` is taken both from the table and from the shell theorem applied
    to the quadrature mass of ``rho0``; the larger residual is returned.
    """
    m_quad, _ = quad(lambda r: FOUR_PI * r * r * float(steady.density(r)), 0.0, steady.R,
                     epsabs=0.0, epsrel=1e-13, limit=500)
    r = steady.r[steady.r >= r_min_factor * steady.R]
    kepler = steady.M / r
    shell = np.abs(-m_quad / r + kepler) / kepler
    table = np.abs(steady.U0[steady.r >= r_min_factor * steady.R] + kepler) / kepler
    point = np.abs(steady.potential(r) + kepler) / kepler
    return float(max(shell.max(), table.max(), point.max()))


def density_residual(steady):
    """Largest nodewise relative gap between tabulated rho0 and h_phi(U0)."""
    from .steady import h_phi_eval

    h = h_phi_eval(steady.casimir, steady.E0, steady.U0)
    rho = steady.rho0
    pos = h > 0
    rel = np.abs(rho[pos] - h[pos]) / h[pos]
    zero_gap = float(np.max(np.abs(rho[~pos]))) if np.any(~pos) else 0.0
    return float(max(rel.max() if rel.size else 0.0, zero_gap))


def virial_residual(steady):
    return abs(2.0 * steady.e_kin + steady.e_pot) / abs(steady.e_pot)
