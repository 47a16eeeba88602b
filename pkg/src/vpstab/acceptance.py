"""The acceptance suite: ten property- and oracle-based criteria.

Each criterion is a function returning a :class:`CriterionResult`.  Suites
group criteria by module so the command line can run a subset.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import dynamics as dyn
from . import functionals as fn
from . import stability as stab
from .casimir import CasimirFunction
from .ensemble import sample_f0
from .steady import build_steady, emden_fowler_shoot, scaling_exponents

K_VALUES = (0.5, 1.0, 1.25)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        facts = ", ".join(f"{k}={_short(v)}" for k, v in self.details.items())
        return f"[{status}] {self.number:2d}. {self.name} ({self.runtime_s:.1f} s): {facts}"


def _short(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.3g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


@dataclass(frozen=True)
class Criterion:
    number: int
    name: str
    suite: str
    anchor: str
    run: Callable


def _polytrope(k, M=1.0, z0_seed=1.0):
    return build_steady(CasimirFunction.polytropic(k), M, z0_seed)


def steady_correctness():
    """Virial, rho0 = h_phi(U0) nodewise and the exterior potential, per k."""
    details = {}
    ok = True
    for k in K_VALUES:
        t0 = time.perf_counter()
        s = _polytrope(k)
        build_s = time.perf_counter() - t0
        vir = fn.virial_residual(s)
        dens = fn.density_residual(s)
        ext = fn.exterior_potential_residual(s)
        check_s = time.perf_counter() - t0
        ok &= vir <= 1e-3 and dens <= 1e-6 and ext <= 1e-8 and check_s <= 10.0
        details[f"k={k}"] = [vir, dens, ext, round(check_s, 2)]
    details["columns"] = "virial, rho-h_phi, exterior, seconds"
    return ok, details


def e0_identity():
    """E0 against the phase-space average of Q'(f0) + E."""
    details = {}
    ok = True
    for k in K_VALUES:
        s = _polytrope(k)
        est, _ = fn.e0_identity(s)
        rel = abs(s.E0 - est) / abs(s.E0)
        ok &= rel <= 1e-4
        details[f"k={k}"] = rel
    return ok, details


def scaling_laws():
    """Independent shots at z0 = alpha z_ref reproduce the scaling family."""
    details = {}
    ok = True
    alphas = np.array([0.5, 1.0, 2.0, 4.0])
    for k in K_VALUES:
        gamma, mexp = scaling_exponents(k)
        sols = [emden_fowler_shoot(k, a) for a in alphas]
        slope = np.polyfit(np.log(alphas), np.log([s.M for s in sols]), 1)[0]
        ratio = sols[2].R / sols[1].R
        e_slope = abs(slope - (3.0 - 2.0 * k) / 4.0)
        e_ratio = abs(ratio / 2.0 ** (-gamma) - 1.0)
        ok &= e_slope <= 1e-6 and e_ratio <= 1e-6
        details[f"k={k}"] = [e_slope, e_ratio]
    return ok, details


def h_m_scaling():
    """h_M < 0 and its power law in M."""
    details = {}
    ok = True
    masses = np.array([0.5, 1.0, 2.0, 4.0])
    for k in K_VALUES:
        # a different shooting seed per mass keeps the fit off a single shot
        h = np.array([_polytrope(k, M, 0.7 + 0.45 * i).h_M for i, M in enumerate(masses)])
        negative = bool(np.all(h < 0))
        slope = np.polyfit(np.log(masses), np.log(-h), 1)[0]
        target = (7.0 - 2.0 * k) / (3.0 - 2.0 * k)
        rel = abs(slope / target - 1.0)
        ok &= negative and rel <= 0.01 and slope > 1.0
        details[f"k={k}"] = [slope, target, negative]
    return ok, details


def epot_representations(N=20_000, seed=0):
    """Radial field form vs nested double integral vs softened particle sums."""
    details = {}
    ok = True
    for k in K_VALUES:
        s = _polytrope(k)
        rep = fn.potential_energy_radial(s)
        ens = sample_f0(s, N, seed)
        h = dyn.default_softening(s.R, N)
        W, _ = fn.softening_extrapolated_potential(ens, h)
        rel_particle = abs(W / rep.field_form - 1.0)
        ok &= rep.discrepancy <= 1e-6 and rel_particle <= 5e-3
        details[f"k={k}"] = [rep.discrepancy, rel_particle]
    return ok, details


def dd_identity(N=100_000, seed=0):
    """H(f) - H(f0) = d - field distance for boost and amplitude data."""
    s = _polytrope(1.0)
    base = sample_f0(s, N, seed)
    specs = {"boost": stab.Perturbation("boost", V=(0.1, 0.0, 0.0)),
             "amplitude": stab.Perturbation("amplitude", epsilon=0.05)}
    details = {}
    ok = True
    for name, spec in specs.items():
        ens = stab.apply_perturbation(base, s, spec)
        res = fn.dd_identity_check(ens, s)["residual"]
        ok &= res <= 1e-3
        details[name] = res
    return ok, details


CONSERVATION_K = 0.5
CONSERVATION_SOFTENING_R = 0.05


def conservation(N=10_000, seed=0, horizon=10.0, steps_per_tdyn=200, cadence=20):
    """Energy-Casimir and momentum drift of an evolved steady realisation."""
    s = _polytrope(CONSERVATION_K)
    ens = sample_f0(s, N, seed)
    model = dyn.ForceModel("direct", CONSERVATION_SOFTENING_R * s.R)
    t0 = time.perf_counter()
    traj = dyn.evolve(ens, horizon * s.t_dyn, s.t_dyn / steps_per_tdyn, model, cadence=cadence,
                      casimir=s.casimir)
    wall = time.perf_counter() - t0
    h_drift = dyn.relative_drift(traj.series("h_c"))
    P = np.array([r.quantities.momentum for r in traj.records])
    p_drift = float(np.max(np.abs(P - P[0])))
    ok = h_drift <= 1e-3 and p_drift <= 1e-10 and wall <= 600 and not traj.halted
    return ok, dict(k=CONSERVATION_K, h_c_drift=h_drift, momentum_drift=p_drift,
                    wall_s=round(wall, 1))


SHIFT_K = 1.0
SHIFT_M = 0.3


def shift_necessity(N=4096, seed=0, V=0.1, horizon=10.0, steps_per_tdyn=200, cadence=20,
                    record=None):
    """Boosted f0: the unshifted field distance saturates, the shifted metric stays small."""
    from .config import parse_config

    s = _polytrope(SHIFT_K, SHIFT_M)
    cfg = parse_config(dict(
        steady=dict(k=SHIFT_K, M=SHIFT_M),
        perturbation=dict(kind="boost", V=[V, 0.0, 0.0]),
        integrator=dict(dt=1.0 / steps_per_tdyn, method="direct"),
        N=N, seed=seed, horizon_tdyn=horizon, cadence_tdyn=cadence / steps_per_tdyn,
        output_dir=str(record) if record else "unused"))
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        res = stab.stability_experiment(cfg, output_dir=record or tmp, steady=s)
    rows = res.rows
    I00 = -2.0 * s.e_pot
    far = [(r["t"], r["field0"]) for r in rows if V * r["t"] >= 4.0 * s.R]
    ratios = [f0 / (I00 - s.M**2 / (V * t)) for t, f0 in far]
    reach = max(ratios) if ratios else float("nan")
    totals = np.array([r["total_opt"] for r in rows])
    growth = float(totals.max() / totals[0])
    ok = bool(ratios) and reach >= 0.9 and growth <= 3.0
    return ok, dict(far_samples=len(far), best_ratio=reach, shifted_growth=growth,
                    initial_total=float(totals[0]))


def d_metric(n_random=100, N=2000, seed=0):
    """d >= 0, d(f0, f0) at the noise floor, and quadratic behaviour for k = 1."""
    rng = np.random.default_rng(seed)
    states = {k: _polytrope(k) for k in K_VALUES}
    worst = math.inf
    kinds = ("boost", "amplitude", "split-bulk", "random-phase")
    for i in range(n_random):
        k = K_VALUES[i % len(K_VALUES)]
        s = states[k]
        kind = kinds[i % len(kinds)]
        v_scale = math.sqrt(s.M / s.R)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        spec = stab.Perturbation(kind, V=tuple(rng.uniform(0.0, 0.5) * v_scale * direction),
                                 epsilon=float(rng.uniform(1e-3, 0.4)),
                                 fraction=float(rng.uniform(0.05, 0.5)), seed=int(rng.integers(2**31)))
        ens = stab.perturb(s, spec, N, int(rng.integers(2**31)))
        d = fn.d_distance(ens, s, reference="realization")
        worst = min(worst, d / abs(ens.reference_sum))
    s1 = states[1.0]
    base = sample_f0(s1, 20_000, seed)
    d_self = fn.d_distance(base, s1, reference="quadrature")
    floor = fn.d_noise_floor(base, s1)
    ratios = []
    for eps in (0.08, 0.04, 0.02):
        ens = stab.apply_perturbation(base, s1, stab.Perturbation("amplitude", epsilon=eps))
        ratios.append(fn.d_distance(ens, s1, reference="realization") / eps**2)
    spread = max(ratios) / min(ratios) - 1.0
    ok = worst >= -1e-12 and abs(d_self) <= 3.0 * floor and min(ratios) > 0 and spread <= 0.2
    return ok, dict(min_rel_d=worst, d_self=d_self, noise_floor=floor, ratios=ratios,
                    spread=spread)


def concentration(seed=0, N=20_000, mu=0.2):
    """Monotone profile, full mass beyond the support, and the two-cluster plateau."""
    s = _polytrope(1.0)
    ens = sample_f0(s, N, seed)
    radii = s.R * np.array([0.05, 0.1, 0.25, 0.5, 0.75, 1.0, 1.01, 1.5, 2.0])
    prof = stab.concentration_profile(ens, radii)
    monotone = bool(np.all(np.diff(prof) >= 0))
    full = bool(np.all(np.isclose(prof[radii >= s.R], s.M, rtol=1e-12, atol=0.0)))
    big = _polytrope(1.0, (1.0 - mu) * s.M)
    small = _polytrope(1.0, mu * s.M)
    sep = 4.0 * (big.R + small.R)
    pair = stab.two_cluster(big, small, int((1 - mu) * N), int(mu * N), sep, seed)
    plateau_r = big.R * np.array([1.05, 1.5, 2.0, 3.0])
    plat = stab.concentration_profile(pair, plateau_r)
    plateau_err = float(np.max(np.abs(plat / ((1.0 - mu) * s.M) - 1.0)))
    ok = monotone and full and plateau_err <= 0.01
    return ok, dict(monotone=monotone, full_mass=full, plateau_rel_err=plateau_err)


CRITERIA = (
    Criterion(1, "steady-state correctness", "steady",
              "virial identity, rho0 = h_phi(U0), exterior Kepler potential", steady_correctness),
    Criterion(2, "cut-off energy identity", "steady",
              "E0 as the f0-average of Q'(f0) + E (Euler-Lagrange form of f0)", e0_identity),
    Criterion(3, "scaling laws", "steady",
              "z_a(r) = a z(a^gamma r), gamma = (k+1/2)/2, mass exponent (3-2k)/4", scaling_laws),
    Criterion(4, "h_M negativity and scaling", "steady",
              "-inf < h_M < 0 and the power law of h_M in M", h_m_scaling),
    Criterion(5, "potential energy representations", "functionals",
              "field form vs pair double integral of E_pot", epot_representations),
    Criterion(6, "energy-Casimir expansion identity", "functionals",
              "H(f) - H(f0) = d(f, f0) - field distance", dd_identity),
    Criterion(7, "conservation under evolution", "dynamics",
              "H_C and momentum conserved along the flow", conservation),
    Criterion(8, "shift necessity", "stability",
              "boosted f0 travels away from f0 at a linear rate", shift_necessity),
    Criterion(9, "d-metric properties", "functionals",
              "d(f, f0) >= 0 and quadratic in the perturbation size", d_metric),
    Criterion(10, "concentration diagnostic", "stability",
              "best-ball mass profile and the dichotomy plateau", concentration),
)

SUITES = ("steady", "functionals", "dynamics", "stability", "all")


def select(suite="all", numbers=None):
    chosen = [c for c in CRITERIA if suite == "all" or c.suite == suite]
    if numbers:
        chosen = [c for c in chosen if c.number in set(numbers)]
    return chosen


def run_criterion(criterion):
    t0 = time.perf_counter()
    try:
        passed, details = criterion.run()
    except Exception as exc:  # a crash is a failure, reported with its message
        passed, details = False, {"error": f"{type(exc).__name__}: {exc}"}
    return CriterionResult(criterion.number, criterion.name, bool(passed), details,
                           time.perf_counter() - t0)


def run_suite(suite="all", numbers=None, echo=None):
    results = []
    for c in select(suite, numbers):
        res = run_criterion(c)
        if echo is not None:
            echo(res.line())
        results.append(res)
    return results
