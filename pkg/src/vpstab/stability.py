"""Perturbations of f0, the shifted stability metric, and the experiment driver.

Shift convention as in :mod:`vpstab.functionals`: the metric at shift ``a``
compares ``f(x + a, v)`` with f0, so a cluster displaced by ``b`` is
matched by ``a = b``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import functionals as fn
from . import kernels
from .dynamics import ForceModel, default_softening, evolve
from .ensemble import ParticleEnsemble, sample_f0
from .errors import ConfigError

log = logging.getLogger(__name__)

KINDS = ("none", "boost", "amplitude", "split-bulk", "random-phase")


@dataclass(frozen=True)
class Perturbation:
    """Admissible perturbation of f0 with total mass kept at M.

    ``V`` is the boost velocity (boost) or the separation velocity given to
    the split-off fraction (split-bulk).  ``epsilon`` is the relative
    amplitude of a reweighting ``(1 + epsilon g) f0`` (amplitude,
    random-phase).  ``fraction`` is the split-off mass fraction.
    """

    kind: str = "none"
    V: tuple = (0.0, 0.0, 0.0)
    epsilon: float = 0.0
    fraction: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")
        object.__setattr__(self, "V", tuple(float(c) for c in self.V))
        if len(self.V) != 3:
            raise ConfigError("V must have three components")
        if not 0.0 <= self.epsilon < 0.5:
            raise ConfigError("epsilon must lie in [0, 0.5)")
        if self.kind == "split-bulk" and not 0.0 < self.fraction < 1.0:
            raise ConfigError("split-bulk needs 0 < fraction < 1")


def odd_profile(steady, x, v, direction_x=(1.0, 0.0, 0.0), direction_v=(0.0, 1.0, 0.0)):
    """``g = x.n / R + v.m / v_esc(0)``, odd under ``(x, v) -> (-x, -v)``."""
    v_esc = math.sqrt(2.0 * steady.z0)
    return x @ np.asarray(direction_x) / steady.R + v @ np.asarray(direction_v) / v_esc


def random_phase_profile(steady, x, v, rng, n_modes=4):
    """Normalised sum of plane waves in phase space with random wave vectors and phases."""
    v_esc = math.sqrt(2.0 * steady.z0)
    g = np.zeros(x.shape[0])
    for _ in range(n_modes):
        kx = rng.normal(size=3) * (math.pi / steady.R)
        kv = rng.normal(size=3) * (math.pi / v_esc)
        g += np.cos(x @ kx + v @ kv + rng.uniform(0.0, 2.0 * math.pi))
    return g / math.sqrt(n_modes)


def reweight(ens, g, epsilon):
    """Represent ``c (1 + epsilon g) f`` on the markers of ``ens``.

    Weights become ``M (1 + epsilon g_i) / sum_j (1 + epsilon g_j)`` and the
    carried values are scaled by the same factor, so the total mass is
    unchanged and the markers stay distributed as the old weights.
    """
    factor = 1.0 + epsilon * np.asarray(g, dtype=float)
    if np.any(factor <= 0):
        raise ConfigError("perturbation amplitude makes f negative")
    scale = ens.n / np.sum(factor) * factor
    w = ens.w * scale
    w = w * (ens.mass / np.sum(w))
    return ens.replace(w=w, f=ens.f * scale)


def _split_selection(n, fraction, rng):
    """Choose whole mirror pairs so that the selected markers carry no net momentum."""
    half = n // 2
    n_pairs = int(round(fraction * half))
    if not 0 < n_pairs < half:
        raise ConfigError("split fraction selects no markers or all markers")
    chosen = np.zeros(n, dtype=bool)
    pairs = rng.choice(half, size=n_pairs, replace=False)
    chosen[pairs] = True
    chosen[pairs + half] = True
    return chosen


def apply_perturbation(ens, steady, spec):
    """Perturb an antithetic realisation of f0 (see :func:`perturb`)."""
    rng = np.random.default_rng(spec.seed)
    V = np.asarray(spec.V)
    if spec.kind == "none":
        out = ens
    elif spec.kind == "boost":
        out = ens.boosted(V)
    elif spec.kind == "amplitude":
        out = reweight(ens, odd_profile(steady, ens.x, ens.v), spec.epsilon)
    elif spec.kind == "random-phase":
        out = reweight(ens, random_phase_profile(steady, ens.x, ens.v, rng), spec.epsilon)
    else:
        chosen = _split_selection(ens.n, spec.fraction, rng)
        mu = float(np.sum(ens.w[chosen]) / ens.mass)
        dv = np.where(chosen[:, None], V[None, :], -mu / (1.0 - mu) * V[None, :])
        out = ens.replace(v=ens.v + dv)
    return out.replace(tag=spec.kind)


def perturb(steady, spec, N, seed):
    """Sample f0 with ``N`` markers and apply ``spec``.

    boost adds ``V`` to every velocity.  amplitude reweights by
    ``1 + epsilon g`` with the odd profile of :func:`odd_profile`;
    random-phase uses random plane waves.  split-bulk gives a fraction
    ``mu`` of the markers (whole mirror pairs) velocity ``+V`` and the rest
    ``-mu V / (1 - mu)``, so momentum and centre of mass stay zero.
    """
    if N < 2:
        raise ConfigError("need at least two markers")
    return apply_perturbation(sample_f0(steady, N, seed), steady, spec)


@dataclass
class StabilityMetric:
    shift: np.ndarray
    d_value: float
    field_distance: float
    d0: float
    field0: float
    converged: bool = True
    iterations: int = 0

    @property
    def total(self):
        return self.d_value + self.field_distance

    @property
    def total0(self):
        return self.d0 + self.field0


def bulk_centroid(ens, fraction=0.9, n_candidates=256):
    """Centroid of the smallest candidate ball holding ``fraction`` of the mass.

    Candidate centres are the centre of mass and a deterministic stride of
    marker positions; the radius for each is a weighted distance quantile.
    """
    if ens.n == 0:
        return np.zeros(3)
    stride = max(1, ens.n // n_candidates)
    centres = np.vstack([ens.center_of_mass()[None, :], ens.x[::stride]])
    target = fraction * ens.mass
    best_r, best_c = np.inf, centres[0]
    for c in centres:
        d = np.sqrt(np.sum((ens.x - c) ** 2, axis=1))
        order = np.argsort(d, kind="stable")
        cum = np.cumsum(ens.w[order])
        idx = min(int(np.searchsorted(cum, target * (1 - 1e-12))), ens.n - 1)
        if d[order[idx]] < best_r:
            best_r, best_c = d[order[idx]], c
    inside = np.sum((ens.x - best_c) ** 2, axis=1) <= best_r**2
    return ens.w[inside] @ ens.x[inside] / np.sum(ens.w[inside])


def optimal_shift(ens, steady, a0=None, *, bulk_fraction=0.9, xatol=1e-7, fatol=1e-13,
                  maxiter=4000, extra_starts=()):
    """Shift ``a`` minimising ``field_distance(ens, steady, a)``.

    Only the cross term ``I_f0(a)`` depends on ``a``, so this maximises
    ``sum_i w_i (-U0(|x_i - a|))`` by Nelder-Mead (``xatol`` in units of R).
    The default start is the centroid of the mass bulk.  Returns
    ``(a, converged, iterations)``; on non-convergence the best iterate is
    returned with ``converged=False``.
    """
    R = steady.R
    if a0 is None:
        a0 = bulk_centroid(ens, bulk_fraction)
    starts = [np.asarray(a0, dtype=float)] + [np.asarray(s, dtype=float) for s in extra_starts]

    def objective(y):
        return -fn.cross_integral(ens, steady, y * R)

    start = min(starts, key=lambda s: objective(s / R))
    y0 = start / R
    simplex = np.vstack([y0, y0 + 0.05 * np.eye(3)])
    res = minimize(objective, y0, method="Nelder-Mead",
                   options=dict(xatol=xatol, fatol=fatol, maxiter=maxiter, initial_simplex=simplex))
    a = res.x * R
    if objective(res.x) > objective(y0):
        a = start
    return a, bool(res.success), int(res.nit)


def stability_metric(ens, steady, *, pair=None, reference="realization", a0=None,
                     extra_starts=(), **shift_opts):
    """Metric ``d + field_distance`` at ``a = 0`` and at the optimal shift.

    If the optimiser lands on a worse value than ``a = 0`` the zero shift is
    used, so ``total <= total0`` always.
    """
    if pair is None:
        pair = fn.pair_integral(ens)
    a, ok, nit = optimal_shift(ens, steady, a0, extra_starts=extra_starts, **shift_opts)
    zero = np.zeros(3)
    d0 = fn.d_distance(ens, steady, zero, reference=reference)
    f0 = fn.field_distance(ens, steady, zero, pair=pair)
    d = fn.d_distance(ens, steady, a, reference=reference)
    fd = fn.field_distance(ens, steady, a, pair=pair)
    if d + fd > d0 + f0:
        a, d, fd = zero, d0, f0
    return StabilityMetric(shift=a, d_value=d, field_distance=fd, d0=d0, field0=f0,
                           converged=ok, iterations=nit)


def concentration_profile(ens, radii, *, n_candidates=512, n_refine=8, mean_shift_iters=20):
    """Approximate ``sup_a`` of the mass in ``a + B_r`` for each radius.

    Candidate centres are the centre of mass and a deterministic stride of
    markers; the best few per radius are refined by mean-shift (move the
    centre to the centroid of the ball).  A running maximum over increasing
    radii makes the profile monotone.  Returns values in the input order.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ConfigError("radii must be positive")
    if ens.n == 0:
        return np.zeros_like(radii)
    stride = max(1, ens.n // n_candidates)
    centres = np.vstack([ens.center_of_mass()[None, :], ens.x[::stride]])
    dist2 = np.stack([np.sum((ens.x - c) ** 2, axis=1) for c in centres])

    def mass_in(c, r):
        return float(np.sum(ens.w[np.sum((ens.x - c) ** 2, axis=1) <= r * r]))

    order = np.argsort(radii)
    best = np.zeros(radii.size)
    for idx in order:
        r = radii[idx]
        masses = (dist2 <= r * r) @ ens.w
        top = np.argsort(-masses, kind="stable")[:n_refine]
        value = float(masses[top[0]])
        for t in top:
            c = centres[t]
            for _ in range(mean_shift_iters):
                inside = np.sum((ens.x - c) ** 2, axis=1) <= r * r
                if not inside.any():
                    break
                c_new = ens.w[inside] @ ens.x[inside] / np.sum(ens.w[inside])
                if np.allclose(c_new, c, rtol=0.0, atol=1e-12 * r):
                    break
                c = c_new
                value = max(value, mass_in(c, r))
        best[idx] = value
    best[order] = np.maximum.accumulate(best[order])
    return best


def two_cluster(steady_a, steady_b, N_a, N_b, separation, seed):
    """Two independent steady clusters whose centres are ``separation`` apart along x."""
    a = sample_f0(steady_a, N_a, seed)
    b = sample_f0(steady_b, N_b, seed + 1)
    offset = np.array([separation, 0.0, 0.0])
    return ParticleEnsemble(x=np.vstack([a.x, b.x + offset]), v=np.vstack([a.v, b.v]),
                            w=np.concatenate([a.w, b.w]), f=np.concatenate([a.f, b.f]),
                            seed=seed, tag="two-cluster")


METRIC_COLUMNS = fn.REPORT_CSV_HEADER + ["d0", "field0", "total0", "total_opt",
                                         "identity_residual", "shift_converged"]


@dataclass
class ExperimentResult:
    output_dir: Path
    rows: list
    initial_total: float
    sup_total: float
    concentration: list
    halted: bool = False
    message: str = ""
    files: list = field(default_factory=list)


def _metric_monitor(steady, cfg_shift, reference, state):
    """Monitor for :func:`vpstab.dynamics.evolve` producing one metrics row."""

    def monitor(ens, quantities):
        pair = fn.pair_integral(ens)
        starts = [state["a"]] if state.get("a") is not None else []
        m = stability_metric(ens, steady, pair=pair, reference=reference, extra_starts=starts,
                             **cfg_shift)
        state["a"] = m.shift
        rep = fn.energy_casimir(ens, steady, shift=m.shift, d_reference=reference, pair=pair)
        ident = fn.dd_identity_check(ens, steady, m.shift, pair=pair)["residual"]
        row = dict(zip(fn.REPORT_CSV_HEADER, rep.csv_row()))
        row.update(d0=m.d0, field0=m.field0, total0=m.total0, total_opt=m.total,
                   identity_residual=ident, shift_converged=int(m.converged))
        state["rows"].append(row)
        return {"total_opt": m.total, "total0": m.total0}

    return monitor


def stability_experiment(config, *, output_dir=None, steady=None, manifest=None, progress=None):
    """Build f0, perturb, evolve, and record the metric time series.

    Writes ``metrics.csv``, ``concentration.csv`` and (optionally) snapshots
    into the output directory.  ``manifest`` is a
    :class:`vpstab.manifest.RunManifest` that is updated with every file
    written.  Partial metrics are written even if the run halts.
    """
    from .steady import build_steady
    from .casimir import CasimirFunction

    out = Path(output_dir if output_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if steady is None:
        steady = build_steady(CasimirFunction.polytropic(config.steady.k), config.steady.M)
    p = config.perturbation
    spec = Perturbation(kind=p.kind, V=tuple(p.V), epsilon=p.epsilon, fraction=p.fraction,
                        seed=config.seed if p.seed is None else p.seed)
    ens = perturb(steady, spec, config.N, config.seed)
    integ = config.integrator
    eps = default_softening(steady.R, config.N) if integ.softening is None else integ.softening
    model = ForceModel(method=integ.method, softening=eps, theta=integ.theta)
    dt = integ.dt * steady.t_dyn
    cadence = max(1, int(round(config.cadence_tdyn / integ.dt)))
    snap_every = (max(1, int(round(config.snapshot_every_tdyn / integ.dt)))
                  if config.snapshot_every_tdyn else None)
    shift_opts = dict(bulk_fraction=config.shift.bulk_fraction, xatol=config.shift.xatol,
                      fatol=config.shift.fatol, maxiter=config.shift.maxiter)
    state = {"rows": [], "a": None}
    monitor = _metric_monitor(steady, shift_opts, config.d_reference, state)
    meta = dict(seed=config.seed, softening=eps, dt=dt, N=config.N)
    files = []

    def write_outputs(final):
        path = out / "metrics.csv"
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for row in state["rows"]:
                writer.writerow({k: _fmt(v) for k, v in row.items()})
        radii = np.asarray(config.concentration_radii) * steady.R
        prof = concentration_profile(final, radii)
        cpath = out / "concentration.csv"
        with cpath.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["r", "r_over_R", "mass"])
            for r, rr, m in zip(radii, config.concentration_radii, prof):
                writer.writerow([_fmt(r), _fmt(rr), _fmt(m)])
        return [path, cpath], prof

    try:
        traj = evolve(ens, config.horizon_tdyn * steady.t_dyn, dt, model, cadence=cadence,
                      casimir=steady.casimir, monitors=[monitor],
                      snapshot_dir=(out / "snapshots") if snap_every else None,
                      snapshot_every=snap_every, manifest=meta, progress=progress)
    except Exception:
        write_outputs(ens)
        raise
    written, prof = write_outputs(traj.final)
    files.extend(written)
    files.extend(traj.snapshots)
    totals = [r["total_opt"] for r in state["rows"]]
    if manifest is not None:
        for f in files:
            manifest.declare(f)
    return ExperimentResult(output_dir=out, rows=state["rows"], initial_total=totals[0],
                            sup_total=max(totals), concentration=prof.tolist(),
                            halted=traj.halted, message=traj.message, files=files)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
