"""Particle transport of f along the characteristics of the Vlasov equation.

Markers move under the self-consistent softened gravitational field (direct
summation or Barnes-Hut) or, as an oracle mode, under the frozen field of a
steady state.  The carried f-values never change.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .ensemble import ParticleEnsemble, write_snapshot
from .errors import ConfigError

log = logging.getLogger(__name__)

METHODS = ("direct", "tree", "frozen")


def default_softening(R, N):
    """``0.02 R (1e4 / N)^{1/3}``."""
    return 0.02 * R * (1e4 / N) ** (1.0 / 3.0)


@dataclass(frozen=True)
class ForceModel:
    """How accelerations are computed.

    ``frozen`` ignores the markers' own field and uses ``-grad U0`` of
    ``steady`` instead.
    """

    method: str = "direct"
    softening: float = 0.0
    theta: float = 0.5
    steady: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown force method {self.method!r}")
        if self.softening < 0:
            raise ConfigError("softening must be non-negative")
        if self.method == "frozen" and self.steady is None:
            raise ConfigError("frozen-field mode needs a steady state")

    def __call__(self, x, w):
        return accelerations(x, w, self)

    def potentials(self, x, w):
        """Per-marker potential consistent with the accelerations."""
        if self.method == "frozen":
            return self.steady.potential(np.sqrt(np.sum(x * x, axis=1)))
        if self.method == "tree":
            return kernels.tree_forces(x, w, self.theta, self.softening)[1]
        return kernels.direct_potentials(x, w, self.softening)


def accelerations(x, w, model):
    """Accelerations ``-sum_j w_j (x_i - x_j) / (|x_i - x_j|^2 + eps^2)^{3/2}``."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] == 0:
        return np.zeros((0, 3))
    if model.method == "frozen":
        r = np.sqrt(np.sum(x * x, axis=1))
        g = model.steady.dpotential(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 0, g / np.where(r > 0, r, 1.0), 0.0)
        return -scale[:, None] * x
    if x.shape[0] == 1:
        return np.zeros((1, 3))
    if model.method == "tree":
        return kernels.tree_forces(x, w, model.theta, model.softening)[0]
    return kernels.direct_accelerations(x, w, model.softening)


def leapfrog_step(ens, dt, model, acc=None):
    """One kick-drift-kick step; returns ``(new_ensemble, new_accelerations)``.

    ``acc`` are the accelerations at the current positions, if known.
    A negative ``dt`` integrates backwards, which undoes a forward step.
    """
    if dt == 0:
        raise ConfigError("dt must be nonzero")
    if acc is None:
        acc = model(ens.x, ens.w)
    v_half = ens.v + 0.5 * dt * acc
    x_new = ens.x + dt * v_half
    acc_new = model(x_new, ens.w)
    v_new = v_half + 0.5 * dt * acc_new
    return ens.replace(x=x_new, v=v_new, t=ens.t + dt, softening=model.softening), acc_new


@dataclass
class ConservedQuantities:
    mass: float
    momentum: np.ndarray
    angular_momentum: np.ndarray
    e_kin: float
    e_pot: float
    total_energy: float
    casimir: float
    h_c: float
    energy_mean: float
    energy_std: float
    L2_mean: float
    L2_max: float

    def as_dict(self):
        out = asdict(self)
        out["momentum"] = [float(c) for c in self.momentum]
        out["angular_momentum"] = [float(c) for c in self.angular_momentum]
        return out


def conserved_quantities(ens, model, casimir=None):
    """Mass, momenta, energies and per-marker E and L^2 summaries.

    The potential energy and particle energies use the same field as
    ``model`` (softened self-gravity, or the frozen steady potential).
    """
    e_kin = 0.5 * float(np.sum(ens.w * np.sum(ens.v**2, axis=1)))
    phi = model.potentials(ens.x, ens.w) if ens.n else np.zeros(0)
    if model.method == "frozen":
        e_pot = float(np.sum(ens.w * phi))
    else:
        e_pot = 0.5 * float(np.sum(ens.w * phi))
    cas = float(np.sum(ens.w * casimir.q_over_f(ens.f))) if casimir is not None else 0.0
    E = 0.5 * np.sum(ens.v**2, axis=1) + phi
    L2 = ens.L_squared()
    return ConservedQuantities(
        mass=ens.mass, momentum=ens.momentum(), angular_momentum=ens.angular_momentum(),
        e_kin=e_kin, e_pot=e_pot, total_energy=e_kin + e_pot, casimir=cas,
        h_c=cas + e_kin + e_pot,
        energy_mean=float(np.average(E, weights=ens.w)) if ens.n else 0.0,
        energy_std=float(np.sqrt(np.average((E - np.average(E, weights=ens.w)) ** 2,
                                            weights=ens.w))) if ens.n else 0.0,
        L2_mean=float(np.average(L2, weights=ens.w)) if ens.n else 0.0,
        L2_max=float(L2.max()) if ens.n else 0.0)


@dataclass
class DiagnosticsRecord:
    """One time sample of the monitored scalars.

    ``extra`` holds whatever the monitors return, e.g. the stability metric
    with its shift.
    """

    step: int
    t: float
    quantities: ConservedQuantities
    extra: dict = field(default_factory=dict)

    def flat(self):
        q = self.quantities
        row = dict(step=self.step, t=self.t, mass=q.mass, e_kin=q.e_kin, e_pot=q.e_pot,
                   total_energy=q.total_energy, casimir=q.casimir, h_c=q.h_c)
        for name, vec in (("p", q.momentum), ("L", q.angular_momentum)):
            for axis, val in zip("xyz", vec):
                row[f"{name}_{axis}"] = float(val)
        row.update(self.extra)
        return row


@dataclass
class Trajectory:
    records: list
    final: ParticleEnsemble
    halted: bool = False
    message: str = ""
    snapshots: list = field(default_factory=list)

    def series(self, name):
        return np.array([r.flat()[name] for r in self.records])


def evolve(ens, T, dt, model, *, cadence=1, casimir=None,
           monitors: Sequence[Callable] = (), snapshot_dir=None, snapshot_every=None,
           manifest=None, progress=None):
    """Advance ``ens`` by ``round(T / dt)`` leapfrog steps.

    A :class:`DiagnosticsRecord` is emitted at step 0 and every ``cadence``
    steps (and at the last step).  Each monitor is called as
    ``monitor(ens, quantities)`` and returns a dict merged into the record.
    Snapshots are written every ``snapshot_every`` steps when
    ``snapshot_dir`` is given.  A non-finite state halts the run; the last
    finite ensemble is returned (and written, if snapshots are on).
    """
    if dt <= 0 or T < 0:
        raise ConfigError("need dt > 0 and T >= 0")
    if cadence < 1:
        raise ConfigError("cadence must be at least one step")
    n_steps = int(round(T / dt))
    snap_dir = Path(snapshot_dir) if snapshot_dir is not None else None
    if snap_dir is not None:
        snap_dir.mkdir(parents=True, exist_ok=True)
    traj = Trajectory(records=[], final=ens)

    def record(step, state):
        q = conserved_quantities(state, model, casimir)
        extra = {}
        for mon in monitors:
            extra.update(mon(state, q))
        traj.records.append(DiagnosticsRecord(step=step, t=state.t, quantities=q, extra=extra))

    def snapshot(step, state):
        if snap_dir is None:
            return
        path = snap_dir / f"snapshot_{step:06d}.csv"
        meta = dict(manifest or {})
        meta.update(step=step, dt=dt, method=model.method, theta=model.theta)
        write_snapshot(state, path, meta)
        traj.snapshots.append(path)

    record(0, ens)
    if snapshot_every:
        snapshot(0, ens)
    acc = model(ens.x, ens.w)
    state = ens
    for step in range(1, n_steps + 1):
        new, acc = leapfrog_step(state, dt, model, acc)
        if not (np.all(np.isfinite(new.x)) and np.all(np.isfinite(new.v))):
            traj.halted = True
            traj.message = f"non-finite state at step {step}, t={new.t:.6g}"
            log.error(traj.message)
            snapshot(step - 1, state)
            break
        state = new
        if step % cadence == 0 or step == n_steps:
            record(step, state)
            if progress is not None:
                progress(step, n_steps)
        if snapshot_every and (step % snapshot_every == 0 or step == n_steps):
            snapshot(step, state)
    traj.final = state
    return traj


def relative_drift(values):
    """``max |q(t) - q(0)| / |q(0)|`` over a series."""
    values = np.asarray(values, dtype=float)
    ref = abs(values[0])
    if ref == 0:
        return float(np.max(np.abs(values - values[0])))
    return float(np.max(np.abs(values - values[0])) / ref)


def kepler_period(a, m_total):
    return 2.0 * math.pi * math.sqrt(a**3 / m_total)
