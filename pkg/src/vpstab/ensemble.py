"""Weighted phase-space markers and Monte Carlo realisations of f0."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.stats import beta as beta_dist

from .casimir import qprime_inverse
from .errors import ConfigError, NumericFailure
from .steady import f0_eval

SNAPSHOT_HEADER = "id,w,x,y,z,vx,vy,vz,f_init"


@dataclass(frozen=True)
class ParticleEnsemble:
    """N markers carrying mass weights and the transported value of f.

    ``f`` is the value of the distribution function at each marker at the
    time the ensemble was created; it never changes under the evolution.
    ``reference_sum`` is, when known, the marker estimate of
    ``int int [Q(f0) + (E - E0) f0]`` taken on the unperturbed realisation the
    ensemble was derived from (used by the realisation-referenced distance).
    """

    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    f: np.ndarray
    t: float = 0.0
    softening: float = 0.0
    seed: int | None = None
    tag: str = ""
    reference_sum: float | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("x", "v", "w", "f"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.w.shape[0]
        if self.x.shape != (n, 3) or self.v.shape != (n, 3) or self.f.shape != (n,):
            raise ConfigError("inconsistent ensemble array shapes")
        if n and np.any(self.w <= 0):
            raise ConfigError("all marker weights must be positive")

    @property
    def n(self):
        return int(self.w.shape[0])

    @property
    def mass(self):
        return float(np.sum(self.w))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def translated(self, b):
        return self.replace(x=self.x + np.asarray(b, dtype=float))

    def boosted(self, V):
        return self.replace(v=self.v + np.asarray(V, dtype=float))

    def momentum(self):
        return self.w @ self.v

    def center_of_mass(self):
        return self.w @ self.x / self.mass

    def angular_momentum(self):
        return self.w @ np.cross(self.x, self.v)

    def L_squared(self):
        """Per-marker |x|^2 |v|^2 - (x.v)^2."""
        xv = np.sum(self.x * self.v, axis=1)
        return np.sum(self.x**2, axis=1) * np.sum(self.v**2, axis=1) - xv**2


def empty_ensemble():
    return ParticleEnsemble(x=np.zeros((0, 3)), v=np.zeros((0, 3)), w=np.zeros(0), f=np.zeros(0))


def _isotropic(rng, n):
    mu = 2.0 * rng.random(n) - 1.0
    ang = 2.0 * np.pi * rng.random(n)
    s = np.sqrt(1.0 - mu * mu)
    return np.column_stack([s * np.cos(ang), s * np.sin(ang), mu])


def _envelope(steady, n_r=1025, n_v=513):
    """Upper bound of r^2 v^2 phi(E0 - z(r) + ...) over the proposal box."""
    R = steady.R
    v_top = np.sqrt(2.0 * steady.z0)
    r = np.linspace(0.0, R, n_r)
    z = steady.z(r)
    if steady.casimir.is_polytropic:
        k = steady.k
        amp = steady.casimir.amplitude
        # max over v of v^2 (z - v^2/2)^k sits at v^2/2 = z/(k+1)
        per_r = r**2 * amp * 2.0 * np.maximum(z, 0) ** (k + 1) * k**k / (k + 1) ** (k + 1)
        return 1.01 * per_r.max(), v_top
    v = np.linspace(0.0, v_top, n_v)
    s = z[:, None] - 0.5 * v[None, :] ** 2
    dens = r[:, None] ** 2 * v[None, :] ** 2 * qprime_inverse(steady.casimir, s)
    return 1.25 * dens.max(), v_top


def _mirror(x, vel, N):
    parts_x = [x, -x]
    parts_v = [vel, -vel]
    if N % 2:
        parts_x.append(np.zeros((1, 3)))
        parts_v.append(np.zeros((1, 3)))
    return np.concatenate(parts_x), np.concatenate(parts_v)


def _radius_of_mass(steady, u):
    """Invert the enclosed mass ``m(r) = -r^2 z'(r)`` at fractions ``u``."""
    sol = steady.solution
    m = -sol.r**2 * sol.dz
    m[0] = 0.0
    m = np.maximum.accumulate(m)
    keep = np.concatenate([[True], np.diff(m) > 0])
    r = PchipInterpolator(m[keep] / steady.M, sol.r[keep])(u)
    target = u * steady.M
    for _ in range(4):
        dm = 4.0 * np.pi * r * r * steady.density(r)
        step = np.where(dm > 0, (-r * r * sol.dz_at(r) - target) / np.where(dm > 0, dm, 1.0), 0.0)
        r = np.clip(r - step, 0.0, steady.R)
    return r


def _stratified_polytrope(steady, n, rng):
    """Latin-hypercube draw in (enclosed mass, kinetic fraction).

    For a polytrope, ``t = v^2 / (2 z(r))`` is Beta(3/2, k+1) independent of r,
    so both marginals are available by exact inversion.
    """
    u = (np.arange(n) + rng.random(n)) / n
    t_u = (rng.permutation(n) + rng.random(n)) / n
    r = _radius_of_mass(steady, u)
    t = beta_dist.ppf(t_u, 1.5, steady.k + 1.0)
    return r, np.sqrt(2.0 * np.maximum(steady.z(r), 0.0) * t)


def _rejection(steady, n_draw, rng, min_efficiency):
    bound, v_top = _envelope(steady)
    R = steady.R
    rs, vs = [], []
    have = 0
    proposed = 0
    accepted = 0
    while have < n_draw:
        m = max(4096, int(2 * (n_draw - have) / max(accepted / proposed if proposed else 0.05, 1e-3)))
        m = min(m, 4_000_000)
        r = R * rng.random(m)
        v = v_top * rng.random(m)
        u = rng.random(m)
        dens = r**2 * v**2 * qprime_inverse(steady.casimir, steady.z(r) - 0.5 * v**2)
        ratio_max = float(dens.max() / bound) if m else 0.0
        if ratio_max > 1.0:
            raise NumericFailure("rejection envelope violated", ratio=ratio_max, bound=bound)
        ok = u * bound < dens
        proposed += m
        accepted += int(ok.sum())
        if proposed >= 50_000 and accepted / proposed < min_efficiency:
            raise NumericFailure("rejection efficiency below floor", efficiency=accepted / proposed,
                                 bound=bound, box=(R, v_top))
        rs.append(r[ok])
        vs.append(v[ok])
        have += int(ok.sum())
    return np.concatenate(rs)[:n_draw], np.concatenate(vs)[:n_draw]


def sample_f0(steady, N, seed, *, antithetic=True, method="auto", min_efficiency=1e-3, tag="f0"):
    """Draw N markers distributed as f0/M with isotropic angles.

    ``method="rejection"`` proposes uniformly on the box
    ``[0, R] x [0, sqrt(2 z0)]`` in (r, |v|) against an upper envelope of
    ``r^2 v^2 f0``.  ``method="stratified"`` (polytropes only) inverts the
    radial mass profile and the velocity marginal on a Latin hypercube, which
    removes most of the sampling noise in radially averaged quantities.
    ``"auto"`` picks stratified when available.  With ``antithetic`` each
    draw is paired with its mirror ``(-x, -v)``, giving exactly zero momentum
    and centre of mass (odd N adds one marker at the origin at rest).  Each
    marker carries weight M/N and its value of f0.
    """
    if N < 1:
        raise ConfigError("N must be at least 1")
    if method == "auto":
        method = "stratified" if steady.casimir.is_polytropic else "rejection"
    if method == "stratified" and not steady.casimir.is_polytropic:
        raise ConfigError("stratified sampling needs a polytropic Casimir")
    if method not in ("stratified", "rejection"):
        raise ConfigError(f"unknown sampling method {method!r}")
    rng = np.random.default_rng(seed)
    n_draw = N // 2 if antithetic else N
    if method == "stratified":
        r, v = _stratified_polytrope(steady, n_draw, rng)
    else:
        r, v = _rejection(steady, n_draw, rng, min_efficiency)
    x = r[:, None] * _isotropic(rng, n_draw)
    vel = v[:, None] * _isotropic(rng, n_draw)
    if antithetic:
        x, vel = _mirror(x, vel, N)
    f = f0_eval(steady, x, vel)
    w = np.full(N, steady.M / N)
    ens = ParticleEnsemble(x=x, v=vel, w=w, f=f, seed=seed, tag=tag)
    from .functionals import realization_reference

    return ens.replace(reference_sum=realization_reference(ens, steady))


def write_snapshot(ens, path, manifest=None):
    """Write markers as CSV and, optionally, a JSON manifest next to it."""
    path = Path(path)
    ids = np.arange(ens.n, dtype=float)
    table = np.column_stack([ids, ens.w, ens.x, ens.v, ens.f])
    fmt = ["%d"] + ["%.17g"] * 8
    np.savetxt(path, table, delimiter=",", header=SNAPSHOT_HEADER, comments="", fmt=fmt)
    if manifest is not None:
        meta = dict(manifest)
        meta.setdefault("t", ens.t)
        meta.setdefault("softening", ens.softening)
        meta.setdefault("seed", ens.seed)
        meta.setdefault("tag", ens.tag)
        if ens.reference_sum is not None:
            meta.setdefault("reference_sum", ens.reference_sum)
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_snapshot(path):
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
    if header != SNAPSHOT_HEADER:
        raise ConfigError(f"unexpected snapshot header {header!r}")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta = {}
    side = path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
    return ParticleEnsemble(x=table[:, 2:5], v=table[:, 5:8], w=table[:, 1], f=table[:, 8],
                            t=float(meta.get("t", 0.0)), softening=float(meta.get("softening", 0.0)),
                            seed=meta.get("seed"), tag=meta.get("tag", ""),
                            reference_sum=meta.get("reference_sum"))
