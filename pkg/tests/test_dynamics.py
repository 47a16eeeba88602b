import math

import numpy as np
import pytest

from vpstab import dynamics as dyn
from vpstab import kernels
from vpstab.ensemble import ParticleEnsemble, sample_f0
from vpstab.errors import ConfigError


def _ens(x, v, w):
    x = np.atleast_2d(np.asarray(x, float))
    return ParticleEnsemble(x=x, v=np.atleast_2d(np.asarray(v, float)), w=np.asarray(w, float),
                            f=np.ones(len(w)))


def _relative_errors(a, b):
    return np.linalg.norm(a - b, axis=1) / np.linalg.norm(b, axis=1)


def test_pair_forces_equal_and_opposite():
    acc = dyn.accelerations(np.array([[0.0, 0, 0], [2.0, 0, 0]]), np.array([1.0, 1.0]),
                            dyn.ForceModel())
    assert np.array_equal(acc[0], -acc[1])
    assert acc[0, 0] == pytest.approx(0.25, rel=1e-15)


def test_softened_pair_force_closed_form():
    eps = 0.3
    acc = dyn.accelerations(np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.array([2.0, 1.0]),
                            dyn.ForceModel(softening=eps))
    assert acc[0, 0] == pytest.approx(1.0 / (1 + eps**2) ** 1.5, rel=1e-14)
    assert acc[1, 0] == pytest.approx(-2.0 / (1 + eps**2) ** 1.5, rel=1e-14)


def test_monopole_limit(steady_k1, ens_k1):
    far = np.array([[20.0 * steady_k1.R, 0, 0]])
    x = np.vstack([ens_k1.x, far])
    w = np.append(ens_k1.w, 1e-12)
    a = dyn.accelerations(x, w, dyn.ForceModel())[-1]
    r = far[0, 0]
    assert np.linalg.norm(a) == pytest.approx(steady_k1.M / r**2, rel=1e-2)


def test_tree_matches_direct(steady_k1, ens_k1):
    eps = dyn.default_softening(steady_k1.R, ens_k1.n)
    direct = dyn.accelerations(ens_k1.x, ens_k1.w, dyn.ForceModel("direct", eps))
    tree = dyn.accelerations(ens_k1.x, ens_k1.w, dyn.ForceModel("tree", eps, theta=0.5))
    assert np.median(_relative_errors(tree, direct)) <= 1e-2
    exact = dyn.accelerations(ens_k1.x, ens_k1.w, dyn.ForceModel("tree", eps, theta=0.0))
    assert np.allclose(exact, direct, rtol=1e-10, atol=1e-12)


def test_direct_accelerations_match_numpy_oracle():
    rng = np.random.default_rng(3)
    x, w, eps = rng.normal(size=(60, 3)), rng.uniform(0.1, 1.0, 60), 0.05
    d = x[None, :, :] - x[:, None, :]
    r2 = np.sum(d * d, axis=2) + eps**2
    expected = np.sum(w[None, :, None] * d / r2[:, :, None] ** 1.5, axis=1)
    assert np.allclose(kernels.direct_accelerations(x, w, eps), expected, rtol=1e-12)
    pot = -np.sum(np.where(np.eye(60, dtype=bool), 0.0, w[None, :] / np.sqrt(r2)), axis=1)
    assert np.allclose(kernels.direct_potentials(x, w, eps), pot, rtol=1e-12)


def test_model_validation(steady_k1):
    with pytest.raises(ConfigError):
        dyn.ForceModel("fmm")
    with pytest.raises(ConfigError):
        dyn.ForceModel(softening=-0.1)
    with pytest.raises(ConfigError):
        dyn.ForceModel("frozen")
    with pytest.raises(ConfigError):
        dyn.leapfrog_step(_ens([0, 0, 0], [1, 0, 0], [1.0]), 0.0, dyn.ForceModel())


def test_default_softening_scaling():
    assert dyn.default_softening(2.0, 10_000) == pytest.approx(0.04)
    assert dyn.default_softening(1.0, 80_000) == pytest.approx(0.01)


def test_free_particle_moves_exactly():
    ens = _ens([0.25, -1.0, 3.0], [0.5, 0.125, -2.0], [1.0])
    out, _ = dyn.leapfrog_step(ens, 0.5, dyn.ForceModel())
    assert np.array_equal(out.x, ens.x + 0.5 * ens.v)
    assert np.array_equal(out.v, ens.v)
    assert out.t == 0.5


def test_kepler_circular_orbit():
    m = 1.0
    a = 1.0
    v = math.sqrt(2 * m / a) / 2
    ens = _ens([[-a / 2, 0, 0], [a / 2, 0, 0]], [[0, -v, 0], [0, v, 0]], [m, m])
    T = dyn.kepler_period(a, 2 * m)
    dt = T / 1000
    model = dyn.ForceModel()
    acc = None
    radii = []
    for _ in range(100):
        sep = []
        for _ in range(1000):
            ens, acc = dyn.leapfrog_step(ens, dt, model, acc)
            sep.append(np.linalg.norm(ens.x[0] - ens.x[1]))
        radii.append(np.mean(sep))
    radii = np.array(radii)
    assert np.max(np.abs(radii - radii[0])) / a <= 1e-6
    assert np.max(np.abs(np.array(sep) - a)) / a <= 1e-4


def test_reversibility(steady_k1):
    ens = sample_f0(steady_k1, 500, 2)
    model = dyn.ForceModel("direct", 0.05 * steady_k1.R)
    dt = steady_k1.t_dyn / 200
    fwd, _ = dyn.leapfrog_step(ens, dt, model)
    back, _ = dyn.leapfrog_step(fwd, -dt, model)
    assert np.allclose(back.x, ens.x, rtol=0, atol=1e-12)
    assert np.allclose(back.v, ens.v, rtol=0, atol=1e-12)


def test_momentum_and_mass_conserved(steady_k1):
    ens = sample_f0(steady_k1, 1000, 5).boosted(np.array([0.05, 0.0, -0.02]))
    model = dyn.ForceModel("direct", dyn.default_softening(steady_k1.R, 1000))
    traj = dyn.evolve(ens, steady_k1.t_dyn, steady_k1.t_dyn / 100, model, cadence=10)
    P = np.array([r.quantities.momentum for r in traj.records])
    assert np.max(np.abs(P - P[0])) <= 1e-10
    assert dyn.relative_drift(traj.series("mass")) <= 1e-12
    assert np.array_equal(traj.final.f, ens.f)


def test_boosted_centre_of_mass_moves_uniformly(steady_k1):
    V = np.array([0.1, -0.05, 0.02])
    ens = sample_f0(steady_k1, 800, 6).boosted(V)
    c0 = ens.center_of_mass()
    model = dyn.ForceModel("direct", dyn.default_softening(steady_k1.R, 800))
    traj = dyn.evolve(ens, steady_k1.t_dyn, steady_k1.t_dyn / 100, model, cadence=100)
    moved = traj.final.center_of_mass() - c0
    assert np.allclose(moved, V * traj.final.t, rtol=0, atol=1e-10)


def test_steady_angular_momentum_within_noise(steady_k1):
    ens = sample_f0(steady_k1, 4000, 8, antithetic=False, method="rejection")
    L = ens.angular_momentum()
    per = np.cross(ens.x, ens.v) * ens.w[:, None]
    sigma = np.sqrt(ens.n) * per.std(axis=0)
    assert np.all(np.abs(L) <= 3 * sigma)
    q = dyn.conserved_quantities(ens, dyn.ForceModel(), steady_k1.casimir)
    assert q.mass == pytest.approx(steady_k1.M, rel=1e-12)
    assert q.h_c == pytest.approx(q.casimir + q.e_kin + q.e_pot, abs=1e-12)


def test_frozen_field_conserves_energy_and_angular_momentum(steady_k1):
    ens = sample_f0(steady_k1, 300, 9)
    model = dyn.ForceModel("frozen", steady=steady_k1)
    t_dyn = steady_k1.t_dyn

    def energies(e):
        return 0.5 * np.sum(e.v**2, axis=1) + steady_k1.potential(np.linalg.norm(e.x, axis=1))

    E0, L0 = energies(ens), ens.L_squared()
    # core orbits are short, so the bounded leapfrog error needs a fine step
    traj = dyn.evolve(ens, t_dyn, t_dyn / 20_000, model, cadence=40_000)
    assert np.max(np.abs(energies(traj.final) - E0)) / abs(steady_k1.E0) <= 1e-6
    # both kick and drift preserve x cross v for a central force
    assert np.max(np.abs(traj.final.L_squared() - L0)) <= 1e-10 * np.max(L0)


def test_energy_error_is_second_order(steady_k1):
    ens = sample_f0(steady_k1, 300, 10)
    model = dyn.ForceModel("frozen", steady=steady_k1)

    def error(n_per_tdyn):
        traj = dyn.evolve(ens, 0.5 * steady_k1.t_dyn, steady_k1.t_dyn / n_per_tdyn, model,
                          cadence=1)
        return np.max(np.abs(traj.series("total_energy") - traj.series("total_energy")[0]))

    e1, e2 = error(100), error(200)
    assert math.log2(e1 / e2) == pytest.approx(2.0, abs=0.25)


def test_non_finite_state_halts():
    ens = _ens([[0.0, 0, 0], [1e-160, 0, 0]], [[0, 0, 0], [0, 0, 0]], [1.0, 1.0])
    traj = dyn.evolve(ens, 1.0, 0.1, dyn.ForceModel())
    assert traj.halted and "non-finite" in traj.message
    assert np.all(np.isfinite(traj.final.x))


def test_snapshots_written(tmp_path, steady_k1):
    ens = sample_f0(steady_k1, 50, 12)
    model = dyn.ForceModel("direct", 0.05)
    traj = dyn.evolve(ens, 4 * 0.01, 0.01, model, snapshot_dir=tmp_path, snapshot_every=2)
    assert [p.name for p in traj.snapshots] == ["snapshot_000000.csv", "snapshot_000002.csv",
                                                "snapshot_000004.csv"]
    lines = tmp_path.joinpath("snapshot_000004.csv").read_text().splitlines()
    assert "id,w,x,y,z,vx,vy,vz,f_init" in lines


@pytest.mark.slow
def test_self_consistent_density_stays_in_bands(steady_by_k):
    s = steady_by_k[0.5]
    N = 10_000
    ens = sample_f0(s, N, 13)
    model = dyn.ForceModel("direct", dyn.default_softening(s.R, N))
    traj = dyn.evolve(ens, 2 * s.t_dyn, s.t_dyn / 200, model, cadence=1000)
    x = traj.final.x - traj.final.center_of_mass()
    edges = np.linspace(0.1, 0.9, 9) * s.R
    counts = np.histogram(np.linalg.norm(x, axis=1), bins=edges)[0]
    r = np.linspace(0, s.R, 4001)
    shell = 4 * np.pi * r**2 * s.density(r)
    m = np.concatenate([[0], np.cumsum(np.diff(r) * (shell[1:] + shell[:-1]) / 2)])
    p = np.diff(np.interp(edges, r, m)) / s.M
    z = (counts - N * p) / np.sqrt(N * p * (1 - p))
    assert np.all(np.abs(z) <= 3), z
