import math

import numpy as np
import pytest
from scipy.integrate import quad

from vpstab.casimir import CasimirFunction
from vpstab.ensemble import read_snapshot, sample_f0, write_snapshot
from vpstab.errors import ConfigError
from vpstab.steady import (STEADY_CSV_HEADER, build_steady, emden_fowler_shoot, f0_eval,
                           h_phi_eval, load_steady, polytrope_constant, scale_to_mass)


def rk4_shoot(k, z0, n_steps):
    """Fixed-step RK4 oracle for (r^2 z')'/r^2 = -c_k z_+^(k+3/2).

    Returns (R, M) with R located by cubic Hermite interpolation in the
    crossing step.
    """
    c = polytrope_constant(k)
    n = k + 1.5
    src = lambda z: c * max(z, 0.0) ** n
    scale = math.sqrt(z0 / src(z0))
    r = 1e-5 * scale
    z, dz = z0 - src(z0) * r * r / 6.0, -src(z0) * r / 3.0
    h = 4.0 * scale / n_steps

    def f(r, z, dz):
        return dz, -src(z) - 2.0 * dz / r

    while True:
        k1 = f(r, z, dz)
        k2 = f(r + h / 2, z + h / 2 * k1[0], dz + h / 2 * k1[1])
        k3 = f(r + h / 2, z + h / 2 * k2[0], dz + h / 2 * k2[1])
        k4 = f(r + h, z + h * k3[0], dz + h * k3[1])
        zn = z + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        dzn = dz + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if zn <= 0:
            # Hermite cubic on [r, r+h] through (z, dz), (zn, dzn); Newton for its root
            t = z / (z - zn)
            for _ in range(50):
                h00, h10 = 2 * t**3 - 3 * t**2 + 1, t**3 - 2 * t**2 + t
                h01, h11 = -2 * t**3 + 3 * t**2, t**3 - t**2
                p = h00 * z + h10 * h * dz + h01 * zn + h11 * h * dzn
                dp = ((6 * t**2 - 6 * t) * z + (3 * t**2 - 4 * t + 1) * h * dz
                      + (-6 * t**2 + 6 * t) * zn + (3 * t**2 - 2 * t) * h * dzn)
                t -= p / dp
            dzR = ((6 * t**2 - 6 * t) * z / h + (3 * t**2 - 4 * t + 1) * dz
                   + (-6 * t**2 + 6 * t) * zn / h + (3 * t**2 - 2 * t) * dzn)
            R = r + t * h
            return R, -R * R * dzR
        r, z, dz = r + h, zn, dzn


def test_shooting_matches_richardson_rk4_oracle():
    sol = emden_fowler_shoot(1.0, 1.0)
    coarse = np.array(rk4_shoot(1.0, 1.0, 8000))
    fine = np.array(rk4_shoot(1.0, 1.0, 16000))
    extrap = fine + (fine - coarse) / 15.0
    assert sol.R == pytest.approx(extrap[0], rel=1e-8)
    assert sol.M == pytest.approx(extrap[1], rel=1e-8)


def test_shot_solution_shape():
    sol = emden_fowler_shoot(1.0, 1.0)
    assert sol.z[0] == 1.0 and sol.dz[0] == 0.0
    assert np.all(np.diff(sol.z) < 0)
    assert abs(sol.z[-1]) < 1e-12 and sol.dz[-1] < 0
    assert sol.M == pytest.approx(-sol.R**2 * sol.dz[-1])


def test_central_value_doubling_follows_scaling():
    r1 = emden_fowler_shoot(1.0, 1.0).R
    r2 = emden_fowler_shoot(1.0, 2.0).R
    assert r2 / r1 == pytest.approx(2.0 ** (-0.75), rel=1e-9)


def test_mass_vanishes_with_quarter_power():
    z0 = np.geomspace(1e-4, 1.0, 6)
    M = np.array([emden_fowler_shoot(1.0, z).M for z in z0])
    assert np.all(np.diff(M) > 0)
    slope = np.polyfit(np.log(z0), np.log(M), 1)[0]
    assert slope == pytest.approx(0.25, abs=1e-8)


@pytest.mark.parametrize("k", [0.5, 1.0, 1.25])
def test_scaling_family_closure(k):
    base = emden_fowler_shoot(k, 1.0)
    for alpha in (0.5, 1.0, 2.0, 4.0):
        gamma = (k + 0.5) / 2
        target = base.M * alpha ** (k + 1.5 - 3 * gamma)
        scaled = scale_to_mass(base, target)
        reshot = emden_fowler_shoot(k, scaled.z0)
        r = np.linspace(0.0, scaled.R, 257)[:-1]
        assert np.allclose(scaled.z_at(r), reshot.z_at(r), rtol=1e-6, atol=0.0)
        assert scaled.R == pytest.approx(reshot.R, rel=1e-6)


def test_polytrope_constant_against_quadrature():
    for k in (0.1, 0.75, 1.0, 1.4):
        cas = CasimirFunction.polytropic(k)
        c = polytrope_constant(k)
        assert np.isfinite(c) and c > 0
        E0 = -0.3
        for u in np.linspace(-1.0, E0 - 1e-3, 7):
            ratio = 4 * math.pi * h_phi_eval(cas, E0, u) / (E0 - u) ** (k + 1.5)
            assert ratio == pytest.approx(c, rel=1e-8)


def test_density_is_linear_in_profile_amplitude():
    base = CasimirFunction.polytropic(1.0)
    # phi doubled means (Q')^{-1} doubled, i.e. Q_2(f) = 2 Q(f/2)
    doubled = CasimirFunction.general(lambda f: 2 * base.Q(np.asarray(f) / 2),
                                      lambda f: base.dQ(np.asarray(f) / 2),
                                      F0=1.0, C1=0.5, C2=0.5, k1=1.0, k2=1.0, k3=1.0)
    for u in (-2.0, -1.5):
        assert h_phi_eval(doubled, -1.0, u) == pytest.approx(2 * h_phi_eval(base, -1.0, u),
                                                              rel=1e-10)


def test_h_phi_cutoff_and_polytrope_value():
    cas = CasimirFunction.polytropic(1.0)
    assert h_phi_eval(cas, -1.0, -1.0) == 0.0
    assert h_phi_eval(cas, -1.0, 0.0) == 0.0
    assert h_phi_eval(cas, -1.0, -2.0) == pytest.approx(polytrope_constant(1.0) / (4 * math.pi),
                                                         rel=1e-10)


def test_scale_to_mass_identity_and_round_trip():
    sol = emden_fowler_shoot(1.0, 1.0)
    assert scale_to_mass(sol, sol.M) is sol
    up = scale_to_mass(sol, 2 ** 0.25 * sol.M)
    assert up.z0 == pytest.approx(2.0, rel=1e-12)
    assert up.R == pytest.approx(sol.R * 2 ** (-0.75), rel=1e-12)
    assert up.M == pytest.approx(2 ** 0.25 * sol.M, rel=1e-10)
    back = scale_to_mass(up, sol.M)
    assert np.allclose(back.z, sol.z, rtol=1e-10, atol=0.0)
    with pytest.raises(ConfigError):
        scale_to_mass(sol, -1.0)


def test_steady_invariants(steady_by_k):
    for k, s in steady_by_k.items():
        assert s.E0 < 0 and s.h_M < 0
        assert s.r_max >= 3 * s.R
        assert np.all(np.diff(s.U0) > 0)
        assert np.all(s.rho0[s.r >= s.R] == 0)
        outside = s.r >= 1.5 * s.R
        assert np.allclose(s.U0[outside], -s.M / s.r[outside], rtol=1e-8, atol=0.0)
        r = 2.5 * s.R
        assert -s.potential(r) * r >= s.M / 3
        far = np.array([2, 5, 50]) * s.R
        assert np.all(-s.potential(far) * far >= s.M / 3)
        mass, _ = quad(lambda r: 4 * math.pi * r * r * float(s.density(r)), 0, s.R,
                       epsrel=1e-12)
        assert mass == pytest.approx(s.M, rel=1e-9)


def test_potential_decays_at_infinity(steady_k1):
    assert abs(steady_k1.potential(1e8)) < 1e-7


def test_f0_eval_cutoff_maximum_and_symmetry(steady_k1):
    s = steady_k1
    zero = np.zeros(3)
    f_max = f0_eval(s, zero, zero)
    assert f_max == pytest.approx((s.z0 / 2.0), rel=1e-12)
    v_big = np.array([math.sqrt(2 * s.z0) * 1.01, 0, 0])
    assert f0_eval(s, zero, v_big) == 0.0
    rng = np.random.default_rng(3)
    x = rng.normal(size=(50, 3)) * s.R / 3
    v = rng.normal(size=(50, 3))
    base = f0_eval(s, x, v)
    assert np.all(base <= f_max)
    # reflections are exact in floating point; general rotations only to rounding
    flip = np.diag([-1.0, 1.0, -1.0])
    assert np.array_equal(f0_eval(s, x @ flip, v @ flip), base)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    assert np.allclose(f0_eval(s, x @ q.T, v @ q.T), base, rtol=1e-12, atol=1e-14)


def test_export_round_trip(tmp_path, steady_k1):
    j, c = tmp_path / "s.json", tmp_path / "s.csv"
    steady_k1.to_files(j, c)
    assert c.read_text().splitlines()[0] == STEADY_CSV_HEADER
    back = load_steady(j, c)
    assert back.E0 == steady_k1.E0 and back.R == steady_k1.R
    assert back.h_M == pytest.approx(steady_k1.h_M, rel=1e-9)
    r = np.linspace(0, 2 * steady_k1.R, 41)
    assert np.allclose(back.potential(r), steady_k1.potential(r), rtol=1e-13)


def test_general_casimir_build_matches_polytrope():
    f = np.linspace(0.0, 20.0, 2000)
    tab = CasimirFunction.tabulated(f, 2.0 * f, F0=1.0, C1=1.0, C2=1.0, k1=1.0, k2=1.0, k3=1.0)
    gen = build_steady(tab, 1.0, z0_seed=30.0)
    poly = build_steady(CasimirFunction.polytropic(1.0), 1.0)
    assert gen.R == pytest.approx(poly.R, rel=1e-5)
    assert gen.E0 == pytest.approx(poly.E0, rel=1e-5)
    assert gen.h_M == pytest.approx(poly.h_M, rel=1e-4)


def test_build_rejects_bad_mass():
    with pytest.raises(ConfigError):
        build_steady(CasimirFunction.polytropic(1.0), 0.0)


# --- sampling -------------------------------------------------------------

def test_sample_mass_and_determinism(steady_k1):
    a = sample_f0(steady_k1, 1001, 5)
    b = sample_f0(steady_k1, 1001, 5)
    assert a.mass == pytest.approx(steady_k1.M, rel=1e-14)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)
    assert np.all(a.f > 0)
    assert np.allclose(a.f, f0_eval(steady_k1, a.x, a.v), rtol=0, atol=0)
    assert np.allclose(a.momentum(), 0.0, atol=1e-15)


@pytest.mark.parametrize("method", ["stratified", "rejection"])
def test_radial_mass_profile_within_binomial_bands(steady_k1, method):
    s = steady_k1
    N = 100_000
    ens = sample_f0(s, N, 8, method=method, antithetic=False)
    r = np.sqrt(np.sum(ens.x**2, axis=1))
    edges = s.R * np.array([0.1, 0.2, 0.3, 0.5, 0.7, 0.9])
    for edge in edges:
        p, _ = quad(lambda t: 4 * math.pi * t * t * float(s.density(t)) / s.M, 0, edge,
                    epsrel=1e-12)
        frac = np.mean(r <= edge)
        assert abs(frac - p) <= 3 * math.sqrt(p * (1 - p) / N)


def test_mean_velocity_vanishes_without_mirroring(steady_k1):
    N = 100_000
    ens = sample_f0(steady_k1, N, 9, method="rejection", antithetic=False)
    sigma = np.std(ens.v, axis=0) / math.sqrt(N)
    assert np.all(np.abs(ens.v.mean(axis=0)) <= 3 * sigma)


def test_snapshot_round_trip(tmp_path, steady_k1):
    ens = sample_f0(steady_k1, 64, 1)
    path = write_snapshot(ens, tmp_path / "snap.csv", {"note": "x"})
    assert path.read_text().splitlines()[0] == "id,w,x,y,z,vx,vy,vz,f_init"
    back = read_snapshot(path)
    assert np.array_equal(back.x, ens.x) and np.array_equal(back.f, ens.f)
    assert back.reference_sum == ens.reference_sum


def test_sample_rejects_empty(steady_k1):
    with pytest.raises(ConfigError):
        sample_f0(steady_k1, 0, 1)
