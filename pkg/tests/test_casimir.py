import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpstab.casimir import CasimirFunction, check_k, qprime_inverse
from vpstab.errors import ConfigError


def test_inverse_linear_case():
    assert qprime_inverse(CasimirFunction.polytropic(1.0), 3.0) == pytest.approx(1.5, rel=1e-15)


@pytest.mark.parametrize("k", [0.5, 1.0, 1.25])
def test_inverse_is_zero_below_cutoff(k):
    cas = CasimirFunction.polytropic(k)
    assert qprime_inverse(cas, -2.0) == 0.0
    assert qprime_inverse(cas, 0.0) == 0.0


def test_inverse_half_composes_back():
    cas = CasimirFunction.polytropic(0.5)
    s = np.array([1.0, 0.3, 7.5, 1e-6])
    assert np.allclose(cas.dQ(qprime_inverse(cas, s)), s, rtol=1e-12, atol=0.0)
    assert qprime_inverse(cas, 1.0) == pytest.approx((0.5 / 1.5) ** 0.5, rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(k=st.floats(0.05, 1.45), a=st.floats(-5, 50), b=st.floats(-5, 50))
def test_inverse_monotone(k, a, b):
    cas = CasimirFunction.polytropic(k)
    lo, hi = sorted((a, b))
    assert qprime_inverse(cas, lo) <= qprime_inverse(cas, hi)


@pytest.mark.parametrize("k", [0.0, -1.0, 1.5, 2.0])
def test_exponent_range_enforced(k):
    with pytest.raises(ConfigError):
        check_k(k)
    with pytest.raises(ConfigError):
        CasimirFunction.polytropic(k)


@pytest.mark.parametrize("k", [0.3, 1.0, 1.4])
def test_polytropic_assumptions_hold(k):
    report = CasimirFunction.polytropic(k).check_assumptions()
    assert all(report.values()), report


def test_general_inverse_matches_polytrope():
    k = 0.75
    poly = CasimirFunction.polytropic(k)
    gen = CasimirFunction.general(poly.Q, poly.dQ, F0=1.0, C1=1.0, C2=1.0, k1=k, k2=k, k3=k)
    s = np.array([0.01, 0.5, 3.0, 40.0])
    assert np.allclose(qprime_inverse(gen, s), qprime_inverse(poly, s), rtol=1e-12)
    assert np.allclose(gen.dQ(qprime_inverse(gen, s)), s, rtol=1e-12)


def test_tabulated_casimir_reproduces_square():
    f = np.linspace(0.0, 5.0, 400)
    tab = CasimirFunction.tabulated(f, 2.0 * f, F0=1.0, C1=1.0, C2=1.0, k1=1.0, k2=1.0, k3=1.0)
    assert tab.Q(2.0) == pytest.approx(4.0, rel=1e-8)
    assert qprime_inverse(tab, 3.0) == pytest.approx(1.5, rel=1e-8)
    assert all(tab.check_assumptions().values())
