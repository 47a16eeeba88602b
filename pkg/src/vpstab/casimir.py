"""Casimir functions Q, their derivative, and the inverse (Q')^{-1}.

The steady states built by this package have the form
``f0 = (Q')^{-1}(E0 - E)`` on their support, so everything downstream only
needs ``Q``, ``Q'`` and ``qprime_inverse``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .errors import ConfigError, NumericFailure

POLYTROPIC = "polytropic"
GENERAL = "tabulated-general"


def check_k(k):
    if not (0.0 < k < 1.5):
        raise ConfigError(f"polytropic exponent k must satisfy 0 < k < 3/2, got {k}")
    return float(k)


@dataclass(frozen=True)
class CasimirFunction:
    """Convex function Q with the constants of its growth assumptions.

    Use :meth:`polytropic` for ``Q(f) = f^(1+1/k)``; :meth:`general` and
    :meth:`tabulated` cover everything else.  For the polytropic case all
    assumption constants are set so that the bounds hold with equality.
    """

    kind: str
    k: float | None = None
    F0: float = 1.0
    C1: float = 1.0
    C2: float = 1.0
    k1: float = 1.0
    k2: float = 1.0
    k3: float = 1.0
    q_func: Callable | None = field(default=None, repr=False, compare=False)
    dq_func: Callable | None = field(default=None, repr=False, compare=False)

    @classmethod
    def polytropic(cls, k):
        k = check_k(k)
        return cls(kind=POLYTROPIC, k=k, F0=1.0, C1=1.0, C2=1.0, k1=k, k2=k, k3=k)

    @classmethod
    def general(cls, q, dq, *, F0, C1, C2, k1, k2, k3):
        for name, val in (("k1", k1), ("k2", k2), ("k3", k3)):
            if not (0.0 < val < 1.5):
                raise ConfigError(f"{name} must lie in (0, 3/2), got {val}")
        if min(F0, C1, C2) <= 0:
            raise ConfigError("F0, C1, C2 must be positive")
        return cls(kind=GENERAL, k=None, F0=F0, C1=C1, C2=C2, k1=k1, k2=k2, k3=k3,
                   q_func=q, dq_func=dq)

    @classmethod
    def tabulated(cls, f_nodes, dq_nodes, *, F0, C1, C2, k1, k2, k3):
        """Build Q from samples of Q' (monotone cubic interpolation).

        ``f_nodes`` must start at 0 with ``dq_nodes[0] == 0``.  Beyond the last
        node Q' is continued as a power law with exponent ``1/k1``.
        """
        f_nodes = np.asarray(f_nodes, dtype=float)
        dq_nodes = np.asarray(dq_nodes, dtype=float)
        if f_nodes[0] != 0.0 or dq_nodes[0] != 0.0:
            raise ConfigError("tabulated Q' must start at f=0 with Q'(0)=0")
        if np.any(np.diff(f_nodes) <= 0) or np.any(np.diff(dq_nodes) <= 0):
            raise ConfigError("tabulated Q' must be strictly increasing")
        dq_interp = PchipInterpolator(f_nodes, dq_nodes, extrapolate=False)
        q_interp = dq_interp.antiderivative()
        f_last, dq_last = f_nodes[-1], dq_nodes[-1]
        q_last = float(q_interp(f_last))
        p = 1.0 / k1

        def dq(f):
            f = np.asarray(f, dtype=float)
            inside = np.minimum(f, f_last)
            out = np.where(f <= f_last, dq_interp(inside), dq_last * (f / f_last) ** p)
            return out

        def q(f):
            f = np.asarray(f, dtype=float)
            inside = np.minimum(f, f_last)
            tail = q_last + dq_last * f_last / (p + 1) * ((f / f_last) ** (p + 1) - 1.0)
            return np.where(f <= f_last, q_interp(inside), tail)

        return cls.general(q, dq, F0=F0, C1=C1, C2=C2, k1=k1, k2=k2, k3=k3)

    @property
    def is_polytropic(self):
        return self.kind == POLYTROPIC

    @property
    def amplitude(self):
        """Prefactor A of ``(Q')^{-1}(s) = A s^k`` in the polytropic case."""
        if not self.is_polytropic:
            raise ValueError("amplitude is only defined for polytropic Q")
        return (self.k / (self.k + 1.0)) ** self.k

    def Q(self, f):
        f = np.asarray(f, dtype=float)
        if self.is_polytropic:
            return np.where(f > 0, np.abs(f) ** (1.0 + 1.0 / self.k), 0.0)
        return np.asarray(self.q_func(f), dtype=float)

    def dQ(self, f):
        f = np.asarray(f, dtype=float)
        if self.is_polytropic:
            return np.where(f > 0, (1.0 + 1.0 / self.k) * np.abs(f) ** (1.0 / self.k), 0.0)
        return np.asarray(self.dq_func(f), dtype=float)

    def q_over_f(self, f):
        """Q(f)/f, the per-unit-mass Casimir density carried by a marker."""
        f = np.asarray(f, dtype=float)
        if self.is_polytropic:
            return np.abs(f) ** (1.0 / self.k)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(f > 0, self.Q(f) / f, 0.0)

    def check_assumptions(self, n=200, rtol=1e-10):
        """Check the growth/convexity assumptions on sample grids.

        Returns a dict of named booleans; all must be True for a valid Q.
        """
        F0 = self.F0
        lo = np.linspace(0.0, F0, n)
        hi = F0 * np.geomspace(1.0, 1e3, n)
        fine = np.concatenate([lo, hi[1:]])
        lam = np.linspace(0.0, 1.0, 41)

        q_hi = self.Q(hi)
        q_lo = self.Q(lo)
        res = {}
        res["Q(0)=0"] = abs(float(self.Q(0.0))) <= 1e-300
        res["Q'(0)=0"] = abs(float(self.dQ(0.0))) <= 1e-300
        res["Q>=0"] = bool(np.all(self.Q(fine) >= 0))
        res["Q1"] = bool(np.all(q_hi >= self.C1 * hi ** (1 + 1 / self.k1) * (1 - rtol)))
        res["Q2"] = bool(np.all(q_lo <= self.C2 * lo ** (1 + 1 / self.k2) * (1 + rtol)))
        lf = lam[:, None] * fine[None, :]
        res["Q3"] = bool(np.all(self.Q(lf) >= lam[:, None] ** (1 + 1 / self.k3)
                                * self.Q(fine)[None, :] * (1 - rtol) - 1e-300))
        dq = self.dQ(fine)
        res["Q4"] = bool(np.all(np.diff(dq) > 0))
        return res


def qprime_inverse(casimir, s):
    """Evaluate (Q')^{-1}(s) for s > 0 and 0 for s <= 0 (vectorised)."""
    if casimir.is_polytropic and isinstance(s, float):
        k = casimir.k
        return (k / (k + 1.0) * s) ** k if s > 0 else 0.0
    s_arr = np.asarray(s, dtype=float)
    if casimir.is_polytropic:
        k = casimir.k
        out = np.where(s_arr > 0, (k / (k + 1.0) * np.maximum(s_arr, 0.0)) ** k, 0.0)
        return out if out.ndim else float(out)

    flat = np.atleast_1d(s_arr).ravel()
    out = np.zeros_like(flat)
    for i, si in enumerate(flat):
        if si > 0:
            out[i] = _invert_general(casimir, float(si))
    out = out.reshape(s_arr.shape)
    return out if out.ndim else float(out)


def _invert_general(casimir, s):
    dq = casimir.dQ
    hi = max(casimir.F0, 1e-12)
    for _ in range(400):
        if float(dq(hi)) > s:
            break
        hi *= 2.0
    else:
        raise NumericFailure("could not bracket (Q')^{-1}", s=s, bracket=(0.0, hi))
    try:
        return brentq(lambda f: float(dq(f)) - s, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                      maxiter=500)
    except (RuntimeError, ValueError) as exc:  # pragma: no cover - defensive
        raise NumericFailure("root find for (Q')^{-1} failed", s=s, bracket=(0.0, hi)) from exc
