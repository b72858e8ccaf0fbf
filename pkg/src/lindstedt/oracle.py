"""
Order-by-order Fourier recursion for the Lindstedt coefficients.

This is the tree-free reference.  The torus is ``alpha = psi + a(psi)``,
``beta = beta0 + b(psi)`` with ``h = (a, b) = sum_k eps^k h^(k)``.  Writing
``F = d_phi f(psi + a, beta0 + b) = sum_m eps^m F^(m)``, the equations of
motion give, order by order,

* ``h^(k)_nu = F^(k-1)_nu / (omega.nu)^2`` for ``nu != 0``;
* ``b^(k)_0 = -H^{-1} R^(k)`` where ``R^(k)`` is the mean of the normal
  force at order k with ``b^(k)_0`` left out (H is the Hessian of ``f_0``);
* ``a^(k)_0 = 0`` (phase gauge), provided the mean angle force vanishes.

The composition uses ``exp(i k.h) = sum_m eps^m E^(m)`` with the usual
power-series recurrence ``E^(m) = (1/m) sum_j j S^(j) E^(m-j)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import HypothesisError

__all__ = ["OracleSeries", "oracle_lindstedt"]


def _conv(a, b):
    """Product of two scalar Fourier series stored as dicts."""
    out = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            k = tuple(x + y for x, y in zip(ka, kb))
            out[k] = out.get(k, 0) + va * vb
    return out


def _axpy(acc, a, scale=1.0):
    for k, v in a.items():
        acc[k] = acc.get(k, 0) + scale * v
    return acc


@dataclass
class OracleSeries:
    """Coefficients ``coeffs[k][nu]`` (d-vectors) and solvability residuals."""

    K: int
    coeffs: dict
    solvability: dict = field(default_factory=dict)

    def coefficient(self, k, nu):
        return self.coeffs.get(k, {}).get(tuple(nu), None)

    def truncated(self, K):
        """Merge orders up to ``K`` into ``{nu: [h^(1)_nu, ..., h^(K)_nu]}``."""
        out = {}
        for k in range(1, K + 1):
            for nu, v in self.coeffs.get(k, {}).items():
                out.setdefault(nu, [np.zeros_like(v) for _ in range(K)])[k - 1] = v
        return out


def oracle_lindstedt(model, K, solvability_tol=1e-12, prune=1e-300):
    """Compute ``h^(k)`` for ``k <= K`` by direct Fourier composition.

    Raises
    ------
    HypothesisError
        If the mean angle force at some order exceeds ``solvability_tol``
        (relative to the size of the forcing), i.e. the phase gauge cannot
        be imposed.
    """
    f = model.f
    r, d = f.r, f.d
    zero = (0,) * r
    Hinv = model.hessian_inverse[r:, r:]
    waves = []
    for (nu, mu), c in f.coeffs.items():
        k = np.array(nu + mu, dtype=float)
        phase = np.exp(1j * float(np.dot(mu, model.beta0))) if f.s else 1.0
        waves.append((tuple(nu), 1j * k, c * phase))
    h = {}
    S = [dict() for _ in waves]  # S[w][j] = i k.h^(j) as Fourier dict
    E = [[{zero: 1.0 + 0j}] for _ in waves]

    def forcing_from(Elists, m):
        out = {}
        for (nu, ik, c), El in zip(waves, Elists):
            for key, val in El[m].items():
                kk = tuple(a + b for a, b in zip(key, nu))
                out[kk] = out.get(kk, 0) + c * val * ik
        return out

    def s_series(ik, hk):
        return {nu: complex(np.dot(ik, v)) for nu, v in hk.items()}

    def next_E(w, m, Sw):
        acc = {}
        for j in range(1, m + 1):
            _axpy(acc, _conv(Sw[j], E[w][m - j]), j / m)
        return {k: v for k, v in acc.items() if abs(v) > prune}

    series = OracleSeries(K, {}, {})
    for k in range(1, K + 1):
        F = forcing_from(E, k - 1)
        hk = {}
        scale = max([np.max(np.abs(v)) for v in F.values()] + [1.0])
        mean = F.get(zero, np.zeros(d))
        series.solvability[k] = float(np.max(np.abs(mean[:r]))) / scale
        if series.solvability[k] > solvability_tol:
            raise HypothesisError(f"mean angle force does not vanish at order {k}: {series.solvability[k]:.3e}")
        for nu, v in F.items():
            if any(nu):
                x = model.frequency(nu)
                hk[nu] = v / x**2
        # provisional E^(k) with b^(k)_0 = 0 gives the mean normal force R^(k)
        if f.s:
            trial_S = [{**S[w], k: s_series(ik, hk)} for w, (_, ik, _) in enumerate(waves)]
            trial_E = [E[w] + [next_E(w, k, trial_S[w])] for w in range(len(waves))]
            R = forcing_from(trial_E, k).get(zero, np.zeros(d))[r:]
            b0 = -Hinv @ R
            if np.any(b0 != 0):
                v0 = np.zeros(d, dtype=complex)
                v0[r:] = b0
                hk[zero] = v0
        hk = dict(sorted(hk.items()))
        h[k] = hk
        for w, (_, ik, _) in enumerate(waves):
            S[w][k] = s_series(ik, hk)
            E[w].append(next_E(w, k, S[w]))
        series.coeffs[k] = hk
    return series
