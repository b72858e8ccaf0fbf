"""
Independent checks: the Fourier-recursion oracle, the equations-of-motion
residual, Taylor consistency of the resummed series and the certificate
suite for a self-energy ladder.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .multiscale import INF, Ladder, renormalized_table
from .oracle import OracleSeries, oracle_lindstedt
from .trees import bare_table

__all__ = [
    "OracleSeries",
    "oracle_lindstedt",
    "DeviationReport",
    "compare_tree_vs_oracle",
    "fourier_sum",
    "eom_residual",
    "taylor_coefficients",
    "resummation_consistency",
    "self_energy_taylor",
    "Certificate",
    "CertificateReport",
    "certificate_suite",
    "fit_exponent",
    "probe_grid",
    "ladder_table_certificates",
]


@dataclass(frozen=True)
class DeviationReport:
    """Relative deviation per ``(k, nu)`` between two coefficient tables.

    Deviations are measured against the larger of the entry itself and the
    largest coefficient of the same order, so entries that vanish exactly
    (and come out as rounding noise) do not register as large.
    """

    deviations: dict
    tolerance: float

    @property
    def max_deviation(self):
        return max(self.deviations.values(), default=0.0)

    @property
    def passed(self):
        return self.max_deviation <= self.tolerance


def _rel(a, b, floor=0.0):
    scale = max(float(np.max(np.abs(b))), float(np.max(np.abs(a))), floor, 1e-300)
    return float(np.max(np.abs(a - b))) / scale


def compare_tree_vs_oracle(model, K, tolerance=1e-10, table=None, oracle=None):
    """Tree sums against the Fourier recursion for every order and momentum."""
    table = bare_table(model, K) if table is None else table
    oracle = oracle_lindstedt(model, K) if oracle is None else oracle
    dev = {}
    zero = np.zeros(model.d)
    for k in range(1, K + 1):
        nus = set(oracle.coeffs.get(k, {})) | set(table.momenta(k))
        floor = max((float(np.max(np.abs(v))) for v in oracle.coeffs.get(k, {}).values()), default=0.0)
        for nu in sorted(nus):
            a = table.coefficient(k, nu)
            b = oracle.coefficient(k, nu)
            a = zero if a is None else a
            b = zero if b is None else b
            if not (np.any(a) or np.any(b)):
                continue
            dev[(k, nu)] = _rel(a, b, floor)
    return DeviationReport(dev, tolerance)


def fourier_sum(h, r, n):
    """Values of a real Fourier series ``{nu: vector}`` on the ``n^r`` torus grid."""
    axes = [np.arange(n) * (2 * np.pi / n)] * r
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, r)
    if not h:
        return grid, None
    nus = np.array(list(h), dtype=float).reshape(-1, r)
    coef = np.array([np.asarray(v, dtype=complex) for v in h.values()])
    waves = np.exp(1j * grid @ nus.T)
    return grid, waves @ coef


def _grid_size(h, r):
    top = max((max(abs(c) for c in nu) for nu in h), default=0)
    n = max(16, 4 * top + 4)
    if r > 1:
        n = min(n, max(16, int(4e5 ** (1 / r))))
    return n


def eom_residual(model, h, eps, grid_size=None):
    """Sup norm of ``(omega.d)^2 h + eps d_phi f(psi + a, beta0 + b)`` on a torus grid.

    Derivatives are taken exactly on the Fourier data; the grid only
    serves the sup norm.
    """
    r = model.r
    n = _grid_size(h, r) if grid_size is None else grid_size
    accel = {nu: -(model.frequency(nu) ** 2) * np.asarray(v, dtype=complex) for nu, v in h.items()}
    grid, val = fourier_sum(h, r, n)
    if val is None:
        val = np.zeros((len(grid), model.d))
        acc = np.zeros_like(val)
    else:
        acc = fourier_sum(accel, r, n)[1].real
        val = val.real
    force = model.f.gradient(grid + val[:, :r], model.beta0 + val[:, r:])
    return float(np.max(np.abs(acc + eps * force)))


def taylor_coefficients(func, center, radius, order, points=32):
    """Taylor coefficients ``0..order`` of an analytic ``func`` via the trapezoid rule on a circle.

    ``func`` maps a complex point to a dict of arrays; missing keys are zero.
    """
    zs = radius * np.exp(2j * np.pi * (np.arange(points) + 0.5) / points)
    vals = [func(center + z) for z in zs]
    keys = sorted(set().union(*[v.keys() for v in vals]))
    out = {}
    for key in keys:
        arr = np.array([np.asarray(v[key]) if key in v else 0 * np.asarray(vals[0].get(key, 0.0)) for v in vals])
        coeffs = []
        for j in range(order + 1):
            w = zs ** (-j)
            coeffs.append(np.tensordot(w, arr, axes=(0, 0)) / points)
        out[key] = coeffs
    return out


def resummation_consistency(ladder, K, radius=None, points=32):
    """Compare the eps-Taylor coefficients of the resummed series with the bare coefficients.

    The resummed sum is evaluated on a circle of complex eps with all cutoff
    weights frozen at the real ladder; its coefficients of ``eps^1..eps^K``
    must reproduce the bare Lindstedt coefficients.  Returns a
    :class:`DeviationReport` keyed by ``(k, nu)``.
    """
    model, ctx = ladder.model, ladder.ctx
    radius = ctx.eps if radius is None else radius
    renormalized_table(ladder, K)  # fill every scale set first

    def at(z):
        lad = Ladder(ctx, K_SE=ladder.K_SE, N_max=ladder.N_max, eps=z, reference=ladder)
        return renormalized_table(lad, K)

    coeffs = taylor_coefficients(at, 0.0, radius, K, points)
    bare = bare_table(model, K)
    dev = {}
    zero = np.zeros(model.d)
    floors = {k: max((float(np.max(np.abs(bare.coefficient(k, nu)))) for nu in bare.momenta(k)), default=0.0)
              for k in range(1, K + 1)}
    for nu, cs in coeffs.items():
        for k in range(1, K + 1):
            b = bare.coefficient(k, nu)
            b = zero if b is None else b
            if not (np.any(np.abs(cs[k]) > 1e-300) or np.any(b)):
                continue
            dev[(k, nu)] = _rel(cs[k], b, floors[k])
    return DeviationReport(dev, 1e-8)


def self_energy_taylor(ladder, n, key, order=2, radius=None, points=16):
    """Taylor coefficients in eps of ``M^[<=n](x)`` at a fixed key, weights frozen."""
    radius = ladder.ctx.eps if radius is None else radius

    def at(z):
        lad = Ladder(ladder.ctx, K_SE=ladder.K_SE, N_max=ladder.N_max, eps=z, reference=ladder)
        return {"M": lad.M_le(n, key)}

    return taylor_coefficients(at, 0.0, radius, order, points)["M"]


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class Certificate:
    name: str
    measured: float
    bound: float
    passed: bool
    note: str = ""

    def line(self):
        return (f"name={self.name} measured={self.measured!r} bound={self.bound!r} "
                f"pass={'yes' if self.passed else 'no'}" + (f" note={self.note}" if self.note else ""))


@dataclass(frozen=True)
class CertificateReport:
    records: tuple

    @property
    def passed(self):
        return all(c.passed for c in self.records)

    def failures(self):
        return [c for c in self.records if not c.passed]

    def __getitem__(self, name):
        for c in self.records:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_text(self):
        return "".join(c.line() + "\n" for c in self.records)


def _le(name, measured, bound, note=""):
    return Certificate(name, float(measured), float(bound), bool(measured <= bound), note)


def fit_exponent(xs, ys):
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


def probe_grid(ladder, points=8, top=None):
    """Geometric grid of probe frequencies tending to zero.

    It starts well below the slowest normal frequency ``sqrt(eps a_1)``, where
    the small-x behaviour sets in.
    """
    if top is None:
        ctx = ladder.ctx
        a = ctx.model.spectrum.a
        top = min(ctx.C0, math.sqrt(ctx.eps * a[0]) if len(a) else ctx.C0) / 16
    return [top * 2.0**-k for k in range(points)]


def _block_exponents(ladder, xs):
    r = ladder.model.r
    zero = (0,) * r
    slopes_aa, slopes_ab, null_ratio, null_slopes = [], [], 0.0, []
    floor = 1e-13 * abs(ladder.eps) ** 2
    for n in range(1, ladder.N_max + 1):
        aa, ab, nl = [], [], []
        for x in xs:
            M = ladder.M(n, (zero, x))
            aa.append(np.linalg.norm(M[:r, :r], 2))
            ab.append(np.linalg.norm(M[:r, r:], 2) if ladder.model.s else 0.0)
        if min(aa) > floor:
            slopes_aa.append(fit_exponent(xs, aa))
        if ladder.model.s and min(ab) > floor:
            slopes_ab.append(fit_exponent(xs, ab))
    for x in xs:
        ev = ladder.eigenvalues(ladder.N_max, (zero, x))
        nl.append(float(np.max(np.abs(ev[:r]))))
        null_ratio = max(null_ratio, nl[-1] / (abs(ladder.eps) ** 2 * x * x))
    if min(nl) > floor * 1e-2:
        null_slopes.append(fit_exponent(xs, nl))
    return slopes_aa, slopes_ab, null_ratio, null_slopes


def certificate_suite(ladder, keys=None, probes=None, symmetry_tol=1e-12, null_tol=1e-10):
    """Run every ladder certificate and return a :class:`CertificateReport`.

    ``keys`` defaults to every frequency key the ladder has touched; the
    symmetry checks also evaluate the mirrored key ``-x``.
    """
    ctx, model = ladder.ctx, ladder.model
    keys = ladder.keys() if keys is None else list(keys)
    xs = probe_grid(ladder) if probes is None else probes
    recs = []
    herm = trans = 0.0
    gamma = 0.0
    lam0 = ctx.lam0
    for key in keys:
        neg = (tuple(-c for c in key[0]), -key[1])
        for n in range(ladder.N_max + 1):
            A = ladder.M_le(n, key)
            B = ladder.M_le(n, neg)
            herm = max(herm, float(np.linalg.norm(A - A.conj().T, 2)))
            trans = max(trans, float(np.linalg.norm(A - B.T, 2)))
            ev = np.linalg.eigvalsh(0.5 * (A + A.conj().T))
            gamma = max(gamma, float(np.max(np.abs(ev - lam0))) / ctx.eps**2)
    recs.append(_le("hermiticity", herm, symmetry_tol))
    recs.append(_le("transpose_symmetry", trans, symmetry_tol))
    recs.append(_le("null_block_self_energy", ladder.stats.null_block, null_tol, "max |lam_bar_j|/eps, j<=r"))
    s_aa, s_ab, null_ratio, null_slopes = _block_exponents(ladder, xs)
    recs.append(Certificate("alpha_alpha_exponent", min(s_aa, default=INF), 1.9, min(s_aa, default=INF) >= 1.9,
                            "vacuous" if not s_aa else f"scales={len(s_aa)}"))
    recs.append(Certificate("alpha_beta_exponent", min(s_ab, default=INF), 0.9, min(s_ab, default=INF) >= 0.9,
                            "vacuous" if not s_ab else f"scales={len(s_ab)}"))
    recs.append(Certificate("null_block_x_exponent", min(null_slopes, default=INF), 1.9,
                            min(null_slopes, default=INF) >= 1.9,
                            f"C={null_ratio!r}" + ("" if null_slopes else " vacuous")))
    recs.append(Certificate("eigenvalue_stability_gamma", gamma, INF, math.isfinite(gamma)))
    st = ladder.stats
    recs.append(_le("counting_bound_violations", st.counting_violations, 0, f"checked={st.trees_checked}"))
    recs.append(_le("cluster_harmonic_violations", st.cluster_bound_violations, 0, f"checked={st.clusters_checked}"))
    recs.append(_le("partition_of_unity", st.unity_deviation, 4 * np.finfo(float).eps, f"checked={st.unity_checked}"))
    recs.append(_le("scale_two_valuedness_violations", st.two_value_violations, 0))
    recs.append(_le("regime_denominator_violations", st.regime_violations, 0, f"checked={st.regime_checked}"))
    recs.append(_le("infrared_denominator_violations", st.divisor_violations, 0, f"checked={st.divisor_checked}"))
    recs.append(_le("eigenvalue_crossings", st.crossings, 0))
    return CertificateReport(tuple(recs))


def ladder_table_certificates(text, tol=1e-12):
    """Hermiticity and ``x -> -x`` transpose symmetry of a dumped ladder table."""
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        return [Certificate("ladder_file_rows", 0, 1, False, "empty table")]
    d = sum(1 for k in rows[0] if k.startswith("eig"))
    mats = {}
    for row in rows:
        M = np.array([[complex(float(row[f"M{a}{b}_re"]), float(row[f"M{a}{b}_im"]))
                       for b in range(1, d + 1)] for a in range(1, d + 1)])
        nu = tuple(int(c) for c in row["nu"].split())
        mats[(int(row["n"]), nu, float(row["shift"]))] = M
    herm = trans = 0.0
    pairs = 0
    for (n, nu, sh), A in mats.items():
        herm = max(herm, float(np.linalg.norm(A - A.conj().T, 2)))
        B = mats.get((n, tuple(-c for c in nu), -sh if sh else 0.0))
        if B is not None:
            pairs += 1
            trans = max(trans, float(np.linalg.norm(A - B.T, 2)))
    return [_le("ladder_file_hermiticity", herm, tol, f"rows={len(mats)}"),
            _le("ladder_file_transpose_symmetry", trans, tol, f"pairs={pairs}")]
