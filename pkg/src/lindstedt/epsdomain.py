"""
Excluded values of eps.

For a lattice frequency ``x = omega.nu`` the scale-``m`` condition asks that
``|x|`` keep a distance ``theta_m(nu)`` from every combination
``sqrt(lam_j)``, ``sqrt(lam_j) + sqrt(lam_i)`` and ``|sqrt(lam_j) - sqrt(lam_i)|``
of normal self-energies.  The threshold is ``2^{-(nbar0-1)/2} C0 |nu|^{-tau1}``
below ``nbar0`` and ``2^{-m/2} C0 |nu|^{-tau1}`` from ``nbar0`` on.  Terms
built only from the null block do not depend on eps; they are conditions on
``omega`` alone and are left to the Diophantine scan.

Below ``nbar0`` the self-energies are ``eps a_j`` and each excluded set is an
explicit interval in eps (:func:`closed_form_exclusions`).  From ``nbar0`` on
they come from a ladder frozen at the midpoint of each partition piece,
``lam_bar_j(eps) ~ eps a_j + delta_j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from .errors import ConfigError, ExcludedEpsilonError, LadderError
from .hamiltonian import lattice_ball
from .multiscale import Ladder, ScaleContext

__all__ = [
    "ExclusionPiece",
    "ExclusionSet",
    "Verdict",
    "partition_interval",
    "exclusion_set",
    "closed_form_exclusions",
    "a2_constant",
    "measure_bound",
    "lattice_sum",
    "admissible",
    "small_nu_threshold",
    "piece_shifts",
    "default_nu_max",
]

GRID = 10_000


@dataclass(frozen=True)
class ExclusionPiece:
    """One excluded eps-interval and the condition that produced it.

    The violated quantity is ``| |x| - S |`` with ``S = sqrt(lam_j)`` (``i`` is
    None) or ``S = sqrt(lam_j) + sign * sqrt(lam_i)``; labels are 1-based.
    """

    m: int
    nu: tuple
    sign: int
    j: int
    i: int | None
    lo: float
    hi: float

    @property
    def length(self):
        return self.hi - self.lo

    @property
    def signs(self):
        """Sign pattern of ``x +- sqrt(lam_j) +- sqrt(lam_i)`` that comes close to zero."""
        if self.i is None:
            return "-"
        return "-" + ("-" if self.sign > 0 else "+")


@dataclass
class ExclusionSet:
    """Union of excluded open eps-intervals inside ``I_C`` for one scale."""

    m: int
    I_C: tuple
    pieces: list
    intervals: list = field(default_factory=list)
    witnesses: list = field(default_factory=list)
    lipschitz: float = 0.0
    nu_max: int = 0
    tail_bound: float = 0.0

    def __post_init__(self):
        if not self.intervals and self.pieces:
            self._merge()

    def _merge(self):
        items = sorted(self.pieces, key=lambda p: (p.lo, p.hi))
        merged, wit = [], []
        for p in items:
            if merged and p.lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], p.hi)
            else:
                merged.append([p.lo, p.hi])
                wit.append(p)
        self.intervals = [tuple(iv) for iv in merged]
        self.witnesses = wit

    @property
    def measure(self):
        return math.fsum(hi - lo for lo, hi in self.intervals)

    @property
    def fraction(self):
        return self.measure / (self.I_C[1] - self.I_C[0])

    def contains(self, eps):
        return any(lo < eps < hi for lo, hi in self.intervals)

    def rows(self):
        """CSV rows ``(m, nu, signs, j, i, eps_lo, eps_hi, length)`` sorted by ``eps_lo``."""
        out = []
        for p in sorted(self.pieces, key=lambda p: (p.lo, p.hi, p.nu, p.j, p.i or 0, p.sign)):
            out.append((p.m, " ".join(map(str, p.nu)), p.signs, p.j, "" if p.i is None else p.i,
                        repr(p.lo), repr(p.hi), repr(p.length)))
        return out


def partition_interval(ctx):
    """Uniform partition of ``I_C`` into at most ``ceil(6 / rho)`` pieces."""
    return ctx.partition()


def _half_lattice(r, nu_max):
    """Nonzero vectors up to sign (first nonzero entry positive), by norm."""
    ball = lattice_ball(r, nu_max)
    if len(ball) == 0:
        return ball
    first = np.array([row[np.nonzero(row)[0][0]] for row in ball])
    return ball[first > 0]


def _threshold_scale(m, ctx):
    if m <= ctx.nbar0 - 1:
        return 2.0 ** (-(ctx.nbar0 - 1) / 2)
    return 2.0 ** (-m / 2)


def _combos(model):
    """``(j, i, sign)`` triples: ``i`` None for a single root; labels 1-based."""
    r, s = model.r, model.s
    out = []
    for j in range(r + 1, r + s + 1):
        out.append((j, None, 0))
    for j in range(r + 1, r + s + 1):
        for i in range(r + 1, j + 1):
            out.append((j, i, +1))
            if i != j:
                out.append((j, i, -1))
    return out


def _lattice_data(model, nu_max):
    nus = _half_lattice(model.r, nu_max)
    x = np.abs(nus @ model.rotation.array) if len(nus) else np.zeros(0)
    norms = np.abs(nus).sum(axis=1) if len(nus) else np.zeros(0)
    return nus, x, norms


def _S(eps, slopes, shifts, j, i, sign):
    lj = np.sqrt(np.maximum(eps * slopes[j - 1] + shifts[j - 1], 0.0))
    if i is None:
        return lj
    li = np.sqrt(np.maximum(eps * slopes[i - 1] + shifts[i - 1], 0.0))
    return lj + sign * li


def closed_form_exclusions(m, ctx, nu_max=None):
    """Excluded intervals below ``nbar0`` where ``S = c sqrt(eps)`` exactly."""
    if m >= ctx.nbar0:
        raise ValueError("closed form only holds below nbar0")
    model = ctx.model
    nu_max = default_nu_max(ctx) if nu_max is None else nu_max
    slopes = ctx.reference_slopes
    lo_c, hi_c = ctx.I_C
    nus, x, norms = _lattice_data(model, nu_max)
    theta = _threshold_scale(m, ctx) * ctx.C0 / norms**ctx.tau1
    pieces = []
    for j, i, sign in _combos(model):
        c = math.sqrt(slopes[j - 1]) + (0.0 if i is None else sign * math.sqrt(slopes[i - 1]))
        if c == 0:
            continue
        c = abs(c)
        a = (np.maximum(x - theta, 0.0) / c) ** 2
        b = ((x + theta) / c) ** 2
        for k in np.nonzero((b > lo_c) & (a < hi_c))[0]:
            pieces.append(ExclusionPiece(m, tuple(int(v) for v in nus[k]), sign, j, i,
                                         max(float(a[k]), lo_c), min(float(b[k]), hi_c)))
    return ExclusionSet(m, ctx.I_C, pieces, nu_max=nu_max)


def _piece_exclusions(m, ctx, nus, x, theta, lo, hi, shifts, npts):
    """Grid scan plus bisection on one partition piece with frozen shifts."""
    slopes = ctx.reference_slopes
    grid = np.linspace(lo, hi, npts)
    out = []
    for j, i, sign in _combos(ctx.model):
        S = _S(grid, slopes, shifts, j, i, sign)
        dS = np.diff(S)
        if np.any(dS > 0) and np.any(dS < 0):
            raise LadderError(f"non-monotone self-energy combination on ({lo:.6g}, {hi:.6g}); refine the grid")
        smin, smax = float(S.min()), float(S.max())
        cand = np.nonzero((x + theta > smin) & (x - theta < smax))[0]
        increasing = S[-1] >= S[0]

        def f(e, target):
            return float(_S(e, slopes, shifts, j, i, sign)) - target

        def crossing(target):
            # eps where S = target, clipped to the piece
            if target <= smin:
                return lo if increasing else hi
            if target >= smax:
                return hi if increasing else lo
            k = int(np.searchsorted(S if increasing else -S, target if increasing else -target))
            k = min(max(k, 1), npts - 1)
            a, b = grid[k - 1], grid[k]
            if f(a, target) * f(b, target) > 0:
                return a if abs(f(a, target)) < abs(f(b, target)) else b
            return bisect(f, a, b, args=(target,), xtol=1e-12 * abs(b), rtol=4 * np.finfo(float).eps)

        for k in cand:
            e1 = crossing(x[k] - theta[k])
            e2 = crossing(x[k] + theta[k])
            a, b = min(e1, e2), max(e1, e2)
            if b > a:
                out.append(ExclusionPiece(m, tuple(int(v) for v in nus[k]), sign, j, i, float(a), float(b)))
    return out


def piece_shifts(ctx, m_max, K_SE=4):
    """Self-energy shifts ``lam_bar^[m] - eps a`` at each partition midpoint.

    Returns ``{m: [d-vector per piece]}`` for ``nbar0 <= m <= m_max``; one
    ladder per piece serves every scale.
    """
    out = {m: [] for m in range(ctx.nbar0, m_max + 1)}
    if not out:
        return out
    for lo, hi in partition_interval(ctx):
        mid = 0.5 * (lo + hi)
        lad = Ladder(ScaleContext.build(ctx.model, mid, n0=ctx.n0), K_SE=K_SE, N_max=m_max)
        for m in out:
            out[m].append(lad.lam_bar(m) - lad.ctx.lam0)
    return out


def default_nu_max(ctx, floor=40):
    """Lattice radius reaching well past the smallest norm that can violate."""
    return max(floor, int(math.ceil(4 * small_nu_threshold(ctx))))


def exclusion_set(m, ctx, nu_max=None, K_SE=4, shifts=None):
    """Excluded eps-intervals for scale ``m`` (grid scan plus bisection).

    ``shifts`` may supply the per-piece shifts (see :func:`piece_shifts`)
    for ``m >= nbar0``; otherwise the midpoint ladders are built here.
    """
    model = ctx.model
    nu_max = default_nu_max(ctx) if nu_max is None else nu_max
    if model.s == 0:
        return ExclusionSet(m, ctx.I_C, [], nu_max=nu_max)
    nus, x, norms = _lattice_data(model, nu_max)
    theta = _threshold_scale(m, ctx) * ctx.C0 / norms**ctx.tau1
    lo_c, hi_c = ctx.I_C
    d = model.d
    pieces, lip = [], 0.0
    if m < ctx.nbar0:
        pieces = _piece_exclusions(m, ctx, nus, x, theta, lo_c, hi_c, np.zeros(d), GRID + 1)
    else:
        parts = partition_interval(ctx)
        if shifts is None:
            shifts = piece_shifts(ctx, m, K_SE)[m]
        npts = max(8, GRID // len(parts) + 1)
        prev = None
        for k, (lo, hi) in enumerate(parts):
            mid = 0.5 * (lo + hi)
            sh = np.asarray(shifts[k], float)
            if prev is not None:
                lip = max(lip, float(np.max(np.abs(sh - prev[1]))) / (mid - prev[0]))
            prev = (mid, sh)
            pieces += _piece_exclusions(m, ctx, nus, x, theta, lo, hi, sh, npts)
    ex = ExclusionSet(m, ctx.I_C, pieces, lipschitz=lip, nu_max=nu_max)
    ex.tail_bound = _tail_bound(m, ctx, nu_max)
    return ex


def lattice_count(r, n):
    """Number of integer r-vectors with l1 norm exactly ``n >= 1``."""
    return sum(2**k * math.comb(r, k) * math.comb(n - 1, k - 1) for k in range(1, min(r, n) + 1))


def lattice_sum(r, power, start=1, stop=20_000):
    """``sum_{|nu| >= start} |nu|^{-power}`` over nonzero nu in Z^r, with an integral tail."""
    total = math.fsum(lattice_count(r, n) * n ** (-power) for n in range(start, stop))
    # count ~ 2^r n^{r-1} / (r-1)!, so the tail is bounded by
    # lead * int_{stop-1}^inf t^{r-1-power} dt
    lead = 2**r / math.factorial(r - 1)
    excess = power - r
    tail = lead * (stop - 1) ** (-excess) / excess * 1.01 if excess > 0 else math.inf
    return total + tail


def a2_constant(ctx):
    """``K = 4 K0 sqrt(rho') sum_{nu != 0} |nu|^{-(r+1)}`` with ``rho' = 1``."""
    spec = ctx.model.spectrum
    s = spec.s
    if s == 0:
        return 0.0
    roots = [math.sqrt(a) for a in spec.a]
    cand = [roots[0]] + [abs(p - q) for k, p in enumerate(roots) for q in roots[:k]]
    rho = min(cand) / (2 * math.sqrt(spec.a_s))
    K0 = s / (spec.a_s * rho)
    K = 4 * K0 * lattice_sum(ctx.model.r, ctx.model.r + 1)
    if ctx.nbar0 < 3:
        K *= 4
    return K


def measure_bound(m, ctx):
    """Upper bound ``K 2^{-m'/2} C^2`` on the excluded measure, ``m' = max(m, nbar0 - 1)``."""
    mm = max(m, ctx.nbar0 - 1)
    return a2_constant(ctx) * 2.0 ** (-mm / 2) * ctx.C**2


def _tail_bound(m, ctx, nu_max):
    spec = ctx.model.spectrum
    if spec.s == 0:
        return 0.0
    K = a2_constant(ctx) / (4 * lattice_sum(ctx.model.r, ctx.model.r + 1))
    tail = lattice_sum(ctx.model.r, ctx.tau1, start=nu_max + 1)
    return _threshold_scale(m, ctx) * ctx.C * ctx.C0 * K * tail


def small_nu_threshold(ctx, eps=None):
    """Norm below which no violation can occur (the argument needs ``nbar0 >= 3``)."""
    eps = ctx.I_C[1] if eps is None else eps
    if ctx.nbar0 < 3 or ctx.tau0 == 0:
        return 1.0
    return (ctx.C0 / (4 * math.sqrt(eps * ctx.model.spectrum.a_s))) ** (1 / ctx.tau0)


@dataclass(frozen=True)
class Verdict:
    ok: bool
    witness: dict | None = None

    def __bool__(self):
        return self.ok


def _check_at(m, ctx, lam, nu_max):
    model = ctx.model
    nus, x, norms = _lattice_data(model, nu_max)
    theta = _threshold_scale(m, ctx) * ctx.C0 / norms**ctx.tau1
    best = None
    for j, i, sign in _combos(model):
        S = math.sqrt(max(lam[j - 1], 0.0))
        if i is not None:
            S += sign * math.sqrt(max(lam[i - 1], 0.0))
        gap = np.abs(x - S)
        bad = np.nonzero(gap < theta)[0]
        if len(bad):
            k = int(bad[0])
            cand = (k, j, i or 0, sign)
            if best is None or cand < best[0]:
                best = (cand, {"m": m, "nu": tuple(int(v) for v in nus[k]), "j": j, "i": i,
                               "sign": sign, "gap": float(gap[k]), "threshold": float(theta[k]),
                               "eps": ctx.eps})
    return None if best is None else best[1]


def admissible(eps, ctx=None, ladder=None, N_scales=None, nu_max=None, model=None, K_SE=4):
    """Whether ``eps`` avoids every excluded set up to scale ``N_scales``.

    Returns a :class:`Verdict` whose witness names the first violated
    condition (lowest scale, then lowest ``|nu|``).
    """
    if ctx is None:
        if model is None:
            raise ConfigError("admissible needs a context or a model")
        ctx = ScaleContext.build(model, eps)
    elif ctx.eps != eps:
        ctx = ScaleContext.build(ctx.model, eps, n0=ctx.n0)
    if ctx.model.s == 0:
        return Verdict(True)
    nu_max = default_nu_max(ctx) if nu_max is None else nu_max
    N_scales = ctx.nbar0 + 2 if N_scales is None else N_scales
    first = ctx.nbar0 - 1
    wit = _check_at(first, ctx, ctx.lam0, nu_max)
    if wit is not None:
        return Verdict(False, wit)
    if N_scales < ctx.nbar0:
        return Verdict(True)
    if ladder is None:
        try:
            ladder = Ladder(ctx, K_SE=K_SE, N_max=N_scales)
        except ExcludedEpsilonError as exc:
            return Verdict(False, dict(exc.witness or {}, m=None))
    for m in range(ctx.nbar0, N_scales + 1):
        wit = _check_at(m, ctx, ladder.lam_bar(m), nu_max)
        if wit is not None:
            return Verdict(False, wit)
    return Verdict(True)
