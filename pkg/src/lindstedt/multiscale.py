"""
Multiscale resummation of the Lindstedt series.

Every line with nonzero momentum gets a scale label ``n >= 0``.  Its
propagator is

    g^[n](x) = Psi_n(x) (x^2 - M^[<=n](x; eps))^{-1},
    Psi_n(x) = psi_n(Delta^[n](x)) prod_{m<n} chi_m(Delta^[m](x)),

where ``M^[<=n] = M0 + M^[1] + ... + M^[n]`` collects self-energy clusters
of scale ``n - 1`` and ``Delta^[n]`` is the distance of ``x^2`` from the
reference eigenvalues (the interval-wise gap ``D`` below ``nbar0``, the
self-energies ``lam_bar^[n]`` from ``nbar0`` on).  Zero-momentum lines
keep the bare propagator ``-(1/eps) H^{-1}`` and the label ``inf``.

Frequencies are addressed by *keys* ``(nu, shift)`` meaning
``x = omega.nu + shift``: lattice frequencies have ``shift = 0``, probe
frequencies (eigenvalue roots, fit grids) have ``nu = 0``.  A line inside a
self-energy cluster carries momentum ``nu0 + sigma * nu_ext`` and therefore
the key ``(nu0 + sigma nu_ext, sigma shift_ext)``.

A :class:`Ladder` built at complex ``eps`` with ``reference=`` reuses all
cutoff weights of a real ladder; with frozen weights every quantity is
analytic in ``eps``, which is what the Taylor-consistency check needs.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ExcludedEpsilonError, LadderError
from .hamiltonian import lattice_norm
from .trees import RENORMALIZED, FlatTree, NodeTable, _multisets, shape_store

__all__ = [
    "CutoffFamily",
    "ScaleContext",
    "Ladder",
    "LadderStats",
    "ClusterShape",
    "Cluster",
    "ClusterDecomposition",
    "cutoff",
    "resonance_gap",
    "propagator_divisor",
    "propagator",
    "detect_clusters",
    "self_energy_value",
    "advance_self_energy",
    "renormalized_h",
    "renormalized_table",
    "cluster_shapes",
]

INF = math.inf


# ---------------------------------------------------------------------------
# cutoffs


class CutoffFamily:
    """Smooth step ``psi`` from 0 at ``C0^2/4`` to 1 at ``C0^2``; ``chi = 1 - psi``.

    The profile is the quintic smoothstep ``10t^3 - 15t^4 + 6t^5`` in
    ``t = log2(4 D / C0^2) / 2``, so it is C^2 with exact support endpoints.
    ``psi_n(D) = psi(4^n D)``.
    """

    def __init__(self, C0):
        if not C0 > 0:
            raise ConfigError("C0 must be positive")
        self.C0 = float(C0)
        self.lo = self.C0**2 / 4
        self.hi = self.C0**2

    def psi(self, D, n=0):
        if isinstance(D, np.ndarray):
            return np.vectorize(lambda v: self.psi(float(v), n), otypes=[float])(D)
        y = math.ldexp(float(D), 2 * n)
        if y >= self.hi:
            return 1.0
        if y <= self.lo:
            return 0.0
        t = 0.5 * math.log2(y / self.lo)
        return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))

    def chi(self, D, n=0):
        if isinstance(D, np.ndarray):
            return 1.0 - self.psi(D, n)
        return 1.0 - self.psi(D, n)


def cutoff(kind, n, D, C0):
    """``psi_n(D)`` or ``chi_n(D)`` for the family with constant ``C0``."""
    fam = CutoffFamily(C0)
    if kind == "psi":
        return fam.psi(D, n)
    if kind == "chi":
        return fam.chi(D, n)
    raise ValueError(f"unknown cutoff kind {kind!r}")


# ---------------------------------------------------------------------------
# scale context


def _partition(eps_min, rho):
    """Uniform split of ``(eps_min, 4 eps_min]`` into pieces shorter than ``eps_min rho / 2``."""
    count = max(1, math.ceil(6.0 / rho - 1e-12))
    width = 3.0 * eps_min / count
    edges = [eps_min + i * width for i in range(count)] + [4.0 * eps_min]
    return [(edges[i], edges[i + 1]) for i in range(count)]


@dataclass(frozen=True)
class ScaleContext:
    """Scale data at a fixed ``eps``.

    ``n0`` brackets ``eps a_s`` in ``(C^2/4, C^2]`` with ``C = C0 2^{-n0}``;
    ``nbar0 = n0 + nbar``; ``interval`` is the partition piece containing
    ``eps``.
    """

    model: object
    eps: float
    n0: int
    nbar: int
    nbar0: int
    C0: float
    tau0: float
    tau1: float
    eps_min: float
    interval: tuple
    interval_index: int
    n_intervals: int
    cutoff: CutoffFamily

    @classmethod
    def build(cls, model, eps, n0=None, interval=None):
        eps = float(eps)
        if not (eps > 0 and math.isfinite(eps)):
            raise ConfigError(f"eps must be positive and finite, got {eps!r}")
        rot, spec = model.rotation, model.spectrum
        a_s = spec.a_s
        ratio = rot.C0**2 / (eps * a_s)
        if ratio < 1.0:
            raise ConfigError(f"eps a_s = {eps * a_s:.6g} exceeds C0^2 = {rot.C0**2:.6g}")
        n0_eps = int(math.floor(math.log(ratio, 4) + 1e-12))
        # fix rounding at the bracket edges
        while n0_eps > 0 and not (eps * a_s <= (rot.C0 * 2.0**-n0_eps) ** 2):
            n0_eps -= 1
        while eps * a_s <= (rot.C0 * 2.0 ** -(n0_eps + 1)) ** 2:
            n0_eps += 1
        if n0 is not None and int(n0) != n0_eps:
            raise ConfigError(f"n0={n0} inconsistent with eps={eps!r} (bracketing gives n0={n0_eps})")
        C = rot.C0 * 2.0**-n0_eps
        eps_min = C**2 / (4 * a_s)
        pieces = _partition(eps_min, spec.rho)
        if interval is None:
            idx = min(len(pieces) - 1, max(0, math.ceil((eps - eps_min) / (pieces[0][1] - pieces[0][0])) - 1))
            interval = pieces[idx]
        else:
            idx = -1
            interval = (float(interval[0]), float(interval[1]))
        return cls(model, eps, n0_eps, spec.nbar, n0_eps + spec.nbar, rot.C0, rot.tau0,
                   rot.tau0 + model.r + 1, eps_min, interval, idx, len(pieces), CutoffFamily(rot.C0))

    @property
    def lam0(self):
        """Unperturbed eigenvalues ``(0,..,0, eps a_1, .., eps a_s)``."""
        return self.eps * self.reference_slopes

    @property
    def reference_slopes(self):
        return np.concatenate([np.zeros(self.model.r), np.asarray(self.model.spectrum.a, float)])

    @property
    def C(self):
        return self.C0 * 2.0**-self.n0

    @property
    def I_C(self):
        return (self.eps_min, 4 * self.eps_min)

    def partition(self):
        return _partition(self.eps_min, self.model.spectrum.rho)

    def counting_constant(self, m):
        """``E_m`` of the line-counting bound ``N_m <= max(E_m sum|nu_v| - 1, 0)``."""
        if m <= self.nbar0:
            if self.tau0 == 0:
                return INF
            return 2.0 * 2.0 ** ((self.nbar + 4) / self.tau0) * 2.0 ** (-m / self.tau0)
        return 2.0 ** ((6 - m) / (2 * self.tau1))

    def cluster_harmonic_floor(self, n):
        """Lower bound on ``sum |nu_v|`` of a cluster feeding ``M^[n]`` (strict above nbar0)."""
        if n <= self.nbar0:
            if self.tau0 == 0:
                return 0.0
            return 2.0 ** ((n - self.nbar - 5) / self.tau0)
        return 2.0 ** ((n - 6) / (2 * self.tau1))


def resonance_gap(x, ctx):
    """``(D(x; I), j(x))`` with ``j`` a 1-based label (smallest on ties)."""
    x2 = float(x) ** 2
    lo, hi = ctx.interval
    best, jbest = INF, 0
    for j, a in enumerate(ctx.reference_slopes):
        if a == 0:
            val = x2
        elif lo * a <= x2 <= hi * a:
            val = 0.0
        else:
            val = min(abs(x2 - lo * a), abs(x2 - hi * a))
        if val < best:
            best, jbest = val, j
    return best, jbest + 1


# ---------------------------------------------------------------------------
# self-energy cluster shapes


@dataclass
class ClusterShape:
    """A renormalized self-energy cluster shape with a marked entry node.

    Nodes are in post-order with the exit node last.  ``nu0[i]`` is the
    lattice part of the momentum of the line leaving node ``i`` and
    ``sigma[i]`` is 1 when that line also carries the external momentum.
    """

    flat: FlatTree
    entry: int
    nu0: tuple
    sigma: tuple
    order: int
    aut: int
    harmonic_sum: int
    pairs: list

    def inner_keys(self, key):
        """Keys of the inner lines (non-exit nodes), or None if one has zero momentum."""
        nu_ext, shift = key
        out = []
        for i in range(self.order - 1):
            if self.sigma[i]:
                lat = tuple(a + b for a, b in zip(self.nu0[i], nu_ext))
                k = (lat, shift)
            else:
                k = (self.nu0[i], 0.0)
            if not any(k[0]) and k[1] == 0.0:
                return None
            out.append(k)
        return out


def _se_pairs(parent, mom, entry=None):
    """Candidate self-energy regions ``(u, w, region_lines)``.

    ``mom[i]`` is a hashable momentum for the line leaving node ``i`` (None
    for zero momentum).  A region is everything above line ``u`` and below
    line ``w``; it is a self-energy cluster exactly when its lines all have
    scales below both ``u`` and ``w``.  With ``entry`` set, index ``n`` is
    an external line entering node ``entry`` and ``u = n - 1`` stands for
    the external exit line.
    """
    n = len(parent)
    sub = [{i} for i in range(n)]
    for i in range(n):  # post-order: children first
        p = parent[i]
        if p >= 0:
            sub[p] |= sub[i]
    pairs = []
    for u in range(n):
        if mom[u] is None:
            continue
        cands = [w for w in sorted(sub[u]) if w != u]
        if entry is not None and entry in sub[u]:
            cands.append(n)
        for w in cands:
            if entry is not None and u == n - 1 and w == n:
                continue
            if mom[w] != mom[u]:
                continue
            region = sub[u] - (sub[w] if w < n else set())
            if entry is not None and w != n and entry in region:
                continue
            if len(region) < 2:
                continue
            lines = sorted(region - {u})
            if any(mom[i] is None for i in lines):
                continue
            pairs.append((u, w, np.array(lines, dtype=np.int64)))
    return pairs


def _has_se(pairs, scales):
    for u, w, lines in pairs:
        if scales[lines].max() < min(scales[u], scales[w]):
            return True
    return False


class _ClusterStore:
    def __init__(self, model, K_SE):
        self.K_SE = K_SE
        base = shape_store(model, RENORMALIZED, max(1, K_SE - 1))
        self.base = base
        harmonics = base.harmonics
        r = base.r
        zero = (0,) * r
        unmarked = [i for i in range(len(base)) if base.zeros[i] == 0 and base.order[i] <= K_SE - 1]
        unmarked.sort(key=lambda i: (base.order[i], i))
        # marked shapes: (h, kids, mchild)
        self.h, self.kids, self.mchild, self.order, self.nu0, self.aut = [], [], [], [], [], []
        by_order = defaultdict(list)
        for n in range(1, K_SE + 1):
            mcands = [None] + [m for o in range(1, n) for m in by_order[o]]
            for mc in mcands:
                rem = n - 1 - (self.order[mc] if mc is not None else 0)
                pool = [i for i in unmarked if base.order[i] <= rem]
                for kids in _multisets(pool, base.order, base.degree, rem, rem):
                    kids = tuple(sorted(kids))
                    for h, nu in enumerate(harmonics):
                        if nu == zero and not kids:
                            continue  # trivial node
                        mom = [nu[c] + sum(base.momentum[k][c] for k in kids) for c in range(r)]
                        if mc is not None:
                            mom = [a + b for a, b in zip(mom, self.nu0[mc])]
                        aut = 1
                        for k in set(kids):
                            m = kids.count(k)
                            aut *= base.aut[k] ** m * math.factorial(m)
                        if mc is not None:
                            aut *= self.aut[mc]
                        sid = len(self.h)
                        self.h.append(h)
                        self.kids.append(kids)
                        self.mchild.append(mc)
                        self.order.append(n)
                        self.nu0.append(tuple(mom))
                        self.aut.append(aut)
                        by_order[n].append(sid)
        self.shapes = []
        for n in range(2, K_SE + 1):
            for sid in by_order[n]:
                if self.nu0[sid] == zero:
                    self.shapes.append(self._flatten(sid))

    def _flatten(self, sid):
        base = self.base
        hidx, parent, harms, nu0, sigma, kids_of = [], [], [], [], [], []
        entry = [None]

        def add(h, lat, sg, mine):
            i = len(hidx)
            hidx.append(h)
            harms.append(base.harmonics[h])
            nu0.append(tuple(lat))
            sigma.append(sg)
            parent.append(-1)
            kids_of.append(mine)
            for c in mine:
                parent[c] = i
            return i

        def visit_unmarked(s):
            mine = [visit_unmarked(c) for c in base.children[s]]
            return add(base.harm[s], base.momentum[s], 0, mine)

        def visit_marked(s):
            mine = [visit_unmarked(c) for c in self.kids[s]]
            if self.mchild[s] is not None:
                mine.append(visit_marked(self.mchild[s]))
            i = add(self.h[s], self.nu0[s], 1, mine)
            if self.mchild[s] is None:
                entry[0] = i
            return i

        visit_marked(sid)
        flat = FlatTree.from_lists(hidx, parent, harms, nu0, kids_of)
        n = len(hidx)
        mom = [(nu0[i], sigma[i]) if (sigma[i] or any(nu0[i])) else None for i in range(n)]
        mom.append((tuple(0 for _ in nu0[0]), 1))
        pairs = _se_pairs(parent, mom, entry=entry[0])
        hsum = sum(lattice_norm(h) for h in harms)
        return ClusterShape(flat, entry[0], tuple(nu0), tuple(sigma), n, self.aut[sid], hsum, pairs)


_CLUSTER_CACHE = {}


def cluster_shapes(model, K_SE):
    """All renormalized self-energy cluster shapes of order ``2..K_SE``."""
    key = (tuple(model.f.harmonics), K_SE)
    if key not in _CLUSTER_CACHE:
        _CLUSTER_CACHE[key] = _ClusterStore(model, K_SE).shapes
    return _CLUSTER_CACHE[key]


# ---------------------------------------------------------------------------
# ladder


@dataclass
class LadderStats:
    """Running certificate data gathered while the ladder and trees are evaluated."""

    trees_checked: int = 0
    counting_violations: int = 0
    clusters_checked: int = 0
    cluster_bound_violations: int = 0
    worst_counting_margin: float = INF
    worst_cluster_margin: float = INF
    null_block: float = 0.0
    crossings: int = 0
    two_value_violations: int = 0
    regime_violations: int = 0
    regime_checked: int = 0
    divisor_violations: int = 0
    divisor_checked: int = 0
    unity_deviation: float = 0.0
    unity_checked: int = 0
    notes: list = field(default_factory=list)


def _zero_key(key):
    return not any(key[0]) and key[1] == 0.0


def _herm(A):
    return 0.5 * (A + A.conj().T)


class Ladder:
    """Self-energy matrices ``M^[n](x)`` and self-energies ``lam_bar^[n]``.

    Parameters
    ----------
    ctx : ScaleContext
    K_SE : int
        Largest self-energy cluster order.
    N_max : int, optional
        Deepest scale (default ``nbar0 + 3``).
    eps : complex, optional
        Evaluation point; defaults to ``ctx.eps``.  Only meaningful together
        with ``reference``.
    reference : Ladder, optional
        Real ladder whose cutoff weights and self-energies are reused.
    """

    def __init__(self, ctx, K_SE=4, N_max=None, eps=None, reference=None, fixed_point_tol=1e-14):
        if K_SE < 1:
            raise ConfigError("K_SE must be at least 1")
        self.ctx = ctx
        self.model = ctx.model
        self.K_SE = K_SE
        self.N_max = ctx.nbar0 + 3 if N_max is None else int(N_max)
        if self.N_max < 0:
            raise ConfigError("N_max must be non-negative")
        self.eps = ctx.eps if eps is None else eps
        if reference is None and eps is not None and eps != ctx.eps:
            raise ValueError("a ladder at a different eps needs a reference ladder")
        self.reference = reference
        self._book = reference if reference is not None else self
        self.table = NodeTable(self.model)
        self.clusters = cluster_shapes(self.model, K_SE)
        d = self.model.d
        self.M0 = self.eps * self.model.hessian_ext.astype(complex)
        self._eye = np.eye(d)
        self.stats = LadderStats()
        self.tol = fixed_point_tol
        self._raw, self._prop, self._wt, self._scales = {}, {}, {}, {}
        self._corrupt = {}
        if reference is not None:
            self._lam = reference._lam
            self._pending = reference._pending
        else:
            self._lam = []
            self._pending = 0
            self._advance()

    # -- frequencies and cutoffs (read from the book ladder) --

    def frequency(self, key):
        nu, shift = key
        return self.model.frequency(nu) + shift if any(nu) else float(shift)

    def lam_bar(self, n):
        if n < self.ctx.nbar0:
            return self.ctx.lam0
        if n >= len(self._lam):
            raise LadderError(f"self-energies on scale {n} are not available (ladder depth {len(self._lam) - 1})")
        return self._lam[n]

    def divisor(self, n, key):
        x = self.frequency(key)
        if n < self.ctx.nbar0:
            return resonance_gap(x, self.ctx)[0]
        lam = self.lam_bar(n)
        x2 = x * x
        return float(min(abs(x2 - v) for v in lam))

    def weight(self, n, key):
        """``Psi_n(x) = psi_n(Delta^[n]) prod_{m<n} chi_m(Delta^[m])``."""
        if self._book is not self:
            return self._book.weight(n, key)
        memo = (n, key)
        if memo in self._wt:
            return self._wt[memo]
        cut = self.ctx.cutoff
        w = cut.psi(self.divisor(n, key), n)
        m = 0
        while w != 0.0 and m < n:
            w *= cut.chi(self.divisor(m, key), m)
            m += 1
        if n < self._pending:
            self._wt[memo] = w
        return w

    def prefactor(self, n, key):
        """Cutoff product in front of ``M^[n]``: to ``n-1`` up to ``nbar0``, to ``n`` above."""
        if self._book is not self:
            return self._book.prefactor(n, key)
        cut = self.ctx.cutoff
        top = n - 1 if n <= self.ctx.nbar0 else n
        w = 1.0
        for m in range(top + 1):
            w *= cut.chi(self.divisor(m, key), m)
            if w == 0.0:
                break
        return w

    def scales(self, key):
        """Scales with nonzero weight for a line of key ``key`` (all of them)."""
        if self._book is not self:
            return self._book.scales(key)
        if key in self._scales:
            return self._scales[key]
        if _zero_key(key):
            return [INF]
        cut = self.ctx.cutoff
        out, ws = [], []
        tail = 1.0
        for n in range(self.N_max + 1):
            Dn = self.divisor(n, key)
            w = tail * cut.psi(Dn, n)
            if w != 0.0:
                out.append(n)
                ws.append(w)
            tail *= cut.chi(Dn, n)
            if tail == 0.0:
                break
        if tail != 0.0:
            raise LadderError(
                f"frequency {self.frequency(key):.6g} (nu={key[0]}) needs scales beyond N_max={self.N_max}")
        st = self.stats
        st.unity_checked += 1
        dev = abs(math.fsum(ws) - 1.0)
        st.unity_deviation = max(st.unity_deviation, dev)
        if len(out) > 2 or (len(out) == 2 and out[1] != out[0] + 1):
            st.two_value_violations += 1
        self._scales[key] = out
        return out

    def unity_sum(self, key):
        """``sum_n Psi_n(x)`` over the nonzero terms (exactly one in exact arithmetic)."""
        return math.fsum(self.weight(n, key) for n in self.scales(key))

    # -- matrices --

    def raw(self, n, key):
        """Sum of self-energy values of clusters on scale ``n - 1`` (no cutoff prefactor)."""
        memo = (n, key)
        if memo in self._raw:
            return self._raw[memo]
        d = self.model.d
        total = np.zeros((d, d), dtype=complex)
        book = self._book
        eps = self.eps
        check = self.reference is None
        for cl in self.clusters:
            keys = cl.inner_keys(key)
            if keys is None:
                continue
            cands = []
            for k in keys:
                c = [p for p in range(n) if book.weight(p, k) != 0.0]
                if not c:
                    break
                cands.append(c)
            else:
                if max(c[-1] for c in cands) < n - 1:
                    continue
                assigns = []
                for a in itertools.product(*cands):
                    if max(a) != n - 1:
                        continue
                    sc = np.array(list(a) + [INF, INF], dtype=float)
                    if cl.pairs and _has_se(cl.pairs, sc):
                        continue
                    assigns.append(a)
                if not assigns:
                    continue
                props = np.zeros((len(assigns), cl.order, d, d), dtype=complex)
                for ai, a in enumerate(assigns):
                    for i, p in enumerate(a):
                        props[ai, i] = self.propagator(p, keys[i])
                vals = cl.flat.contract(self.table, props, apply_root=False, entry=cl.entry)
                total += eps**cl.order / cl.aut * vals.sum(axis=0)
                if check:
                    for a in assigns:
                        self._check_cluster(n, cl, a)
        self._raw[memo] = total
        return total

    def _check_cluster(self, n, cl, assign):
        st = self.stats
        ctx = self.ctx
        st.clusters_checked += 1
        floor = ctx.cluster_harmonic_floor(n)
        margin = cl.harmonic_sum - floor
        ok = margin > 0 if n > ctx.nbar0 else margin >= 0
        if not ok:
            st.cluster_bound_violations += 1
        st.worst_cluster_margin = min(st.worst_cluster_margin, margin)
        self._check_counting(assign, cl.harmonic_sum)

    def _check_counting(self, scales, hsum):
        st = self.stats
        st.trees_checked += 1
        counts = defaultdict(int)
        for s in scales:
            if s != INF:
                counts[s] += 1
        for m, N in counts.items():
            bound = max(self.ctx.counting_constant(m) * hsum - 1, 0.0)
            st.worst_counting_margin = min(st.worst_counting_margin, bound - N)
            if N > bound:
                st.counting_violations += 1

    def M(self, n, key):
        """``M^[n](x)`` including its cutoff prefactor."""
        if n == 0:
            return self.M0
        pre = self.prefactor(n, key)
        out = np.zeros_like(self.M0) if pre == 0.0 else pre * self.raw(n, key)
        bump = self._corrupt.get(n)
        if bump is not None:
            out = out + bump
        return out

    def M_le(self, n, key):
        """``M^[<=n](x) = sum_{m<=n} M^[m](x)``."""
        out = self.M0.copy()
        for m in range(1, n + 1):
            out = out + self.M(m, key)
        return out

    def propagator(self, n, key):
        """Propagator of a line on scale ``n`` (``INF`` for zero momentum)."""
        if n == INF or _zero_key(key):
            return -self.model.hessian_inverse / self.eps
        memo = (n, key)
        if memo in self._prop:
            return self._prop[memo]
        d = self.model.d
        w = self._book.weight(n, key)
        if w == 0.0:
            out = np.zeros((d, d), dtype=complex)
        else:
            x = self.frequency(key)
            A = x * x * self._eye - self.M_le(n, key)
            sv = np.linalg.svd(A, compute_uv=False)
            if sv[-1] <= 1e-14 * max(1.0, sv[0]):
                raise ExcludedEpsilonError(
                    f"excluded eps: singular denominator on scale {n} at nu={key[0]}",
                    witness={"nu": key[0], "shift": key[1], "scale": n, "x": x, "eps": self.eps})
            if self.reference is None:
                self._check_denominator(n, key, x, A)
            out = w * np.linalg.inv(A)
        if n < self._pending:
            self._prop[memo] = out
        return out

    def _check_denominator(self, n, key, x, A):
        st = self.stats
        ctx = self.ctx
        smallest = float(np.min(np.abs(np.linalg.eigvalsh(_herm(A)))))
        if n <= ctx.nbar0:
            st.regime_checked += 1
            if smallest < 2.0 ** (-2 * (ctx.nbar + 2)) * x * x * (1 - 1e-12):
                st.regime_violations += 1
        if n >= ctx.nbar0:
            st.divisor_checked += 1
            a = ctx.model.spectrum.a
            ratio = math.sqrt(a[0] / a[-1]) if len(a) else 1.0
            if smallest < ratio / 8 * self.divisor(n, key) * (1 - 1e-12):
                st.divisor_violations += 1

    def eigenvalues(self, n, key):
        """Sorted eigenvalues of the Hermitian part of ``M^[<=n](x)``."""
        return np.linalg.eigvalsh(_herm(self.M_le(n, key)))

    # -- self-energy recursion --

    def _self_energies(self, n, prev):
        r, d = self.model.r, self.model.d
        lam0 = self.ctx.lam0
        slopes = self.ctx.reference_slopes
        seps = sorted(set(slopes.tolist()))
        gap = min(b - a for a, b in zip(seps, seps[1:])) * self.ctx.eps if len(seps) > 1 else INF
        out = np.zeros(d)
        for j in range(d):
            if prev[j] < 0:
                raise LadderError(f"self-energy {j + 1} on scale {n - 1} is negative: {prev[j]:.3e}")
            xs = math.sqrt(prev[j]) if j >= r else 0.0
            ev = self.eigenvalues(n, ((0,) * r, xs))
            val = float(ev[j])
            if np.any(np.abs(ev - lam0) > 0.5 * gap):
                self.stats.crossings += 1
            if j < r:
                self.stats.null_block = max(self.stats.null_block, abs(val) / self.ctx.eps)
                val = 0.0
            elif val < -1e-12 * self.ctx.eps:
                raise LadderError(f"self-energy {j + 1} on scale {n} is negative ({val:.3e}): eps too large")
            out[j] = val
        return out

    def _advance(self):
        lam0 = self.ctx.lam0
        for n in range(self.N_max + 1):
            self._pending = n
            if n < self.ctx.nbar0:
                self._lam.append(lam0.copy())
                continue
            prev = self._lam[n - 1] if n >= 1 else lam0
            self._lam.append(prev.copy())
            for _ in range(50):
                new = self._self_energies(n, prev)
                change = float(np.max(np.abs(new - self._lam[n])))
                self._lam[n] = new
                if change <= self.tol * max(1.0, float(np.max(np.abs(new)))) * self.ctx.eps:
                    break
            else:
                raise LadderError(f"self-energy fixed point on scale {n} did not converge")
        self._pending = self.N_max + 1

    # -- diagnostics --

    def corrupt(self, n, bump):
        """Add a fixed matrix to every ``M^[n]`` (fault injection for certificate tests)."""
        self._corrupt[n] = np.asarray(bump, dtype=complex)
        self._prop.clear()

    def keys(self):
        """Every frequency key whose self-energy sum has been computed, sorted."""
        return sorted({k for (_, k) in self._raw} | set(self._scales), key=lambda k: (k[0], k[1]))

    def dump_csv(self, keys=None):
        """Ladder table: one row per (scale, key); mirrored keys ``-x`` are included."""
        d = self.model.d
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["n", "nu", "shift", "x", "weight", "prefactor"]
        header += [f"M{a}{b}_{p}" for a in range(1, d + 1) for b in range(1, d + 1) for p in ("re", "im")]
        header += [f"eig{j}" for j in range(1, d + 1)] + [f"lam_bar{j}" for j in range(1, d + 1)]
        w.writerow(header)
        if keys is None:
            keys = self.keys()
            keys = sorted(set(keys) | {(tuple(-c for c in k[0]), -k[1] if k[1] else 0.0) for k in keys},
                          key=lambda k: (k[0], k[1]))
        for n in range(self.N_max + 1):
            lam = self.lam_bar(n)
            for key in keys:
                Mle = self.M_le(n, key)
                row = [n, " ".join(str(c) for c in key[0]), _g(key[1]), _g(self.frequency(key)),
                       _g(self.weight(n, key) if not _zero_key(key) else 0.0), _g(self.prefactor(n, key))]
                for a in range(d):
                    for b in range(d):
                        row += [_g(Mle[a, b].real), _g(Mle[a, b].imag)]
                row += [_g(v) for v in np.linalg.eigvalsh(_herm(Mle))] + [_g(v) for v in lam]
                w.writerow(row)
        return buf.getvalue()


def _g(v):
    v = float(v)
    if v == 0.0:
        return "0"
    return repr(v)


def propagator_divisor(n, x, ladder):
    """``Delta^[n](x)``: the interval gap below ``nbar0``, the self-energy gap from it on."""
    return ladder.divisor(n, ((0,) * ladder.model.r, float(x)))


def propagator(scale, nu, ladder, shift=0.0):
    """Propagator of a line with momentum ``nu`` on ``scale`` (``math.inf`` for zero momentum)."""
    return ladder.propagator(scale, (tuple(int(c) for c in nu), float(shift)))


def advance_self_energy(n, ladder):
    """``(M^[n] at every computed key, lam_bar^[n])`` for an advanced ladder."""
    if n > ladder.N_max:
        raise LadderError(f"scale {n} beyond N_max={ladder.N_max}")
    mats = {k: ladder.M(n, k) for k in ladder.keys()}
    return mats, ladder.lam_bar(n)


def self_energy_value(shape, scales, key, ladder):
    """Value of one self-energy cluster with given inner scales at frequency key ``key``.

    Returns the ``(d, d)`` matrix indexed by (exit label, entry label),
    including ``eps^k / |Aut|``.
    """
    d = ladder.model.d
    keys = shape.inner_keys(key)
    if keys is None:
        raise ValueError("cluster has a zero-momentum inner line at this key")
    props = np.zeros((1, shape.order, d, d), dtype=complex)
    for i, p in enumerate(scales):
        props[0, i] = ladder.propagator(p, keys[i])
    val = shape.flat.contract(ladder.table, props, apply_root=False, entry=shape.entry)[0]
    return ladder.eps**shape.order / shape.aut * val


# ---------------------------------------------------------------------------
# clusters of a scale-labelled tree


@dataclass(frozen=True)
class Cluster:
    scale: int
    nodes: frozenset
    lines: frozenset
    entering: tuple
    exiting: int | None
    self_energy: bool
    resummable: bool

    @property
    def order(self):
        return len(self.nodes)


@dataclass(frozen=True)
class ClusterDecomposition:
    clusters: tuple

    def self_energy_clusters(self):
        return [c for c in self.clusters if c.resummable]

    def children(self, cluster):
        """Maximal clusters strictly inside ``cluster``."""
        inner = [c for c in self.clusters if c.lines < cluster.lines]
        return [c for c in inner if not any(c.lines < o.lines for o in inner)]


def detect_clusters(flat, scales):
    """Clusters of a tree with line scales (``math.inf`` for zero momentum).

    Line ``i`` is the line leaving node ``i``; the root line connects the
    root node to the (non-node) root.  ``self_energy`` follows the literal
    definition; ``resummable`` additionally requires nonzero external
    momentum, which is the case removed from renormalized trees.
    """
    n = flat.n
    parent = [int(p) for p in flat.parent]
    finite = sorted({s for s in scales if s != INF})
    out = []
    for level in finite:
        members = [i for i in range(n) if scales[i] <= level]
        # union-find on nodes; virtual root node n
        uf = list(range(n + 1))

        def find(a):
            while uf[a] != a:
                uf[a] = uf[uf[a]]
                a = uf[a]
            return a

        for i in members:
            a, b = find(i), find(parent[i] if parent[i] >= 0 else n)
            uf[a] = b
        groups = defaultdict(list)
        for i in members:
            groups[find(i)].append(i)
        for lines in groups.values():
            if not any(scales[i] == level for i in lines):
                continue
            lset = frozenset(lines)
            nodes = set()
            for i in lines:
                nodes.add(i)
                if parent[i] >= 0:
                    nodes.add(parent[i])
            entering = tuple(sorted(w for w in range(n) if w not in lset and parent[w] in nodes and w not in nodes))
            exits = [u for u in nodes if u not in lset]
            exiting = exits[0] if exits else None
            hsum = [sum(flat.harmonics[v][c] for v in nodes) for c in range(len(flat.harmonics[0]))]
            se = len(entering) == 1 and exiting is not None and not any(hsum)
            res = se and any(flat.momenta[exiting])
            out.append(Cluster(level, frozenset(nodes), lset, entering, exiting, se, res))
    return ClusterDecomposition(tuple(out))


# ---------------------------------------------------------------------------
# renormalized series


_TREE_PAIRS = {}


def _tree_data(store, sid):
    key = (id(store), sid)
    if key not in _TREE_PAIRS:
        flat = store.flat(sid)
        mom = [m if any(m) else None for m in flat.momenta]
        pairs = _se_pairs([int(p) for p in flat.parent], mom)
        hsum = sum(lattice_norm(h) for h in flat.harmonics)
        _TREE_PAIRS[key] = (flat, pairs, hsum)
    return _TREE_PAIRS[key]


def renormalized_table(ladder, K, momenta=None):
    """``{nu: h_nu(eps)}`` from renormalized trees of degree at most ``K``.

    Each tree is summed over all scale assignments with nonzero cutoff
    weight that create no resummable self-energy cluster.
    """
    model = ladder.model
    store = shape_store(model, RENORMALIZED, K)
    d = model.d
    eps = ladder.eps
    check = ladder.reference is None
    wanted = None if momenta is None else {tuple(int(c) for c in m) for m in momenta}
    acc = {}
    for P in range(1, K + 1):
        for sid in store.ids(P):
            mom = store.momentum[sid]
            if wanted is not None and mom not in wanted:
                continue
            flat, pairs, hsum = _tree_data(store, sid)
            keys = [(m, 0.0) for m in flat.momenta]
            cands = [ladder.scales(k) for k in keys]
            assigns = []
            for a in itertools.product(*cands):
                sc = np.array(a, dtype=float)
                if pairs and _has_se(pairs, sc):
                    continue
                assigns.append(a)
            if not assigns:
                continue
            props = np.zeros((len(assigns), flat.n, d, d), dtype=complex)
            for ai, a in enumerate(assigns):
                for i, p in enumerate(a):
                    props[ai, i] = ladder.propagator(p, keys[i])
            vals = flat.contract(ladder.table, props)[:, :, 0]
            vec = eps ** store.order[sid] / store.aut[sid] * vals.sum(axis=0)
            acc[mom] = acc.get(mom, 0) + vec
            if check:
                for a in assigns:
                    ladder._check_counting(a, hsum)
    return dict(sorted(acc.items()))


def renormalized_h(nu, K, ladder, component=None):
    """Renormalized ``h_nu(eps)`` (d-vector, or one component)."""
    nu = tuple(int(c) for c in nu)
    vec = renormalized_table(ladder, K, momenta=[nu]).get(nu, np.zeros(ladder.model.d, dtype=complex))
    return vec if component is None else vec[component]
