"""
Decorated trees and the bare Lindstedt coefficients.

A tree is stored canonically as an interned *shape*: a root harmonic plus a
sorted tuple of child shape ids.  Children are unordered, so every
topologically distinct tree appears once; its weight in the series is
``1/|Aut|``, which equals the numbered-line convention ``(k!/|Aut|) / k!``.

Component labels on lines are never enumerated.  Each node factor has the
rank-one-sum form ``sum_mu c_mu (i k_mu)^{(x)(p+1)}`` with ``k_mu = (nu, mu)``,
so summing over labels is the same as contracting vectors; see
:mod:`lindstedt.kernels`.

Trees are grouped by *degree* ``P = order - #(zero-momentum lines)``, the
power of ``eps`` carried by their value.  The order of a degree-k tree is
between k and ``max_order(k) = 3k - 1``: zero-momentum lines leave either a
node with nonzero harmonic (which then has a child of nonzero momentum) or a
zero-harmonic node with at least two children, and there are fewer such
branching nodes than leaves.  The bound is attained, e.g. by a
zero-harmonic root carrying k two-node zero-momentum subtrees.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .errors import EnumerationLimitError, ExcludedEpsilonError

__all__ = [
    "BARE",
    "RENORMALIZED",
    "NodeTable",
    "ShapeStore",
    "DecoratedTree",
    "TreeFamilyKey",
    "FlatTree",
    "enumerate",
    "node_factor",
    "tree_value",
    "bare_propagator",
    "lindstedt_coefficient",
    "LindstedtTable",
    "bare_table",
    "resummed_expansion_table",
    "dump_tree",
]

BARE = "bare"
RENORMALIZED = "renormalized"
K_MAX_DEFAULT = 8

_enumerate_builtin = enumerate


class NodeTable:
    """Flattened node-factor data ``(i k_mu, c_mu)`` per harmonic of ``f``.

    ``c_mu = f_{nu,mu} exp(i mu.beta0)`` and ``k_mu = (nu, mu)`` in Z^d.
    """

    def __init__(self, model):
        f = model.f
        self.harmonics = list(f.harmonics)
        self.index = {nu: h for h, nu in _enumerate_builtin(self.harmonics)}
        blocks_k, blocks_c, offsets = [], [], [0]
        for nu in self.harmonics:
            mus, c = f.modes(nu)
            k = np.hstack([np.tile(np.array(nu, dtype=float), (len(c), 1)), mus.astype(float)])
            blocks_k.append(1j * k)
            blocks_c.append(c * np.exp(1j * (mus @ model.beta0)) if f.s else c.copy())
            offsets.append(offsets[-1] + len(c))
        self.tabK = np.ascontiguousarray(np.vstack(blocks_k)) if blocks_k else np.zeros((0, f.d), complex)
        self.tabC = np.ascontiguousarray(np.concatenate(blocks_c)) if blocks_c else np.zeros(0, complex)
        self.offsets = np.array(offsets, dtype=np.int64)
        self.zero = self.index.get((0,) * f.r)

    def slice(self, h):
        lo, hi = self.offsets[h], self.offsets[h + 1]
        return self.tabK[lo:hi], self.tabC[lo:hi]


class ShapeStore:
    """Interning table of canonical tree shapes for a fixed harmonic support.

    Shapes are generated by increasing degree, then order, with the pruning
    rules of the requested status:

    * a leaf with zero harmonic is dropped (its factor is a gradient of
      ``f_0`` at the stationary point, hence zero);
    * ``bare``: no trivial node (zero harmonic, one child) on a zero-momentum
      line;
    * ``renormalized``: no trivial node at all.
    """

    def __init__(self, harmonics, status=BARE):
        if status not in (BARE, RENORMALIZED):
            raise ValueError(f"unknown status {status!r}")
        self.harmonics = [tuple(h) for h in harmonics]
        self.r = len(self.harmonics[0]) if self.harmonics else 1
        self.status = status
        self.harm, self.children, self.order, self.momentum = [], [], [], []
        self.zeros, self.degree, self.aut = [], [], []
        self._ids = {}
        self._by = defaultdict(list)  # (degree, order) -> ids
        self.max_degree = 0

    def __len__(self):
        return len(self.harm)

    def _add(self, h, kids):
        key = (h, kids)
        if key in self._ids:
            return None
        mom = tuple(a + sum(self.momentum[c][i] for c in kids) for i, a in _enumerate_builtin(self.harmonics[h]))
        zero = all(m == 0 for m in mom)
        order = 1 + sum(self.order[c] for c in kids)
        zeros = int(zero) + sum(self.zeros[c] for c in kids)
        aut = 1
        for c in set(kids):
            m = kids.count(c)
            aut *= self.aut[c] ** m * math.factorial(m)
        sid = len(self.harm)
        self._ids[key] = sid
        self.harm.append(h)
        self.children.append(kids)
        self.order.append(order)
        self.momentum.append(mom)
        self.zeros.append(zeros)
        self.degree.append(order - zeros)
        self.aut.append(aut)
        self._by[(order - zeros, order)].append(sid)
        return sid

    def _allowed(self, h, kids, mom_zero):
        nu_zero = all(c == 0 for c in self.harmonics[h])
        if nu_zero and not kids:
            return False
        if nu_zero and len(kids) == 1:
            if self.status == RENORMALIZED or mom_zero:
                return False
        return True

    def extend(self, K):
        """Generate all shapes of degree at most ``K``."""
        for p in range(self.max_degree + 1, K + 1):
            for n in range(p, max_order(p) + 1):
                cands = [i for i in range(len(self.harm)) if self.order[i] <= n - 1 and self.degree[i] <= p]
                cands.sort(key=lambda i: (self.order[i], i))
                for kids in _multisets(cands, self.order, self.degree, n - 1, p):
                    dsum = sum(self.degree[c] for c in kids)
                    kids = tuple(sorted(kids))
                    for h, nu in _enumerate_builtin(self.harmonics):
                        mom = [nu[i] + sum(self.momentum[c][i] for c in kids) for i in range(self.r)]
                        mzero = all(m == 0 for m in mom)
                        if dsum != p - 1 + int(mzero):
                            continue
                        if self._allowed(h, kids, mzero):
                            self._add(h, kids)
            self.max_degree = p

    def ids(self, degree, momentum=None):
        """Shape ids of the given degree (and root momentum, if given), sorted."""
        out = []
        for n in range(degree, max_order(degree) + 1):
            out.extend(self._by.get((degree, n), ()))
        if momentum is not None:
            momentum = tuple(momentum)
            out = [i for i in out if self.momentum[i] == momentum]
        return sorted(out)

    def canonical(self, sid):
        """Nested-tuple canonical form ``(harmonic, (children...))``."""
        return (self.harmonics[self.harm[sid]], tuple(self.canonical(c) for c in self.children[sid]))

    def flat(self, sid):
        return FlatTree.from_store(self, sid)


def max_order(degree):
    """Largest possible order of a tree of the given degree."""
    return max(degree, 3 * degree - 1)


def _multisets(cands, order, degree, total_order, max_deg):
    """Non-decreasing id lists (in ``cands`` order) with exact total order."""
    out = []
    stack = [(0, total_order, max_deg, [])]
    while stack:
        start, rem_o, rem_d, cur = stack.pop()
        if rem_o == 0:
            out.append(list(cur))
            continue
        for idx in range(start, len(cands)):
            c = cands[idx]
            if order[c] > rem_o:
                break
            if degree[c] > rem_d:
                continue
            stack.append((idx, rem_o - order[c], rem_d - degree[c], cur + [c]))
    return out


@dataclass(frozen=True)
class FlatTree:
    """Post-order arrays describing one tree (root node last).

    ``momenta[i]`` is the momentum of the line leaving node ``i``.
    """

    hidx: np.ndarray
    parent: np.ndarray
    child_ptr: np.ndarray
    child_idx: np.ndarray
    harmonics: tuple
    momenta: tuple

    @classmethod
    def from_store(cls, store, sid):
        hidx, parent, moms, harms = [], [], [], []
        kids_of = []

        def visit(s):
            mine = [visit(c) for c in store.children[s]]
            i = len(hidx)
            hidx.append(store.harm[s])
            harms.append(store.harmonics[store.harm[s]])
            moms.append(store.momentum[s])
            parent.append(-1)
            kids_of.append(mine)
            for c in mine:
                parent[c] = i
            return i

        visit(sid)
        return cls.from_lists(hidx, parent, harms, moms, kids_of)

    @classmethod
    def from_lists(cls, hidx, parent, harms, moms, kids_of):
        ptr = [0]
        idx = []
        for kids in kids_of:
            idx.extend(kids)
            ptr.append(len(idx))
        return cls(
            np.array(hidx, dtype=np.int64),
            np.array(parent, dtype=np.int64),
            np.array(ptr, dtype=np.int64),
            np.array(idx, dtype=np.int64),
            tuple(harms),
            tuple(moms),
        )

    @property
    def n(self):
        return len(self.hidx)

    def children(self, i):
        return [int(c) for c in self.child_idx[self.child_ptr[i]:self.child_ptr[i + 1]]]

    def contract(self, table, props, apply_root=True, entry=-1):
        """Run the contraction kernel; ``props`` has shape ``(A, n, d, d)``."""
        return kernels.contract_batch(
            self.hidx, self.child_ptr, self.child_idx, props, apply_root, entry,
            table.offsets, table.tabK, table.tabC,
        )


@dataclass(frozen=True)
class TreeFamilyKey:
    """Family of trees: degree ``k``, root momentum, root component, status."""

    order: int
    momentum: tuple
    component: int | None = None
    status: str = BARE


@dataclass(frozen=True)
class DecoratedTree:
    """An enumerated tree with its symmetry data.

    Attributes
    ----------
    flat : FlatTree
    order : int
        Number of nodes.
    degree : int
        Power of eps in the bare value.
    multiplicity : int
        Number of distinct line numberings, ``order! / |Aut|``.
    automorphisms : int
    scales : tuple or None
        Optional per-line scale labels (``None`` entries mean unlabelled,
        ``math.inf`` marks zero-momentum lines).
    """

    flat: FlatTree
    order: int
    degree: int
    multiplicity: int
    automorphisms: int
    canonical: tuple
    scales: tuple | None = None

    @property
    def weight(self):
        """``multiplicity / order!`` = ``1 / |Aut|``."""
        return 1.0 / self.automorphisms

    @property
    def root_momentum(self):
        return self.flat.momenta[-1]

    @cached_property
    def zero_lines(self):
        return sum(1 for m in self.flat.momenta if not any(m))

    def with_scales(self, scales):
        return DecoratedTree(self.flat, self.order, self.degree, self.multiplicity,
                             self.automorphisms, self.canonical, tuple(scales))


def _decorate(store, sid):
    order = store.order[sid]
    aut = store.aut[sid]
    return DecoratedTree(store.flat(sid), order, store.degree[sid], math.factorial(order) // aut,
                         aut, store.canonical(sid))


_STORES = {}


def shape_store(model, status=BARE, K=1):
    """Cached :class:`ShapeStore` for the model's harmonic support, extended to ``K``."""
    key = (tuple(model.f.harmonics), status)
    store = _STORES.get(key)
    if store is None:
        store = _STORES[key] = ShapeStore(model.f.harmonics, status)
    store.extend(K)
    return store


def enumerate(key, model, K_max=K_MAX_DEFAULT):
    """Yield every tree of the family ``key`` exactly once.

    ``key.order`` is the degree of the trees (the eps power of their value).

    Raises
    ------
    EnumerationLimitError
        If the requested degree exceeds ``K_max``.
    """
    if key.order > K_max:
        raise EnumerationLimitError(f"degree {key.order} exceeds K_max={K_max}")
    if key.order < 1:
        return
    store = shape_store(model, key.status, key.order)
    for sid in store.ids(key.order, key.momentum):
        yield _decorate(store, sid)


def node_factor(tree, v, model):
    """Full node-factor tensor at node ``v`` (rank = 1 + number of children).

    Slot 0 is the label of the exiting line; the following slots follow the
    order of ``tree.flat.children(v)``.  Angle slots carry ``(i nu_v)_gamma``,
    normal slots carry beta-derivatives of ``f_{nu_v}`` at ``beta0``.
    """
    nu = tree.flat.harmonics[v]
    mus, c = model.f.modes(nu)
    rank = 1 + len(tree.flat.children(v))
    d = model.d
    if len(c) == 0:
        return np.zeros((d,) * rank, dtype=complex)
    ks = 1j * np.hstack([np.tile(np.array(nu, float), (len(c), 1)), mus.astype(float)])
    w = c * np.exp(1j * (mus @ model.beta0)) if model.s else c
    out = w
    for _ in range(rank):
        out = out[..., None] * ks.reshape((len(c),) + (1,) * (out.ndim - 1) + (d,))
    return out.sum(axis=0)


def bare_propagator(model, nu, eps=1.0):
    """Bare propagator: ``I/(omega.nu)^2`` or ``-(1/eps) H^{-1}`` on the normal block."""
    if any(nu):
        x = model.frequency(nu)
        return np.eye(model.d) / x**2
    return -model.hessian_inverse / eps


def tree_value(tree, model, eps, propagator=None):
    """Value of a tree as a d-vector indexed by the root component.

    Parameters
    ----------
    tree : DecoratedTree
    model : Model
    eps : float or complex
    propagator : callable, optional
        ``propagator(line_index, momentum) -> (d, d)``.  Defaults to the bare
        propagators.

    Notes
    -----
    ``Val = eps^k / k! * multiplicity * contraction``; with bare propagators
    this is a monomial of degree ``tree.degree``.
    """
    table = NodeTable(model)
    if propagator is None:
        props = np.stack([bare_propagator(model, m, eps) for m in tree.flat.momenta])
    else:
        props = np.stack([np.asarray(propagator(i, m)) for i, m in _enumerate_builtin(tree.flat.momenta)])
    vec = tree.flat.contract(table, props[None])[0, :, 0]
    return eps**tree.order * tree.weight * vec


@dataclass
class LindstedtTable:
    """Coefficient table ``coeffs[k][nu] -> d-vector`` plus enumeration statistics."""

    K: int
    coeffs: dict
    n_trees: dict
    trees: list

    def coefficient(self, k, nu):
        return self.coeffs.get(k, {}).get(tuple(nu), None)

    def momenta(self, k):
        return sorted(self.coeffs.get(k, {}))


_TABLE_CACHE = {}


def _raw_props(model, flat):
    return np.stack([bare_propagator(model, m, 1.0) for m in flat.momenta])[None]


def bare_table(model, K, K_max=K_MAX_DEFAULT, keep_trees=False):
    """All bare coefficients ``h^(k)_nu`` for ``k <= K`` from tree sums."""
    if K > K_max:
        raise EnumerationLimitError(f"degree {K} exceeds K_max={K_max}")
    store = shape_store(model, BARE, K)
    table = NodeTable(model)
    coeffs, counts, kept = {}, {}, []
    for k in range(1, K + 1):
        acc = {}
        ids = store.ids(k)
        counts[k] = len(ids)
        for sid in ids:
            flat = store.flat(sid)
            vec = flat.contract(table, _raw_props(model, flat))[0, :, 0] / store.aut[sid]
            mom = store.momentum[sid]
            acc[mom] = acc.get(mom, 0) + vec
            if keep_trees:
                kept.append(_decorate(store, sid))
        coeffs[k] = dict(sorted(acc.items()))
    return LindstedtTable(K, coeffs, counts, kept)


def lindstedt_coefficient(k, nu, model, mode="raw", eps=None, component=None, K_max=K_MAX_DEFAULT):
    """Lindstedt coefficient of degree ``k`` at momentum ``nu``.

    Parameters
    ----------
    mode : {"raw", "resummed"}
        ``raw`` returns the exact coefficient of ``eps^k`` (bare propagators).
        ``resummed`` sums trees without trivial nodes, using the propagator
        ``(x^2 - M0)^{-1}`` at the given ``eps``; the result includes all eps
        factors and is not a monomial.
    component : int, optional
        Return one component instead of the d-vector.

    Raises
    ------
    ExcludedEpsilonError
        In resummed mode, if ``x^2 - M0`` is singular at a needed momentum.
    """
    if k > K_max:
        raise EnumerationLimitError(f"degree {k} exceeds K_max={K_max}")
    nu = tuple(int(c) for c in nu)
    table = NodeTable(model)
    out = np.zeros(model.d, dtype=complex)
    if mode == "raw":
        store = shape_store(model, BARE, k)
        for sid in store.ids(k, nu):
            flat = store.flat(sid)
            out += flat.contract(table, _raw_props(model, flat))[0, :, 0] / store.aut[sid]
    elif mode == "resummed":
        if eps is None:
            raise ValueError("resummed mode needs eps")
        store = shape_store(model, RENORMALIZED, k)
        M0 = eps * model.hessian_ext
        for sid in store.ids(k, nu):
            flat = store.flat(sid)
            props = np.stack([_resummed_prop(model, M0, m, eps) for m in flat.momenta])[None]
            out += eps**k * flat.contract(table, props)[0, :, 0] / store.aut[sid]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return out if component is None else out[component]


def _resummed_prop(model, M0, nu, eps):
    if not any(nu):
        return bare_propagator(model, nu, eps)
    x = model.frequency(nu)
    A = x**2 * np.eye(model.d) - M0
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 1e-14 * max(1.0, s[0]):
        raise ExcludedEpsilonError(
            f"excluded eps: x^2 - M0 singular at nu={nu}",
            witness={"nu": nu, "x": x, "eps": eps},
        )
    return np.linalg.inv(A)


def resummed_expansion_table(model, K):
    """Bare coefficients rebuilt from trivial-node-free trees.

    Each resummed propagator ``(x^2 - eps H)^{-1}`` is expanded as
    ``sum_p eps^p H^p / x^{2(p+1)}`` and all terms up to ``eps^K`` are
    collected.  Agreement with :func:`bare_table` certifies the weight of
    trivial-node chains.
    """
    store = shape_store(model, RENORMALIZED, K)
    table = NodeTable(model)
    H = model.hessian_ext
    powers = [np.linalg.matrix_power(H, p) for p in range(K + 1)]
    coeffs = {k: {} for k in range(1, K + 1)}
    for P in range(1, K + 1):
        for sid in store.ids(P):
            flat = store.flat(sid)
            nz = [i for i, m in _enumerate_builtin(flat.momenta) if any(m)]
            base = [bare_propagator(model, m, 1.0) for m in flat.momenta]
            xs = {i: model.frequency(flat.momenta[i]) ** 2 for i in nz}
            for ins in _compositions(len(nz), K - P):
                props = list(base)
                for i, p in zip(nz, ins):
                    props[i] = powers[p] / xs[i] ** (p + 1)
                vec = flat.contract(table, np.stack(props)[None])[0, :, 0] / store.aut[sid]
                k = P + sum(ins)
                mom = store.momentum[sid]
                coeffs[k][mom] = coeffs[k].get(mom, 0) + vec
    return {k: dict(sorted(v.items())) for k, v in coeffs.items()}


def _compositions(n, budget):
    """All n-tuples of non-negative integers with sum at most ``budget``."""
    if n == 0:
        yield ()
        return
    for first in range(budget + 1):
        for rest in _compositions(n - 1, budget - first):
            yield (first,) + rest


def _fmt_vec(v):
    return "(" + ",".join(str(int(c)) for c in v) + ")"


def dump_tree(tree):
    """Indented text rendering used by golden-file tests.

    One ``line`` entry per line (momentum, scale) followed by the node it
    leaves (harmonic); children are indented below their parent.
    """
    flat = tree.flat
    lines = [f"tree order={tree.order} degree={tree.degree} aut={tree.automorphisms}"]

    def scale_str(i):
        if tree.scales is None or tree.scales[i] is None:
            return "inf" if not any(flat.momenta[i]) else "-"
        s = tree.scales[i]
        return "inf" if s == math.inf else str(int(s))

    def walk(i, depth):
        pad = "  " * depth
        lines.append(f"{pad}line momentum={_fmt_vec(flat.momenta[i])} components=* scale={scale_str(i)}")
        lines.append(f"{pad}  node harmonic={_fmt_vec(flat.harmonics[i])}")
        for c in flat.children(i):
            walk(c, depth + 2)

    walk(flat.n - 1, 0)
    return "\n".join(lines) + "\n"
