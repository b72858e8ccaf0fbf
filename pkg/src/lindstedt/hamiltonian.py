"""
Model data for a quasi-integrable system with r rotators and s oscillators.

The Hamiltonian is ``omega.A + A^2/2 + B^2/2 + eps f(alpha, beta)`` with
``alpha`` on the r-torus and ``beta`` on the s-torus.  ``f`` is a finite
trigonometric polynomial; the unperturbed torus sits at a stationary point
``beta0`` of the average ``f_0`` whose Hessian has distinct positive
eigenvalues ``a_1 < ... < a_s``.

Component convention: a d-vector (d = r + s) stores the r angle components
first and the s normal components after them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, HypothesisError

__all__ = [
    "RotationVector",
    "TrigPolynomial",
    "NormalSpectrum",
    "Model",
    "DiophantineReport",
    "lattice_norm",
    "lattice_ball",
    "diophantine_scan",
    "find_stationary_point",
    "beta_derivative_tensor",
    "normal_spectrum",
]


def lattice_norm(nu):
    """l1 norm of an integer vector (the norm used in every small-divisor bound)."""
    return int(sum(abs(int(c)) for c in nu))


def lattice_ball(r, radius):
    """All nonzero integer r-vectors with l1 norm at most ``radius``.

    Returned as an ``(N, r)`` int array sorted by norm, then lexicographically,
    so iteration order is deterministic.
    """
    if r < 1 or radius < 1:
        return np.zeros((0, max(r, 0)), dtype=np.int64)
    axes = [np.arange(-radius, radius + 1)] * r
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, r)
    norms = np.abs(grid).sum(axis=1)
    keep = (norms > 0) & (norms <= radius)
    grid, norms = grid[keep], norms[keep]
    order = np.lexsort(tuple(grid[:, c] for c in reversed(range(r))) + (norms,))
    return grid[order]


@dataclass(frozen=True)
class RotationVector:
    """Frequencies of the torus with their Diophantine constants."""

    omega: tuple
    C0: float
    tau0: float

    def __post_init__(self):
        om = tuple(float(w) for w in self.omega)
        object.__setattr__(self, "omega", om)
        if len(om) < 1:
            raise ConfigError("rotation vector needs r >= 1 components")
        if not all(math.isfinite(w) for w in om):
            raise ConfigError("rotation vector has non-finite components")
        if not (self.C0 > 0):
            raise ConfigError("C0 must be positive")
        if self.tau0 < len(om) - 1:
            raise ConfigError("tau0 must be at least r - 1")

    @property
    def r(self):
        return len(self.omega)

    @cached_property
    def array(self):
        return np.array(self.omega)

    def frequency(self, nu):
        """Return ``omega . nu``."""
        return float(np.dot(self.array, np.asarray(nu, dtype=float)))


@dataclass(frozen=True)
class DiophantineReport:
    ratio: float
    worst_nu: tuple
    n_checked: int

    @property
    def accepted(self):
        return self.ratio >= 1.0


def diophantine_scan(omega, N_check):
    """Worst Diophantine ratio ``|omega.nu| |nu|^tau0 / C0`` over the ball.

    Parameters
    ----------
    omega : RotationVector
    N_check : int
        Radius (l1) of the lattice ball to scan.

    Returns
    -------
    DiophantineReport
        ``ratio >= 1`` means the condition holds on the whole ball.
    """
    if N_check < 1:
        raise ConfigError("N_check must be >= 1")
    ball = lattice_ball(omega.r, int(N_check))
    freqs = np.abs(ball @ omega.array)
    norms = np.abs(ball).sum(axis=1).astype(float)
    ratios = freqs * norms**omega.tau0 / omega.C0
    k = int(np.argmin(ratios))
    return DiophantineReport(float(ratios[k]), tuple(int(c) for c in ball[k]), len(ball))


class TrigPolynomial:
    """Finite Fourier series ``f(alpha, beta) = sum f_{nu,mu} e^{i(nu.alpha + mu.beta)}``.

    Parameters
    ----------
    r, s : int
        Dimensions of the angle and normal blocks.
    coeffs : mapping
        ``(nu, mu) -> complex`` with ``nu`` of length r and ``mu`` of length s.
    reality_tol : float
        Tolerance for the reality constraint ``f_{-nu,-mu} = conj(f_{nu,mu})``.
    """

    def __init__(self, r, s, coeffs, reality_tol=1e-14):
        if r < 1 or s < 0:
            raise ConfigError(f"invalid dimensions r={r}, s={s}")
        self.r, self.s = int(r), int(s)
        clean = {}
        for (nu, mu), val in coeffs.items():
            nu, mu = tuple(int(c) for c in nu), tuple(int(c) for c in mu)
            if len(nu) != self.r or len(mu) != self.s:
                raise ConfigError(f"coefficient key {(nu, mu)} has wrong dimensions")
            val = complex(val)
            if val != 0:
                clean[(nu, mu)] = clean.get((nu, mu), 0) + val
        self.coeffs = dict(sorted(clean.items()))
        scale = max((abs(v) for v in self.coeffs.values()), default=1.0)
        for (nu, mu), val in self.coeffs.items():
            partner = self.coeffs.get((_neg(nu), _neg(mu)), 0)
            if abs(partner - val.conjugate()) > reality_tol * scale:
                raise ConfigError(f"reality constraint fails at nu={nu}, mu={mu}")

    @classmethod
    def from_cosines(cls, r, s, terms):
        """Build from real terms ``amp * cos(nu.alpha + mu.beta + phase)``."""
        coeffs = {}
        for nu, mu, amp, phase in terms:
            z = 0.5 * amp * complex(math.cos(phase), math.sin(phase))
            k1 = (tuple(nu), tuple(mu))
            k2 = (_neg(nu), _neg(mu))
            coeffs[k1] = coeffs.get(k1, 0) + z
            coeffs[k2] = coeffs.get(k2, 0) + z.conjugate()
        return cls(r, s, coeffs)

    @property
    def d(self):
        return self.r + self.s

    @cached_property
    def harmonics(self):
        """Sorted list of angle harmonics ``nu`` present in the support."""
        return sorted({nu for nu, _ in self.coeffs})

    @cached_property
    def amplitude(self):
        return max((abs(v) for v in self.coeffs.values()), default=0.0)

    def modes(self, nu):
        """Return ``(mu_array (N, s), coef_array (N,))`` for the slice ``f_nu``."""
        nu = tuple(int(c) for c in nu)
        items = [(mu, v) for (n, mu), v in self.coeffs.items() if n == nu]
        if not items:
            return np.zeros((0, self.s), dtype=np.int64), np.zeros(0, dtype=complex)
        mus = np.array([m for m, _ in items], dtype=np.int64).reshape(len(items), self.s)
        return mus, np.array([v for _, v in items], dtype=complex)

    def wave_vectors(self):
        """All ``(k, coef)`` with ``k = (nu, mu)`` in Z^d, as arrays."""
        ks = np.array([nu + mu for nu, mu in self.coeffs], dtype=np.int64).reshape(-1, self.d)
        return ks, np.array(list(self.coeffs.values()), dtype=complex)

    def evaluate(self, alpha, beta):
        """Evaluate ``f`` at broadcastable arrays ``alpha (..., r)``, ``beta (..., s)``."""
        phase = self._phase(alpha, beta)
        _, c = self.wave_vectors()
        return np.real(np.exp(1j * phase) @ c)

    def gradient(self, alpha, beta):
        """Return ``(..., d)`` array of all first derivatives of ``f``."""
        phase = self._phase(alpha, beta)
        ks, c = self.wave_vectors()
        return np.real((np.exp(1j * phase) * c) @ (1j * ks))

    def _phase(self, alpha, beta):
        ks, _ = self.wave_vectors()
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        if self.s == 0:
            return alpha @ ks[:, : self.r].T.astype(float)
        return alpha @ ks[:, : self.r].T.astype(float) + beta @ ks[:, self.r:].T.astype(float)

    def average_gradient(self, beta):
        """Gradient of ``f_0`` at ``beta``."""
        return np.real(beta_derivative_tensor(self, (0,) * self.r, 1, beta))

    def average_hessian(self, beta):
        """Hessian of ``f_0`` at ``beta``."""
        return np.real(beta_derivative_tensor(self, (0,) * self.r, 2, beta))

    def __repr__(self):
        return f"TrigPolynomial(r={self.r}, s={self.s}, terms={len(self.coeffs)})"


def _neg(v):
    return tuple(-int(c) for c in v)


def beta_derivative_tensor(f, nu, q, beta0):
    """Rank-q tensor of beta-derivatives of ``f_nu`` at ``beta0``.

    Computes ``sum_mu f_{nu,mu} (i mu)^{(x)q} e^{i mu.beta0}`` exactly.  Angle
    derivatives are not included; they enter node factors as plain factors
    ``(i nu)_gamma``.
    """
    if q < 0:
        raise ValueError("derivative order must be non-negative")
    mus, c = f.modes(nu)
    shape = (f.s,) * q
    if len(c) == 0:
        return np.zeros(shape, dtype=complex)
    beta0 = np.asarray(beta0, dtype=float).reshape(f.s)
    w = c * np.exp(1j * (mus @ beta0))
    out = w
    vecs = 1j * mus
    for _ in range(q):
        out = out[..., None] * vecs.reshape((len(c),) + (1,) * (out.ndim - 1) + (f.s,))
    return out.sum(axis=0) if q else np.asarray(w.sum())


def find_stationary_point(f, guess, tol=1e-12, max_iter=100):
    """Newton iteration for a zero of the gradient of ``f_0``.

    Raises
    ------
    HypothesisError
        On a singular Hessian or when the iteration does not converge.
    """
    beta = np.array(guess, dtype=float).reshape(f.s)
    if f.s == 0:
        return beta
    for _ in range(max_iter):
        g = f.average_gradient(beta)
        if np.max(np.abs(g)) <= tol:
            return beta
        H = f.average_hessian(beta)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise HypothesisError("singular Hessian during stationary-point search") from exc
        beta = beta - step
    g = f.average_gradient(beta)
    if np.max(np.abs(g)) <= tol:
        return beta
    raise HypothesisError(f"stationary-point search did not converge (|grad| = {np.max(np.abs(g)):.3e})")


def stationary_guess_grid(f, points=32):
    """Coarse grid point minimising |grad f_0|, a seed for Newton."""
    if f.s == 0:
        return np.zeros(0)
    axes = [np.linspace(0, 2 * np.pi, points, endpoint=False)] * f.s
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, f.s)
    mus, c = f.modes((0,) * f.r)
    grads = np.real((np.exp(1j * grid @ mus.T.astype(float)) * c) @ (1j * mus))
    return grid[int(np.argmin(np.abs(grads).max(axis=1)))]


@dataclass(frozen=True)
class NormalSpectrum:
    """Normal data of the unperturbed torus at ``beta0``."""

    beta0: np.ndarray
    hessian: np.ndarray
    a: np.ndarray
    eigvecs: np.ndarray
    rho: float
    gap: float
    nbar: int

    @property
    def s(self):
        return len(self.a)

    @property
    def a_s(self):
        """Largest normal eigenvalue (1 by convention when there is no normal block)."""
        return float(self.a[-1]) if len(self.a) else 1.0


def normal_spectrum(f, beta0, tol=1e-10):
    """Eigen-decomposition of the Hessian of ``f_0`` at ``beta0``.

    Raises
    ------
    HypothesisError
        If ``beta0`` is not stationary or the eigenvalues are not distinct
        and positive.
    """
    beta0 = np.asarray(beta0, dtype=float).reshape(f.s)
    if f.s == 0:
        return NormalSpectrum(beta0, np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0)), 0.25, 0.0, 0)
    grad = f.average_gradient(beta0)
    if np.max(np.abs(grad)) > tol * max(f.amplitude, 1.0):
        raise HypothesisError(f"beta0 is not stationary: |grad f_0| = {np.max(np.abs(grad)):.3e}")
    H = f.average_hessian(beta0)
    H = 0.5 * (H + H.T)
    a, Q = np.linalg.eigh(H)
    if a[0] <= 0:
        raise HypothesisError(f"normal eigenvalues must be positive, got {a.tolist()}")
    diffs = np.diff(a)
    if len(diffs) and diffs.min() <= tol * max(1.0, a[-1]):
        raise HypothesisError(f"normal eigenvalues must be distinct, got {a.tolist()}")
    gap = float(min([a[0]] + diffs.tolist()))
    rho = 0.25 if f.s == 1 else 0.25 * gap / a[-1]
    nbar = math.ceil(-1 + 0.5 * math.log2(1.0 / rho) - 1e-12)
    return NormalSpectrum(beta0, H, a, Q, float(rho), gap, int(nbar))


@dataclass(frozen=True)
class Model:
    """A validated model: perturbation, frequencies and normal data."""

    f: TrigPolynomial
    rotation: RotationVector
    spectrum: NormalSpectrum
    name: str = field(default="model")

    def __post_init__(self):
        if self.f.r != self.rotation.r:
            raise ConfigError("rotation vector and perturbation disagree on r")

    @classmethod
    def build(cls, f, rotation, beta_guess, tol=1e-12, name="model"):
        beta0 = find_stationary_point(f, beta_guess, tol=tol)
        beta0 = np.mod(beta0, 2 * np.pi)
        return cls(f, rotation, normal_spectrum(f, beta0), name)

    @property
    def r(self):
        return self.f.r

    @property
    def s(self):
        return self.f.s

    @property
    def d(self):
        return self.f.d

    @property
    def beta0(self):
        return self.spectrum.beta0

    @cached_property
    def hessian_inverse(self):
        """``(d, d)`` matrix with the inverse Hessian in the normal block."""
        out = np.zeros((self.d, self.d))
        if self.s:
            out[self.r:, self.r:] = np.linalg.inv(self.spectrum.hessian)
        return out

    @cached_property
    def hessian_ext(self):
        """``(d, d)`` matrix with the Hessian of ``f_0`` in the normal block."""
        out = np.zeros((self.d, self.d))
        if self.s:
            out[self.r:, self.r:] = self.spectrum.hessian
        return out

    def frequency(self, nu):
        return self.rotation.frequency(nu)

