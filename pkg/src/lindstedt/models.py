"""Reference models used by the tests, the acceptance suite and the CLI."""

import math

from .hamiltonian import Model, RotationVector, TrigPolynomial, diophantine_scan

GOLDEN = (1 + math.sqrt(5)) / 2

__all__ = ["GOLDEN", "scanned_rotation", "pendulum", "two_by_two", "forced_pendulum", "free_rotators"]


def scanned_rotation(omega, tau0, N_check=100):
    """Rotation vector whose C0 is the exact minimum over the scanned ball."""
    probe = RotationVector(tuple(omega), 1.0, tau0)
    rep = diophantine_scan(probe, N_check)
    return RotationVector(tuple(omega), rep.ratio, tau0)


def pendulum(tau0=1.0):
    """``f = cos(alpha) + cos(beta)``, one rotator at the golden frequency."""
    f = TrigPolynomial.from_cosines(1, 1, [((1,), (0,), 1.0, 0.0), ((0,), (1,), 1.0, 0.0)])
    return Model.build(f, scanned_rotation((GOLDEN,), tau0), [3.0], name="pendulum")


def two_by_two(N_check=100):
    """Two rotators, two oscillators.

    ``f = cos b1 + 2 cos b2 + (1 + sin b1) cos a1 + (1 + sin(b2)/2) cos a2``
    so that ``f_0`` has Hessian ``diag(1, 2)`` at ``(pi, pi)``.
    """
    half_pi = math.pi / 2
    terms = [
        ((0, 0), (1, 0), 1.0, 0.0),
        ((0, 0), (0, 1), 2.0, 0.0),
        ((1, 0), (0, 0), 1.0, 0.0),
        ((1, 0), (1, 0), 0.5, -half_pi),
        ((1, 0), (-1, 0), -0.5, -half_pi),
        ((0, 1), (0, 0), 1.0, 0.0),
        ((0, 1), (0, 1), 0.25, -half_pi),
        ((0, 1), (0, -1), -0.25, -half_pi),
    ]
    f = TrigPolynomial.from_cosines(2, 2, terms)
    return Model.build(f, scanned_rotation((GOLDEN, 1.0), 1.0, N_check), [3.0, 3.2], name="two_by_two")


def forced_pendulum(N_check=100):
    """Two rotators, one oscillator: ``cos b + (1 + sin b) cos a1 + cos a2``."""
    half_pi = math.pi / 2
    terms = [
        ((0, 0), (1,), 1.0, 0.0),
        ((1, 0), (0,), 1.0, 0.0),
        ((1, 0), (1,), 0.5, -half_pi),
        ((1, 0), (-1,), -0.5, -half_pi),
        ((0, 1), (0,), 1.0, 0.0),
    ]
    f = TrigPolynomial.from_cosines(2, 1, terms)
    return Model.build(f, scanned_rotation((GOLDEN, 1.0), 1.0, N_check), [3.0], name="forced_pendulum")


def free_rotators():
    """No normal block: ``f = cos a1 + cos a2``."""
    f = TrigPolynomial.from_cosines(2, 0, [((1, 0), (), 1.0, 0.0), ((0, 1), (), 1.0, 0.0)])
    return Model.build(f, scanned_rotation((GOLDEN, 1.0), 1.0), [], name="free_rotators")
