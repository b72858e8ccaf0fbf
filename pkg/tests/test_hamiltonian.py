import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lindstedt.errors import ConfigError, HypothesisError
from lindstedt.hamiltonian import Model, RotationVector, TrigPolynomial, lattice_ball, lattice_norm
from lindstedt.models import GOLDEN


def test_lattice_ball_counts():
    # nonzero points of the l1 ball: sum_{k>=1} 2^k C(r,k) C(R,k)
    for r in (1, 2, 3):
        for R in (0, 1, 3, 5):
            want = sum(2**k * math.comb(r, k) * math.comb(R, k) for k in range(1, r + 1))
            ball = lattice_ball(r, R)
            assert len(ball) == want
            assert all(lattice_norm(v) <= R for v in ball)


def test_golden_rotation_constant():
    rot = RotationVector((GOLDEN,), GOLDEN, 1.0)
    for n in range(1, 200):
        assert abs(rot.omega[0] * n) * n >= rot.C0 * (1 - 1e-12) or n == 0


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=60, deadline=None)
def test_gradient_matches_finite_differences(a, b1, b2):
    f = TrigPolynomial.from_cosines(1, 2, [((1,), (0, 0), 1.0, 0.0), ((0,), (1, 0), 0.7, 0.3),
                                          ((1,), (0, -1), -0.4, 1.1), ((2,), (1, 1), 0.2, 0.0)])
    x = np.array([a, b1, b2])
    g = f.gradient(np.array([a]), np.array([b1, b2]))
    h = 1e-6
    for c in range(3):
        e = np.zeros(3)
        e[c] = h
        fd = (f.evaluate(x[:1] + e[:1], x[1:] + e[1:]) - f.evaluate(x[:1] - e[:1], x[1:] - e[1:])) / (2 * h)
        assert abs(g[c] - fd) < 1e-7


def test_pendulum_stationary_point(pendulum):
    assert pendulum.beta0 == pytest.approx([math.pi])
    assert pendulum.spectrum.a == pytest.approx([1.0])


def test_two_by_two_spectrum(two_by_two):
    assert two_by_two.beta0 == pytest.approx([math.pi, math.pi])
    assert two_by_two.spectrum.a == pytest.approx([1.0, 2.0])


def test_degenerate_normal_part_rejected():
    f = TrigPolynomial.from_cosines(1, 1, [((1,), (0,), 1.0, 0.0), ((1,), (1,), 1.0, 0.0)])
    with pytest.raises((HypothesisError, ConfigError)):
        Model.build(f, RotationVector((GOLDEN,), GOLDEN, 1.0), [math.pi])
