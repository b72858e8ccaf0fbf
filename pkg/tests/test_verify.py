import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lindstedt.multiscale import Ladder, ScaleContext, renormalized_table
from lindstedt.trees import bare_table
from lindstedt.verify import (certificate_suite, eom_residual, fit_exponent, fourier_sum, ladder_table_certificates,
                              taylor_coefficients)


@given(st.floats(0.5, 4.0), st.floats(1e-3, 1e3))
def test_fit_exponent_recovers_power(p, c):
    xs = [2.0**-k for k in range(8)]
    assert fit_exponent(xs, [c * x**p for x in xs]) == pytest.approx(p, abs=1e-9)


def test_taylor_coefficients_of_polynomial():
    poly = lambda z: {"v": np.array([1 + 2 * z - 3 * z**3])}
    c = taylor_coefficients(poly, 0.0, 0.5, 4, points=16)["v"]
    np.testing.assert_allclose(np.array(c).ravel(), [1, 2, 0, -3, 0], atol=1e-13)


def test_fourier_sum_is_real_for_real_series():
    h = {(1,): np.array([0.3 - 0.1j]), (-1,): np.array([0.3 + 0.1j])}
    _, v = fourier_sum(h, 1, 8)
    assert np.max(np.abs(v.imag)) < 1e-15


def test_residual_of_bare_series_drops_with_order(pendulum):
    eps = 0.01
    res = []
    for K in (1, 2, 3):
        table = bare_table(pendulum, K)
        h = {}
        for k in range(1, K + 1):
            for nu in table.momenta(k):
                h[nu] = h.get(nu, 0) + eps**k * table.coefficient(k, nu)
        res.append(eom_residual(pendulum, h, eps))
    assert res[0] > res[1] > res[2]


def test_certificates_pass(two_by_two):
    ladder = Ladder(ScaleContext.build(two_by_two, 5e-3), K_SE=4)
    renormalized_table(ladder, 2)
    report = certificate_suite(ladder)
    assert report.passed, [c.line() for c in report.failures()]
    assert report["hermiticity"].measured <= 1e-12


def test_asymmetry_is_caught(two_by_two):
    ladder = Ladder(ScaleContext.build(two_by_two, 5e-3), K_SE=2)
    bump = np.zeros((4, 4), complex)
    bump[0, 3] = 1e-6
    ladder.corrupt(1, bump)
    report = certificate_suite(ladder)
    names = {c.name for c in report.failures()}
    assert {"hermiticity", "transpose_symmetry"} <= names


def test_ladder_table_roundtrip(pendulum):
    ladder = Ladder(ScaleContext.build(pendulum, 0.01), K_SE=2)
    renormalized_table(ladder, 2)
    text = ladder.dump_csv()
    assert all(c.passed for c in ladder_table_certificates(text))
    lines = text.splitlines()
    header = lines[0].split(",")
    col = header.index("M12_im")
    row = lines[3].split(",")
    row[col] = repr(float(row[col]) + 1e-6)
    lines[3] = ",".join(row)
    assert not all(c.passed for c in ladder_table_certificates("\n".join(lines) + "\n"))
