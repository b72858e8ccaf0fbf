import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lindstedt.errors import ConfigError
from lindstedt.models import GOLDEN
from lindstedt.multiscale import (INF, CutoffFamily, Ladder, ScaleContext, _has_se, _se_pairs, cutoff,
                                  detect_clusters, resonance_gap)
from lindstedt.trees import RENORMALIZED, shape_store
from lindstedt.verify import resummation_consistency, self_energy_taylor

C0 = GOLDEN


@given(st.floats(1e-12, 1e3), st.integers(0, 8))
def test_cutoff_range_and_complement(D, n):
    fam = CutoffFamily(C0)
    p, c = fam.psi(D, n), fam.chi(D, n)
    assert 0.0 <= p <= 1.0
    assert p + c == 1.0


def test_cutoff_support():
    fam = CutoffFamily(C0)
    assert fam.psi(C0**2 / 4) == 0.0
    assert fam.psi(C0**2 / 4 * 0.999) == 0.0
    assert fam.psi(C0**2) == 1.0
    assert 0.0 < fam.psi(C0**2 / 2) < 1.0
    assert fam.psi(C0**2 / 4, 1) == 1.0
    assert cutoff("chi", 0, C0**2, C0) == 0.0


@given(st.floats(C0**2 / 4, C0**2), st.floats(C0**2 / 4, C0**2))
def test_cutoff_monotone(a, b):
    fam = CutoffFamily(C0)
    lo, hi = sorted((a, b))
    assert fam.psi(lo) <= fam.psi(hi)


def test_cutoff_rejects_bad_constant():
    with pytest.raises(ConfigError):
        CutoffFamily(0.0)


@given(st.floats(1e-9, 10.0))
@settings(max_examples=200)
def test_scales_form_partition_of_unity(D):
    # telescoping product: psi_0 + chi_0 psi_1 + chi_0 chi_1 psi_2 + ... = 1
    fam = CutoffFamily(C0)
    total, carry = [], 1.0
    for n in range(60):
        total.append(carry * fam.psi(D, n))
        carry *= fam.chi(D, n)
        if carry == 0.0:
            break
    assert abs(math.fsum(total) - 1.0) <= 4 * np.finfo(float).eps
    assert sum(1 for t in total if t) <= 2


def test_resonance_gap_grid_oracle(two_by_two):
    ctx = ScaleContext.build(two_by_two, 0.01)
    lo, hi = ctx.interval
    grid = np.linspace(lo, hi, 20001)
    rng = np.random.default_rng(1)
    for x in rng.uniform(0, 0.5, 200):
        D, j = resonance_gap(x, ctx)
        vals = [np.min(np.abs(x * x - grid * a)) if a else x * x for a in ctx.reference_slopes]
        assert D == pytest.approx(min(vals), abs=(hi - lo) * 3 / 20000)
        assert j == 1 + int(np.argmin(vals)) or math.isclose(vals[j - 1], min(vals), abs_tol=1e-12)


def test_scale_context_brackets(forced_pendulum):
    for n0 in (4, 6, 8):
        ctx = ScaleContext.build(forced_pendulum, 2.5 * forced_pendulum.rotation.C0**2 * 4.0**-n0 / 4)
        assert ctx.n0 == n0
        assert ctx.I_C[1] == pytest.approx(4 * ctx.I_C[0])
        assert ctx.n_intervals == math.ceil(6 / forced_pendulum.spectrum.rho)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_cluster_detection_agrees_with_pair_criterion(pendulum, data):
    store = shape_store(pendulum, RENORMALIZED, 4)
    sid = data.draw(st.sampled_from(store.ids(4) + store.ids(3)))
    flat = store.flat(sid)
    mom = [m if any(m) else None for m in flat.momenta]
    pairs = _se_pairs([int(p) for p in flat.parent], mom)
    scales = np.array([INF if m is None else data.draw(st.integers(0, 3)) for m in mom], dtype=float)
    decomp = detect_clusters(flat, list(scales))
    assert _has_se(pairs, scales) == bool(decomp.self_energy_clusters())


def test_small_x_self_energy_closed_form(two_by_two):
    # leading small-x behaviour of the second-order self-energy
    om = np.array([GOLDEN, 1.0])
    want_aa = np.array([3 / om[0] ** 4, 3 * 1.25 / (2 * om[1] ** 4)])
    want_ab = np.array([-1j / om[0] ** 3, -0.5j])
    errs = []
    for eps in (1e-3, 2.5e-4):
        L = Ladder(ScaleContext.build(two_by_two, eps), K_SE=2)
        x = math.sqrt(eps) / 64
        M = L.M_le(L.N_max, ((0, 0), x))
        aa = np.diag(M[:2, :2]).real / (eps**2 * x**2)
        assert abs(M[0, 1]) == 0.0
        np.testing.assert_allclose(np.diag(M[:2, 2:]) / (eps**2 * x), want_ab, rtol=2e-6)
        np.testing.assert_allclose(np.diag(M[2:, 2:]).real / eps, [1.0, 2.0], rtol=2e-7)
        errs.append(np.max(np.abs(aa / want_aa - 1)))
    assert errs[1] < 1e-3
    assert errs[1] < errs[0] / 3


@pytest.mark.parametrize("name", ["pendulum", "two_by_two"])
def test_resummation_reproduces_bare_series(name, request):
    model = request.getfixturevalue(name)
    ladder = Ladder(ScaleContext.build(model, 0.01), K_SE=4)
    report = resummation_consistency(ladder, 3)
    assert report.passed, report.max_deviation


def test_self_energy_linear_term_is_hessian(two_by_two):
    ladder = Ladder(ScaleContext.build(two_by_two, 0.01), K_SE=4)
    coeffs = self_energy_taylor(ladder, ladder.N_max, ((1, 0), 0.0))
    np.testing.assert_allclose(coeffs[1], two_by_two.hessian_ext, atol=1e-10)


def test_ladder_symmetries(two_by_two):
    ladder = Ladder(ScaleContext.build(two_by_two, 5e-3), K_SE=4)
    for key in ladder.keys():
        neg = (tuple(-c for c in key[0]), -key[1])
        A, B = ladder.M_le(ladder.N_max, key), ladder.M_le(ladder.N_max, neg)
        assert np.max(np.abs(A - A.conj().T)) <= 1e-12
        assert np.max(np.abs(A - B.T)) <= 1e-12


def test_null_block_vanishes(pendulum):
    ladder = Ladder(ScaleContext.build(pendulum, 0.01), K_SE=4)
    assert ladder.stats.null_block <= 1e-10
    assert ladder.lam_bar(ladder.N_max)[0] == 0.0


def test_partition_of_unity_on_ladder_keys(pendulum):
    ladder = Ladder(ScaleContext.build(pendulum, 0.01), K_SE=4)
    for key in ladder.keys():
        if any(key[0]):
            assert abs(ladder.unity_sum(key) - 1.0) <= 4 * np.finfo(float).eps


def test_zero_frequency_sits_on_the_null_block(two_by_two):
    assert resonance_gap(0.0, ScaleContext.build(two_by_two, 0.01)) == (0.0, 1)
