import itertools
import math

import numpy as np
import pytest

from lindstedt.epsdomain import (admissible, closed_form_exclusions, exclusion_set, lattice_count, lattice_sum,
                                 measure_bound, partition_interval, small_nu_threshold)
from lindstedt.models import GOLDEN
from lindstedt.multiscale import ScaleContext


def _ctx(model, n0):
    C = model.rotation.C0 * 2.0**-n0
    return ScaleContext.build(model, 2.5 * C**2 / (4 * model.spectrum.a_s), n0=n0)


@pytest.mark.parametrize("r,n", [(1, 3), (2, 1), (2, 5), (3, 4)])
def test_lattice_count_brute_force(r, n):
    brute = sum(1 for v in itertools.product(range(-n, n + 1), repeat=r) if sum(map(abs, v)) == n)
    assert lattice_count(r, n) == brute


def test_lattice_sum_tail_is_upper_bound():
    exact = math.fsum(lattice_count(2, n) * n**-4.0 for n in range(1, 200_000))
    approx = lattice_sum(2, 4.0)
    assert exact <= approx <= exact * (1 + 1e-6)


def test_partition_covers_interval(forced_pendulum):
    ctx = _ctx(forced_pendulum, 4)
    parts = partition_interval(ctx)
    assert parts[0][0] == pytest.approx(ctx.I_C[0])
    assert parts[-1][1] == pytest.approx(ctx.I_C[1])
    for (a, b), (c, d) in zip(parts, parts[1:]):
        assert b == pytest.approx(c)
    assert len(parts) == ctx.n_intervals


def test_closed_form_matches_bisection(forced_pendulum):
    ctx = _ctx(forced_pendulum, 4)
    m = ctx.nbar0 - 1
    exact = closed_form_exclusions(m, ctx)
    found = exclusion_set(m, ctx)
    assert len(exact.intervals) == len(found.intervals) > 0
    for (a, b), (c, d) in zip(exact.intervals, found.intervals):
        assert abs(a - c) <= 1e-10 * a
        assert abs(b - d) <= 1e-10 * b


def test_excluded_eps_has_witness(forced_pendulum):
    ctx = _ctx(forced_pendulum, 4)
    m = ctx.nbar0 - 1
    ex = closed_form_exclusions(m, ctx)
    lo, hi = ex.intervals[0]
    bad = 0.5 * (lo + hi)
    verdict = admissible(bad, ctx, N_scales=m)
    assert not verdict
    assert verdict.witness["m"] == m
    assert tuple(verdict.witness["nu"]) == ex.witnesses[0].nu or verdict.witness["gap"] < verdict.witness["threshold"]
    good = next(e for e in np.linspace(*ctx.I_C, 97)[1:-1] if not ex.contains(e))
    assert admissible(good, ctx, N_scales=m)


def test_violations_respect_small_norm_threshold(forced_pendulum):
    ctx = _ctx(forced_pendulum, 6)
    ex = closed_form_exclusions(ctx.nbar0 - 1, ctx)
    thr = small_nu_threshold(ctx)
    assert all(sum(map(abs, p.nu)) >= thr for p in ex.pieces)


def test_measure_bound_decreases_with_scale(forced_pendulum):
    ctx = _ctx(forced_pendulum, 4)
    bounds = [measure_bound(m, ctx) for m in range(ctx.nbar0 - 1, ctx.nbar0 + 4)]
    assert all(a > b for a, b in zip(bounds, bounds[1:]))


def test_pendulum_resonance_is_excluded(pendulum):
    # sqrt(eps) = omega puts the normal frequency on the first harmonic
    verdict = admissible(GOLDEN**2, model=pendulum)
    assert not verdict
    assert verdict.witness["nu"] == (1,) or verdict.witness["nu"] == (-1,)


def test_free_rotators_have_no_exclusions():
    from lindstedt.models import free_rotators
    model = free_rotators()
    assert admissible(0.01, model=model)
