"""Acceptance criteria, one pass/fail line each.

Run ``python tests/test_acceptance.py`` for the summary, or through pytest
(``pytest tests/test_acceptance.py -s`` shows the lines).
"""

import functools
import math
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from lindstedt import models
from lindstedt.epsdomain import admissible, exclusion_set, measure_bound, piece_shifts
from lindstedt.multiscale import Ladder, ScaleContext, renormalized_table
from lindstedt.verify import (certificate_suite, compare_tree_vs_oracle, eom_residual, fit_exponent,
                              self_energy_taylor)

EPS_LADDER = (1e-2, 5e-3, 2.5e-3)
ORACLE_TOL = 1e-10
SYMMETRY_TOL = 1e-12
AA_EXPONENT, AB_EXPONENT = 1.9, 0.9
NULL_TOL = 1e-10
RESIDUAL_SLOPE, SLOPE_TOL = 5.0, 0.3


@functools.lru_cache(maxsize=None)
def _model(name):
    return getattr(models, name)()


@functools.lru_cache(maxsize=None)
def _ladder(name, eps):
    ctx = ScaleContext.build(_model(name), eps)
    if not admissible(eps, ctx):
        raise AssertionError(f"{name} at eps={eps} is not admissible")
    ladder = Ladder(ctx, K_SE=4)
    renormalized_table(ladder, 2)  # populates the keys the series actually uses
    return ladder


@functools.lru_cache(maxsize=None)
def _report(name, eps):
    return certificate_suite(_ladder(name, eps), symmetry_tol=SYMMETRY_TOL, null_tol=NULL_TOL)


def _ladders():
    return [(name, eps) for name in ("pendulum", "two_by_two") for eps in EPS_LADDER]


def criterion_1():
    t = time.perf_counter()
    rep = compare_tree_vs_oracle(_model("pendulum"), 4, tolerance=ORACLE_TOL)
    dt = time.perf_counter() - t
    ok = rep.passed and dt < 60.0
    return ok, f"pendulum k<=4 max rel deviation {rep.max_deviation:.2e} (tol {ORACLE_TOL:g}), {dt:.1f} s (< 60 s)"


def criterion_2():
    model = _model("two_by_two")
    rep = compare_tree_vs_oracle(model, 3, tolerance=ORACLE_TOL)
    ladder = _ladder("two_by_two", 1e-2)
    r = model.r
    worst = 0.0
    for key in [((1, 0), 0.0), ((0, 1), 0.0), ((1, -1), 0.0)]:
        lin = self_energy_taylor(ladder, ladder.N_max, key)[1]
        worst = max(worst, float(np.max(np.abs(lin[r:, r:] - model.hessian_ext[r:, r:]))))
    ok = rep.passed and worst <= 1e-10
    return ok, (f"two_by_two k<=3 max rel deviation {rep.max_deviation:.2e}; "
                f"order-eps term of M_bb vs Hessian {worst:.2e} (tol 1e-10)")


def criterion_3():
    herm = max(_report(*k)["hermiticity"].measured for k in _ladders())
    trans = max(_report(*k)["transpose_symmetry"].measured for k in _ladders())
    keys = sum(len(_ladder(*k).keys()) for k in _ladders())
    ok = herm <= SYMMETRY_TOL and trans <= SYMMETRY_TOL
    return ok, f"hermiticity {herm:.2e}, transpose symmetry {trans:.2e} (tol {SYMMETRY_TOL:g}) over {keys} keys, K_SE=4"


def criterion_4():
    aa = min(_report(*k)["alpha_alpha_exponent"].measured for k in _ladders())
    ab = min(_report(*k)["alpha_beta_exponent"].measured for k in _ladders())
    null = max(_ladder(*k).stats.null_block for k in _ladders())
    ok = aa >= AA_EXPONENT and ab >= AB_EXPONENT and null <= NULL_TOL
    return ok, (f"min alpha-alpha exponent {aa:.3f} (>= {AA_EXPONENT}), min alpha-beta exponent {ab:.3f} "
                f"(>= {AB_EXPONENT}), max null-block |lam_bar|/eps {null:.2e} (<= {NULL_TOL:g})")


def criterion_5():
    parts, ok = [], True
    for name, eps in _ladders():
        c = _report(name, eps)["eigenvalue_stability_gamma"]
        ladder = _ladder(name, eps)
        ok &= c.passed and ladder.N_max >= ladder.ctx.nbar0 + 3
        parts.append(f"{name}@{eps:g}:{c.measured:.3g}")
    return ok, "gamma " + " ".join(parts)


def criterion_6():
    trees = clusters = viol = cviol = 0
    for k in _ladders():
        st = _ladder(*k).stats
        trees += st.trees_checked
        clusters += st.clusters_checked
        viol += st.counting_violations
        cviol += st.cluster_bound_violations
    ok = viol == 0 and cviol == 0 and trees > 0 and clusters > 0
    return ok, f"counting violations {viol} / {trees} trees, cluster harmonic violations {cviol} / {clusters} clusters"


def criterion_7():
    model = _model("forced_pendulum")
    fractions, ok, parts = [], True, []
    for n0 in (4, 6, 8):
        C = model.rotation.C0 * 2.0**-n0
        ctx = ScaleContext.build(model, 2.5 * C**2 / (4 * model.spectrum.a_s), n0=n0)
        m_max = ctx.nbar0 + 2
        shifts = piece_shifts(ctx, m_max)
        union, ratio = [], 0.0
        for m in range(ctx.nbar0 - 1, m_max + 1):
            ex = exclusion_set(m, ctx, shifts=shifts.get(m))
            bound = measure_bound(m, ctx)
            ok &= ex.measure <= bound
            ratio = max(ratio, ex.measure / bound)
            union += ex.intervals
        parts.append(f"n0={n0}: max |E_m|/bound {ratio:.2e} for m={ctx.nbar0 - 1}..{m_max}")
        union.sort()
        merged = []
        for lo, hi in union:
            if merged and lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        excluded = math.fsum(hi - lo for lo, hi in merged)
        fractions.append(1.0 - excluded / (ctx.I_C[1] - ctx.I_C[0]))
    ok &= all(a < b for a, b in zip(fractions, fractions[1:]))
    return ok, "; ".join(parts) + "; admissible fractions " + ", ".join(f"{f:.10f}" for f in fractions)


def criterion_8():
    model = _model("pendulum")
    eps_list = (0.04, 0.02, 0.01)
    res, unity, checked = [], 0.0, 0
    for eps in eps_list:
        ctx = ScaleContext.build(model, eps)
        assert admissible(eps, ctx)
        ladder = Ladder(ctx, K_SE=4)
        h = renormalized_table(ladder, 4)
        res.append(eom_residual(model, h, eps))
        unity = max(unity, ladder.stats.unity_deviation)
        checked += ladder.stats.unity_checked
    slope = fit_exponent(eps_list, res)
    ok = abs(slope - RESIDUAL_SLOPE) <= SLOPE_TOL and unity == 0.0 and checked > 0
    return ok, (f"residuals {', '.join(f'{r:.2e}' for r in res)}, slope {slope:.3f} "
                f"({RESIDUAL_SLOPE} +- {SLOPE_TOL}); partition of unity max |sum-1| {unity:g} over {checked} frequencies")


def _cli(*args):
    return subprocess.run([sys.executable, "-m", "lindstedt.cli", *args], capture_output=True, text=True)


def criterion_9():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        runs = [_cli("resum", "--model", "pendulum", "--eps", "0.01", "--K", "3", "--output", str(tmp / d))
                for d in ("a", "b")]
        same = all(r.returncode == 0 for r in runs) and all(
            (tmp / "a" / f).read_bytes() == (tmp / "b" / f).read_bytes()
            for f in ("h.csv", "ladder.csv", "torus.csv", "residual.txt"))
        asym = _cli("verify", "--model", "two_by_two", "--eps", "0.005", "--K", "2", "--K-SE", "2",
                    "--inject-asymmetry", "1e-6", "--output", str(tmp / "c")).returncode
        reson = _cli("resum", "--model", "pendulum", "--eps", repr(models.GOLDEN**2), "--K", "2",
                     "--output", str(tmp / "d")).returncode
    ok = same and asym == 4 and reson == 3
    return ok, f"byte-identical reruns {'yes' if same else 'no'}; broken symmetry exit {asym} (want 4); resonant eps exit {reson} (want 3)"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9]


def _line(i, ok, detail):
    return f"criterion {i}: {'PASS' if ok else 'FAIL'} - {detail}"


@pytest.mark.parametrize("i", range(1, len(CRITERIA) + 1))
def test_criterion(i):
    ok, detail = CRITERIA[i - 1]()
    print(_line(i, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for i, fn in enumerate(CRITERIA, start=1):
        try:
            ok, detail = fn()
        except Exception as exc:  # report and keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        failed += not ok
        print(_line(i, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
