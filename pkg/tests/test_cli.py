import csv
import math
from pathlib import Path

import numpy as np
import pytest

from lindstedt.cli import main
from lindstedt.models import GOLDEN
from lindstedt.verify import oracle_lindstedt

GOLDEN_DIR = Path(__file__).parent / "golden" / "pendulum"


@pytest.fixture(autouse=True)
def _no_env_output(monkeypatch):
    monkeypatch.delenv("LINDSTEDT_OUTPUT_DIR", raising=False)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _assert_close_tables(a, b, rtol=1e-12):
    ra, rb = _rows(a), _rows(b)
    assert ra[0] == rb[0]
    assert len(ra) == len(rb)
    for x, y in zip(ra[1:], rb[1:]):
        for u, v in zip(x, y):
            try:
                fu, fv = float(u), float(v)
            except ValueError:
                assert u == v
                continue
            assert math.isclose(fu, fv, rel_tol=rtol, abs_tol=1e-300) or abs(fu - fv) <= 1e-15 * max(1.0, abs(fv))


def test_coeffs_match_golden(tmp_path):
    assert main(["coeffs", "--model", "pendulum", "--K", "4", "--output", str(tmp_path)]) == 0
    for k in range(1, 5):
        _assert_close_tables(tmp_path / f"coeffs_k{k}.csv", GOLDEN_DIR / f"coeffs_k{k}.csv")


def test_golden_coeffs_agree_with_fourier_recursion(pendulum):
    oracle = oracle_lindstedt(pendulum, 4)
    for k in range(1, 5):
        for row in _rows(GOLDEN_DIR / f"coeffs_k{k}.csv")[1:]:
            nu = (int(row[1]),)
            want = oracle.coefficient(k, nu)
            want = 0j if want is None else want[int(row[2]) - 1]
            assert abs(complex(float(row[3]), float(row[4])) - want) <= 1e-12 * max(1.0, abs(want))


def test_resum_matches_golden(tmp_path):
    assert main(["resum", "--model", "pendulum", "--eps", "0.01", "--K", "3", "--output", str(tmp_path)]) == 0
    for name in ("h.csv", "ladder.csv", "torus.csv"):
        _assert_close_tables(tmp_path / name, GOLDEN_DIR / name)


def test_runs_are_byte_identical(tmp_path):
    for sub in ("a", "b"):
        assert main(["resum", "--model", "pendulum", "--eps", "0.01", "--K", "2",
                     "--output", str(tmp_path / sub)]) == 0
    for name in ("h.csv", "ladder.csv", "torus.csv", "residual.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_actions_file(tmp_path):
    assert main(["coeffs", "--model", "pendulum", "--K", "2", "--actions", "--output", str(tmp_path)]) == 0
    assert (tmp_path / "actions_k2.csv").exists()


def test_resonant_eps_exits_3(tmp_path, capsys):
    code = main(["resum", "--model", "pendulum", "--eps", repr(GOLDEN**2), "--K", "2", "--output", str(tmp_path)])
    assert code == 3
    assert "nu=" in capsys.readouterr().err


def test_asymmetry_injection_exits_4(tmp_path):
    code = main(["verify", "--model", "two_by_two", "--eps", "0.005", "--K", "2", "--K-SE", "2",
                 "--inject-asymmetry", "1e-6", "--output", str(tmp_path)])
    assert code == 4
    text = (tmp_path / "certificates.txt").read_text()
    assert "name=hermiticity" in text and "pass=no" in text


def test_verify_clean_run(tmp_path):
    code = main(["verify", "--model", "pendulum", "--eps", "0.01", "--K", "3", "--output", str(tmp_path)])
    assert code == 0
    assert "pass=no" not in (tmp_path / "certificates.txt").read_text()


def test_corrupted_ladder_file_fails(tmp_path):
    rows = _rows(GOLDEN_DIR / "ladder.csv")
    col = rows[0].index("M12_re")
    rows[4][col] = repr(float(rows[4][col]) + 1e-6)
    bad = tmp_path / "bad.csv"
    with open(bad, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    code = main(["verify", "--model", "pendulum", "--eps", "0.01", "--K", "2", "--ladder", str(bad),
                 "--output", str(tmp_path / "out")])
    assert code == 4
    assert main(["verify", "--model", "pendulum", "--eps", "0.01", "--K", "2",
                 "--ladder", str(GOLDEN_DIR / "ladder.csv"), "--output", str(tmp_path / "ok")]) == 0


@pytest.mark.parametrize("argv", [
    ["coeffs", "--model", "pendulum", "--K", "0"],
    ["coeffs", "--model", "no_such_model"],
    ["resum", "--model", "pendulum", "--eps", "-1"],
    ["resum", "--model", "pendulum"],
])
def test_bad_arguments_exit_2(argv, tmp_path):
    assert main(argv + ["--output", str(tmp_path)]) == 2


def test_model_file_errors_carry_line_numbers(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\nomega: [golden]\nterms:\n  - {nu: [1, 2], amp: 1.0}\n")
    assert main(["coeffs", "--model", str(bad), "--output", str(tmp_path)]) == 2
    assert "bad.yaml:4:" in capsys.readouterr().err


def test_unknown_run_key(tmp_path, capsys):
    run = tmp_path / "run.yaml"
    run.write_text("model: pendulum\nK: 2\nbogus: 1\n")
    assert main(["coeffs", "--config", str(run), "--output", str(tmp_path)]) == 2
    assert "run.yaml:3:" in capsys.readouterr().err


def test_run_file_and_env_output(tmp_path, monkeypatch):
    run = tmp_path / "run.yaml"
    run.write_text("model: pendulum\nK: 2\noutput: ignored\n")
    monkeypatch.setenv("LINDSTEDT_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["coeffs", "--config", str(run)]) == 0
    assert (tmp_path / "env" / "coeffs_k2.csv").exists()
    assert not (tmp_path / "env" / "coeffs_k3.csv").exists()


def test_exclusions_summary(tmp_path):
    assert main(["exclusions", "--model", "forced_pendulum", "--n0", "4", "--m-max", "3",
                 "--output", str(tmp_path)]) == 0
    summary = (tmp_path / "exclusions_summary.txt").read_text()
    assert "within_bound=yes" in summary
    assert len(_rows(tmp_path / "exclusions.csv")) > 1


def test_bundled_model_files_match_builtin(pendulum, two_by_two, forced_pendulum):
    from lindstedt.cli import load_model
    for built in (pendulum, two_by_two, forced_pendulum):
        loaded = load_model(built.name)
        assert loaded.rotation.C0 == pytest.approx(built.rotation.C0, rel=1e-12)
        np.testing.assert_allclose(loaded.beta0, built.beta0, atol=1e-12)
        assert set(loaded.f.coeffs) == set(built.f.coeffs)


def test_first_order_closed_form():
    # a^(1)_nu = (d_alpha f)_nu / (omega nu)^2 with d_alpha cos = -sin
    rows = {(r[1], r[2]): complex(float(r[3]), float(r[4])) for r in _rows(GOLDEN_DIR / "coeffs_k1.csv")[1:]}
    assert rows[("1", "1")] == pytest.approx(0.5j / GOLDEN**2, abs=1e-15)
    assert rows[("-1", "1")] == pytest.approx(-0.5j / GOLDEN**2, abs=1e-15)
    assert rows[("1", "2")] == 0


def test_inconsistent_n0_is_config_error(tmp_path, capsys):
    assert main(["resum", "--model", "pendulum", "--eps", "0.01", "--n0", "2", "--output", str(tmp_path)]) == 2
    assert "n0" in capsys.readouterr().err


def test_model_without_normal_part(tmp_path):
    assert main(["exclusions", "--model", "free_rotators", "--eps", "0.01", "--output", str(tmp_path)]) == 0
    assert len(_rows(tmp_path / "exclusions.csv")) == 1
    assert main(["verify", "--model", "free_rotators", "--eps", "0.01", "--K", "2", "--output", str(tmp_path)]) == 0


def test_eps_from_n0_and_interval(tmp_path):
    assert main(["resum", "--model", "pendulum", "--n0", "4", "--interval", "0", "--K", "2",
                 "--output", str(tmp_path)]) == 0
    assert "n0=4" in (tmp_path / "residual.txt").read_text()
    assert main(["resum", "--model", "pendulum", "--n0", "4", "--interval", "999", "--K", "2",
                 "--output", str(tmp_path)]) == 2
