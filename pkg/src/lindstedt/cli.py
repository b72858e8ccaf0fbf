"""
Command-line driver.

    lindstedt coeffs      --model pendulum --K 4
    lindstedt resum       --model pendulum --eps 0.01 --K 4
    lindstedt exclusions  --model forced_pendulum --n0 4
    lindstedt verify      --model two_by_two --eps 0.01

Models are YAML files (or the names of the bundled ones).  A run file given
with ``--config`` supplies defaults for every flag.  Exit codes: 0 success,
2 configuration error, 3 excluded eps, 4 certificate failure.  The output
directory is ``--output`` unless ``LINDSTEDT_OUTPUT_DIR`` is set.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .epsdomain import (a2_constant, admissible, default_nu_max, exclusion_set, measure_bound,
                        partition_interval, piece_shifts, small_nu_threshold)
from .errors import CertificateError, ConfigError, ExcludedEpsilonError, HypothesisError, LadderError
from .hamiltonian import Model, RotationVector, TrigPolynomial
from .models import GOLDEN, scanned_rotation
from .multiscale import Ladder, ScaleContext, renormalized_table
from .trees import bare_table
from .verify import (Certificate, certificate_suite, compare_tree_vs_oracle, eom_residual, fourier_sum,
                     ladder_table_certificates)

__all__ = ["main", "RunConfig", "load_model", "load_yaml"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EXCLUDED = 3
EXIT_CERTIFICATE = 4


# ---------------------------------------------------------------------------
# YAML with line numbers


def load_yaml(path):
    """Parse a YAML file and return ``(data, lines)``; ``lines`` maps key paths to line numbers."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ConfigError(f"{where}: invalid YAML ({getattr(exc, 'problem', exc)})") from None
    lines = {}
    if node is None:
        return {}, lines
    loader = yaml.SafeLoader("")

    def convert(n, key):
        lines[key] = n.start_mark.line + 1
        if isinstance(n, yaml.MappingNode):
            return {str(k.value): convert(v, key + (str(k.value),)) for k, v in n.value}
        if isinstance(n, yaml.SequenceNode):
            return [convert(v, key + (i,)) for i, v in enumerate(n.value)]
        return loader.construct_object(n, deep=True)

    return convert(node, ()), lines


class _Source:
    def __init__(self, path, data, lines):
        self.path, self.data, self.lines = path, data, lines

    def fail(self, key, msg):
        line = self.lines.get(key)
        while line is None and key:
            key = key[:-1]
            line = self.lines.get(key)
        where = f"{self.path}:{line}" if line else str(self.path)
        raise ConfigError(f"{where}: {msg}")

    def get(self, key, default=None):
        cur = self.data
        for k in key:
            if not isinstance(cur, (dict, list)):
                return default
            try:
                cur = cur[k]
            except (KeyError, IndexError, TypeError):
                return default
        return cur


def _number(src, key, value, positive=False, allow_zero=True):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        src.fail(key, f"'{'.'.join(map(str, key))}' must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        src.fail(key, f"'{'.'.join(map(str, key))}' must be finite")
    if positive and (value < 0 or (value == 0 and not allow_zero)):
        src.fail(key, f"'{'.'.join(map(str, key))}' must be positive, got {value!r}")
    return value


def _int_list(src, key, value, length):
    if not isinstance(value, list) or len(value) != length or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value):
        src.fail(key, f"'{'.'.join(map(str, key))}' must be a list of {length} integers, got {value!r}")
    return tuple(value)


def _resolve_model_path(name):
    p = Path(name)
    if p.exists() or p.suffix in (".yaml", ".yml"):
        return p
    bundled = resources.files("lindstedt") / "data" / f"{name}.yaml"
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"model '{name}' not found (neither a file nor a bundled model)")


def load_model(name, N_check=None):
    """Build a :class:`Model` from a YAML model file or bundled model name."""
    path = _resolve_model_path(name)
    data, lines = load_yaml(path)
    src = _Source(path, data, lines)
    if not isinstance(data, dict):
        src.fail((), "model file must be a mapping")
    allowed = {"name", "omega", "tau0", "C0", "N_check", "beta_guess", "terms"}
    for k in data:
        if k not in allowed:
            src.fail((k,), f"unknown key '{k}'")
    for k in ("omega", "terms"):
        if k not in data:
            src.fail((), f"missing required key '{k}'")
    omega = data["omega"]
    if not isinstance(omega, list) or not omega:
        src.fail(("omega",), "'omega' must be a non-empty list")
    om = []
    for i, w in enumerate(omega):
        om.append(GOLDEN if w == "golden" else _number(src, ("omega", i), w))
    r = len(om)
    tau0 = _number(src, ("tau0",), data.get("tau0", 1.0), positive=True)
    n_check = data.get("N_check", 100) if N_check is None else N_check
    if not isinstance(n_check, int) or n_check < 1:
        src.fail(("N_check",), f"'N_check' must be a positive integer, got {n_check!r}")
    beta_guess = data.get("beta_guess", [])
    if not isinstance(beta_guess, list):
        src.fail(("beta_guess",), "'beta_guess' must be a list")
    s = len(beta_guess)
    bg = [_number(src, ("beta_guess", i), b) for i, b in enumerate(beta_guess)]
    terms = data["terms"]
    if not isinstance(terms, list) or not terms:
        src.fail(("terms",), "'terms' must be a non-empty list")
    parsed = []
    for t, term in enumerate(terms):
        key = ("terms", t)
        if not isinstance(term, dict):
            src.fail(key, "each term must be a mapping with nu, mu, amp")
        for k in term:
            if k not in ("nu", "mu", "amp", "phase"):
                src.fail(key + (k,), f"unknown term key '{k}'")
        if "nu" not in term or "amp" not in term:
            src.fail(key, "term needs 'nu' and 'amp'")
        nu = _int_list(src, key + ("nu",), term["nu"], r)
        mu = _int_list(src, key + ("mu",), term.get("mu", [0] * s), s)
        amp = _number(src, key + ("amp",), term["amp"])
        phase = _number(src, key + ("phase",), term.get("phase", 0.0))
        parsed.append((nu, mu, amp, phase))
    try:
        f = TrigPolynomial.from_cosines(r, s, parsed)
        c0 = data.get("C0", "scan")
        if c0 == "scan":
            rot = scanned_rotation(tuple(om), tau0, n_check)
        else:
            rot = RotationVector(tuple(om), _number(src, ("C0",), c0, positive=True, allow_zero=False), tau0)
        return Model.build(f, rot, bg, name=str(data.get("name", path.stem)))
    except (ConfigError, HypothesisError) as exc:
        src.fail((), str(exc))


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Every knob of a run; ``None`` means "use the default"."""

    command: str
    model: str | None = None
    K: int = 4
    K_SE: int = 4
    N_max: int | None = None
    nu_max: int | None = None
    N_check: int | None = None
    eps: float | None = None
    n0: int | None = None
    interval: int | None = None
    m_max: int | None = None
    nu: list = field(default_factory=list)
    grid: int = 16
    tol: float = 1e-12
    null_tol: float = 1e-10
    oracle_tol: float = 1e-10
    output: str = "lindstedt_out"
    actions: bool = False
    inject_asymmetry: float | None = None
    ladder: str | None = None

    def validate(self):
        if not self.model:
            raise ConfigError("a model is required (--model)")
        for name in ("K", "K_SE", "grid"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        for name in ("N_max", "nu_max", "N_check", "m_max"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or v < 1):
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        for name in ("tol", "null_tol", "oracle_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.eps is not None and not (self.eps > 0 and math.isfinite(self.eps)):
            raise ConfigError(f"eps must be positive, got {self.eps!r}")
        if self.n0 is not None and self.n0 < 0:
            raise ConfigError("n0 must be non-negative")


def _run_config(args):
    base = {}
    if args.config:
        data, lines = load_yaml(args.config)
        src = _Source(args.config, data, lines)
        if not isinstance(data, dict):
            src.fail((), "run file must be a mapping")
        known = {f.name for f in fields(RunConfig)} - {"command"}
        for k, v in data.items():
            if k not in known:
                src.fail((k,), f"unknown key '{k}'")
            base[k] = v
    for f in fields(RunConfig):
        if f.name == "command":
            continue
        v = getattr(args, f.name, None)
        if v is not None and v is not False and v != []:
            base[f.name] = v
    cfg = RunConfig(command=args.command, **base)
    env = os.environ.get("LINDSTEDT_OUTPUT_DIR")
    if env:
        cfg.output = env
    cfg.validate()
    return cfg


def _context(model, cfg):
    if cfg.eps is None:
        if cfg.n0 is None:
            raise ConfigError("give eps or n0")
        C = model.rotation.C0 * 2.0**-cfg.n0
        eps_min = C**2 / (4 * model.spectrum.a_s)
        probe = ScaleContext.build(model, 2.5 * eps_min, n0=cfg.n0)
        parts = partition_interval(probe)
        idx = len(parts) // 2 if cfg.interval is None else cfg.interval
        if not 0 <= idx < len(parts):
            raise ConfigError(f"interval index {idx} outside 0..{len(parts) - 1}")
        lo, hi = parts[idx]
        return ScaleContext.build(model, 0.5 * (lo + hi), n0=cfg.n0)
    return ScaleContext.build(model, cfg.eps, n0=cfg.n0)


# ---------------------------------------------------------------------------
# output


def _g(v):
    v = float(v)
    return "0" if v == 0.0 else repr(v)


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(outdir, name, text):
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / name, "w", newline="") as fh:
        fh.write(text)


def _nu_str(nu):
    return " ".join(str(int(c)) for c in nu)


def _vector_rows(table, prefix=()):
    rows = []
    for nu in sorted(table):
        vec = np.asarray(table[nu], dtype=complex)
        for g, v in enumerate(vec, start=1):
            rows.append(list(prefix) + [_nu_str(nu), g, _g(v.real), _g(v.imag)])
    return rows


def _witness_text(w):
    return " ".join(f"{k}={w[k]!r}" for k in sorted(w, key=str))


# ---------------------------------------------------------------------------
# commands


def cmd_coeffs(cfg, model, out):
    table = bare_table(model, cfg.K)
    for k in range(1, cfg.K + 1):
        coeffs = table.coeffs.get(k, {})
        _write(out, f"coeffs_k{k}.csv", _csv(_vector_rows(coeffs, (k,)), ["k", "nu", "gamma", "re", "im"]))
        if cfg.actions:
            acts = {nu: 1j * model.frequency(nu) * np.asarray(v) for nu, v in coeffs.items()}
            _write(out, f"actions_k{k}.csv", _csv(_vector_rows(acts, (k,)), ["k", "nu", "gamma", "re", "im"]))
    return EXIT_OK


def _admissible_ladder(cfg, model, ctx):
    """Admissibility check and ladder; raises ExcludedEpsilonError with a witness."""
    low = admissible(ctx.eps, ctx, N_scales=ctx.nbar0 - 1, nu_max=cfg.nu_max)
    if not low:
        raise ExcludedEpsilonError("eps is excluded", witness=low.witness)
    ladder = Ladder(ctx, K_SE=cfg.K_SE, N_max=cfg.N_max)
    full = admissible(ctx.eps, ctx, ladder=ladder, N_scales=ladder.N_max, nu_max=cfg.nu_max)
    if not full:
        raise ExcludedEpsilonError("eps is excluded", witness=full.witness)
    return ladder


def cmd_resum(cfg, model, out):
    ctx = _context(model, cfg)
    ladder = _admissible_ladder(cfg, model, ctx)
    h = renormalized_table(ladder, cfg.K)
    shown = h
    if cfg.nu:
        want = {tuple(int(c) for c in str(v).split()) for v in cfg.nu}
        shown = {nu: v for nu, v in h.items() if nu in want}
    _write(out, "h.csv", _csv(_vector_rows(shown), ["nu", "gamma", "re", "im"]))
    _write(out, "ladder.csv", ladder.dump_csv())
    r = model.r
    grid, val = fourier_sum(h, r, cfg.grid)
    val = np.zeros((len(grid), model.d)) if val is None else val.real
    rows = []
    for psi, v in zip(grid, val):
        rows.append([_g(p) for p in psi] + [_g(p + a) for p, a in zip(psi, v[:r])]
                    + [_g(b0 + b) for b0, b in zip(model.beta0, v[r:])])
    header = ([f"psi{i}" for i in range(1, r + 1)] + [f"alpha{i}" for i in range(1, r + 1)]
              + [f"beta{i}" for i in range(1, model.s + 1)])
    _write(out, "torus.csv", _csv(rows, header))
    res = eom_residual(model, h, ctx.eps)
    _write(out, "residual.txt", f"eps={ctx.eps!r} n0={ctx.n0} K={cfg.K} K_SE={cfg.K_SE} "
                                f"N_max={ladder.N_max} residual={res!r}\n")
    return EXIT_OK


def cmd_exclusions(cfg, model, out):
    ctx = _context(model, cfg)
    m_max = ctx.nbar0 + 2 if cfg.m_max is None else cfg.m_max
    nu_max = default_nu_max(ctx) if cfg.nu_max is None else cfg.nu_max
    first = ctx.nbar0 - 1
    shifts = piece_shifts(ctx, m_max, cfg.K_SE) if model.s and m_max >= ctx.nbar0 else {}
    rows, summary = [], []
    summary.append(f"model={model.name} n0={ctx.n0} nbar0={ctx.nbar0} I_C=({ctx.I_C[0]!r}, {ctx.I_C[1]!r}) "
                   f"pieces={ctx.n_intervals} nu_max={nu_max} K_A2={a2_constant(ctx)!r} "
                   f"small_nu_threshold={small_nu_threshold(ctx)!r}")
    for m in range(first, m_max + 1):
        ex = exclusion_set(m, ctx, nu_max=nu_max, K_SE=cfg.K_SE, shifts=shifts.get(m))
        rows += ex.rows()
        bound = measure_bound(m, ctx)
        small = min((sum(abs(c) for c in p.nu) for p in ex.pieces), default=0)
        summary.append(f"m={m} pieces={len(ex.pieces)} intervals={len(ex.intervals)} measure={ex.measure!r} "
                       f"bound={bound!r} within_bound={'yes' if ex.measure <= bound else 'no'} "
                       f"fraction={ex.fraction!r} tail_bound={ex.tail_bound!r} lipschitz={ex.lipschitz!r} "
                       f"min_violating_norm={small}")
    _write(out, "exclusions.csv", _csv(rows, ["m", "nu", "signs", "j", "i", "eps_lo", "eps_hi", "length"]))
    _write(out, "exclusions_summary.txt", "\n".join(summary) + "\n")
    return EXIT_OK


def cmd_verify(cfg, model, out):
    records = []
    if cfg.ladder:
        try:
            text = Path(cfg.ladder).read_text()
        except FileNotFoundError:
            raise ConfigError(f"{cfg.ladder}: file not found") from None
        records += ladder_table_certificates(text, cfg.tol)
    ctx = _context(model, cfg)
    ladder = _admissible_ladder(cfg, model, ctx)
    if cfg.inject_asymmetry:
        d = model.d
        bump = np.zeros((d, d), dtype=complex)
        if d > 1:
            bump[0, d - 1] = cfg.inject_asymmetry
        else:
            bump[0, 0] = 1j * cfg.inject_asymmetry
        ladder.corrupt(1, bump)
    renormalized_table(ladder, cfg.K)
    report = certificate_suite(ladder, symmetry_tol=cfg.tol, null_tol=cfg.null_tol)
    dev = compare_tree_vs_oracle(model, cfg.K, tolerance=cfg.oracle_tol)
    records = [Certificate("tree_oracle_deviation", dev.max_deviation, cfg.oracle_tol, dev.passed,
                           f"entries={len(dev.deviations)}")] + records + list(report.records)
    text = "".join(c.line() + "\n" for c in records)
    _write(out, "certificates.txt", text)
    failed = [c.name for c in records if not c.passed]
    if failed:
        raise CertificateError("certificate failures: " + ", ".join(failed))
    return EXIT_OK


COMMANDS = {"coeffs": cmd_coeffs, "resum": cmd_resum, "exclusions": cmd_exclusions, "verify": cmd_verify}


def build_parser():
    parser = argparse.ArgumentParser(prog="lindstedt", description="Lindstedt series for elliptic lower-dimensional tori.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run file supplying defaults")
        p.add_argument("--model", help="model YAML file or bundled model name")
        p.add_argument("--output", help="output directory")
        p.add_argument("--K", type=int, help="tree degree truncation")
        p.add_argument("--K-SE", dest="K_SE", type=int, help="self-energy cluster order truncation")
        p.add_argument("--N-max", dest="N_max", type=int, help="deepest scale")
        p.add_argument("--nu-max", dest="nu_max", type=int, help="lattice radius for exclusion scans")
        p.add_argument("--N-check", dest="N_check", type=int, help="radius of the Diophantine scan")
        p.add_argument("--eps", type=float, help="perturbation parameter")
        p.add_argument("--n0", type=int, help="scale bracket of eps")
        p.add_argument("--interval", type=int, help="partition piece index when eps is not given")
        p.add_argument("--tol", type=float, help="symmetry tolerance")
        if name == "coeffs":
            p.add_argument("--actions", action="store_true", help="also write action-variable coefficients")
        if name == "resum":
            p.add_argument("--nu", action="append", help="momentum to report, e.g. '1' or '1 -2' (repeatable)")
            p.add_argument("--grid", type=int, help="torus samples per angle")
        if name == "exclusions":
            p.add_argument("--m-max", dest="m_max", type=int, help="largest scale index")
        if name == "verify":
            p.add_argument("--inject-asymmetry", dest="inject_asymmetry", type=float,
                           help="add a non-symmetric perturbation of this size to M^[1]")
            p.add_argument("--ladder", help="ladder CSV to check for symmetry")
            p.add_argument("--null-tol", dest="null_tol", type=float, help="null-block tolerance (relative to eps)")
            p.add_argument("--oracle-tol", dest="oracle_tol", type=float, help="tree vs oracle tolerance")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _run_config(args)
        model = load_model(cfg.model, cfg.N_check)
        out = Path(cfg.output)
        return COMMANDS[cfg.command](cfg, model, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExcludedEpsilonError as exc:
        w = exc.witness or {}
        print(f"excluded eps: {exc} {_witness_text(w)}".rstrip(), file=sys.stderr)
        return EXIT_EXCLUDED
    except (CertificateError, LadderError) as exc:
        print(f"certificate failure: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
