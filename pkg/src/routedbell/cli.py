"""Command-line front end.

Every subcommand writes CSV (``--out``) plus a ``.meta.json`` sidecar with
the level, tolerances, seed and runtime.  CSV bodies depend only on the
flags, so reruns are byte-identical.

Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 failed
verification.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import re
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .bell import (CHSH_SCENARIO, BellExpression, DetectionMode, RoutedScenario, chsh,
                   jpm, jtheta, jtilde)
from .bounds import (CI_LEVEL, FIG8_LEVEL, BoundQuery, CriticalEtaQuery, critical_efficiency,
                     max_expression, run_parallel, standard_chsh_critical, tradeoff_curve)
from .errors import RoutedBellError
from .ncalg import ModelClass
from .sdp import SdpStatus, SolveOptions

log = logging.getLogger("routedbell")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3


class SolverFailure(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# Argument helpers
# ----------------------------------------------------------------------------

_ANGLE = re.compile(r"^\s*([+-]?[0-9.]*)\s*\*?\s*pi\s*(?:/\s*([0-9.]+))?\s*$", re.I)


def parse_angle(text: str) -> float:
    """Radians, with ``pi`` shorthand: ``pi/8``, ``3pi/8``, ``0.5*pi``, ``0.3927``."""
    m = _ANGLE.match(str(text))
    if m:
        num = m.group(1)
        k = float(num) if num not in ("", "+", "-") else (-1.0 if num == "-" else 1.0)
        den = float(m.group(2)) if m.group(2) else 1.0
        return k * math.pi / den
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an angle: {text!r}") from None


def parse_grid(text: str) -> List[float]:
    """``a:b:n`` (inclusive linspace) or a comma-separated list."""
    if ":" in text:
        a, b, n = text.split(":")
        return [float(v) for v in np.linspace(float(a), float(b), int(n))]
    return [float(v) for v in text.split(",") if v.strip()]


def _expr(name: str, theta: float = 0.0, theta_plus=None, theta_minus=None,
          scenario: RoutedScenario = CHSH_SCENARIO) -> BellExpression:
    key = name.lower().replace("_", "").replace("-", "")
    if key in ("chshs", "cs"):
        return chsh(scenario, "S")
    if key in ("chshl", "cl"):
        return chsh(scenario, "L")
    if key in ("jtheta", "jl", "j"):
        return jtheta(scenario, theta, "L")
    if key == "jpm":
        if theta_plus is None or theta_minus is None:
            raise RoutedBellError("jpm needs --theta-plus and --theta-minus")
        return jpm(scenario, theta_plus, theta_minus)
    if key == "jtilde":
        return jtilde(theta=theta)
    raise RoutedBellError(f"unknown expression {name!r}")


_CONS = re.compile(r"^\s*([A-Za-z_]+)\s*(<=|>=|==|=)\s*([-+0-9.eE]+)\s*$")


def parse_constraint(text: str, theta: float = 0.0):
    m = _CONS.match(text)
    if not m:
        raise RoutedBellError(f"bad constraint {text!r}; expected e.g. CS=2.8284271")
    name, rel, val = m.groups()
    return _expr(name, theta), rel, float(val)


def _status_ok(status: SdpStatus, value: float) -> bool:
    if status is SdpStatus.OPTIMAL or status is SdpStatus.PRIMAL_INFEASIBLE:
        return True
    return status is SdpStatus.NUMERICAL_TROUBLE and np.isfinite(value)


# ----------------------------------------------------------------------------
# Output
# ----------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.10g}"
    return str(v)


class Output:
    """CSV writer plus metadata sidecar."""

    def __init__(self, args, name: str):
        self.args = args
        self.path = Path(args.out) if args.out else None
        self.name = name
        self.header: Optional[Sequence[str]] = None
        self.rows: List[list] = []
        self.meta = dict(command=name, version=__version__, level=getattr(args, "level", None),
                         seed=args.seed, light=args.light, argv=sys.argv[1:],
                         gap_tol=SolveOptions().gap_tol, feas_tol=SolveOptions().feas_tol)
        self.t0 = time.time()

    def table(self, header, rows):
        self.header = list(header)
        self.rows = [[_fmt(v) for v in r] for r in rows]
        if self.meta["level"] is None and "level" in self.header:
            col = self.header.index("level")
            levels = sorted({r[col] for r in self.rows})
            self.meta["level"] = levels[0] if len(levels) == 1 else levels

    def text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()

    def write(self, path: Optional[Path] = None, **extra):
        path = path or self.path
        body = self.text()
        if path is None:
            sys.stdout.write(body)
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(body)
        meta = dict(self.meta, runtime_s=round(time.time() - self.t0, 3),
                    timestamp=time.strftime("%Y-%m-%dT%H:%M:%S"), **extra)
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")
        log.info("wrote %s", path)


def _level(args, default: str) -> str:
    return args.level if args.level else default


# ----------------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------------

def _theta(args) -> float:
    return 0.0 if args.theta is None else args.theta


def cmd_bound(args) -> int:
    theta = _theta(args)
    expr = _expr(args.expr, theta, args.theta_plus, args.theta_minus)
    cons = [parse_constraint(c, theta) for c in args.constrain]
    level = _level(args, "AB")
    res = max_expression(BoundQuery(expr, ModelClass.parse(args.cls), level, cons))
    out = Output(args, "bound")
    out.table(["expression", "class", "level", "value", "rigorous", "status"],
              [[expr.name, args.cls, res.level, res.value, res.rigorous, res.status.value]])
    out.write()
    if not _status_ok(res.status, res.value):
        return EXIT_SOLVER
    return EXIT_OK


def cmd_tradeoff(args) -> int:
    x = _expr(args.x, _theta(args))
    y = _expr(args.y, _theta(args), args.theta_plus, args.theta_minus)
    n = args.grid or (10 if args.light else 50)
    grid = np.linspace(0.0, math.pi / 2, n, endpoint=False)
    curve = tradeoff_curve(x, y, ModelClass.parse(args.cls), _level(args, "AB"), grid)
    out = Output(args, "tradeoff")
    out.table(["u", "k_u", "x_at_opt", "y_at_opt", "level", "status"],
              [[p.u, p.k_u, p.x_at_opt, p.y_at_opt, curve.level, p.status] for p in curve.points])
    out.write()
    bad = [p for p in curve.points if not np.isfinite(p.k_u)]
    return EXIT_SOLVER if bad else EXIT_OK


def _critical_row(q: CriticalEtaQuery):
    try:
        r = critical_efficiency(q)
        ok = _status_ok(r.status, r.eta_L)
        return r.eta_L, r.status.value if ok else "failed"
    except RoutedBellError as exc:
        log.warning("eta_S=%g failed: %s", q.eta_S, exc)
        return math.nan, "failed"


def _lower_row(item):
    q, cfg = item
    from .seesaw import critical_lower_bound
    return critical_lower_bound(q, 0.0, 1.0, steps=8, cfg=cfg)


def cmd_critical(args) -> int:
    grid = parse_grid(args.eta_s)
    mode = DetectionMode(args.mode)
    level = _level(args, CI_LEVEL)
    kw = dict(theta=_theta(args) if args.family in ("jtheta", "anticommuting") else None,
              theta_plus=args.theta_plus, theta_minus=args.theta_minus, nu=args.nu,
              standard=args.standard)
    qs = [CriticalEtaQuery(args.family, e, mode, ModelClass.parse(args.cls), level, **kw)
          for e in grid]
    res = run_parallel(_critical_row, qs, args.workers)
    lowers = [math.nan] * len(qs)
    if args.lower:
        from .seesaw import SeesawConfig
        cfg = SeesawConfig(restarts=2, max_rounds=150, seed=args.seed)
        lowers = run_parallel(_lower_row, [(q, cfg) for q in qs], args.workers)
    out = Output(args, "critical-eta")
    out.table(["eta_S", "eta_L_upper", "eta_L_lower", "mode", "family", "level", "status"],
              [[q.eta_S, r[0], lo, mode.value, args.family, level, r[1]]
               for q, r, lo in zip(qs, res, lowers)])
    out.write()
    return EXIT_SOLVER if any(r[1] == "failed" for r in res) else EXIT_OK


# figures -------------------------------------------------------------------

def _fig5(args, out: Output) -> int:
    """Tradeoff J^theta_L vs C_S: relaxation upper bound and see-saw value per u."""
    from .seesaw import SeesawConfig, seesaw_maximize
    theta = _theta(args)
    x, y = chsh(CHSH_SCENARIO, "S"), jtheta(CHSH_SCENARIO, theta, "L")
    n = args.grid or (8 if args.light else 40)
    grid = np.linspace(0.0, math.pi / 2, n, endpoint=False)
    curve = tradeoff_curve(x, y, ModelClass.Q_SR, _level(args, "AB"), grid)
    cfg = SeesawConfig(restarts=3 if args.light else 10, seed=args.seed)
    rows, worst = [], 0.0
    for p in curve.points:
        lo = seesaw_maximize([(math.cos(p.u), x), (math.sin(p.u), y)], "srq", cfg).value
        worst = max(worst, p.k_u - lo)
        rows.append([theta, p.u, p.k_u, lo, p.k_u - lo, curve.level, p.status])
    out.table(["theta", "u", "upper", "seesaw", "gap", "level", "status"], rows)
    out.meta["max_gap"] = worst
    return EXIT_OK


def _fig6(args, out: Output) -> int:
    """Visibility pairs (v_S, v_L) at which the J^theta test detects long-range correlations."""
    from scipy.optimize import brentq
    from .bell import evaluate
    from .qubits import apply_visibility, born_correlations, make_strategy
    thetas = [args.theta] if args.theta is not None else ([0.0, math.pi / 8] if args.light
                                                   else [0.0, math.pi / 16, math.pi / 8, 3 * math.pi / 16])
    vs_grid = np.linspace(0.85 if args.light else 0.8, 1.0, 4 if args.light else 21)
    rows = []
    for th in thetas:
        x, y = chsh(CHSH_SCENARIO, "S"), jtheta(CHSH_SCENARIO, th, "L")
        curve = tradeoff_curve(x, y, ModelClass.Q_SR, _level(args, "AB"),
                               np.linspace(0.0, math.pi / 2, 12 if args.light else 40, endpoint=False))
        for v_s in vs_grid:
            std = 1.0 / (v_s * (math.cos(th) + math.sin(th)))

            def excess(v_l):
                tab = born_correlations(apply_visibility(make_strategy("jtheta", th), "split",
                                                         v_S=v_s, v_L=v_l))
                return evaluate(y, tab) - curve.envelope(evaluate(x, tab), refine=False)
            if excess(1.0) <= 0:
                routed, status = math.nan, "no-violation"
            else:
                routed = brentq(excess, 0.0, 1.0, xtol=1e-9) if excess(0.0) < 0 else 0.0
                status = "ok"
            rows.append([th, v_s, std, routed, status])
    out.table(["theta", "v_S", "v_L_standard", "v_L_routed", "status"], rows)
    return EXIT_OK


def _fig8_queries(args):
    light = args.light
    default = np.linspace(0.9, 1.0, 3) if light else np.linspace(0.8, 1.0, 21)
    grid = parse_grid(args.eta_s) if args.eta_s else list(default)
    level = _level(args, CI_LEVEL if light else FIG8_LEVEL)
    curves = [("chsh", "bin", False), ("chsh", "keep", False), ("bb84", "bin", False),
              ("bb84", "keep", False), ("chsh", "bin", True)]
    qs = []
    for fam, mode, std in curves:
        for e in grid:
            qs.append(CriticalEtaQuery(fam, float(e), mode, ModelClass.Q_SR, level, standard=std))
    return qs, level


def _fig8(args, out: Output) -> int:
    qs, level = _fig8_queries(args)
    res = run_parallel(_critical_row, qs, args.workers)
    rows = []
    for q, (val, status) in zip(qs, res):
        ref = standard_chsh_critical(q.eta_S) if q.standard else math.nan
        rows.append([q.family, q.mode.value, "standard" if q.standard else "routed",
                     q.eta_S, val, ref, level, status])
    out.table(["family", "mode", "scenario", "eta_S", "eta_L_upper", "standard_formula",
               "level", "status"], rows)
    return EXIT_OK if all(r[-1] != "failed" for r in rows) else EXIT_SOLVER


def _fig9(args, out: Output) -> int:
    light = args.light
    nus = [0.93, 0.95, 0.97, 1.0] if light else [0.93, 0.94, 0.95, 0.96, 0.97, 0.98, 0.99, 1.0]
    grid = parse_grid(args.eta_s) if args.eta_s else ([1.0] if light else list(np.linspace(0.9, 1.0, 11)))
    level = _level(args, CI_LEVEL if light else FIG8_LEVEL)
    qs = [CriticalEtaQuery(fam, float(e), "keep", ModelClass.Q_SR, level, nu=nu)
          for fam in ("chsh", "bb84") for nu in nus for e in grid]
    res = run_parallel(_critical_row, qs, args.workers)
    out.table(["family", "nu", "eta_S", "eta_L_upper", "level", "status"],
              [[q.family, q.nu, q.eta_S, v, level, s] for q, (v, s) in zip(qs, res)])
    return EXIT_OK if all(s != "failed" for _, s in res) else EXIT_SOLVER


def _table1(args, out: Output) -> int:
    from .certificates import COLUMNS, ROWS, verify_table1
    rows = []
    ok = True
    for r in ROWS:
        for c in COLUMNS:
            chk = verify_table1(r, c, sdp=not args.light and r == "anticommuting")
            ok &= chk.passed
            p = chk.points[0] if chk.points else {}
            prm = {k: p[k] for k in ("theta", "theta_plus", "theta_minus") if k in p}
            rows.append([r, c, json.dumps(prm, sort_keys=True), p.get("formula", math.nan),
                         p.get("threshold", p.get("sdp_upper", math.nan)), chk.status])
    out.table(["row", "column", "params", "formula", "computed", "status"], rows)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_fig(args) -> int:
    out = Output(args, f"fig {args.which}")
    fn = dict(fig5=_fig5, fig6=_fig6, fig8=_fig8, fig9=_fig9, table1=_table1)[args.which]
    code = fn(args, out)
    out.write()
    return code


def cmd_verify(args) -> int:
    from . import certificates as cert
    lines = []
    ok = True
    if args.what == "sos":
        grid = np.linspace(0.0, math.pi / 4 - 1e-3, args.grid)
        fails = [u for u in grid if not cert.verify_sos_prop2(float(u))]
        ok = not fails and cert.verify_prop2_linearization(grid)
        lines.append([f"sos grid={args.grid}", "PASS" if ok else "FAIL",
                      f"failures={len(fails)}"])
    elif args.what == "table1":
        for r in cert.ROWS:
            for c in cert.COLUMNS:
                chk = cert.verify_table1(r, c, sdp=args.sdp)
                ok &= chk.passed
                status = ("PASS" if chk.status == "verified" else
                          "CONJECTURE" if chk.status == "conjecture-consistent" else "FAIL")
                lines.append([f"table1 {r}/{c}", status, chk.status])
    else:
        rep = cert.verify_bound_suite()
        ok = rep.passed
        lines += [[chk.name, "PASS" if chk.passed else "FAIL", chk.detail] for chk in rep.checks]
        thr = cert.bb84_visibility_threshold()
        good = abs(thr - cert.BB84_THRESHOLD) <= 1e-6
        ok &= good
        lines.append(["bb84 visibility threshold", "PASS" if good else "FAIL", f"{thr:.10f}"])
    for name, status, detail in lines:
        print(f"{status:10s} {name}  {detail}".rstrip(), file=sys.stderr)
    out = Output(args, f"verify {args.what}")
    out.table(["check", "result", "detail"], lines)
    out.write()
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_seesaw(args) -> int:
    from .seesaw import SeesawConfig, seesaw_maximize
    terms = []
    for item in args.objective:
        w, _, name = item.rpartition("*")
        terms.append((float(w) if w else 1.0, _expr(name, _theta(args))))
    cfg = SeesawConfig(d_A=args.dims[0], d_B=args.dims[1], restarts=args.restarts,
                       max_rounds=args.max_rounds, seed=args.seed, workers=args.workers)
    res = seesaw_maximize(terms, args.cls, cfg)
    out = Output(args, "seesaw")
    out.table(["objective", "class", "value", "restart", "rounds"],
              [[" + ".join(args.objective), args.cls, res.value, res.restart, len(res.trace) - 1]])
    out.write()
    if args.strategy_out:
        Path(args.strategy_out).write_text(res.strategy.export())
    return EXIT_OK


# ----------------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--level", help="relaxation level, e.g. 'AB' or '2 + AABSBS + AABLBL'")
    common.add_argument("--class", dest="cls", default="srq", choices=["q", "srq", "mqq", "mqc"])
    common.add_argument("--mode", default="bin", choices=["bin", "keep"])
    common.add_argument("--out", help="CSV output path (default: stdout)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--light", action="store_true", help="CI-scale levels and grids")
    common.add_argument("-v", "--verbose", action="store_true")

    angles = argparse.ArgumentParser(add_help=False)
    angles.add_argument("--theta", type=parse_angle, default=None)
    angles.add_argument("--theta-plus", type=parse_angle, default=None)
    angles.add_argument("--theta-minus", type=parse_angle, default=None)

    p = argparse.ArgumentParser(prog="routedbell", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bound", parents=[common, angles], help="upper bound on one expression")
    b.add_argument("--expr", required=True, help="chshS, chshL, jtheta, jpm or jtilde")
    b.add_argument("--constrain", action="append", default=[], help="e.g. CS=2.8284271")
    b.set_defaults(func=cmd_bound)

    t = sub.add_parser("tradeoff", parents=[common, angles], help="support function of two expressions")
    t.add_argument("--x", default="chshS")
    t.add_argument("--y", default="jtheta")
    t.add_argument("--grid", type=int, default=None)
    t.set_defaults(func=cmd_tradeoff)

    c = sub.add_parser("critical-eta", parents=[common, angles], help="critical long-path efficiency")
    c.add_argument("--family", default="chsh", choices=["chsh", "bb84", "jtheta", "anticommuting", "general"])
    c.add_argument("--eta-s", default="1.0", help="grid: a:b:n or comma list")
    c.add_argument("--nu", type=float, default=None, help="local visibility")
    c.add_argument("--standard", action="store_true", help="drop the short path")
    c.add_argument("--lower", action="store_true", help="add see-saw lower bounds")
    c.set_defaults(func=cmd_critical)

    f = sub.add_parser("fig", parents=[common, angles], help="reproduce a figure or table as CSV")
    f.add_argument("which", choices=["fig5", "fig6", "fig8", "fig9", "table1"])
    f.add_argument("--eta-s", default=None)
    f.add_argument("--grid", type=int, default=None)
    f.set_defaults(func=cmd_fig)

    v = sub.add_parser("verify", parents=[common], help="certificate checks")
    v.add_argument("what", choices=["sos", "table1", "bounds"])
    v.add_argument("--grid", type=int, default=50)
    v.add_argument("--sdp", action="store_true", help="also bound Table 1 entries by SDP")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("seesaw", parents=[common, angles], help="see-saw lower bound")
    s.add_argument("--objective", nargs="+", required=True, help="terms like 0.92*chshS 0.38*jtheta")
    s.add_argument("--dims", type=int, nargs=2, default=[2, 2])
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--max-rounds", type=int, default=500)
    s.add_argument("--strategy-out", default=None)
    s.set_defaults(func=cmd_seesaw)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports its own message
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except RoutedBellError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
