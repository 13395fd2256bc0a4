"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 solver non-convergence or
divergence (diagnostic files are still written), 3 I/O or parse errors.
All floating-point output keeps full round-trip precision.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import mv as mv_mod
from . import policy_sim, riccati
from .model import ClqError, load_problem, validate
from .solver import SolverConfig

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2
EXIT_IO = 3


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v)
                              for v in row) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)
        fh.write("\n")


def _load(path: str, loader):
    try:
        return loader(path)
    except FileNotFoundError:
        print(f"error: no such file: {path}", file=sys.stderr)
        sys.exit(EXIT_IO)
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        print(f"error: cannot parse {path}: {exc}", file=sys.stderr)
        sys.exit(EXIT_IO)


def _solver_config(args) -> SolverConfig:
    cfg = SolverConfig()
    if args.tol is not None:
        cfg = SolverConfig(tol=args.tol)
    return cfg


def _validate_or_exit(spec, strict: bool = True):
    report = validate(spec)
    if not report.passed:
        for v in report.violations:
            print(f"invalid: {v}", file=sys.stderr)
        if strict:
            sys.exit(EXIT_INVALID)
    return report


def cmd_validate(args) -> int:
    spec = _load(args.input, load_problem)
    report = validate(spec)
    for v in report.violations:
        print(f"invalid: {v}", file=sys.stderr)
    for note in report.notes:
        print(f"note: {note}")
    if report.passed:
        print("valid")
        return EXIT_OK
    return EXIT_INVALID


def cmd_solve_finite(args) -> int:
    spec = _load(args.input, load_problem)
    _validate_or_exit(spec)
    if spec.horizon is None:
        print("error: problem has an infinite horizon; use solve-infinite",
              file=sys.stderr)
        return EXIT_INVALID
    cfg = _solver_config(args)
    sol = riccati.solve_finite(spec, cfg, coupling=args.coupling)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "solution.json", {
        "kind": "finite",
        "horizon": sol.horizon,
        "coupling": sol.coupling,
        "ghat": sol.ghat,
        "gbar": sol.gbar,
        "khat": sol.khat,
        "kbar": sol.kbar,
        "value_at_x0": sol.value(spec.x0),
    })
    print(f"solved T={sol.horizon}; Ghat_0={sol.ghat[0].tolist()} "
          f"Gbar_0={sol.gbar[0].tolist()}")
    return EXIT_OK


def cmd_solve_infinite(args) -> int:
    spec = _load(args.input, load_problem)
    _validate_or_exit(spec)
    if spec.horizon is not None:
        print("error: problem has a finite horizon; use solve-finite", file=sys.stderr)
        return EXIT_INVALID
    cfg = _solver_config(args)
    fp = riccati.solve_infinite(spec, cfg, eps=args.eps, i_max=args.max_iter,
                                coupling=args.coupling)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "iterates.csv", ["iteration", "ghat", "gbar"],
               [(i, gh, gb) for i, (gh, gb) in enumerate(fp.iterates)])
    doc = {
        "kind": "infinite",
        "coupling": fp.coupling,
        "converged": fp.converged,
        "diverged": fp.diverged,
        "iterations": fp.iterations,
        "ghat_star": fp.ghat_star,
        "gbar_star": fp.gbar_star,
    }
    if fp.converged:
        doc["khat_star"] = fp.khat_star
        doc["kbar_star"] = fp.kbar_star
    _write_json(out / "solution.json", doc)
    if fp.converged:
        print(f"converged in {fp.iterations} iterations: "
              f"Ghat*={_fmt(fp.ghat_star)} Gbar*={_fmt(fp.gbar_star)}")
        return EXIT_OK
    print("diverged" if fp.diverged else "not converged within iteration budget",
          file=sys.stderr)
    return EXIT_NOT_CONVERGED


def cmd_check_threshold(args) -> int:
    spec = _load(args.input, load_problem)
    _validate_or_exit(spec)
    rep = riccati.check_threshold(spec, k_max=args.k_max)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "threshold.json", {
        "classical_threshold": rep.classical_threshold,
        "eta": rep.eta,
        "k_max": rep.k_max,
        "k_set_bounded": rep.k_set_bounded,
        "sufficient_lhs": rep.sufficient_lhs,
        "holds": rep.holds,
    })
    if rep.classical_threshold is not None:
        print(f"classical threshold: {rep.classical_threshold:.6g}")
    print(f"sufficient condition: E[A^2] + eta*K_max = {rep.sufficient_lhs:.6g} "
          f"{'< 1 (existence guaranteed)' if rep.holds else '>= 1 (inconclusive)'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _load(args.input, load_problem)
    _validate_or_exit(spec)
    cfg = _solver_config(args)
    if spec.horizon is None:
        fp = riccati.solve_infinite(spec, cfg, eps=args.eps, i_max=args.max_iter,
                                    coupling=args.coupling)
        if not fp.converged:
            print("cannot simulate: fixed point did not converge", file=sys.stderr)
            return EXIT_NOT_CONVERGED
        policy = policy_sim.Policy.from_fixed_point(fp)
        steps = args.steps or 30
    else:
        sol = riccati.solve_finite(spec, cfg, coupling=args.coupling)
        policy = policy_sim.Policy.from_riccati(sol)
        steps = args.steps or spec.horizon
    sim = policy_sim.simulate(spec, policy, n_paths=args.paths, steps=steps,
                              seed=args.seed, initial_state=args.initial_state)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = policy.n
    header = ["path", "t", "x"] + [f"u_{i+1}" for i in range(n)] + ["scenario"]

    def rows():
        for pth in range(sim.n_paths):
            for t in range(sim.steps):
                yield (pth, t, sim.xs[pth, t], *sim.us[pth, t], int(sim.scenarios[pth, t]))
            yield (pth, sim.steps, sim.xs[pth, sim.steps], *([float("nan")] * n), -1)

    _write_csv(out / "trajectories.csv", header, rows())
    mean_x2 = sim.mean_x2()
    se = sim.stderr_x2()
    _write_csv(out / "stats.csv", ["t", "mean_x2", "stderr"],
               [(t, mean_x2[t], se[t]) for t in range(sim.steps + 1)])
    print(f"simulated {sim.n_paths} paths x {sim.steps} steps; "
          f"final mean x^2 = {_fmt(mean_x2[-1])}")
    return EXIT_OK


def cmd_mv_calibrate(args) -> int:
    market = _load(args.input, mv_mod.load_market)
    if args.initial_state is not None:
        market = mv_mod.MarketSpec(
            riskfree=market.riskfree, returns=market.returns,
            penalties=market.penalties, x0=market.x0, xd=market.xd,
            initial_state=args.initial_state)
    cfg = _solver_config(args)
    try:
        cal = mv_mod.calibrate(market, cfg)
    except ClqError as exc:
        print(f"invalid market: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "solution.json", {
        "kind": "mv",
        "lambda_star": cal.lambda_star,
        "gamma": cal.gamma,
        "thresholds": cal.thresholds,
        "ghat_mv": cal.ghat_mv,
        "gbar_mv": cal.gbar_mv,
        "khat_mv": cal.khat_mv,
        "kbar_mv": cal.kbar_mv,
        "initial_state": cal.initial_state,
    })
    print(f"lambda* = {_fmt(cal.lambda_star)}; "
          f"stage-0 wealth threshold = {cal.thresholds[0]:.2f}")
    return EXIT_OK


def cmd_mv_frontier(args) -> int:
    market = _load(args.input, mv_mod.load_market)
    if args.initial_state is not None:
        market = mv_mod.MarketSpec(
            riskfree=market.riskfree, returns=market.returns,
            penalties=market.penalties, x0=market.x0, xd=market.xd,
            initial_state=args.initial_state)
    cfg = _solver_config(args)
    try:
        cal = mv_mod.calibrate(market, cfg)
        if args.targets:
            targets = [float(v) for v in args.targets.split(",")]
        else:
            base = cal.gamma[0] * market.x0
            span = market.xd - base
            targets = list(base + span * np.linspace(0.25, 2.0, 8))
        points = mv_mod.frontier(market, cal, targets, n_paths=args.paths,
                                 seed=args.seed)
    except ClqError as exc:
        print(f"invalid market: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "frontier.csv",
               ["x_d", "lambda_star", "mean_xT", "var_xT", "penalty", "stderr"],
               [(p.xd, p.lambda_star, p.mean_xT, p.var_xT, p.penalty, p.stderr)
                for p in points])
    print(f"frontier with {len(points)} points written to {out / 'frontier.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="clq",
        description="Constrained stochastic LQ control with multiplicative noise")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_eps=False):
        p.add_argument("input", help="problem or market file (JSON)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--tol", type=float, default=None,
                       help="per-stage solver tolerance")
        p.add_argument("--eps", type=float, default=1e-8,
                       help="fixed-point convergence threshold")
        p.add_argument("--max-iter", type=int, default=10000,
                       help="fixed-point iteration budget")
        p.add_argument("--paths", type=int, default=10000)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--initial-state", type=int, default=None)
        p.add_argument("--coupling", choices=["sign", "lower"], default=None,
                       help="continuation coupling override (default: problem file)")
        p.add_argument("--targets", default=None,
                       help="comma-separated target wealth grid (mv-frontier)")

    for name, fn in [("validate", cmd_validate),
                     ("solve-finite", cmd_solve_finite),
                     ("solve-infinite", cmd_solve_infinite),
                     ("check-threshold", cmd_check_threshold),
                     ("simulate", cmd_simulate),
                     ("mv-calibrate", cmd_mv_calibrate),
                     ("mv-frontier", cmd_mv_frontier)]:
        p = sub.add_parser(name)
        common(p)
        if name == "check-threshold":
            p.add_argument("--k-max", type=float, default=None,
                           help="user-supplied bound on the gain norm")
        p.set_defaults(func=fn)
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # simulate/initial-state default: first state
    if getattr(args, "initial_state", None) is None and args.command == "simulate":
        args.initial_state = 0
    try:
        return args.func(args)
    except ClqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
