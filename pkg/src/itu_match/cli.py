"""Command-line interface: ``itu-match <command> [flags]``.

Exit status is 0 on success, 1 on usage or input errors and 2 when a
numerical routine fails. Logs go to standard error; data go to standard
output or to files under ``--out``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis, io
from .distance import SolverError, default_workers, distance
from .equilibrium import EquilibriumError, ipfp_solve, pair_problems, residuals
from .estimation import EstimationConfig, LikelihoodError, ModelFamily, estimate_mpec, estimate_nested
from .model import Preferences, validate_properness

log = logging.getLogger("itu_match")

COMMANDS = ("validate", "distance", "equilibrate", "estimate", "simulate", "counterfactual", "report")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="itu-match", description="Collective households in logit ITU matching markets.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--market", type=Path, help="market file (JSON)")
    p.add_argument("--data", type=Path, help="household dataset (CSV) for estimate")
    p.add_argument("--config", type=Path, help="estimation settings (JSON)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None, help="default: $ITU_MATCH_WORKERS or 1")
    p.add_argument("--method", choices=("mpec", "nested"), default=None)
    p.add_argument("--scenario", type=Path, help="counterfactual scenario (JSON)")
    p.add_argument("--sharing", choices=analysis.VARIANTS, default="corrected")
    p.add_argument("--weighting", choices=("mass", "pairs"), default="mass")
    p.add_argument("--households", type=int, default=1000, help="sample size for simulate")
    p.add_argument("--u", default="0", help="comma-separated u values for distance")
    p.add_argument("--v", default="0", help="comma-separated v values for distance")
    p.add_argument("--pair", default=None, help="x,y index of the pair for distance (default: all)")
    p.add_argument("--no-timestamp", action="store_true", help="omit the generation time from JSON outputs")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _need(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} needs {', '.join(missing)}")


def _floats(text, flag):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def _write_json(path: Path, doc: dict, args):
    if not args.no_timestamp:
        doc = {"generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"), **doc}
    path.write_text(json.dumps(doc, indent=2, default=io._json_default) + "\n")


def _outdir(args) -> Path:
    _need(args, "out")
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _fmt(x) -> str:
    return f"{x:.12g}"


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args, market):
    prefs = market.prefs
    if not isinstance(prefs, Preferences):
        print(f"market file valid ({market.family}, {len(market.men)}x{len(market.women)})")
        return 0
    failed = 0
    for x in range(len(market.men)):
        for y in range(len(market.women)):
            rep = validate_properness(prefs, market.pair(prefs, x, y), seed=args.seed)
            bad = [c.name for c in rep.checks if not c.passed]
            if bad:
                failed += 1
                print(f"pair ({market.men[x].id}, {market.women[y].id}): failed {', '.join(bad)}")
    print(f"{len(market.men) * len(market.women) - failed} of {len(market.men) * len(market.women)} pairs proper")
    if failed:
        raise NumericalFailure(f"{failed} pairs failed the properness checks")
    return 0


def cmd_distance(args, market):
    us, vs = _floats(args.u, "--u"), _floats(args.v, "--v")
    prefs = market.prefs
    problems = pair_problems(prefs, market)
    if args.pair is not None:
        try:
            x, y = (int(t) for t in args.pair.split(","))
            problems[x][y]
        except (ValueError, IndexError):
            raise UsageError(f"--pair: no pair {args.pair!r} in a {len(market.men)}x{len(market.women)} market")
        cells = [(x, y)]
    else:
        cells = [(x, y) for x in range(len(market.men)) for y in range(len(market.women))]
    print("man,woman,u,v,D,lambda1,lambda2,status,corner")
    bad = 0
    for x, y in cells:
        for u in us:
            for v in vs:
                r = distance(problems[x][y], None, u, v, tol=min(args.tol, 1e-9))
                bad += not r.converged
                print(",".join([market.men[x].id, market.women[y].id, _fmt(u), _fmt(v), _fmt(r.z_star),
                                _fmt(r.lambda1), _fmt(r.lambda2), r.status, str(r.corner).lower()]))
    if bad:
        raise NumericalFailure(f"{bad} distance solves did not converge")
    return 0


def _equilibrium(args, prefs, market):
    eq = ipfp_solve(prefs, market, tol=args.tol, workers=args.workers)
    if not eq.converged:
        raise NumericalFailure(f"equilibrium {eq.status} after {eq.iterations} sweeps "
                               f"(residual {eq.residual:.2e}, update {eq.update:.2e})")
    return eq


def cmd_equilibrate(args, market):
    eq = _equilibrium(args, market.prefs, market)
    print(f"status {eq.status}, {eq.iterations} sweeps, residual {eq.residual:.2e}")
    if eq.mu.shape == (1, 1):
        print(f"mu = ({_fmt(eq.mu[0, 0])}, {_fmt(eq.mu_x0[0])}, {_fmt(eq.mu_0y[0])})")
    else:
        for x, t in enumerate(market.men):
            print(f"mu[{t.id}] = " + " ".join(_fmt(m) for m in eq.mu[x]))
        print("mu_x0 = " + " ".join(_fmt(m) for m in eq.mu_x0))
        print("mu_0y = " + " ".join(_fmt(m) for m in eq.mu_0y))
    if args.out is not None:
        out = _outdir(args)
        rep = residuals(market.prefs, market, eq)
        doc = {**eq.summary(), "men": [t.id for t in market.men], "women": [t.id for t in market.women],
               "residuals": rep.to_dict()}
        _write_json(out / "equilibrium.json", doc, args)
    return 0


def cmd_estimate(args, market):
    _need(args, "data")
    config = EstimationConfig.load(args.config) if args.config else EstimationConfig()
    method = args.method or config.method
    data = io.load_dataset(args.data)
    family = ModelFamily(market.prefs, config.free)
    fn = estimate_mpec if method == "mpec" else estimate_nested
    res = fn(family, data, market=market, tol=config.tol, max_iter=config.max_iter)
    for name, t, s in zip(res.names, res.theta, res.std_errors):
        print(f"{name:>16s} {_fmt(t):>20s}  ({_fmt(s)})")
    print(f"log-likelihood {_fmt(res.log_likelihood)}, status {res.status}, "
          f"clearing residual {res.equilibrium_residual:.2e}")
    if args.out is not None:
        _write_json(_outdir(args) / f"estimate_{method}.json", res.as_dict(), args)
    if not res.converged:
        raise NumericalFailure(f"estimation ended with status {res.status}")
    return 0


def cmd_simulate(args, market):
    out = _outdir(args)
    opts = io.SyntheticOptions(n_households=args.households)
    mk, data = io.generate_synthetic(market.prefs, market.shape, seed=args.seed, options=opts, T=market.T)
    io.save_market(mk, out / "market.json")
    io.save_dataset(data, out / "households.csv")
    print(f"{data.n_households} households ({data.n_couples} couples) written to {out}")
    return 0


def cmd_counterfactual(args, market):
    _need(args, "scenario")
    out = _outdir(args)
    scen = analysis.CounterfactualScenario.load(args.scenario)
    base = _equilibrium(args, market.prefs, market)
    res = analysis.counterfactual(market.prefs, market, scen, baseline=base, variant=args.sharing,
                                  weighting=args.weighting, tol=args.tol)
    if res.status != "converged":
        raise NumericalFailure(f"counterfactual equilibrium {res.status}: {res.comparison}")
    io.save_report(res, out / "counterfactual")
    dec = analysis.bargaining_decomposition(market.prefs, market, base, res.equilibrium, res.prefs, res.market)
    io.save_report(dec, out / "decomposition")
    c = res.comparison
    print(f"mean S {_fmt(c['mean_S']['base'])} -> {_fmt(c['mean_S']['cf'])}; "
          f"housework share {_fmt(c['mean_housework_share']['base'])} -> {_fmt(c['mean_housework_share']['cf'])}")
    return 0


def cmd_report(args, market):
    out = _outdir(args)
    eq = _equilibrium(args, market.prefs, market)
    rep = analysis.sharing_report(market.prefs, market, eq, args.sharing, args.weighting)
    io.save_report(rep, out / "sharing")
    s = rep.summary()
    print(f"mean unconditional sharing rule {_fmt(s['unconditional']['mean'])}, "
          f"conditional {_fmt(s['conditional']['mean'])}, "
          f"woman's housework share {_fmt(s['housework_share']['mean'])}")
    return 0


HANDLERS = {
    "validate": cmd_validate, "distance": cmd_distance, "equilibrate": cmd_equilibrate,
    "estimate": cmd_estimate, "simulate": cmd_simulate, "counterfactual": cmd_counterfactual,
    "report": cmd_report,
}
NEEDS_HOURS = ("simulate", "counterfactual", "report", "estimate")


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(stream=sys.stderr, level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.workers is None:
            args.workers = default_workers()
        if args.workers < 1 or not (args.tol > 0 and math.isfinite(args.tol)):
            raise UsageError("--workers must be >= 1 and --tol positive")
        _need(args, "market")
        try:
            market = io.load_market(args.market)
        except (OSError, io.MarketFileError) as exc:
            raise UsageError(str(exc)) from None
        if args.command in NEEDS_HOURS and args.command != "estimate" and not isinstance(market.prefs, Preferences):
            raise UsageError(f"{args.command} needs a home-production market")
        return HANDLERS[args.command](args, market)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (io.DatasetFileError, OSError, ValueError) as exc:
        if isinstance(exc, LikelihoodError):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return 2
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalFailure, EquilibriumError, SolverError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
