"""Command-line entry point: ``robustse <command> [options]``.

Exit status is 0 on success, 1 on a usage error, and 2 when a computation
fails (parse error, invalid input, solver not converged). In the last case a
single line ``error: <code>: <detail>`` goes to standard error, with
``<code>`` one of ``parse_error``, ``validation_error``, ``rank_deficient``,
``not_converged`` or ``io_error``.

Numeric sweeps take ``a:b:step`` (inclusive of ``b`` within 1e-12), a
comma-separated list, or a single value. Case arguments are file paths, or
``bundled:NAME`` for a case shipped with the package.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from typing import Sequence

from . import bounds, decoder, experiments
from .cases import BUNDLED, bundled_text
from .errors import NotConvergedError, ParseError, RankDeficientError, RobustSEError, ValidationError
from .estimator import EstimatorConfig, estimate
from .powerflow import Measurement, evaluate_h, parse_case, read_state, read_vector, write_state

RANGE_TOL = 1e-12


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def parse_range(text: str) -> list[float]:
    """``a:b:step`` inclusive, ``v1,v2,...``, or a single value."""
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3:
                raise ValueError
            a, b, step = parts
            if not step > 0 or b < a:
                raise UsageError(f"range {text!r} needs step > 0 and a <= b")
            count = int(math.floor((b - a) / step + RANGE_TOL / step)) + 1
            out = [a + i * step for i in range(count)]
            # snap values within tolerance of the end point to it
            if abs(out[-1] - b) <= RANGE_TOL:
                out[-1] = b
            return [round(v, 12) for v in out]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"cannot read {text!r} as a number, list or a:b:step range") from None


def _range_arg(text):
    try:
        return parse_range(text)
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _load_case(spec: str):
    if spec.startswith("bundled:"):
        name = spec.split(":", 1)[1]
        if name not in BUNDLED:
            raise UsageError(f"no bundled case {name!r}; choose from {', '.join(BUNDLED)}")
        return parse_case(bundled_text(name))
    return parse_case(_read(spec))


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _describe(net, m: Measurement) -> str:
    ids = net.bus_ids
    if m.j is None:
        return f"{m.kind} {ids[m.i]}"
    return f"{m.kind} {ids[m.i]} {ids[m.j]}"


def parse_descriptor(net, text: str) -> Measurement:
    """``PI:2`` or ``PF:1-2`` with bus ids, to a 0-based measurement."""
    try:
        kind, buses = text.strip().split(":")
        kind = kind.upper()
        if kind in ("PI", "QI"):
            return Measurement(kind, net.index_of(int(buses)))
        a, b = buses.split("-")
        return Measurement(kind, net.index_of(int(a)), net.index_of(int(b)))
    except (ValueError, KeyError, ValidationError) as exc:
        raise UsageError(f"bad measurement descriptor {text!r} ({exc})") from None


# -- commands ---------------------------------------------------------------


def cmd_bounds(args):
    rep = bounds.bound_report(args.delta, args.rho)
    return _csv([rep.as_row()], bounds.BoundReport.FIELDS)


def cmd_alpha_curve(args):
    rows = []
    for d in args.deltas:
        rows.append((repr(d), repr(bounds.alpha_star(d))))
    return _csv(rows, ("delta", "alpha_star"))


def cmd_varpi_curve(args):
    rows = []
    for r in args.rhos:
        v = bounds.varpi(args.delta, r)
        rows.append((repr(args.delta), repr(r), repr(math.nan if v is None else v), "false" if v is None else "true"))
    return _csv(rows, ("delta", "rho", "varpi", "feasible"))


def cmd_decode(args):
    if args.epsilon is not None:
        mode, param = "constrained", args.epsilon
    else:
        mode, param = "lagrangian", args.lam
    problem = decoder.read_problem(_read(args.problem), mode=mode, param=param)
    sol = decoder.solve(problem, tol=args.tol, max_iter=args.max_iter)
    if not sol.converged:
        raise NotConvergedError(
            f"certificate {sol.certificate_gap:.3e} above tol {args.tol:.1e} after {sol.iterations} iterations"
        )
    return decoder.write_solution(sol)


def cmd_estimate(args):
    net, plan = _load_case(args.case)
    y = read_vector(_read(args.measurements))
    if y.size != len(plan):
        raise ValidationError(f"{y.size} measurements given, case plan has {len(plan)}")
    res = estimate(net, plan, y, EstimatorConfig(args.lam, max_outer_iter=args.max_outer))
    if not (res.converged and res.inner_converged):
        raise NotConvergedError(f"no convergence after {res.outer_iterations} outer iterations")
    return write_state(net, res.x_hat)


def cmd_powerflow_eval(args):
    net, plan = _load_case(args.case)
    x = read_state(net, _read(args.state))
    h = evaluate_h(net, plan, x)
    rows = [(n, _describe(net, m), repr(float(v))) for n, (m, v) in enumerate(zip(plan, h))]
    return _csv(rows, ("index", "measurement", "value"))


def _emit(result, args):
    if args.summary_out:
        with open(args.summary_out, "w", encoding="utf-8") as fh:
            fh.write(experiments.summary_csv(result.summary))
    if args.emit == "summary":
        return experiments.summary_csv(result.summary)
    return experiments.trials_csv(result.records)


def cmd_exp1(args):
    common = dict(n=args.n, m=args.m, runs=args.runs, workers=args.workers)
    if args.sweep == "lambda":
        cfg = experiments.Exp1Config(
            bad_count=args.bad_count,
            **({"sigmas": tuple(args.sigmas)} if args.sigmas else {}),
            **({"lambda_grid": tuple(args.lambdas)} if args.lambdas else {}),
            **common,
        )
        result = experiments.run_exp1_lambda_sweep(cfg, args.seed)
    else:
        over = dict(common)
        if args.sigmas:
            over["sigmas"] = tuple(args.sigmas)
        if args.rhos:
            over["rhos"] = tuple(args.rhos)
        if args.lambdas:
            over["lambda_grid"] = tuple(args.lambdas)
        if args.error_std is not None:
            over["error_std"] = args.error_std
        cfg = experiments.Exp1Config.rho_sweep(**over)
        result = experiments.run_exp1_rho_sweep(cfg, args.seed)
    return _emit(result, args)


def cmd_exp2(args):
    net, plan = _load_case(args.case)
    over = dict(runs=args.runs, workers=args.workers, max_outer_iter=args.max_outer)
    if args.sigmas:
        over["sigmas"] = tuple(args.sigmas)
    if args.lambdas:
        over["lambda_grid"] = tuple(args.lambdas)
    if args.rhos:
        std = 0.7 if args.error_std is None else args.error_std
        sig = tuple(args.sigmas) if args.sigmas else (0.05,)
        over["sigmas"] = sig[:1]
        cfg = experiments.Exp2Config(net, plan, bad_spec=experiments.RandomBadData(args.rhos[0], std), **over)
        result = experiments.run_exp2_rho_sweep(cfg, args.rhos, args.seed)
    else:
        if args.bad is None:
            bad = experiments.default_bad_data(net, plan)
        else:
            bad = tuple(parse_descriptor(net, t) for t in args.bad.split(",") if t.strip())
        try:
            cfg = experiments.Exp2Config(net, plan, bad_spec=experiments.FixedBadData(bad), **over)
        except KeyError as exc:
            raise UsageError(f"bad-data measurement not in the plan: {exc}") from None
        result = experiments.run_exp2(cfg, args.seed)
    return _emit(result, args)


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robustse", description="Robust state estimation: bounds, decoding, experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("bounds", help="recovery-bound report for one (delta, rho)")
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--rho", type=float, required=True)
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("alpha-curve", help="alpha*(delta) over a range of delta")
    s.add_argument("--deltas", type=_range_arg, required=True)
    s.set_defaults(func=cmd_alpha_curve)

    s = sub.add_parser("varpi-curve", help="error amplification over a range of rho")
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--rhos", type=_range_arg, required=True)
    s.set_defaults(func=cmd_varpi_curve)

    s = sub.add_parser("decode", help="solve a linear robust-decoding problem file")
    s.add_argument("--problem", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iter", type=int, default=100_000)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("estimate", help="nonlinear state estimate from a measurement vector")
    s.add_argument("--case", required=True)
    s.add_argument("--measurements", required=True)
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--max-outer", type=int, default=50)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("powerflow-eval", help="evaluate h(x) for a case and state")
    s.add_argument("--case", required=True)
    s.add_argument("--state", required=True)
    s.set_defaults(func=cmd_powerflow_eval)

    def exp_common(s):
        s.add_argument("--seed", type=int, required=True)
        s.add_argument("--runs", type=int, default=50)
        s.add_argument("--sigmas", type=_range_arg)
        s.add_argument("--rhos", type=_range_arg)
        s.add_argument("--lambdas", type=_range_arg)
        s.add_argument("--error-std", type=float)
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--emit", choices=("trials", "summary"), default="trials")
        s.add_argument("--summary-out", help="also write the summary CSV here")

    s = sub.add_parser("exp1", help="Gaussian-measurement experiment")
    exp_common(s)
    s.add_argument("--sweep", choices=("lambda", "rho"), default="lambda")
    s.add_argument("--n", type=int, default=150)
    s.add_argument("--m", type=int, default=60)
    s.add_argument("--bad-count", type=int, default=12)
    s.set_defaults(func=cmd_exp1)

    s = sub.add_parser("exp2", help="power-network experiment")
    exp_common(s)
    s.add_argument("--case", default="bundled:ring14")
    s.add_argument("--bad", help="sign-flipped measurements, e.g. PI:2,PI:3,QI:14 or PF:1-2")
    s.add_argument("--max-outer", type=int, default=30)
    s.set_defaults(func=cmd_exp2)
    return p


def _fail(code: str, detail: str) -> int:
    sys.stderr.write(f"error: {code}: {detail}\n")
    return 2


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        out = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"robustse: error: {exc}\n")
        return 1
    except ParseError as exc:
        return _fail("parse_error", str(exc))
    except RankDeficientError as exc:
        return _fail("rank_deficient", str(exc))
    except NotConvergedError as exc:
        return _fail("not_converged", str(exc))
    except (ValidationError, RobustSEError) as exc:
        return _fail("validation_error", str(exc))
    except ValueError as exc:
        return _fail("validation_error", str(exc))
    except OSError as exc:
        return _fail("io_error", f"{exc.filename}: {exc.strerror}")
    sys.stdout.write(out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
