"""Batch command-line front end.

Subcommands: ``estimate`` (one dataset, JSON report plus optional weights
CSV), ``sweep-c`` (estimates and intervals across Lipschitz constants),
``simulate`` (Monte Carlo panels), ``modulus-curve`` (omega diagnostics).
Exit codes: 0 success, 2 input error, 3 solver error, 4 configuration error.
All outputs are deterministic given the input files, flags, and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .data import load_sample_csv
from .errors import (DataError, InvalidDelta, InvalidRule, InvalidVariance,
                     MinimaxLinError, SolverStalled)
from .estimator import build_problem, estimate
from .inference import preliminary_fit
from .modulus import omega_curve
from .simlab import run_monte_carlo
from .svg import line_plot
from .weights import DeltaRule

SCHEMA_VERSION = 1

_EXIT_INPUT = 2
_EXIT_SOLVER = 3
_EXIT_CONFIG = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(_EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _fmt(v: float) -> str:
    return f"{float(v):.12g}"


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _parse_grid(spec: str, log: bool = False) -> np.ndarray:
    try:
        lo, hi, steps = spec.split(":")
        lo, hi, steps = float(lo), float(hi), int(steps)
    except ValueError:
        raise InvalidRule(f"grid must be lo:hi:steps, got {spec!r}") from None
    if steps < 1 or hi < lo:
        raise InvalidRule(f"bad grid {spec!r}")
    if steps == 1:
        return np.array([lo])
    if log:
        if lo <= 0:
            raise InvalidRule("log grid needs lo > 0")
        return np.geomspace(lo, hi, steps)
    return np.linspace(lo, hi, steps)


def _parse_floats(spec: str) -> np.ndarray:
    return np.array([float(v) for v in spec.split(",")])


def _parse_ints(spec: str):
    return [int(v) for v in str(spec).split(",")]


def _delta_rule(args, sigma_bar=None) -> DeltaRule | None:
    mode = args.delta_rule
    if mode is None and args.delta is not None:
        mode = "fixed"
    if mode is None:
        return None
    if mode == "fixed":
        if args.delta is None:
            raise InvalidRule("--delta-rule fixed needs --delta")
        return DeltaRule.fixed(args.delta)
    if mode == "quantile":
        return DeltaRule.quantile(args.alpha, args.beta,
                                  args.sigma_bar if args.sigma_bar is not None else sigma_bar)
    if mode == "rmse":
        return DeltaRule.minimax_rmse(args.sigma_bar if args.sigma_bar is not None else sigma_bar)
    raise InvalidRule(f"unknown delta rule {mode!r}")


def _report_dict(report) -> dict:
    notes = dict(report.method_notes)
    return {
        "schema_version": SCHEMA_VERSION,
        "psi_hat": report.psi_hat,
        "se": report.se,
        "maxbias": report.maxbias,
        "delta": report.delta,
        "C": notes.get("lipschitz_c"),
        "alpha": report.alpha,
        "ci_naive": list(report.ci_naive),
        "ci_biasaware": list(report.ci_biasaware),
        "ci_onesided_lower": report.ci_onesided_lower,
        "ci_style": report.ci_style,
        "flags": list(report.flags),
        "method": notes,
    }


def _load_sample(path):
    if not os.path.exists(path):
        raise DataError(f"input file not found: {path}")
    return load_sample_csv(path)


# -- subcommands -----------------------------------------------------------------


def _cmd_estimate(args) -> int:
    sample = _load_sample(args.data)
    rule = _delta_rule(args)
    report = estimate(sample, target=args.target, lipschitz_c=args.lipschitz_c,
                      a_diag=None if args.a_diag is None else _parse_floats(args.a_diag),
                      delta_rule=rule, alpha=args.alpha, sigma_bar=args.sigma_bar,
                      fit_method=args.fit_method, ci_style=args.ci_style)
    payload = _json_dumps(_report_dict(report))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "report.json"), payload)
        if args.weights_csv:
            arm = sample.arm()
            lines = ["unit,d,k"]
            lines += [f"{i},{int(arm[i])},{_fmt(report.weights.k[i])}"
                      for i in range(sample.n)]
            _write(os.path.join(args.out, "weights.csv"), "\n".join(lines) + "\n")
        sys.stdout.write(payload)
    else:
        sys.stdout.write(payload)
    return 0


def _cmd_sweep_c(args) -> int:
    sample = _load_sample(args.data)
    cgrid = _parse_grid(args.c_grid)
    a_diag = None if args.a_diag is None else _parse_floats(args.a_diag)
    rows = []
    for c in cgrid:
        try:
            rule = _delta_rule(args)
            report = estimate(sample, target=args.target, lipschitz_c=float(c),
                              a_diag=a_diag, delta_rule=rule, alpha=args.alpha,
                              sigma_bar=args.sigma_bar, fit_method=args.fit_method,
                              ci_style=args.ci_style)
            rows.append((float(c), report, ""))
        except MinimaxLinError as exc:
            rows.append((float(c), None, type(exc).__name__))
    header = ("C,psi_hat,naive_lo,naive_hi,biasaware_lo,biasaware_hi,maxbias,flag")
    lines = [header]
    for c, rep, flag in rows:
        if rep is None:
            lines.append(f"{_fmt(c)},,,,,,,{flag}")
        else:
            lines.append(",".join([
                _fmt(c), _fmt(rep.psi_hat), _fmt(rep.ci_naive[0]),
                _fmt(rep.ci_naive[1]), _fmt(rep.ci_biasaware[0]),
                _fmt(rep.ci_biasaware[1]), _fmt(rep.maxbias), flag]))
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "sweep_c.csv"), csv_text)
        if args.svg:
            good = [(c, r) for c, r, f in rows if r is not None]
            xs = [c for c, _ in good]
            svg = line_plot(
                xs,
                [
                    {"y": [r.ci_biasaware[0] for _, r in good],
                     "y2": [r.ci_biasaware[1] for _, r in good],
                     "label": "bias-aware CI", "color": "#888888"},
                    {"y": [r.ci_naive[0] for _, r in good],
                     "y2": [r.ci_naive[1] for _, r in good],
                     "label": "naive CI", "color": "#d62728"},
                    {"y": [r.psi_hat for _, r in good],
                     "label": "estimate", "color": "#1f77b4"},
                ],
                title="Estimate and intervals vs Lipschitz constant",
                xlabel="C", ylabel="estimate")
            _write(os.path.join(args.out, "sweep_c.svg"), svg)
        sys.stdout.write(os.path.join(args.out, "sweep_c.csv") + "\n")
    else:
        sys.stdout.write(csv_text)
    return 0


def _cmd_simulate(args) -> int:
    t0 = time.time()
    ns = _parse_ints(args.n)
    cases = _parse_ints(args.case)
    cgrid = ([float(v) for v in str(args.lipschitz_c).split(",")]
             if args.lipschitz_c is not None else [2.0])
    threads = args.threads or (os.cpu_count() or 1)
    results = run_monte_carlo(cases=cases, n_grid=ns, c_grid=cgrid,
                              reps=args.reps, base_seed=args.seed,
                              threads=threads, noise_sd=args.noise_sd,
                              fixed_delta=args.fixed_delta,
                              fit_method=args.fit_method, alpha=args.alpha,
                              sigma_bar=args.sigma_bar)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    written = []
    for case in cases:
        for c in cgrid:
            cell = [r for r in results if r.case_id == case and r.lipschitz_c == c]
            cell.sort(key=lambda r: r.n)
            main_lines = ["n,Dis_dn,Dis_dstar,bias_dn,maxbias_dn,rmse_dn,"
                          "bias_dstar,maxbias_dstar,rmse_dstar,mse_dn,mse_dstar"]
            aug_lines = ["n,bias_aug_dn,rmse_aug_dn,bias_aug_dstar,"
                         "rmse_aug_dstar,mse_aug_dn,mse_aug_dstar"]
            for r in cell:
                m = r.metrics
                main_lines.append(",".join([
                    str(r.n), _fmt(m["dis_dn"]), _fmt(m["dis_dstar"]),
                    _fmt(m["bias_dn"]), _fmt(m["maxbias_dn"]), _fmt(m["rmse_dn"]),
                    _fmt(m["bias_dstar"]), _fmt(m["maxbias_dstar"]),
                    _fmt(m["rmse_dstar"]), _fmt(m["mse_dn"]), _fmt(m["mse_dstar"])]))
                aug_lines.append(",".join([
                    str(r.n), _fmt(m["bias_aug_dn"]), _fmt(m["rmse_aug_dn"]),
                    _fmt(m["bias_aug_dstar"]), _fmt(m["rmse_aug_dstar"]),
                    _fmt(m["mse_aug_dn"]), _fmt(m["mse_aug_dstar"])]))
            ctag = _fmt(c).replace(".", "p")
            main_path = os.path.join(outdir, f"panel_case{case}_C{ctag}.csv")
            aug_path = os.path.join(outdir, f"augmented_case{case}_C{ctag}.csv")
            _write(main_path, "\n".join(main_lines) + "\n")
            _write(aug_path, "\n".join(aug_lines) + "\n")
            written += [main_path, aug_path]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "cases": cases, "n_grid": ns, "c_grid": cgrid,
        "reps": args.reps, "seed": args.seed,
        "redraws": {f"case{r.case_id}_n{r.n}_C{_fmt(r.lipschitz_c)}": r.redraws
                    for r in results},
        "files": [os.path.basename(p) for p in written],
    }
    _write(os.path.join(outdir, "summary.json"), _json_dumps(summary))
    sys.stdout.write("\n".join(written + [os.path.join(outdir, "summary.json")]) + "\n")
    sys.stderr.write(f"simulate: wall clock {time.time() - t0:.1f}s "
                     f"({threads} workers)\n")
    return 0


def _cmd_modulus_curve(args) -> int:
    sample = _load_sample(args.data)
    a_diag = None if args.a_diag is None else _parse_floats(args.a_diag)
    cls, tgt, nodes, graph, engine = build_problem(
        sample, args.target, args.lipschitz_c, a_diag)
    deltas = _parse_grid(args.delta_grid, log=True)
    points = omega_curve(engine, deltas)
    lines = ["delta,omega,omega_prime,mu,kkt_primal,kkt_stationarity"]
    for pt in points:
        lines.append(",".join([_fmt(pt.delta), _fmt(pt.omega),
                               _fmt(pt.omega_prime), _fmt(pt.mu),
                               _fmt(pt.kkt_primal), _fmt(pt.kkt_stationarity)]))
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "modulus_curve.csv")
        _write(path, csv_text)
        sys.stdout.write(path + "\n")
    else:
        sys.stdout.write(csv_text)
    return 0


# -- argument plumbing ----------------------------------------------------------


def _add_common_estimation(p):
    p.add_argument("--data", required=True, help="input CSV (y[,d],x1..xp)")
    p.add_argument("--target", choices=("ate", "att"), default="att")
    p.add_argument("--lipschitz-c", type=float, default=1.0)
    p.add_argument("--a-diag", default=None,
                   help="comma-separated diagonal norm weights")
    p.add_argument("--delta-rule", choices=("fixed", "quantile", "rmse"),
                   default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.99)
    p.add_argument("--sigma-bar", type=float, default=None)
    p.add_argument("--fit-method", choices=("local-constant", "nn"),
                   default="local-constant")
    p.add_argument("--ci-style", choices=("folded-normal", "additive"),
                   default="folded-normal")


def build_parser() -> _Parser:
    parser = _Parser(prog="minimaxlin",
                     description="Minimax linear balancing-weight estimation")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", default=None,
                        help="JSON file of defaults (flags take precedence)")
    sub = parser.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("estimate", help="estimate one functional from a CSV")
    _add_common_estimation(pe)
    pe.add_argument("--out", default=None, help="output directory")
    pe.add_argument("--weights-csv", action="store_true",
                    help="also write per-unit weights")

    ps = sub.add_parser("sweep-c", help="sweep the Lipschitz constant")
    _add_common_estimation(ps)
    ps.add_argument("--c-grid", required=True, help="lo:hi:steps")
    ps.add_argument("--out", default=None)
    ps.add_argument("--svg", action="store_true")

    pm = sub.add_parser("simulate", help="Monte Carlo table panels")
    pm.add_argument("--case", required=True, help="case id(s), e.g. 1 or 1,2")
    pm.add_argument("--n", required=True, help="sample size(s), e.g. 100,250")
    pm.add_argument("--lipschitz-c", default="2.0",
                    help="Lipschitz constant(s), comma-separated")
    pm.add_argument("--reps", type=int, default=500)
    pm.add_argument("--seed", type=int, default=0)
    pm.add_argument("--threads", type=int, default=None)
    pm.add_argument("--noise-sd", type=float, default=0.5)
    pm.add_argument("--fixed-delta", type=float, default=2.0)
    pm.add_argument("--sigma-bar", type=float, default=1.0,
                    help="noise bound for the delta rules (default 1.0)")
    pm.add_argument("--fit-method", choices=("local-constant", "nn"),
                    default="local-constant")
    pm.add_argument("--alpha", type=float, default=0.05)
    pm.add_argument("--out", default=None)

    pc = sub.add_parser("modulus-curve", help="omega(delta) diagnostics")
    pc.add_argument("--data", required=True)
    pc.add_argument("--target", choices=("ate", "att"), default="att")
    pc.add_argument("--lipschitz-c", type=float, default=1.0)
    pc.add_argument("--a-diag", default=None)
    pc.add_argument("--delta-grid", default="0.05:20:25", help="lo:hi:steps (log)")
    pc.add_argument("--out", default=None)
    return parser


def _apply_config(parser, argv):
    """Config-file values sit between parser defaults and explicit flags."""
    if "--config" not in argv:
        return argv
    pos = argv.index("--config")
    path = argv[pos + 1]
    if not os.path.exists(path):
        raise InvalidRule(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidRule(f"config file is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise InvalidRule("config file must hold a JSON object")
    extra = []
    for key, val in sorted(cfg.items()):
        flag = "--" + key.replace("_", "-")
        if flag in argv:
            continue
        if isinstance(val, bool):
            if val:
                extra.append(flag)
        else:
            extra.extend([flag, str(val)])
    # insert config-derived flags right after the subcommand token
    for i, tok in enumerate(argv):
        if tok in ("estimate", "sweep-c", "simulate", "modulus-curve"):
            return argv[: i + 1] + extra + argv[i + 1:]
    return argv + extra


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        args = parser.parse_args(argv)
        handler = {
            "estimate": _cmd_estimate,
            "sweep-c": _cmd_sweep_c,
            "simulate": _cmd_simulate,
            "modulus-curve": _cmd_modulus_curve,
        }[args.command]
        return handler(args)
    except (InvalidRule, InvalidDelta, InvalidVariance) as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return _EXIT_CONFIG
    except DataError as exc:
        sys.stderr.write(f"input error: {exc}\n")
        return _EXIT_INPUT
    except SolverStalled as exc:
        sys.stderr.write(f"solver error: {exc}\n")
        return _EXIT_SOLVER
    except MinimaxLinError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return _EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
