"""End-to-end estimation pipelines built from the lower-level pieces.

``estimate`` runs the full chain for a single linear functional: node/edge
construction, preliminary fit, delta selection, modulus solve, weights, point
estimate, standard error, and intervals.  ``estimate_att_ratio`` and
``estimate_late`` compose several solved problems through the delta method.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .data import (LipschitzClass, Sample, FunctionalTarget, ate_target, att_target,
                   build_constraint_graph, build_nodes, custom_target)
from .errors import DataError, InvalidRule
from .inference import (CompositeSpec, EstimateReport, confidence_intervals,
                        influence_component, point_estimate, preliminary_fit,
                        ratio_spec, share_component, delta_method,
                        variance_estimate)
from .modulus import ModulusEngine, ToleranceSpec
from .weights import DeltaRule, resolve_delta, weights_from_modulus

__all__ = ["estimate", "estimate_att_ratio", "estimate_late", "build_problem"]


def _make_target(sample: Sample, target) -> FunctionalTarget:
    if isinstance(target, FunctionalTarget):
        return target
    if target == "att":
        return att_target(sample)
    if target == "ate":
        return ate_target(sample)
    raise DataError(f"unknown target {target!r}")


def build_problem(sample: Sample, target="att", lipschitz_c: float = 1.0,
                  a_diag=None, prune_1d: bool | None = None):
    """Assemble (target, nodes, graph, engine) for a sample and class."""
    cls = LipschitzClass(lipschitz_c,
                         np.ones(sample.p) if a_diag is None else a_diag)
    tgt = _make_target(sample, target)
    nodes = build_nodes(sample, tgt)
    if prune_1d is None:
        prune_1d = sample.p == 1
    graph = build_constraint_graph(nodes, cls, sample, prune_1d=prune_1d)
    engine = ModulusEngine(nodes, graph, tgt.h, sample.n)
    return cls, tgt, nodes, graph, engine


def estimate(sample: Sample, target="att", lipschitz_c: float = 1.0,
             a_diag=None, delta_rule: DeltaRule | None = None,
             alpha: float = 0.05, sigma_bar: float | None = None,
             fit_method: str = "local-constant", ci_style: str = "folded-normal",
             prune_1d: bool | None = None, tol: ToleranceSpec | None = None) -> EstimateReport:
    """Minimax linear estimate of a linear functional with full diagnostics."""
    cls, tgt, nodes, graph, engine = build_problem(
        sample, target, lipschitz_c, a_diag, prune_1d)
    fit = preliminary_fit(sample, nodes, cls, method=fit_method)
    if sigma_bar is None:
        sigma_bar = fit.sigma_hat
        if sigma_bar <= 0:
            raise InvalidRule("residual noise scale is zero; pass sigma_bar explicitly")
    rule = delta_rule or DeltaRule.minimax_rmse(sigma_bar)
    if rule.mode in ("quantile", "rmse") and rule.sigma_bar is None:
        rule = replace(rule, sigma_bar=sigma_bar)
    delta = resolve_delta(rule, engine, nodes, tol=tol)
    sol = engine.solve(delta, tol)
    ws = weights_from_modulus(sol, nodes, delta, sigma_bar)
    psi = point_estimate(ws, sample.y)
    se, vflags = variance_estimate(ws, fit, tgt, psi, nodes)
    cis, cflags = confidence_intervals(psi, se, ws.maxbias, alpha, ci_style)
    flags = vflags + cflags
    if sol.ball_inactive:
        flags.append("ball_inactive")
    notes = {
        "target": tgt.kind,
        "lipschitz_c": float(lipschitz_c),
        "a_diag": [float(v) for v in cls.a_diag],
        "delta_rule": rule.mode,
        "sigma_bar": float(sigma_bar),
        "fit_method": fit.method,
        "n": sample.n,
        "n_treated": sample.n_treated,
        "n_control": sample.n_control,
        "p": sample.p,
        "kkt": {k: float(v) for k, v in sol.kkt.items()},
    }
    return EstimateReport(psi_hat=psi, se=se, maxbias=ws.maxbias, delta=delta,
                          alpha=alpha, ci_naive=cis["ci_naive"],
                          ci_biasaware=cis["ci_biasaware"],
                          ci_onesided_lower=cis["ci_onesided_lower"],
                          ci_style=ci_style, flags=flags, method_notes=notes,
                          weights=ws)


def estimate_att_ratio(sample: Sample, lipschitz_c: float = 1.0, a_diag=None,
                       delta_rule: DeltaRule | None = None, alpha: float = 0.05,
                       fit_method: str = "local-constant",
                       ci_style: str = "folded-normal") -> EstimateReport:
    """ATT as the ratio of the treated-contrast functional to the treated share.

    Numerically identical to the feasible direct estimator (the per-treated
    scale commutes with the modulus solve); the delta-method standard error
    accounts for the estimated share.
    """
    if sample.d is None:
        raise DataError("ATT ratio needs a treatment indicator")
    n, n1 = sample.n, sample.n_treated
    base = att_target(sample)           # rows carry n/n1
    unscaled = custom_target(sample, base.h * (n1 / n))
    cls, tgt, nodes, graph, engine = build_problem(
        sample, unscaled, lipschitz_c, a_diag)
    fit = preliminary_fit(sample, nodes, cls, method=fit_method)
    sigma_bar = fit.sigma_hat
    rule = delta_rule or DeltaRule.minimax_rmse(sigma_bar)
    if rule.mode in ("quantile", "rmse") and rule.sigma_bar is None:
        rule = replace(rule, sigma_bar=sigma_bar)
    delta = resolve_delta(rule, engine, nodes)
    sol = engine.solve(delta)
    ws = weights_from_modulus(sol, nodes, delta, sigma_bar)
    numerator = influence_component(ws, sample.y, fit, tgt, nodes)
    denominator = share_component(sample.d)
    spec = ratio_spec(numerator, denominator)
    report = delta_method(spec, alpha=alpha, style=ci_style)
    notes = dict(report.method_notes)
    notes.update({"target": "att-ratio", "delta": delta,
                  "lipschitz_c": float(lipschitz_c), "n": n, "n_treated": n1})
    return replace(report, method_notes=notes, delta=delta)


def estimate_late(y: np.ndarray, w: np.ndarray, d_taken: np.ndarray,
                  x: np.ndarray, lipschitz_c: float = 1.0, a_diag=None,
                  delta_rule: DeltaRule | None = None, alpha: float = 0.05,
                  fit_method: str = "local-constant",
                  ci_style: str = "folded-normal") -> EstimateReport:
    """Instrumented (Wald-style) effect: ratio of two instrument contrasts.

    Both contrasts share the function class and the instrument design, hence
    the same minimax weights; outcomes differ (y for the numerator, the
    treatment taken for the denominator).
    """
    sample_y = Sample(y=np.asarray(y, dtype=float), x=x, d=w)
    sample_d = Sample(y=np.asarray(d_taken, dtype=float), x=x, d=w)
    cls, tgt, nodes, graph, engine = build_problem(sample_y, "ate", lipschitz_c, a_diag)
    fit_y = preliminary_fit(sample_y, nodes, cls, method=fit_method)
    fit_d = preliminary_fit(sample_d, nodes, cls, method=fit_method)
    sigma_bar = fit_y.sigma_hat if fit_y.sigma_hat > 0 else 1.0
    rule = delta_rule or DeltaRule.minimax_rmse(sigma_bar)
    if rule.mode in ("quantile", "rmse") and rule.sigma_bar is None:
        rule = replace(rule, sigma_bar=sigma_bar)
    delta = resolve_delta(rule, engine, nodes)
    sol = engine.solve(delta)
    ws = weights_from_modulus(sol, nodes, delta, sigma_bar)
    numerator = influence_component(ws, sample_y.y, fit_y, tgt, nodes)
    denominator = influence_component(ws, sample_d.y, fit_d, tgt, nodes)
    spec = ratio_spec(numerator, denominator)
    report = delta_method(spec, alpha=alpha, style=ci_style)
    notes = dict(report.method_notes)
    notes.update({"target": "late", "delta": delta,
                  "lipschitz_c": float(lipschitz_c)})
    return replace(report, method_notes=notes, delta=delta)
