"""Minimax linear weights, worst-case bias, and delta selection.

A solved modulus instance converts into per-unit weights via
k_i = 2 omega'(delta) f*(Z_i) / delta, with worst-case conditional bias
(omega(delta) - delta omega'(delta)) / 2.  Delta can be fixed, set from
normal quantiles, or chosen to minimize the worst-case mean squared error
over a grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .data import LipschitzClass, NodeSet, Sample, FunctionalTarget, build_constraint_graph, build_nodes
from .errors import InvalidDelta, InvalidRule, InvalidVariance
from .modulus import ModulusEngine, ModulusSolution, ToleranceSpec

__all__ = [
    "WeightSet",
    "DeltaRule",
    "weights_from_modulus",
    "resolve_delta",
    "known_variance_transform",
    "HeteroskedasticProblem",
]

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Per-unit weights and their bias/variance bookkeeping."""

    k: np.ndarray
    delta: float
    maxbias: float
    var_proxy: float
    sigma_bar: float
    solution: ModulusSolution | None = None

    @property
    def sum_sq(self) -> float:
        return float(self.k @ self.k)


def weights_from_modulus(sol: ModulusSolution, nodes: NodeSet, delta: float,
                         sigma_bar: float, unit_scale: np.ndarray | None = None) -> WeightSet:
    """Convert a modulus solution into unit weights.

    ``unit_scale`` carries the known noise-scale per unit for the
    heteroskedastic transform; weights then apply to the untransformed
    outcomes and the variance proxy uses the per-unit scales.
    """
    f_obs = sol.f_star[nodes.obs_node_of_unit]
    base = 2.0 * sol.omega_prime * f_obs / delta
    if unit_scale is None:
        k = base
        var_proxy = sigma_bar ** 2 * float(k @ k)
    else:
        s = np.asarray(unit_scale, dtype=float)
        k = base / (s * s)
        var_proxy = sigma_bar ** 2 * float((k * s) @ (k * s))
    maxbias = (sol.omega - delta * sol.omega_prime) / 2.0
    return WeightSet(k=k, delta=delta, maxbias=maxbias, var_proxy=var_proxy,
                     sigma_bar=sigma_bar, solution=sol)


@dataclass(frozen=True)
class DeltaRule:
    """How to pick the ball parameter delta.

    mode "fixed":    use ``delta`` as given.
    mode "quantile": delta = sigma_bar * (z_{1-alpha} + z_beta) / 2.
    mode "rmse":     grid search for the delta minimizing
                     maxbias(delta)^2 + sigma_bar^2 * sum k(delta)^2,
                     ties to the smallest delta, then golden-section
                     refinement between the best grid neighbors.
    """

    mode: str
    delta: float | None = None
    alpha: float = 0.05
    beta: float = 0.99
    sigma_bar: float | None = None
    grid: np.ndarray | None = None
    grid_size: int = 30
    grid_span: tuple = (0.05, 50.0)
    refine_rel: float = 1e-3

    @classmethod
    def fixed(cls, delta: float) -> "DeltaRule":
        return cls(mode="fixed", delta=delta)

    @classmethod
    def quantile(cls, alpha: float, beta: float, sigma_bar: float) -> "DeltaRule":
        return cls(mode="quantile", alpha=alpha, beta=beta, sigma_bar=sigma_bar)

    @classmethod
    def minimax_rmse(cls, sigma_bar: float, grid=None, **kw) -> "DeltaRule":
        grid = None if grid is None else np.asarray(grid, dtype=float)
        return cls(mode="rmse", sigma_bar=sigma_bar, grid=grid, **kw)

    def resolved_grid(self) -> np.ndarray:
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=float)
        else:
            lo, hi = self.grid_span
            g = self.sigma_bar * np.geomspace(lo, hi, self.grid_size)
        if g.size == 0:
            raise InvalidRule("empty delta grid")
        if np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise InvalidRule("delta grid must be positive and strictly increasing")
        return g


def _rmse_objective(engine, nodes, sigma_bar, unit_scale, tol):
    def objective(delta):
        sol = engine.solve(delta, tol)
        ws = weights_from_modulus(sol, nodes, delta, sigma_bar, unit_scale)
        return ws.maxbias ** 2 + ws.var_proxy

    return objective


def resolve_delta(rule: DeltaRule, engine: ModulusEngine | None = None,
                  nodes: NodeSet | None = None,
                  unit_scale: np.ndarray | None = None,
                  tol: ToleranceSpec | None = None) -> float:
    """Resolve a DeltaRule to a concrete delta > 0."""
    if rule.mode == "fixed":
        if rule.delta is None or rule.delta <= 0:
            raise InvalidDelta("fixed rule needs delta > 0")
        return float(rule.delta)
    if rule.mode == "quantile":
        if rule.sigma_bar is None or rule.sigma_bar <= 0:
            raise InvalidRule("quantile rule needs sigma_bar > 0")
        if not (0 < rule.alpha < 1 and 0 < rule.beta < 1):
            raise InvalidRule("quantile rule needs alpha, beta in (0,1)")
        z1 = stats.norm.ppf(1 - rule.alpha)
        z2 = stats.norm.ppf(rule.beta)
        return float(rule.sigma_bar * (z1 + z2) / 2.0)
    if rule.mode != "rmse":
        raise InvalidRule(f"unknown delta rule mode {rule.mode!r}")
    if rule.sigma_bar is None or rule.sigma_bar <= 0:
        raise InvalidRule("rmse rule needs sigma_bar > 0")
    if engine is None or nodes is None:
        raise InvalidRule("rmse rule needs a modulus engine and node set")
    grid = rule.resolved_grid()
    objective = _rmse_objective(engine, nodes, rule.sigma_bar, unit_scale, tol)
    vals = np.array([objective(d) for d in grid])
    best = int(np.argmin(vals))  # first minimum: ties resolve to smallest delta
    best_delta, best_val = float(grid[best]), float(vals[best])
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid.size - 1)]
    if hi <= lo * (1 + rule.refine_rel):
        return best_delta
    # golden section on the log axis between the best grid neighbors
    la, lb = math.log(lo), math.log(hi)
    x1 = lb - _INVPHI * (lb - la)
    x2 = la + _INVPHI * (lb - la)
    f1 = objective(math.exp(x1))
    f2 = objective(math.exp(x2))
    cand = [(f1, math.exp(x1)), (f2, math.exp(x2))]
    while (lb - la) > math.log1p(rule.refine_rel):
        if f1 <= f2:
            lb, x2, f2 = x2, x1, f1
            x1 = lb - _INVPHI * (lb - la)
            f1 = objective(math.exp(x1))
            cand.append((f1, math.exp(x1)))
        else:
            la, x1, f1 = x1, x2, f2
            x2 = la + _INVPHI * (lb - la)
            f2 = objective(math.exp(x2))
            cand.append((f2, math.exp(x2)))
    cbest = min(cand, key=lambda t: (t[0], t[1]))
    if cbest[0] < best_val - 1e-12 * max(1.0, abs(best_val)):
        return float(cbest[1])
    return best_delta


@dataclass(frozen=True, eq=False)
class HeteroskedasticProblem:
    """Modulus problem rescaled by a known per-unit noise scale.

    The regression equation is divided by sigma(Z_i): transformed outcomes are
    y/sigma, the ball applies to f/sigma at observed nodes, and the Lipschitz
    constraints stay expressed on f itself.  Weights returned by
    ``weights_at`` apply to the original outcomes.
    """

    sample: Sample
    nodes: NodeSet
    target: FunctionalTarget
    sigma: np.ndarray
    ball_weight: np.ndarray
    engine: ModulusEngine
    y_transformed: np.ndarray

    def weights_at(self, delta: float, sigma_bar: float = 1.0,
                   tol: ToleranceSpec | None = None) -> WeightSet:
        sol = self.engine.solve(delta, tol)
        return weights_from_modulus(sol, self.nodes, delta, sigma_bar,
                                    unit_scale=self.sigma)


def known_variance_transform(sample: Sample, sigma: np.ndarray,
                             cls: LipschitzClass, target: FunctionalTarget,
                             prune_1d: bool | None = None) -> HeteroskedasticProblem:
    """Build the known-variance (heteroskedastic) modulus problem."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (sample.n,) or np.any(~np.isfinite(sigma)) or np.any(sigma <= 0):
        raise InvalidVariance("sigma must be positive and finite, one per unit")
    nodes = build_nodes(sample, target)
    if prune_1d is None:
        prune_1d = sample.p == 1
    graph = build_constraint_graph(nodes, cls, sample, prune_1d=prune_1d)
    w = np.zeros(nodes.k)
    w[nodes.obs_node_of_unit] = 1.0 / (sigma * sigma)
    engine = ModulusEngine(nodes, graph, target.h, sample.n, ball_weight=w)
    return HeteroskedasticProblem(sample=sample, nodes=nodes, target=target,
                                  sigma=sigma, ball_weight=w, engine=engine,
                                  y_transformed=sample.y / sigma)
