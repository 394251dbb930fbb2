"""Solver for the modulus-of-continuity program.

The program maximizes the sample functional (2/n) * sum_i (H f)_i over node
vectors f subject to a quadratic ball on observed values,
sum_i w_i f_i^2 <= delta^2/4, and the Lipschitz difference polytope
|f_a - f_b| <= bound_ab.

Strategy: a working-set method on the difference constraints.  For a guessed
set of active edges (held at their bounds with known signs), nodes collapse
into rigid components; stationarity fixes each component's level as an
explicit function of the ball multiplier mu, and the ball equation then pins
mu in closed form.  The guess is repaired by adding violated edges and
dropping edges with negative multipliers until the KKT conditions hold.  A
projection-splitting (ADMM) pass is kept as a fallback to reseed the working
set when pivoting stalls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .data import ConstraintGraph, FunctionalTarget, NodeSet
from .errors import InvalidDelta, SolverStalled

__all__ = [
    "ToleranceSpec",
    "ModulusProblem",
    "ModulusSolution",
    "ModulusEngine",
    "solve_modulus",
    "omega_curve",
    "CurvePoint",
]

_ADD_CAP = 32       # violated edges activated per repair round (fast phase)
_SAFE_AFTER = 200   # switch to one-change-per-round pivoting after this many rounds


@dataclass(frozen=True)
class ToleranceSpec:
    """Solver tolerances; primal feasibility is relative to the bound scale."""

    primal: float = 1e-8
    stationarity: float = 1e-6
    comp_slack: float = 1e-6
    max_iter: int = 100_000    # fallback splitting iterations
    max_rounds: int = 600      # working-set repair rounds

    def __post_init__(self):
        if min(self.primal, self.stationarity, self.comp_slack) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True, eq=False)
class ModulusProblem:
    """One modulus instance: nodes, polytope, functional, ball radius delta."""

    nodes: NodeSet
    graph: ConstraintGraph
    h: sparse.csr_matrix
    delta: float
    n: int
    ball_weight: np.ndarray | None = None  # default: 1 on observed nodes, 0 elsewhere

    @classmethod
    def from_target(cls, nodes: NodeSet, graph: ConstraintGraph,
                    target: FunctionalTarget, delta: float,
                    ball_weight: np.ndarray | None = None) -> "ModulusProblem":
        return cls(nodes=nodes, graph=graph, h=target.h, delta=delta,
                   n=nodes.n, ball_weight=ball_weight)


@dataclass(frozen=True, eq=False)
class ModulusSolution:
    """Optimizer and diagnostics of one modulus solve."""

    delta: float
    f_star: np.ndarray
    omega: float
    omega_prime: float
    mu: float
    kkt: dict
    ball_inactive: bool = False
    edge_duals: np.ndarray | None = None
    fd_omega_prime: float | None = None


@dataclass(frozen=True)
class CurvePoint:
    delta: float
    omega: float
    omega_prime: float
    mu: float
    kkt_primal: float
    kkt_stationarity: float
    fd_omega_prime: float = float("nan")


class ModulusEngine:
    """Reusable solver state for one (nodes, graph, functional) triple.

    ``solve`` may be called repeatedly with different deltas; the working set
    is warm-started across calls, which makes delta grids cheap.  Instances
    are not thread-safe; use one engine per thread.
    """

    def __init__(self, nodes: NodeSet, graph: ConstraintGraph,
                 h: sparse.spmatrix, n: int,
                 ball_weight: np.ndarray | None = None):
        self.m = nodes.k
        colsums = np.asarray(sparse.csr_matrix(h).sum(axis=0)).ravel()
        self.c = (2.0 / n) * colsums[nodes.universe_cols()]
        if ball_weight is None:
            self.w = nodes.observed.astype(float)
        else:
            self.w = np.asarray(ball_weight, dtype=float)
            if self.w.shape != (self.m,) or np.any(self.w < 0):
                raise ValueError("ball_weight must be nonnegative, one per node")
        self.ea = graph.ea.astype(np.int64)
        self.eb = graph.eb.astype(np.int64)
        self.bnd = graph.bound.astype(float)
        self.arm = nodes.arm
        self.kind = graph.kind
        self.n_edges = self.ea.shape[0]
        self.cscale = max(1.0, float(np.max(np.abs(self.c))) if self.m else 1.0)
        self.bscale = max(1.0, float(np.max(self.bnd)) if self.n_edges else 1.0)
        # working set
        self.active = np.zeros(self.n_edges, dtype=bool)
        self.sign = np.zeros(self.n_edges, dtype=np.int8)
        self._fallbacks = 0

    @classmethod
    def from_problem(cls, problem: ModulusProblem) -> "ModulusEngine":
        return cls(problem.nodes, problem.graph, problem.h, problem.n,
                   problem.ball_weight)

    # -- component machinery ------------------------------------------------

    def _components(self):
        """BFS over active edges: component ids, offsets to the component root.

        Returns (comp, off, orders, parent_edge, ok) where orders is a list of
        BFS orders per component and parent_edge[j] is the tree edge that
        attached node j.  ok is False if a redundant active edge closes a
        cycle with an inconsistent offset.
        """
        m = self.m
        adj = [[] for _ in range(m)]
        act_idx = np.flatnonzero(self.active)
        for e in act_idx:
            a, b = self.ea[e], self.eb[e]
            shift = self.sign[e] * self.bnd[e]
            adj[a].append((b, e, -shift))   # off[b] = off[a] - shift
            adj[b].append((a, e, shift))
        comp = np.full(m, -1, dtype=np.int64)
        off = np.zeros(m)
        parent_edge = np.full(m, -1, dtype=np.int64)
        orders = []
        tol = 1e-9 * self.bscale
        ok = True
        cid = 0
        for start in range(m):
            if comp[start] >= 0:
                continue
            comp[start] = cid
            order = [start]
            head = 0
            while head < len(order):
                u = order[head]
                head += 1
                for (v, e, doff) in adj[u]:
                    if comp[v] < 0:
                        comp[v] = cid
                        off[v] = off[u] + doff
                        parent_edge[v] = e
                        order.append(v)
                    elif e != parent_edge[u] and e != parent_edge[v]:
                        if abs(off[u] + doff - off[v]) > tol:
                            ok = False
            orders.append(order)
            cid += 1
        return comp, off, orders, parent_edge, ok

    def _glue(self, comp, qs):
        """Attach every zero-ball-weight component to a weighted one.

        Picks, per orphan component, the cheapest (smallest-bound) edge into a
        weighted component, signed so the orphan rests on the side its own
        objective coefficient pushes toward.  Returns True if edges were added.
        """
        gamma = np.zeros(qs.shape[0])
        np.add.at(gamma, comp, self.c)
        ca, cb = comp[self.ea], comp[self.eb]
        zero_a = qs[ca] == 0
        zero_b = qs[cb] == 0
        cand = (~self.active) & (ca != cb) & (zero_a ^ zero_b)
        if not np.any(cand):
            return False
        added = False
        done = set()
        order = np.flatnonzero(cand)
        order = order[np.lexsort((order, self.bnd[order]))]
        for e in order:
            a, b = self.ea[e], self.eb[e]
            orphan = comp[a] if qs[comp[a]] == 0 else comp[b]
            if orphan in done:
                continue
            done.add(orphan)
            g = gamma[orphan]
            up = g > 0
            orphan_is_a = qs[comp[a]] == 0
            # push up -> binds f_orphan - f_other = +bound (orientation-adjusted)
            self.sign[e] = (1 if up else -1) if orphan_is_a else (-1 if up else 1)
            self.active[e] = True
            added = True
        return added

    def _aggregates(self, comp, off, ncomp):
        """Per-component ball weight, weighted offset sums, and objective mass."""
        q = np.zeros(ncomp)
        s = np.zeros(ncomp)
        g = np.zeros(ncomp)
        t = np.zeros(ncomp)
        np.add.at(q, comp, self.w)
        np.add.at(s, comp, self.w * off)
        np.add.at(g, comp, self.c)
        np.add.at(t, comp, self.w * off * off)
        return q, s, g, t

    def _duals(self, comp, off, orders, parent_edge, f, mu):
        """Net multipliers on active edges by leaf-to-root elimination."""
        nu = np.zeros(self.n_edges)
        resid = self.c - 2.0 * mu * self.w * f
        acc = resid.copy()
        for order in orders:
            for u in reversed(order[1:]):
                e = parent_edge[u]
                if self.ea[e] == u:
                    nu[e] = acc[u]
                    acc[self.eb[e]] += nu[e]
                else:
                    nu[e] = -acc[u]
                    acc[self.ea[e]] -= nu[e]
        return nu

    def _tree_path_edges(self, parent_edge, comp_off_unused, a, b):
        """Edges on the active-tree path between same-component nodes a and b."""
        return [e for e, _ in self._tree_path_oriented(parent_edge, a, b)]

    def _tree_path_oriented(self, parent_edge, a, b):
        """Path edges from a to b with traversal orientation.

        Orientation is +1 where the walk passes the edge in its stored ea->eb
        direction, so sum over the path of orient * sign * bound equals the
        implied gap f_a - f_b.
        """
        seen = {}
        u = a
        while u is not None:
            seen[u] = True
            e = parent_edge[u]
            u = None if e < 0 else (self.eb[e] if self.ea[e] == u else self.ea[e])
        tail = []  # b up to the meeting node, traversal runs toward b
        u = b
        while u not in seen:
            e = parent_edge[u]
            # walking u -> parent; along a->b we pass it parent -> u
            tail.append((e, -1 if self.ea[e] == u else 1))
            u = self.eb[e] if self.ea[e] == u else self.ea[e]
        meet = u
        head = []
        u = a
        while u != meet:
            e = parent_edge[u]
            head.append((e, 1 if self.ea[e] == u else -1))
            u = self.eb[e] if self.ea[e] == u else self.ea[e]
        return head + list(reversed(tail))

    # -- main loop ------------------------------------------------------------

    def _pivot(self, delta, tol, budget, allow_bail=False):
        """Run working-set repair rounds; returns a packaged solution or None.

        Bulk edge additions are fast but can oscillate against releases on
        degenerate instances, so after ``_SAFE_AFTER`` rounds the loop falls
        back to strict one-change-per-round pivoting.
        """
        feas_tol = 1e-11 * self.bscale
        dual_tol = 1e-11 * self.cscale
        cap = delta * delta / 4.0
        last_added: set = set()
        relaxes = 0
        for rnd in range(budget):
            single = rnd >= _SAFE_AFTER
            comp, off, orders, parent_edge, ok = self._components()
            if not ok:
                return None
            q, s, g, t = self._aggregates(comp, off, len(orders))
            if np.any(q <= 0):
                if not self._glue(comp, q):
                    return None
                continue
            varc = t - s * s / q
            p = float(np.sum(g * g / (4.0 * q)))
            r2 = cap - float(varc.sum())
            if p <= 1e-300:
                mu = 0.0
                ball_inactive = True
                v = -s / q
            elif r2 <= 1e-14 * cap:
                # rigid links demand more ball mass than delta allows: split the
                # heaviest component on the path between its two ball-weighted
                # nodes with the most extreme offsets; a working set that needs
                # many such splits is cheaper to rebuild cold
                relaxes += 1
                if allow_bail and relaxes > 8:
                    return None  # rebuilding cold is cheaper than many splits
                wc = int(np.argmax(varc))
                members = np.flatnonzero((comp == wc) & (self.w > 0))
                a = members[np.argmin(off[members])]
                b = members[np.argmax(off[members])]
                path = [e for e in self._tree_path_edges(parent_edge, None, a, b)
                        if self.bnd[e] > 0]
                cand = [e for e in path if e not in last_added] or path
                if not cand:
                    return None
                drop = max(cand, key=lambda e: (self.bnd[e], -e))
                self.active[drop] = False
                continue
            else:
                mu = math.sqrt(p / r2)
                ball_inactive = False
                v = (g / (2.0 * mu) - s) / q
            f = v[comp] + off
            fscale = max(1.0, float(np.max(np.abs(f))), self.bscale)
            gaps = f[self.ea] - f[self.eb]
            over = np.abs(gaps) - self.bnd
            viol = np.where(~self.active, over, -np.inf)
            worst = np.flatnonzero(viol > feas_tol * fscale)
            if worst.size:
                same = comp[self.ea[worst]] == comp[self.eb[worst]]
                if np.any(same):
                    # exchange: bind the violated edge, release a path edge
                    # that stays feasible once the discrepancy shifts onto it
                    e = worst[same][np.argmax(viol[worst[same]])]
                    nu = self._duals(comp, off, orders, parent_edge, f, mu)
                    lam = nu * self.sign
                    s_new = 1 if gaps[e] > 0 else -1
                    phi = gaps[e] - s_new * self.bnd[e]
                    cands = []
                    for pe, orient in self._tree_path_oriented(
                            parent_edge, self.ea[e], self.eb[e]):
                        if self.bnd[pe] <= 0:
                            continue
                        shift = orient * self.sign[pe] * self.bnd[pe]
                        slack = self.bnd[pe] - abs(shift - phi)
                        cands.append((pe, slack))
                    if not cands:
                        return None
                    viable = [pc for pc in cands if pc[1] >= -feas_tol * fscale]
                    if viable:
                        drop = min(viable, key=lambda pc: (lam[pc[0]], pc[0]))[0]
                    else:
                        drop = max(cands, key=lambda pc: (pc[1], -pc[0]))[0]
                    self.active[drop] = False
                    self.active[e] = True
                    self.sign[e] = s_new
                    last_added = {int(e)}
                    continue
                addcap = 1 if single else _ADD_CAP
                order = worst[np.argsort(-viol[worst], kind="stable")]
                # keep the activated set a forest: skip edges whose endpoints
                # are already linked through this round's additions
                root: dict = {}

                def find(cid):
                    while cid in root:
                        cid = root[cid]
                    return cid

                last_added = set()
                for e in order:
                    ra, rb = find(int(comp[self.ea[e]])), find(int(comp[self.eb[e]]))
                    if ra == rb:
                        continue
                    root[rb] = ra
                    self.active[e] = True
                    self.sign[e] = 1 if gaps[e] > 0 else -1
                    last_added.add(int(e))
                    if len(last_added) >= addcap:
                        break
                continue
            nu = self._duals(comp, off, orders, parent_edge, f, mu)
            lam = nu * self.sign
            neg = np.flatnonzero(self.active & (self.bnd > 0) & (lam < -dual_tol * max(1.0, mu)))
            if neg.size:
                drop = neg[np.lexsort((neg, lam[neg]))][0]
                self.active[drop] = False
                continue
            return self._package(delta, f, mu, nu, ball_inactive)
        return None

    def _comp_weights(self, comp, ncomp):
        q = np.zeros(ncomp)
        np.add.at(q, comp, self.w)
        return q

    def _package(self, delta, f, mu, nu, ball_inactive):
        omega = float(self.c @ f)
        omega_prime = 0.0 if ball_inactive else mu * delta / 2.0
        kkt = self._residuals(delta, f, mu, nu, omega)
        lam = nu * self.sign
        return ModulusSolution(delta=delta, f_star=f, omega=omega,
                               omega_prime=omega_prime, mu=mu, kkt=kkt,
                               ball_inactive=ball_inactive,
                               edge_duals=lam)

    def _residuals(self, delta, f, mu, nu, omega):
        oscale = max(1.0, abs(omega))
        if self.n_edges:
            gaps = f[self.ea] - f[self.eb]
            over = np.abs(gaps) - self.bnd
            primal_e = max(0.0, float(np.max(over))) / self.bscale
            slack_e = float(np.max(np.abs(nu * np.minimum(self.bnd - np.abs(gaps),
                                                          self.bnd)))) / oscale
            stat_vec = self.c - 2.0 * mu * self.w * f
            stat_vec = stat_vec - (np.bincount(self.ea, nu, self.m)
                                   - np.bincount(self.eb, nu, self.m))
        else:
            primal_e = 0.0
            slack_e = 0.0
            stat_vec = self.c - 2.0 * mu * self.w * f
        ball = float(self.w @ (f * f))
        cap = delta * delta / 4.0
        primal_b = max(0.0, ball - cap) / cap
        slack_b = mu * max(0.0, cap - ball) / oscale
        return {
            "primal": max(primal_e, primal_b),
            "stationarity": float(np.max(np.abs(stat_vec))) / self.cscale,
            "comp_slack": max(slack_e, slack_b),
            "ball_sq": ball,
        }

    def reset(self):
        self.active[:] = False
        self.sign[:] = 0

    def solve(self, delta: float, tol: ToleranceSpec | None = None) -> ModulusSolution:
        tol = tol or ToleranceSpec()
        if not (delta > 0) or not math.isfinite(delta):
            raise InvalidDelta(f"delta must be positive, got {delta}")
        if np.all(self.c == 0):
            f = np.zeros(self.m)
            kkt = {"primal": 0.0, "stationarity": 0.0, "comp_slack": 0.0, "ball_sq": 0.0}
            return ModulusSolution(delta=delta, f_star=f, omega=0.0, omega_prime=0.0,
                                   mu=0.0, kkt=kkt, ball_inactive=True,
                                   edge_duals=np.zeros(self.n_edges))
        sol = self._pivot(delta, tol, tol.max_rounds, allow_bail=True)
        if sol is None:
            # rebuild by continuation: cold-start small, then walk delta up
            # (ascending steps keep the working set close to optimal)
            self.reset()
            for step in (delta / 64.0, delta / 16.0, delta / 4.0):
                if self._pivot(step, tol, tol.max_rounds) is None:
                    self.reset()
            sol = self._pivot(delta, tol, tol.max_rounds)
        if sol is None:
            sol = self._fallback(delta, tol)
        if (sol.kkt["primal"] > tol.primal
                or sol.kkt["stationarity"] > tol.stationarity
                or sol.kkt["comp_slack"] > tol.comp_slack):
            raise SolverStalled("modulus solve did not meet tolerances", sol.kkt)
        return sol

    def _fallback(self, delta, tol):
        from ._admm import admm_ball_polytope
        self._fallbacks += 1
        f, gaps = admm_ball_polytope(self, delta, max_iter=tol.max_iter)
        scale = max(1.0, float(np.max(np.abs(f))), self.bscale)
        self.active = (self.bnd - np.abs(gaps)) <= 1e-7 * scale
        self.sign = np.where(gaps > 0, 1, -1).astype(np.int8)
        self.sign[~self.active] = 0
        sol = self._pivot(delta, tol, tol.max_rounds)
        if sol is None:
            raise SolverStalled("working-set repair failed after splitting fallback",
                                None)
        return sol

    def solve_with_fd_check(self, delta, tol=None, step_frac=1e-3):
        """Solve and attach a central finite-difference estimate of omega'."""
        sol = self.solve(delta, tol)
        h = step_frac * delta
        lo = self.solve(delta - h, tol)
        hi = self.solve(delta + h, tol)
        fd = (hi.omega - lo.omega) / (2 * h)
        self.solve(delta, tol)  # restore working set at delta
        return ModulusSolution(delta=sol.delta, f_star=sol.f_star, omega=sol.omega,
                               omega_prime=sol.omega_prime, mu=sol.mu, kkt=sol.kkt,
                               ball_inactive=sol.ball_inactive,
                               edge_duals=sol.edge_duals, fd_omega_prime=fd)


def solve_modulus(problem: ModulusProblem, tol: ToleranceSpec | None = None,
                  verify: bool = False) -> ModulusSolution:
    """Solve one modulus instance from scratch (no warm start)."""
    engine = ModulusEngine.from_problem(problem)
    if verify:
        return engine.solve_with_fd_check(problem.delta, tol)
    return engine.solve(problem.delta, tol)


def omega_curve(problem: ModulusProblem | ModulusEngine, deltas,
                tol: ToleranceSpec | None = None, verify: bool = False):
    """Trace (delta, omega, omega', mu) along an increasing delta grid.

    omega' is taken from the ball multiplier (omega' = mu*delta/2); when
    ``verify`` is set, a central finite-difference cross-check is recorded on
    each point.
    """
    deltas = np.asarray(deltas, dtype=float)
    if deltas.ndim != 1 or deltas.size == 0 or np.any(np.diff(deltas) <= 0):
        raise InvalidDelta("delta grid must be strictly increasing")
    if np.any(deltas <= 0):
        raise InvalidDelta("delta grid must be positive")
    engine = (problem if isinstance(problem, ModulusEngine)
              else ModulusEngine.from_problem(problem))
    points = []
    for d in deltas:
        try:
            sol = (engine.solve_with_fd_check(d, tol) if verify
                   else engine.solve(d, tol))
        except SolverStalled as exc:
            raise SolverStalled(f"omega_curve stalled at delta={d}: {exc}",
                                exc.residuals) from exc
        points.append(CurvePoint(
            delta=float(d), omega=sol.omega, omega_prime=sol.omega_prime,
            mu=sol.mu, kkt_primal=sol.kkt["primal"],
            kkt_stationarity=sol.kkt["stationarity"],
            fd_omega_prime=(sol.fd_omega_prime if sol.fd_omega_prime is not None
                            else float("nan"))))
    return points
