"""Exhaustive active-set oracle for small modulus instances.

Enumerates every assignment of {inactive, +bound, -bound} to the difference
constraints, solves each equality-constrained subproblem in closed form, and
keeps the best candidate that is feasible for the full problem.  Exponential
in the edge count: intended only as an independent ground truth for tests.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import OracleTooLarge
from .modulus import ModulusEngine, ModulusProblem, ModulusSolution

__all__ = ["brute_force_modulus"]

_MAX_NODES = 10
_MAX_PATTERNS = 400_000


def brute_force_modulus(problem: ModulusProblem,
                        pattern_cap: int = _MAX_PATTERNS) -> ModulusSolution:
    """Globally solve a tiny modulus instance by enumeration."""
    eng = ModulusEngine.from_problem(problem)
    m, ne = eng.m, eng.n_edges
    delta = float(problem.delta)
    if m > _MAX_NODES:
        raise OracleTooLarge(f"{m} nodes exceeds the oracle limit of {_MAX_NODES}")
    if 3 ** ne > pattern_cap:
        raise OracleTooLarge(f"3^{ne} edge patterns exceed the cap of {pattern_cap}")
    w = eng.w
    c = eng.c
    ea = eng.ea.tolist()
    eb = eng.eb.tolist()
    bnd = eng.bnd.tolist()
    cap = delta * delta / 4.0
    off_tol = 1e-9 * eng.bscale

    if np.all(c == 0):
        f = np.zeros(m)
        kkt = {"primal": 0.0, "stationarity": 0.0, "comp_slack": 0.0, "ball_sq": 0.0}
        return ModulusSolution(delta=delta, f_star=f, omega=0.0, omega_prime=0.0,
                               mu=0.0, kkt=kkt, ball_inactive=True)

    best_val = -math.inf
    best_f = None
    best_mu = 0.0

    for pattern in itertools.product((0, 1, -1), repeat=ne):
        parent = list(range(m))
        pot = [0.0] * m

        def find(j):
            path = []
            while parent[j] != j:
                path.append(j)
                j = parent[j]
            root = j
            acc = 0.0
            for node in reversed(path):
                acc += pot[node]
                parent[node] = root
                pot[node] = acc
            return root

        consistent = True
        for e in range(ne):
            s = pattern[e]
            if s == 0:
                continue
            d = s * bnd[e]
            a, b = ea[e], eb[e]
            ra = find(a)
            rb = find(b)
            if ra == rb:
                if abs(pot[a] - pot[b] - d) > off_tol:
                    consistent = False
                    break
            else:
                # attach rb under ra so that f_a - f_b = d holds
                parent[rb] = ra
                pot[rb] = pot[a] - pot[b] - d
        if not consistent:
            continue

        roots = {}
        for j in range(m):
            r = find(j)
            agg = roots.get(r)
            if agg is None:
                agg = roots[r] = [0.0, 0.0, 0.0, 0.0, 0.0]  # q, s, gamma, t, l
            pj = pot[j]
            wj = w[j]
            agg[0] += wj
            agg[1] += wj * pj
            agg[2] += c[j]
            agg[3] += wj * pj * pj
            agg[4] += c[j] * pj

        const_b = 0.0
        p2 = 0.0   # sum gamma^2 / q
        base = 0.0
        valid = True
        for agg in roots.values():
            q, s_, g, t, l = agg
            if q <= 0.0:
                if abs(g) > 1e-13 * eng.cscale:
                    valid = False
                    break
                base += l
                continue
            mk = -s_ / q
            const_b += t - s_ * s_ / q
            p2 += g * g / q
            base += g * mk + l
        if not valid:
            continue
        r2 = cap - const_b
        if r2 < -1e-12 * max(cap, 1.0):
            continue
        r = math.sqrt(max(r2, 0.0))
        scale = math.sqrt(p2)
        value = base + r * scale

        f = np.empty(m)
        for j in range(m):
            rj = find(j)
            q, s_, g, t, l = roots[rj]
            if q <= 0.0:
                vk = 0.0
            else:
                vk = -s_ / q
                if scale > 0.0:
                    vk += r * (g / q) / scale
            f[j] = vk + pot[j]

        ok = True
        fscale = max(1.0, float(np.max(np.abs(f))), eng.bscale)
        for e in range(ne):
            if abs(f[ea[e]] - f[eb[e]]) > bnd[e] + 1e-9 * fscale:
                ok = False
                break
        if not ok:
            continue
        ball = float(w @ (f * f))
        if ball > cap * (1 + 1e-9) + 1e-15:
            continue
        if value > best_val:
            best_val = value
            best_f = f
            best_mu = scale / (2.0 * r) if (scale > 0.0 and r > 0.0) else 0.0

    if best_f is None:
        raise OracleTooLarge("no feasible pattern found (should not happen)")
    ball = float(w @ (best_f * best_f))
    gaps = best_f[eng.ea] - best_f[eng.eb] if ne else np.zeros(0)
    primal_e = (max(0.0, float(np.max(np.abs(gaps) - eng.bnd))) / eng.bscale
                if ne else 0.0)
    kkt = {
        "primal": max(primal_e, max(0.0, ball - cap) / cap),
        "stationarity": float("nan"),
        "comp_slack": float("nan"),
        "ball_sq": ball,
    }
    mu = best_mu
    ball_inactive = ball < cap * (1 - 1e-9)
    return ModulusSolution(delta=delta, f_star=best_f, omega=best_val,
                           omega_prime=0.0 if ball_inactive else mu * delta / 2.0,
                           mu=0.0 if ball_inactive else mu,
                           kkt=kkt, ball_inactive=ball_inactive)
