"""Projection-splitting fallback for the modulus program.

Used only to reseed the working-set method when pivoting stalls: it solves
max c'f subject to the weighted ball and the difference polytope by ADMM with
one auxiliary block per constraint family.  The per-iteration linear solve
exploits structure: complete per-arm graphs reduce to a diagonal-plus-rank-one
system, anything else is factorized sparsely once.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sla

_ALPHA = 1.6  # over-relaxation


def _full_graph_solver(engine):
    arms = [np.flatnonzero(engine.arm == a) for a in np.unique(engine.arm)]
    blocks = []
    for idx in arms:
        phi = idx.size + engine.w[idx]
        blocks.append((idx, 1.0 / phi))

    def solve(rhs):
        out = np.empty_like(rhs)
        for idx, phinv in blocks:
            b = rhs[idx]
            pb = phinv * b
            denom = 1.0 - phinv.sum()
            out[idx] = pb + phinv * (pb.sum() / denom)
        return out

    return solve


def _sparse_solver(engine):
    m = engine.m
    ones = np.ones(engine.n_edges)
    rows = np.concatenate([engine.ea, engine.eb, engine.ea, engine.eb])
    cols = np.concatenate([engine.ea, engine.eb, engine.eb, engine.ea])
    vals = np.concatenate([ones, ones, -ones, -ones])
    lap = sparse.csc_matrix((vals, (rows, cols)), shape=(m, m))
    mat = lap + sparse.diags(engine.w)
    lu = sla.splu(mat.tocsc())
    return lu.solve


def admm_ball_polytope(engine, delta, max_iter=100_000):
    """Approximately solve the modulus program; returns (f, edge gaps)."""
    m = engine.m
    ea, eb, bnd, w, c = engine.ea, engine.eb, engine.bnd, engine.w, engine.c
    widx = np.flatnonzero(w > 0)
    sw = np.sqrt(w[widx])
    solve = (_full_graph_solver(engine) if engine.kind == "full"
             else _sparse_solver(engine))
    radius = delta / 2.0
    rho = max(engine.cscale / max(engine.bscale, radius), 1e-6)
    z = np.zeros(engine.n_edges)
    u = np.zeros(widx.size)
    yz = np.zeros(engine.n_edges)
    yu = np.zeros(widx.size)
    f = np.zeros(m)
    gaps = np.zeros(engine.n_edges)
    for it in range(max_iter):
        rhs = c / rho
        if engine.n_edges:
            zz = z - yz
            rhs += np.bincount(ea, zz, m) - np.bincount(eb, zz, m)
        rhs[widx] += sw * (u - yu)
        f = solve(rhs)
        gaps = f[ea] - f[eb]
        pf = sw * f[widx]
        hatz = _ALPHA * gaps + (1 - _ALPHA) * z
        z_new = np.clip(hatz + yz, -bnd, bnd)
        yz = yz + hatz - z_new
        hatu = _ALPHA * pf + (1 - _ALPHA) * u
        t = hatu + yu
        nrm = float(np.linalg.norm(t))
        u_new = t if nrm <= radius else t * (radius / nrm)
        yu = yu + hatu - u_new
        if it % 10 == 9:
            fscale = max(1.0, float(np.max(np.abs(f))), engine.bscale)
            rp = max(float(np.max(np.abs(gaps - z_new))) if engine.n_edges else 0.0,
                     float(np.max(np.abs(pf - u_new))) if widx.size else 0.0)
            dz = rho * (z_new - z)
            du = rho * (u_new - u)
            dvec = np.zeros(m)
            if engine.n_edges:
                dvec += np.bincount(ea, dz, m) - np.bincount(eb, dz, m)
            dvec[widx] += sw * du
            rd = float(np.max(np.abs(dvec)))
            rpn = rp / fscale
            rdn = rd / engine.cscale
            if rpn < 1e-9 and rdn < 1e-9:
                z, u = z_new, u_new
                break
            if it % 50 == 49:
                if rpn > 10 * rdn:
                    rho *= 2.0
                    yz /= 2.0
                    yu /= 2.0
                elif rdn > 10 * rpn:
                    rho /= 2.0
                    yz *= 2.0
                    yu *= 2.0
        z, u = z_new, u_new
    return f, gaps
