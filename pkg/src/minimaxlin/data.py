"""Samples, function classes, functional targets, and their finite node/edge representation.

The estimation problems in this package only ever touch a candidate regression
function at sample-derived points, so a function-class member is represented by
its values on a finite set of nodes ``(arm, unit)``.  The weighted-Lipschitz
class then becomes a polytope of pairwise difference constraints between
same-arm nodes, which is what the modulus solver consumes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import DataError, InvalidPruning, MissingArm

__all__ = [
    "Sample",
    "LipschitzClass",
    "FunctionalTarget",
    "NodeSet",
    "ConstraintGraph",
    "ate_target",
    "att_target",
    "custom_target",
    "build_nodes",
    "build_constraint_graph",
    "load_sample_csv",
]


@dataclass(frozen=True, eq=False)
class Sample:
    """Observed data: outcome ``y``, optional binary arm ``d``, covariates ``x``.

    ``x`` has shape ``(n, p)``.  ``d`` is an int array of 0/1 flags, or None
    for problems without a treatment arm (all units are then placed in arm 0).
    """

    y: np.ndarray
    x: np.ndarray
    d: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if x.shape[0] != y.shape[0]:
            x = x.T
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        if self.d is not None:
            d = np.asarray(self.d)
            if not np.all(np.isin(d, (0, 1))):
                raise DataError("treatment indicator d must be 0/1")
            object.__setattr__(self, "d", d.astype(np.int8))
        if y.ndim != 1 or x.ndim != 2:
            raise DataError("y must be 1-D and x 2-D")
        if self.n < 2:
            raise DataError("need at least two observations")
        if self.p < 1:
            raise DataError("need at least one covariate")
        if self.d is not None and self.d.shape != y.shape:
            raise DataError("d and y length mismatch")
        for name, arr in (("y", y), ("x", x)):
            if not np.all(np.isfinite(arr)):
                bad = int(np.argwhere(~np.isfinite(arr))[0][0])
                raise DataError(f"non-finite value in {name} at row {bad}")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def arm(self) -> np.ndarray:
        """Arm index per unit; all zeros when d is absent."""
        if self.d is None:
            return np.zeros(self.n, dtype=np.int8)
        return self.d

    @property
    def n_treated(self) -> int:
        return int(self.arm().sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated


@dataclass(frozen=True, eq=False)
class LipschitzClass:
    """Weighted-L1 Lipschitz class: |f(d,x) - f(d,x')| <= C * sum_j |A_jj (x_j - x'_j)|.

    The class is convex and centrosymmetric by construction; only ``C`` and the
    diagonal norm weights are stored.
    """

    c: float
    a_diag: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a_diag, dtype=float))
        object.__setattr__(self, "a_diag", a)
        if self.c < 0 or not math.isfinite(self.c):
            raise DataError("Lipschitz constant C must be finite and >= 0")
        if a.ndim != 1 or np.any(a <= 0) or not np.all(np.isfinite(a)):
            raise DataError("norm weights A_jj must be positive finite")

    @classmethod
    def identity(cls, c: float, p: int) -> "LipschitzClass":
        return cls(c=c, a_diag=np.ones(p))

    def distances(self, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
        """Pairwise weighted-L1 distances between rows of ``xa`` and ``xb``."""
        xa = np.atleast_2d(xa)
        xb = np.atleast_2d(xb)
        return np.abs(xa[:, None, :] - xb[None, :, :]) @ self.a_diag


# Universe column layout for H: column arm*n + i holds the value f(arm, X_i).
def universe_col(arm: int, unit: int | np.ndarray, n: int):
    return arm * n + unit


@dataclass(frozen=True, eq=False)
class FunctionalTarget:
    """Sparse linear operator H with h(Z_i, f) = (H f)_i.

    ``h`` is an ``(n, 2n)`` matrix over the node universe: column ``arm*n + i``
    refers to the value of f at arm ``arm`` and covariate row ``i``.  Any
    per-row scale (such as n/n1 for the feasible ATT) is absorbed into H.
    """

    kind: str
    h: sparse.csr_matrix
    n: int

    def referenced_cols(self) -> np.ndarray:
        """Universe columns with a nonzero coefficient in some row of H."""
        h = self.h.tocsc()
        counts = np.diff(h.indptr)
        return np.flatnonzero(counts > 0)

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.h.sum(axis=0)).ravel()


def ate_target(sample: Sample) -> FunctionalTarget:
    """h(Z_i, f) = f(1, X_i) - f(0, X_i) for every unit."""
    if sample.d is None:
        raise MissingArm("ATE target needs a treatment indicator")
    n = sample.n
    rows = np.repeat(np.arange(n), 2)
    cols = np.column_stack([universe_col(1, np.arange(n), n),
                            universe_col(0, np.arange(n), n)]).ravel()
    vals = np.tile([1.0, -1.0], n)
    h = sparse.csr_matrix((vals, (rows, cols)), shape=(n, 2 * n))
    return FunctionalTarget(kind="ate", h=h, n=n)


def att_target(sample: Sample) -> FunctionalTarget:
    """Feasible ATT rows: (n/n1) * D_i * [f(1, X_i) - f(0, X_i)].

    The n/n1 scale makes (1/n) sum_i h(Z_i, f) the sample treated-arm contrast
    (1/n1) sum_{D_i=1} [f(1, X_i) - f(0, X_i)].
    """
    if sample.d is None:
        raise MissingArm("ATT target needs a treatment indicator")
    n, n1 = sample.n, sample.n_treated
    if n1 == 0:
        raise MissingArm("ATT target: no treated units")
    treated = np.flatnonzero(sample.d == 1)
    scale = n / n1
    rows = np.repeat(treated, 2)
    cols = np.column_stack([universe_col(1, treated, n),
                            universe_col(0, treated, n)]).ravel()
    vals = np.tile([scale, -scale], n1)
    h = sparse.csr_matrix((vals, (rows, cols)), shape=(n, 2 * n))
    return FunctionalTarget(kind="att", h=h, n=n)


def custom_target(sample: Sample, h: sparse.spmatrix | np.ndarray) -> FunctionalTarget:
    h = sparse.csr_matrix(h)
    if h.shape != (sample.n, 2 * sample.n):
        raise DataError(f"custom target H must have shape (n, 2n) = {(sample.n, 2 * sample.n)}")
    return FunctionalTarget(kind="custom", h=h, n=sample.n)


@dataclass(frozen=True, eq=False)
class NodeSet:
    """Evaluation nodes: each node is an (arm, covariate-row) pair.

    Observed nodes are the realized (D_i, X_i); counterfactual nodes are kept
    only when the target references them.  Arm values the target never touches
    (e.g. treated-arm values at control covariates under ATT) are dropped:
    any feasible assignment extends to them by the McShane-Whitney theorem.
    """

    arm: np.ndarray          # (k,) int8
    unit: np.ndarray         # (k,) unit/covariate-row index
    observed: np.ndarray     # (k,) bool
    obs_node_of_unit: np.ndarray  # (n,) node index of each unit's realized node
    n: int                   # number of units in the sample

    @property
    def k(self) -> int:
        return self.arm.shape[0]

    def universe_cols(self) -> np.ndarray:
        return self.arm.astype(int) * self.n + self.unit

    def owner(self) -> np.ndarray:
        """Unit index for observed nodes, -1 elsewhere."""
        out = np.where(self.observed, self.unit, -1)
        return out


def build_nodes(sample: Sample, target: FunctionalTarget) -> NodeSet:
    """Assemble the node set: all observed nodes plus referenced counterfactuals."""
    n = sample.n
    if target.n != n:
        raise DataError("target and sample disagree on n")
    arm = sample.arm()
    obs_cols = universe_col(arm.astype(int), np.arange(n), n)
    ref_cols = target.referenced_cols()
    ref_arm = ref_cols // n
    for a in np.unique(ref_arm):
        if not np.any(arm == a):
            raise MissingArm(f"target references arm {int(a)} but the sample has no such units")
    cols = np.union1d(obs_cols, ref_cols)
    node_arm = (cols // n).astype(np.int8)
    node_unit = cols % n
    observed = np.isin(cols, obs_cols)
    obs_node_of_unit = np.searchsorted(cols, obs_cols)
    return NodeSet(arm=node_arm, unit=node_unit, observed=observed,
                   obs_node_of_unit=obs_node_of_unit, n=n)


@dataclass(frozen=True, eq=False)
class ConstraintGraph:
    """Same-arm pairwise difference bounds |f_a - f_b| <= bound.

    ``kind`` is "full" (all same-arm pairs, exact for any p) or "chain"
    (sorted-adjacent pairs, exact for p = 1 by additivity of the weighted-L1
    norm on the line).
    """

    ea: np.ndarray       # edge endpoint node indices
    eb: np.ndarray
    bound: np.ndarray
    pruned: bool
    kind: str            # "full" | "chain"
    n_nodes: int

    @property
    def n_edges(self) -> int:
        return self.ea.shape[0]


def build_constraint_graph(nodes: NodeSet, cls: LipschitzClass, sample: Sample,
                           prune_1d: bool = False) -> ConstraintGraph:
    """Build the Lipschitz polytope edges for a node set."""
    if prune_1d and sample.p != 1:
        raise InvalidPruning("sorted-adjacent pruning is only exact for p = 1")
    ea_parts, eb_parts, b_parts = [], [], []
    for a in np.unique(nodes.arm):
        idx = np.flatnonzero(nodes.arm == a)
        if idx.size < 2:
            continue
        xs = sample.x[nodes.unit[idx]]
        if prune_1d:
            order = np.lexsort((idx, xs[:, 0]))
            sidx = idx[order]
            ea_parts.append(sidx[:-1])
            eb_parts.append(sidx[1:])
            d = np.abs(np.diff(xs[order, 0])) * cls.a_diag[0]
            b_parts.append(cls.c * d)
        else:
            iu, ju = np.triu_indices(idx.size, k=1)
            ea_parts.append(idx[iu])
            eb_parts.append(idx[ju])
            d = cls.distances(xs, xs)[iu, ju]
            b_parts.append(cls.c * d)
    if ea_parts:
        ea = np.concatenate(ea_parts)
        eb = np.concatenate(eb_parts)
        bound = np.concatenate(b_parts)
    else:
        ea = np.empty(0, dtype=int)
        eb = np.empty(0, dtype=int)
        bound = np.empty(0, dtype=float)
    return ConstraintGraph(ea=ea, eb=eb, bound=bound, pruned=prune_1d,
                           kind="chain" if prune_1d else "full", n_nodes=nodes.k)


def load_sample_csv(path) -> Sample:
    """Read a sample from CSV with header columns y, optional d, x1..xp.

    UTF-8, '.' decimal separator, comma delimiter.  Any row with a non-finite
    or unparsable field is rejected with its line number.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty CSV file") from None
        header = [h.strip() for h in header]
        if "y" not in header:
            raise DataError("CSV header must contain a 'y' column")
        xcols = sorted((h for h in header if h.startswith("x")),
                       key=lambda h: int(h[1:]) if h[1:].isdigit() else -1)
        expected = {f"x{j + 1}" for j in range(len(xcols))}
        if set(xcols) != expected or not xcols:
            raise DataError("covariate columns must be named x1..xp")
        allowed = {"y", "d"} | expected
        unknown = [h for h in header if h not in allowed]
        if unknown:
            raise DataError(f"unknown CSV columns: {unknown}")
        has_d = "d" in header
        pos = {h: header.index(h) for h in header}
        ys, ds, xs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                yv = float(row[pos["y"]])
                xv = [float(row[pos[c]]) for c in xcols]
                dv = int(float(row[pos["d"]])) if has_d else None
            except ValueError:
                raise DataError(f"row {lineno}: unparsable numeric field") from None
            if not math.isfinite(yv) or not all(math.isfinite(v) for v in xv):
                raise DataError(f"row {lineno}: non-finite value")
            if has_d and dv not in (0, 1):
                raise DataError(f"row {lineno}: d must be 0 or 1")
            ys.append(yv)
            xs.append(xv)
            if has_d:
                ds.append(dv)
    if not ys:
        raise DataError("CSV contains no data rows")
    return Sample(y=np.array(ys), x=np.array(xs), d=np.array(ds) if has_d else None)
