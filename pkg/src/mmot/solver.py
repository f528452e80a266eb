"""Discrete multi-marginal Kantorovich problem: exact LP and entropic solvers."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import manifold as mf
from .cost import CostTensor
from .errors import IterationLimit, NumericalError, SizeCapError
from .manifold import ManifoldSpec
from .simplex import solve_lp

LP_CAP = 10**5
SINKHORN_CAP = 10**6


@dataclass
class DiscreteMeasure:
    spec: ManifoldSpec
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = mf.check_point(self.spec, np.atleast_2d(np.asarray(self.points, dtype=float)))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.points),):
            raise ValueError("need exactly one weight per point")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, not 1")
        if len(self.points) > 1:
            d = mf.distance(self.spec, self.points[:, None, :], self.points[None, :, :])
            np.fill_diagonal(d, np.inf)
            if np.min(d) <= 1e-9:
                raise ValueError("support points must be pairwise distinct")

    def __len__(self):
        return len(self.points)

    @classmethod
    def uniform(cls, spec: ManifoldSpec, points) -> "DiscreteMeasure":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(spec, points, np.full(len(points), 1.0 / len(points)))

    @classmethod
    def dirac(cls, spec: ManifoldSpec, point) -> "DiscreteMeasure":
        return cls(spec, np.atleast_2d(point), np.ones(1))

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict, spec: ManifoldSpec | None = None) -> "DiscreteMeasure":
        spec = spec or ManifoldSpec.from_dict(data["spec"])
        return cls(spec, np.asarray(data["points"], dtype=float), np.asarray(data["weights"], dtype=float))


@dataclass
class TransportPlan:
    shape: tuple[int, ...]
    index: np.ndarray  # (K, m) int
    mass: np.ndarray  # (K,)
    source: str = "exact_lp"

    @property
    def m(self) -> int:
        return len(self.shape)

    @property
    def entries(self) -> list[tuple[tuple[int, ...], float]]:
        return [(tuple(int(k) for k in row), float(w)) for row, w in zip(self.index, self.mass)]

    def __len__(self):
        return len(self.mass)

    def marginal(self, i: int) -> np.ndarray:
        return np.bincount(self.index[:, i], weights=self.mass, minlength=self.shape[i])

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, tuple(self.index.T), self.mass)
        return out

    def cost(self, values: np.ndarray) -> float:
        return float(np.sum(self.mass * values[tuple(self.index.T)]))

    @classmethod
    def from_dense(cls, P: np.ndarray, source: str, threshold: float = 0.0) -> "TransportPlan":
        flat = np.flatnonzero(P.ravel() > threshold)
        idx = np.column_stack(np.unravel_index(flat, P.shape)) if len(flat) else np.empty((0, P.ndim), int)
        return cls(tuple(P.shape), idx.astype(np.int64), P.ravel()[flat].copy(), source)

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "source": self.source,
            "entries": [[list(map(int, row)), float(w)] for row, w in zip(self.index, self.mass)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TransportPlan":
        entries = data["entries"]
        m = len(data["shape"])
        idx = np.array([e[0] for e in entries], dtype=np.int64).reshape(-1, m)
        mass = np.array([e[1] for e in entries], dtype=float)
        return cls(tuple(data["shape"]), idx, mass, data.get("source", "exact_lp"))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"i{k + 1}" for k in range(self.m)] + ["mass"])
            for row, mass in zip(self.index, self.mass):
                w.writerow([int(k) for k in row] + [repr(float(mass))])


@dataclass
class DualPotentials:
    u: list[np.ndarray]
    feasibility_residual: float = 0.0

    def value(self, weights: Sequence[np.ndarray]) -> float:
        return float(sum(np.dot(ui, wi) for ui, wi in zip(self.u, weights)))

    def total(self, index: np.ndarray) -> np.ndarray:
        """``sum_i u_i[idx_i]`` for each row of ``index``."""
        return np.sum([self.u[i][index[:, i]] for i in range(len(self.u))], axis=0)

    def to_dict(self) -> dict:
        return {"u": [ui.tolist() for ui in self.u], "feasibility_residual": self.feasibility_residual}

    @classmethod
    def from_dict(cls, data: dict) -> "DualPotentials":
        return cls([np.asarray(ui, dtype=float) for ui in data["u"]], float(data.get("feasibility_residual", 0.0)))


@dataclass
class SolveReport:
    primal_value: float
    dual_value: float
    gap: float
    iterations: int
    method: str
    epsilon: float | None = None
    marginal_residuals: list[float] = field(default_factory=list)
    support_size: int = 0
    # count of nonbasic columns with zero reduced cost (possible LP ties)
    tie_columns: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "iterations": self.iterations,
            "method": self.method,
            "epsilon": self.epsilon,
            "marginal_residuals": list(self.marginal_residuals),
            "support_size": self.support_size,
            "tie_columns": self.tie_columns,
            **self.extra,
        }


def _values(tensor) -> np.ndarray:
    return np.asarray(tensor.values if isinstance(tensor, CostTensor) else tensor, dtype=float)


def _weights(measures) -> list[np.ndarray]:
    return [np.asarray(getattr(mu, "weights", mu), dtype=float) for mu in measures]


def dense_residual(values: np.ndarray, u: Sequence[np.ndarray]) -> float:
    """``max over all tuples of sum_i u_i - c``."""
    return float(np.max(_broadcast_sum(u, values.ndim) - values))


def _broadcast_sum(u: Sequence[np.ndarray], m: int, skip: int | None = None) -> np.ndarray:
    total = 0.0
    for i, ui in enumerate(u):
        if i == skip:
            continue
        shape = [1] * m
        shape[i] = len(ui)
        total = total + np.asarray(ui).reshape(shape)
    return np.asarray(total)


def marginal_residuals(plan: TransportPlan, weights: Sequence[np.ndarray]) -> list[float]:
    return [float(np.max(np.abs(plan.marginal(i) - w))) for i, w in enumerate(weights)]


def _constraints(shape: tuple[int, ...], weights: list[np.ndarray]):
    """Marginal constraint rows in column (C-order tuple) order.

    Each block after the first sums to the same total as the first, so the
    last row of blocks 2..m is implied and left out.
    """
    idx = np.indices(shape).reshape(len(shape), -1)
    rows, rhs, owner = [], [], []
    for i, n in enumerate(shape):
        keep = n if i == 0 else n - 1
        for k in range(keep):
            rows.append(idx[i] == k)
            rhs.append(weights[i][k])
            owner.append((i, k))
    return np.array(rows, dtype=float).reshape(len(rows), -1), np.array(rhs), owner


def _peel(index: np.ndarray, shape, weights) -> np.ndarray | None:
    """Recover basic masses combinatorially when the basis is triangular."""
    K, m = index.shape
    mass = np.full(K, np.nan)
    members = [[[] for _ in range(n)] for n in shape]
    for e, row in enumerate(index):
        for i in range(m):
            members[i][row[i]].append(e)
    progress = True
    while progress and np.isnan(mass).any():
        progress = False
        for i in range(m):
            for k in range(shape[i]):
                unknown = [e for e in members[i][k] if np.isnan(mass[e])]
                if len(unknown) == 1:
                    known = sorted(e for e in members[i][k] if not np.isnan(mass[e]))
                    mass[unknown[0]] = weights[i][k] - math.fsum(mass[known])
                    progress = True
    return None if np.isnan(mass).any() else mass


def solve_exact(tensor, measures) -> tuple[TransportPlan, DualPotentials, SolveReport]:
    """Optimal vertex of the discrete Kantorovich LP.

    Columns are tuples in lexicographic (C) order; with Bland's rule this
    makes the returned vertex reproducible when optimal vertices tie.
    """
    C = _values(tensor)
    w = _weights(measures)
    shape = C.shape
    if tuple(len(x) for x in w) != shape:
        raise ValueError(f"measure sizes {[len(x) for x in w]} do not match tensor shape {shape}")
    if C.size > LP_CAP:
        raise SizeCapError(f"LP with {C.size} columns exceeds cap {LP_CAP}")
    A, b, owner = _constraints(shape, w)
    lp = solve_lp(A, b, C.ravel())

    basis = np.sort(lp.basis)
    bidx = np.column_stack(np.unravel_index(basis, shape))
    masses = lp.x[basis]
    peeled = _peel(bidx, shape, w)
    if peeled is not None and np.max(np.abs(peeled - masses)) < 1e-12:
        masses = np.where(np.abs(peeled) < 1e-15, 0.0, peeled)
    keep = masses > 0
    if np.any(masses < -1e-12):
        raise NumericalError("negative mass in optimal basis")
    plan = TransportPlan(shape, bidx[keep].astype(np.int64), masses[keep], "exact_lp")

    u = [np.zeros(n) for n in shape]
    for (i, k), y in zip(owner, lp.duals):
        u[i][k] = y
    pots = DualPotentials(u, max(0.0, dense_residual(C, u)))
    primal = plan.cost(C)
    dual = pots.value(w)
    report = SolveReport(
        primal_value=primal,
        dual_value=dual,
        gap=primal - dual,
        iterations=lp.iterations,
        method="exact_lp",
        marginal_residuals=marginal_residuals(plan, w),
        support_size=len(plan),
        tie_columns=lp.zero_reduced_costs,
    )
    return plan, pots, report


def c_conjugate(tensor, u: DualPotentials, i: int) -> DualPotentials:
    """Replace ``u_i`` by its c-transform against the other potentials."""
    C = _values(tensor)
    m = C.ndim
    S = C - _broadcast_sum(u.u, m, skip=i)
    axes = tuple(a for a in range(m) if a != i)
    new = [np.array(x, dtype=float) for x in u.u]
    new[i] = np.min(S, axis=axes) if axes else S
    return DualPotentials(new, max(0.0, dense_residual(C, new)))


def conjugate_sweep(tensor, u: DualPotentials) -> DualPotentials:
    for i in range(_values(tensor).ndim):
        u = c_conjugate(tensor, u, i)
    return u


def support_equality_check(plan: TransportPlan, tensor, u: DualPotentials) -> float:
    """Worst ``|sum_i u_i - c|`` over the support of ``plan``."""
    if len(plan) == 0:
        return 0.0
    C = _values(tensor)
    return float(np.max(np.abs(u.total(plan.index) - C[tuple(plan.index.T)])))


def c_monotonicity_violation(plan: TransportPlan, tensor) -> float:
    """Largest ``c(x) + c(xbar) - c(x') - c(xbar')`` over support pairs and swaps.

    ``x'`` and ``xbar'`` exchange a single coordinate. A non-positive result
    means no swap of one coordinate between support tuples lowers the cost.
    """
    C = _values(tensor)
    idx = plan.index
    K, m = idx.shape
    if K < 2:
        return 0.0
    a, b = np.triu_indices(K, 1)
    base = C[tuple(idx[a].T)] + C[tuple(idx[b].T)]
    worst = -np.inf
    for i in range(m):
        xa, xb = idx[a].copy(), idx[b].copy()
        xa[:, i], xb[:, i] = idx[b][:, i], idx[a][:, i]
        swapped = C[tuple(xa.T)] + C[tuple(xb.T)]
        worst = max(worst, float(np.max(base - swapped)))
    return worst


def geometric_schedule(start: float = 1.0, final: float = 1e-3, factor: float = 0.5) -> list[float]:
    eps = [start]
    while eps[-1] * factor > final:
        eps.append(eps[-1] * factor)
    if eps[-1] != final:
        eps.append(final)
    return eps


def _round(P: np.ndarray, weights: list[np.ndarray]) -> np.ndarray:
    """Project a positive tensor onto the transport polytope.

    Shrink each marginal to at most its target, then spread the missing mass
    as a rank-one tensor of the per-marginal deficits.
    """
    m = P.ndim
    P = P.copy()
    for i in range(m):
        axes = tuple(a for a in range(m) if a != i)
        r = P.sum(axis=axes)
        scale = np.minimum(1.0, weights[i] / np.where(r > 0, r, 1.0))
        shape = [1] * m
        shape[i] = -1
        P *= scale.reshape(shape)
    deficits = [np.maximum(w - P.sum(axis=tuple(a for a in range(m) if a != i)), 0.0)
                for i, w in enumerate(weights)]
    delta = 1.0 - P.sum()
    if delta > 1e-300:
        outer = deficits[0]
        for e in deficits[1:]:
            outer = np.multiply.outer(outer, e)
        P += outer / delta ** (m - 1)
    return P


def solve_sinkhorn(tensor, measures, epsilon_schedule: Sequence[float] | None = None,
                   max_iter: int = 10000, tol: float = 1e-6, stage_tol: float = 1e-4
                   ) -> tuple[TransportPlan, DualPotentials, SolveReport]:
    """Log-domain multi-marginal Sinkhorn with epsilon scaling and rounding.

    ``max_iter`` bounds the sweeps of each stage; ``tol`` is the L1 marginal
    error required at the final epsilon, ``stage_tol`` at earlier ones.
    """
    C = _values(tensor)
    w = _weights(measures)
    m = C.ndim
    if C.size > SINKHORN_CAP:
        raise SizeCapError(f"tensor with {C.size} entries exceeds cap {SINKHORN_CAP}")
    eps_list = list(epsilon_schedule) if epsilon_schedule is not None else geometric_schedule()
    logw = [np.log(x) for x in w]
    u = [np.zeros(len(x)) for x in w]
    total_iter = 0
    err = math.inf

    def log_plan(eps):
        return (_broadcast_sum(u, m) - C) / eps + _broadcast_sum(logw, m)

    for s, eps in enumerate(eps_list):
        target = tol if s == len(eps_list) - 1 else stage_tol
        for it in range(max_iter):
            for i in range(m):
                axes = tuple(a for a in range(m) if a != i)
                Z = (_broadcast_sum(u, m, skip=i) - C) / eps + _broadcast_sum(logw, m, skip=i)
                u[i] = -eps * logsumexp(Z, axis=axes)
            total_iter += 1
            if it % 5 == 4 or it == max_iter - 1:
                L = log_plan(eps)
                err = max(float(np.sum(np.abs(np.exp(logsumexp(L, axis=tuple(a for a in range(m) if a != i)))
                                              - w[i]))) for i in range(m - 1))
                if err <= target:
                    break
        if s == len(eps_list) - 1 and err > tol:
            raise IterationLimit(f"Sinkhorn at eps={eps:g} stopped with marginal error {err:.3g} > {tol:g}")

    eps = eps_list[-1]
    P = np.exp(log_plan(eps))
    unrounded = P.sum()
    P = _round(P, w)
    plan = TransportPlan.from_dense(P, "sinkhorn_rounded")
    raw = DualPotentials([x.copy() for x in u], max(0.0, dense_residual(C, u)))
    entropic_dual = raw.value(w)
    # one c-transform makes the potentials feasible, hence a valid lower bound
    pots = c_conjugate(C, raw, m - 1)
    primal = plan.cost(C)
    dual = pots.value(w)
    report = SolveReport(
        primal_value=primal,
        dual_value=dual,
        gap=primal - dual,
        iterations=total_iter,
        method="sinkhorn_rounded",
        epsilon=eps,
        marginal_residuals=marginal_residuals(plan, w),
        support_size=len(plan),
        extra={"pre_rounding_marginal_error": err, "entropic_dual": entropic_dual,
               "pre_rounding_mass": float(unrounded), "epsilon_schedule": eps_list},
    )
    return plan, pots, report
