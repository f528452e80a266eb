"""Brute-force references for the tests.

These deliberately re-derive geometry from scratch (arccos distances, plain
trigonometric exponential maps, explicit loops) instead of calling into the
modules they check. They are slow and meant to stay obviously correct.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapError
from .manifold import ManifoldSpec
from .solver import TransportPlan


@dataclass
class OracleConfig:
    grid_resolution: int = 2000
    fd_step: float = 1e-5
    enumeration_cap: int = 10**6

    def __post_init__(self):
        if self.grid_resolution < 10:
            raise ValueError("grid_resolution must be >= 10")
        if not 1e-8 <= self.fd_step <= 1e-3:
            raise ValueError("fd_step must lie in [1e-8, 1e-3]")


def geodesic_distance(spec: ManifoldSpec, x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.kind == "sphere":
        return math.acos(max(-1.0, min(1.0, float(np.dot(x, y)))))
    if spec.kind == "torus":
        total = 0.0
        for a, b, p in zip(x, y, spec.period):
            d = abs(a - b) % p
            total += min(d, p - d) ** 2
        return math.sqrt(total)
    return float(np.sqrt(np.sum((x - y) ** 2)))


def exponential(spec: ManifoldSpec, x, v) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if spec.kind == "sphere":
        t = float(np.sqrt(np.dot(v, v)))
        if t == 0.0:
            return x.copy()
        return math.cos(t) * x + math.sin(t) * v / t
    if spec.kind == "torus":
        return np.array([(a + b) % p for a, b, p in zip(x, v, spec.period)])
    return x + v


def orthonormal_tangents(spec: ManifoldSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if spec.kind != "sphere":
        return np.eye(len(x))
    # Gram-Schmidt on the coordinate axes against x
    basis = []
    for e in np.eye(len(x)):
        v = e - np.dot(e, x) * x
        for b in basis:
            v = v - np.dot(v, b) * b
        if np.linalg.norm(v) > 1e-6:
            basis.append(v / np.linalg.norm(v))
        if len(basis) == len(x) - 1:
            break
    return np.array(basis)


def fd_gradient(objective, spec: ManifoldSpec, point, fd_step: float = 1e-5) -> np.ndarray:
    """Central differences along an orthonormal tangent basis at ``point``."""
    grad = np.zeros_like(np.asarray(point, dtype=float))
    for e in orthonormal_tangents(spec, point):
        plus = objective(exponential(spec, point, fd_step * e))
        minus = objective(exponential(spec, point, -fd_step * e))
        grad = grad + (plus - minus) / (2 * fd_step) * e
    return grad


def grid_karcher(spec: ManifoldSpec, points, fs, resolution: int) -> tuple[float, np.ndarray]:
    """Minimum of ``sum_i f_i(d(x_i, y))`` over a uniform angle/box grid (dim <= 2).

    The sphere S^2 uses a latitude-longitude grid with ``resolution`` steps in
    longitude, so it shares nothing with the Fibonacci lattice used elsewhere.
    """
    points = np.asarray(points, dtype=float)
    if spec.kind == "sphere" and spec.dim == 2:
        theta = np.linspace(0, math.pi, resolution // 2 + 1)
        phi = np.linspace(0, 2 * math.pi, resolution, endpoint=False)
        T, P = np.meshgrid(theta, phi, indexing="ij")
        cand = np.column_stack([(np.sin(T) * np.cos(P)).ravel(), (np.sin(T) * np.sin(P)).ravel(),
                                np.cos(T).ravel()])
    elif spec.kind == "sphere":
        a = np.linspace(0, 2 * math.pi, resolution, endpoint=False)
        cand = np.column_stack([np.cos(a), np.sin(a)])
    else:
        if spec.kind == "torus":
            axes = [np.linspace(0, p, resolution, endpoint=False) for p in spec.period]
        else:
            axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(points.min(0), points.max(0))]
        mesh = np.meshgrid(*axes, indexing="ij")
        cand = np.column_stack([g.ravel() for g in mesh])
    best, arg = math.inf, None
    for y in cand:
        val = sum(float(f.value(geodesic_distance(spec, x, y))) for x, f in zip(points, fs))
        if val < best:
            best, arg = val, y
    return best, arg


def enumerate_assignments(tensor, measures, cap: int = 10**6) -> tuple[TransportPlan, float]:
    """Best Monge plan among all tuples of permutations.

    Needs uniform marginals of a common size ``n``; every Monge plan is then
    ``{(k, s_2(k), ..., s_m(k))}`` with mass ``1/n``. An LP optimum is never
    worse than the value returned here.
    """
    C = np.asarray(getattr(tensor, "values", tensor), dtype=float)
    m, n = C.ndim, C.shape[0]
    if any(s != n for s in C.shape):
        raise ValueError("assignment enumeration needs equal marginal sizes")
    for mu in measures:
        w = np.asarray(getattr(mu, "weights", mu))
        if not np.allclose(w, 1.0 / n, rtol=0, atol=1e-12):
            raise ValueError("assignment enumeration needs uniform marginals")
    count = math.factorial(n) ** (m - 1)
    if count > cap:
        raise CapError(f"{count} assignments exceed cap {cap}")
    perms = list(itertools.permutations(range(n)))
    rows = np.arange(n)
    best, best_sigma = math.inf, None
    for sigma in itertools.product(perms, repeat=m - 1):
        val = float(np.sum(C[(rows,) + tuple(np.array(s) for s in sigma)])) / n
        if val < best:
            best, best_sigma = val, sigma
    index = np.column_stack([rows] + [np.array(s) for s in best_sigma]).astype(np.int64)
    return TransportPlan(C.shape, index, np.full(n, 1.0 / n), "exact_lp"), best


def exhaustive_dual_check(tensor, u, cap: int = 10**6) -> float:
    """``max over all tuples of sum_i u_i[idx_i] - c[idx]`` by explicit enumeration."""
    C = np.asarray(getattr(tensor, "values", tensor), dtype=float)
    pots = getattr(u, "u", u)
    if C.size > cap:
        raise CapError(f"{C.size} tuples exceed cap {cap}")
    worst = -math.inf
    for idx in np.ndindex(*C.shape):
        s = sum(float(pots[i][k]) for i, k in enumerate(idx))
        worst = max(worst, s - float(C[idx]))
    return worst
