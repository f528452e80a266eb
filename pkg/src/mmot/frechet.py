"""Fréchet (Karcher) means for sums of convex functions of geodesic distance.

The objective is ``y -> sum_i w_i f_i(d(x_i, y))`` where each ``f_i`` is one of
the profiles in :class:`DistanceFunction`. :func:`solve` runs multi-start
Riemannian gradient descent with Armijo backtracking and reports every global
minimizer it finds, so non-unique means (two antipodal points on the sphere,
say) show up as ``unique=False`` rather than as an error.

:func:`solve_many` is the batched workhorse: it stacks every start of every
problem into one array and runs all descents in lock-step, which is what makes
building cost tensors with thousands of entries cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import manifold as mf
from .errors import ConvergenceError, CutLocusError
from .manifold import ManifoldSpec

PROFILES = ("half_square", "power", "cosh_minus_one")


@dataclass(frozen=True)
class DistanceFunction:
    """Distance profile f: C^2 on [0, inf), increasing and convex, with ``f(0) = f'(0) = 0``."""

    f: str = "half_square"
    p: float | None = None

    def __post_init__(self):
        if self.f not in PROFILES:
            raise ValueError(f"unknown distance function {self.f!r}")
        if self.f == "power":
            if self.p is None or not float(self.p) > 2.0:
                raise ValueError("power(p) needs p > 2 (use half_square for p = 2)")
            object.__setattr__(self, "p", float(self.p))
        elif self.p is not None:
            raise ValueError(f"{self.f} takes no exponent")

    def value(self, d):
        d = np.asarray(d, dtype=float)
        if self.f == "half_square":
            return 0.5 * d * d
        if self.f == "power":
            return d**self.p / self.p
        return np.cosh(d) - 1.0

    def deriv(self, d):
        d = np.asarray(d, dtype=float)
        if self.f == "half_square":
            return d
        if self.f == "power":
            return d ** (self.p - 1.0)
        return np.sinh(d)

    def second(self, d):
        d = np.asarray(d, dtype=float)
        if self.f == "half_square":
            return np.ones_like(d)
        if self.f == "power":
            return (self.p - 1.0) * d ** (self.p - 2.0)
        return np.cosh(d)

    def deriv_over_d(self, d):
        """``f'(d) / d`` extended continuously to ``d = 0``."""
        d = np.asarray(d, dtype=float)
        if self.f == "half_square":
            return np.ones_like(d)
        if self.f == "power":
            return d ** (self.p - 2.0)
        small = d < 1e-4
        safe = np.where(small, 1.0, d)
        return np.where(small, 1.0 + d * d / 6.0, np.sinh(safe) / safe)

    def inverse_deriv(self, s):
        """Distance ``d >= 0`` with ``f'(d) = s``."""
        s = np.asarray(s, dtype=float)
        if self.f == "half_square":
            return s
        if self.f == "power":
            return s ** (1.0 / (self.p - 1.0))
        return np.arcsinh(s)

    def to_dict(self) -> dict:
        return {"f": self.f, "p": self.p} if self.f == "power" else {"f": self.f}

    @classmethod
    def from_dict(cls, data: dict) -> "DistanceFunction":
        return cls(data["f"], data.get("p"))

    def __str__(self):
        return f"power({self.p:g})" if self.f == "power" else self.f


HALF_SQUARE = DistanceFunction("half_square")


@dataclass(frozen=True)
class CostFamily:
    """One distance function per marginal."""

    fs: tuple[DistanceFunction, ...]

    def __post_init__(self):
        fs = tuple(f if isinstance(f, DistanceFunction) else DistanceFunction.from_dict(f) for f in self.fs)
        if not fs:
            raise ValueError("empty cost family")
        object.__setattr__(self, "fs", fs)

    @classmethod
    def uniform(cls, m: int, f: DistanceFunction | str = HALF_SQUARE, p: float | None = None) -> "CostFamily":
        if isinstance(f, str):
            f = DistanceFunction(f, p)
        return cls((f,) * m)

    def __len__(self):
        return len(self.fs)

    def __getitem__(self, i):
        return self.fs[i]

    def __iter__(self):
        return iter(self.fs)

    @property
    def is_half_square(self) -> bool:
        return all(f.f == "half_square" for f in self.fs)

    def to_list(self) -> list[dict]:
        return [f.to_dict() for f in self.fs]

    @classmethod
    def from_json(cls, data, m: int) -> "CostFamily":
        """Accept a single ``{"f": ...}`` object (applied to all marginals) or a list."""
        if isinstance(data, dict):
            return cls.uniform(m, DistanceFunction.from_dict(data))
        if len(data) != m:
            raise ValueError(f"cost list has {len(data)} entries for {m} marginals")
        return cls(tuple(DistanceFunction.from_dict(d) for d in data))

    def __str__(self):
        names = {str(f) for f in self.fs}
        return names.pop() if len(names) == 1 else "[" + ", ".join(str(f) for f in self.fs) + "]"


@dataclass
class KarcherProblem:
    spec: ManifoldSpec
    points: np.ndarray
    family: CostFamily | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.points = mf.check_point(self.spec, np.atleast_2d(np.asarray(self.points, dtype=float)))
        m = len(self.points)
        if self.family is None:
            self.family = CostFamily.uniform(m)
        if len(self.family) != m:
            raise ValueError(f"family has {len(self.family)} entries for {m} points")
        if self.weights is None:
            self.weights = np.ones(m)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (m,) or np.any(self.weights <= 0):
            raise ValueError("weights must be positive, one per point")

    @property
    def m(self) -> int:
        return len(self.points)


@dataclass
class KarcherOptions:
    starts: int = 8
    max_iter: int = 1000
    grad_tol: float = 1e-10
    value_tol: float = 1e-9
    cluster_tol: float = 1e-6
    seed: int = 0
    perturbation: float = 1e-4


@dataclass
class KarcherResult:
    minimizers: np.ndarray  # (k, D), lexicographically sorted
    values: np.ndarray  # objective at each minimizer
    value: float
    grad_norm: float
    unique: bool
    min_cut_margin: float
    iterations: int
    best_index: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def best(self) -> np.ndarray:
        return self.minimizers[self.best_index]

    def to_dict(self) -> dict:
        return {
            "minimizers": self.minimizers.tolist(),
            "values": self.values.tolist(),
            "value": self.value,
            "grad_norm": self.grad_norm,
            "unique": self.unique,
            "min_cut_margin": self.min_cut_margin,
            "iterations": self.iterations,
            "best_index": self.best_index,
        }


def _terms(family: CostFamily, d: np.ndarray, method: str) -> np.ndarray:
    """Apply ``f_i.<method>`` to column ``i`` of ``d`` (last axis indexes marginals)."""
    out = np.empty_like(d)
    for i, f in enumerate(family):
        out[..., i] = getattr(f, method)(d[..., i])
    return out


def _objective(spec, family, weights, X, Y):
    # X: (..., m, D), Y: (..., D)
    d = mf.distance(spec, X, Y[..., None, :])
    return np.sum(weights * _terms(family, np.asarray(d), "value"), axis=-1)


def _gradient(spec, family, weights, X, Y):
    """Gradient at ``Y`` plus a mask of rows where some ``x_i`` is cut."""
    Yb = np.broadcast_to(Y[..., None, :], X.shape)
    V, cut = mf.log_map_masked(spec, Yb, X)
    d = mf.norm(spec, V)
    coef = weights * _terms(family, np.asarray(d), "deriv_over_d")
    g = -np.sum(coef[..., None] * V, axis=-2)
    return g, np.any(cut, axis=-1)


def objective(prob: KarcherProblem, y) -> np.ndarray | float:
    """``sum_i w_i f_i(d(x_i, y))``; broadcasts over leading axes of ``y``."""
    r = _objective(prob.spec, prob.family, prob.weights, prob.points, np.asarray(y, dtype=float))
    return r if np.ndim(r) else float(r)


def gradient(prob: KarcherProblem, y) -> np.ndarray:
    """Riemannian gradient of :func:`objective` at ``y``.

    Each term contributes ``-(f_i'(d) / d) * log_y(x_i)``. Raises
    :class:`CutLocusError` when ``y`` is on the cut locus of some ``x_i``.
    """
    y = np.asarray(y, dtype=float)
    g, cut = _gradient(prob.spec, prob.family, prob.weights, prob.points, y)
    if np.any(cut):
        raise CutLocusError("gradient undefined: y is on the cut locus of a data point")
    return g


def _max_step(spec: ManifoldSpec) -> float:
    if spec.kind == "sphere":
        return 0.5 * math.pi
    if spec.kind == "torus":
        return 0.25 * float(np.min(spec.periods))
    return math.inf


def extrinsic_mean(spec: ManifoldSpec, points: np.ndarray, weights: np.ndarray) -> np.ndarray | None:
    """Cheap ambient-average start; ``None`` when it is undefined."""
    w = weights / weights.sum()
    if spec.kind == "euclidean":
        return w @ points
    if spec.kind == "sphere":
        s = w @ points
        n = np.linalg.norm(s)
        return s / n if n > 1e-6 else None
    ang = 2 * np.pi * points / spec.periods
    c, s = w @ np.cos(ang), w @ np.sin(ang)
    if np.any(np.hypot(c, s) < 1e-6):
        return None
    return mf.project(spec, np.arctan2(s, c) * spec.periods / (2 * np.pi))


def _descend(spec, family, weights, X, Y, pert, opts: KarcherOptions):
    """Lock-step gradient descent on a batch.

    ``X``: (B, m, D) data, ``Y``: (B, D) starts, ``pert``: (B, A, D) ambient
    directions used to nudge starts that land on a cut locus.
    """
    B = len(Y)
    m = X.shape[1]
    Y = Y.copy()
    t = np.full(B, 1.0 / m)
    t_max = 1e8 / m
    max_step = _max_step(spec)
    step_tol = 1e-2 * opts.cluster_tol
    eps = np.finfo(float).eps

    f = _objective(spec, family, weights, X, Y)
    g, cut = _gradient(spec, family, weights, X, Y)
    # nudge cut-locus starts off the cut locus
    for a in range(pert.shape[1]):
        if not np.any(cut):
            break
        idx = np.nonzero(cut)[0]
        v = mf.to_tangent(spec, Y[idx], pert[idx, a])
        v *= (opts.perturbation / np.linalg.norm(v, axis=-1))[:, None]
        Y[idx] = mf.exp_map(spec, Y[idx], v)
        f[idx] = _objective(spec, family, weights, X[idx], Y[idx])
        g[idx], cut[idx] = _gradient(spec, family, weights, X[idx], Y[idx])

    gn = np.linalg.norm(g, axis=-1)
    active = ~cut
    converged = np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=int)

    for it in range(opts.max_iter + 1):
        done = active & (gn <= opts.grad_tol) & (np.minimum(t * gn, max_step) <= step_tol)
        converged |= done
        active &= ~done
        if it == opts.max_iter or not np.any(active):
            break
        idx = np.nonzero(active)[0]
        pending = np.ones(len(idx), dtype=bool)
        Ynew = Y[idx].copy()
        fnew = f[idx].copy()
        snew = np.zeros_like(Ynew)
        tt = t[idx].copy()
        for _ in range(80):
            sub = np.nonzero(pending)[0]
            if len(sub) == 0:
                break
            j = idx[sub]
            s = -tt[sub, None] * g[j]
            sn = np.linalg.norm(s, axis=-1)
            scale = np.where(sn > max_step, max_step / np.where(sn > 0, sn, 1.0), 1.0)
            s *= scale[:, None]
            Yt = mf.exp_map(spec, Y[j], s)
            ft = _objective(spec, family, weights, X[j], Yt)
            decrease = 1e-4 * gn[j] * sn * scale
            slack = 8 * m * eps * np.abs(f[j])
            quiet = decrease <= slack
            ok = ~quiet & (ft <= f[j] - decrease)
            # below rounding noise the objective cannot rank steps; use |grad| instead
            noisy = np.nonzero(quiet & (ft <= f[j] + slack))[0]
            if len(noisy):
                gt, ct = _gradient(spec, family, weights, X[j[noisy]], Yt[noisy])
                ok[noisy] = ~ct & (np.linalg.norm(gt, axis=-1) < gn[j[noisy]])
            acc = sub[ok]
            Ynew[acc] = Yt[ok]
            fnew[acc] = ft[ok]
            snew[acc] = s[ok]
            pending[acc] = False
            tt[sub[~ok]] *= 0.5
        # rows that could not decrease at all have stalled
        stalled = idx[pending]
        active[stalled] = False
        moved = idx[~pending]
        Y[moved] = Ynew[~pending]
        f[moved] = fnew[~pending]
        iters[moved] += 1
        g_old = g[moved]
        g[moved], cut[moved] = _gradient(spec, family, weights, X[moved], Y[moved])
        gn[moved] = np.linalg.norm(g[moved], axis=-1)
        # Barzilai-Borwein step; tangent projection stands in for vector transport
        sv = mf.to_tangent(spec, Y[moved], snew[~pending])
        yv = g[moved] - mf.to_tangent(spec, Y[moved], g_old)
        sy = np.sum(sv * yv, axis=-1)
        ss = np.sum(sv * sv, axis=-1)
        bb = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), 2.0 * tt[~pending])
        t[moved] = np.clip(bb, 1e-12, t_max)
        # a descent path that lands exactly on a cut locus is dropped
        active[moved[cut[moved]]] = False
        # stalled rows already inside tolerance still count
        converged[stalled] |= gn[stalled] <= opts.grad_tol

    return Y, f, gn, converged & ~cut, iters


def _starts(spec, X, weights, random_starts):
    m = X.shape[-2]
    rows = [X[k] for k in range(m)]
    em = extrinsic_mean(spec, X, weights)
    rows.append(em if em is not None else X[0])
    rows.extend(random_starts)
    return np.array(rows)


def _cluster(spec, Y, f, gn, ok, X, family, weights, opts) -> KarcherResult | None:
    if not np.any(ok):
        return None
    Yc, fc, gc = Y[ok], f[ok], gn[ok]
    best = fc.min()
    keep = fc <= best + opts.value_tol
    Yc, fc, gc = Yc[keep], fc[keep], gc[keep]
    order = np.lexsort(Yc.T[::-1])
    leaders: list[int] = []
    reps: list[int] = []
    for k in order:
        if leaders:
            d = mf.distance(spec, Yc[leaders], Yc[k])
            j = int(np.argmin(d))
            if d[j] <= opts.cluster_tol:
                # each cluster is represented by its lowest-value member
                if fc[k] < fc[reps[j]]:
                    reps[j] = k
                continue
        leaders.append(k)
        reps.append(k)
    reps = [reps[j] for j in np.lexsort(Yc[reps].T[::-1])]
    mins = Yc[reps]
    vals = fc[reps]
    b = int(np.argmin(vals))
    margin = float(np.min(mf.cut_locus_margin(spec, X[None, :, :], mins[:, None, :])))
    return KarcherResult(
        minimizers=mins,
        values=vals,
        value=float(vals[b]),
        grad_norm=float(gc[reps][b]),
        unique=len(reps) == 1,
        min_cut_margin=margin,
        iterations=0,
        best_index=b,
    )


def solve_many(spec: ManifoldSpec, family: CostFamily, tuples: np.ndarray,
               options: KarcherOptions | None = None, weights=None) -> list[KarcherResult]:
    """Solve many Karcher problems sharing ``spec``, ``family`` and ``weights``.

    ``tuples`` has shape ``(T, m, D)``. Every problem gets the same start
    schedule (its own data points, an ambient-average start, then
    ``options.starts`` seeded random points), so a problem's result does not
    depend on which batch it was solved in.
    """
    opts = options or KarcherOptions()
    tuples = np.asarray(tuples, dtype=float)
    T, m, D = tuples.shape
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    rng = np.random.default_rng(opts.seed)
    rnd = mf.random_point(spec, rng, size=opts.starts) if opts.starts else np.empty((0, D))
    if spec.kind == "euclidean" and opts.starts:
        # random starts inside each problem's bounding box
        u = rng.random((opts.starts, D))
    pert_dirs = rng.standard_normal((m + 1 + opts.starts, 8, D))

    S = m + 1 + opts.starts
    starts = np.empty((T, S, D))
    for k in range(T):
        r = rnd
        if spec.kind == "euclidean" and opts.starts:
            lo, hi = tuples[k].min(axis=0), tuples[k].max(axis=0)
            r = lo + u * (hi - lo)
        starts[k] = _starts(spec, tuples[k], w, r)
    Xb = np.repeat(tuples, S, axis=0)
    Y, f, gn, ok, iters = _descend(spec, family, w, Xb, starts.reshape(T * S, D),
                                   np.tile(pert_dirs, (T, 1, 1)), opts)
    Y, f, gn, ok, iters = (a.reshape(T, S, *a.shape[1:]) for a in (Y, f, gn, ok, iters))

    out = []
    for k in range(T):
        res = _cluster(spec, Y[k], f[k], gn[k], ok[k], tuples[k], family, w, opts)
        if res is None:
            raise ConvergenceError(
                f"no start reached grad_tol={opts.grad_tol:g} within {opts.max_iter} iterations"
            )
        res.iterations = int(iters[k].max())
        out.append(res)
    return out


def solve(prob: KarcherProblem, options: KarcherOptions | None = None) -> KarcherResult:
    """Global minimizer(s) of the Fréchet objective by multi-start descent."""
    return solve_many(prob.spec, prob.family, prob.points[None], options, prob.weights)[0]


def grid(spec: ManifoldSpec, resolution: int, points: np.ndarray | None = None) -> np.ndarray:
    """Deterministic search grid for ``dim <= 2``.

    Sphere: Fibonacci lattice (S^2) or equally spaced angles (S^1) with
    ``resolution`` points in total. Torus: ``resolution`` points per axis.
    Euclidean: ``resolution`` points per axis over the bounding box of
    ``points`` (a Fréchet mean of convex profiles lies in the convex hull).
    """
    if spec.dim > 2:
        raise ValueError("grid search supports dim <= 2 only")
    if spec.kind == "sphere":
        if spec.dim == 1:
            a = 2 * np.pi * np.arange(resolution) / resolution
            return np.column_stack([np.cos(a), np.sin(a)])
        k = np.arange(resolution) + 0.5
        z = 1.0 - 2.0 * k / resolution
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = np.pi * (3.0 - np.sqrt(5.0)) * k
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    if spec.kind == "torus":
        axes = [p * np.arange(resolution) / resolution for p in spec.periods]
    else:
        if points is None:
            raise ValueError("euclidean grid needs the data points for its box")
        lo, hi = points.min(axis=0), points.max(axis=0)
        axes = [np.linspace(a, b, resolution) if b > a else np.array([a]) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


def brute_force(prob: KarcherProblem, grid_resolution: int, tie_tol: float = 1e-12) -> KarcherResult:
    """Exhaustive evaluation of the objective on :func:`grid`."""
    G = grid(prob.spec, grid_resolution, prob.points)
    vals = np.concatenate([
        objective(prob, G[s:s + 65536]) for s in range(0, len(G), 65536)
    ])
    best = vals.min()
    hits = np.nonzero(vals <= best + tie_tol)[0]
    mins = G[hits]
    b = int(np.argmin(vals[hits]))
    try:
        gnorm = float(np.linalg.norm(gradient(prob, mins[b])))
    except CutLocusError:
        gnorm = math.nan
    margin = float(np.min(mf.cut_locus_margin(prob.spec, prob.points[None], mins[:, None, :])))
    return KarcherResult(
        minimizers=mins,
        values=vals[hits],
        value=float(vals[hits][b]),
        grad_norm=gnorm,
        unique=len(hits) == 1,
        min_cut_margin=margin,
        iterations=len(G),
        best_index=b,
    )


def problem(spec: ManifoldSpec, points: Sequence, family: CostFamily | str | None = None,
            weights=None) -> KarcherProblem:
    """Convenience constructor accepting a profile name for ``family``."""
    pts = np.asarray(points, dtype=float)
    if isinstance(family, str):
        family = CostFamily.uniform(len(pts), family)
    return KarcherProblem(spec, pts, family, weights)
