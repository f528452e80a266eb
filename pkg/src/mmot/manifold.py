"""Closed-form geometry of the unit sphere, the flat torus and Euclidean space.

Points and tangent vectors are plain float arrays in canonical coordinates:

* sphere ``S^n`` (n in {1, 2}): unit vectors in ``R^(n+1)``; tangent vectors
  at ``x`` are ambient vectors orthogonal to ``x``;
* torus ``T^k``: coordinates in the fundamental domain ``[0, period)``;
  tangent vectors live in ``R^k``;
* euclidean ``R^k``: plain vectors.

Every function broadcasts over leading axes, so ``distance(spec, X, Y)`` with
``X`` of shape ``(a, 1, D)`` and ``Y`` of shape ``(b, D)`` returns an ``(a, b)``
array. The masked variants (``log_map_masked``) are what the batched solvers
use; the plain ``log_map`` raises on the cut locus.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CutLocusError

CUT_TOL = 1e-10
# finite stand-in for "no cut locus" so margins stay JSON-serializable
EUCLIDEAN_CUT_MARGIN = 1e12

KINDS = ("sphere", "torus", "euclidean")


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str
    dim: int
    period: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        if self.kind == "sphere":
            if self.dim not in (1, 2):
                raise ValueError("sphere supported for dim 1 and 2 only")
            if self.period is not None:
                raise ValueError("period only applies to the torus")
        elif self.dim > 4:
            raise ValueError(f"{self.kind} supported for dim <= 4")
        if self.kind == "torus":
            period = self.period
            if period is None:
                period = (1.0,) * self.dim
            elif np.isscalar(period):
                period = (float(period),) * self.dim
            period = tuple(float(p) for p in period)
            if len(period) != self.dim or min(period) <= 0:
                raise ValueError(f"bad torus period {self.period!r}")
            object.__setattr__(self, "period", period)
        elif self.kind == "euclidean" and self.period is not None:
            raise ValueError("period only applies to the torus")

    @property
    def ambient_dim(self) -> int:
        return self.dim + 1 if self.kind == "sphere" else self.dim

    @property
    def periods(self) -> np.ndarray:
        return np.asarray(self.period, dtype=float)

    @property
    def diameter(self) -> float:
        """Largest possible distance (inf for Euclidean space)."""
        if self.kind == "sphere":
            return math.pi
        if self.kind == "torus":
            return 0.5 * float(np.linalg.norm(self.periods))
        return math.inf

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": int(self.dim)}
        if self.kind == "torus":
            out["period"] = list(self.period)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ManifoldSpec":
        period = data.get("period")
        return cls(data["kind"], int(data["dim"]), tuple(period) if period is not None else None)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ManifoldSpec":
        return cls.from_dict(json.loads(text))


def sphere(dim: int = 2) -> ManifoldSpec:
    return ManifoldSpec("sphere", dim)


def torus(dim: int = 1, period: float | Sequence[float] = 1.0) -> ManifoldSpec:
    return ManifoldSpec("torus", dim, period if not np.isscalar(period) else (float(period),) * dim)


def euclidean(dim: int = 2) -> ManifoldSpec:
    return ManifoldSpec("euclidean", dim)


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v * v, axis=-1))


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


def _wrap(spec: ManifoldSpec, diff: np.ndarray) -> np.ndarray:
    """Representative of a torus displacement in [-period/2, period/2]."""
    p = spec.periods
    return diff - p * np.round(diff / p)


def _to_domain(spec: ManifoldSpec, x: np.ndarray) -> np.ndarray:
    p = spec.periods
    out = np.mod(x, p)
    # np.mod can return exactly p for tiny negative inputs
    return np.where(out >= p, 0.0, out)


def check_point(spec: ManifoldSpec, x) -> np.ndarray:
    """Validate ``x`` as a point on ``spec`` and return it as a float array."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (spec.ambient_dim,):
        raise ValueError(f"expected coordinates of length {spec.ambient_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite coordinates")
    if spec.kind == "sphere" and np.any(np.abs(_norm(x) - 1.0) > 1e-12):
        raise ValueError("sphere point must have unit norm")
    if spec.kind == "torus" and (np.any(x < 0) or np.any(x >= spec.periods)):
        raise ValueError("torus point outside the fundamental domain")
    return x


def project(spec: ManifoldSpec, x) -> np.ndarray:
    """Map ambient coordinates onto the manifold (normalize / wrap)."""
    x = np.asarray(x, dtype=float)
    if spec.kind == "sphere":
        return x / _norm(x)[..., None]
    if spec.kind == "torus":
        return _to_domain(spec, x)
    return x.copy()


def distance(spec: ManifoldSpec, x, y) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.kind == "sphere":
        # atan2 form stays accurate near 0 and near pi
        d = 2.0 * np.arctan2(_norm(x - y), _norm(x + y))
    elif spec.kind == "torus":
        d = _norm(_wrap(spec, y - x))
    else:
        d = _norm(y - x)
    return d if np.ndim(d) else float(d)


def exp_map(spec: ManifoldSpec, x, v) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if spec.kind == "sphere":
        t = _norm(v)[..., None]
        safe = np.where(t > 0, t, 1.0)
        y = np.cos(t) * x + np.where(t > 0, np.sin(t) / safe, 1.0) * v
        return y / _norm(y)[..., None]
    if spec.kind == "torus":
        return _to_domain(spec, x + v)
    return x + v


def log_map_masked(spec: ManifoldSpec, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Logarithm map plus a boolean mask marking pairs on the cut locus.

    Entries flagged in the mask carry an arbitrary (but finite) vector.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.kind == "sphere":
        theta = 2.0 * np.arctan2(_norm(x - y), _norm(x + y))
        diff = y - x
        w = diff - _dot(diff, x)[..., None] * x
        wn = _norm(w)
        scale = np.where(wn > 0, theta / np.where(wn > 0, wn, 1.0), 0.0)
        cut = (math.pi - theta) < CUT_TOL
        return w * scale[..., None], cut
    if spec.kind == "torus":
        d = _wrap(spec, y - x)
        cut = np.any(np.abs(np.abs(d) - 0.5 * spec.periods) < CUT_TOL, axis=-1)
        return d, cut
    v = y - x
    return v, np.zeros(v.shape[:-1], dtype=bool)


def log_map(spec: ManifoldSpec, x, y) -> np.ndarray:
    v, cut = log_map_masked(spec, x, y)
    if np.any(cut):
        raise CutLocusError("target lies on the cut locus of the base point")
    return v


def cut_locus_margin(spec: ManifoldSpec, x, y) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.kind == "sphere":
        m = math.pi - 2.0 * np.arctan2(_norm(x - y), _norm(x + y))
        m = np.maximum(m, 0.0)
    elif spec.kind == "torus":
        d = _wrap(spec, y - x)
        m = np.min(np.abs(0.5 * spec.periods - np.abs(d)), axis=-1)
    else:
        m = np.full(np.broadcast_shapes(x.shape, y.shape)[:-1], EUCLIDEAN_CUT_MARGIN)
    return m if np.ndim(m) else float(m)


def inner(spec: ManifoldSpec, u, v) -> np.ndarray | float:
    """Riemannian inner product of tangent vectors at a common base point."""
    r = _dot(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    return r if np.ndim(r) else float(r)


def norm(spec: ManifoldSpec, v) -> np.ndarray | float:
    r = _norm(np.asarray(v, dtype=float))
    return r if np.ndim(r) else float(r)


def to_tangent(spec: ManifoldSpec, x, v) -> np.ndarray:
    """Project an ambient vector onto the tangent space at ``x``."""
    v = np.asarray(v, dtype=float)
    if spec.kind == "sphere":
        x = np.asarray(x, dtype=float)
        return v - _dot(v, x)[..., None] * x
    return v.copy()


def tangent_basis(spec: ManifoldSpec, x) -> np.ndarray:
    """Orthonormal basis of the tangent space at a single point, shape ``(dim, D)``."""
    x = np.asarray(x, dtype=float)
    if spec.kind != "sphere":
        return np.eye(spec.dim)
    # complete x to an orthonormal frame; the trailing columns span x-perp
    q, _ = np.linalg.qr(np.column_stack([x, np.eye(spec.ambient_dim)]))
    return q[:, 1:spec.ambient_dim].T.copy()


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def random_point(spec: ManifoldSpec, seed=None, size: int | None = None, box: float = 1.0) -> np.ndarray:
    """Deterministic (per seed) random point(s).

    Sphere points are uniform for the surface measure, torus points uniform on
    the fundamental domain and Euclidean points uniform on ``[-box, box]^dim``.
    """
    rng = _rng(seed)
    shape = (spec.ambient_dim,) if size is None else (size, spec.ambient_dim)
    if spec.kind == "sphere":
        while True:
            g = rng.standard_normal(shape)
            n = _norm(g)
            if np.all(n > 1e-8):
                return g / n[..., None]
    if spec.kind == "torus":
        return _to_domain(spec, rng.random(shape) * spec.periods)
    return rng.uniform(-box, box, size=shape)


def random_tangent(spec: ManifoldSpec, x, length: float, seed=None) -> np.ndarray:
    """Random tangent vector(s) at ``x`` with the given norm."""
    rng = _rng(seed)
    x = np.asarray(x, dtype=float)
    while True:
        g = to_tangent(spec, x, rng.standard_normal(x.shape))
        n = _norm(g)
        if np.all(n > 1e-8):
            return g * (length / n)[..., None]


def antipode(spec: ManifoldSpec, x) -> np.ndarray:
    if spec.kind != "sphere":
        raise ValueError("antipode is defined on the sphere only")
    return -np.asarray(x, dtype=float)
