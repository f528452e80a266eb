"""The barycenter cost ``c(x_1..x_m) = min_y sum_i f_i(d(x_i, y))`` and dense tensors of it."""

from __future__ import annotations

import csv
import itertools
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import frechet as fr
from . import manifold as mf
from .errors import NonUniqueError, SizeCapError
from .frechet import CostFamily, KarcherOptions
from .manifold import ManifoldSpec

DEFAULT_CAP = 10**6
TENSOR_MAGIC = b"MMOTCT1\0"


@dataclass
class CostTensor:
    spec: ManifoldSpec
    family: CostFamily
    values: np.ndarray  # shape (n_1, ..., n_m)
    argmin_y: np.ndarray  # shape (n_1, ..., n_m, D)
    unique_flags: np.ndarray  # shape (n_1, ..., n_m), bool

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def m(self) -> int:
        return self.values.ndim

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "family": self.family.to_list(),
            "shape": list(self.shape),
            "values": self.values.ravel().tolist(),
            "argmin_y": self.argmin_y.reshape(-1, self.argmin_y.shape[-1]).tolist(),
            "unique_flags": self.unique_flags.ravel().astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CostTensor":
        shape = tuple(data["shape"])
        spec = ManifoldSpec.from_dict(data["spec"])
        return cls(
            spec=spec,
            family=CostFamily(tuple(data["family"])),
            values=np.asarray(data["values"], dtype=float).reshape(shape),
            argmin_y=np.asarray(data["argmin_y"], dtype=float).reshape(shape + (spec.ambient_dim,)),
            unique_flags=np.asarray(data["unique_flags"], dtype=bool).reshape(shape),
        )

    def summary(self) -> dict:
        return {
            "shape": list(self.shape),
            "entries": int(self.values.size),
            "min": float(self.values.min()),
            "max": float(self.values.max()),
            "non_unique_entries": int((~self.unique_flags).sum()),
            "family": str(self.family),
        }


def evaluate(spec: ManifoldSpec, family: CostFamily, tuple_points: Sequence,
             options: KarcherOptions | None = None) -> tuple[float, np.ndarray, bool]:
    """Cost of one tuple: ``(value, ybar, unique)``.

    ``ybar`` is the lexicographically smallest global minimizer found.
    """
    X = np.asarray(tuple_points, dtype=float)
    if len(X) < 2:
        raise ValueError("the multi-marginal cost needs m >= 2 points")
    mf.check_point(spec, X)
    res = fr.solve_many(spec, family, X[None], options)[0]
    return res.value, res.minimizers[0].copy(), res.unique


def build_tensor(spec: ManifoldSpec, family: CostFamily, measures: Sequence,
                 options: KarcherOptions | None = None, cap: int = DEFAULT_CAP,
                 chunk: int = 4096) -> CostTensor:
    """Evaluate the cost on every support tuple of ``measures``.

    Entries are solved in index order, in fixed-size chunks; each entry's
    result depends only on its own tuple and ``options.seed``.
    """
    supports = [np.asarray(getattr(mu, "points", mu), dtype=float) for mu in measures]
    if len(supports) < 2:
        raise ValueError("need at least two marginals")
    if len(family) != len(supports):
        raise ValueError("cost family length must match the number of marginals")
    shape = tuple(len(s) for s in supports)
    total = int(np.prod(shape))
    if total > cap:
        raise SizeCapError(f"tensor with {total} entries exceeds cap {cap}")
    D = spec.ambient_dim
    values = np.empty(total)
    argmin = np.empty((total, D))
    flags = np.empty(total, dtype=bool)
    grids = np.indices(shape).reshape(len(shape), -1).T
    for start in range(0, total, chunk):
        idx = grids[start:start + chunk]
        X = np.stack([supports[i][idx[:, i]] for i in range(len(shape))], axis=1)
        for k, res in enumerate(fr.solve_many(spec, family, X, options)):
            values[start + k] = res.value
            argmin[start + k] = res.minimizers[0]
            flags[start + k] = res.unique
    return CostTensor(spec, family, values.reshape(shape), argmin.reshape(shape + (D,)),
                      flags.reshape(shape))


def grad_x1(spec: ManifoldSpec, family: CostFamily, tuple_points: Sequence, ybar,
            unique: bool = True) -> np.ndarray:
    """Gradient of the cost in its first argument, by the envelope theorem.

    Equals ``-(f_1'(d) / d) * log_{x_1}(ybar)`` with ``d = d(x_1, ybar)``, so for
    ``half_square`` the minimizer is recovered as ``exp_{x_1}(-grad)``.
    """
    if not unique:
        raise NonUniqueError("cost is not differentiable in x_1 at a non-unique Karcher mean")
    x1 = np.asarray(tuple_points, dtype=float)[0]
    v = mf.log_map(spec, x1, ybar)
    d = mf.norm(spec, v)
    return -float(family[0].deriv_over_d(d)) * v


def reconstruct_ybar(spec: ManifoldSpec, f: fr.DistanceFunction, x1, grad) -> np.ndarray:
    """Invert :func:`grad_x1`: the point ``exp_{x_1}(-(d / |grad|) grad)`` with ``f'(d) = |grad|``."""
    grad = np.asarray(grad, dtype=float)
    gn = mf.norm(spec, grad)
    if gn == 0:
        return np.asarray(x1, dtype=float).copy()
    d = float(f.inverse_deriv(gn))
    return mf.exp_map(spec, x1, -(d / gn) * grad)


def lipschitz_bound(spec: ManifoldSpec, family: CostFamily, diameter: float | None = None,
                    weights=None) -> float:
    """``max_i w_i f_i'(diam)``, a Lipschitz constant of the cost in each argument."""
    diam = spec.diameter if diameter is None else diameter
    w = np.ones(len(family)) if weights is None else np.asarray(weights)
    return float(max(wi * f.deriv(diam) for wi, f in zip(w, family)))


def export_binary(tensor: CostTensor, path: str | Path) -> None:
    """Row-major little-endian float64 values behind a small header.

    Layout: 8-byte magic ``MMOTCT1\\0``, uint32 ``m``, ``m`` uint64 sizes, then
    the values.
    """
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", tensor.m))
        fh.write(struct.pack(f"<{tensor.m}Q", *tensor.shape))
        fh.write(np.ascontiguousarray(tensor.values, dtype="<f8").tobytes())


def read_binary(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != TENSOR_MAGIC:
        raise ValueError(f"{path}: not a cost tensor dump")
    (m,) = struct.unpack_from("<I", raw, 8)
    shape = struct.unpack_from(f"<{m}Q", raw, 12)
    return np.frombuffer(raw, dtype="<f8", offset=12 + 8 * m).reshape(shape).copy()


def export_csv(tensor: CostTensor, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"i{k + 1}" for k in range(tensor.m)] + ["value", "unique"])
        for idx in itertools.product(*(range(n) for n in tensor.shape)):
            w.writerow(list(idx) + [repr(float(tensor.values[idx])), int(tensor.unique_flags[idx])])
