"""Structure checks run on a solved plan.

Everything here is read-only over solver output and returns plain-dict
reports (``{"check": ..., "passed": ..., "tolerance": ..., ...}``) so they can
be dumped to JSON as they are.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import manifold as mf
from .cost import CostTensor
from .frechet import CostFamily
from .solver import (DiscreteMeasure, DualPotentials, TransportPlan, conjugate_sweep,
                     marginal_residuals, solve_exact)


def _report(check: str, passed: bool, tolerance: float, **fields) -> dict:
    out = {"check": check, "passed": bool(passed), "tolerance": tolerance}
    for k, v in fields.items():
        out[k] = v.item() if isinstance(v, np.generic) else v
    return out


@dataclass
class MongeMapTable:
    # partners[k] lists (other indices, mass) pairs for first-marginal atom k
    partners: list[list[tuple[tuple[int, ...], float]]]
    graph_fraction: float
    maps: np.ndarray  # (m, n_1) partner index per marginal, -1 where not unique

    def to_dict(self) -> dict:
        return {
            "graph_fraction": self.graph_fraction,
            "maps": self.maps.tolist(),
            "partners": [[[list(t), w] for t, w in row] for row in self.partners],
        }


def extract_monge(plan: TransportPlan, measures: Sequence | None = None) -> MongeMapTable:
    """Group the plan's support by first index and read off maps where single-valued."""
    n1 = plan.shape[0]
    partners: list[list] = [[] for _ in range(n1)]
    for row, w in zip(plan.index, plan.mass):
        partners[int(row[0])].append((tuple(int(k) for k in row[1:]), float(w)))
    maps = np.full((plan.m, n1), -1, dtype=np.int64)
    graph_mass = 0.0
    for k, rows in enumerate(partners):
        if len(rows) == 1:
            graph_mass += rows[0][1]
            maps[0, k] = k
            maps[1:, k] = rows[0][0]
    total = float(plan.mass.sum())
    frac = graph_mass / total if total > 0 else 0.0
    return MongeMapTable(partners, min(1.0, frac), maps)


@dataclass
class BarycenterResult:
    nu: DiscreteMeasure
    gammas: list[TransportPlan]
    costs: list[float]  # sum over gamma_i of f_i(d(x_i, y)); 1/2 W_2^2 for half_square
    entry_nu: np.ndarray  # nu atom of each plan entry
    non_unique_entries: list[int] = field(default_factory=list)
    collisions: int = 0

    @property
    def objective(self) -> float:
        return float(sum(self.costs))

    def to_dict(self) -> dict:
        return {
            "nu": self.nu.to_dict(),
            "gammas": [g.to_dict() for g in self.gammas],
            "costs": list(self.costs),
            "objective": self.objective,
            "entry_nu": self.entry_nu.tolist(),
            "non_unique_entries": list(self.non_unique_entries),
            "collisions": self.collisions,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BarycenterResult":
        return cls(
            nu=DiscreteMeasure.from_dict(data["nu"]),
            gammas=[TransportPlan.from_dict(g) for g in data["gammas"]],
            costs=list(data["costs"]),
            entry_nu=np.asarray(data["entry_nu"], dtype=np.int64),
            non_unique_entries=list(data["non_unique_entries"]),
            collisions=int(data["collisions"]),
        )


def _pair_cost(spec, f, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.asarray(f.value(mf.distance(spec, x[:, None, :], y[None, :, :])))


def pushforward_barycenter(plan: TransportPlan, tensor: CostTensor, measures: Sequence[DiscreteMeasure],
                           merge_tol: float = 1e-6) -> BarycenterResult:
    """Push the plan through the tuple-wise Karcher mean.

    ``nu`` collects the cached minimizers (merged within ``merge_tol``) with the
    plan's masses; ``gammas[i]`` couples ``mu_i`` with ``nu`` through
    ``(x_i, ybar)``. Entries whose minimizer is not unique keep their stored
    representative and are listed in ``non_unique_entries``.
    """
    spec = tensor.spec
    reps: list[np.ndarray] = []
    weights: list[float] = []
    owners: list[tuple] = []
    entry_nu = np.empty(len(plan), dtype=np.int64)
    non_unique = []
    collisions = 0
    for e, (row, w) in enumerate(zip(plan.index, plan.mass)):
        key = tuple(int(k) for k in row)
        y = tensor.argmin_y[key]
        if not tensor.unique_flags[key]:
            non_unique.append(e)
        hit = -1
        if reps:
            d = mf.distance(spec, np.array(reps), y)
            j = int(np.argmin(d))
            if d[j] <= merge_tol:
                hit = j
        if hit < 0:
            reps.append(y)
            weights.append(float(w))
            owners.append(key)
            hit = len(reps) - 1
        else:
            weights[hit] += float(w)
            if owners[hit] != key:
                collisions += 1
        entry_nu[e] = hit
    nu = DiscreteMeasure(spec, np.array(reps), np.array(weights))

    gammas, costs = [], []
    for i, mu in enumerate(measures):
        dense = np.zeros((len(mu), len(nu)))
        np.add.at(dense, (plan.index[:, i], entry_nu), plan.mass)
        g = TransportPlan.from_dense(dense, "pushforward")
        gammas.append(g)
        costs.append(g.cost(_pair_cost(spec, tensor.family[i], mu.points, nu.points)))
    return BarycenterResult(nu, gammas, costs, entry_nu, non_unique, collisions)


def two_marginal_value(spec, f, mu: DiscreteMeasure, points: np.ndarray, weights: np.ndarray) -> float:
    """Exact optimal transport cost between ``mu`` and a weighted point set."""
    C = _pair_cost(spec, f, mu.points, points)
    _, _, rep = solve_exact(C, [mu.weights, weights])
    return rep.primal_value


def barycenter_functional(spec, family: CostFamily, measures, points, weights) -> float:
    """``sum_i OT_{f_i}(mu_i, nu)``; for half_square this is sum_i 1/2 W_2^2."""
    return float(sum(two_marginal_value(spec, f, mu, points, weights) for f, mu in zip(family, measures)))


def verify_barycenter_optimality(result: BarycenterResult, measures, primal_value: float,
                                 family: CostFamily, jitter_count: int = 10, jitter_scale: float = 1e-2,
                                 seed: int = 0, tol: float = 1e-7) -> dict:
    """Global identity ``B(nu) = MMOT value`` plus a local probe against jittered supports."""
    spec = result.nu.spec
    nu = result.nu
    b_nu = barycenter_functional(spec, family, measures, nu.points, nu.weights)
    identity_err = abs(b_nu - primal_value)
    rng = np.random.default_rng(seed)
    worst = -np.inf
    probes = []
    for _ in range(jitter_count):
        v = mf.random_tangent(spec, nu.points, jitter_scale, rng)
        moved = mf.exp_map(spec, nu.points, v)
        b_j = barycenter_functional(spec, family, measures, moved, nu.weights)
        probes.append(b_j)
        worst = max(worst, b_nu - b_j)
    worst = float(worst) if probes else 0.0
    return _report(
        "barycenter_optimality",
        identity_err <= tol and worst <= tol,
        tol,
        B_nu=b_nu,
        primal_value=primal_value,
        identity_error=identity_err,
        worst_jitter_improvement=worst,
        jitter_values=probes,
        jitter_scale=jitter_scale,
    )


def verify_two_marginal_optimality(result: BarycenterResult, measures, family: CostFamily,
                                   tol: float = 1e-7, marginal_tol: float = 1e-9) -> dict:
    """Each ``gamma_i`` must be an optimal coupling of ``(mu_i, nu)``."""
    spec = result.nu.spec
    rows = []
    ok = True
    for i, (g, mu, f) in enumerate(zip(result.gammas, measures, family)):
        C = _pair_cost(spec, f, mu.points, result.nu.points)
        own = g.cost(C)
        best = two_marginal_value(spec, f, mu, result.nu.points, result.nu.weights)
        marg = max(marginal_residuals(g, [mu.weights, result.nu.weights]))
        good = abs(own - best) <= tol and marg <= marginal_tol
        ok &= good
        rows.append({"i": i, "coupling_cost": own, "optimal_cost": best,
                     "difference": own - best, "marginal_residual": marg, "passed": good})
    worst = max((abs(r["difference"]) for r in rows), default=0.0)
    return _report("two_marginal_optimality", ok, tol, worst_difference=worst, per_marginal=rows)


def _partners(g: TransportPlan, atom: int, axis: int) -> set[int]:
    sel = g.index[:, axis] == atom
    return set(int(k) for k in g.index[sel, 1 - axis])


def verify_composition(table: MongeMapTable, result: BarycenterResult, tol: float = 1e-12) -> dict:
    """Check that every map factors as ``F_i = G_i o G_1^{-1}`` through the barycenter."""
    g1 = result.gammas[0]
    m = table.maps.shape[0]
    well_posed = passed = 0.0
    failures = []
    for k, rows in enumerate(table.partners):
        if len(rows) != 1:
            continue
        ys = _partners(g1, k, 0)
        if len(ys) != 1:
            continue
        mass = rows[0][1]
        well_posed += mass
        y = ys.pop()
        good = all(_partners(result.gammas[i], y, 1) == {int(table.maps[i, k])} for i in range(1, m))
        if good:
            passed += mass
        else:
            failures.append(k)
    frac = passed / well_posed if well_posed > 0 else 1.0
    return _report("composition", abs(1.0 - frac) <= tol and not failures, tol,
                   well_posed_mass=well_posed, passing_fraction=frac, failing_atoms=failures,
                   graph_fraction=table.graph_fraction)


def verify_potential_concavity(potentials: DualPotentials, measures, family: CostFamily,
                               tensor: CostTensor, plan: TransportPlan | None = None,
                               result: BarycenterResult | None = None, probes: int = 64,
                               seed: int = 0, tol: float = 1e-9, equality_tol: float = 1e-8) -> dict:
    """Two-marginal dual structure of c-conjugate potentials.

    With ``v_i(y) = -sum_{j != i} min_x [f_j(d(x, y)) - u_j(x)]``:

    * ``u_i(x) + v_i(y) <= f_i(d(x, y))`` on support x probe points;
    * ``u_i(x) + u_i^c(y) <= f_i(d(x, y))`` with ``u_i^c`` the explicit
      c-transform over the support of ``mu_i``;
    * equality ``u_i(x_i) + v_i(ybar) = f_i(d(x_i, ybar))`` on the plan's support.
    """
    spec = tensor.spec
    pots = conjugate_sweep(tensor, potentials)
    rng = np.random.default_rng(seed)
    Y = [mf.random_point(spec, rng, size=probes)]
    if result is not None:
        Y.append(result.nu.points)
    if plan is not None and len(plan):
        Y.append(tensor.argmin_y[tuple(plan.index.T)])
    Y = np.concatenate(Y)
    m = len(measures)
    # h[j][y] = min_x f_j(d(x, y)) - u_j(x)
    H = [np.min(_pair_cost(spec, f, mu.points, Y) - pots.u[j][:, None], axis=0)
         for j, (f, mu) in enumerate(zip(family, measures))]
    worst_v = worst_c = -np.inf
    for i, (f, mu) in enumerate(zip(family, measures)):
        v = -sum(H[j] for j in range(m) if j != i)
        F = _pair_cost(spec, f, mu.points, Y)
        worst_v = max(worst_v, float(np.max(pots.u[i][:, None] + v[None, :] - F)))
        uc = np.min(F - pots.u[i][:, None], axis=0)
        worst_c = max(worst_c, float(np.max(pots.u[i][:, None] + uc[None, :] - F)))
    worst_eq = 0.0
    if plan is not None and len(plan):
        ybar = tensor.argmin_y[tuple(plan.index.T)]
        for i, (f, mu) in enumerate(zip(family, measures)):
            Hs = [np.min(_pair_cost(spec, fj, muj.points, ybar) - pots.u[j][:, None], axis=0)
                  for j, (fj, muj) in enumerate(zip(family, measures)) if j != i]
            v = -np.sum(Hs, axis=0)
            xi = mu.points[plan.index[:, i]]
            lhs = pots.u[i][plan.index[:, i]] + v
            rhs = np.asarray(f.value(mf.distance(spec, xi, ybar)))
            worst_eq = max(worst_eq, float(np.max(np.abs(lhs - rhs))))
    passed = worst_v <= tol and worst_c <= tol and worst_eq <= equality_tol
    return _report("potential_concavity", passed, tol, worst_two_marginal_violation=worst_v,
                   worst_conjugate_violation=worst_c, worst_support_equality=worst_eq,
                   equality_tolerance=equality_tol, probe_points=int(len(Y)))


def uniqueness_rate(plan: TransportPlan, tensor: CostTensor) -> float:
    """Share of support tuples whose Karcher mean is unique."""
    if len(plan) == 0:
        return 1.0
    return float(np.mean(tensor.unique_flags[tuple(plan.index.T)]))


def injectivity_report(result: BarycenterResult, merge_tol: float = 1e-6) -> dict:
    return _report("injectivity", result.collisions == 0, merge_tol, collisions=result.collisions,
                   support_points=len(result.nu))
