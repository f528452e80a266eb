import numpy as np
import pytest
from scipy.optimize import linprog

from mmot import manifold as mf
from mmot import oracle
from mmot import solver as sv
from mmot.frechet import CostFamily
from mmot.simplex import solve_lp
from mmot.solver import DiscreteMeasure, DualPotentials, TransportPlan


def test_measure_validation():
    s2 = mf.sphere(2)
    with pytest.raises(ValueError):
        DiscreteMeasure(s2, [[0, 0, 1], [0, 1, 0]], [0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteMeasure(s2, [[0, 0, 1], [0, 0, 1]], [0.5, 0.5])
    with pytest.raises(ValueError):
        DiscreteMeasure(s2, [[0, 0, 1], [0, 1, 0]], [1.0, 0.0])
    mu = DiscreteMeasure.uniform(s2, [[0, 0, 1], [0, 1, 0]])
    assert DiscreteMeasure.from_dict(mu.to_dict()).weights.tolist() == [0.5, 0.5]


@pytest.mark.parametrize("seed", range(8))
def test_simplex_matches_highs(seed):
    rng = np.random.default_rng(seed)
    shape = (3, 4, 2)
    C = rng.random(shape)
    w = [rng.dirichlet(np.ones(n)) for n in shape]
    A, b, _ = sv._constraints(shape, w)
    lp = solve_lp(A, b, C.ravel())
    ref = linprog(C.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    assert abs(lp.objective - ref.fun) <= 1e-12
    assert abs(lp.duals @ b - lp.objective) <= 1e-12


def test_simplex_drops_redundant_rows():
    A = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [0.0, 1.0, 1.0]])
    lp = solve_lp(A, np.array([1.0, 2.0, 1.0]), np.array([1.0, 2.0, 0.5]))
    assert lp.objective == pytest.approx(1.5)


def test_dirac_exact():
    s2 = mf.sphere(2)
    ms = [DiscreteMeasure.dirac(s2, p) for p in mf.random_point(s2, 3, size=3)]
    from mmot.cost import build_tensor

    t = build_tensor(s2, CostFamily.uniform(3), ms)
    plan, pots, rep = sv.solve_exact(t, ms)
    assert plan.entries == [((0, 0, 0), 1.0)]
    assert rep.primal_value == t.values[0, 0, 0]
    pots = sv.conjugate_sweep(t, pots)
    assert sv.support_equality_check(plan, t, pots) == 0.0


def test_two_marginal_example():
    e = mf.euclidean(2)
    mu = DiscreteMeasure.uniform(e, [[0, 0], [1, 0]])
    nu = DiscreteMeasure.uniform(e, [[0.1, 0], [0.9, 0]])
    from mmot.cost import build_tensor

    t = build_tensor(e, CostFamily.uniform(2), [mu, nu])
    plan, _, rep = sv.solve_exact(t, [mu, nu])
    assert sorted(plan.entries) == [((0, 0), 0.5), ((1, 1), 0.5)]
    # each matched pair costs 1/4 * 0.1^2; summed without masses that is 0.005
    assert sum(t.values[k] for k, _ in plan.entries) == pytest.approx(0.005, abs=1e-15)
    assert rep.primal_value == pytest.approx(0.0025, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_exact_matches_vertex_enumeration_2x2x2(seed, make_instance):
    measures, t = make_instance(mf.sphere(2), 3, 2, seed)
    _, _, rep = sv.solve_exact(t, measures)
    _, best = oracle.enumerate_assignments(t, measures)
    # uniform 2x2x2 vertices are the Monge assignments and their mixtures
    assert rep.primal_value <= best + 1e-12
    ref = linprog(t.values.ravel(), A_eq=sv._constraints(t.shape, [m.weights for m in measures])[0],
                  b_eq=sv._constraints(t.shape, [m.weights for m in measures])[1], method="highs")
    assert abs(rep.primal_value - ref.fun) <= 1e-12


@pytest.mark.parametrize("name,kind", [("S2", mf.sphere(2)), ("T2", mf.torus(2))])
def test_exact_certificates(name, kind, make_instance):
    for seed in range(5):
        measures, t = make_instance(kind, 3, (4, 5, 3), seed, weights="random")
        plan, pots, rep = sv.solve_exact(t, measures)
        assert abs(rep.gap) <= 1e-8 and rep.gap >= -1e-9
        assert max(rep.marginal_residuals) <= 1e-9
        assert len(plan) <= sum(t.shape) - 3 + 1
        assert oracle.exhaustive_dual_check(t, pots) <= 1e-9
        assert sv.support_equality_check(plan, t, pots) <= 1e-8
        assert sv.c_monotonicity_violation(plan, t) <= 1e-8
        assert abs(plan.mass.sum() - 1) <= 1e-9


def test_c_conjugate_properties(make_instance):
    measures, t = make_instance(mf.torus(1), 3, 4, 3)
    w = [m.weights for m in measures]
    zero = DualPotentials([np.zeros(n) for n in t.shape])
    one = sv.c_conjugate(t, zero, 1)
    assert np.allclose(one.u[1], t.values.min(axis=(0, 2)))
    twice = sv.c_conjugate(t, one, 1)
    assert np.array_equal(twice.u[1], one.u[1])
    rng = np.random.default_rng(0)
    for _ in range(50):
        u = DualPotentials([rng.normal(size=n) - 3 for n in t.shape])
        before = sv.conjugate_sweep(t, u)
        after = sv.conjugate_sweep(t, before)
        assert after.value(w) >= before.value(w) - 1e-12
        assert sv.dense_residual(t.values, before.u) <= 1e-12


def test_support_equality_detects_perturbation(make_instance):
    measures, t = make_instance(mf.sphere(2), 3, 3, 1)
    plan, pots, _ = sv.solve_exact(t, measures)
    bad = DualPotentials([u + 0.01 * (i == 0) for i, u in enumerate(pots.u)])
    assert sv.support_equality_check(plan, t, bad) > 1e-3
    assert oracle.exhaustive_dual_check(t, bad) > 1e-3


def test_permutation_equivariance(make_instance):
    measures, t = make_instance(mf.sphere(2), 3, 4, 6)
    plan, _, rep = sv.solve_exact(t, measures)
    perm = np.array([2, 0, 3, 1])
    m1 = DiscreteMeasure(measures[1].spec, measures[1].points[perm], measures[1].weights[perm])
    from mmot.cost import build_tensor

    t2 = build_tensor(t.spec, t.family, [measures[0], m1, measures[2]])
    assert np.array_equal(t2.values, t.values[:, perm, :])
    plan2, _, rep2 = sv.solve_exact(t2, [measures[0], m1, measures[2]])
    assert abs(rep2.primal_value - rep.primal_value) <= 1e-12
    inv = np.argsort(perm)
    relabeled = {(a, int(perm[b]), c): w for (a, b, c), w in plan2.entries}
    assert relabeled == pytest.approx(dict(plan.entries)) or rep.tie_columns > 0


def test_sinkhorn_convergence_and_rounding(make_instance):
    measures, t = make_instance(mf.sphere(2), 3, 5, 3)
    _, _, exact = sv.solve_exact(t, measures)
    diffs = []
    for eps in (1e-1, 1e-2, 1e-3):
        plan, pots, rep = sv.solve_sinkhorn(t, measures, sv.geometric_schedule(1.0, eps))
        assert plan.source == "sinkhorn_rounded"
        assert max(rep.marginal_residuals) <= 1e-9
        assert sv.dense_residual(t.values, pots.u) <= 1e-12
        assert rep.gap >= -1e-9
        d = rep.primal_value - exact.primal_value
        assert abs(d) <= 5 * eps * np.log(t.values.size)
        diffs.append(d)
    assert diffs[0] >= diffs[1] >= diffs[2] >= -1e-12


def test_sinkhorn_dirac():
    s2 = mf.sphere(2)
    ms = [DiscreteMeasure.dirac(s2, p) for p in mf.random_point(s2, 4, size=3)]
    from mmot.cost import build_tensor

    t = build_tensor(s2, CostFamily.uniform(3), ms)
    plan, _, rep = sv.solve_sinkhorn(t, ms, [0.5])
    assert plan.entries == [((0, 0, 0), 1.0)] and rep.primal_value == t.values[0, 0, 0]


def test_plan_serialization(tmp_path, make_instance):
    measures, t = make_instance(mf.torus(1), 3, 3, 0)
    plan, pots, rep = sv.solve_exact(t, measures)
    back = TransportPlan.from_dict(plan.to_dict())
    assert np.array_equal(back.index, plan.index) and np.array_equal(back.mass, plan.mass)
    assert DualPotentials.from_dict(pots.to_dict()).u[2].tolist() == pots.u[2].tolist()
    plan.to_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().startswith("i1,i2,i3,mass")
    assert set(rep.to_dict()) >= {"primal_value", "dual_value", "gap", "iterations", "marginal_residuals"}


def test_size_caps():
    from mmot.errors import SizeCapError

    with pytest.raises(SizeCapError):
        sv.solve_exact(np.zeros((50, 50, 50)), [np.full(50, 0.02)] * 3)
