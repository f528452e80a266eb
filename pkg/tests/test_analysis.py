import numpy as np
import pytest

from mmot import analysis as an
from mmot import manifold as mf
from mmot import solver as sv
from mmot.cost import build_tensor
from mmot.frechet import CostFamily
from mmot.solver import DiscreteMeasure, TransportPlan


def solved(make_instance, spec, m, n, seed, family=None):
    measures, t = make_instance(spec, m, n, seed, family)
    plan, pots, rep = sv.solve_exact(t, measures)
    return measures, t, plan, pots, rep


def test_dirac_case():
    s2 = mf.sphere(2)
    ms = [DiscreteMeasure.dirac(s2, p) for p in mf.random_point(s2, 1, size=3)]
    t = build_tensor(s2, CostFamily.uniform(3), ms)
    plan, pots, rep = sv.solve_exact(t, ms)
    table = an.extract_monge(plan, ms)
    assert table.graph_fraction == 1.0
    res = an.pushforward_barycenter(plan, t, ms)
    assert len(res.nu) == 1 and np.allclose(res.nu.points[0], t.argmin_y[0, 0, 0])
    fam = t.family
    assert an.verify_barycenter_optimality(res, ms, rep.primal_value, fam)["passed"]
    assert an.verify_two_marginal_optimality(res, ms, fam)["passed"]
    assert an.verify_composition(table, res)["passed"]
    assert an.barycenter_functional(s2, fam, ms, res.nu.points, res.nu.weights) == pytest.approx(
        t.values[0, 0, 0], abs=1e-15)


def test_two_marginal_graph(make_instance):
    for seed in range(5):
        _, _, plan, _, _ = solved(make_instance, mf.sphere(2), 2, 2, seed)
        assert an.extract_monge(plan).graph_fraction == 1.0


def test_product_plan_has_no_graph():
    P = np.full((3, 2), 1 / 6)
    table = an.extract_monge(TransportPlan.from_dense(P, "exact_lp"))
    assert table.graph_fraction == 0.0
    assert np.all(table.maps == -1)


def test_line_identity_barycenter():
    e1 = mf.euclidean(1)
    mu = DiscreteMeasure.uniform(e1, [[0.0], [1.0]])
    t = build_tensor(e1, CostFamily.uniform(2), [mu, mu])
    plan, _, _ = sv.solve_exact(t, [mu, mu])
    assert sorted(plan.entries) == [((0, 0), 0.5), ((1, 1), 0.5)]
    res = an.pushforward_barycenter(plan, t, [mu, mu])
    assert sorted(res.nu.points.ravel().tolist()) == [0.0, 1.0]
    assert res.nu.weights.tolist() == [0.5, 0.5]


def test_mass_conservation(make_instance):
    for seed in range(50):
        measures, t, plan, _, _ = solved(make_instance, mf.torus(1), 3, 3, seed)
        res = an.pushforward_barycenter(plan, t, measures)
        assert abs(res.nu.weights.sum() - 1) <= 1e-9
        for g, mu in zip(res.gammas, measures):
            assert max(sv.marginal_residuals(g, [mu.weights, res.nu.weights])) <= 1e-9


def test_structure_checks_on_generic_instance(make_instance):
    measures, t, plan, pots, rep = solved(make_instance, mf.sphere(2), 3, 6, 1)
    table = an.extract_monge(plan)
    res = an.pushforward_barycenter(plan, t, measures)
    fam = t.family
    assert table.graph_fraction == 1.0
    b = an.verify_barycenter_optimality(res, measures, rep.primal_value, fam)
    assert b["passed"] and b["identity_error"] <= 1e-7
    assert an.verify_two_marginal_optimality(res, measures, fam)["passed"]
    comp = an.verify_composition(table, res)
    assert comp["passed"] and comp["passing_fraction"] == 1.0
    assert an.verify_potential_concavity(pots, measures, fam, t, plan, res)["passed"]
    assert an.injectivity_report(res)["passed"]
    assert an.uniqueness_rate(plan, t) == 1.0


def test_corrupted_gamma_detected(make_instance):
    measures, t, plan, _, _ = solved(make_instance, mf.sphere(2), 3, 5, 2)
    res = an.pushforward_barycenter(plan, t, measures)
    g = res.gammas[1]
    idx = g.index.copy()
    idx[[0, 1], 1] = idx[[1, 0], 1]  # swap the nu partners of two entries
    res.gammas[1] = TransportPlan(g.shape, idx, g.mass.copy(), g.source)
    rep = an.verify_two_marginal_optimality(res, measures, t.family)
    assert not rep["passed"]


def test_corrupted_table_detected(make_instance):
    measures, t, plan, _, _ = solved(make_instance, mf.sphere(2), 3, 5, 3)
    table = an.extract_monge(plan)
    res = an.pushforward_barycenter(plan, t, measures)
    table.maps[1] = np.roll(table.maps[1], 1)
    assert not an.verify_composition(table, res)["passed"]


def test_uniqueness_rate_many_instances(make_instance):
    seen = unique = 0
    for seed in range(50):
        _, t, plan, _, _ = solved(make_instance, mf.sphere(2), 3, 4, 100 + seed)
        seen += len(plan)
        unique += int(np.sum(t.unique_flags[tuple(plan.index.T)]))
    assert unique / seen >= 0.99


def test_report_serializes(make_instance):
    import json

    measures, t, plan, pots, rep = solved(make_instance, mf.torus(2), 3, 3, 0)
    res = an.pushforward_barycenter(plan, t, measures)
    json.dumps(an.verify_barycenter_optimality(res, measures, rep.primal_value, t.family))
    back = an.BarycenterResult.from_dict(json.loads(json.dumps(res.to_dict())))
    assert back.objective == pytest.approx(res.objective)
