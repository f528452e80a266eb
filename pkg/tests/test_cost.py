import numpy as np
import pytest

from mmot import cost as ct
from mmot import frechet as fr
from mmot import manifold as mf
from mmot import oracle
from mmot.errors import NonUniqueError, SizeCapError
from mmot.frechet import CostFamily
from mmot.solver import DiscreteMeasure


def pairwise_closed_form(X):
    m = len(X)
    return sum(np.sum((X[i] - X[j]) ** 2) for i in range(m) for j in range(i + 1, m)) / (2 * m)


def test_evaluate_examples():
    s2 = mf.sphere(2)
    p = mf.random_point(s2, 1)
    val, y, uniq = ct.evaluate(s2, CostFamily.uniform(3), [p, p, p])
    assert val == pytest.approx(0, abs=1e-20) and uniq and np.allclose(y, p)
    e = mf.euclidean(2)
    x1, x2 = np.array([0.2, -0.4]), np.array([0.9, 0.5])
    val, y, uniq = ct.evaluate(e, CostFamily.uniform(2), [x1, x2])
    assert val == pytest.approx(0.25 * np.sum((x1 - x2) ** 2), abs=1e-12)
    assert np.allclose(y, (x1 + x2) / 2, atol=1e-12)
    val, y, uniq = ct.evaluate(e, CostFamily.uniform(3), [[0, 0], [1, 0], [0, 1]])
    assert val == pytest.approx(2 / 3, abs=1e-12) and uniq
    assert np.allclose(y, [1 / 3, 1 / 3], atol=1e-12)
    with pytest.raises(ValueError):
        ct.evaluate(e, CostFamily.uniform(1), [[0, 0]])


def test_upper_bound_property():
    s2 = mf.sphere(2)
    fam = CostFamily.uniform(3, "cosh_minus_one")
    X = mf.random_point(s2, 3, size=3)
    val, _, _ = ct.evaluate(s2, fam, X)
    Z = mf.random_point(s2, 4, size=500)
    probe = fr.objective(fr.KarcherProblem(s2, X, fam), Z)
    assert np.all(val <= probe + 1e-12)


def test_tensor_shapes_and_diracs():
    s2 = mf.sphere(2)
    a, b = mf.random_point(s2, 0, size=2)
    t = ct.build_tensor(s2, CostFamily.uniform(2), [DiscreteMeasure.dirac(s2, a), DiscreteMeasure.dirac(s2, b)])
    assert t.shape == (1, 1)
    assert t.values[0, 0] == pytest.approx(0.25 * mf.distance(s2, a, b) ** 2, abs=1e-12)
    rng = np.random.default_rng(1)
    ms = [DiscreteMeasure.uniform(s2, mf.random_point(s2, rng, size=k)) for k in (2, 3, 4)]
    t = ct.build_tensor(s2, CostFamily.uniform(3), ms)
    assert t.shape == (2, 3, 4) and t.argmin_y.shape == (2, 3, 4, 3)
    with pytest.raises(SizeCapError):
        ct.build_tensor(s2, CostFamily.uniform(3), ms, cap=23)


def test_tensor_invariants(make_instance):
    s2 = mf.sphere(2)
    fam = CostFamily.uniform(3, "power", 3)
    measures, t = make_instance(s2, 3, 4, 5, fam)
    assert np.all(t.values >= 0)
    X = np.stack(np.meshgrid(*[mu.points for mu in measures], indexing="ij"), 0)
    for idx in np.ndindex(t.shape):
        pts = np.array([measures[i].points[k] for i, k in enumerate(idx)])
        obj = fr.objective(fr.KarcherProblem(s2, pts, fam), t.argmin_y[idx])
        assert abs(obj - t.values[idx]) <= 1e-9
    # permuting marginals that share f permutes the tensor
    swapped = ct.build_tensor(s2, fam, [measures[1], measures[0], measures[2]])
    assert np.allclose(swapped.values, t.values.transpose(1, 0, 2), atol=1e-12, rtol=0)


def test_euclidean_tensor_closed_form(make_instance):
    measures, t = make_instance(mf.euclidean(2), 3, 4, 2)
    for idx in np.ndindex(t.shape):
        X = np.array([measures[i].points[k] for i, k in enumerate(idx)])
        assert abs(t.values[idx] - pairwise_closed_form(X)) <= 1e-9


def test_tensor_deterministic(make_instance):
    _, a = make_instance(mf.torus(2), 3, 3, 1)
    _, b = make_instance(mf.torus(2), 3, 3, 1)
    assert a.values.tobytes() == b.values.tobytes()


def test_grad_x1_examples():
    e1 = mf.euclidean(1)
    g = ct.grad_x1(e1, CostFamily.uniform(2), [[0.0], [1.0]], [0.5])
    assert g == pytest.approx([-0.5])
    s2 = mf.sphere(2)
    p = mf.random_point(s2, 2)
    assert np.all(ct.grad_x1(s2, CostFamily.uniform(3), [p, p, p], p) == 0)
    with pytest.raises(NonUniqueError):
        ct.grad_x1(s2, CostFamily.uniform(2), [[0, 0, 1], [0, 0, -1]], [1, 0, 0], unique=False)


@pytest.mark.parametrize("f", ["half_square", ("power", 3.0), "cosh_minus_one"], ids=str)
def test_grad_x1_finite_differences_and_reconstruction(f):
    spec = mf.sphere(2)
    fam = CostFamily.uniform(3, *f) if isinstance(f, tuple) else CostFamily.uniform(3, f)
    rng = np.random.default_rng(21)
    done = 0
    while done < 20:
        X = mf.random_point(spec, rng, size=3)
        val, y, uniq = ct.evaluate(spec, fam, X)
        if not uniq or np.min(mf.distance(spec, X, y)) < 0.05:
            continue
        g = ct.grad_x1(spec, fam, X, y)

        def c_of(z):
            return ct.evaluate(spec, fam, np.vstack([z, X[1:]]))[0]

        fd = oracle.fd_gradient(c_of, spec, X[0], 1e-5)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))
        assert mf.distance(spec, ct.reconstruct_ybar(spec, fam[0], X[0], g), y) <= 1e-6
        if f == "half_square":
            assert mf.distance(spec, mf.exp_map(spec, X[0], -g), y) <= 1e-6
        done += 1


def test_superdifferentiability_proxy():
    spec = mf.sphere(2)
    fam = CostFamily.uniform(3)
    rng = np.random.default_rng(8)
    for _ in range(10):
        X = mf.random_point(spec, rng, size=3)
        val, y, uniq = ct.evaluate(spec, fam, X)
        if not uniq:
            continue
        g = ct.grad_x1(spec, fam, X, y)
        v = mf.random_tangent(spec, X[0], 1e-4, rng)
        moved = ct.evaluate(spec, fam, np.vstack([mf.exp_map(spec, X[0], v), X[1:]]))[0]
        assert moved - val <= float(np.dot(g, v)) + 1e-6


def test_lipschitz_bound():
    spec = mf.sphere(2)
    fam = CostFamily.uniform(3, "cosh_minus_one")
    L = ct.lipschitz_bound(spec, fam)
    assert L == pytest.approx(np.sinh(np.pi))
    rng = np.random.default_rng(12)
    X = mf.random_point(spec, rng, size=600).reshape(200, 3, 3)
    X2 = X.copy()
    X2[:, 0] = mf.random_point(spec, rng, size=200)
    a = fr.solve_many(spec, fam, X)
    b = fr.solve_many(spec, fam, X2)
    for k in range(200):
        assert abs(a[k].value - b[k].value) <= L * mf.distance(spec, X[k, 0], X2[k, 0]) + 1e-12


def test_swap_inequality_with_common_minimizer():
    # both tuples have mean y, so y competes for the swapped tuples: swapping cannot raise the total
    spec = mf.euclidean(2)
    fam = CostFamily.uniform(2)
    rng = np.random.default_rng(4)
    for _ in range(20):
        y = rng.uniform(-1, 1, 2)
        a, b = rng.normal(size=(2, 2))
        x, xb = np.array([y + a, y - a]), np.array([y + b, y - b])
        c = lambda t: ct.evaluate(spec, fam, t)[0]
        xs, xbs = np.array([xb[0], x[1]]), np.array([x[0], xb[1]])
        assert c(xs) + c(xbs) <= c(x) + c(xb) + 1e-9


def test_binary_and_csv_export(tmp_path, make_instance):
    _, t = make_instance(mf.sphere(2), 3, (2, 3, 2), 0)
    ct.export_binary(t, tmp_path / "t.bin")
    assert np.array_equal(ct.read_binary(tmp_path / "t.bin"), t.values)
    ct.export_csv(t, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "i1,i2,i3,value,unique" and len(lines) == 13
    back = ct.CostTensor.from_dict(t.to_dict())
    assert np.array_equal(back.values, t.values) and np.array_equal(back.argmin_y, t.argmin_y)
