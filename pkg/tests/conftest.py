import numpy as np
import pytest

from mmot import cost as ct
from mmot import manifold as mf
from mmot.frechet import CostFamily
from mmot.solver import DiscreteMeasure


def build_instance(spec, m, n, seed, family=None, weights="uniform"):
    """Seeded random marginals plus their cost tensor."""
    rng = np.random.default_rng(seed)
    sizes = [n] * m if np.isscalar(n) else list(n)
    measures = []
    for k in sizes:
        pts = mf.random_point(spec, rng, size=k)
        if weights == "uniform":
            measures.append(DiscreteMeasure.uniform(spec, pts))
        else:
            w = rng.uniform(0.5, 1.5, size=k)
            measures.append(DiscreteMeasure(spec, pts, w / w.sum()))
    family = family or CostFamily.uniform(m)
    return measures, ct.build_tensor(spec, family, measures)


@pytest.fixture
def make_instance():
    return build_instance


SPECS = {
    "S1": mf.sphere(1),
    "S2": mf.sphere(2),
    "T1": mf.torus(1),
    "T2": mf.torus(2, [1.0, 2.0]),
    "R2": mf.euclidean(2),
    "R3": mf.euclidean(3),
}
