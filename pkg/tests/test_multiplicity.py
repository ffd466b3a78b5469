import numpy as np
import pytest

from oracles import ring_itineraries
from phdim.curves import itineraries
from phdim.errors import BudgetExceeded
from phdim.geometry import polygon_area
from phdim.multiplicity import cylinders, multiplicity_at, multiplicity_exact, multiplicity_proxy


def test_k1_is_two(fig):
    assert multiplicity_exact(fig, 1).records[0].k_n == 2


@pytest.mark.parametrize("n", [2, 4])
def test_k_matches_ring_oracle(fig, n):
    """Count itineraries on tiny circles around every arrangement vertex
    and segment midpoint."""
    k, L, arr = multiplicity_at(fig, n)
    assert k <= 2 * (L + 1) * n
    probes = [v.point for v in arr.vertices] + [0.5 * (a + b) for a, b in arr.segments]
    probes = [p for p in probes if np.all(np.abs(p) < 1 - 1e-6)]
    assert k == max(ring_itineraries(fig, p, n) for p in probes)


def test_bound_up_to_eight(fig):
    est = multiplicity_exact(fig, 8)
    L = max(r.L for r in est.records)
    assert [r.n for r in est.records] == list(range(1, 9))
    for r in est.records:
        assert r.k_n <= 2 * (L + 1) * r.n


def test_cylinders_partition_domain(fig):
    cells, segs = cylinders(fig, 3)
    assert sum(polygon_area(c.polygon) for c in cells) == pytest.approx(4.0, rel=1e-9)
    assert len({c.itinerary for c in cells}) == len(cells)
    for c in cells[:10]:
        p = c.polygon.mean(axis=0)
        codes, _ = itineraries(fig, p[None], 3)
        assert tuple(codes[0]) == c.itinerary


def test_deterministic(fig):
    a = multiplicity_exact(fig, 5).rows()
    b = multiplicity_exact(fig, 5).rows()
    assert a == b


def test_budget(fig):
    with pytest.raises(BudgetExceeded):
        multiplicity_exact(fig, 11)


def test_remark_multiplicity_stays_two(remark):
    # preimages of the singular line are parallel horizontals: no crossings
    est = multiplicity_exact(remark, 6)
    assert all(r.k_n == 2 for r in est.records)


def test_proxy_agrees_with_exact_on_small_n(fig):
    exact = [r.k_n for r in multiplicity_exact(fig, 3).records]
    proxy = [r.k_n for r in multiplicity_proxy(fig, 3, seed=0).records]
    assert all(p <= e for p, e in zip(proxy, exact))
    assert proxy[0] == 2
