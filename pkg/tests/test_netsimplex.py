"""Integer-mass transportation solver."""

import numpy as np
import pytest
from scipy.optimize import linprog

from ddsmc._netsimplex import solve_transport_pure, transport_objective


def lp_objective(sup, dem, dist):
    m, n = dist.shape
    a_eq = []
    for i in range(m):
        row = np.zeros((m, n))
        row[i, :] = 1.0
        a_eq.append(row.ravel())
    for j in range(n):
        row = np.zeros((m, n))
        row[:, j] = 1.0
        a_eq.append(row.ravel())
    res = linprog(
        dist.ravel(),
        A_eq=np.array(a_eq),
        b_eq=np.concatenate([sup, dem]).astype(float),
        method="highs",
    )
    assert res.success
    return res.fun


class TestSolver:
    def test_identity_assignment(self):
        dist = np.array([[0.0, 1.0], [1.0, 0.0]])
        sup = np.array([3, 4], dtype=np.int64)
        dem = np.array([3, 4], dtype=np.int64)
        assert transport_objective(sup, dem, dist) == pytest.approx(0.0, abs=1e-12)

    def test_forced_cross_shipment(self):
        dist = np.array([[2.0, 5.0], [5.0, 2.0]])
        sup = np.array([5, 1], dtype=np.int64)
        dem = np.array([1, 5], dtype=np.int64)
        # ship 1 at cost 2, 4 across at cost 5, 1 at cost 2
        assert transport_objective(sup, dem, dist) == pytest.approx(24.0, abs=1e-9)

    def test_against_linear_programming(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            m = int(rng.integers(1, 9))
            n = int(rng.integers(1, 9))
            dist = rng.random((m, n)) * 10.0
            sup = rng.integers(0, 50, size=m).astype(np.int64)
            total = sup.sum()
            if total == 0:
                sup[0] = total = 7
            cuts = np.sort(rng.integers(0, total + 1, size=n - 1))
            dem = np.diff(np.concatenate([[0], cuts, [total]])).astype(np.int64)
            got = transport_objective(sup, dem, dist)
            want = lp_objective(sup, dem, dist)
            assert got == pytest.approx(want, abs=1e-8)

    def test_zero_entries_in_marginals(self):
        dist = np.array([[1.0, 2.0, 3.0]] * 3)
        sup = np.array([0, 10, 0], dtype=np.int64)
        dem = np.array([10, 0, 0], dtype=np.int64)
        assert transport_objective(sup, dem, dist) == pytest.approx(
            10.0, abs=1e-9
        )

    def test_compiled_and_pure_agree_exactly(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            m = int(rng.integers(2, 12))
            n = int(rng.integers(2, 12))
            dist = rng.random((m, n))
            sup = rng.integers(1, 40, size=m).astype(np.int64)
            dem = rng.integers(1, 40, size=n).astype(np.int64)
            dem[-1] += sup.sum() - dem.sum()
            if dem[-1] < 0:
                sup[-1] -= dem[-1]
                dem[-1] = 0
            jit = transport_objective(sup, dem, dist)
            pure = transport_objective(sup, dem, dist, pure=True)
            assert jit == pure  # bit-identical arithmetic on both paths

    def test_pure_entry_point_is_the_fallback(self):
        sup = np.array([2, 2], dtype=np.int64)
        dem = np.array([1, 3], dtype=np.int64)
        dist = np.array([[1.0, 4.0], [4.0, 1.0]])
        assert solve_transport_pure(sup, dem, dist) == pytest.approx(
            transport_objective(sup, dem, dist, pure=True)
        )


class TestValidation:
    def test_unbalanced_marginals(self):
        with pytest.raises(ValueError):
            transport_objective(
                np.array([2], dtype=np.int64),
                np.array([3], dtype=np.int64),
                np.array([[1.0]]),
            )

    def test_empty_marginals(self):
        with pytest.raises(ValueError):
            transport_objective(
                np.array([], dtype=np.int64),
                np.array([], dtype=np.int64),
                np.zeros((0, 0)),
            )
