import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from funczidm.basis import BasisError, SplineBasis, build_basis, evaluate_basis


def cox_de_boor(knots, k, i, t):
    """Plain recursive B-spline, right-closed on the last non-empty interval."""
    if k == 0:
        last = knots[-1]
        if knots[i] <= t < knots[i + 1]:
            return 1.0
        if t == last and knots[i] < knots[i + 1] == last:
            return 1.0
        return 0.0
    left = right = 0.0
    d1 = knots[i + k] - knots[i]
    d2 = knots[i + k + 1] - knots[i + 1]
    if d1 > 0:
        left = (t - knots[i]) / d1 * cox_de_boor(knots, k - 1, i, t)
    if d2 > 0:
        right = (knots[i + k + 1] - t) / d2 * cox_de_boor(knots, k - 1, i + 1, t)
    return left + right


def full_oracle(basis, t):
    knots = list(basis.knot_vector)
    return np.array([cox_de_boor(knots, 3, i, t) for i in range(basis.df + 1)])


def test_one_interior_knot_at_median():
    basis = build_basis(np.arange(11), 4)
    assert basis.interior_knots == (5.0,)
    assert basis.boundary == (0.0, 10.0)
    assert basis.width == 5


def test_interior_knots_at_quantiles_of_distinct_times():
    times = np.r_[np.zeros(50), np.arange(1, 11)]  # repeated zeros must not pull knots
    basis = build_basis(times, 6)
    np.testing.assert_allclose(basis.interior_knots, np.quantile(np.arange(11), [.25, .5, .75]))


@pytest.mark.parametrize("D", [0, 1, 3])
def test_rejects_small_df(D):
    with pytest.raises(BasisError, match="insufficient degrees of freedom"):
        build_basis(np.arange(11), D)


def test_rejects_single_time():
    with pytest.raises(BasisError):
        build_basis([2.0, 2.0, 2.0], 4)


def test_row_shape_and_leading_one():
    basis = build_basis(np.linspace(0, 10, 37), 7)
    row = evaluate_basis(basis, 3.3)
    assert row.shape == (8,)
    assert row[0] == 1.0
    rows = evaluate_basis(basis, np.linspace(0, 10, 9))
    assert rows.shape == (9, 8)
    assert np.all(rows[:, 0] == 1.0)
    assert np.all(np.isfinite(rows))


def test_matches_de_boor_oracle():
    rng = np.random.default_rng(0)
    basis = build_basis(rng.uniform(0, 10, 200), 6)
    ts = rng.uniform(*basis.boundary, 1000)
    got = basis.full_basis(ts)
    want = np.array([full_oracle(basis, t) for t in ts])
    assert np.max(np.abs(got - want)) < 1e-10


def test_partition_of_unity_and_dropped_function():
    rng = np.random.default_rng(1)
    basis = build_basis(rng.uniform(0, 10, 100), 5)
    ts = rng.uniform(*basis.boundary, 100)
    full = basis.full_basis(ts)
    assert np.max(np.abs(full.sum(axis=1) - 1)) < 1e-10
    rows = evaluate_basis(basis, ts)
    np.testing.assert_allclose(rows[:, 1:].sum(axis=1), 1 - full[:, 0], atol=1e-12)


def test_boundary_row_against_oracle():
    basis = build_basis(np.arange(11), 4)
    row = evaluate_basis(basis, 0.0)
    first = full_oracle(basis, 0.0)[0]
    assert row[0] == 1.0
    assert abs(row[1:].sum() - (1 - first)) < 1e-12


def test_constant_coefficient_reproduces_constant():
    basis = build_basis(np.linspace(0, 10, 30), 4)
    beta = np.array([0.37, 0, 0, 0, 0])
    np.testing.assert_allclose(evaluate_basis(basis, np.linspace(0, 10, 50)) @ beta, 0.37)


def test_clamps_outside_and_counts():
    basis = build_basis(np.linspace(1, 9, 30), 4)
    before = basis.warnings
    np.testing.assert_array_equal(evaluate_basis(basis, -3.0), evaluate_basis(basis, 1.0))
    np.testing.assert_array_equal(evaluate_basis(basis, 12.0), evaluate_basis(basis, 9.0))
    assert basis.warnings == before + 2


def test_second_derivative_continuous_at_knot():
    basis = build_basis(np.arange(11), 4)
    h = 1e-4
    def second(t):
        return (basis.full_basis(t + h) - 2 * basis.full_basis(t) + basis.full_basis(t - h)) / h**2
    np.testing.assert_allclose(second(5 - 2 * h), second(5 + 2 * h), atol=1e-2)


def test_roundtrip_dict():
    basis = build_basis(np.linspace(0, 10, 30), 6)
    again = SplineBasis.from_dict(basis.to_dict())
    assert again == basis
    t = np.linspace(0, 10, 13)
    np.testing.assert_array_equal(evaluate_basis(again, t), evaluate_basis(basis, t))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=8, max_size=40, unique=True),
       st.integers(4, 7), st.floats(0, 1))
def test_rows_are_deterministic_and_sum_to_one(times, D, q):
    try:
        basis = build_basis(times, D)
    except BasisError:
        return
    lo, hi = basis.boundary
    t = lo + q * (hi - lo)
    a = evaluate_basis(basis, t)
    b = evaluate_basis(basis, t)
    assert np.array_equal(a, b)
    assert abs(basis.full_basis(t).sum() - 1) < 1e-10
