import numpy as np
import pytest
from hypothesis import given, strategies as st

from lrpmor.exceptions import OrderTooLarge, UnstablePencil, ValidationError
from lrpmor.numerics import linf_norm_estimate
from lrpmor.reduction import (BalancedTruncation, balanced_truncation, gramians,
                              hankel_singular_values, order_for_tolerance, tail_bound)
from lrpmor.systems import StateSpaceSystem, frequency_window, subsystems

from conftest import random_stable


def error_linf(sys, red):
    lo, hi = frequency_window(sys.poles())
    return linf_norm_estimate(lambda w: sys.freqresp(1j * w) - red.freqresp(1j * w), lo, hi,
                              vectorized=True)


def test_first_order_hsv_closed_form():
    # 1/(s+a): P = 1/(2a) = Q, hsv = 1/(2a)
    sys = StateSpaceSystem([[-2.0]], [[1.0]], [[1.0]])
    res = balanced_truncation(sys, order=1)
    assert res.hsv[0] == pytest.approx(0.25)
    assert res.error_bound == 0.0


def test_hsv_invariant_under_state_transformation(rng):
    sys = random_stable(rng, 8, 2, 2)
    T = rng.standard_normal((8, 8)) + 4 * np.eye(8)
    Ti = np.linalg.inv(T)
    other = StateSpaceSystem(Ti @ sys.A @ T, Ti @ sys.B, sys.C @ T)
    a = balanced_truncation(sys, order=3).hsv
    b = balanced_truncation(other, order=3).hsv
    assert np.allclose(a, b, rtol=1e-8, atol=1e-12 * a[0])


def test_hsv_from_gramians_agree_with_factor_route(rng):
    sys = random_stable(rng, 10, 1, 2)
    E = np.diag(rng.uniform(0.5, 2, 10))
    desc = StateSpaceSystem(sys.A, sys.B, sys.C, E)
    P, Q = gramians(desc)
    hsv = hankel_singular_values(P, Q, E)
    res = balanced_truncation(desc, order=4)
    assert np.allclose(hsv[:6], res.hsv[:6], rtol=1e-8)


@given(seed=st.integers(0, 2**31 - 1), n=st.integers(3, 20), m=st.integers(1, 3),
       l=st.integers(1, 3))
def test_truncation_error_within_twice_tail_sum(seed, n, m, l):
    rng = np.random.default_rng(seed)
    sys = random_stable(rng, n, m, l)
    full = balanced_truncation(sys, order=1)
    for r in range(1, full.numerical_rank):
        res = full.truncate(order=r)
        assert res.reduced.is_stable()
        err = error_linf(sys, res.reduced)
        # roundoff floor of the reduced model is about 1e-14 * hsv[0]
        assert err <= res.error_bound + 1e-12 * full.hsv[0]
        assert err >= res.hsv[res.order] * (1 - 1e-6) or res.hsv[res.order] < 1e-10 * full.hsv[0]


def test_truncate_reuses_factors_and_matches_fresh_reduction(rng):
    sys = random_stable(rng, 12, 2, 1)
    a = balanced_truncation(sys, order=3).truncate(order=6)
    b = balanced_truncation(sys, order=6)
    assert a.order == b.order == 6
    w = 1j * np.geomspace(1e-2, 1e2, 20)
    assert np.allclose(a.reduced.freqresp(w), b.reduced.freqresp(w), rtol=1e-10)


def test_tolerance_selects_smallest_sufficient_order(rng):
    sys = random_stable(rng, 15, 1, 1)
    hsv = balanced_truncation(sys, order=1).hsv
    tol = 2 * np.sum(hsv[4:]) * 1.0001
    res = balanced_truncation(sys, tol=tol)
    assert res.order == order_for_tolerance(hsv, tol) <= 4
    assert res.error_bound <= tol
    assert tail_bound(hsv, res.order - 1) > tol


def test_equal_hsv_cluster_is_kept_whole():
    # two identical decoupled channels give a repeated HSV
    A = np.diag([-1.0, -1.0, -5.0])
    sys = StateSpaceSystem(A, np.eye(3), np.eye(3))
    res = balanced_truncation(sys, order=1)
    assert res.order == 2
    assert res.hsv[0] == pytest.approx(res.hsv[1])


def test_full_order_is_lossless(rng):
    sys = random_stable(rng, 6, 1, 1)
    res = balanced_truncation(sys, order=6)
    assert res.order == 6 and res.error_bound == 0.0
    w = 1j * np.geomspace(1e-2, 1e2, 10)
    assert np.allclose(res.reduced.freqresp(w), sys.freqresp(w), rtol=1e-12)


def test_order_and_tolerance_validation(rng):
    sys = random_stable(rng, 5)
    with pytest.raises(OrderTooLarge):
        balanced_truncation(sys, order=6)
    with pytest.raises(ValidationError):
        balanced_truncation(sys)
    with pytest.raises(ValidationError):
        balanced_truncation(sys, order=2, tol=1e-3)
    with pytest.raises(ValidationError):
        balanced_truncation(sys, tol=-1.0)


def test_unstable_system_rejected():
    sys = StateSpaceSystem([[1.0]], [[1.0]], [[1.0]])
    with pytest.raises(UnstablePencil):
        balanced_truncation(sys, order=1)


def test_order_capped_at_numerical_rank():
    # uncontrollable second state: rank 1
    sys = StateSpaceSystem(np.diag([-1.0, -2.0]), [[1.0], [0.0]], [[1.0, 1.0]])
    res = balanced_truncation(sys, tol=1e-30)
    assert res.numerical_rank == 1 and res.order == 1


def test_estimator_interface(rng):
    sys = random_stable(rng, 10, 1, 1)
    est = BalancedTruncation(order=4)
    red = est.fit_transform(sys)
    assert red.n_states == 4 and est.order_ == 4
    assert est.predict([1j]).shape == (1, 1, 1)
    assert est.get_params() == {"order": 4, "tol": None}
    with pytest.raises(ValidationError):
        BalancedTruncation(order=2).predict([1j])
    with pytest.raises(ValidationError):
        BalancedTruncation(order=2).fit(np.eye(2))


def test_gramian_closed_forms():
    P, Q = gramians(StateSpaceSystem([[-1.0]], [[1.0]], [[1.0]]))
    assert P[0, 0] == pytest.approx(0.5) and Q[0, 0] == pytest.approx(0.5)
    P, _ = gramians(StateSpaceSystem(np.diag([-1.0, -2.0]), [[1.0], [1.0]], [[1.0, 1.0]]))
    assert np.allclose(P, [[1 / 2, 1 / 3], [1 / 3, 1 / 4]], atol=1e-14)


def test_two_decoupled_copies_give_repeated_hsv():
    sys = StateSpaceSystem(-np.eye(2), np.eye(2), np.eye(2))
    assert np.allclose(hankel_singular_values(*gramians(sys)), [0.5, 0.5], atol=1e-14)


def test_full_order_reproduces_response(rng):
    sys = random_stable(rng, 10, 2, 2)
    res = balanced_truncation(sys, order=10)
    pts = 1j * np.geomspace(1e-2, 1e2, 20)
    ref = sys.freqresp(pts)
    assert np.abs(res.reduced.freqresp(pts) - ref).max() <= 1e-9 * np.abs(ref).max()


def test_penzl_first_subsystem_order(penzl):
    res = balanced_truncation(subsystems(penzl).H1, tol=1e-6)
    assert res.order == 10 and res.error_bound <= 1e-6
