import numpy as np
import pytest

from lrpmor.exceptions import ResolventSingular, UnstablePencil, ValidationError
from lrpmor.numerics import linf_norm_estimate
from lrpmor.pmor import (Alg1Config, ErrorBoundData, SampledVectorFitting, SubsystemReducer,
                         default_sampling_points, error_bound_f, escalate, reduce_subsystems,
                         resample_parametric, sample_subsystems, vf_reduce_at_parameter)
from lrpmor.systems import LowRankParametricSystem, eval_parametric_direct, eval_transfer, subsystems

from conftest import random_parametric


def _true_error(psys, model, p, lo=1e-3, hi=1e3):
    def G(w):
        s = 1j * np.atleast_1d(w)
        full = resample_parametric(sample_subsystems(psys, s), p).values
        return full - model.freqresp(s, p)
    return linf_norm_estimate(G, lo, hi, grid_points=300, vectorized=True)


def test_penzl_default_orders_and_bounds(penzl):
    model, data = reduce_subsystems(penzl)
    assert model.orders == (10, 1, 6, 1)
    assert np.all(data.eps <= 1e-6)
    assert data.eps[0] == pytest.approx(1.636e-7, rel=1e-2)


@pytest.mark.parametrize("p", [(0.0, 0.0, 0.0), (10.0, 50.0, 100.0), (100.0, 5.0, 30.0)])
def test_penzl_bound_dominates_true_error(penzl, p):
    model, data = reduce_subsystems(penzl, Alg1Config(orders=(4, 1, 2, 1)))
    f = error_bound_f(p, model, data)
    err = _true_error(penzl, model, p)
    assert err <= f * (1 + 1e-6)


def test_bound_with_exact_coupling_factor(penzl):
    model, data = reduce_subsystems(penzl, Alg1Config(orders=(4, 1, 2, 1)))
    p = (20.0, 40.0, 60.0)
    assert error_bound_f(p, model, data, exact=True) > 0
    assert error_bound_f((0, 0, 0), model, data) == pytest.approx(data.eps[0])


def test_escalation_reduces_bound_and_caps_at_rank(rng):
    psys = random_parametric(rng, n=12, k=2)
    model, data = reduce_subsystems(psys, Alg1Config(orders=(2, 2, 2, 2)))
    m2, d2, grew = escalate(psys, data, 0.5)
    assert grew and all(b > a for a, b in zip(model.orders, m2.orders))
    assert np.all(d2.eps <= data.eps)
    d = d2
    while grew:
        _, d, grew = escalate(psys, d, 1.0)
    assert d.orders == d.full_orders


def test_sampling_matches_direct_evaluation(rng):
    psys = random_parametric(rng, n=12, k=3, with_E=True)
    pts = 1j * np.array([0.1, 1.0, 10.0])
    off = sample_subsystems(psys, pts)
    for H, h in zip((off.H1, off.H2, off.H3, off.H4), subsystems(psys)):
        for i, s in enumerate(pts):
            ref = eval_transfer(h, s)
            assert np.abs(H[i] - ref).max() <= 1e-12 * max(np.abs(ref).max(), 1.0)
    p = [1.0, 2.0, 3.0]
    vals = resample_parametric(off, p).values
    for i, s in enumerate(pts):
        ref = eval_parametric_direct(psys, s, p)
        assert np.allclose(vals[i], ref, rtol=1e-11, atol=1e-14)


def test_single_point_identity_resolvent():
    # A0 = -I, E = I, xi = 0: H3(0) = V^T U
    rng = np.random.default_rng(7)
    n, k = 6, 2
    U, V = rng.standard_normal((n, k)), rng.standard_normal((n, k))
    psys = LowRankParametricSystem(None, -np.eye(n), U, V, np.ones((n, 1)), np.ones((1, n)),
                                   mode="general")
    off = sample_subsystems(psys, [0.0])
    assert np.allclose(off.H3[0], V.T @ U, rtol=1e-14)
    assert off.n_points == 1 and off.n_params == 2


def test_sampling_at_eigenvalue_raises():
    psys = LowRankParametricSystem(None, -np.eye(3), np.ones((3, 1)), np.ones((3, 1)),
                                   np.ones((3, 1)), np.ones((1, 3)))
    with pytest.raises(ResolventSingular):
        sample_subsystems(psys, [-1.0])


def test_unstable_pencil_named(rng):
    psys = LowRankParametricSystem(None, np.diag([-1.0, 1.0]), np.ones((2, 1)), np.ones((2, 1)),
                                   np.ones((2, 1)), np.ones((1, 2)))
    with pytest.raises(UnstablePencil, match="H1"):
        reduce_subsystems(psys)


def test_vf_at_parameter_fits_small_system(rng):
    psys = random_parametric(rng, n=6, k=1, m=1, l=1)
    off = sample_subsystems(psys, default_sampling_points(psys, 80))
    res = vf_reduce_at_parameter(off, [2.0], 6, max_iter=30)
    energy = resample_parametric(off, [2.0]).total_energy()
    assert res.final_ls_error <= 1e-16 * energy


def test_alg1_config_validation():
    with pytest.raises(ValidationError):
        Alg1Config(tol=-1).targets()
    with pytest.raises(ValidationError):
        Alg1Config(orders=(1, 2, 3)).targets()
    assert Alg1Config(tol=1e-3, orders=(3, None, None, None)).targets()[0] == (3, None)


def test_estimators(penzl, rng):
    est = SubsystemReducer(tol=1e-6).fit(penzl)
    assert est.orders_ == (10, 1, 6, 1)
    assert est.predict([1j], [1.0, 2.0, 3.0]).shape == (1, 1, 1)
    assert est.error_bound([1.0, 2.0, 3.0]) >= est.eps_[0]
    with pytest.raises(ValidationError):
        SubsystemReducer().predict([1j], [0, 0, 0])
    psys = random_parametric(rng, n=6, k=1, m=1, l=1)
    vf = SampledVectorFitting(order=4, n_points=60).fit(psys)
    assert vf.predict([1j], [0.5]).shape == (1, 1, 1)
    with pytest.raises(ValidationError):
        SampledVectorFitting().reduce([0.5])


def test_bound_trivial_cases(penzl):
    model, data = reduce_subsystems(penzl)
    assert error_bound_f((0.0, 0.0, 0.0), model, data) == data.eps[0]
    zero = ErrorBoundData(eps=np.zeros(4), bt_results=data.bt_results)
    assert error_bound_f((10.0, 100.0, 5000.0), model, zero) == 0.0


def test_penzl_bound_at_extreme_parameter(penzl):
    p = (10.0, 100.0, 5000.0)
    model, data = reduce_subsystems(penzl)
    f = error_bound_f(p, model, data)
    assert np.isfinite(f) and _true_error(penzl, model, p, 1e-2, 1e4) <= f * (1 + 1e-6)


def test_penzl_sampling_at_zero_parameter(penzl):
    pts = default_sampling_points(penzl, 500)
    off = sample_subsystems(penzl, pts)
    assert off.n_points == 500 and np.all(np.isfinite(off.H3))
    assert np.array_equal(resample_parametric(off, [0.0, 0.0, 0.0]).values, off.H1)
    res = vf_reduce_at_parameter(off, [0.0, 0.0, 0.0], 10, max_iter=30)
    energy = resample_parametric(off, [0.0, 0.0, 0.0]).total_energy()
    assert res.final_ls_error <= 1e-10 * energy
