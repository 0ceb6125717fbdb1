import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import eigvals as scipy_eig

from lrpmor.bench import (OscillatorConfig, damper_configurations, error_surface,
                          generate_oscillator, generate_penzl, h2_error, load_matrix_market,
                          oscillator_h3, thermal_from_matrices, undamped_frequencies,
                          write_csv, write_matrix_market)
from lrpmor.exceptions import DimensionMismatch, NotDiagonal, ParseError, ValidationError
from lrpmor.pmor import Alg1Config, reduce_subsystems
from lrpmor.reduction import balanced_truncation
from lrpmor.systems import assemble_realization, eval_parametric_direct, eval_parametric_smw, \
    eval_transfer, subsystems

from conftest import random_parametric


@pytest.fixture(scope="module")
def oscillator():
    return generate_oscillator()


def test_penzl_dimensions_and_parameter_blocks(penzl):
    assert penzl.n_states == 106 and penzl.n_params == 3 and penzl.k == 6
    A = penzl.A_of([1.0, 2.0, 3.0])
    assert np.allclose(A[:2, :2], [[-1, -1], [1, -1]])
    assert np.allclose(A[4:6, 4:6], [[-1, -3], [3, -1]])
    assert np.allclose(np.diag(A)[6:], -np.arange(1, 101))


def test_penzl_peak_tracks_parameter(penzl):
    # large p moves the dominant resonance to w ~ p
    w = np.array([10.0, 50.0, 200.0])
    mags = [np.abs(eval_parametric_direct(penzl, 1j * x, [50.0, 50.0, 50.0])).max() for x in w]
    assert mags[1] > mags[0] and mags[1] > mags[2]


def test_oscillator_dimensions(oscillator):
    psys = oscillator.first_order
    assert psys.n_states == 402
    assert (psys.n_inputs, psys.n_outputs, psys.n_params) == (5, 2, 4)
    w = undamped_frequencies(oscillator.second_order.M, oscillator.second_order.K)
    assert w.size == 201
    assert w[0] == pytest.approx(0.0141, rel=1e-2) and w[-1] == pytest.approx(1.586, rel=1e-2)


def test_oscillator_h3_matches_first_order(oscillator):
    psys = oscillator.first_order
    H3 = subsystems(psys).H3
    for s in (0.05j, 0.8j):
        first = eval_transfer(H3, s)
        second = oscillator_h3(oscillator.second_order, s)
        assert np.allclose(first, second, rtol=1e-9, atol=1e-12 * np.abs(second).max())


def test_damper_indices_scale_with_d():
    assert OscillatorConfig(d=900).damper_indices() == (99, 109, 149, 1399, 1499)
    assert OscillatorConfig(d=100).damper_indices() == (10, 12, 16, 155, 167)
    assert len(damper_configurations()) == 32
    with pytest.raises(ValidationError):
        OscillatorConfig(d=1)


def test_thermal_builder_from_small_matrices():
    n = 5
    A = -2 * np.eye(n) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    At = np.diag([0.0, 0, 0, 0, 1e-4])
    Ab = np.diag([1.0, 0, 0, 0, 0])
    As = np.diag([0.0, 0, 4.0, 0, 0])
    B, C = np.ones((n, 1)), np.eye(n)[:1]
    psys = thermal_from_matrices(np.eye(n), A, At, Ab, As, B, C)
    assert psys.k == 2 and psys.n_params == 2
    p = [3.0, 0.5]
    assert np.allclose(psys.A_of(p), A - 1000 * At - 3.0 * Ab - 0.5 * As)
    with pytest.raises(NotDiagonal):
        thermal_from_matrices(np.eye(n), A, At, A, As, B, C)


def test_matrix_market_round_trip_dense_and_sparse(tmp_path):
    X = np.array([[1.0, 0.0], [0.0, -2.5e-300]])
    for fmt in ("array", "coordinate"):
        path = tmp_path / f"x_{fmt}.mtx"
        write_matrix_market(path, X, fmt=fmt, comment="test")
        assert np.array_equal(load_matrix_market(path), X)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1e10, 1e10, allow_nan=False, allow_infinity=False)))
def test_matrix_market_round_trip_property(tmp_path_factory, X):
    path = tmp_path_factory.mktemp("mm") / "x.mtx"
    write_matrix_market(path, X)
    assert np.array_equal(load_matrix_market(path), X)


def test_matrix_market_symmetric_expansion(tmp_path):
    path = tmp_path / "s.mtx"
    path.write_text("%%MatrixMarket matrix coordinate real symmetric\n"
                    "% comment\n3 3 3\n1 1 2.0\n2 1 -1.0\n3 3 4\n")
    assert np.array_equal(load_matrix_market(path),
                          [[2.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 4.0]])
    path.write_text("%%MatrixMarket matrix array real skew-symmetric\n2 2\n5.0\n")
    assert np.array_equal(load_matrix_market(path), [[0.0, -5.0], [5.0, 0.0]])


def test_matrix_market_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.mtx"
    path.write_text("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n1 x 2.0\n")
    with pytest.raises(ParseError) as info:
        load_matrix_market(path)
    assert info.value.line == 4
    path.write_text("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1.0\n")
    with pytest.raises(DimensionMismatch):
        load_matrix_market(path)
    path.write_text("not a banner\n")
    with pytest.raises(ParseError) as info:
        load_matrix_market(path)
    assert info.value.line == 1
    path.write_text("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n")
    with pytest.raises(ParseError):
        load_matrix_market(path)


def test_h2_error_of_exact_model_vanishes(rng):
    psys = random_parametric(rng, n=8, k=2, m=1, l=1)
    model, _ = reduce_subsystems(psys, Alg1Config(orders=(8, 8, 8, 8)))
    p = [1.0, 2.0]
    red = assemble_realization(model, p)
    ref = psys.at(p)
    assert h2_error(psys, red, p) <= 1e-7 * np.sqrt(np.sum(ref.B ** 2))
    # realization route and quadrature route agree for a lossy model
    lossy = balanced_truncation(ref, order=2).reduced
    a = h2_error(psys, lossy, p)
    b = h2_error(psys, lossy, p, quadrature_points=4000, window=(1e-4, 1e4))
    assert b == pytest.approx(a, rel=1e-2)


def test_error_surface_rows(tmp_path, penzl):
    model, _ = reduce_subsystems(penzl)
    grid = [(1.0, 2.0, 3.0), (50.0, 60.0, 70.0)]
    rows = error_surface(penzl, model, grid, np.geomspace(1e-1, 1e3, 50))
    assert len(rows) == 2 and all(len(r) == 4 for r in rows)
    assert all(0 <= r[-1] < 1e-5 for r in rows)
    rows_h2 = error_surface(penzl, model, grid[:1], kind="h2")
    assert rows_h2[0][-1] < 1e-4
    path = tmp_path / "surf.csv"
    write_csv(path, rows, ["p1", "p2", "p3", "err"])
    lines = path.read_text().splitlines()
    assert lines[0] == "p1,p2,p3,err" and len(lines) == 3
    with pytest.raises(ValidationError):
        error_surface(penzl, model, grid, [])
    with pytest.raises(ValidationError):
        error_surface(penzl, model, grid, kind="bogus")


def test_smw_on_oscillator_sample(oscillator):
    psys = oscillator.first_order
    s, p = 0.3j, [100.0, 200.0, 300.0, 400.0]
    H = [eval_transfer(h, s) for h in subsystems(psys)]
    direct = eval_parametric_direct(psys, s, p)
    smw = eval_parametric_smw(*H, p, psys.mode, psys.param_map)
    assert np.abs(smw - direct).max() <= 1e-9 * np.abs(direct).max()


def test_penzl_validation():
    with pytest.raises(ValidationError):
        generate_penzl(0)


def test_penzl_spectrum(penzl):
    ev = np.linalg.eigvals(penzl.A_of([7.0, 0.0, 0.0])[:2, :2])
    assert np.allclose(sorted(ev, key=lambda z: z.imag), [-1 - 7j, -1 + 7j])
    ev0 = np.linalg.eigvals(penzl.A_of([0.0, 0.0, 0.0]))
    assert np.all(np.abs(ev0.imag) < 1e-12) and np.all(ev0.real < 0)


def test_reference_size_oscillator_inputs():
    osc = generate_oscillator(OscillatorConfig(d=900))
    assert osc.first_order.n_states == 3602
    B2 = osc.second_order.B2
    assert (B2[0, 0], B2[1, 1], B2[900, 2], B2[901, 3], B2[-1, 4]) == (20, 10, 20, 10, 30)
    assert np.count_nonzero(B2) == 5


def test_stiffness_and_damping(oscillator):
    K = oscillator.second_order.K
    assert np.allclose(K, K.T) and np.linalg.eigvalsh(K).min() > 0
    small = OscillatorConfig(d=10, alpha_c=0.0)
    A = generate_oscillator(small).first_order
    ev = scipy_eig(A.A_of(np.zeros(4)), A.E)
    assert np.abs(ev.real).max() < 1e-8 * np.abs(ev).max()
    A = generate_oscillator(OscillatorConfig(d=10)).first_order
    assert scipy_eig(A.A_of(np.zeros(4)), A.E).real.max() < 0


def test_matrix_market_small_files(tmp_path):
    path = tmp_path / "i.mtx"
    path.write_text("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n2 2 1.0\n")
    assert np.array_equal(load_matrix_market(path), np.eye(2))
    path.write_text("%%MatrixMarket matrix coordinate real symmetric\n2 2 3\n1 1 2\n2 1 1\n2 2 3\n")
    assert np.array_equal(load_matrix_market(path), [[2.0, 1.0], [1.0, 3.0]])
    X = np.random.default_rng(0).standard_normal((30, 30))
    write_matrix_market(tmp_path / "r.mtx", X)
    assert np.array_equal(load_matrix_market(tmp_path / "r.mtx"), X)


def test_synthetic_thermal_ranks(rng):
    n = 10
    X = rng.standard_normal((n, n))
    A = -(X @ X.T) / n - np.eye(n)
    Ab = np.diag([1.0, 2.0, 0.5] + [0.0] * 7)
    As = np.diag([0.0] * 8 + [3.0, 1.5])
    At = np.diag([0.0] * 9 + [1e-4])
    psys = thermal_from_matrices(np.eye(n), A, At, Ab, As, rng.standard_normal((n, 1)),
                                 rng.standard_normal((1, n)))
    assert psys.k == 5 and psys.n_params == 2
    p = [2.0, 0.7]
    q = subsystems(psys)
    direct = eval_parametric_direct(psys, 1j, p)
    smw = eval_parametric_smw(*(eval_transfer(h, 1j) for h in q), p, psys.mode, psys.param_map)
    assert np.abs(smw - direct).max() <= 1e-12 * np.abs(direct).max()


def test_lossless_error_surface_vanishes(rng):
    psys = random_parametric(rng, n=8, k=2, m=1, l=1)
    model, _ = reduce_subsystems(psys, Alg1Config(orders=(8, 8, 8, 8)))
    rows = error_surface(psys, model, [(0.0, 0.0), (1.0, 2.0), (5.0, 0.5)],
                         np.geomspace(1e-2, 1e2, 30))
    assert max(r[-1] for r in rows) < 1e-9
