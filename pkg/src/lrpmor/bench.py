"""Benchmark models, Matrix Market I/O and error surfaces."""

from __future__ import annotations

import csv
import itertools
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .exceptions import DimensionMismatch, NotDiagonal, ParseError, ValidationError
from .numerics import h2_norm, sqrt_spd
from .systems import (LowRankParametricSystem, ParametricReducedModel, StateSpaceSystem,
                      assemble_realization, frequency_window)
from .pmor import resample_parametric, sample_subsystems

#: Environment variable naming a directory with the thermal benchmark files.
THERMAL_ENV = "LRPMOR_THERMAL_DIR"
THERMAL_FILES = ("E", "A", "At", "Ab", "As", "B", "C")


# -- Penzl -------------------------------------------------------------------

def generate_penzl(M_tail=100):
    """Parametric Penzl model with three peak-controlling parameters.

    ``A(p)`` has three 2x2 blocks ``[[-1, -p_i], [p_i, -1]]`` followed by the
    diagonal tail ``-1, ..., -M_tail``; input and output vectors weight the
    first six states with 10.  Parameters are unsigned (general mode).
    """
    M_tail = int(M_tail)
    if M_tail < 1:
        raise ValidationError("M_tail must be >= 1")
    n = M_tail + 6
    A0 = np.diag(np.concatenate((-np.ones(6), -np.arange(1.0, M_tail + 1))))
    U = np.zeros((n, 6))
    V = np.zeros((n, 6))
    for i in range(6):
        V[i, i] = 1.0
        if i % 2 == 0:
            U[i + 1, i] = -1.0
        else:
            U[i - 1, i] = 1.0
    b = np.concatenate((10.0 * np.ones(6), np.ones(M_tail)))
    return LowRankParametricSystem(None, A0, U, V, b[:, None], b[None, :], mode="general",
                                   param_map=[0, 0, 1, 1, 2, 2])


# -- mass oscillator ---------------------------------------------------------

J1_CHOICES = (100, 300, 500, 700)
J2_CHOICES = (150, 350, 550, 750)
J3_CHOICES = (1400, 1700)
_REF_D = 900


def _scaled_index(j, d):
    """1-based reference index ``j`` (for ``d = 900``) rescaled to row length ``d``."""
    return max(1, int(round(j * d / _REF_D)))


def reference_mass_profile(d):
    """Masses for ``n = 2d+1`` with the reference profile's breakpoints scaled."""
    n = 2 * d + 1
    t = np.arange(1, n + 1) * (_REF_D / d)
    return np.where(t <= 450, 1000 - t / 2, np.where(t <= 900, t + 325, 1300 - t / 4))


@dataclass(frozen=True)
class OscillatorConfig:
    """Two rows of ``d`` masses coupled through one extra mass.

    ``damper_positions`` holds the 1-based reference indices ``(j1, j2, j3)``
    defined for ``d = 900``; they are rescaled to the actual ``d``.
    """

    d: int = 100
    k1: float = 500.0
    k2: float = 200.0
    k3: float = 300.0
    alpha_c: float = 0.02
    damper_positions: tuple = (100, 150, 1400)
    masses: tuple = None

    def __post_init__(self):
        if int(self.d) < 2:
            raise ValidationError("d must be >= 2")
        if min(self.k1, self.k2, self.k3) <= 0:
            raise ValidationError("stiffnesses must be positive")
        if self.alpha_c < 0:
            raise ValidationError("alpha_c must be nonnegative")
        if len(self.damper_positions) != 3:
            raise ValidationError("damper_positions must be (j1, j2, j3)")

    @property
    def n_masses(self):
        return 2 * int(self.d) + 1

    def damper_indices(self):
        """0-based columns of ``U2``: ``(j1, j1+o1, j2, j3, j3+o2)``."""
        d = int(self.d)
        j1, j2, j3 = (_scaled_index(j, d) for j in self.damper_positions)
        o1 = math.ceil(10 * d / _REF_D)
        o2 = math.ceil(100 * d / _REF_D)
        idx = (j1, j1 + o1, j2, j3, j3 + o2)
        n = self.n_masses
        if max(idx) > n:
            raise ValidationError(f"damper index {max(idx)} exceeds the number of masses {n}")
        return tuple(i - 1 for i in idx)

    def output_indices(self):
        d = int(self.d)
        i = _scaled_index(400, d)
        return (i - 1, d + i - 1)


@dataclass(frozen=True, eq=False)
class SecondOrderModel:
    M: np.ndarray
    K: np.ndarray
    D_int: np.ndarray
    B2: np.ndarray
    C2: np.ndarray
    U2: np.ndarray


@dataclass(frozen=True, eq=False)
class OscillatorModel:
    second_order: SecondOrderModel
    first_order: LowRankParametricSystem
    config: OscillatorConfig = field(repr=False, default=None)


def stiffness_matrix(d, k1, k2, k3):
    n = 2 * d + 1
    K = np.zeros((n, n))
    for off, k in ((0, k1), (d, k2)):
        idx = np.arange(off, off + d)
        K[idx, idx] = 2 * k
        K[idx[:-1], idx[1:]] = -k
        K[idx[1:], idx[:-1]] = -k
    K[d - 1, n - 1] = K[n - 1, d - 1] = -k1
    K[2 * d - 1, n - 1] = K[n - 1, 2 * d - 1] = -k2
    K[n - 1, n - 1] = k1 + k2 + k3
    return K


def critical_damping(M, K):
    """``2 M^{1/2} sqrt(M^{-1/2} K M^{-1/2}) M^{1/2}``."""
    Mh = sqrt_spd(M)
    Mih = np.linalg.inv(Mh)
    inner = Mih @ K @ Mih
    return 2.0 * Mh @ sqrt_spd(0.5 * (inner + inner.T)) @ Mh


def generate_oscillator(cfg=None):
    """Second- and first-order forms of the damped oscillator.

    The first-order system has ``E = diag(I, M)``,
    ``A0 = [[0, I], [-K, -D_int]]``, ``U = V = [0; U2]``, ``B = [0; B2]`` and
    ``C = [C2, 0]``, with gains in sqrt mode.

    Raises
    ------
    NotSPD
        ``M`` or ``K`` is not positive definite.
    """
    cfg = OscillatorConfig() if cfg is None else cfg
    d = int(cfg.d)
    n = cfg.n_masses
    masses = reference_mass_profile(d) if cfg.masses is None else np.asarray(cfg.masses, float)
    if masses.shape != (n,):
        raise DimensionMismatch(f"need {n} masses")
    M = np.diag(masses)
    K = stiffness_matrix(d, cfg.k1, cfg.k2, cfg.k3)
    sqrt_spd(K)  # positive definiteness check
    D_int = cfg.alpha_c * critical_damping(M, K)
    D_int = 0.5 * (D_int + D_int.T)

    B2 = np.zeros((n, 5))
    B2[0, 0], B2[1, 1] = 20.0, 10.0
    B2[d, 2], B2[d + 1, 3] = 20.0, 10.0
    B2[n - 1, 4] = 30.0
    C2 = np.zeros((2, n))
    for row, i in enumerate(cfg.output_indices()):
        C2[row, i] = 1.0
    a, a_off, b, c, c_off = cfg.damper_indices()
    U2 = np.zeros((n, 4))
    U2[a, 0], U2[a_off, 0] = 1.0, -1.0
    U2[b, 1] = 1.0
    U2[c, 2] = 1.0
    U2[c, 3], U2[c_off, 3] = 1.0, -1.0

    Z, I = np.zeros((n, n)), np.eye(n)
    E = np.block([[I, Z], [Z, M]])
    A0 = np.block([[Z, I], [-K, -D_int]])
    U = np.vstack([np.zeros((n, 4)), U2])
    B = np.vstack([np.zeros((n, 5)), B2])
    C = np.hstack([C2, np.zeros((2, n))])
    first = LowRankParametricSystem(E, A0, U, U.copy(), B, C, mode="sqrt")
    return OscillatorModel(SecondOrderModel(M, K, D_int, B2, C2, U2), first, cfg)


def damper_configurations():
    """The 32 reference placements ``(j1, j2, j3)``."""
    return list(itertools.product(J1_CHOICES, J2_CHOICES, J3_CHOICES))


def undamped_frequencies(M, K):
    """``sqrt`` of the generalized eigenvalues of ``(K, M)``, ascending."""
    w = sla.eigh(K, M, eigvals_only=True)
    return np.sqrt(np.clip(w, 0.0, None))


def oscillator_h3(second, s):
    """``s U2^T (s^2 M + s D_int + K)^{-1} U2`` evaluated directly."""
    M, D, K, U2 = second.M, second.D_int, second.K, second.U2
    return s * U2.T @ np.linalg.solve(s * s * M + s * D + K, U2.astype(complex))


# -- Matrix Market -----------------------------------------------------------

def load_matrix_market(path):
    """Read a real Matrix Market file (coordinate or array) into a dense array.

    Symmetric and skew-symmetric storage is expanded; ``pattern`` entries
    read as ones.

    Raises
    ------
    ParseError
        Malformed header or entry (message carries the line number).
    DimensionMismatch
        Fewer entries than announced.
    """
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    header = lines[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket" or header[1].lower() != "matrix":
        raise ParseError("missing '%%MatrixMarket matrix' banner", line=1)
    fmt, field_, sym = (h.lower() for h in header[2:])
    if fmt not in ("coordinate", "array"):
        raise ParseError(f"unsupported format {fmt!r}", line=1)
    if field_ not in ("real", "integer", "double", "pattern"):
        raise ParseError(f"unsupported field {field_!r}", line=1)
    if sym not in ("general", "symmetric", "skew-symmetric"):
        raise ParseError(f"unsupported symmetry {sym!r}", line=1)
    if fmt == "array" and field_ == "pattern":
        raise ParseError("pattern field requires coordinate format", line=1)

    body = ((i + 1, ln) for i, ln in enumerate(lines) if i > 0)
    body = [(no, ln.strip()) for no, ln in body if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise ParseError("missing size line", line=len(lines))
    size_no, size_line = body[0]
    try:
        dims = [int(x) for x in size_line.split()]
    except ValueError:
        raise ParseError(f"bad size line {size_line!r}", line=size_no) from None
    entries = body[1:]

    if fmt == "coordinate":
        if len(dims) != 3:
            raise ParseError("coordinate size line needs rows, cols, nnz", line=size_no)
        rows, cols, nnz = dims
        if min(rows, cols, nnz) < 0:
            raise ParseError("negative dimension", line=size_no)
        if len(entries) < nnz:
            raise DimensionMismatch(f"expected {nnz} entries, found {len(entries)}")
        if len(entries) > nnz:
            raise ParseError("more entries than announced", line=entries[nnz][0])
        X = np.zeros((rows, cols))
        want = 2 if field_ == "pattern" else 3
        for no, ln in entries:
            parts = ln.split()
            if len(parts) != want:
                raise ParseError(f"expected {want} fields, got {len(parts)}", line=no)
            try:
                i, j = int(parts[0]), int(parts[1])
                v = 1.0 if field_ == "pattern" else float(parts[2])
            except ValueError:
                raise ParseError(f"cannot parse entry {ln!r}", line=no) from None
            if not (1 <= i <= rows and 1 <= j <= cols):
                raise ParseError(f"index ({i}, {j}) out of range", line=no)
            if not math.isfinite(v):
                raise ParseError("non-finite value", line=no)
            X[i - 1, j - 1] += v
            if sym != "general" and i != j:
                X[j - 1, i - 1] += v if sym == "symmetric" else -v
        return X

    if len(dims) != 2:
        raise ParseError("array size line needs rows, cols", line=size_no)
    rows, cols = dims
    if sym == "general":
        positions = [(i, j) for j in range(cols) for i in range(rows)]
    else:
        if rows != cols:
            raise ParseError("symmetric array must be square", line=size_no)
        start = 0 if sym == "symmetric" else 1
        positions = [(i, j) for j in range(cols) for i in range(j + start, rows)]
    if len(entries) < len(positions):
        raise DimensionMismatch(f"expected {len(positions)} entries, found {len(entries)}")
    if len(entries) > len(positions):
        raise ParseError("more entries than announced", line=entries[len(positions)][0])
    X = np.zeros((rows, cols))
    for (no, ln), (i, j) in zip(entries, positions):
        try:
            v = float(ln.split()[0]) if len(ln.split()) == 1 else None
        except ValueError:
            v = None
        if v is None or not math.isfinite(v):
            raise ParseError(f"cannot parse value {ln!r}", line=no)
        X[i, j] = v
        if sym == "symmetric":
            X[j, i] = v
        elif sym == "skew-symmetric":
            X[j, i] = -v
    return X


def write_matrix_market(path, X, *, fmt="auto", comment=None):
    """Write a real matrix; ``fmt`` is 'coordinate', 'array' or 'auto'.

    'auto' picks coordinate storage when at most a third of the entries are
    nonzero.  Values are written with 17 significant digits, so a round trip
    is exact.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.ndim != 2:
        raise DimensionMismatch("only matrices can be written")
    rows, cols = X.shape
    nz = np.flatnonzero(X.T.ravel())
    if fmt == "auto":
        fmt = "coordinate" if nz.size * 3 <= X.size else "array"
    if fmt not in ("coordinate", "array"):
        raise ValidationError(f"unknown format {fmt!r}")
    out = [f"%%MatrixMarket matrix {fmt} real general"]
    if comment:
        out += ["% " + ln for ln in str(comment).splitlines()]
    if fmt == "coordinate":
        out.append(f"{rows} {cols} {nz.size}")
        Xt = X.T.ravel()
        for flat in nz:
            j, i = divmod(int(flat), rows)
            out.append(f"{i + 1} {j + 1} {Xt[flat]:.17g}")
    else:
        out.append(f"{rows} {cols}")
        out += [f"{v:.17g}" for v in X.T.ravel()]
    Path(path).write_text("\n".join(out) + "\n", encoding="ascii")


# -- thermal benchmark -------------------------------------------------------

def _diag_factor(D, name, tol=1e-14):
    off = D - np.diag(np.diag(D))
    if np.abs(off).max(initial=0.0) > tol * max(1.0, np.abs(D).max(initial=0.0)):
        raise NotDiagonal(f"{name} has off-diagonal entries")
    d = np.diag(D)
    idx = np.flatnonzero(d)
    return idx, d[idx]


def thermal_from_matrices(E, A, At, Ab, As, B, C, p_t=1000.0):
    """Two-parameter low-rank system ``A - p_t At - p_b Ab - p_s As``.

    Each nonzero diagonal entry ``d_j`` of ``Ab`` or ``As`` contributes the
    column ``sqrt|d_j| e_j`` to ``U`` and ``sign(d_j) sqrt|d_j| e_j`` to ``V``.
    """
    A = np.asarray(A, float)
    n = A.shape[0]
    cols_U, cols_V, pmap = [], [], []
    for group, (D, name) in enumerate(((Ab, "Ab"), (As, "As"))):
        idx, vals = _diag_factor(np.asarray(D, float), name)
        root = np.sqrt(np.abs(vals))
        for j, r, v in zip(idx, root, vals):
            u = np.zeros(n)
            u[j] = r
            cols_U.append(u)
            cols_V.append(np.sign(v) * u)
            pmap.append(group)
    if not cols_U:
        raise ValidationError("Ab and As are both zero")
    U = np.array(cols_U).T
    V = np.array(cols_V).T
    C = np.atleast_2d(np.asarray(C, float))
    if C.shape[1] != n and C.shape[0] == n:
        C = C.T
    return LowRankParametricSystem(E, A - p_t * np.asarray(At, float), U, V, B, C,
                                   mode="general", param_map=pmap)


def build_thermal(paths=None, p_t=1000.0):
    """Load the thermal benchmark from Matrix Market files.

    ``paths`` maps ``E, A, At, Ab, As, B, C`` to files, or is a directory
    holding ``<name>.mtx``; default is the directory named by the
    ``LRPMOR_THERMAL_DIR`` environment variable.
    """
    if paths is None:
        paths = os.environ.get(THERMAL_ENV)
        if not paths:
            raise ValidationError(f"set {THERMAL_ENV} or pass the benchmark file paths")
    if isinstance(paths, (str, os.PathLike)):
        root = Path(paths)
        paths = {k: root / f"{k}.mtx" for k in THERMAL_FILES}
    mats = {k: load_matrix_market(paths[k]) for k in THERMAL_FILES}
    return thermal_from_matrices(p_t=p_t, **mats)


def thermal_files_available(root=None):
    root = root or os.environ.get(THERMAL_ENV)
    return bool(root) and all((Path(root) / f"{k}.mtx").is_file() for k in THERMAL_FILES)


# -- error surfaces ----------------------------------------------------------

def _reduced_evaluator(model_or_factory):
    if isinstance(model_or_factory, ParametricReducedModel):
        return lambda pts, p: model_or_factory.freqresp(pts, p)
    if callable(model_or_factory):
        return lambda pts, p: model_or_factory(p).freqresp(pts)
    raise ValidationError("expected a ParametricReducedModel or a callable p -> system")


def frequency_error(full_values, red_values):
    """``max_i ||H_i - Hh_i||_2 / max_i ||H_i||_2``."""
    diff = np.linalg.norm(full_values - red_values, ord=2, axis=(1, 2))
    ref = np.linalg.norm(full_values, ord=2, axis=(1, 2))
    return float(diff.max() / ref.max())


def h2_error(psys, reduced_system, p, *, quadrature_points=None, window=None):
    """Absolute H2 norm of ``H(., p) - Hh(., p)``.

    For ``n <= 1000`` the error system is realized and one Lyapunov equation
    is solved; larger models integrate ``||H(iw) - Hh(iw)||_F^2`` on a log
    grid (trapezoid in ``log w``).
    """
    full = psys.at(p)
    n = full.n_states
    if quadrature_points is None and n <= 1000:
        Einv_A = full.A if full.identity_E else np.linalg.solve(full.E, full.A)
        Einv_B = full.B if full.identity_E else np.linalg.solve(full.E, full.B)
        A = sla.block_diag(Einv_A, reduced_system.A)
        B = np.vstack([Einv_B, reduced_system.B])
        C = np.hstack([full.C, -reduced_system.C])
        return h2_norm(StateSpaceSystem(A, B, C))
    npts = quadrature_points or 2000
    if window is None:
        window = frequency_window(reduced_system.poles(), 1e-3, 1e3)
    w = np.geomspace(window[0], window[1], npts)
    off = sample_subsystems(psys, 1j * w)
    H = resample_parametric(off, p).values
    Hh = reduced_system.freqresp(1j * w)
    f = np.sum(np.abs(H - Hh) ** 2, axis=(1, 2))
    u = np.log(w)
    integral = np.trapezoid(f * w, u) + f[0] * w[0]
    return float(np.sqrt(max(integral, 0.0) / np.pi))


def error_surface(psys, model_or_factory, param_grid, freq_grid=None, *, kind="frequency",
                  full_samples=None):
    """Relative reduction error for every parameter in ``param_grid``.

    ``kind='frequency'``: ``max_i ||H(iw_i;p) - Hh(iw_i;p)||_2 / max_i ||H(iw_i;p)||_2``
    over ``freq_grid``.  ``kind='h2'``: ``||H - Hh||_H2 / ||Hh||_H2``.

    ``model_or_factory`` is a :class:`ParametricReducedModel` or a callable
    returning a reduced :class:`StateSpaceSystem` for ``p``.  Returns a list
    of rows ``(p_1, ..., p_q, error)``.
    """
    grid = [np.atleast_1d(np.asarray(p, dtype=float)) for p in param_grid]
    if not grid:
        raise ValidationError("param_grid must be nonempty")
    rows = []
    if kind == "frequency":
        if freq_grid is None or len(freq_grid) == 0:
            raise ValidationError("freq_grid must be nonempty")
        pts = 1j * np.asarray(freq_grid, dtype=float)
        from .pmor import sample_subsystems, resample_parametric
        off = full_samples if full_samples is not None else sample_subsystems(psys, pts)
        red = _reduced_evaluator(model_or_factory)
        for p in grid:
            full_vals = resample_parametric(off, p).values
            rows.append(tuple(p) + (frequency_error(full_vals, red(pts, p)),))
    elif kind == "h2":
        for p in grid:
            if isinstance(model_or_factory, ParametricReducedModel):
                red_sys = assemble_realization(model_or_factory, p)
            else:
                red_sys = model_or_factory(p)
            err = h2_error(psys, red_sys, p)
            rows.append(tuple(p) + (err / h2_norm(red_sys),))
    else:
        raise ValidationError("kind must be 'frequency' or 'h2'")
    return [tuple(float(x) for x in row) for row in rows]


def write_csv(path, rows, header):
    """CSV with one header line and ``%.12e`` numbers."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{float(x):.12e}" if not isinstance(x, str) else x for x in row])


__all__ = ["generate_penzl", "OscillatorConfig", "OscillatorModel", "SecondOrderModel",
           "generate_oscillator", "damper_configurations", "undamped_frequencies",
           "reference_mass_profile", "stiffness_matrix", "critical_damping", "oscillator_h3",
           "load_matrix_market", "write_matrix_market", "thermal_from_matrices",
           "build_thermal", "thermal_files_available", "error_surface", "frequency_error",
           "h2_error", "write_csv", "THERMAL_ENV", "THERMAL_FILES"]
