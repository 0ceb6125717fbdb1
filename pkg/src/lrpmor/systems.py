"""LTI systems, the low-rank parametric system and its SMW subsystem quartet.

The parametric state matrix is ``A(p) = A0 - U diag(p) V^T``.  Writing the
resolvent of ``s E - A(p)`` with the Sherman--Morrison--Woodbury identity
splits the transfer function into four parameter-free subsystems::

    H1 = C  (sE - A0)^{-1} B      H2 = C  (sE - A0)^{-1} U
    H3 = V^T (sE - A0)^{-1} U     H4 = V^T (sE - A0)^{-1} B

    H(s; p) = H1 - H2 D (I + D H3 D)^{-1} D H4,    D = diag(sqrt(p))

``mode='sqrt'`` uses the symmetric form above and requires ``p >= 0``;
``mode='general'`` uses ``H1 - H2 P (I + H3 P)^{-1} H4`` with
``P = diag(p)`` and accepts any sign.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .exceptions import (CouplingSingular, DimensionMismatch, NegativeParameter,
                         ResolventSingular, ValidationError)
from .numerics import _factor_E, _rcond_lu, linf_norm_estimate
from .validation import (as_real_matrix, as_param_vector, check_cols, check_rows,
                         check_square, freeze, is_identity)

PARAM_MODES = ("sqrt", "general")
_EPS = np.finfo(float).eps
# below this order a batched dense solve beats the Schur route
_SMALL = 30


def _lu_checked(M):
    """LU-factor ``M``; raise :class:`ResolventSingular` when singular."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(M, check_finite=False)
    n = M.shape[0]
    if n:
        rcond = _rcond_lu(lu, np.abs(M).sum(axis=0).max())
        if not rcond > n * _EPS:
            raise ResolventSingular(f"resolvent is singular (rcond={rcond:.2e})")
    return lu, piv


@dataclass(frozen=True, eq=False)
class StateSpaceSystem:
    """Dense realization ``E x' = A x + B w``, ``y = C x``.

    ``E=None`` (or an identity matrix) is stored as an explicit identity and
    flagged through :attr:`identity_E`.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray = None
    identity_E: bool = field(init=False, default=True)

    def __post_init__(self):
        A = check_square(as_real_matrix(self.A, "A"), "A")
        n = A.shape[0]
        B = check_rows(as_real_matrix(self.B, "B"), n, "B")
        C = check_cols(as_real_matrix(self.C, "C"), n, "C")
        if self.E is None:
            E, ident = np.eye(n), True
        else:
            E = check_square(as_real_matrix(self.E, "E"), "E")
            if E.shape != A.shape:
                raise DimensionMismatch("E and A must have the same shape")
            ident = is_identity(E)
            if not ident:
                _factor_E(E)
        for name, val in (("A", A), ("B", B), ("C", C), ("E", E)):
            object.__setattr__(self, name, freeze(val))
        object.__setattr__(self, "identity_E", ident)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]

    def __call__(self, s):
        return eval_transfer(self, s)

    def poles(self):
        if self.n_states == 0:
            return np.zeros(0, dtype=complex)
        if self.identity_E:
            return np.linalg.eigvals(self.A)
        return sla.eigvals(self.A, self.E)

    def is_stable(self, margin=0.0):
        p = self.poles()
        return bool(p.size == 0 or p.real.max() < -margin)

    def freqresp(self, points):
        """Transfer values at an array of complex points, shape ``(N, l, m)``."""
        points = np.atleast_1d(np.asarray(points, dtype=complex)).ravel()
        n = self.n_states
        out = np.empty((points.size, self.n_outputs, self.n_inputs), dtype=complex)
        if n == 0:
            out[:] = 0
            return out
        if n <= _SMALL:
            # batched solve; singularity is checked through finiteness
            M = points[:, None, None] * self.E[None] - self.A[None]
            try:
                X = np.linalg.solve(M, np.broadcast_to(self.B.astype(complex),
                                                       (points.size,) + self.B.shape))
            except np.linalg.LinAlgError as exc:
                raise ResolventSingular("resolvent is singular at a requested point") from exc
            if not np.all(np.isfinite(X)):
                raise ResolventSingular("resolvent is singular at a requested point")
            out[:] = self.C @ X
            return out
        T, S, rhs, CZ = self._triangular()
        Sd = np.ones(n) if S is None else np.diag(S)
        Td = np.diag(T)
        scale = np.abs(T).max() + (1.0 if S is None else np.abs(S).max()) * np.abs(points).max()
        for i, s in enumerate(points):
            d = s * Sd - Td
            if np.abs(d).min() <= n * _EPS * scale:
                raise ResolventSingular(f"resolvent is singular at s = {s!r}")
            M = -T if S is None else s * S - T
            if S is None:
                M = M.copy()
                M[np.diag_indices(n)] = d
            out[i] = CZ @ sla.solve_triangular(M, rhs, check_finite=False)
        return out

    def _triangular(self):
        """Cached complex (generalized) Schur form: ``(T, S, Q^H B, C Z)``.

        ``s E - A = Q (s S - T) Z^H`` with ``S = None`` standing for the
        identity when ``E = I`` (then ``Q = Z``).
        """
        cached = self.__dict__.get("_tri")
        if cached is None:
            if self.identity_E:
                T, Z = sla.schur(self.A, output="complex")
                cached = (T, None, Z.conj().T @ self.B, self.C @ Z)
            else:
                T, S, Q, Z = sla.qz(self.A, self.E, output="complex")
                cached = (T, S, Q.conj().T @ self.B, self.C @ Z)
            object.__setattr__(self, "_tri", cached)
        return cached

    def to_dict(self):
        d = {"A": self.A, "B": self.B, "C": self.C}
        if not self.identity_E:
            d["E"] = self.E
        return d


def eval_transfer(sys, s):
    """``C (s E - A)^{-1} B`` through a single LU factorization."""
    if sys.n_states == 0:
        return np.zeros((sys.n_outputs, sys.n_inputs), dtype=complex)
    M = complex(s) * sys.E - sys.A
    lu = _lu_checked(M)
    return sys.C @ sla.lu_solve(lu, sys.B.astype(complex), check_finite=False)


def _check_mode(mode):
    if mode not in PARAM_MODES:
        raise ValidationError(f"mode must be one of {PARAM_MODES}, got {mode!r}")
    return mode


@dataclass(frozen=True, eq=False)
class LowRankParametricSystem:
    """Full-order model with ``A(p) = A0 - U diag(p_int) V^T``.

    Parameters
    ----------
    E, A0, U, V, B, C : ndarray
        System matrices; ``U`` and ``V`` are ``n x k``.
    mode : {'sqrt', 'general'}
        Form of the SMW coupling, see the module docstring.
    param_map : array of int, optional
        Length-``k`` map from the internal low-rank slots to the user-facing
        parameter vector (``p_int = p[param_map]``).  Defaults to the
        identity, i.e. one parameter per column of ``U``.
    """

    E: np.ndarray
    A0: np.ndarray
    U: np.ndarray
    V: np.ndarray
    B: np.ndarray
    C: np.ndarray
    mode: str = "sqrt"
    param_map: np.ndarray = None
    identity_E: bool = field(init=False, default=True)

    def __post_init__(self):
        A0 = check_square(as_real_matrix(self.A0, "A0"), "A0")
        n = A0.shape[0]
        if self.E is None:
            E = np.eye(n)
        else:
            E = check_square(as_real_matrix(self.E, "E"), "E")
            if E.shape != A0.shape:
                raise DimensionMismatch("E and A0 must have the same shape")
        ident = is_identity(E)
        if not ident:
            _factor_E(E)
        U = check_rows(as_real_matrix(self.U, "U"), n, "U")
        V = check_rows(as_real_matrix(self.V, "V"), n, "V")
        if U.shape != V.shape:
            raise DimensionMismatch("U and V must have the same shape")
        B = check_rows(as_real_matrix(self.B, "B"), n, "B")
        C = check_cols(as_real_matrix(self.C, "C"), n, "C")
        k = U.shape[1]
        if self.param_map is None:
            pmap = np.arange(k)
        else:
            pmap = np.asarray(self.param_map, dtype=int).ravel()
            if pmap.shape != (k,):
                raise DimensionMismatch(f"param_map must have length {k}")
            if pmap.min(initial=0) < 0:
                raise ValidationError("param_map entries must be nonnegative")
        for name, val in (("E", E), ("A0", A0), ("U", U), ("V", V), ("B", B), ("C", C),
                          ("param_map", pmap)):
            object.__setattr__(self, name, freeze(val))
        object.__setattr__(self, "mode", _check_mode(self.mode))
        object.__setattr__(self, "identity_E", ident)

    @property
    def n_states(self):
        return self.A0.shape[0]

    @property
    def k(self):
        """Rank of the low-rank term (number of internal parameter slots)."""
        return self.U.shape[1]

    @property
    def n_params(self):
        return int(self.param_map.max()) + 1 if self.k else 0

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]

    def expand(self, p):
        """Map a user-facing parameter vector to the ``k`` internal slots."""
        return expand_params(p, self.param_map, self.mode)

    def A_of(self, p):
        """Explicitly assembled ``A(p)``."""
        q = self.expand(p)
        return self.A0 - (self.U * q) @ self.V.T

    def at(self, p):
        """Nonparametric :class:`StateSpaceSystem` at a fixed parameter."""
        return StateSpaceSystem(self.A_of(p), self.B, self.C, None if self.identity_E else self.E)


def expand_params(p, param_map, mode):
    """Expand ``p`` through ``param_map``; enforce ``p >= 0`` in sqrt mode."""
    param_map = np.asarray(param_map, dtype=int)
    n_params = int(param_map.max()) + 1 if param_map.size else 0
    p = as_param_vector(p, n_params)
    if mode == "sqrt" and np.any(p < 0):
        raise NegativeParameter(f"sqrt mode requires p >= 0, got min {p.min():.3e}")
    return p[param_map]


@dataclass(frozen=True, eq=False)
class SubsystemQuartet:
    """The four nonparametric subsystems sharing ``(E, A0)``."""

    H1: StateSpaceSystem
    H2: StateSpaceSystem
    H3: StateSpaceSystem
    H4: StateSpaceSystem

    def __iter__(self):
        return iter((self.H1, self.H2, self.H3, self.H4))


def subsystems(psys):
    """Split ``psys`` into ``H1:(B,C)``, ``H2:(U,C)``, ``H3:(U,V^T)``, ``H4:(B,V^T)``."""
    E = None if psys.identity_E else psys.E
    A0 = psys.A0
    Vt = psys.V.T
    return SubsystemQuartet(
        StateSpaceSystem(A0, psys.B, psys.C, E),
        StateSpaceSystem(A0, psys.U, psys.C, E),
        StateSpaceSystem(A0, psys.U, Vt, E),
        StateSpaceSystem(A0, psys.B, Vt, E),
    )


def eval_parametric_direct(psys, s, p):
    """Reference evaluation of ``C (sE - A(p))^{-1} B`` from the dense ``A(p)``."""
    M = complex(s) * psys.E - psys.A_of(p)
    lu = _lu_checked(M)
    return psys.C @ sla.lu_solve(lu, psys.B.astype(complex), check_finite=False)


def _coupling(H3, q, mode):
    """Middle factor ``M`` of ``H1 - H2 M H4`` for (batched) ``H3`` values.

    ``sqrt``: ``D (I + D H3 D)^{-1} D``; ``general``: ``P (I + H3 P)^{-1}``.
    """
    k = q.size
    I = np.eye(k)
    if mode == "sqrt":
        d = np.sqrt(q)
        G = I + d[:, None] * H3 * d
        rhs = np.ascontiguousarray(np.broadcast_to(np.diag(d).astype(complex), G.shape))
        return d[:, None] * _solve_coupling(G, rhs)
    G = I + H3 * q
    # P (I + H3 P)^{-1} = ((I + P H3^T)^{-1} P)^T; solve the transposed form
    Gt = np.swapaxes(G, -1, -2)
    rhs = np.broadcast_to(np.diag(q).astype(complex), G.shape)
    X = _solve_coupling(Gt, np.ascontiguousarray(rhs))
    return np.swapaxes(X, -1, -2)


def _solve_coupling(G, rhs):
    k = G.shape[-1]
    if k == 0:
        return np.zeros(G.shape, dtype=complex)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(G)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1.0 / (k * _EPS)):
        raise CouplingSingular("coupling matrix I + D H3 D is numerically singular")
    return np.linalg.solve(G, rhs)


def eval_parametric_smw(H1, H2, H3, H4, p, mode="sqrt", param_map=None):
    """SMW combination of subsystem values at a fixed ``s`` (or batched).

    ``H1..H4`` are complex arrays of shapes ``(l, m)``, ``(l, k)``,
    ``(k, k)``, ``(k, m)``, optionally with a leading batch axis.  ``p`` is
    expanded through ``param_map`` (identity by default).

    Raises
    ------
    NegativeParameter
        ``p < 0`` in sqrt mode.
    CouplingSingular
        The ``k x k`` coupling matrix is numerically singular.
    """
    _check_mode(mode)
    H1, H2, H3, H4 = (np.asarray(h, dtype=complex) for h in (H1, H2, H3, H4))
    if H3.ndim < 2:
        H1, H2, H3, H4 = (np.atleast_2d(h) for h in (H1, H2, H3, H4))
    k = H3.shape[-1]
    if param_map is None:
        param_map = np.arange(k)
    q = expand_params(p, param_map, mode)
    if not np.any(q):
        return H1.copy()
    M = _coupling(H3, q, mode)
    return H1 - H2 @ M @ H4


@dataclass(frozen=True, eq=False)
class ParametricReducedModel:
    """Four reduced subsystems plus the rule that reassembles ``H(s; p)``.

    Each subsystem carries an identity ``E``.  Construction checks that all
    four are asymptotically stable unless ``check_stability=False`` (used
    when loading externally produced bundles for verification).
    """

    Hh1: StateSpaceSystem
    Hh2: StateSpaceSystem
    Hh3: StateSpaceSystem
    Hh4: StateSpaceSystem
    mode: str = "sqrt"
    param_map: np.ndarray = None
    check_stability: bool = True

    def __post_init__(self):
        _check_mode(self.mode)
        subs = (self.Hh1, self.Hh2, self.Hh3, self.Hh4)
        if any(not h.identity_E for h in subs):
            raise ValidationError("reduced subsystems must carry identity E")
        k = self.Hh3.n_inputs
        if self.Hh3.n_outputs != k:
            raise DimensionMismatch("Hh3 must be square")
        if (self.Hh2.n_inputs != k or self.Hh4.n_outputs != k
                or self.Hh2.n_outputs != self.Hh1.n_outputs
                or self.Hh4.n_inputs != self.Hh1.n_inputs):
            raise DimensionMismatch("inconsistent subsystem input/output dimensions")
        pmap = np.arange(k) if self.param_map is None else np.asarray(self.param_map, dtype=int)
        if pmap.shape != (k,):
            raise DimensionMismatch(f"param_map must have length {k}")
        object.__setattr__(self, "param_map", freeze(pmap.copy()))
        if self.check_stability:
            for i, h in enumerate(subs, 1):
                if not h.is_stable():
                    raise ValidationError(f"reduced subsystem H{i} is not asymptotically stable")

    @property
    def orders(self):
        return tuple(h.n_states for h in self.subsystems)

    @property
    def subsystems(self):
        return (self.Hh1, self.Hh2, self.Hh3, self.Hh4)

    @property
    def k(self):
        return self.Hh3.n_inputs

    @property
    def n_params(self):
        return int(self.param_map.max()) + 1 if self.k else 0

    def expand(self, p):
        return expand_params(p, self.param_map, self.mode)

    def __call__(self, s, p):
        return eval_reduced(self, s, p)

    def freqresp(self, points, p):
        vals = [h.freqresp(points) for h in self.subsystems]
        return eval_parametric_smw(*vals, p, self.mode, self.param_map)


def eval_reduced(model, s, p):
    """``Hh(s; p)`` from the four reduced subsystems."""
    vals = [eval_transfer(h, s) for h in model.subsystems]
    return eval_parametric_smw(*vals, p, model.mode, model.param_map)


def assemble_realization(model, p):
    """State-space realization of ``Hh(s; p)`` of order ``r1 + r2 + r3 + r4``.

    States are ordered ``(x1, x2, x3, x4)``; with ``P = diag(p_int)``
    (``= D^2`` in sqrt mode)::

        x1' = A1 x1 + B1 w
        x2' = A2 x2 - B2 P C3 x3 + B2 P C4 x4
        x3' = (A3 - B3 P C3) x3 + B3 P C4 x4
        x4' = A4 x4 + B4 w
        y   = C1 x1 - C2 x2
    """
    q = model.expand(p)
    H1, H2, H3, H4 = model.subsystems
    r1, r2, r3, r4 = model.orders
    n = r1 + r2 + r3 + r4
    o1, o2, o3, o4 = 0, r1, r1 + r2, r1 + r2 + r3
    A = np.zeros((n, n))
    A[o1:o2, o1:o2] = H1.A
    A[o2:o3, o2:o3] = H2.A
    B2P = H2.B * q
    B3P = H3.B * q
    A[o2:o3, o3:o4] = -B2P @ H3.C
    A[o2:o3, o4:] = B2P @ H4.C
    A[o3:o4, o3:o4] = H3.A - B3P @ H3.C
    A[o3:o4, o4:] = B3P @ H4.C
    A[o4:, o4:] = H4.A
    m = H1.n_inputs
    B = np.zeros((n, m))
    B[o1:o2] = H1.B
    B[o4:] = H4.B
    C = np.zeros((H1.n_outputs, n))
    C[:, o1:o2] = H1.C
    C[:, o2:o3] = -H2.C
    return StateSpaceSystem(A, B, C)


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    worst_real_part: float
    offending_p: tuple = None
    n_samples: int = 0

    def to_dict(self):
        return {"stable": self.stable, "worst_real_part": self.worst_real_part,
                "offending_p": None if self.offending_p is None else list(self.offending_p),
                "n_samples": self.n_samples}


def reduced_spectrum(model, p, *, expanded=False):
    """Eigenvalues of ``A1``, ``A2``, ``A4`` and ``A3 - B3 P C3``.

    ``expanded=True`` means ``p`` is already given per low-rank slot.
    """
    q = np.asarray(p, dtype=float) if expanded else model.expand(p)
    H1, H2, H3, H4 = model.subsystems
    coupled = H3.A - (H3.B * q) @ H3.C
    parts = [h.A for h in (H1, H2, H4)] + [coupled]
    return np.concatenate([np.linalg.eigvals(a) if a.size else np.zeros(0, complex) for a in parts])


def check_uniform_stability(model, param_samples, margin=1e-10):
    """Verify uniform asymptotic stability over a finite set of parameters.

    The parameter-independent poles (``H1``, ``H2``, ``H4``) are checked
    once; the zeros of ``I + D H3 D`` are recomputed for every sample.
    """
    samples = [np.atleast_1d(np.asarray(p, dtype=float)) for p in param_samples]
    if not samples:
        raise ValidationError("param_samples must be nonempty")
    H1, H2, H3, H4 = model.subsystems
    fixed = [np.linalg.eigvals(h.A) for h in (H1, H2, H4) if h.n_states]
    worst_fixed = max((float(e.real.max()) for e in fixed), default=-np.inf)
    worst, offending = worst_fixed, None
    if worst_fixed >= -margin:
        offending = tuple(samples[0])
    for p in samples:
        q = model.expand(p)
        if H3.n_states:
            z = np.linalg.eigvals(H3.A - (H3.B * q) @ H3.C)
            w = float(z.real.max())
            if w > worst:
                worst = w
                if w >= -margin:
                    offending = tuple(float(x) for x in p)
    return StabilityReport(stable=bool(worst < -margin), worst_real_part=float(worst),
                           offending_p=offending, n_samples=len(samples))


@dataclass(frozen=True)
class PositiveRealReport:
    passed: bool
    min_herm_eig: float
    argmin_omega: float = None

    def to_dict(self):
        return {"passed": self.passed, "min_herm_eig": self.min_herm_eig,
                "argmin_omega": self.argmin_omega}


def default_frequency_grid(sys, grid_points=400):
    """Log grid from ``0.01 min|pole|`` to ``100 max|pole|`` (plus ``w = 0``)."""
    lo, hi = frequency_window(sys.poles())
    return np.concatenate(([0.0], np.geomspace(lo, hi, grid_points)))


def frequency_window(poles, lo_factor=1e-2, hi_factor=1e2):
    mag = np.abs(np.asarray(poles))
    mag = mag[mag > 0]
    if mag.size == 0:
        return 1e-2, 1e2
    return lo_factor * mag.min(), hi_factor * mag.max()


def check_positive_real_sampled(sys, freq_grid=None, tol=1e-10):
    """Sampled necessary condition for positive realness of a square system.

    Passes iff ``lambda_min((H(iw) + H(iw)^H) / 2) >= -tol`` on the grid.
    """
    if sys.n_inputs != sys.n_outputs:
        raise DimensionMismatch("positive realness requires a square system")
    grid = default_frequency_grid(sys) if freq_grid is None else np.asarray(freq_grid, dtype=float)
    vals = sys.freqresp(1j * grid)
    herm = 0.5 * (vals + np.conj(np.swapaxes(vals, 1, 2)))
    mins = np.linalg.eigvalsh(herm)[:, 0]
    i = int(np.argmin(mins))
    return PositiveRealReport(passed=bool(mins[i] >= -tol), min_herm_eig=float(mins[i]),
                              argmin_omega=float(grid[i]))


@dataclass(frozen=True)
class HinfBoundReport:
    passed: bool
    norm_estimate: float
    bound: float

    def to_dict(self):
        return {"passed": self.passed, "norm_estimate": self.norm_estimate, "bound": self.bound}


def check_hinf_bound(sys, p_max, omega_window=None, grid_points=400):
    """Check the sufficient stability condition ``||H3||_inf < 1 / p_max``."""
    if not p_max > 0:
        raise ValidationError("p_max must be positive")
    lo, hi = frequency_window(sys.poles()) if omega_window is None else omega_window
    est = linf_norm_estimate(sys.freqresp, lo, hi, grid_points,
                             vectorized=True) if sys.n_states <= 200 else \
        linf_norm_estimate(lambda w: eval_transfer(sys, 1j * w), lo, hi, grid_points)
    bound = 1.0 / p_max
    return HinfBoundReport(passed=bool(est < bound), norm_estimate=float(est), bound=bound)


def hinf_norm(sys, omega_window=None, grid_points=400):
    """Sampled H-infinity norm estimate of a stable system."""
    if sys.n_states == 0:
        return 0.0
    lo, hi = frequency_window(sys.poles()) if omega_window is None else omega_window
    if sys.n_states <= 200:
        return linf_norm_estimate(lambda w: sys.freqresp(1j * w), lo, hi, grid_points,
                                  vectorized=True)
    return linf_norm_estimate(lambda w: eval_transfer(sys, 1j * w), lo, hi, grid_points)


__all__ = [
    "StateSpaceSystem", "LowRankParametricSystem", "SubsystemQuartet", "ParametricReducedModel",
    "StabilityReport", "PositiveRealReport", "HinfBoundReport",
    "eval_transfer", "subsystems", "eval_parametric_direct", "eval_parametric_smw",
    "eval_reduced", "assemble_realization", "reduced_spectrum", "check_uniform_stability",
    "check_positive_real_sampled", "check_hinf_bound", "hinf_norm", "expand_params",
    "default_frequency_grid", "frequency_window",
]
