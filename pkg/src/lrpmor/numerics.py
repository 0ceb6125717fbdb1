"""Dense linear-algebra kernels: Lyapunov equations, system norms, spectra.

All routines operate on dense ``numpy`` arrays and are intended for
desk-scale problems (a few thousand states at most).
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .exceptions import EvaluationFailure, NotSPD, SingularE, UnstablePencil, ValidationError
from .validation import as_real_matrix, check_square, is_identity

_EPS = np.finfo(float).eps
#: ``E`` with a 1-norm condition estimate above this is rejected as singular.
SINGULAR_E_LIMIT = 1.0 / np.sqrt(_EPS)
#: Above this condition estimate the pencil is not folded into ``E^{-1} A``.
FOLD_COND_LIMIT = 1e6


def _rcond_lu(lu, anorm):
    if lu.dtype.kind == "c":
        rcond, _ = lapack.zgecon(lu, anorm, norm="1")
    else:
        rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    return rcond


def _factor_E(E):
    """LU-factor ``E`` and return ``(lu_piv, condition_estimate)``."""
    with warnings.catch_warnings():
        # singularity is reported through the condition estimate below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(E, check_finite=False)
    anorm = np.abs(E).sum(axis=0).max()
    rcond = _rcond_lu(lu, anorm)
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if cond > SINGULAR_E_LIMIT:
        raise SingularE(f"E is numerically singular (condition estimate {cond:.3e})")
    return (lu, piv), cond


def _quasi_triangular_eigvals(T):
    """Eigenvalues of a real quasi-upper-triangular Schur factor."""
    n = T.shape[0]
    out = np.empty(n, dtype=complex)
    i = 0
    while i < n:
        if i + 1 < n and T[i + 1, i] != 0.0:
            out[i:i + 2] = np.linalg.eigvals(T[i:i + 2, i:i + 2])
            i += 2
        else:
            out[i] = T[i, i]
            i += 1
    return out


class LyapunovSolver:
    """Reusable solver for Lyapunov equations with a fixed pencil ``(A, E)``.

    One decomposition of the pencil is computed at construction and shared
    by every subsequent solve, which is what makes reducing several systems
    with common ``(E, A)`` but different ``B``/``C`` cheap.

    Parameters
    ----------
    A, E : ndarray
        Square real matrices; ``E=None`` means identity.
    method : {'auto', 'schur', 'qz'}
        ``'schur'`` folds ``E`` into ``E^{-1} A`` and uses the real Schur
        form (Bartels--Stewart).  ``'qz'`` works on the generalized Schur
        form of the pencil.  ``'auto'`` folds when ``cond(E) < 1e6``.
    check_stability : bool
        Raise :class:`UnstablePencil` when an eigenvalue has nonnegative
        real part.
    """

    def __init__(self, A, E=None, *, method="auto", check_stability=True):
        A = check_square(as_real_matrix(A, "A"), "A")
        n = A.shape[0]
        self.n = n
        self._lu = None
        cond = 1.0
        if E is not None:
            E = check_square(as_real_matrix(E, "E"), "E")
            if E.shape != A.shape:
                raise ValidationError("A and E must have the same shape")
            if is_identity(E):
                E = None
            else:
                self._lu, cond = _factor_E(E)
        self.cond_E = cond
        if method == "auto":
            method = "schur" if cond < FOLD_COND_LIMIT else "qz"
        if method not in ("schur", "qz"):
            raise ValidationError(f"unknown method {method!r}")
        if method == "qz" and E is None:
            E = np.eye(n)
        self.method = method
        if method == "schur":
            At = A if self._lu is None else sla.lu_solve(self._lu, A, check_finite=False)
            self._T, self._Z = sla.schur(At, output="real", check_finite=False)
            self.eigvals = _quasi_triangular_eigvals(self._T)
        else:
            S, T, Q, Z = sla.qz(A, E, output="complex", check_finite=False)
            self._S, self._Tq, self._Q, self._Zq = S, T, Q, Z
            self.eigvals = np.diag(S) / np.diag(T)
        if check_stability and n and np.max(self.eigvals.real) >= 0:
            raise UnstablePencil(
                f"pencil has an eigenvalue with real part {np.max(self.eigvals.real):.3e} >= 0")

    # E^{-1} X E^{-T}
    def _fold_sym(self, Q):
        if self._lu is None:
            return Q
        W = sla.lu_solve(self._lu, Q, check_finite=False)
        return sla.lu_solve(self._lu, W.T, check_finite=False).T

    # E^{-T} X E^{-1}
    def _unfold_dual(self, X):
        if self._lu is None:
            return X
        W = sla.lu_solve(self._lu, X, trans=1, check_finite=False)
        return sla.lu_solve(self._lu, W.T, trans=1, check_finite=False).T

    def solve(self, Q):
        """Return ``P`` with ``A P E^T + E P A^T + Q = 0``."""
        Q = as_real_matrix(Q, "Q")
        if self.method == "schur":
            F = self._Z.T @ self._fold_sym(Q) @ self._Z
            Y, scale, info = lapack.dtrsyl(self._T, self._T, -F, trana="N", tranb="T")
            if info < 0:
                raise ValidationError(f"dtrsyl: illegal argument {-info}")
            P = self._Z @ (Y / scale) @ self._Z.T
        else:
            P = self._solve_qz(Q)
        return 0.5 * (P + P.T)

    def solve_dual(self, Q):
        """Return ``X`` with ``A^T X E + E^T X A + Q = 0``."""
        Q = as_real_matrix(Q, "Q")
        if self.method == "schur":
            F = self._Z.T @ Q @ self._Z
            Y, scale, info = lapack.dtrsyl(self._T, self._T, -F, trana="T", tranb="N")
            if info < 0:
                raise ValidationError(f"dtrsyl: illegal argument {-info}")
            X = self._unfold_dual(self._Z @ (Y / scale) @ self._Z.T)
        else:
            X = self._solve_qz_dual(Q)
        return 0.5 * (X + X.T)

    def factor(self, B):
        """Factor ``R`` with ``R R^T = P`` solving ``A P E^T + E P A^T + B B^T = 0``.

        On the folded path the factor is computed directly (Hammarling), which
        keeps small Hankel singular values accurate; otherwise it comes from
        an eigendecomposition of the solved Gramian.
        """
        B = as_real_matrix(B, "B")
        if self.method != "schur":
            return psd_factor(self.solve(B @ B.T))
        Tc, Qc = self._complex_schur()
        Bt = B if self._lu is None else sla.lu_solve(self._lu, B, check_finite=False)
        U = _hammarling(Tc, Qc.conj().T @ Bt)
        return _realify_factor(Qc @ U)

    def factor_dual(self, C):
        """Factor ``L`` with ``L L^T = X`` solving ``A^T X E + E^T X A + C^T C = 0``."""
        C = as_real_matrix(C, "C")
        if self.method != "schur":
            return psd_factor(self.solve_dual(C.T @ C))
        Tc, Qc = self._complex_schur()
        # Y = E^T X E solves At^T Y + Y At + C^T C = 0; flipping the index
        # order turns the lower-triangular T^H into an upper-triangular one
        Tf = Tc.conj().T[::-1, ::-1]
        U = _hammarling(np.ascontiguousarray(Tf), (C @ Qc)[:, ::-1].conj().T)
        L = _realify_factor(Qc @ U[::-1])
        if self._lu is not None:
            L = sla.lu_solve(self._lu, L, trans=1, check_finite=False)
        return L

    def _complex_schur(self):
        if not hasattr(self, "_Tc"):
            self._Tc, self._Qc = sla.rsf2csf(self._T, self._Z, check_finite=False)
        return self._Tc, self._Qc

    def _solve_qz(self, Q):
        # S X T^H + T X S^H = -Q_z^H Q Q_z, column by column from the right
        S, T, Qz, Zz = self._S, self._Tq, self._Q, self._Zq
        n = self.n
        F = Qz.conj().T @ Q @ Qz
        X = np.zeros((n, n), dtype=complex)
        for j in range(n - 1, -1, -1):
            rhs = -F[:, j]
            if j < n - 1:
                Xr = X[:, j + 1:]
                rhs = rhs - S @ (Xr @ T[j, j + 1:].conj()) - T @ (Xr @ S[j, j + 1:].conj())
            M = T[j, j].conj() * S + S[j, j].conj() * T
            X[:, j] = sla.solve_triangular(M, rhs, lower=False, check_finite=False)
        return (Zz @ X @ Zz.conj().T).real

    def _solve_qz_dual(self, Q):
        # S^H Y T + T^H Y S = -Z_z^H Q Z_z, column by column from the left
        S, T, Qz, Zz = self._S, self._Tq, self._Q, self._Zq
        n = self.n
        G = Zz.conj().T @ Q @ Zz
        Sh, Th = S.conj().T, T.conj().T
        Y = np.zeros((n, n), dtype=complex)
        for j in range(n):
            rhs = -G[:, j]
            if j > 0:
                Yl = Y[:, :j]
                rhs = rhs - Sh @ (Yl @ T[:j, j]) - Th @ (Yl @ S[:j, j])
            M = T[j, j] * Sh + S[j, j] * Th
            Y[:, j] = sla.solve_triangular(M, rhs, lower=True, check_finite=False)
        return (Qz @ Y @ Qz.conj().T).real


def _hammarling(T, B):
    """Upper-triangular ``U`` with ``T X + X T^H + B B^H = 0`` for ``X = U U^H``.

    ``T`` is complex upper triangular with eigenvalues in the open left
    half-plane.  The recursion peels one trailing row at a time.
    """
    n = T.shape[0]
    B = np.array(B, dtype=complex)
    U = np.zeros((n, n), dtype=complex)
    for j in range(n - 1, -1, -1):
        lam = T[j, j]
        b = B[j]
        nb = np.linalg.norm(b)
        if nb == 0.0:
            continue
        root = np.sqrt(-2.0 * lam.real)
        mu = nb / root
        U[j, j] = mu
        if j == 0:
            break
        w = b * (root / nb)
        rhs = -(T[:j, j] * mu + B[:j] @ w.conj())
        M = T[:j, :j].copy()
        M[np.diag_indices(j)] += np.conj(lam)
        u = sla.solve_triangular(M, rhs, lower=False, check_finite=False)
        U[:j, j] = u
        B[:j] -= np.outer(u, w)
    return U


def _realify_factor(F):
    """Real square factor ``R`` with ``R R^T = Re(F F^H)``."""
    G = np.hstack([F.real, F.imag])
    Rt = np.linalg.qr(G.T, mode="r")
    return Rt.T


def psd_factor(P):
    """Factor ``R`` with ``P = R R^T`` from a symmetric eigendecomposition.

    Columns belonging to nonpositive eigenvalues (numerical noise of a
    semidefinite Gramian) are dropped.
    """
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    keep = w > 0
    return V[:, keep] * np.sqrt(w[keep])


def solve_lyapunov(A, E=None, Q=None, *, method="auto"):
    """Solve ``A P E^T + E P A^T + Q = 0`` for symmetric ``P``.

    Raises
    ------
    UnstablePencil
        If the pencil has an eigenvalue with nonnegative real part.
    SingularE
        If ``E`` is numerically singular.
    """
    if Q is None:
        raise ValidationError("Q is required")
    return LyapunovSolver(A, E, method=method).solve(Q)


def lyapunov_residual(A, E, P, Q):
    """Frobenius norm of ``A P E^T + E P A^T + Q``."""
    E = np.eye(A.shape[0]) if E is None else E
    R = A @ P @ E.T
    return np.linalg.norm(R + R.T + Q)


def h2_norm(sys, solver=None):
    """H2 norm ``sqrt(trace(C P C^T))`` of a stable :class:`StateSpaceSystem`.

    ``solver`` may be a precomputed :class:`LyapunovSolver` for ``(A, E)``.
    """
    if sys.n_states == 0:
        return 0.0
    if solver is None:
        solver = LyapunovSolver(sys.A, sys.E)
    P = solver.solve(sys.B @ sys.B.T)
    return float(np.sqrt(max(np.trace(sys.C @ P @ sys.C.T), 0.0)))


def _sigma_max(M):
    M = np.asarray(M)
    if M.ndim == 3:
        if M.shape[1] == 1 or M.shape[2] == 1:
            return np.sqrt(np.sum(np.abs(M) ** 2, axis=(1, 2)))
        return np.linalg.svd(M, compute_uv=False)[:, 0]
    if M.ndim < 2 or M.shape[0] == 1 or M.shape[1] == 1:
        return float(np.sqrt(np.sum(np.abs(M) ** 2)))
    return float(np.linalg.norm(M, 2))


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def linf_norm_estimate(evaluator, omega_min, omega_max, grid_points=400, *,
                       refine_rounds=3, vectorized=False, return_argmax=False):
    """Sampled estimate of ``sup_w ||G(i w)||_2``.

    The largest singular value is taken on ``w = 0`` plus a logarithmic grid
    over ``[omega_min, omega_max]``; the (up to three) highest local maxima
    are then refined by golden-section search in ``log w``.  Every refined
    value is an actual evaluation, so the estimate never exceeds the true
    supremum.

    Parameters
    ----------
    evaluator : callable
        Maps a frequency ``w`` to the complex matrix ``G(i w)``.  With
        ``vectorized=True`` it maps a 1-D array of frequencies to an array of
        shape ``(len(w), rows, cols)``.
    """
    if grid_points < 2:
        raise ValidationError("grid_points must be >= 2")
    if not (0 < omega_min < omega_max):
        raise ValidationError("need 0 < omega_min < omega_max")

    def evaluate(ws):
        ws = np.atleast_1d(np.asarray(ws, dtype=float))
        try:
            if vectorized:
                vals = np.asarray(evaluator(ws))
                out = np.atleast_1d(_sigma_max(vals))
            else:
                out = np.array([_sigma_max(evaluator(w)) for w in ws])
        except EvaluationFailure:
            raise
        except (np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
            raise EvaluationFailure(f"evaluator failed: {exc}") from exc
        if not np.all(np.isfinite(out)):
            raise EvaluationFailure("evaluator returned non-finite values")
        return out

    grid = np.geomspace(omega_min, omega_max, grid_points)
    vals = evaluate(np.concatenate(([0.0], grid)))
    best_val = float(vals.max())
    best_w = 0.0 if vals[0] >= vals[1:].max() else float(grid[np.argmax(vals[1:])])
    gvals = vals[1:]

    # local maxima of the log grid, highest first
    left = np.concatenate(([-np.inf], gvals[:-1]))
    right = np.concatenate((gvals[1:], [-np.inf]))
    peaks = np.flatnonzero((gvals >= left) & (gvals >= right))
    peaks = peaks[np.argsort(-gvals[peaks], kind="stable")][:3]

    logs = np.log(grid)
    for idx in peaks:
        lo = logs[max(idx - 1, 0)]
        hi = logs[min(idx + 1, grid_points - 1)]
        for _ in range(refine_rounds):
            a, b = lo, hi
            c = b - _GOLDEN * (b - a)
            d = a + _GOLDEN * (b - a)
            fc, fd = evaluate([np.exp(c), np.exp(d)])
            for _ in range(10):
                if fc >= fd:
                    b, d, fd = d, c, fc
                    c = b - _GOLDEN * (b - a)
                    fc = evaluate([np.exp(c)])[0]
                else:
                    a, c, fc = c, d, fd
                    d = a + _GOLDEN * (b - a)
                    fd = evaluate([np.exp(d)])[0]
            x, fx = (c, fc) if fc >= fd else (d, fd)
            if fx > best_val:
                best_val, best_w = float(fx), float(np.exp(x))
            half = b - a
            lo, hi = x - half, x + half
    if return_argmax:
        return best_val, best_w
    return best_val


def sqrt_spd(M):
    """Symmetric positive definite square root via ``eigh``.

    Raises
    ------
    NotSPD
        If ``M`` is not symmetric or has an eigenvalue ``<= 0``.
    """
    M = check_square(as_real_matrix(M, "M"), "M")
    scale = np.abs(M).max() if M.size else 0.0
    if np.abs(M - M.T).max(initial=0.0) > 1e-12 * max(scale, 1.0):
        raise NotSPD("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if M.size and w.min() <= 0:
        raise NotSPD(f"smallest eigenvalue {w.min():.3e} is not positive")
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


def eigenvalues(A, E=None):
    """Spectrum of ``A`` or of the pencil ``(A, E)`` (computed on ``E^{-1} A``)."""
    A = check_square(as_real_matrix(A, "A"), "A")
    if E is None:
        return np.linalg.eigvals(A)
    E = check_square(as_real_matrix(E, "E"), "E")
    if is_identity(E):
        return np.linalg.eigvals(A)
    lu, _ = _factor_E(E)
    return np.linalg.eigvals(sla.lu_solve(lu, A, check_finite=False))
