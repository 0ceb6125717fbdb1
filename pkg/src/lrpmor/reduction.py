"""Square-root balanced truncation with Hankel singular values and error bound."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator

from .exceptions import OrderTooLarge, ValidationError
from .numerics import LyapunovSolver, psd_factor
from .systems import StateSpaceSystem

#: Hankel singular values below ``HSV_ZERO * hsv[0]`` count as zero.
HSV_ZERO = 1e-14
#: Relative gap below which neighbouring HSVs are treated as one cluster.
CLUSTER_RTOL = 1e-10


def gramians(sys, solver=None):
    """Controllability and (E-weighted) observability Gramians.

    ``P`` solves ``A P E^T + E P A^T + B B^T = 0`` and ``Q`` solves
    ``A^T Q E + E^T Q A + C^T C = 0``.
    """
    if solver is None:
        solver = LyapunovSolver(sys.A, None if sys.identity_E else sys.E)
    P = solver.solve(sys.B @ sys.B.T)
    Q = solver.solve_dual(sys.C.T @ sys.C)
    return P, Q


def hankel_singular_values(P, Q, E=None):
    """``sqrt(eig(P E^T Q E))`` sorted nonincreasing, negatives clipped."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    EQE = Q if E is None else E.T @ Q @ E
    # P EQE is similar to R^T EQE R with P = R R^T; the latter is symmetric
    R = psd_factor(P)
    if R.shape[1] == 0:
        return np.zeros(P.shape[0])
    lam = np.linalg.eigvalsh(R.T @ EQE @ R)
    hsv = np.sqrt(np.clip(lam, 0.0, None))[::-1]
    return np.concatenate((hsv, np.zeros(P.shape[0] - hsv.size)))


def _complete_cluster(hsv, r):
    """Grow ``r`` so that no group of equal HSVs is split."""
    while 0 < r < hsv.size and hsv[r] >= hsv[r - 1] * (1.0 - CLUSTER_RTOL):
        r += 1
    return r


def tail_bound(hsv, r):
    """``2 * sum(hsv[r:])``."""
    return float(2.0 * np.sum(hsv[r:]))


def order_for_tolerance(hsv, tol):
    """Smallest order whose truncation bound is at most ``tol``."""
    tails = 2.0 * np.concatenate((np.cumsum(hsv[::-1])[::-1], [0.0]))
    return int(np.flatnonzero(tails <= tol)[0])


@dataclass(frozen=True, eq=False)
class BTResult:
    """Outcome of a balanced truncation.

    ``truncate`` re-truncates at another order reusing the cached Gramian
    factors and SVD, which is what makes order escalation cheap.
    """

    reduced: StateSpaceSystem
    hsv: np.ndarray
    order: int
    error_bound: float
    numerical_rank: int
    _source: StateSpaceSystem = field(repr=False, default=None)
    _L: np.ndarray = field(repr=False, default=None)
    _R: np.ndarray = field(repr=False, default=None)
    _U: np.ndarray = field(repr=False, default=None)
    _s: np.ndarray = field(repr=False, default=None)
    _Zt: np.ndarray = field(repr=False, default=None)

    @property
    def full_order(self):
        return self.hsv.size

    def truncate(self, order=None, tol=None):
        """Truncate the same system at a different order or tolerance."""
        r = _resolve_order(self.hsv, self.numerical_rank, order, tol)
        return _project(self._source, self.hsv, self.numerical_rank, r,
                        self._L, self._R, self._U, self._s, self._Zt)


def _resolve_order(hsv, rank, order, tol):
    n = hsv.size
    if (order is None) == (tol is None):
        raise ValidationError("specify exactly one of order and tol")
    if order is not None:
        order = int(order)
        if order > n:
            raise OrderTooLarge(f"order {order} exceeds the state dimension {n}")
        if order < 1 and n > 0:
            raise ValidationError("order must be >= 1")
        r = order
    else:
        if not tol > 0:
            raise ValidationError("tol must be positive")
        r = order_for_tolerance(hsv, tol)
    if order is not None and r == n:
        return n
    r = _complete_cluster(hsv, r)
    return min(r, rank)


def _project(sys, hsv, rank, r, L, R, U, s, Zt):
    if r == 0:
        reduced = StateSpaceSystem(np.zeros((0, 0)), np.zeros((0, sys.n_inputs)),
                                   np.zeros((sys.n_outputs, 0)))
    elif r == sys.n_states:
        # no truncation: hand back the system itself in standard form
        if sys.identity_E:
            reduced = StateSpaceSystem(sys.A, sys.B, sys.C)
        else:
            lu = sla.lu_factor(sys.E)
            reduced = StateSpaceSystem(sla.lu_solve(lu, sys.A), sla.lu_solve(lu, sys.B), sys.C)
    else:
        scale = 1.0 / np.sqrt(s[:r])
        T = R @ (Zt[:r].T * scale)
        W = L @ (U[:, :r] * scale)
        Ar = W.T @ sys.A @ T
        Br = W.T @ sys.B
        Cr = sys.C @ T
        reduced = StateSpaceSystem(Ar, Br, Cr)
    return BTResult(reduced=reduced, hsv=hsv, order=r, error_bound=tail_bound(hsv, r),
                    numerical_rank=rank, _source=sys, _L=L, _R=R, _U=U, _s=s, _Zt=Zt)


def balanced_truncation(sys, order=None, tol=None, *, solver=None):
    """Reduce a stable system by square-root balanced truncation.

    Exactly one of ``order`` and ``tol`` must be given.  With ``tol`` the
    order is the smallest ``r`` with ``2 * sum(hsv[r:]) <= tol``.  The order
    is then grown so that a cluster of equal HSVs is never split, and capped
    at the numerical rank (number of HSVs above ``1e-14 * hsv[0]``).
    ``order`` equal to the state dimension skips truncation and returns the
    system itself in standard form, with error bound 0.

    Parameters
    ----------
    sys : StateSpaceSystem
    solver : LyapunovSolver, optional
        Pre-factored solver for ``(sys.A, sys.E)``; pass the same instance
        when reducing several systems that share ``A`` and ``E``.

    Raises
    ------
    UnstablePencil
        The system is not asymptotically stable.
    OrderTooLarge
        ``order`` exceeds the state dimension.
    """
    n = sys.n_states
    if order is not None and int(order) > n:
        raise OrderTooLarge(f"order {order} exceeds the state dimension {n}")
    if solver is None:
        solver = LyapunovSolver(sys.A, None if sys.identity_E else sys.E)
    R = solver.factor(sys.B)
    L = solver.factor_dual(sys.C)
    ELt = L.T if sys.identity_E else L.T @ sys.E
    if R.shape[1] and L.shape[1]:
        U, s, Zt = np.linalg.svd(ELt @ R, full_matrices=False)
    else:
        U, s, Zt = np.zeros((L.shape[1], 0)), np.zeros(0), np.zeros((0, R.shape[1]))
    hsv = np.zeros(n)
    hsv[:s.size] = s
    rank = int(np.sum(hsv > HSV_ZERO * hsv[0])) if n and hsv[0] > 0 else 0
    r = _resolve_order(hsv, rank, order, tol)
    return _project(sys, hsv, rank, r, L, R, U, s, Zt)


class BalancedTruncation(BaseEstimator):
    """Estimator wrapper around :func:`balanced_truncation`.

    ``fit`` takes a :class:`StateSpaceSystem`; ``predict`` evaluates the
    reduced transfer function at complex points.
    """

    def __init__(self, order=None, tol=None):
        self.order = order
        self.tol = tol

    def fit(self, sys, y=None):
        if not isinstance(sys, StateSpaceSystem):
            raise ValidationError("BalancedTruncation.fit expects a StateSpaceSystem")
        self.result_ = balanced_truncation(sys, order=self.order, tol=self.tol)
        self.reduced_ = self.result_.reduced
        self.hsv_ = self.result_.hsv
        self.order_ = self.result_.order
        self.error_bound_ = self.result_.error_bound
        return self

    def transform(self, sys=None):
        self._check_fitted()
        return self.reduced_

    def fit_transform(self, sys, y=None):
        return self.fit(sys).transform()

    def predict(self, points):
        self._check_fitted()
        return self.reduced_.freqresp(points)

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise ValidationError("estimator is not fitted")


__all__ = ["gramians", "hankel_singular_values", "psd_factor", "balanced_truncation",
           "BTResult", "BalancedTruncation", "tail_bound", "order_for_tolerance",
           "HSV_ZERO", "CLUSTER_RTOL"]
