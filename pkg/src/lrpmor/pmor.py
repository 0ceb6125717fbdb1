"""End-to-end parametric reduction pipelines.

* subsystem balanced truncation: reduce the four SMW subsystems once, then
  reassemble for any parameter, with an a-posteriori error estimate;
* sampling + vector fitting: sample the four subsystems once on a set of
  frequency points, resample for a parameter at cost independent of ``n``,
  and fit a rational model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator

from .exceptions import ResolventSingular, UnstablePencil, ValidationError
from .numerics import LyapunovSolver, eigenvalues, linf_norm_estimate
from .reduction import balanced_truncation
from .systems import (LowRankParametricSystem, ParametricReducedModel, _coupling, _lu_checked,
                      eval_parametric_smw, frequency_window, reduced_spectrum, subsystems)
from .vectfit import FrequencySampleSet, vector_fit
from .validation import freeze

_EPS = np.finfo(float).eps
SUBSYSTEM_NAMES = ("H1", "H2", "H3", "H4")


@dataclass(frozen=True)
class Alg1Config:
    """Targets for the four subsystem reductions and the bound evaluation.

    ``orders`` entries that are not ``None`` take precedence over ``tol``.
    ``bound_window=None`` picks the bound's frequency window per parameter
    from the poles of the reduced model (``[1e-2 min|pole|, 1e2 max|pole|]``).
    """

    tol: object = 1e-6
    orders: tuple = None
    bound_window: tuple = None
    grid_points: int = 400

    def targets(self):
        tols = self.tol if isinstance(self.tol, (tuple, list)) else (self.tol,) * 4
        orders = self.orders if self.orders is not None else (None,) * 4
        if len(tols) != 4 or len(orders) != 4:
            raise ValidationError("need four targets (one per subsystem)")
        out = []
        for t, o in zip(tols, orders):
            if o is not None:
                if int(o) < 1:
                    raise ValidationError("orders must be positive")
                out.append((int(o), None))
            else:
                if t is None or not float(t) > 0:
                    raise ValidationError("tolerances must be positive")
                out.append((None, float(t)))
        return out


@dataclass(frozen=True, eq=False)
class ErrorBoundData:
    """Per-subsystem truncation bounds and the cached reductions behind them."""

    eps: np.ndarray
    bt_results: tuple = field(repr=False, default=None)
    full: object = field(repr=False, default=None)

    @property
    def orders(self):
        return tuple(r.order for r in self.bt_results)

    @property
    def full_orders(self):
        return tuple(r.numerical_rank for r in self.bt_results)


def _model_from(bt_results, psys):
    return ParametricReducedModel(*(r.reduced for r in bt_results), mode=psys.mode,
                                  param_map=psys.param_map)


def reduce_subsystems(psys, cfg=None):
    """Balanced truncation of each SMW subsystem of ``psys``.

    A single decomposition of the pencil ``(A0, E)`` is shared by all eight
    Lyapunov solves.  Returns ``(model, bound_data)``.

    Raises
    ------
    UnstablePencil
        ``(A0, E)`` is unstable; the message names the subsystems affected.
    """
    cfg = Alg1Config() if cfg is None else cfg
    quartet = subsystems(psys)
    try:
        solver = LyapunovSolver(psys.A0, None if psys.identity_E else psys.E)
    except UnstablePencil as exc:
        raise UnstablePencil(f"subsystems H1..H4 share an unstable pencil: {exc}") from exc
    results = []
    for name, h, (order, tol) in zip(SUBSYSTEM_NAMES, quartet, cfg.targets()):
        if order is not None:
            order = min(order, h.n_states)
        try:
            results.append(balanced_truncation(h, order=order, tol=tol, solver=solver))
        except UnstablePencil as exc:
            raise UnstablePencil(f"{name}: {exc}") from exc
    eps = np.array([r.error_bound for r in results])
    data = ErrorBoundData(eps=freeze(eps), bt_results=tuple(results), full=quartet)
    return _model_from(results, psys), data


def escalate(psys, data, fraction, which=(0, 1, 2, 3)):
    """Grow the selected reduced orders by ``fraction`` (at least one state).

    Reuses the cached Gramian factors; orders are capped at the numerical
    rank of each subsystem.  Returns ``(model, data, grew)``.
    """
    results = list(data.bt_results)
    grew = False
    for i in which:
        r = results[i]
        new = min(r.order + max(1, math.ceil(fraction * r.order)), r.numerical_rank)
        if new > r.order:
            results[i] = r.truncate(order=new)
            grew = True
    eps = freeze(np.array([r.error_bound for r in results]))
    new_data = replace(data, eps=eps, bt_results=tuple(results))
    return _model_from(results, psys), new_data, grew


def _bound_window(model, q, grid_window):
    if grid_window is not None:
        return grid_window
    poles = reduced_spectrum(model, q, expanded=True)
    return frequency_window(poles)


def error_bound_f(p, model, bound, window=None, grid_points=400, *, exact=False):
    """Estimated error bound ``f(p)`` for the reassembled reduced model.

    ``f = eps1 + eps2 f1 + eps3 f1 f2 + eps4 f2`` with
    ``f1 = ||M(Hh3) Hh4||_inf`` and ``f2 = ||Hh2 M(Hh3)||_inf``, where
    ``M(G) = D (I + D G D)^{-1} D`` (or ``P (I + G P)^{-1}`` in general
    mode).  Both norms are sampled estimates.  With ``exact=True`` the
    factor ``f2`` uses the full-order ``H2`` and ``H3`` (validation only;
    costs one ``n``-dimensional solve per frequency).

    Raises
    ------
    CouplingSingular
        ``I + D Hh3 D`` is singular on the grid.
    """
    eps = np.asarray(bound.eps, dtype=float)
    q = model.expand(p)
    if not np.any(eps):
        return 0.0
    if not np.any(q):
        return float(eps[0])
    lo, hi = _bound_window(model, q, window)
    H2, H3, H4 = model.Hh2, model.Hh3, model.Hh4
    mode = model.mode

    def f1_eval(w):
        s = 1j * np.atleast_1d(w)
        return _coupling(H3.freqresp(s), q, mode) @ H4.freqresp(s)

    if exact:
        F2, F3 = bound.full.H2, bound.full.H3

        def f2_eval(w):
            s = 1j * np.atleast_1d(w)
            return F2.freqresp(s) @ _coupling(F3.freqresp(s), q, mode)
    else:
        def f2_eval(w):
            s = 1j * np.atleast_1d(w)
            return H2.freqresp(s) @ _coupling(H3.freqresp(s), q, mode)

    f1 = linf_norm_estimate(f1_eval, lo, hi, grid_points, vectorized=True)
    f2 = linf_norm_estimate(f2_eval, lo, hi, grid_points, vectorized=True)
    return float(eps[0] + eps[1] * f1 + eps[2] * f1 * f2 + eps[3] * f2)


# -- sampling pipeline -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OfflineSamples:
    """Subsystem values on a shared point list.

    Only ``k``, ``m`` and ``l`` sized objects are stored: nothing here scales
    with the state dimension.
    """

    points: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    H3: np.ndarray
    H4: np.ndarray
    mode: str = "sqrt"
    param_map: np.ndarray = None

    def __post_init__(self):
        N = np.asarray(self.points).size
        for name in ("H1", "H2", "H3", "H4"):
            if np.asarray(getattr(self, name)).shape[0] != N:
                raise ValidationError(f"{name} must hold one value per point")
        if self.param_map is None:
            object.__setattr__(self, "param_map", np.arange(np.asarray(self.H3).shape[-1]))
        for name in ("points", "H1", "H2", "H3", "H4", "param_map"):
            object.__setattr__(self, name, freeze(np.array(getattr(self, name))))

    @property
    def n_points(self):
        return self.points.size

    @property
    def n_params(self):
        return int(self.param_map.max()) + 1 if self.param_map.size else 0


def sample_subsystems(psys, points):
    """Evaluate all four subsystems at ``points`` with one LU per point.

    Each ``xi E - A0`` is factored once and solved against ``[B U]``; the
    four values follow from multiplying by ``C`` and ``V^T``.

    Raises
    ------
    ResolventSingular
        Some ``xi`` is (numerically) an eigenvalue of ``(A0, E)``.
    """
    points = np.atleast_1d(np.asarray(points, dtype=complex)).ravel()
    m, k = psys.n_inputs, psys.k
    l = psys.n_outputs
    N = points.size
    rhs = np.hstack([psys.B, psys.U]).astype(complex)
    out = [np.empty((N, l, m), complex), np.empty((N, l, k), complex),
           np.empty((N, k, k), complex), np.empty((N, k, m), complex)]
    Vt = psys.V.T
    E, A0 = psys.E, psys.A0
    for i, xi in enumerate(points):
        M = xi * E - A0
        try:
            lu, piv = _lu_checked(M)
        except ResolventSingular:
            raise ResolventSingular(f"xi E - A0 is singular at xi = {xi!r}") from None
        X = sla.lu_solve((lu, piv), rhs, check_finite=False)
        XB, XU = X[:, :m], X[:, m:]
        out[0][i] = psys.C @ XB
        out[1][i] = psys.C @ XU
        out[2][i] = Vt @ XU
        out[3][i] = Vt @ XB
    return OfflineSamples(points, *out, mode=psys.mode, param_map=psys.param_map)


def resample_parametric(off, p):
    """Parametric transfer values at the stored points for parameter ``p``."""
    vals = eval_parametric_smw(off.H1, off.H2, off.H3, off.H4, p, off.mode, off.param_map)
    return FrequencySampleSet(off.points, vals)


def vf_reduce_at_parameter(off, p, r, init_poles=None, max_iter=20, pole_tol=1e-6):
    """Resample at ``p`` and vector-fit an order-``r`` model.

    The returned ``final_ls_error`` is the discrete LS error ``e(p)``.
    """
    return vector_fit(resample_parametric(off, p), r, init_poles, max_iter, pole_tol)


def default_sampling_points(psys, n_points=500, window=None):
    """``n_points`` log-spaced points on the positive imaginary axis.

    Without an explicit window the span is ``[1e-2, 10 rho]`` with ``rho`` the
    spectral radius of the pencil ``(A0, E)``.
    """
    if window is None:
        rho = float(np.abs(eigenvalues(psys.A0, None if psys.identity_E else psys.E)).max())
        window = (1e-2, 10.0 * rho)
    lo, hi = window
    if not (0 < lo < hi):
        raise ValidationError("sampling window must satisfy 0 < lo < hi")
    return 1j * np.geomspace(lo, hi, int(n_points))


# -- estimators --------------------------------------------------------------

class SubsystemReducer(BaseEstimator):
    """Estimator for the subsystem balanced-truncation pipeline.

    ``fit(psys)`` reduces the four subsystems; ``predict(points, p)``
    evaluates the reassembled reduced model; ``error_bound(p)`` returns
    the estimate ``f(p)``.
    """

    def __init__(self, tol=1e-6, orders=None, bound_window=None, grid_points=400):
        self.tol = tol
        self.orders = orders
        self.bound_window = bound_window
        self.grid_points = grid_points

    def _config(self):
        return Alg1Config(tol=self.tol, orders=self.orders, bound_window=self.bound_window,
                          grid_points=self.grid_points)

    def fit(self, psys, y=None):
        if not isinstance(psys, LowRankParametricSystem):
            raise ValidationError("fit expects a LowRankParametricSystem")
        self.model_, self.bound_data_ = reduce_subsystems(psys, self._config())
        self.orders_ = self.model_.orders
        self.eps_ = self.bound_data_.eps
        return self

    def transform(self, psys=None):
        self._check()
        return self.model_

    def predict(self, points, p):
        self._check()
        return self.model_.freqresp(points, p)

    def error_bound(self, p):
        self._check()
        return error_bound_f(p, self.model_, self.bound_data_, self.bound_window,
                             self.grid_points)

    def _check(self):
        if not hasattr(self, "model_"):
            raise ValidationError("estimator is not fitted")


class SampledVectorFitting(BaseEstimator):
    """Estimator for the sampling + vector-fitting pipeline.

    ``fit(psys)`` runs the offline sampling stage (or reuses given points);
    ``reduce(p)`` returns the :class:`VFResult` at ``p``.
    """

    def __init__(self, order=10, n_points=500, window=None, points=None, max_iter=20,
                 pole_tol=1e-6):
        self.order = order
        self.n_points = n_points
        self.window = window
        self.points = points
        self.max_iter = max_iter
        self.pole_tol = pole_tol

    def fit(self, psys, y=None):
        if not isinstance(psys, LowRankParametricSystem):
            raise ValidationError("fit expects a LowRankParametricSystem")
        pts = self.points
        if pts is None:
            pts = default_sampling_points(psys, self.n_points, self.window)
        self.samples_ = sample_subsystems(psys, pts)
        return self

    def reduce(self, p, init_poles=None):
        if not hasattr(self, "samples_"):
            raise ValidationError("estimator is not fitted")
        return vf_reduce_at_parameter(self.samples_, p, self.order, init_poles,
                                      self.max_iter, self.pole_tol)

    def predict(self, points, p):
        return self.reduce(p).model.freqresp(points)


__all__ = ["Alg1Config", "ErrorBoundData", "OfflineSamples", "reduce_subsystems", "escalate",
           "error_bound_f", "sample_subsystems", "resample_parametric",
           "vf_reduce_at_parameter", "default_sampling_points", "SubsystemReducer",
           "SampledVectorFitting", "SUBSYSTEM_NAMES"]
