"""Vector fitting of sampled frequency responses with a shared pole set.

The fitted model is strictly proper::

    H(s) ~ sum_j R_j phi_j(s)

with real coefficient matrices ``R_j`` and a real rational basis: a real
pole ``a`` contributes ``1/(s-a)``; a conjugate pair ``a, conj(a)``
contributes ``1/(s-a) + 1/(s-conj(a))`` and ``i/(s-a) - i/(s-conj(a))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lstsq, solve_continuous_lyapunov, solve_triangular
from sklearn.base import BaseEstimator

from .exceptions import (DegenerateLS, DimensionMismatch, NotEnoughSamples, NumericalError,
                         ValidationError)
from .systems import StateSpaceSystem
from .validation import as_complex_array, freeze

_EPS = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class FrequencySampleSet:
    """Sampling points ``xi_i`` with transfer values of shape ``(N, l, m)``."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        pts = as_complex_array(self.points, "points").ravel()
        vals = as_complex_array(self.values, "values")
        if vals.ndim == 1:
            vals = vals[:, None, None]
        if vals.ndim != 3 or vals.shape[0] != pts.size:
            raise DimensionMismatch(
                f"values must have shape (N, l, m) with N={pts.size}, got {vals.shape}")
        if np.unique(pts).size != pts.size:
            raise ValidationError("sampling points must be distinct")
        object.__setattr__(self, "points", freeze(pts.copy()))
        object.__setattr__(self, "values", freeze(vals.copy()))

    @property
    def n_samples(self):
        return self.points.size

    @property
    def shape(self):
        return self.values.shape[1:]

    def total_energy(self):
        return float(np.sum(np.abs(self.values) ** 2))


@dataclass(frozen=True, eq=False)
class VFResult:
    model: StateSpaceSystem
    poles: np.ndarray
    iterations: int
    final_ls_error: float
    converged: bool
    relocation_ls_error: float = np.nan
    residues: np.ndarray = None

    def h2_norm(self):
        """H2 norm of the fitted model from one ``r x r`` Lyapunov solve.

        Every channel shares the pole block ``(Lambda, b)``, so with
        ``Lambda P + P Lambda^T + b b^T = 0`` the squared norm is
        ``trace(R^T P R)`` over the coefficient matrix ``R`` of shape
        ``(r, l*m)``.  Equals ``numerics.h2_norm(self.model)``.
        """
        if self.residues is None or not np.any(self.residues):
            return 0.0
        Lam, b = _state_matrix(*_split_poles(self.poles))
        P = solve_continuous_lyapunov(Lam, -np.outer(b, b))
        R = self.residues
        val = float(np.sum(R * (P @ R)))
        if not np.isfinite(val) or val < 0:
            raise NumericalError("VF model H2 norm is not finite")
        return float(np.sqrt(val))


def initial_poles(omega_min, omega_max, r):
    """Lightly damped starting poles spread over ``[omega_min, omega_max]``.

    ``r // 2`` pairs ``-w/100 +- i w`` with ``w`` log-spaced (a single pair
    sits at the geometric midpoint), plus ``-sqrt(omega_min omega_max)`` for
    odd ``r``.
    """
    if not (0 < omega_min < omega_max):
        raise ValidationError("need 0 < omega_min < omega_max")
    r = int(r)
    if r < 1:
        raise ValidationError("r must be >= 1")
    mid = np.sqrt(omega_min * omega_max)
    npairs = r // 2
    if npairs == 1:
        ws = np.array([mid])
    else:
        ws = np.geomspace(omega_min, omega_max, npairs)
    poles = []
    for w in ws:
        poles += [complex(-w / 100, w), complex(-w / 100, -w)]
    if r % 2:
        poles.append(complex(-mid, 0.0))
    return np.array(poles, dtype=complex)


def _split_poles(poles):
    """Return ``(real, upper)``: real poles and one member of each pair.

    Raises :class:`ValidationError` if the set is not closed under
    conjugation.
    """
    poles = np.asarray(poles, dtype=complex).ravel()
    scale = max(np.abs(poles).max(initial=0.0), 1.0)
    is_real = np.abs(poles.imag) <= 1e-14 * np.maximum(np.abs(poles), 1e-300)
    real = poles[is_real].real
    upper = np.sort_complex(poles[~is_real & (poles.imag > 0)])
    lower = np.sort_complex(np.conj(poles[~is_real & (poles.imag < 0)]))
    if upper.size != lower.size or np.any(np.abs(upper - lower) > 1e-10 * scale):
        raise ValidationError("poles must be closed under complex conjugation")
    return np.sort(real), upper


def _join_poles(real, upper):
    out = list(real.astype(complex))
    for a in upper:
        out += [a, np.conj(a)]
    return np.array(out, dtype=complex)


def _basis(s, real, upper):
    """Complex basis values, shape ``(N, r)``, column order as `_join_poles`."""
    cols = []
    for a in real:
        cols.append(1.0 / (s - a))
    for a in upper:
        g, gc = 1.0 / (s - a), 1.0 / (s - np.conj(a))
        cols.append(g + gc)
        cols.append(1j * g - 1j * gc)
    return np.stack(cols, axis=1) if cols else np.zeros((s.size, 0), dtype=complex)


def _ri(X):
    """Stack real and imaginary parts along the first axis."""
    return np.concatenate((X.real, X.imag), axis=0)


def _state_matrix(real, upper):
    """Real block-diagonal ``Lambda`` and input vector ``b`` of the basis."""
    r = real.size + 2 * upper.size
    Lam = np.zeros((r, r))
    b = np.zeros(r)
    i = 0
    for a in real:
        Lam[i, i] = a
        b[i] = 1.0
        i += 1
    for a in upper:
        al, be = a.real, a.imag
        Lam[i:i + 2, i:i + 2] = [[al, be], [-be, al]]
        b[i] = 2.0
        i += 2
    return Lam, b


def _orthonormal(Phi_ri):
    """QR of the real basis; rank deficiency raises :class:`DegenerateLS`."""
    Q, R = np.linalg.qr(Phi_ri)
    d = np.abs(np.diag(R))
    if d.size and d.min() <= max(Phi_ri.shape) * _EPS * d.max():
        raise DegenerateLS("basis matrix is rank deficient (repeated or coalescing poles)")
    return Q, R


def _relocate(s, H, real, upper):
    """One pole-relocation step.

    Returns the new ``(real, upper)`` and the LS error of the barycentric
    quotient at the sample points.
    """
    N, L = H.shape
    Phi = _basis(s, real, upper)
    r = Phi.shape[1]
    Q, Rq = _orthonormal(_ri(Phi))
    # eliminate the per-channel numerator coefficients by projecting onto the
    # orthogonal complement of the basis, then solve for the shared weights
    X = _ri(-H[:, :, None] * Phi[:, None, :]).reshape(2 * N, L * r)
    Y = _ri(H)                                          # (2N, L)
    X = X - Q @ (Q.T @ X)
    Y = Y - Q @ (Q.T @ Y)
    Xs = X.reshape(2 * N, L, r).transpose(1, 0, 2).reshape(L * 2 * N, r)
    Ys = Y.T.reshape(L * 2 * N)
    ctil = lstsq(Xs, Ys, lapack_driver="gelsy", check_finite=False)[0]

    sigma = 1.0 + Phi @ ctil
    # numerator coefficients per channel, for the barycentric quotient error
    coef = solve_triangular(Rq, Q.T @ _ri(H * sigma[:, None]))
    with np.errstate(all="ignore"):
        quot = (Phi @ coef) / sigma[:, None]
    baryc = float(np.sum(np.abs(H - quot) ** 2))

    Lam, b = _state_matrix(real, upper)
    z = np.linalg.eigvals(Lam - np.outer(b, ctil))
    z = np.where(z.real > 0, -np.conj(z), z)         # reflect into the left half-plane
    z = np.where(z.real == 0, z - 1e-12 * max(np.abs(z).max(), 1.0), z)
    nr, nu = _split_poles(z)
    return nr, nu, baryc


def _pole_movement(new, old):
    new = np.asarray(new)
    old = np.asarray(old)
    dist = np.abs(new[:, None] - old[None, :]) / np.abs(old)[None, :]
    return float(dist.min(axis=1).max())


def _realize(real, upper, coef, l, m):
    """Real state-space model from basis coefficients ``coef`` (r, l*m).

    The pole block is replicated once per input (or per output when there are
    fewer outputs than inputs), giving order ``r * min(l, m)``.
    """
    Lam, b = _state_matrix(real, upper)
    r = Lam.shape[0]
    R = coef.reshape(r, l, m)
    if m <= l:
        A = np.kron(np.eye(m), Lam)
        B = np.kron(np.eye(m), b[:, None])
        C = np.hstack([R[:, :, i].T for i in range(m)])
    else:
        A = np.kron(np.eye(l), Lam.T)
        C = np.kron(np.eye(l), b[None, :])
        B = np.vstack([R[:, i, :] for i in range(l)])
    return StateSpaceSystem(A, B, C)


def vector_fit(samples, r, init=None, max_iter=20, pole_tol=1e-6):
    """Fit a strictly proper order-``r`` rational model to ``samples``.

    Parameters
    ----------
    samples : FrequencySampleSet
    r : int
        Number of poles shared by all channels.
    init : array of complex, optional
        ``r`` stable starting poles closed under conjugation.  Defaults to
        :func:`initial_poles` over the span of ``|xi|``.
    max_iter : int
        Maximum number of relocation steps.
    pole_tol : float
        Convergence threshold on the largest relative pole movement.

    Raises
    ------
    NotEnoughSamples
        Fewer than ``2 r`` sampling points.
    DegenerateLS
        The basis matrix is rank deficient.
    """
    if not isinstance(samples, FrequencySampleSet):
        raise ValidationError("samples must be a FrequencySampleSet")
    r = int(r)
    if r < 1:
        raise ValidationError("r must be >= 1")
    N = samples.n_samples
    if N < 2 * r:
        raise NotEnoughSamples(f"{N} samples cannot determine {r} poles (need at least {2 * r})")
    l, m = samples.shape
    s = samples.points
    mags = np.abs(s[np.abs(s) > 0])
    scale = float(np.exp(np.mean(np.log(mags)))) if mags.size else 1.0
    if init is None:
        lo, hi = (mags.min(), mags.max()) if mags.size else (1e-2, 1e2)
        if not lo < hi:
            lo, hi = lo / 10, hi * 10
        init = initial_poles(lo, hi, r)
    init = np.asarray(init, dtype=complex).ravel()
    if init.size != r:
        raise DimensionMismatch(f"init must contain {r} poles, got {init.size}")
    if np.any(init.real >= 0):
        raise ValidationError("initial poles must lie in the open left half-plane")
    real, upper = _split_poles(init / scale)
    sn = s / scale
    H = samples.values.reshape(N, l * m)

    if not np.any(H):
        coef = np.zeros((r, l * m))
        model = _realize(real * scale, upper * scale, coef, l, m)
        return VFResult(model=model, poles=_join_poles(real, upper) * scale, iterations=0,
                        final_ls_error=0.0, converged=True, relocation_ls_error=0.0,
                        residues=coef)

    converged = False
    it = 0
    baryc = np.nan
    for it in range(1, int(max_iter) + 1):
        old = _join_poles(real, upper)
        real, upper, baryc = _relocate(sn, H, real, upper)
        if _pole_movement(_join_poles(real, upper), old) < pole_tol:
            converged = True
            break

    Phi = _basis(sn, real, upper)
    Q, Rq = _orthonormal(_ri(Phi))
    coef = solve_triangular(Rq, Q.T @ _ri(H))
    resid = H - Phi @ coef
    err = float(np.sum(np.abs(resid) ** 2))
    # undo the frequency normalization: phi(s/scale; a/scale) = scale * phi(s; a)
    model = _realize(real * scale, upper * scale, coef * scale, l, m)
    return VFResult(model=model, poles=_join_poles(real, upper) * scale, iterations=it,
                    final_ls_error=err, converged=converged, relocation_ls_error=baryc,
                    residues=coef * scale)


def ls_error(samples, model):
    """``sum_i ||H(xi_i) - model(xi_i)||_F^2`` (absolute)."""
    vals = model.freqresp(samples.points)
    if vals.shape != samples.values.shape:
        raise DimensionMismatch("model and samples have different input/output dimensions")
    return float(np.sum(np.abs(samples.values - vals) ** 2))


class VectorFitting(BaseEstimator):
    """Estimator interface: ``fit(points, values)``, ``predict(points)``."""

    def __init__(self, order=10, max_iter=20, pole_tol=1e-6, init_poles=None):
        self.order = order
        self.max_iter = max_iter
        self.pole_tol = pole_tol
        self.init_poles = init_poles

    def fit(self, points, values=None):
        samples = points if isinstance(points, FrequencySampleSet) else \
            FrequencySampleSet(points, values)
        res = vector_fit(samples, self.order, self.init_poles, self.max_iter, self.pole_tol)
        self.result_ = res
        self.model_ = res.model
        self.poles_ = res.poles
        self.n_iter_ = res.iterations
        return self

    def predict(self, points):
        if not hasattr(self, "model_"):
            raise ValidationError("estimator is not fitted")
        return self.model_.freqresp(points)

    def score(self, points, values):
        """Negative discrete LS error on the given samples."""
        return -ls_error(FrequencySampleSet(points, values), self.model_)


__all__ = ["FrequencySampleSet", "VFResult", "initial_poles", "vector_fit", "ls_error",
           "VectorFitting"]
