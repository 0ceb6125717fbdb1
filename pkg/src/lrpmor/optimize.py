"""H2-norm parameter optimization with full-order and surrogate objectives."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import (MaxEvaluations, MaxOuterIterations, SurrogateUnstable,
                         TimeBudgetExceeded, ValidationError)
from .numerics import h2_norm
from .pmor import (Alg1Config, default_sampling_points, error_bound_f, escalate,
                   reduce_subsystems, sample_subsystems, vf_reduce_at_parameter)
from .systems import assemble_realization, reduced_spectrum
from .vectfit import initial_poles


@dataclass(frozen=True)
class OptimConfig:
    """Settings shared by the optimizers.

    ``bounds`` is a sequence of ``(lo, hi)`` pairs; ``nu`` is the simplex
    tolerance, ``tau`` the tolerance on the error estimate.  ``time_budget``
    (seconds, optional) bounds the wall-clock time of a whole run, offline
    stage included.
    """

    p0: tuple
    bounds: tuple
    nu: float = 5e-4
    tau: float = 1e-2
    escalation_alg3: float = 0.15
    escalation_alg4: float = 0.10
    max_outer: int = 10
    max_evaluations: int = None
    time_budget: float = None

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=float).ravel()
        b = np.asarray(self.bounds, dtype=float)
        if b.shape != (p0.size, 2):
            raise ValidationError("bounds must hold one (lo, hi) pair per parameter")
        if np.any(b[:, 0] > b[:, 1]) or np.any(p0 < b[:, 0]) or np.any(p0 > b[:, 1]):
            raise ValidationError("need lo <= p0 <= hi componentwise")
        if not (self.nu > 0 and self.tau > 0):
            raise ValidationError("nu and tau must be positive")
        for frac in (self.escalation_alg3, self.escalation_alg4):
            if not 0 < frac < 1:
                raise ValidationError("escalation fractions must lie in (0, 1)")
        if self.time_budget is not None and not self.time_budget > 0:
            raise ValidationError("time_budget must be positive")
        if int(self.max_outer) < 1:
            raise ValidationError("max_outer must be >= 1")
        object.__setattr__(self, "p0", tuple(float(x) for x in p0))
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in b))

    @property
    def k(self):
        return len(self.p0)

    def eval_cap(self):
        return int(self.max_evaluations) if self.max_evaluations else 2000 * self.k


@dataclass
class OptimReport:
    p_star: tuple
    objective_value: float
    outer_iterations: int
    objective_evaluations: int
    order_history: list
    error_estimate_at_optimum: float
    algorithm: str = ""
    vf_iterations: list = field(default_factory=list)
    error_history: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def to_dict(self, with_timing=False):
        d = asdict(self)
        d["p_star"] = [float(x) for x in self.p_star]
        d["order_history"] = [list(o) if isinstance(o, (tuple, list)) else o
                              for o in self.order_history]
        if not with_timing:
            d.pop("timing")
        return d


# -- Nelder-Mead --------------------------------------------------------------

class _Clock:
    """Wall-clock budget shared by all stages of one optimization run."""

    def __init__(self, budget=None):
        self.start = time.perf_counter()
        self.budget = budget

    def elapsed(self):
        return time.perf_counter() - self.start

    def check(self, stage):
        if self.budget is not None and self.elapsed() > self.budget:
            raise TimeBudgetExceeded(
                f"wall-clock budget of {self.budget:.1f} s exhausted during {stage}")


def _to_z(p, lo, hi):
    width = hi - lo
    t = np.where(width > 0, (p - lo) / np.where(width > 0, width, 1.0), 0.0)
    return np.arcsin(np.sqrt(np.clip(t, 0.0, 1.0)))


def _to_p(z, lo, hi):
    return lo + (hi - lo) * np.sin(z) ** 2


def nelder_mead(objective, cfg, p0=None, clock=None):
    """Bound-constrained Nelder--Mead.

    Works on ``z`` with ``p = lo + (hi - lo) sin(z)^2``.  Coefficients:
    reflection 1, expansion 2, contraction 0.5, shrink 0.5.  The initial
    simplex is ``z0`` plus ``0.05`` along each coordinate.  Stops once the
    simplex diameter (max-norm in ``z``) and the spread of objective values
    are both below ``cfg.nu``.

    Returns ``(p_star, value, evaluations)``.

    Raises
    ------
    MaxEvaluations
        The evaluation budget (``2000 k`` by default) is exhausted.
    TimeBudgetExceeded
        ``cfg.time_budget`` ran out.  Both errors carry the best point seen
        so far in ``progress``.
    """
    b = np.asarray(cfg.bounds, dtype=float)
    lo, hi = b[:, 0], b[:, 1]
    p0 = np.asarray(cfg.p0 if p0 is None else p0, dtype=float)
    k = p0.size
    cap = cfg.eval_cap()
    nu = cfg.nu
    clock = _Clock(cfg.time_budget) if clock is None else clock
    count = 0
    best = {"p": p0, "value": math.inf}

    def f(z):
        nonlocal count
        try:
            if count >= cap:
                raise MaxEvaluations(f"objective evaluation budget of {cap} exhausted")
            clock.check("optimization")
        except MaxEvaluations as exc:
            exc.progress = {"p": best["p"], "value": best["value"], "evaluations": count}
            raise
        count += 1
        p = _to_p(z, lo, hi)
        val = float(objective(p))
        if val < best["value"]:
            best["p"], best["value"] = p, val
        return val

    z0 = _to_z(p0, lo, hi)
    simplex = [z0] + [z0 + 0.05 * np.eye(k)[i] for i in range(k)]
    values = [f(z) for z in simplex]
    if not np.isfinite(values[0]):
        raise ValidationError("objective must be finite at p0")

    while True:
        order = np.argsort(values, kind="stable")
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        zbest = simplex[0]
        diam = max(np.abs(z - zbest).max() for z in simplex[1:]) if k else 0.0
        spread = max(abs(v - values[0]) for v in values[1:]) if k else 0.0
        if diam < nu and spread < nu:
            break
        centroid = np.mean(simplex[:-1], axis=0)
        worst, fw = simplex[-1], values[-1]
        zr = centroid + (centroid - worst)
        fr = f(zr)
        if fr < values[0]:
            ze = centroid + 2.0 * (centroid - worst)
            fe = f(ze)
            if fe < fr:
                simplex[-1], values[-1] = ze, fe
            else:
                simplex[-1], values[-1] = zr, fr
            continue
        if fr < values[-2]:
            simplex[-1], values[-1] = zr, fr
            continue
        if fr < fw:
            zc = centroid + 0.5 * (zr - centroid)
            fc = f(zc)
            if fc <= fr:
                simplex[-1], values[-1] = zc, fc
                continue
        else:
            zc = centroid + 0.5 * (worst - centroid)
            fc = f(zc)
            if fc < fw:
                simplex[-1], values[-1] = zc, fc
                continue
        for i in range(1, k + 1):
            simplex[i] = zbest + 0.5 * (simplex[i] - zbest)
            values[i] = f(simplex[i])
    return _to_p(simplex[0], lo, hi), float(values[0]), count


# -- objectives --------------------------------------------------------------

def h2_objective_full(psys, p):
    """``||H(., p)||_H2`` of the full-order model (one ``n x n`` Lyapunov solve)."""
    return h2_norm(psys.at(p))


def h2_objective_reduced(model, p, margin=0.0):
    """``||Hh(., p)||_H2`` from the assembled reduced realization.

    Raises
    ------
    SurrogateUnstable
        The assembled realization has a pole with real part ``>= -margin``.
    """
    spec = reduced_spectrum(model, p)
    if spec.size and spec.real.max() >= -margin:
        raise SurrogateUnstable(f"reduced model unstable at p (max Re = {spec.real.max():.3e})")
    return h2_norm(assemble_realization(model, p))


def _guarded(fun):
    def wrapped(p):
        try:
            return fun(p)
        except SurrogateUnstable:
            return math.inf
    return wrapped


def _tuple(p):
    return tuple(float(x) for x in p)


def optimize_full(psys, cfg):
    """Nelder--Mead on the full-order objective (the reference solution)."""
    clock = _Clock(cfg.time_budget)
    p, val, nev = nelder_mead(lambda q: h2_objective_full(psys, q), cfg, clock=clock)
    return OptimReport(p_star=_tuple(p), objective_value=val,
                       outer_iterations=1, objective_evaluations=nev,
                       order_history=[psys.n_states], error_estimate_at_optimum=0.0,
                       algorithm="full", timing={"total": clock.elapsed()})


class _Progress:
    """Mutable bookkeeping of a surrogate loop, turned into a report at the end."""

    def __init__(self, algorithm, p0):
        self.algorithm = algorithm
        self.p = np.asarray(p0, dtype=float)
        self.value = math.nan
        self.outer = 0
        self.evals = 0
        self.history = []
        self.errors = []
        self.vf_iters = []
        self.timing = {}

    def report(self, clock):
        timing = dict(self.timing, total=clock.elapsed())
        return OptimReport(p_star=_tuple(self.p), objective_value=float(self.value),
                           outer_iterations=self.outer, objective_evaluations=self.evals,
                           order_history=list(self.history),
                           error_estimate_at_optimum=float(self.errors[-1]) if self.errors
                           else math.nan,
                           algorithm=self.algorithm, vf_iterations=list(self.vf_iters),
                           error_history=[float(e) for e in self.errors], timing=timing)

    def absorb(self, exc):
        info = getattr(exc, "progress", None)
        if info is not None:
            self.evals += info["evaluations"]
            if np.isfinite(info["value"]):
                self.p, self.value = np.asarray(info["p"]), info["value"]


def _attach_partial(exc, prog, clock):
    prog.absorb(exc)
    if exc.report is None:
        exc.report = prog.report(clock)
    return exc


# -- surrogate loops ---------------------------------------------------------

def surrogate_optimize_alg3(psys, cfg, alg1cfg=None):
    """Surrogate optimization on reduced subsystems with bound-driven escalation.

    The starting orders come from ``alg1cfg``; they are grown by
    ``cfg.escalation_alg3`` until ``f(p0) < tau``.  After each optimization
    the orders grow again (and the search restarts from the last optimum)
    while ``f(p_hat) > tau``.

    Raises
    ------
    MaxOuterIterations
        The outer loop did not reach ``f <= tau`` within ``cfg.max_outer``
        optimizations, or the orders cannot grow any further.
    MaxEvaluations, TimeBudgetExceeded
        Propagated from the optimizer.  Every budget error carries the
        partial report in ``report``.
    """
    alg1cfg = Alg1Config() if alg1cfg is None else alg1cfg
    clock = _Clock(cfg.time_budget)
    prog = _Progress("alg3", cfg.p0)
    try:
        model, data = reduce_subsystems(psys, alg1cfg)
        prog.timing["reduction"] = clock.elapsed()
        prog.history.append(model.orders)

        def bound(p):
            return error_bound_f(p, model, data, alg1cfg.bound_window, alg1cfg.grid_points)

        p0 = np.asarray(cfg.p0, dtype=float)
        f0 = bound(p0)
        prog.errors.append(f0)
        while f0 >= cfg.tau:
            clock.check("initial escalation")
            model, data, grew = escalate(psys, data, cfg.escalation_alg3)
            if not grew:
                break
            prog.history.append(model.orders)
            f0 = bound(p0)
            prog.errors.append(f0)

        while True:
            prog.outer += 1
            current = model
            p_hat, val, nev = nelder_mead(_guarded(lambda q: h2_objective_reduced(current, q)),
                                          cfg, p0, clock=clock)
            prog.evals += nev
            prog.p, prog.value = p_hat, val
            f_hat = bound(p_hat)
            prog.errors.append(f_hat)
            if f_hat <= cfg.tau:
                break
            if prog.outer >= cfg.max_outer:
                raise MaxOuterIterations(
                    f"error estimate {f_hat:.3e} > tau after {prog.outer} passes")
            clock.check("escalation")
            model, data, grew = escalate(psys, data, cfg.escalation_alg3)
            if not grew:
                raise MaxOuterIterations("orders reached the full numerical rank with f > tau")
            prog.history.append(model.orders)
            p0 = p_hat
    except (MaxEvaluations, MaxOuterIterations) as exc:
        raise _attach_partial(exc, prog, clock)
    return prog.report(clock)


def default_vf_order(psys):
    """``max(k + 2, ceil(n / 15))`` capped at 200."""
    return int(min(200, max(psys.k + 2, math.ceil(psys.n_states / 15))))


def surrogate_optimize_alg4(psys, cfg, points=None, r0=None, *, max_iter=20, pole_tol=1e-6,
                            samples=None):
    """Surrogate optimization on vector-fitted models of resampled data.

    The four subsystems are sampled once at ``points`` (or ``samples`` is
    reused).  Each objective evaluation resamples at ``p``, fits an order-``r``
    model warm-started from the previous poles and returns its H2 norm; the
    fit's LS error ``e(p)`` comes for free.  While ``e(p_hat) > tau`` the
    order grows by ``cfg.escalation_alg4`` with fresh poles appended.

    Raises
    ------
    MaxOuterIterations
        ``e(p_hat) > tau`` after ``cfg.max_outer`` optimizations.
    MaxEvaluations, TimeBudgetExceeded
        Propagated from the optimizer.  Every budget error carries the
        partial report in ``report``.
    """
    clock = _Clock(cfg.time_budget)
    prog = _Progress("alg4", cfg.p0)
    if samples is None:
        if points is None:
            points = default_sampling_points(psys)
        samples = sample_subsystems(psys, points)
    prog.timing["sampling"] = clock.elapsed()
    mags = np.abs(samples.points)
    lo, hi = float(mags.min()), float(mags.max())
    r = default_vf_order(psys) if r0 is None else int(r0)
    state = {"poles": initial_poles(lo, hi, r)}

    def fit(p):
        res = vf_reduce_at_parameter(samples, p, r, state["poles"], max_iter, pole_tol)
        state["poles"] = res.poles
        prog.vf_iters.append(res.iterations)
        return res

    p0 = np.asarray(cfg.p0, dtype=float)
    prog.history.append(r)
    try:
        while True:
            prog.outer += 1
            p_hat, _, nev = nelder_mead(lambda q: fit(q).h2_norm(), cfg, p0, clock=clock)
            prog.evals += nev
            res = fit(p_hat)
            prog.p, prog.value = p_hat, res.h2_norm()
            prog.errors.append(res.final_ls_error)
            if res.final_ls_error <= cfg.tau:
                break
            if prog.outer >= cfg.max_outer:
                raise MaxOuterIterations(
                    f"LS error {res.final_ls_error:.3e} > tau after {prog.outer} passes")
            clock.check("escalation")
            dr = max(1, math.ceil(cfg.escalation_alg4 * r))
            state["poles"] = np.concatenate((state["poles"], initial_poles(lo, hi, dr)))
            r += dr
            prog.history.append(r)
            p0 = p_hat
    except (MaxEvaluations, MaxOuterIterations) as exc:
        raise _attach_partial(exc, prog, clock)
    return prog.report(clock)


__all__ = ["OptimConfig", "OptimReport", "nelder_mead", "h2_objective_full",
           "h2_objective_reduced", "optimize_full", "surrogate_optimize_alg3",
           "surrogate_optimize_alg4", "default_vf_order"]
