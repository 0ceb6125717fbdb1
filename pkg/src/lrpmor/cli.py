"""Command-line front end.

Subcommands: ``generate``, ``reduce``, ``sample``, ``vf``, ``optimize`` and
``check``.  Settings come from flags and, optionally, an INI file given with
``--config``; values for a subcommand are read from the section of the same
name (plus ``[model]`` for the model source), and flags win over the file.

Every command writes into ``--out``.  Reports (``*.json``) contain only
deterministic data together with the resolved settings; wall-clock timings go
to a separate ``timing.json``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .bench import (OscillatorConfig, generate_oscillator, generate_penzl, load_matrix_market,
                    undamped_frequencies, write_csv, write_matrix_market)
from .exceptions import NumericalError, PMORError, ValidationError
from .optimize import (OptimConfig, optimize_full, surrogate_optimize_alg3,
                       surrogate_optimize_alg4)
from .pmor import (Alg1Config, OfflineSamples, default_sampling_points, reduce_subsystems,
                   sample_subsystems, vf_reduce_at_parameter)
from .systems import (LowRankParametricSystem, ParametricReducedModel, StateSpaceSystem,
                      check_positive_real_sampled, check_uniform_stability)

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2
_MATRICES = ("E", "A0", "U", "V", "B", "C")
_SUB = ("H1", "H2", "H3", "H4")

# hard defaults, applied after the config file and the flags
_DEFAULTS = {
    "model": {"builtin": None, "model_dir": None, "tail": 100, "d": 100, "dampers": None,
              "alpha_c": 0.02},
    "generate": {},
    "reduce": {"tol": 1e-6, "orders": None, "grid_points": 400},
    "sample": {"n_points": 500, "window": None},
    "vf": {"samples": None, "p": None, "order": 10, "max_iter": 20, "pole_tol": 1e-6,
           "warm_start": None},
    "optimize": {"pipeline": "alg1", "p0": None, "bounds": None, "tau": None, "nu": 5e-4,
                 "escalation": None, "max_outer": 10, "tol": 1e-6, "orders": None,
                 "r0": None, "n_points": 500, "window": None, "full": False,
                 "time_budget": None},
    "check": {"reduced": None, "n_samples": 100, "box": None, "grid": None, "seed": 42,
              "pr": False, "pr_tol": None, "margin": 1e-10},
}


class _InputError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for numerics here
    def error(self, message):
        raise _InputError(f"{self.prog}: {message}")


# -- value parsing -----------------------------------------------------------

def _floats(text, name):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise _InputError(f"{name}: expected comma-separated numbers, got {text!r}") from exc


def _ints(text, name):
    vals = _floats(text, name)
    if vals is None:
        return None
    if any(v != int(v) for v in vals):
        raise _InputError(f"{name}: expected integers, got {text!r}")
    return [int(v) for v in vals]


def _bounds(text, k=None):
    """``lo:hi,lo:hi,...``; a single pair is broadcast to ``k`` parameters."""
    if text is None:
        return None
    pairs = []
    for chunk in str(text).split(","):
        try:
            lo, hi = chunk.split(":")
            pairs.append((float(lo), float(hi)))
        except ValueError as exc:
            raise _InputError(f"bounds: expected lo:hi pairs, got {chunk!r}") from exc
    if len(pairs) == 1 and k:
        pairs = pairs * k
    return pairs


def _bool(value):
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _resolve(args, command):
    """Merge flags over config-file values over hard defaults."""
    file_vals = {}
    if args.config:
        cp = configparser.ConfigParser()
        if not cp.read(args.config, encoding="utf-8"):
            raise _InputError(f"cannot read config file {args.config}")
        for section in ("model", command):
            if cp.has_section(section):
                file_vals.update({k.replace("-", "_"): v for k, v in cp.items(section)})
    out = {}
    for section in ("model", command):
        for key, default in _DEFAULTS[section].items():
            flag = getattr(args, key, None)
            if flag is not None and flag is not False:
                out[key] = flag
            elif key in file_vals:
                out[key] = file_vals[key]
            else:
                out[key] = default
    for key in ("tail", "d", "grid_points", "n_points", "max_iter", "max_outer", "n_samples",
                "seed", "order"):
        if out.get(key) is not None:
            out[key] = int(out[key])
    for key in ("alpha_c", "pole_tol", "nu", "margin", "pr_tol"):
        if out.get(key) is not None:
            out[key] = float(out[key])
    for key in ("full", "pr"):
        if key in out:
            out[key] = _bool(out[key])
    return out


# -- model sources -----------------------------------------------------------

def _build_model(cfg):
    if cfg["model_dir"]:
        if cfg["builtin"]:
            raise _InputError("give either --builtin or --model, not both")
        return _load_model_dir(Path(cfg["model_dir"])), None
    name = cfg["builtin"]
    if name == "penzl":
        return generate_penzl(cfg["tail"]), None
    if name == "oscillator":
        dampers = _ints(cfg["dampers"], "dampers")
        ocfg = OscillatorConfig(d=cfg["d"], alpha_c=cfg["alpha_c"],
                                **({"damper_positions": tuple(dampers)} if dampers else {}))
        om = generate_oscillator(ocfg)
        return om.first_order, om
    raise _InputError("model source required: --builtin penzl|oscillator or --model DIR")


def _load_model_dir(root):
    manifest = _read_json(root / "manifest.json")
    mats = {name: load_matrix_market(root / f"{name}.mtx") for name in _MATRICES}
    return LowRankParametricSystem(mats["E"], mats["A0"], mats["U"], mats["V"], mats["B"],
                                   mats["C"], mode=manifest["mode"],
                                   param_map=manifest.get("param_map"))


def _model_manifest(psys, cfg):
    # k counts parameters; low_rank is the width of U and V
    return {"model": cfg["builtin"] or "file", "n": psys.n_states, "n_states": psys.n_states,
            "k": psys.n_params, "low_rank": psys.k, "n_inputs": psys.n_inputs,
            "n_outputs": psys.n_outputs, "mode": psys.mode,
            "param_map": [int(i) for i in psys.param_map]}


# -- I/O helpers -------------------------------------------------------------

def _out_dir(path):
    if path is None:
        raise _InputError("--out is required")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    return root


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise _InputError(f"missing file {path}") from exc
    except json.JSONDecodeError as exc:
        raise _InputError(f"{path}: invalid JSON ({exc})") from exc


def _write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _write_system(root, prefix, sys_):
    for name in ("A", "B", "C"):
        write_matrix_market(root / f"{prefix}_{name}.mtx", getattr(sys_, name))


def _read_system(root, prefix):
    mats = [load_matrix_market(root / f"{prefix}_{n}.mtx") for n in ("A", "B", "C")]
    return StateSpaceSystem(*mats)


def _save_samples(root, off, manifest):
    for name in ("points", "H1", "H2", "H3", "H4"):
        np.save(root / f"{name}.npy", np.asarray(getattr(off, name)), allow_pickle=False)
    _write_json(root / "manifest.json", manifest)


def _load_samples(root):
    root = Path(root)
    manifest = _read_json(root / "manifest.json")
    try:
        arrays = {n: np.load(root / f"{n}.npy", allow_pickle=False)
                  for n in ("points", "H1", "H2", "H3", "H4")}
    except FileNotFoundError as exc:
        raise _InputError(f"incomplete sample bundle in {root}: {exc}") from exc
    return OfflineSamples(mode=manifest["mode"], param_map=manifest["param_map"], **arrays), \
        manifest


def _window(text):
    w = _floats(text, "window")
    if w is not None and len(w) != 2:
        raise _InputError("window must be lo,hi")
    return tuple(w) if w else None


def _sampling_points(psys, om, cfg):
    window = _window(cfg["window"])
    if window is None and om is not None:
        w = undamped_frequencies(om.second_order.M, om.second_order.K)
        window = (float(w.min()), float(w.max()))
    return default_sampling_points(psys, cfg["n_points"], window)


# -- commands ----------------------------------------------------------------

def cmd_generate(args):
    cfg = _resolve(args, "generate")
    if not cfg["builtin"]:
        raise _InputError("generate needs --builtin penzl|oscillator")
    psys, _ = _build_model(cfg)
    root = _out_dir(args.out)
    for name in _MATRICES:
        write_matrix_market(root / f"{name}.mtx", getattr(psys, name))
    manifest = _model_manifest(psys, cfg)
    manifest["settings"] = {k: cfg[k] for k in ("builtin", "tail", "d", "dampers", "alpha_c")}
    _write_json(root / "manifest.json", manifest)
    print(f"wrote {len(_MATRICES)} matrices to {root} (n={psys.n_states}, k={psys.n_params})")
    return EXIT_OK


def _alg1_config(cfg):
    orders = cfg.get("orders")
    if isinstance(orders, str) and orders.strip().lower() == "full":
        orders = (10 ** 9,) * 4
    else:
        orders = _ints(orders, "orders")
    tol = _floats(cfg.get("tol"), "tol")
    tol = tol[0] if tol and len(tol) == 1 else tuple(tol) if tol else 1e-6
    return Alg1Config(tol=tol, orders=tuple(orders) if orders else None,
                      grid_points=int(cfg.get("grid_points") or 400))


def cmd_reduce(args):
    cfg = _resolve(args, "reduce")
    psys, _ = _build_model(cfg)
    root = _out_dir(args.out)
    t0 = time.perf_counter()
    model, data = reduce_subsystems(psys, _alg1_config(cfg))
    elapsed = time.perf_counter() - t0
    for name, h in zip(_SUB, model.subsystems):
        _write_system(root, name, h)
    rows = []
    for name, res in zip(_SUB, data.bt_results):
        rows += [(name, i, float(s)) for i, s in enumerate(res.hsv)]
    write_csv(root / "hsv.csv", rows, ["subsystem", "index", "hsv"])
    summary = {"orders": list(model.orders), "eps": list(data.eps),
               "numerical_ranks": list(data.full_orders),
               "mode": psys.mode, "param_map": [int(i) for i in psys.param_map],
               "model": _model_manifest(psys, cfg), "settings": cfg}
    _write_json(root / "summary.json", summary)
    _write_json(root / "timing.json", {"reduction": elapsed})
    print(f"orders {tuple(model.orders)}, eps {', '.join(f'{e:.3e}' for e in data.eps)}")
    return EXIT_OK


def _load_reduced(root):
    root = Path(root)
    summary = _read_json(root / "summary.json")
    subs = [_read_system(root, name) for name in _SUB]
    return ParametricReducedModel(*subs, mode=summary["mode"], param_map=summary["param_map"],
                                  check_stability=False), summary


def cmd_sample(args):
    cfg = _resolve(args, "sample")
    psys, om = _build_model(cfg)
    root = _out_dir(args.out)
    points = _sampling_points(psys, om, cfg)
    t0 = time.perf_counter()
    off = sample_subsystems(psys, points)
    elapsed = time.perf_counter() - t0
    manifest = {"n_points": off.n_points, "mode": off.mode,
                "param_map": [int(i) for i in off.param_map],
                "shapes": {n: list(np.asarray(getattr(off, n)).shape) for n in _SUB},
                "model": _model_manifest(psys, cfg), "settings": cfg}
    _save_samples(root, off, manifest)
    _write_json(root / "timing.json", {"sampling": elapsed})
    print(f"sampled 4 subsystems at {off.n_points} points into {root}")
    return EXIT_OK


def cmd_vf(args):
    cfg = _resolve(args, "vf")
    if not cfg["samples"]:
        raise _InputError("vf needs --samples DIR")
    off, _ = _load_samples(cfg["samples"])
    p = _floats(cfg["p"], "p")
    if p is None:
        raise _InputError("vf needs --p")
    init = None
    r = cfg["order"]
    if cfg["warm_start"]:
        prev = _read_json(Path(cfg["warm_start"]) / "vf.json")
        init = np.array([complex(a, b) for a, b in prev["poles"]])
        r = init.size
    root = _out_dir(args.out)
    t0 = time.perf_counter()
    res = vf_reduce_at_parameter(off, p, r, init, cfg["max_iter"], cfg["pole_tol"])
    elapsed = time.perf_counter() - t0
    _write_system(root, "model", res.model)
    report = {"p": p, "order": r, "e": res.final_ls_error, "iterations": res.iterations,
              "converged": res.converged, "h2_norm": res.h2_norm(),
              "poles": [[z.real, z.imag] for z in res.poles], "settings": cfg}
    _write_json(root / "vf.json", report)
    _write_json(root / "timing.json", {"vf": elapsed})
    print(f"e(p) = {res.final_ls_error:.6e} after {res.iterations} iterations")
    return EXIT_OK


def cmd_optimize(args):
    cfg = _resolve(args, "optimize")
    psys, om = _build_model(cfg)
    pipeline = str(cfg["pipeline"]).lower()
    aliases = {"alg1": "alg3", "alg3": "alg3", "alg2": "alg4", "alg4": "alg4"}
    if pipeline not in aliases:
        raise _InputError("pipeline must be alg1 (subsystem reduction) or alg2 (sampling + VF)")
    loop = aliases[pipeline]
    k = psys.n_params
    p0 = _floats(cfg["p0"], "p0") or [1.0] * k
    bounds = _bounds(cfg["bounds"], k) or [(0.0, max(10.0, 10 * max(p0)))] * k
    tau = _floats(cfg["tau"], "tau")
    tau = tau[0] if tau else (1e-2 if loop == "alg3" else 1e-4)
    esc = _floats(cfg["escalation"], "escalation")
    esc_kw = {}
    if esc:
        esc_kw["escalation_alg3" if loop == "alg3" else "escalation_alg4"] = esc[0]
    budget = _floats(cfg["time_budget"], "time_budget")
    ocfg = OptimConfig(p0=tuple(p0), bounds=tuple(bounds), nu=cfg["nu"], tau=tau,
                       max_outer=cfg["max_outer"], time_budget=budget[0] if budget else None,
                       **esc_kw)
    root = _out_dir(args.out)
    failure = None
    try:
        if loop == "alg3":
            report = surrogate_optimize_alg3(psys, ocfg, _alg1_config(cfg))
        else:
            report = surrogate_optimize_alg4(psys, ocfg, _sampling_points(psys, om, cfg),
                                             None if cfg["r0"] is None else int(cfg["r0"]))
    except NumericalError as exc:
        report = getattr(exc, "report", None)
        if report is None:
            raise
        failure = f"{type(exc).__name__}: {exc}"
    out = {"report": report.to_dict(), "pipeline": pipeline, "failure": failure,
           "settings": cfg}
    timing = {"surrogate": report.timing}
    if cfg["full"]:
        full = optimize_full(psys, OptimConfig(p0=tuple(p0), bounds=tuple(bounds), nu=cfg["nu"],
                                               tau=tau))
        out["full_report"] = full.to_dict()
        h2_full = full.objective_value
        out["relative_h2_discrepancy"] = abs(h2_full - report.objective_value) / \
            abs(report.objective_value)
        timing["full"] = full.timing
        timing["acceleration_factor"] = full.timing["total"] / report.timing["total"]
    _write_json(root / "report.json", out)
    _write_json(root / "timing.json", timing)
    rows = [(i, sum(o) if isinstance(o, (list, tuple)) else o, e) for i, (o, e) in
            enumerate(zip(report.order_history, report.error_history))]
    write_csv(root / "trace.csv", rows, ["step", "total_order", "error_estimate"])
    print(f"p* = {report.p_star}, objective {report.objective_value:.6e}, "
          f"error estimate {report.error_estimate_at_optimum:.3e}")
    if "acceleration_factor" in timing:
        print(f"acceleration factor {timing['acceleration_factor']:.2f}")
    if failure:
        print(failure, file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_check(args):
    cfg = _resolve(args, "check")
    if not cfg["reduced"]:
        raise _InputError("check needs --reduced DIR (output of the reduce command)")
    model, summary = _load_reduced(cfg["reduced"])
    k = model.n_params
    box = _bounds(cfg["box"], k) or [(0.0, 1.0)] * k
    if len(box) != k:
        raise _InputError(f"box needs {k} ranges")
    lo, hi = np.array(box).T
    if cfg["grid"]:
        axes = [np.linspace(a, b, int(cfg["grid"])) for a, b in box]
        samples = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
    else:
        rng = np.random.default_rng(cfg["seed"])
        samples = lo + (hi - lo) * rng.random((cfg["n_samples"], k))
    stab = check_uniform_stability(model, samples, margin=cfg["margin"])
    report = {"stability": stab.to_dict(), "settings": cfg}
    ok = stab.stable
    if cfg["pr"]:
        H3 = model.subsystems[2]
        if H3.n_inputs != H3.n_outputs:
            raise _InputError("positive-realness needs a square H3")
        # a truncation of a passive H3 is passive up to its bound eps3
        tol = cfg["pr_tol"]
        if tol is None:
            tol = max(1e-10, float(summary.get("eps", [0.0] * 4)[2]))
        pr = check_positive_real_sampled(H3, tol=tol)
        report["positive_real"] = dict(pr.to_dict(), tol=tol)
        ok = ok and pr.passed
    report["passed"] = bool(ok)
    root = _out_dir(args.out)
    _write_json(root / "check.json", report)
    print(("PASS" if ok else "FAIL") + f": worst real part {stab.worst_real_part:.3e}")
    return EXIT_OK if ok else EXIT_INPUT


# -- parser ------------------------------------------------------------------

def _add_model_flags(p):
    g = p.add_argument_group("model source")
    g.add_argument("--builtin", choices=("penzl", "oscillator"))
    g.add_argument("--model", dest="model_dir", metavar="DIR",
                   help="directory written by the generate command")
    g.add_argument("--tail", type=int, help="Penzl: size of the parameter-free tail")
    g.add_argument("--d", type=int, help="oscillator: masses per chain (n = 2d+1)")
    g.add_argument("--dampers", help="oscillator: j1,j2,j3 on the reference 900 scale")
    g.add_argument("--alpha-c", dest="alpha_c", type=float)


def build_parser():
    parser = _Parser(prog="lrpmor", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="INI file with one section per command")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate", help="write a built-in model as Matrix Market files")
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("reduce", help="balanced truncation of the four subsystems")
    _add_model_flags(p)
    p.add_argument("--tol", help="one tolerance or four comma-separated ones")
    p.add_argument("--orders", help="r1,r2,r3,r4 or 'full'")
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("sample", help="sample the four subsystems on the imaginary axis")
    _add_model_flags(p)
    p.add_argument("--N", dest="n_points", type=int)
    p.add_argument("--window", help="lo,hi frequency range")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("vf", help="vector-fit resampled data at one parameter")
    p.add_argument("--samples", help="directory written by the sample command")
    p.add_argument("--p", help="comma-separated parameter vector")
    p.add_argument("--order", type=int)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--pole-tol", dest="pole_tol", type=float)
    p.add_argument("--warm-start", dest="warm_start", metavar="DIR",
                   help="reuse the poles of an earlier vf run")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vf)

    p = sub.add_parser("optimize", help="surrogate H2 parameter optimization")
    _add_model_flags(p)
    p.add_argument("--pipeline", help="alg1 (subsystem reduction) or alg2 (sampling + VF)")
    p.add_argument("--p0")
    p.add_argument("--bounds", help="lo:hi pairs, comma separated")
    p.add_argument("--tau", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--escalation", type=float)
    p.add_argument("--max-outer", dest="max_outer", type=int)
    p.add_argument("--tol", help="alg1 starting tolerance")
    p.add_argument("--orders", help="alg1 starting orders r1,r2,r3,r4")
    p.add_argument("--r0", type=int, help="alg2 starting VF order")
    p.add_argument("--N", dest="n_points", type=int)
    p.add_argument("--window")
    p.add_argument("--time-budget", dest="time_budget", type=float)
    p.add_argument("--full", action="store_true", help="also run the full-order optimization")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("check", help="stability and positive-realness checks")
    p.add_argument("--reduced", help="directory written by the reduce command")
    p.add_argument("--samples", dest="n_samples", type=int)
    p.add_argument("--box", help="lo:hi pairs for the parameter box")
    p.add_argument("--grid", type=int, help="grid points per parameter instead of sampling")
    p.add_argument("--seed", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--pr", action="store_true", help="also test H3 for positive realness")
    p.add_argument("--pr-tol", dest="pr_tol", type=float,
                   help="slack on the Hermitian part (default: the H3 truncation bound)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return EXIT_INPUT
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PMORError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
