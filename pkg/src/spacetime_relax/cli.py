"""Command-line front end: ``solve``, ``verify`` and ``project``.

Exit codes: 0 success, 1 configuration or input error, 2 the optimizer hit
its iteration limit, 3 a verification suite failed.

Configuration is TOML with optional tables ``[problem]`` (``name`` plus
builder parameters), ``[transcription]`` (fields of
:class:`~spacetime_relax.solver.TranscriptionConfig`, with a nested
``[transcription.penalty]``) and ``[run]`` (``mode``, ``M``, ``seed``,
``out``, ``formats``, ``levels``).  Command-line flags override the file.

Environment: ``SPACETIME_RELAX_OUT`` sets the default output directory and
``SPACETIME_RELAX_THREADS`` the thread count of the numerical libraries.
"""

import argparse
import dataclasses
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import io as sio
from .benchmarks import (HeatSpectralSpec, UpdownSpec, build_double_well, build_heat_spectral,
                         build_updown, heat_reference_path, updown_reference_path)
from .dpm import project_dpm
from .errors import ConfigError, RelaxationError
from .problem import validate_problem, check_recession_consistency
from .relaxation import build_relaxed, check_homogeneity, check_relaxed_convexity
from .solver import (PenaltySchedule, RelaxedSolution, TranscriptionConfig, check_uniform_bounds,
                     default_horizon, relaxed_energy, solve, write_trace_csv)
from .trajectory import (ControlPath, PiecewiseLinearMap, integrate, is_normalized, normalize,
                         project_to_graph, reparametrize, trace_hausdorff)
from .young import (DiscreteYoungMeasure, fully_relaxed_energy, integrate_measure,
                    normalize_atoms, recovery_sequence, solve_fully_relaxed)

__all__ = ["main", "register_problem", "RunConfig", "load_config", "EXIT_OK", "EXIT_CONFIG",
           "EXIT_MAX_ITERS", "EXIT_VERIFY"]

EXIT_OK, EXIT_CONFIG, EXIT_MAX_ITERS, EXIT_VERIFY = 0, 1, 2, 3
ENV_OUT = "SPACETIME_RELAX_OUT"
ENV_THREADS = "SPACETIME_RELAX_THREADS"
DEFAULT_OUT = "spacetime_relax_out"
DEFAULT_LEVELS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class _Entry:
    builder: Callable
    reference: Optional[Callable] = None


_REGISTRY = {}


def register_problem(name, builder, reference=None):
    """Make ``builder(**params) -> ProblemDef`` available under ``name``.

    ``reference(**params) -> ControlPath``, if given, supplies a known good
    path for the reparametrization and bounds suites of ``verify``.
    """
    _REGISTRY[name] = _Entry(builder, reference)


register_problem(
    "updown",
    lambda T=2.0: build_updown(UpdownSpec(T=T)),
    lambda T=2.0: updown_reference_path(UpdownSpec(T=T)),
)
register_problem(
    "heat",
    lambda modes=4, T=1.0: build_heat_spectral(HeatSpectralSpec(mode_count=modes, T=T)),
    lambda modes=4, T=1.0: heat_reference_path(HeatSpectralSpec(mode_count=modes, T=T)),
)
register_problem("double_well", lambda K=50.0, T=1.0: build_double_well(K=K, T=T))


# --- configuration ----------------------------------------------------------


@dataclass
class RunConfig:
    problem: str = "updown"
    params: dict = field(default_factory=dict)
    transcription: TranscriptionConfig = field(default_factory=TranscriptionConfig)
    mode: str = "convex"
    M: int = 2
    seed: int = 0
    out: str = ""
    formats: tuple = ("csv", "json")
    levels: tuple = DEFAULT_LEVELS


def _line_of(text, key):
    if text is None:
        return None
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=", re.M)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _err(msg, text=None, key=None):
    line = _line_of(text, key) if key else None
    return ConfigError(f"line {line}: {msg}" if line else msg)


_TRANSCRIPTION_FIELDS = {f.name for f in dataclasses.fields(TranscriptionConfig)} - {"penalty_schedule"}
_RUN_KEYS = {"mode", "M", "seed", "out", "formats", "levels"}


def load_config(path=None, overrides=None):
    """Build a :class:`RunConfig` from an optional TOML file and flag overrides.

    Raises
    ------
    ConfigError
        Parse errors and invalid values, with the line number when known.
    """
    data, text = {}, None
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(data) - {"problem", "transcription", "run"}
    if unknown:
        key = sorted(unknown)[0]
        raise _err(f"unknown table or key {key!r}", text, key)

    prob = dict(data.get("problem", {}))
    tr = dict(data.get("transcription", {}))
    run = dict(data.get("run", {}))
    pen = tr.pop("penalty", {})
    o = overrides or {}

    name = o.get("problem") or prob.pop("name", "updown")
    prob.pop("name", None)
    params = dict(prob)
    for key in ("modes", "T"):
        if o.get(key) is not None:
            params[key] = o[key]
    if name not in _REGISTRY:
        raise _err(f"unknown problem {name!r}; built-in problems: {', '.join(sorted(_REGISTRY))}",
                   text, "name")

    bad = set(tr) - _TRANSCRIPTION_FIELDS
    if bad:
        key = sorted(bad)[0]
        raise _err(f"unknown transcription setting {key!r}", text, key)
    bad = set(run) - _RUN_KEYS
    if bad:
        key = sorted(bad)[0]
        raise _err(f"unknown run setting {key!r}", text, key)
    for flag, key in (("N", "N_cells"), ("S", "S_total"), ("max_iters", "max_iters")):
        if o.get(flag) is not None:
            tr[key] = o[flag]
    for key in ("mode", "M", "seed", "out"):
        if o.get(key) is not None:
            run[key] = o[key]
    seed = run.get("seed", tr.get("seed", 0))
    tr["seed"] = seed

    for key, val in tr.items():
        if isinstance(val, (int, float)) and not isinstance(val, bool) and key != "seed" and val <= 0:
            raise _err(f"transcription setting {key!r} must be positive", text, key)
    try:
        penalty = PenaltySchedule(**pen)
        cfg = TranscriptionConfig(penalty_schedule=penalty, **tr)
    except (TypeError, ValueError) as exc:
        raise _err(f"invalid transcription settings: {exc}", text, None) from exc

    mode = run.get("mode", "convex")
    if mode not in ("convex", "young"):
        raise _err(f"mode must be 'convex' or 'young', got {mode!r}", text, "mode")
    M = int(run.get("M", 2))
    if M < 1:
        raise _err("M must be >= 1", text, "M")
    formats = tuple(run.get("formats", ("csv", "json")))
    if not set(formats) <= {"csv", "json"}:
        raise _err("formats are 'csv' and 'json'", text, "formats")
    levels = tuple(int(k) for k in run.get("levels", DEFAULT_LEVELS))
    if not levels or min(levels) < 1:
        raise _err("recovery levels must be positive integers", text, "levels")
    out = run.get("out") or os.environ.get(ENV_OUT) or DEFAULT_OUT
    return RunConfig(name, params, cfg, mode, M, int(seed), str(out), formats, levels)


def _build(rc):
    entry = _REGISTRY[rc.problem]
    try:
        return entry.builder(**rc.params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid parameters for problem {rc.problem!r}: {exc}") from exc


def _reference(rc, rp):
    entry = _REGISTRY[rc.problem]
    if entry.reference is not None:
        return entry.reference(**rc.params)
    # zero control up to T
    return ControlPath(np.array([0.0, rp.T]), np.ones(1), np.zeros((1, rp.k)))


def _jsonable(x):
    if dataclasses.is_dataclass(x) and not isinstance(x, type):
        return _jsonable(dataclasses.asdict(x))
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _config_dict(rc):
    return _jsonable({
        "problem": {"name": rc.problem, "params": rc.params},
        "transcription": dataclasses.asdict(rc.transcription),
        "mode": rc.mode,
        "M": rc.M,
        "seed": rc.seed,
    })


# --- commands ---------------------------------------------------------------


def cmd_solve(rc):
    t_start = time.perf_counter()
    p = _build(rc)
    rp = build_relaxed(p)
    consts = validate_problem(p)
    cfg = rc.transcription
    S = cfg.S_total if cfg.S_total is not None else default_horizon(rp, cfg.E0, consts.coercivity_c)
    cfg = dataclasses.replace(cfg, S_total=S)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    if rc.mode == "convex":
        sol = solve(rp, cfg)
        obj, curve = sol.path, sol.curve
        energy, residual = sol.energy, sol.constraint_residual
        iterations, converged, trace = sol.iterations, sol.converged, sol.trace
        if energy < cfg.E0:
            rep = check_uniform_bounds(sol, consts, E0=cfg.E0, T=rp.T, raise_on_failure=False)
            bounds = {"applicable": True, "passed": rep.passed, "values": rep.values,
                      "limits": rep.limits}
        else:
            bounds = {"applicable": False}
    else:
        ysol = solve_fully_relaxed(rp, cfg, M=rc.M)
        obj, curve = ysol.measure, ysol.curve
        energy, residual = ysol.energy, ysol.constraint_residual
        iterations, converged, trace = ysol.iterations, ysol.converged, ysol.trace
        sol = ysol
        bounds = {"applicable": False}
    t_solve = time.perf_counter() - t0

    if "csv" in rc.formats:
        sio.write_curve_csv(curve, out / "curve.csv")
        if isinstance(obj, ControlPath):
            sio.write_path_csv(obj, out / "path.csv")
        write_trace_csv(sol, out / "trace.csv")
    # project reads the solution file, so it is written for every format
    sio.dump_json(_jsonable(sio.solution_to_dict(obj, {"name": rc.problem, "params": rc.params})),
                  out / "solution.json")
    summary = {
        "config": _config_dict(rc),
        "S_total": S,
        "energy": energy,
        "constraint_residual": residual,
        "iterations": iterations,
        "converged": converged,
        "local_only": not p.is_convex and rc.mode == "convex",
        "bounds": bounds,
        "timings": {"solve_s": t_solve, "total_s": time.perf_counter() - t_start},
    }
    sio.dump_json(_jsonable(summary), out / "summary.json")
    print(f"{rc.problem}: energy {energy:.6g}, residual {residual:.3g}, "
          f"{iterations} iterations, {'converged' if converged else 'NOT converged'}; "
          f"artifacts in {out}")
    return EXIT_OK if converged else EXIT_MAX_ITERS


def _suite(fn):
    try:
        return fn()
    except RelaxationError as exc:
        return {"passed": False, "error": f"{type(exc).__name__}: {exc}"}


def _reparam_suite(rp, cp, count=50, seed=0, energy_tol=5e-4, trace_tol=1e-3):
    rng = np.random.default_rng(seed)
    curve = integrate(rp, cp)
    e0 = relaxed_energy(rp, curve)
    de, dh = [], []
    for _ in range(count):
        phi = PiecewiseLinearMap.random_monotone(rng, cp.S, pieces=5,
                                                 S_hat=cp.S * rng.uniform(0.5, 2.0),
                                                 flat_prob=0.2)
        cq = integrate(rp, reparametrize(cp, phi))
        de.append(abs(relaxed_energy(rp, cq) - e0))
        dh.append(trace_hausdorff(curve, cq))
    i = int(np.argmax(de))
    return {
        "passed": bool(max(de) < energy_tol and max(dh) < trace_tol),
        "samples": count,
        "max_energy_difference": max(de),
        "max_trace_hausdorff": max(dh),
        "worst_sample": i,
    }


def cmd_verify(rc):
    t_start = time.perf_counter()
    p = _build(rc)
    rp = build_relaxed(p)
    suites = {}
    consts_box = {}

    def assumptions():
        c = validate_problem(p)
        consts_box["c"] = c
        return {"passed": True, "lipschitz_L": c.lipschitz_L, "growth_C": c.growth_C,
                "coercivity_c": c.coercivity_c, "g_lower_bound": c.g_lower_bound,
                "samples": c.samples_used, "report": c.confidence_report}

    def recession():
        r = check_recession_consistency(p, raise_on_failure=False)
        return {"passed": r.passed, "worst": r.worst,
                "worst_sample": dataclasses.asdict(r.worst_sample) if r.worst_sample else None}

    def homogeneity():
        r = check_homogeneity(rp, raise_on_failure=False)
        return {"passed": r.passed, "cost_error": r.cost_error, "dynamics_error": r.dynamics_error,
                "switch_cost_error": r.switch_cost_error,
                "switch_dynamics_error": r.switch_dynamics_error, "worst_sample": r.worst_point}

    def convexity():
        if not p.is_convex:
            return {"passed": True, "skipped": "problem is not declared convex"}
        r = check_relaxed_convexity(rp, raise_on_failure=False)
        return {"passed": r.passed, "u_violation": r.u_violation, "v_violation": r.v_violation,
                "worst_sample": r.worst_point}

    ref = normalize(_reference(rc, rp))

    def reparam():
        return _reparam_suite(rp, ref, seed=rc.seed)

    def bounds():
        if "c" not in consts_box:
            return {"passed": False, "error": "assumption constants unavailable"}
        curve = integrate(rp, ref)
        energy = relaxed_energy(rp, curve)
        sol = RelaxedSolution(ref, curve, energy, 0.0, 0, True)
        if energy >= rc.transcription.E0:
            return {"passed": True, "skipped": f"reference energy {energy:.6g} >= E0"}
        r = check_uniform_bounds(sol, consts_box["c"], E0=rc.transcription.E0, T=rp.T,
                                 raise_on_failure=False)
        return {"passed": r.passed, "values": r.values, "limits": r.limits,
                "failures": r.failures()}

    for name, fn in (("assumptions", assumptions), ("recession", recession),
                     ("homogeneity", homogeneity), ("convexity", convexity),
                     ("reparametrization", reparam), ("uniform_bounds", bounds)):
        suites[name] = _suite(fn)
    passed = all(s["passed"] for s in suites.values())
    report = {"config": _config_dict(rc), "passed": passed, "suites": suites,
              "timings": {"total_s": time.perf_counter() - t_start}}
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    sio.dump_json(_jsonable(report), out / "verify.json")
    for name, s in suites.items():
        print(f"{name:18s} {'pass' if s['passed'] else 'FAIL'}")
    return EXIT_OK if passed else EXIT_VERIFY


def _load_solution(path):
    path = Path(path)
    if path.is_dir():
        path = path / "solution.json"
    if not path.exists():
        raise ConfigError(f"solution artifact {path} not found")
    data = sio.load_json(path)
    return sio.solution_from_dict(data), data.get("problem")


def cmd_project(rc, solution, samples=201):
    obj, prob = _load_solution(solution)
    if prob is not None:
        rc = dataclasses.replace(rc, problem=prob["name"], params=prob.get("params", {}))
        if rc.problem not in _REGISTRY:
            raise ConfigError(f"solution refers to unknown problem {rc.problem!r}")
    rp = build_relaxed(_build(rc))
    if isinstance(obj, ControlPath):
        if not is_normalized(obj):
            obj = normalize(obj)
        curve = integrate(rp, obj)
        mu = DiscreteYoungMeasure.from_path(obj)
        dpm_src, dpm_curve = obj, curve
    else:
        mu = obj
        curve = integrate_measure(rp, mu)
        # the DPM needs unit atoms; this is a reparametrization of the limit
        dpm_src = normalize_atoms(mu)
        dpm_curve = integrate_measure(rp, dpm_src)
    base_energy = fully_relaxed_energy(rp, mu, curve)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)

    dpm = project_dpm(dpm_src, dpm_curve)
    (out / "dpm.json").write_text(dpm.to_json() + "\n")
    gp = project_to_graph(curve, np.linspace(0.0, curve.final_time, samples))
    sio.write_graph_csv(gp, out / "graph.csv")
    sio.dump_json(_jsonable({"atoms": [{"t": t, "jump": j} for t, j in gp.atoms]}),
                  out / "graph_atoms.json")
    levels = []
    for k in rc.levels:
        cp = recovery_sequence(mu, k)
        e = relaxed_energy(rp, integrate(rp, cp))
        sio.write_path_csv(cp, out / f"recovery_k{k}.csv")
        levels.append({"k": k, "energy": e, "gap": abs(e - base_energy)})
    sio.dump_json(_jsonable({"energy": base_energy, "levels": levels}), out / "recovery.json")
    gaps = ", ".join("%.3g" % lv["gap"] for lv in levels)
    print(f"DPM: {len(dpm.atoms)} atoms, total mass {dpm.total_mass():.6g}; "
          f"recovery gaps [{gaps}]; artifacts in {out}")
    return EXIT_OK


# --- entry point ------------------------------------------------------------


def _parser():
    ap = argparse.ArgumentParser(
        prog="spacetime-relax",
        description="Space-time relaxation of L1-coercive optimal control problems.",
        epilog="Exit codes: 0 ok, 1 config/input error, 2 iteration limit, 3 verification failed. "
               f"Environment: {ENV_OUT} (output directory), {ENV_THREADS} (numerical threads).",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--problem", help=f"problem name (built-in: {', '.join(sorted(_REGISTRY))})")
        p.add_argument("--modes", type=int, help="Fourier modes of the heat problem")
        p.add_argument("--T", type=float, help="final time of the problem")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./{DEFAULT_OUT})")

    ps = sub.add_parser("solve", help="solve the relaxed problem and export the solution")
    common(ps)
    ps.add_argument("--N", type=int, help="number of control cells")
    ps.add_argument("--S", type=float, help="length of the parameter interval")
    ps.add_argument("--max-iters", dest="max_iters", type=int, help="iteration budget")
    ps.add_argument("--mode", choices=("convex", "young"), help="path solver or Young-measure solver")
    ps.add_argument("--M", type=int, help="atoms per cell in young mode")

    pv = sub.add_parser("verify", help="run the property suites and write verify.json")
    common(pv)

    pp = sub.add_parser("project", help="project a solution to DPM, graph and recovery paths")
    common(pp)
    pp.add_argument("--solution", required=True, help="solution.json or the directory holding it")
    pp.add_argument("--levels", type=int, nargs="+", help="recovery levels k")
    pp.add_argument("--samples", type=int, default=201, help="graph samples in t")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    threads = os.environ.get(ENV_THREADS)
    try:
        if threads is not None and (not threads.isdigit() or int(threads) < 1):
            raise ConfigError(f"{ENV_THREADS} must be a positive integer, got {threads!r}")
        overrides = {k: v for k, v in vars(args).items() if v is not None}
        rc = load_config(args.config, overrides)
        if args.command == "project" and args.levels:
            rc = dataclasses.replace(rc, levels=tuple(args.levels))
        if args.command == "solve":
            return cmd_solve(rc)
        if args.command == "verify":
            return cmd_verify(rc)
        return cmd_project(rc, args.solution, args.samples)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RelaxationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
