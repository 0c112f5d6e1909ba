"""Command-line entry point: ``synthop {simulate,check,design,identify,verify}``.

Configuration files are JSON.  A ``--config`` file supplies defaults for
any flag (keys are the flag names with dashes replaced by underscores);
explicit flags win.  Every run writes one ``RunManifest`` JSON file.

Exit codes: 0 success; 1 ``verify`` found the loop not stable (or the two
checks disagree); 2 usage errors, missing files, malformed data, mismatched
dimensions; 3 data not informative; 4 preconditions failed; 5 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, gram, informativity as inf, sim, splines
from .errors import (DataFormatError, Infeasible, LowAcceptanceRate, NotSurjective,
                     PreconditionFailed, SolverError, SynthopError)
from .signals import load_dataset, write_dataset
from .stability import ArSystem, Controller, close_loop, is_hurwitz, lyapunov_lmi_check

EXIT_OK = 0
EXIT_UNSTABLE = 1
EXIT_USAGE = 2
EXIT_NOT_INFORMATIVE = 3
EXIT_PRECONDITION = 4
EXIT_SOLVER = 5


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# manifest


@dataclasses.dataclass
class RunManifest:
    command: str
    argv: list
    config_path: Optional[str] = None
    inputs: dict = dataclasses.field(default_factory=dict)
    outputs: dict = dataclasses.field(default_factory=dict)
    seeds: dict = dataclasses.field(default_factory=dict)
    tool_version: str = __version__
    timings: dict = dataclasses.field(default_factory=dict)
    result: dict = dataclasses.field(default_factory=dict)
    exit_code: int = 0

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            json.dump(_jsonable(dataclasses.asdict(self)), fh, indent=2, sort_keys=True)
        return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def _digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# helpers


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def parse_theta(text, p: int) -> np.ndarray:
    """A scalar ``s`` means ``s I_p``; otherwise a JSON matrix or a path to one."""
    if text is None:
        raise UsageError("--theta is required")
    if isinstance(text, (int, float)):
        return float(text) * np.eye(p)
    if isinstance(text, list):
        return np.array(text, dtype=float).reshape(p, p)
    try:
        return float(text) * np.eye(p)
    except ValueError:
        pass
    src = Path(text)
    raw = src.read_text() if src.exists() else text
    try:
        val = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise UsageError(f"cannot parse --theta {text!r}") from exc
    arr = np.array(val, dtype=float)
    if arr.size == 1:
        return float(arr) * np.eye(p)
    if arr.shape != (p, p):
        raise UsageError(f"--theta must be {p}x{p}, got shape {arr.shape}")
    return arr


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    with p.open(encoding="utf-8") as fh:
        return json.load(fh)


def _dataset(args):
    dims = {k: getattr(args, k) for k in ("L", "m", "p") if getattr(args, k) is not None}
    return load_dataset(args.dataset, dims or None)


def _emit(args, payload: dict, table: Optional[list] = None):
    if args.emit == "json":
        print(json.dumps(_jsonable(payload), indent=2, sort_keys=True))
    elif args.emit == "csv":
        rows = table if table is not None else [[k, v] for k, v in payload.items()
                                                if not isinstance(v, (dict, list))]
        for row in rows:
            print(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))


def _say(args, *lines):
    if args.emit == "text":
        for line in lines:
            print(line)


def _names(m: int, p: int):
    us = ["u"] if m == 1 else [f"u{i + 1}" for i in range(m)]
    ys = [f"y{i + 1}" for i in range(p)]
    return us, ys


def _term(coef: float, name: str, order: int) -> str:
    primes = "'" * order if order <= 3 else f"^({order})"
    return f"{_fmt(coef)}*{name}{primes}(t)"


def controller_equation(ctrl: Controller) -> list:
    """One line per input: ``u^(L) + sum C_u u^(l) = -sum C_y y^(l)``."""
    us, ys = _names(ctrl.m, ctrl.p)
    lines = []
    for i in range(ctrl.m):
        lhs = [f"{us[i]}{chr(39) * ctrl.L if ctrl.L <= 3 else f'^({ctrl.L})'}(t)"]
        rhs = []
        for ell in reversed(range(ctrl.L)):
            for j in range(ctrl.m):
                c = ctrl.u_block(ell)[i, j]
                if c != 0:
                    lhs.append(_term(c, us[j], ell))
            for j in range(ctrl.p):
                c = -ctrl.y_block(ell)[i, j]
                if c != 0:
                    rhs.append(_term(c, ys[j], ell))
        lines.append(" + ".join(lhs) + " = " + (" + ".join(rhs) if rhs else "0"))
    return lines


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, man: RunManifest) -> int:
    scen = args.scenario
    spec = {"scenario": "pendulum"} if scen == "pendulum" else None
    if spec is None:
        path = Path(scen)
        if not path.exists():
            raise FileNotFoundError(f"scenario file not found: {path}")
        with path.open(encoding="utf-8") as fh:
            spec = json.load(fh)
        man.inputs["scenario"] = {"path": str(path), "sha256": _digest(path)}
    if spec.get("scenario", "pendulum") != "pendulum":
        raise UsageError(f"unknown scenario {spec.get('scenario')!r}")
    params = sim.PendulumParams(**spec.get("params", {}))
    sigma = args.sigma if args.sigma is not None else float(spec.get("sigma", 1e-2))
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    K = args.K if args.K is not None else int(spec.get("K", 25))
    validity = tuple(float(v) for v in spec.get("validity", (np.inf, 0.1)))
    cfg = sim.SimConfig(dt=float(spec.get("dt", 1e-4)), tau=float(spec.get("tau", 0.5)),
                        n_out=int(spec.get("n_out", 501)), noise_sigma=sigma, seed=seed,
                        validity=validity)
    t0 = time.perf_counter()
    out = sim.generate_pendulum_dataset(params, cfg, K,
                                        max_attempts=int(spec.get("max_attempts", 10_000)))
    man.timings["simulate"] = time.perf_counter() - t0
    outdir = Path(args.out)
    extra = {"seed": seed, "accepted_attempts": out.accepted_attempts, "attempts": out.attempts,
             "sigma": sigma, "seed_rule": "numpy default_rng([seed, attempt])"}
    mpath = write_dataset(out.dataset, outdir, extra=extra)
    out.truth.save(outdir / "truth.json")
    noise = gram.noise_gram(out.dataset) if sigma > 0 else np.zeros((2, 2))
    man.seeds = {"seed": seed, "accepted_attempts": out.accepted_attempts}
    man.outputs = {"dataset": str(mpath), "truth": str(outdir / "truth.json")}
    man.result = {"trajectories": out.dataset.K, "attempts": out.attempts,
                  "noise_gram_max_eig": float(np.linalg.eigvalsh(noise).max())}
    _say(args, f"wrote {out.dataset.K} trajectories ({out.attempts} attempts) to {outdir}",
         f"noise Gram max eigenvalue: {_fmt(man.result['noise_gram_max_eig'])}")
    _emit(args, man.result)
    return EXIT_OK


def _pipeline(args, man):
    ds = _dataset(args)
    man.inputs["dataset"] = {"path": str(args.dataset), "sha256": _digest(args.dataset)}
    theta = args.theta if args.theta is not None else (ds.theta.tolist() if ds.theta is not None else None)
    Theta = parse_theta(theta, ds.p)
    t0 = time.perf_counter()
    gs = gram.build_gram_set(ds)
    man.timings["grams"] = time.perf_counter() - t0
    return ds, gs, Theta


def _design_opts(args, extra=()):
    return inf.DesignOptions(epsilon=args.epsilon, solver=args.solver, candidates=list(extra))


def cmd_check(args, man: RunManifest) -> int:
    ds, gs, Theta = _pipeline(args, man)
    pi = gram.build_pi(gs, Theta)
    bn = gram.build_big_n(pi, ds.q, ds.L, ds.p)
    pre = inf.check_preconditions(pi, bn, gs)
    man.result["preconditions"] = pre.to_dict()
    _say(args, "preconditions:",
         f"  HH* eigenvalues: min {_fmt(pre.hh_min_eig)}, max {_fmt(pre.hh_max_eig)} "
         f"-> {'surjective' if pre.surjective else 'NOT surjective'}",
         f"  N22 negative definite: {pre.n22_neg}",
         f"  kernel inclusion: {pre.kernel_inclusion}",
         f"  Schur complement min eigenvalue: {_fmt(pre.schur_min_eig)} -> psd {pre.schur_psd}")
    if not (pre.surjective and pre.slemma_ok):
        man.result["verdict"] = "preconditions failed"
        _say(args, "verdict: preconditions failed")
        _emit(args, {"verdict": "preconditions failed", **pre.to_dict()})
        return EXIT_PRECONDITION
    lmi = inf.assemble_stabilization_lmi(bn, inf.Dims(ds.L, ds.m, ds.p), eps=args.epsilon)
    t0 = time.perf_counter()
    res = inf.sdp.solve(lmi.problem, solver=args.solver)
    man.timings["solve"] = time.perf_counter() - t0
    man.result.update({"t_star": res.t, "eps": lmi.eps, "status": res.status.value,
                       "solver": res.solver, "solver_status": res.solver_status})
    if res.status is inf.sdp.Status.FEASIBLE:
        verdict, code = "informative", EXIT_OK
    elif res.status is inf.sdp.Status.INFEASIBLE:
        verdict, code = "not informative", EXIT_NOT_INFORMATIVE
    else:
        verdict, code = "solver failure", EXIT_SOLVER
    man.result["verdict"] = verdict
    _say(args, f"LMI margin t* = {_fmt(res.t) if res.t is not None else 'n/a'} (status {res.status.value})",
         f"verdict: {verdict}")
    _emit(args, {"verdict": verdict, "t_star": res.t, "eps": lmi.eps, **pre.to_dict()})
    return code


def cmd_design(args, man: RunManifest) -> int:
    ds, gs, Theta = _pipeline(args, man)
    cands = [ArSystem.load(c) for c in (args.candidate or [])]
    t0 = time.perf_counter()
    cert = inf.design_from_grams(gs, Theta, _design_opts(args, cands))
    man.timings["design"] = time.perf_counter() - t0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cert.save(out)
    man.outputs["certificate"] = str(out)
    man.result = {"t_star": cert.t_star, "eps": cert.eps, "phi_margin": cert.phi_margin,
                  "lmi_margin": cert.lmi_margin, "C": cert.C, "verification": cert.verification}
    _say(args, "controller:", *("  " + line for line in controller_equation(cert.controller)),
         f"margins: Phi {_fmt(cert.phi_margin)}, LMI {_fmt(cert.lmi_margin)} (eps {_fmt(cert.eps)})",
         *(f"check {v['system']}: hurwitz={v['hurwitz']} lyapunov={v.get('lyapunov')}"
           for v in cert.verification))
    _emit(args, man.result, [["C"] + [_fmt(c) for c in cert.C.ravel()]])
    return EXIT_OK


def cmd_identify(args, man: RunManifest) -> int:
    ds = _dataset(args)
    man.inputs["dataset"] = {"path": str(args.dataset), "sha256": _digest(args.dataset)}
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", inf.NoisePresent)
        sys_hat = inf.identify(ds, args.method, args.spline_level)
    man.timings["identify"] = time.perf_counter() - t0
    if any(issubclass(w.category, inf.NoisePresent) for w in caught):
        man.result["warning"] = "noise present"
        print("warning: dataset carries a nonzero noise record", file=sys.stderr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sys_hat.save(out)
    gs = gram.build_gram_set(ds)
    man.outputs["system"] = str(out)
    man.result.update({"method": args.method, "R": sys_hat.R,
                       "residual": inf.identification_residual(gs, sys_hat)})
    _say(args, f"identified R ({args.method}):",
         *("  " + " ".join(f"{x: .17g}" for x in row) for row in sys_hat.R),
         f"relative residual {_fmt(man.result['residual'])}")
    _emit(args, man.result, [[_fmt(x) for x in row] for row in sys_hat.R])
    return EXIT_OK


def _load_controller(path) -> Controller:
    with Path(path).open(encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("kind") == "certificate":
        d = d["controller"]
    return Controller.from_dict(d)


def cmd_verify(args, man: RunManifest) -> int:
    sys_ = ArSystem.load(args.system)
    ctrl = _load_controller(args.controller)
    man.inputs = {"system": {"path": str(args.system), "sha256": _digest(args.system)},
                  "controller": {"path": str(args.controller), "sha256": _digest(args.controller)}}
    cl = close_loop(sys_, ctrl)
    eig_ok = is_hurwitz(cl)
    lyap = lyapunov_lmi_check(sys_, ctrl, solver=args.solver)
    man.result = {"hurwitz": eig_ok, "spectral_abscissa": cl.spectral_abscissa(),
                  "lyapunov_stable": lyap.stable, "psi_margin": lyap.psi_margin,
                  "lyapunov_margin": lyap.lyap_margin, "agree": eig_ok == lyap.stable}
    _say(args, f"eigenvalue check: {'Hurwitz' if eig_ok else 'not Hurwitz'} "
               f"(max real part {_fmt(cl.spectral_abscissa())})",
         f"Lyapunov LMI: {'feasible' if lyap.stable else 'not certified'}",
         "checks agree" if eig_ok == lyap.stable else "checks DISAGREE")
    _emit(args, man.result)
    return EXIT_OK if (eig_ok and lyap.stable) else EXIT_UNSTABLE


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="synthop", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"synthop {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default values for flags")
    common.add_argument("--emit", choices=["text", "csv", "json"], default=None)
    common.add_argument("--manifest", help="where to write the run manifest")
    common.add_argument("--solver", help="clarabel (default), scs, cvxopt or sdpa:<command>")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("dataset", help="dataset manifest (.json) or a single trajectory CSV")
    data.add_argument("--L", type=int)
    data.add_argument("--m", type=int)
    data.add_argument("--p", type=int)
    lmi = argparse.ArgumentParser(add_help=False)
    lmi.add_argument("--theta", help="noise bound: scalar (times I), JSON matrix, or file")
    lmi.add_argument("--epsilon", type=float,
                     help="LMI margin in balanced coordinates (default 1e-6 (1 + |S N S|_F))")

    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="generate a dataset")
    s.add_argument("--scenario", default="pendulum", help="'pendulum' or a scenario JSON file")
    s.add_argument("--seed", type=int)
    s.add_argument("--sigma", type=float, help="noise intensity sigma (covariance sigma^2)")
    s.add_argument("--K", type=int, help="number of valid trajectories")
    s.add_argument("--out", default="dataset")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check", parents=[common, data, lmi], help="informativity verdict")
    c.set_defaults(func=cmd_check)

    d = sub.add_parser("design", parents=[common, data, lmi], help="design a controller")
    d.add_argument("--out", default="controller.json")
    d.add_argument("--candidate", action="append", help="system JSON to verify against")
    d.set_defaults(func=cmd_design)

    i = sub.add_parser("identify", parents=[common, data], help="identify R from noise-free data")
    i.add_argument("--method", choices=["operator", "spline"], default="operator")
    i.add_argument("--spline-level", type=int, dest="spline_level")
    i.add_argument("--out", default="system.json")
    i.set_defaults(func=cmd_identify)

    v = sub.add_parser("verify", parents=[common], help="stability of a system/controller pair")
    v.add_argument("system")
    v.add_argument("controller")
    v.set_defaults(func=cmd_verify)
    return ap


def _apply_config(ap, args, config: dict):
    defaults = {a.dest: a.default for a in _subparser(ap, args.command)._actions}
    for key, val in config.items():
        key = key.replace("-", "_")
        if key in defaults and getattr(args, key, None) == defaults[key]:
            setattr(args, key, val)


def _subparser(ap, name):
    for action in ap._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _manifest_path(args) -> Path:
    if args.manifest:
        return Path(args.manifest)
    if args.command == "simulate":
        return Path(args.out) / "run_manifest.json"
    if getattr(args, "out", None):
        return Path(args.out).parent / f"{Path(args.out).stem}.manifest.json"
    return Path(f"synthop-{args.command}.manifest.json")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    args = ap.parse_args(argv)
    man = RunManifest(command=args.command, argv=argv, config_path=args.config)
    start = time.perf_counter()
    code = EXIT_OK
    try:
        _apply_config(ap, args, _load_config(args.config))
        if args.emit is None:
            args.emit = "text"
        code = args.func(args, man)
    except (FileNotFoundError, DataFormatError, UsageError, LowAcceptanceRate, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        man.result["error"] = str(exc)
        code = EXIT_USAGE
    except PreconditionFailed as exc:
        print(f"preconditions failed: {exc}", file=sys.stderr)
        man.result["error"] = str(exc)
        man.result["preconditions"] = exc.report.to_dict() if exc.report is not None else None
        code = EXIT_PRECONDITION
    except Infeasible as exc:
        print(f"not informative: {exc}", file=sys.stderr)
        man.result["error"] = str(exc)
        code = EXIT_NOT_INFORMATIVE
    except NotSurjective as exc:
        print(f"not surjective: {exc}", file=sys.stderr)
        man.result["error"] = str(exc)
        code = EXIT_PRECONDITION
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        man.result["error"] = str(exc)
        code = EXIT_SOLVER
    except SynthopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        man.result["error"] = str(exc)
        code = EXIT_USAGE
    man.timings["total"] = time.perf_counter() - start
    man.exit_code = code
    try:
        man.write(_manifest_path(args))
    except OSError as exc:
        print(f"warning: could not write manifest: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
