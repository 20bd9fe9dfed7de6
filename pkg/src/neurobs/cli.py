"""Command-line interface: verify, synthesize, simulate, sweep, report.

Exit codes are stable: 0 success / certificate verified, 1 bad input
(parse or schema), 2 infeasibility suspected, 3 iteration budget exhausted,
4 rank gate failed (unobservable / uncontrollable configuration).  Every
command writes a manifest next to its outputs so a run can be repeated
bit-identically.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .lmi import (
    assemble_corollary2,
    assemble_theorem1,
    assemble_theorem2,
    assemble_theorem3,
    assemble_theorem4,
)
from .nn import Activation, NeuralNet
from .sdp import solve_feasibility, verify_certificate
from .sim import epsilon_sweep, metrics, simulate
from .scenarios import (
    ScenarioError,
    sample_config,
    scenario_from_json,
    scenario_pendulum,
    scenario_to_json,
    scenario_vehicle,
    scenario_x29,
)
from .synthesis import (
    synthesize_chain_nets,
    synthesize_corollary2,
    synthesize_feedback_pair,
    synthesize_observer_nn,
    synthesize_uncertainty_nets,
)

EXIT_OK = 0
EXIT_BAD_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_MAX_ITER = 3
EXIT_RANK = 4

THEOREMS = ("1", "2", "3", "3c", "4")


class InputError(Exception):
    """Bad configuration; maps to exit code 1."""


def _load_json_file(path):
    p = Path(path)
    if not p.exists():
        raise InputError(f"{path}: file not found")
    try:
        with open(p) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _matrix(cfg, key, path):
    if key not in cfg:
        raise InputError(f"{path}: missing required field {key!r}")
    try:
        return np.atleast_2d(np.asarray(cfg[key], float))
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: field {key!r} is not a numeric matrix") from exc


def _load_nets(path) -> list:
    """nn.json holding one network, a list, or a bundle {'nets': [...]}."""
    d = _load_json_file(path)
    try:
        if isinstance(d, dict) and "nets" in d:
            return [NeuralNet.from_json(n) for n in d["nets"]], d
        if isinstance(d, list):
            return [NeuralNet.from_json(n) for n in d], {}
        return [NeuralNet.from_json(d)], {}
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: invalid network description ({exc})") from exc


def _out_dir(arg, default_name) -> Path:
    p = Path(arg) if arg else Path(default_name)
    if p.suffix == ".json":
        p.parent.mkdir(parents=True, exist_ok=True)
        return p
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_manifest(out_dir: Path, command: str, args, seed, started, extra=None):
    man = {
        "command": command,
        "argv": list(sys.argv[1:]),
        "config_paths": [str(a) for a in args],
        "seed": seed,
        "output_dir": str(out_dir),
        "tool_version": __version__,
        "wall_clock_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "duration_s": round(time.time() - started, 3),
    }
    if extra:
        man.update(extra)
    target = out_dir / "manifest.json" if out_dir.is_dir() else \
        out_dir.with_suffix(".manifest.json")
    with open(target, "w") as fh:
        json.dump(man, fh, indent=2)


def _assemble_for_theorem(theorem, cfg, cfg_path, nets, margin=None, eps=None):
    if theorem == "1":
        if len(nets) != 1:
            raise InputError("theorem 1 needs exactly one network")
        return assemble_theorem1(_matrix(cfg, "A", cfg_path),
                                 _matrix(cfg, "C", cfg_path), nets[0], margin)
    if theorem == "2":
        if len(nets) != 2:
            raise InputError("theorem 2 needs two networks (feedback, observer)")
        return assemble_theorem2(_matrix(cfg, "A", cfg_path),
                                 _matrix(cfg, "B", cfg_path),
                                 _matrix(cfg, "C", cfg_path),
                                 nets[0], nets[1], margin)
    if theorem == "3":
        n = int(cfg.get("n", 0))
        if n < 1:
            raise InputError(f"{cfg_path}: chain order 'n' must be a positive integer")
        if len(nets) != n + 1:
            raise InputError(f"theorem 3 needs n+1 = {n + 1} networks")
        return assemble_theorem3(n, nets, margin)
    if theorem == "3c":
        n = int(cfg.get("n", 0))
        if n < 1:
            raise InputError(f"{cfg_path}: chain order 'n' must be a positive integer")
        if len(nets) != 1:
            raise InputError("the reduced chain certificate takes one shared network")
        b = cfg.get("b", [1.0] * (n + 1))
        return assemble_corollary2(n, nets[0], b, margin)
    if theorem == "4":
        if len(nets) != 2:
            raise InputError("theorem 4 needs two networks (state, uncertainty)")
        e = eps if eps is not None else float(cfg.get("eps", 0.0))
        if e <= 0:
            raise InputError("theorem 4 needs a positive eps (config field or --eps)")
        return assemble_theorem4(_matrix(cfg, "A", cfg_path),
                                 _matrix(cfg, "B_w", cfg_path),
                                 _matrix(cfg, "C", cfg_path), e,
                                 nets[0], nets[1], margin)
    raise InputError(f"unknown theorem {theorem!r} (choose from {THEOREMS})")


def cmd_verify(args) -> int:
    started = time.time()
    cfg = _load_json_file(args.system)
    nets, bundle = _load_nets(args.nn)
    theorem = args.theorem or bundle.get("theorem")
    if theorem is None:
        raise InputError("--theorem is required when the network file has no bundle tag")
    inst = _assemble_for_theorem(theorem, cfg, args.system, nets,
                                 args.margin, args.eps)
    cert = solve_feasibility(inst, max_iter=args.max_iter)
    report = verify_certificate(inst, cert)
    out = _out_dir(args.out, "verify_out")
    with open(out / "certificate.json", "w") as fh:
        json.dump(cert.to_json(), fh, indent=2)
    with open(out / "verify.json", "w") as fh:
        json.dump(report.to_json(), fh, indent=2)
    with open(out / "instance.json", "w") as fh:
        json.dump(inst.to_json(), fh, indent=2)
    _write_manifest(out, "verify", [args.system, args.nn], None, started,
                    {"theorem": theorem, "status": cert.status,
                     "verified": report.passed})
    print(f"theorem {theorem}: {cert.status} "
          f"(verified: {report.passed}, iterations: {cert.iterations})")
    if cert.status == "feasible" and report.passed:
        return EXIT_OK
    if cert.status == "infeasible_suspected":
        return EXIT_INFEASIBLE
    return EXIT_MAX_ITER


def _parse_arch(text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) < 3:
        raise InputError("--arch must be L,width1,...,widthL,activation")
    try:
        L = int(parts[0])
        widths = [int(p) for p in parts[1:1 + L]]
        act = parts[1 + L]
    except (ValueError, IndexError) as exc:
        raise InputError(f"bad --arch {text!r}: {exc}") from exc
    if act not in ("relu", "tanh", "leaky_relu", "fal"):
        raise InputError(f"unknown activation {act!r}")
    if act == "fal":
        act = Activation.fal(0.5, 1.0)
    elif act == "leaky_relu":
        act = Activation.leaky_relu(0.01)
    return (L, widths, act)


def cmd_synthesize(args) -> int:
    started = time.time()
    cfg = _load_json_file(args.system)
    arch = _parse_arch(args.arch)
    theorem = args.theorem
    try:
        if theorem == "1":
            net = synthesize_observer_nn(_matrix(cfg, "A", args.system),
                                         _matrix(cfg, "C", args.system),
                                         arch, seed=args.seed, decay=args.decay)
            bundle = {"theorem": "1", "nets": [net.to_json()]}
        elif theorem == "2":
            n1, n2 = synthesize_feedback_pair(
                _matrix(cfg, "A", args.system), _matrix(cfg, "B", args.system),
                _matrix(cfg, "C", args.system), arch, arch,
                seed=args.seed, decay=args.decay,
            )
            bundle = {"theorem": "2", "nets": [n1.to_json(), n2.to_json()]}
        elif theorem == "3":
            n = int(cfg.get("n", 0))
            if n < 1:
                raise InputError(f"{args.system}: chain order 'n' must be positive")
            nets = synthesize_chain_nets(n, arch, seed=args.seed, decay=args.decay)
            bundle = {"theorem": "3", "n": n,
                      "nets": [net.to_json() for net in nets]}
        elif theorem == "3c":
            n = int(cfg.get("n", 0))
            if n < 1:
                raise InputError(f"{args.system}: chain order 'n' must be positive")
            net, b = synthesize_corollary2(n, arch, seed=args.seed)
            bundle = {"theorem": "3c", "n": n, "b": b.tolist(),
                      "nets": [net.to_json()]}
        elif theorem == "4":
            e = args.eps if args.eps is not None else float(cfg.get("eps", 0.0))
            if e <= 0:
                raise InputError("theorem 4 needs a positive eps")
            n1, n2 = synthesize_uncertainty_nets(
                _matrix(cfg, "A", args.system), _matrix(cfg, "B_w", args.system),
                _matrix(cfg, "C", args.system), e, arch, seed=args.seed,
                decay=args.decay,
            )
            bundle = {"theorem": "4", "eps": e,
                      "nets": [n1.to_json(), n2.to_json()]}
        else:
            raise InputError(f"unknown theorem {theorem!r}")
    except ValueError as exc:
        # rank gates inside the synthesizers surface as ValueError
        print(f"synthesis rejected: {exc}", file=sys.stderr)
        return EXIT_RANK
    out = _out_dir(args.out, "nn.json")
    target = out / "nn.json" if out.is_dir() else out
    with open(target, "w") as fh:
        json.dump(bundle, fh, indent=2)
    _write_manifest(out, "synthesize", [args.system], args.seed, started,
                    {"theorem": theorem, "arch": args.arch})
    print(f"wrote {target}")
    return EXIT_OK


def _build_scenario(args):
    d = _load_json_file(args.scenario)
    if "plant" in d:
        try:
            sc = scenario_from_json(d)
        except ScenarioError as exc:
            raise InputError(f"{args.scenario}: {exc}") from exc
    elif d.get("scenario") == "pendulum":
        sc = scenario_pendulum(**d.get("overrides", {}))
    elif d.get("scenario") == "x29":
        sc = scenario_x29(d.get("config") or sample_config("x29"),
                          **d.get("overrides", {}))
    elif d.get("scenario") == "vehicle":
        sc = scenario_vehicle(d.get("config") or sample_config("vehicle"),
                              **d.get("overrides", {}))
    else:
        raise InputError(
            f"{args.scenario}: provide a structural scenario (plant/observers/"
            "controller/numerics) or a builder reference"
        )
    if args.seed is not None:
        sc.seed = args.seed
    return sc


def cmd_simulate(args) -> int:
    started = time.time()
    sc = _build_scenario(args)
    trace = simulate(sc)
    out = _out_dir(args.out, "sim_out")
    trace.to_csv(out / "trace.csv")
    t0, t1 = sc.t_span
    window = (t0 + 0.3 * (t1 - t0), trace.t[-1])
    try:
        met = metrics(trace, window)
        with open(out / "metrics.json", "w") as fh:
            json.dump(met.to_json(), fh, indent=2)
    except ValueError:
        pass  # truncated runs may leave no usable window
    _write_manifest(out, "simulate", [args.scenario], sc.seed, started,
                    {"failed": trace.failed, "blow_up_time": trace.blow_up_time})
    print(f"wrote {out}/trace.csv ({len(trace.t)} samples"
          f"{', TRUNCATED' if trace.failed else ''})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.time()
    sc = _build_scenario(args)
    try:
        eps_list = [float(e) for e in args.eps.split(",")]
    except ValueError as exc:
        raise InputError(f"bad --eps list {args.eps!r}") from exc
    try:
        sweep = epsilon_sweep(sc, eps_list)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    out = _out_dir(args.out, "sweep_out")
    sweep.to_csv(out / "sweep.csv")
    _write_manifest(out, "sweep", [args.scenario], sc.seed, started,
                    {"eps": eps_list, "failed": sweep.failed})
    print(f"wrote {out}/sweep.csv")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import consolidate

    try:
        md = consolidate(args.run_dir)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_BAD_INPUT
    print(f"wrote {md}")
    return EXIT_OK


def cmd_sample_config(args) -> int:
    try:
        cfg = sample_config(args.which)
    except ScenarioError as exc:
        raise InputError(str(exc)) from exc
    text = json.dumps(cfg, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


def cmd_make_scenario(args) -> int:
    started = time.time()
    cfg = _load_json_file(args.config) if args.config else None
    try:
        if args.which == "pendulum":
            sc = scenario_pendulum(seed=args.seed)
        elif args.which == "x29":
            sc = scenario_x29(cfg or sample_config("x29"), seed=args.seed)
        elif args.which == "vehicle":
            sc = scenario_vehicle(cfg or sample_config("vehicle"), seed=args.seed)
        else:
            raise InputError(f"unknown scenario {args.which!r}")
    except ScenarioError as exc:
        print(f"scenario rejected: {exc}", file=sys.stderr)
        return EXIT_RANK
    out = Path(args.out or f"{args.which}_scenario.json")
    with open(out, "w") as fh:
        json.dump(scenario_to_json(sc), fh, indent=2)
    _write_manifest(out, "make-scenario", [args.config] if args.config else [],
                    args.seed, started)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="neurobs",
        description="Certify, synthesize and simulate neural observers.",
    )
    p.add_argument("--version", action="version", version=f"neurobs {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    v = sub.add_parser("verify", help="assemble, solve and re-verify a certificate")
    v.add_argument("system", help="system JSON (matrices / chain order)")
    v.add_argument("nn", help="network JSON (single, list, or synthesis bundle)")
    v.add_argument("--theorem", choices=THEOREMS)
    v.add_argument("--margin", type=float, default=None)
    v.add_argument("--eps", type=float, default=None)
    v.add_argument("--max-iter", type=int, default=2000)
    v.add_argument("--out", default=None)
    v.set_defaults(fn=cmd_verify)

    s = sub.add_parser("synthesize", help="construct a certified network")
    s.add_argument("system")
    s.add_argument("--theorem", choices=THEOREMS, default="1")
    s.add_argument("--arch", default="2,3,2,tanh",
                   help="L,width1,...,widthL,activation")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--decay", type=float, default=0.0)
    s.add_argument("--eps", type=float, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_synthesize)

    m = sub.add_parser("simulate", help="run a closed-loop scenario")
    m.add_argument("scenario")
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--out", default=None)
    m.set_defaults(fn=cmd_simulate)

    w = sub.add_parser("sweep", help="rerun a scenario across observer gains")
    w.add_argument("scenario")
    w.add_argument("--eps", default="0.2,0.1,0.05")
    w.add_argument("--seed", type=int, default=None)
    w.add_argument("--out", default=None)
    w.set_defaults(fn=cmd_sweep)

    r = sub.add_parser("report", help="consolidate a run directory")
    r.add_argument("run_dir")
    r.set_defaults(fn=cmd_report)

    c = sub.add_parser("sample-config", help="print a bundled sample config")
    c.add_argument("which", choices=("x29", "vehicle"))
    c.add_argument("--out", default=None)
    c.set_defaults(fn=cmd_sample_config)

    g = sub.add_parser("make-scenario", help="emit a scenario JSON from a builder")
    g.add_argument("which", choices=("pendulum", "x29", "vehicle"))
    g.add_argument("--config", default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None)
    g.set_defaults(fn=cmd_make_scenario)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
