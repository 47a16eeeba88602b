"""Command line front end: ``vpstab <subcommand>``.

Exit codes: 0 success, 1 numeric failure or failed verification, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .errors import ConfigError, NumericFailure

log = logging.getLogger("vpstab")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


def _casimir(k):
    from .casimir import CasimirFunction

    return CasimirFunction.polytropic(k)


def cmd_build_steady(args):
    from . import functionals as fn
    from .manifest import RunManifest
    from .steady import build_steady

    if not args.mass > 0:
        raise ConfigError("--mass must be positive")
    s = build_steady(_casimir(args.k), args.mass, args.z0_seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(out / "manifest.json", "build-steady",
                      dict(k=args.k, M=args.mass, z0_seed=args.z0_seed))
    man.write()
    json_path, csv_path = out / f"{args.name}.json", out / f"{args.name}.csv"
    s.to_files(json_path, csv_path)
    man.declare(json_path)
    man.declare(csv_path)
    virial = fn.virial_residual(s)
    man.finish(E0=s.E0, R=s.R, h_M=s.h_M, virial_residual=virial)
    print(f"E0 = {s.E0:.12g}")
    print(f"R = {s.R:.12g}")
    print(f"h_M = {s.h_M:.12g}")
    print(f"virial residual = {virial:.3e}")
    return EXIT_OK


def cmd_sample(args):
    from .ensemble import sample_f0, write_snapshot
    from .steady import build_steady

    if args.N < 1:
        raise ConfigError("-N must be at least 1")
    s = build_steady(_casimir(args.k), args.mass)
    ens = sample_f0(s, args.N, args.seed, method=args.method)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_snapshot(ens, path, dict(k=args.k, M=args.mass, N=args.N, seed=args.seed,
                                   method=args.method, code_version=__version__))
    print(f"wrote {ens.n} markers to {path}")
    return EXIT_OK


def _load_config_or_manifest(path):
    from .config import load_config, parse_config

    text_path = Path(path)
    try:
        data = json.loads(text_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if isinstance(data, dict) and "command" in data and "config" in data:
        return parse_config(data["config"])
    return load_config(path)


def cmd_evolve(args):
    from .dynamics import ForceModel, default_softening, evolve
    from .manifest import RunManifest
    from .stability import Perturbation, perturb
    from .steady import build_steady

    cfg = _load_config_or_manifest(args.config)
    out = Path(args.output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(out / "manifest.json", "evolve", cfg.model_dump(), seeds=dict(seed=cfg.seed))
    man.write()
    s = build_steady(_casimir(cfg.steady.k), cfg.steady.M)
    p = cfg.perturbation
    ens = perturb(s, Perturbation(p.kind, tuple(p.V), p.epsilon, p.fraction,
                                  cfg.seed if p.seed is None else p.seed), cfg.N, cfg.seed)
    it = cfg.integrator
    eps = default_softening(s.R, cfg.N) if it.softening is None else it.softening
    model = ForceModel(it.method, eps, it.theta)
    cadence = max(1, int(round(cfg.cadence_tdyn / it.dt)))
    snap = (max(1, int(round(cfg.snapshot_every_tdyn / it.dt)))
            if cfg.snapshot_every_tdyn else None)
    traj = evolve(ens, cfg.horizon_tdyn * s.t_dyn, it.dt * s.t_dyn, model, cadence=cadence,
                  casimir=s.casimir, snapshot_dir=out / "snapshots" if snap else None,
                  snapshot_every=snap, manifest=dict(seed=cfg.seed, softening=eps))
    path = out / "diagnostics.csv"
    rows = [r.flat() for r in traj.records]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(v)) if isinstance(v, float) else v
                             for k, v in row.items()})
    man.declare(path)
    for snap_path in traj.snapshots:
        man.declare(snap_path)
        man.declare(Path(snap_path).with_suffix(".json"))
    man.finish("halted" if traj.halted else "ok", message=traj.message, softening=eps)
    print(f"{len(rows)} records written to {path}")
    if traj.halted:
        print(traj.message, file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_stability(args):
    from .manifest import RunManifest
    from .stability import stability_experiment

    cfg = _load_config_or_manifest(args.config)
    out = Path(args.output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(out / "manifest.json", "stability", cfg.model_dump(),
                      seeds=dict(seed=cfg.seed, perturbation=cfg.perturbation.seed),
                      tolerances=cfg.shift.model_dump())
    man.write()
    try:
        res = stability_experiment(cfg, output_dir=out, manifest=man)
    except Exception:
        for name in ("metrics.csv", "concentration.csv"):
            if (out / name).exists():
                man.declare(out / name)
        man.finish("failed")
        raise
    for f in res.files:
        if Path(f).suffix == ".csv" and Path(f).with_suffix(".json").exists():
            man.declare(Path(f).with_suffix(".json"))
    man.finish("halted" if res.halted else "ok", initial_total=res.initial_total,
               sup_total=res.sup_total, growth=res.sup_total / res.initial_total,
               concentration=res.concentration)
    print(f"initial metric = {res.initial_total:.6g}")
    print(f"sup shifted metric = {res.sup_total:.6g}")
    print(f"outputs in {out}")
    return EXIT_NUMERIC if res.halted else EXIT_OK


def cmd_verify(args):
    from . import acceptance

    if args.list:
        for c in acceptance.select(args.suite, args.criterion):
            print(f"{c.number:2d}. [{c.suite}] {c.name}: {c.anchor}")
        return EXIT_OK
    man = None
    if args.out_dir:
        from .manifest import RunManifest

        man = RunManifest(Path(args.out_dir) / "manifest.json", "verify",
                          dict(suite=args.suite, criteria=args.criterion))
        man.write()
    results = acceptance.run_suite(args.suite, args.criterion, echo=print)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    if man is not None:
        man.finish("failed" if failed else "ok",
                   acceptance={str(r.number): dict(passed=r.passed, details=r.details)
                               for r in results})
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_concentration(args):
    from .ensemble import read_snapshot
    from .stability import concentration_profile

    radii = np.asarray(args.radii, dtype=float)
    if radii.size == 0 or np.any(radii <= 0):
        raise ConfigError("--radii must be positive")
    ens = read_snapshot(args.snapshot)
    prof = concentration_profile(ens, radii)
    rows = [("r", "mass")] + [(repr(float(r)), repr(float(m))) for r, m in zip(radii, prof)]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    for r, m in rows:
        print(f"{r},{m}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="vpstab",
                                     description="Energy-Casimir stability laboratory for "
                                                 "self-gravitating Vlasov-Poisson polytropes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"kernel threads (default: ${kernels.THREADS_ENV} or all)")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-steady", help="construct a polytropic steady state")
    p.add_argument("--k", type=float, required=True, help="polytropic exponent, 0 < k < 1.5")
    p.add_argument("--mass", type=float, required=True)
    p.add_argument("--z0-seed", type=float, default=1.0, help="central value for the first shot")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--name", default="steady", help="basename of the JSON and CSV files")
    p.set_defaults(func=cmd_build_steady)

    p = sub.add_parser("sample", help="draw a marker realisation of f0")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--mass", type=float, required=True)
    p.add_argument("-N", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=["auto", "stratified", "rejection"], default="auto")
    p.add_argument("--out", required=True, help="snapshot CSV path")
    p.set_defaults(func=cmd_sample)

    for name, func, text in (("evolve", cmd_evolve, "evolve perturbed f0 and record diagnostics"),
                             ("stability", cmd_stability, "run a full stability experiment")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="experiment config JSON (or a previous run manifest)")
        p.add_argument("--output-dir", default=None, help="overrides output_dir of the config")
        p.set_defaults(func=func)

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--suite", default="all",
                   choices=["steady", "functionals", "dynamics", "stability", "all"])
    p.add_argument("--criterion", type=int, nargs="*", default=None, help="criterion numbers")
    p.add_argument("--list", action="store_true", help="list criteria without running them")
    p.add_argument("--out-dir", default=None, help="write a manifest with the pass/fail summary")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("concentration", help="best-ball mass profile of a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--radii", type=float, nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_concentration)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        kernels.configure_threads(args.threads)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
