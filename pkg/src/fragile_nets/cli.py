"""Command-line front end: ``fragile-nets {simulate,fragility,equilibrium,compare-topologies}``.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .core import (
    SEED_ENV, THREADS_ENV, ParticleSpec, RunConfig, apply_overrides, clustered_kernel, config_from_dict, config_hash,
    read_config_dict, uniform_kernel, write_csv, write_json,
)
from .dynamic import no_cascade_check, picard_solve
from .errors import FragileNetsError, InputError, TotalWipeoutError, ValidationError
from .fragility import FragilityInput, classify
from .particles import run_sim

CHECKPOINTS = 10


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--out", required=True, help="output directory (created if absent)")
    common.add_argument("--seed", type=int, help=f"override the configured seed (and ${SEED_ENV})")
    common.add_argument("--force", action="store_true", help="overwrite existing result files")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path config override, e.g. dynamics.sigma=0.5 (repeatable)")

    p = _Parser(prog="fragile-nets", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fragile-nets {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="finite-N particle simulation with cascades")
    frag = sub.add_parser("fragility", parents=[common], help="classify a state as fragile or not")
    frag.add_argument("--marginals", help="marginals CSV written by 'simulate' (default: initial densities)")
    eq = sub.add_parser("equilibrium", parents=[common], help="solve the credit-network game")
    eq.add_argument("--verify", action="store_true", help="Monte Carlo consistency and no-cascade checks")
    eq.add_argument("--emit-densities", action="store_true", help="also dump the density field")
    cmp_ = sub.add_parser("compare-topologies", parents=[common], help="fragility under alternative kernels")
    cmp_.add_argument("--kernels", default="clustered,uniform", help="comma-separated kernel names")
    return p


# ---------------------------------------------------------------------------
# plumbing


def load(args) -> tuple[RunConfig, dict]:
    raw = apply_overrides(read_config_dict(args.config), args.overrides)
    cfg = config_from_dict(raw)
    if args.seed is not None:
        cfg = cfg.replace(particles=ParticleSpec(cfg.particles.N, args.seed))
    return cfg, raw


def prepare_out(out: str, names, force: bool) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    clash = [n for n in names if (path / n).exists()]
    if clash and not force:
        raise ValidationError(f"{path}: refusing to overwrite {', '.join(clash)} (use --force)")
    return path


def manifest(command: str, cfg: RunConfig, files, extra=None) -> dict:
    d = {
        "command": command,
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seed": cfg.particles.seed,
        "threads": os.environ.get(THREADS_ENV),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "files": sorted(files),
        "config": cfg.to_dict(),
    }
    if extra:
        d.update(extra)
    return d


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg, _ = load(args)
    files = ["trajectory.csv", "cascades.json", "marginals.csv", "manifest.json"]
    out = prepare_out(args.out, files, args.force)
    res = run_sim(cfg, record_marginals=[cfg.grid.n_t])
    res.write_trajectory(out / "trajectory.csv")
    res.write_cascades(out / "cascades.json")
    res.write_marginals(out / "marginals.csv")
    write_json(out / "manifest.json", manifest("simulate", cfg, files, {"N": cfg.particles.N}))
    final = res.survived[:, -1]
    for lab, f in zip(cfg.network.types, final):
        print(f"{lab}: survived fraction {f:.6f}")
    return 0


def read_marginals(path: Path, cfg: RunConfig):
    """Survivor samples at the last recorded time, and survival fractions from the run manifest."""
    if not path.is_file():
        raise ValidationError(f"marginals file not found: {path}")
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "type", "value"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: expected columns t,type,value")
        for rec in reader:
            rows.setdefault(rec["type"], []).append((float(rec["t"]), float(rec["value"])))
    man_path = path.parent / "manifest.json"
    if not man_path.is_file():
        raise ValidationError(f"{path}: the run manifest {man_path} is required to recover N")
    man = json.loads(man_path.read_text(encoding="utf-8"))
    N = int(man["N"])
    samples, surv = [], []
    for lab in cfg.network.types:
        recs = rows.get(str(lab), [])
        t_last = max((t for t, _ in recs), default=0.0)
        vals = np.array([v for t, v in recs if t == t_last])
        samples.append(vals)
        surv.append(max(vals.size, 1) / N)
    return samples, np.array(surv), man_path


def cmd_fragility(args) -> int:
    cfg, _ = load(args)
    files = ["fragility.json", "fragility.txt", "manifest.json"]
    out = prepare_out(args.out, files, args.force)
    extra = {}
    if args.marginals:
        marg, surv, man_path = read_marginals(Path(args.marginals), cfg)
        extra["source_manifest"] = str(man_path)
        extra["source_config_hash"] = json.loads(man_path.read_text(encoding="utf-8")).get("config_hash")
    else:
        if not cfg.initial:
            raise ValidationError("fragility needs --marginals or 'initial' densities in the config")
        marg, surv = list(cfg.initial), np.ones(cfg.network.n)
    rep = classify(FragilityInput(marg, surv, cfg.g, cfg.network), cfg.tolerances.frag_tol)
    payload = rep.to_dict()
    payload.update(extra)
    write_json(out / "fragility.json", payload)
    table = rep.table()
    (out / "fragility.txt").write_text(table + "\n", encoding="utf-8")
    write_json(out / "manifest.json", manifest("fragility", cfg, files, extra))
    print(table)
    return 0


def consistency_check(path, cfg: RunConfig, checkpoints: int = CHECKPOINTS, n_se: float = 3.0) -> dict:
    """Monte Carlo survival under the equilibrium drifts versus the PDE survival."""
    sim = run_sim(cfg, path.drift[:, :-1], interact=False, bridge=True)
    idx = np.unique(np.linspace(0, cfg.grid.n_t, checkpoints + 1).round().astype(int)[1:])
    th = path.theta[:, idx]
    mc = sim.survived[:, idx]
    se = np.sqrt(np.clip(th * (1 - th), 1e-300, None) / sim.N)
    z = np.abs(mc - th) / se
    return {"passed": bool(np.all(z <= n_se)), "t": path.times[idx], "theta_pde": th, "theta_mc": mc,
            "z_scores": z, "N": sim.N}


def cmd_equilibrium(args) -> int:
    cfg, _ = load(args)
    files = ["path.json", "manifest.json", *(f"{q}.csv" for q in ("lambda_bar", "theta", "r", "R", "cb", "cl", "drift"))]
    if args.emit_densities:
        files += ["densities.csv", "densities.json"]
    if args.verify:
        files.append("verification.json")
    out = prepare_out(args.out, files, args.force)
    path = picard_solve(cfg)
    path.write_json(out / "path.json")
    path.write_csvs(out)
    if args.emit_densities:
        path.density.write_csv(out / "densities.csv")
        path.density.write_json(out / "densities.json")
    code = 0
    extra = {"iterations": path.iterations}
    if args.verify:
        cascade = no_cascade_check(path, cfg, raise_on_failure=False)
        mc = consistency_check(path, cfg)
        block = {"passed": bool(cascade["passed"] and mc["passed"]), "no_cascade": cascade, "consistency": mc}
        write_json(out / "verification.json", block)
        extra["verification_passed"] = block["passed"]
        print(f"verification: {'pass' if block['passed'] else 'FAIL'}")
        if not block["passed"]:
            code = 2
    write_json(out / "manifest.json", manifest("equilibrium", cfg, files, extra))
    print(f"converged in {path.iterations} iterations; final survival "
          + ", ".join(f"{lab}={th:.6f}" for lab, th in zip(cfg.network.types, path.theta[:, -1])))
    return code


KERNELS = {"clustered": clustered_kernel, "uniform": uniform_kernel}


def cmd_compare_topologies(args) -> int:
    cfg, _ = load(args)
    names = [k.strip() for k in args.kernels.split(",") if k.strip()]
    unknown = [k for k in names if k not in KERNELS]
    if unknown or not names:
        raise ValidationError(f"--kernels: unknown kernel(s) {unknown}; choose from {sorted(KERNELS)}")
    if not cfg.initial:
        raise ValidationError("compare-topologies needs 'initial' densities in the config")
    files = ["compare.csv", "compare.json", "manifest.json"]
    out = prepare_out(args.out, files, args.force)
    rows, payload = [], {"types": list(cfg.network.types), "kernels": {}}
    for name in names:
        net = cfg.network.with_kappa(KERNELS[name](cfg.network.n))
        kcfg = cfg.replace(network=net)
        rep = classify(FragilityInput(list(cfg.initial), np.ones(net.n), cfg.g, net), cfg.tolerances.frag_tol)
        entry = {"report": rep.to_dict()}
        try:
            sim = run_sim(kcfg)
            drops = sim.max_step_drop()
            entry.update(max_step_drop=drops, final_survival=sim.survived[:, -1])
        except TotalWipeoutError as exc:
            # a type lost every particle: the largest possible drop
            wiped = {lab for step in exc.trace[-1:] for lab, f in zip(net.types, step["fractions"]) if f <= 0}
            drops = np.array([1.0 if lab in wiped else np.nan for lab in net.types])
            entry.update(max_step_drop=drops, wipeout=str(exc))
        payload["kernels"][name] = entry
        for k, comp in enumerate(rep.components):
            members = "|".join(str(net.types[m]) for m in comp.members)
            rows.append([name, k, members, comp.closed, comp.rho, rep.verdict.value,
                         max((drops[m] for m in comp.members if not np.isnan(drops[m])), default=np.nan)])
        print(f"{name:>10}: verdict {rep.verdict.value}, max closed rho {rep.max_closed_rho:.6g}")
    columns = ["kernel", "component", "members", "closed", "rho", "kernel_verdict", "max_step_drop"]
    write_csv(out / "compare.csv", columns, rows)
    write_json(out / "compare.json", payload)
    write_json(out / "manifest.json", manifest("compare-topologies", cfg, files))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fragility": cmd_fragility,
    "equilibrium": cmd_equilibrium,
    "compare-topologies": cmd_compare_topologies,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FragileNetsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any other failure is a runtime error, never a new exit code
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
