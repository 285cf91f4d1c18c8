"""Command-line experiment driver.

::

    hjbtree full-tsa --config run.cfg --out results/
    hjbtree pod-tsa  --config run.cfg --out results/
    hjbtree validate --config run.cfg --out results/
    hjbtree info results/tree.bin results/basis.bin
"""

from __future__ import annotations

import argparse
import sys as _sys
import time
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, ExperimentConfig, load_config
from .cost import accumulate_cost, quadratic_tracking_cost
from .model import GridSpec, assemble_burgers, assemble_reaction_diffusion, initial_condition
from .reduction import (
    build_deim,
    build_reduced_tree,
    collect_snapshots,
    compute_pod,
    constant_control_snapshots,
    reduce_system,
    reduced_cost,
)
from .stepper import NewtonParams, Stepper, TimeGrid
from .tree import PruneParams, build_tree, cardinality, equidistributed_controls
from .validation import brute_force_value, convergence_study, pruning_study, tree_error
from .value import backward_sweep, closed_loop_rollout, synthesize_control

__all__ = ["main", "build_problem", "run_full_tsa", "run_pod_tsa", "run_validation", "Problem"]


class Problem:
    """Assembled system, initial state and cost for a config."""

    def __init__(self, cfg: ExperimentConfig):
        if cfg.model == "burgers":
            self.grid = GridSpec(cfg.nx, cfg.nx, "dirichlet")
            self.system = assemble_burgers(self.grid, cfg.sigma, cfg.convection)
        else:
            self.grid = GridSpec(cfg.nx, cfg.nx, "neumann")
            self.system = assemble_reaction_diffusion(self.grid, cfg.sigma, cfg.mu)
        self.x0 = initial_condition(self.grid)
        self.cost = quadratic_tracking_cost(self.grid, cfg.control_weight, cfg.discount)
        self.stepper = Stepper(cfg.stepper, NewtonParams(cfg.newton_tol, cfg.newton_max_iter))
        self.prune = PruneParams(cfg.epsilon, cfg.prune_strategy)


def build_problem(cfg: ExperimentConfig) -> Problem:
    return Problem(cfg)


class _Timer:
    def __init__(self):
        self.phases: dict[str, float] = {}

    def __call__(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.phases[name] = timer.phases.get(name, 0.0) + time.perf_counter() - self.t

        return _Ctx()


def _write_kv(path: Path, items: dict) -> Path:
    with path.open("w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {io.fmt(v) if isinstance(v, (int, float, np.number)) else v}\n")
    return path


def _max_nodes(cfg):
    return cfg.max_nodes or None


def _write_solution(out: Path, tree, vf, rollout_sys, stepper, x0, cf, tg, files: list) -> dict:
    counts, total = cardinality(tree)
    files.append(io.write_csv(out / "tree_summary.csv", ["level", "count"], enumerate(counts)))
    u, idx, _ = synthesize_control(tree, vf)
    m = u.shape[1]
    ucols = ["u"] if m == 1 else [f"u{i + 1}" for i in range(m)]
    files.append(io.write_csv(out / "policy.csv", ["t"] + ucols,
                              ([tg.t(n)] + list(u[n]) for n in range(tg.n_steps))))
    traj = closed_loop_rollout(rollout_sys, stepper, x0, u, tg)
    J, running = accumulate_cost(traj, u, cf, tg, partial=True)
    files.append(io.write_csv(out / "cost.csv", ["t", "J_partial"], zip(tg.times(), running)))
    return {"nodes": total, "value": vf.root_value, "cost": J,
            "final_norm": float(np.linalg.norm(traj[-1])), "policy": " ".join(io.fmt(v) for v in u[:, 0])}


def _finish(out: Path, cfg: ExperimentConfig, command: str, timer: _Timer, summary: dict, files: list) -> dict:
    files.append(_write_kv(out / "timing.txt", timer.phases))
    (out / "config_used.cfg").write_text(cfg.to_text())
    files.append(out / "config_used.cfg")
    summary = {"command": command, "model": cfg.model, **summary,
               "files": " ".join(sorted(p.name for p in files) + ["summary.txt"])}
    _write_kv(out / "summary.txt", summary)
    return summary


def run_full_tsa(cfg: ExperimentConfig, out) -> dict:
    """Full-dimensional tree, sweep, synthesis and rollout."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    p, timer, files = build_problem(cfg), _Timer(), []
    tg = TimeGrid(cfg.t0, cfg.T, cfg.dt)
    U = equidistributed_controls(cfg.controls, cfg.u_lo, cfg.u_hi)
    with timer("tree"):
        tree = build_tree(p.system, p.stepper, p.x0, U, tg, p.prune, _max_nodes(cfg))
    with timer("sweep"):
        vf = backward_sweep(tree, p.cost)
    with timer("rollout"):
        summary = _write_solution(out, tree, vf, p.system, p.stepper, p.x0, p.cost, tg, files)
    if cfg.write_tree:
        files.append(io.write_tree(tree, out / "tree.bin"))
    timer.phases["total"] = sum(timer.phases.values())
    return _finish(out, cfg, "full-tsa", timer, summary, files)


def offline_phase(cfg: ExperimentConfig, p: Problem):
    """Snapshots, POD basis and the reduced system for a config."""
    tg = TimeGrid(cfg.t0, cfg.T, cfg.snapshot_dt)
    U = equidistributed_controls(cfg.snapshot_controls, cfg.u_lo, cfg.u_hi)
    if cfg.snapshot_source == "tree":
        snaps = collect_snapshots(build_tree(p.system, p.stepper, p.x0, U, tg, p.prune, _max_nodes(cfg)))
    else:
        snaps = constant_control_snapshots(p.system, p.stepper, p.x0, U, tg)
    basis = compute_pod(snaps, cfg.energy, cfg.rank or None)
    strategy = cfg.resolved_reduction
    deim = None
    if strategy == "deim":
        deim = build_deim(p.system, basis, snaps, cfg.deim_k or basis.rank_kept, cfg.deim_method)
    return snaps, basis, deim, reduce_system(p.system, basis, strategy, deim)


def run_pod_tsa(cfg: ExperimentConfig, out) -> dict:
    """Offline POD phase, then the reduced tree; the policy is rolled out on the full model."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    p, timer, files = build_problem(cfg), _Timer(), []
    with timer("offline"):
        snaps, basis, deim, rsys = offline_phase(cfg, p)
    tg = TimeGrid(cfg.t0, cfg.T, cfg.dt_online)
    U = equidistributed_controls(cfg.controls_online, cfg.u_lo, cfg.u_hi)
    with timer("online"):
        tree = build_reduced_tree(rsys, p.stepper, p.x0, U, tg, p.prune, _max_nodes(cfg))
        vf = backward_sweep(tree, reduced_cost(p.cost, basis))
    with timer("rollout"):
        summary = _write_solution(out, tree, vf, p.system, p.stepper, p.x0, p.cost, tg, files)
    files.append(io.write_csv(out / "singular_values.csv", ["i", "sigma"],
                              enumerate(basis.singular_values, start=1)))
    files.append(io.write_basis(basis, out / "basis.bin", deim))
    if cfg.write_tree:
        files.append(io.write_tree(tree, out / "tree.bin"))
    timer.phases["total"] = sum(timer.phases.values())
    summary.update({"rank": basis.rank_kept, "energy": basis.energy, "strategy": rsys.strategy,
                    "deim_points": 0 if deim is None else deim.k, "snapshots": snaps.count})
    return _finish(out, cfg, "pod-tsa", timer, summary, files)


def run_validation(cfg: ExperimentConfig, out) -> dict:
    """Oracle equivalence on the toy model, tree error over ranks, convergence and pruning studies."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    timer, files, flags = _Timer(), [], {}
    toy_cfg = ExperimentConfig(**{**_as_dict(cfg), "model": "toy", "nx": 11, "sigma": 0.1,
                                  "source": cfg.source})
    toy = build_problem(toy_cfg)

    with timer("oracle"):
        rows, ok = [], True
        for M in cfg.val_controls:
            U = equidistributed_controls(M, cfg.u_lo, cfg.u_hi)
            for N in cfg.val_steps:
                tg = TimeGrid(cfg.t0, cfg.t0 + N * cfg.dt, cfg.dt)
                v = backward_sweep(build_tree(toy.system, toy.stepper, toy.x0, U, tg, PruneParams(0.0)),
                                   toy.cost).root_value
                b, _ = brute_force_value(toy.system, toy.stepper, toy.x0, U, tg, toy.cost)
                rel = abs(v - b) / abs(b)
                ok &= rel <= 1e-12
                rows.append((M, N, v, b, rel))
        files.append(io.write_csv(out / "oracle.csv", ["M", "N", "sweep", "enumeration", "rel_error"], rows))
        flags["oracle_pass"] = str(bool(ok)).lower()

    with timer("tree_error"):
        p = build_problem(cfg)
        U = equidistributed_controls(cfg.controls, cfg.u_lo, cfg.u_hi)
        tg = TimeGrid(cfg.t0, cfg.val_error_T, cfg.dt)
        full = build_tree(p.system, p.stepper, p.x0, U, tg, PruneParams(0.0))
        pod = compute_pod(collect_snapshots(full), rank=min(max(cfg.val_ells), full.n_nodes, full.dim))
        rows, aggs = [], []
        for ell in cfg.val_ells:
            if ell > pod.rank_kept:
                continue
            b = pod.truncate(ell)
            rt = build_reduced_tree(reduce_system(p.system, b, "full_lift"), p.stepper, p.x0, U, tg,
                                    PruneParams(0.0))
            rep = tree_error(full, rt, b)
            aggs.append((ell, rep.aggregate))
            rows.extend((ell, n, e) for n, e in enumerate(rep.per_level))
        del full
        files.append(io.write_csv(out / "tree_error.csv", ["l", "level", "error"], rows))
        files.append(io.write_csv(out / "tree_error_summary.csv", ["l", "aggregate"], aggs))
        flags["tree_error_nonincreasing"] = str(all(b[1] <= a[1] for a, b in zip(aggs, aggs[1:]))).lower()

    with timer("convergence"):
        U = equidistributed_controls(cfg.controls, cfg.u_lo, cfg.u_hi)
        snap_tree = build_tree(toy.system, toy.stepper, toy.x0, U, TimeGrid(cfg.t0, cfg.conv_T, max(cfg.conv_dts)))
        study = convergence_study(toy.system, toy.stepper, toy.x0, U, toy.cost, cfg.t0, cfg.conv_T,
                                  cfg.conv_dts, cfg.conv_ells, snap_tree, cfg.conv_dt_ref)
        files.append(io.write_csv(out / "convergence.csv",
                                  ["l", "dt", "err_l", "value", "error", "bound"],
                                  ((r["l"], r["dt"], r["err_l"], r["value"], r["error"], r["bound"])
                                   for r in study["rows"])))
        flags["convergence_C"] = study["C"]
        flags["convergence_bound_holds"] = str(all(r["error"] <= r["bound"] for r in study["rows"])).lower()

    with timer("pruning"):
        tg = TimeGrid(cfg.t0, cfg.conv_T, max(cfg.conv_dts) / 2)
        prows = pruning_study(toy.system, toy.stepper, toy.x0, U, tg, toy.cost, cfg.prune_epsilons)
        files.append(io.write_csv(out / "pruning.csv", ["epsilon", "nodes", "value", "gap"],
                                  ((r["epsilon"], r["nodes"], r["value"], r["gap"]) for r in prows)))
        flags["pruning_consistent"] = str(prows[-1]["gap"] <= prows[0]["gap"]
                                          and (cfg.prune_epsilons[-1] > 0 or prows[-1]["gap"] == 0)).lower()
    timer.phases["total"] = sum(timer.phases.values())
    return _finish(out, cfg, "validate", timer, flags, files)


def _as_dict(cfg: ExperimentConfig) -> dict:
    from dataclasses import fields

    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def describe_file(path) -> str:
    """Header of a tree or basis file as ``key = value`` lines."""
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(8)
    if magic == io.TREE_MAGIC:
        h = io.read_tree_header(path)
        h["controls"] = " ".join(io.fmt(v) for v in h["controls"].ravel())
        h["counts"] = " ".join(str(int(c)) for c in h["counts"])
        h["total"] = int(sum(int(c) for c in h["counts"].split()))
        kind = "tree"
    elif magic == io.BASIS_MAGIC:
        h = io.read_basis_header(path)
        kind = "basis"
    else:
        raise ValueError(f"{path}: unrecognised file (magic {magic!r})")
    lines = [f"file = {path}", f"kind = {kind}"]
    lines += [f"{k} = {io.fmt(v) if isinstance(v, (int, float, np.number)) else v}" for k, v in h.items()]
    return "\n".join(lines)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjbtree", description="Tree-structure dynamic programming with POD.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("full-tsa", "full-dimensional tree"), ("pod-tsa", "POD-reduced tree"),
                        ("validate", "oracle and convergence checks")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="key = value config file")
        sp.add_argument("--out", default="results", help="output directory (default: results)")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker cap; the solver is serial, so results never depend on it")
    sp = sub.add_parser("info", help="print tree/basis file headers")
    sp.add_argument("files", nargs="+")
    return ap


_RUNNERS = {"full-tsa": run_full_tsa, "pod-tsa": run_pod_tsa, "validate": run_validation}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "info":
            for f in args.files:
                print(describe_file(f))
            return 0
        if args.threads < 1:
            raise ConfigError(f"--threads: must be at least 1, got {args.threads}")
        cfg = load_config(args.config)
        summary = _RUNNERS[args.command](cfg, args.out)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"hjbtree: error: {exc}", file=_sys.stderr)
        return 2
    for k, v in summary.items():
        print(f"{k} = {io.fmt(v) if isinstance(v, (int, float, np.number)) else v}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
