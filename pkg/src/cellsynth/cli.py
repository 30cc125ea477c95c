"""Command-line pipeline: validate, plan, synth, sim, deform, report."""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .geometry import validate_environment
from .lp import dump_lp
from .planner import PlanningError, plan_from_environment
from .simulate import DeformationError, deform_and_replay, deform_environment, monitor, run
from .synthesis import assemble_cell_lp, check_stationary_point, make_program, synthesize_plan
from .transversal import ModelError, coeffs_from_poles

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_VIOLATION = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path, obj):
    return io.atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


class Context:
    """Everything a command needs, loaded lazily from the config."""

    def __init__(self, args):
        self.args = args
        self.cfg = io.load_config(args.config)
        if args.seed is not None:
            self.cfg.seed = args.seed
        self.out = Path(args.out) if args.out else self.cfg.out
        self.env = io.load_environment(self.cfg.environment)
        self.system = io.system_from_dict(self.cfg.system, f"{args.config}.system")

    def coeffs(self):
        c_b = coeffs_from_poles(self.cfg.poles_b).c if self.cfg.poles_b else self.cfg.c_b
        c_V = coeffs_from_poles(self.cfg.poles_V).c if self.cfg.poles_V else self.cfg.c_V
        return tuple(float(v) for v in c_b), tuple(float(v) for v in c_V)

    def plan(self):
        goal = np.asarray(self.cfg.goal, dtype=float) if self.cfg.goal is not None else None
        try:
            return plan_from_environment(self.env, goal, self.cfg.patrol)
        except PlanningError as exc:
            raise CliError(f"planning failed: {exc}") from exc

    def bundle_path(self):
        return Path(self.args.bundle) if getattr(self.args, "bundle", None) else self.out / "controllers.json"

    def load_bundle(self, env):
        path = self.bundle_path()
        if not path.exists():
            raise CliError(f"bundle {path} not found; run 'synth' first")
        try:
            return io.load_bundle(path, env)
        except io.SchemaError as exc:
            raise CliError(f"refusing bundle: {exc}") from exc

    def starts(self):
        if not self.cfg.x0:
            raise CliError("config has no start states (x0)")
        out = []
        for k, x in enumerate(self.cfg.x0):
            x = np.asarray(x, dtype=float)
            if x.shape == (self.system.d,):
                full = np.zeros(self.system.n_x)
                full[list(self.system.pos_idx)] = x
                x = full
            if x.shape != (self.system.n_x,):
                raise CliError(f"x0[{k}] must have {self.system.d} or {self.system.n_x} entries")
            out.append(x)
        return out


def cmd_validate(ctx: Context) -> int:
    rep = validate_environment(ctx.env, seed=ctx.cfg.seed)
    summary = {"cells": len(ctx.env.cells), "adjacency": sorted(map(sorted, ctx.env.adjacency_pairs())),
               **rep.to_dict()}
    _write_json(ctx.out / "validation.json", summary)
    if rep.ok:
        print(f"ok: {len(ctx.env.cells)} cells, {len(summary['adjacency'])} adjacent pairs")
        return EXIT_OK
    for v in rep.violations:
        print(f"{v['kind']}: cells {v['cells']}: {v['message']}")
    return EXIT_INVALID


def cmd_plan(ctx: Context) -> int:
    plan, env, graph = ctx.plan()
    _write_json(ctx.out / "plan.json", plan.to_dict())
    for cid in sorted(plan.exits):
        kind, k = plan.exits[cid]
        to = plan.successor.get(cid, "goal")
        print(f"cell {cid}: {kind} {k} -> {to}")
    return EXIT_OK


def _margins_text(table) -> str:
    lines = [f"{'cell':>6} {'S_l':>12} {'min S_b':>12} {'objective':>12}"]
    def fmt(v):
        return f"{'failed':>12}" if v is None else f"{v:>12.6f}"

    for row in table:
        lines.append(f"{row['cell']:>6} {fmt(row['S_l'])} {fmt(row['min_S_b'])} {fmt(row['objective'])}")
    return "\n".join(lines) + "\n"


def cmd_synth(ctx: Context) -> int:
    plan, env, graph = ctx.plan()
    c_b, c_V = ctx.coeffs()
    if ctx.args.dump_lp:
        for cid in sorted(plan.exits):
            try:
                prog = make_program(env.cell(cid), ctx.system, plan.exits[cid], c_b, c_V,
                                    ctx.cfg.w_b, ctx.cfg.w_l)
            except ModelError:
                continue
            io.atomic_write(ctx.out / "lp" / f"cell_{cid}.txt", dump_lp(assemble_cell_lp(prog, ctx.system)))
    res = synthesize_plan(env, ctx.system, plan, c_b, c_V, ctx.cfg.w_b, ctx.cfg.w_l,
                          ctx.cfg.method, ctx.cfg.n_jobs)
    io.save_bundle(ctx.out / "controllers.json", res.controllers, env, ctx.system, plan)
    text = _margins_text(res.margins_table())
    io.atomic_write(ctx.out / "margins.txt", text)
    print(text, end="")
    if res.failures:
        for cid, exc in sorted(res.failures.items()):
            print(f"cell {cid}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _simulate_all(ctx, env, system, ctrls, plan, runner):
    starts = ctx.starts()
    jobs = max(1, int(ctx.cfg.n_jobs))

    def one(x0):
        return runner(x0)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, starts)), starts
    return [one(x0) for x0 in starts], starts


def _sim_outputs(ctx, env, plan, results, starts, prefix):
    reports = []
    goal = plan.goal
    for k, (traj, rep) in enumerate(results):
        io.write_trajectory_csv(traj, ctx.out / f"{prefix}_{k}.csv")
        io.write_svg(ctx.out / f"{prefix}_{k}.svg", env, [traj], [starts[k][:2]], goal)
        reports.append({"start": starts[k], **rep})
        print(f"{prefix} {k}: status={traj.status} t_end={traj.t[-1]:.4f} "
              f"violations={len(rep['violations'])}")
    return reports


def cmd_sim(ctx: Context) -> int:
    plan, env, graph = ctx.plan()
    ctrls, system, bplan = ctx.load_bundle(env)

    def runner(x0):
        traj = run(env, system, ctrls, bplan, x0, ctx.cfg.t_max, ctx.cfg.dt,
                   patrol_cycles=int(ctx.cfg.patrol_cycles), strict=False)
        return traj, monitor(traj, env, system, ctrls, bplan)

    try:
        results, starts = _simulate_all(ctx, env, system, ctrls, bplan, runner)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    reports = _sim_outputs(ctx, env, bplan, results, starts, "sim")
    extra = {}
    if bplan.objective == "stabilization":
        certs = {}
        for cid, (kind, k) in sorted(bplan.exits.items()):
            if kind == "point":
                certs[cid] = check_stationary_point(ctrls[cid], env.cell(cid), (kind, k), system)
        extra["stationary_point"] = certs
    _write_json(ctx.out / "sim_report.json", {"runs": reports, **extra})
    return EXIT_OK if all(r["ok"] for r in reports) else EXIT_VIOLATION


def cmd_deform(ctx: Context) -> int:
    path = Path(ctx.args.deformation) if ctx.args.deformation else ctx.cfg.deformation
    if path is None:
        raise CliError("no deformation file given (config 'deformation' or --deformation)")
    plan, env, graph = ctx.plan()
    ctrls, system, bplan = ctx.load_bundle(env)
    dm = io.load_deformation(path, env)
    try:
        new_env = deform_environment(env, dm, ctx.cfg.seed)
    except DeformationError as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return EXIT_INVALID

    def runner(x0):
        return deform_and_replay(env, dm, system, ctrls, bplan, x0, ctx.cfg.t_max, ctx.cfg.dt,
                                 patrol_cycles=int(ctx.cfg.patrol_cycles))

    try:
        results, starts = _simulate_all(ctx, env, system, ctrls, bplan, runner)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    io.save_environment(new_env, ctx.out / "deformed_environment.json")
    reports = _sim_outputs(ctx, new_env, bplan, results, starts, "deform")
    _write_json(ctx.out / "deform_report.json",
                {"note": "empirical robustness - not certified", "runs": reports})
    return EXIT_OK if all(r["ok"] for r in reports) else EXIT_VIOLATION


def cmd_report(ctx: Context) -> int:
    lines = [f"environment: {ctx.cfg.environment}", f"cells: {len(ctx.env.cells)}"]
    rep = validate_environment(ctx.env, seed=ctx.cfg.seed)
    lines.append(f"validation: {'ok' if rep.ok else f'{len(rep.violations)} violations'}")
    for name in ("margins.txt",):
        p = ctx.out / name
        if p.exists():
            lines += ["", "margins:", p.read_text().rstrip()]
    for name in ("sim_report.json", "deform_report.json"):
        p = ctx.out / name
        if p.exists():
            runs = json.loads(p.read_text())["runs"]
            lines.append("")
            lines.append(f"{name}:")
            for k, r in enumerate(runs):
                kinds = sorted({v["kind"] for v in r["violations"]})
                line = (f"  run {k}: status={r['status']} ok={r['ok']} "
                        f"violations={','.join(kinds) or 'none'}")
                if r.get("margin_deficits"):
                    line += f" margin_deficits={len(r['margin_deficits'])}"
                lines.append(line)
    text = "\n".join(lines) + "\n"
    io.atomic_write(ctx.out / "report.txt", text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "plan": cmd_plan, "synth": cmd_synth, "sim": cmd_sim,
            "deform": cmd_deform, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cellsynth", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="project config JSON")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="seed for probe sampling")
    p.add_argument("--dump-lp", action="store_true", help="write a text dump of every cell LP")
    p.add_argument("--bundle", help="controller bundle (default: <out>/controllers.json)")
    p.add_argument("--deformation", help="deformation JSON (overrides config)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        ctx = Context(args)
        return COMMANDS[args.command](ctx)
    except io.SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
