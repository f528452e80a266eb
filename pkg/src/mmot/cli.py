"""``mmot`` command line: solve, karcher, verify and gen.

Exit codes: 0 ok, 1 verification failure, 2 config error, 3 solver error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis as an
from . import cost as ct
from . import frechet as fr
from . import manifold as mf
from . import solver as sv
from .errors import ConfigError, MMOTError

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
SCHEMA = 1

ALL_CHECKS = ("marginals", "dual_feasibility", "duality", "support_equality", "c_monotonicity",
              "graph_structure", "barycenter", "two_marginal", "composition", "concavity",
              "injectivity")
SINKHORN_CHECKS = ("marginals", "dual_feasibility", "duality")

DEFAULT_TOLERANCES = {
    "marginals": 1e-9,
    "dual_feasibility": 1e-9,
    "duality": 1e-8,
    "support_equality": 1e-8,
    "c_monotonicity": 1e-8,
    "barycenter": 1e-7,
    "two_marginal": 1e-7,
    "composition": 1e-12,
    "concavity": 1e-9,
}


@dataclass
class RunConfig:
    spec: mf.ManifoldSpec
    measures: list[sv.DiscreteMeasure]
    family: fr.CostFamily
    method: str = "exact"
    epsilon_schedule: list[float] | None = None
    tol: float | None = None
    max_iter: int | None = None
    verifications: list[str] = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    soft: list[str] = field(default_factory=list)
    output_dir: str = "run"
    seed: int = 0
    karcher: fr.KarcherOptions = field(default_factory=fr.KarcherOptions)
    raw: dict = field(default_factory=dict)


# ---------------------------------------------------------------- config


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: no such file") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def _check_schema(data: dict) -> None:
    if data.get("schema") != SCHEMA:
        raise ConfigError(f"config needs \"schema\": {SCHEMA} (got {data.get('schema')!r})")


def _spec(data: dict) -> mf.ManifoldSpec:
    if "manifold" not in data:
        raise ConfigError("config is missing 'manifold'")
    try:
        return mf.ManifoldSpec.from_dict(data["manifold"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"manifold: {exc}") from exc


def generate(spec: mf.ManifoldSpec, gen: dict, where: str) -> sv.DiscreteMeasure:
    """Synthetic measure from a ``{"kind", "n", "seed"}`` generator block.

    ``uniform_random`` draws ``n`` uniform points with equal weights;
    ``cluster`` scatters points around a random centre (geodesic radius
    ``spread``, default 0.3) and draws weights uniformly in [0.5, 1.5] before
    normalizing.
    """
    kind = gen.get("kind")
    if "seed" not in gen:
        raise ConfigError(f"{where}: generators need an explicit 'seed'")
    n = gen.get("n")
    if not isinstance(n, int) or n < 1:
        raise ConfigError(f"{where}: 'n' must be a positive integer")
    rng = np.random.default_rng(gen["seed"])
    if kind == "uniform_random":
        return sv.DiscreteMeasure.uniform(spec, mf.random_point(spec, rng, size=n))
    if kind == "cluster":
        spread = float(gen.get("spread", 0.3))
        center = mf.random_point(spec, rng)
        base = np.broadcast_to(center, (n, spec.ambient_dim))
        v = mf.random_tangent(spec, base, 1.0, rng) * rng.uniform(0, spread, size=(n, 1))
        pts = mf.exp_map(spec, base, v)
        w = rng.uniform(0.5, 1.5, size=n)
        return sv.DiscreteMeasure(spec, pts, w / w.sum())
    raise ConfigError(f"{where}: unknown generator kind {kind!r} (uniform_random | cluster)")


def _measures(spec: mf.ManifoldSpec, data: dict) -> list[sv.DiscreteMeasure]:
    items = data.get("marginals")
    if not isinstance(items, list) or len(items) < 2:
        raise ConfigError("'marginals' must be a list of at least two entries")
    out = []
    for k, item in enumerate(items):
        where = f"marginals[{k}]"
        try:
            if "generator" in item:
                out.append(generate(spec, item["generator"], where))
                continue
            if "points" not in item:
                raise ConfigError(f"{where}: needs 'points' (with 'weights') or a 'generator'")
            if "weights" not in item:
                raise ConfigError(f"{where}: explicit points need a 'weights' list")
            out.append(sv.DiscreteMeasure(spec, item["points"], item["weights"]))
        except ConfigError:
            raise
        except (TypeError, ValueError, MMOTError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    return out


def _family(data: dict, m: int) -> fr.CostFamily:
    try:
        return fr.CostFamily.from_json(data.get("cost", {"f": "half_square"}), m)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cost: {exc}") from exc


def _karcher_options(data: dict, seed: int) -> fr.KarcherOptions:
    opts = dict(data.get("karcher", {}))
    opts.setdefault("seed", seed)
    try:
        return fr.KarcherOptions(**opts)
    except TypeError as exc:
        raise ConfigError(f"karcher: {exc}") from exc


def parse_config(data: dict) -> RunConfig:
    _check_schema(data)
    spec = _spec(data)
    measures = _measures(spec, data)
    family = _family(data, len(measures))
    solver = data.get("solver", {})
    method = solver.get("method", "exact")
    if method not in ("exact", "sinkhorn"):
        raise ConfigError(f"solver.method must be 'exact' or 'sinkhorn', not {method!r}")
    checks = data.get("verifications")
    if checks is None:
        checks = list(ALL_CHECKS if method == "exact" else SINKHORN_CHECKS)
    unknown = sorted(set(checks) - set(ALL_CHECKS))
    if unknown:
        raise ConfigError(f"unknown verifications {unknown}; choose from {list(ALL_CHECKS)}")
    tolerances = dict(DEFAULT_TOLERANCES)
    tolerances.update(data.get("tolerances", {}))
    seed = int(data.get("seed", 0))
    return RunConfig(
        spec=spec,
        measures=measures,
        family=family,
        method=method,
        epsilon_schedule=solver.get("epsilon_schedule"),
        tol=solver.get("tol"),
        max_iter=solver.get("max_iter"),
        verifications=list(checks),
        tolerances=tolerances,
        soft=list(data.get("soft", [])),
        output_dir=data.get("output_dir", "run"),
        seed=seed,
        karcher=_karcher_options(data, seed),
        raw=data,
    )


# ---------------------------------------------------------------- output


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True, default=_plain) + "\n")


def _points_csv(path: Path, points: np.ndarray, weights: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(points.shape[1])] + ["weight"])
        for p, wt in zip(points, weights):
            w.writerow([repr(float(c)) for c in p] + [repr(float(wt))])


def _limit_threads():
    n = os.environ.get("MMOT_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


# ---------------------------------------------------------------- checks


def run_checks(names, spec, measures, family, tensor, plan, pots, primal_value, tolerances,
               seed=0) -> list[dict]:
    """Evaluate the named checks; every report is a plain dict with ``passed``."""
    w = [mu.weights for mu in measures]
    C = tensor.values
    tol = tolerances
    reports = []
    table = result = None
    structural = {"barycenter", "two_marginal", "composition", "concavity", "injectivity"}
    broken = None
    if structural & set(names):
        table = an.extract_monge(plan)
        try:
            result = an.pushforward_barycenter(plan, tensor, measures)
        except (ValueError, MMOTError) as exc:
            # a plan that is not a coupling has no barycenter to check
            broken = str(exc)
    for name in names:
        before = len(reports)
        if name in structural and broken is not None:
            reports.append(an._report(name, False, tol.get(name, 0.0), error=broken))
        elif name == "marginals":
            res = sv.marginal_residuals(plan, w)
            reports.append(an._report(name, max(res) <= tol[name], tol[name], residuals=res))
        elif name == "dual_feasibility":
            r = sv.dense_residual(C, pots.u)
            reports.append(an._report(name, r <= tol[name], tol[name], worst_violation=r))
        elif name == "duality":
            primal = plan.cost(C)
            dual = pots.value(w)
            drift = abs(primal - primal_value)
            reports.append(an._report(name, abs(primal - dual) <= tol[name] and drift <= tol[name],
                                      tol[name], primal_value=primal, dual_value=dual,
                                      gap=primal - dual, reported_primal_drift=drift))
        elif name == "support_equality":
            r = sv.support_equality_check(plan, tensor, pots)
            reports.append(an._report(name, r <= tol[name], tol[name], worst_violation=r))
        elif name == "c_monotonicity":
            r = sv.c_monotonicity_violation(plan, tensor)
            reports.append(an._report(name, r <= tol[name], tol[name], worst_violation=r))
        elif name == "graph_structure":
            bound = sum(C.shape) - C.ndim + 1
            t = an.extract_monge(plan)
            reports.append(an._report(name, len(plan) <= bound, 0.0, support_size=len(plan),
                                      vertex_bound=bound, graph_fraction=t.graph_fraction,
                                      uniqueness_rate=an.uniqueness_rate(plan, tensor)))
        elif name == "barycenter":
            reports.append(an.verify_barycenter_optimality(result, measures, primal_value, family,
                                                           seed=seed, tol=tol[name]))
        elif name == "two_marginal":
            reports.append(an.verify_two_marginal_optimality(result, measures, family, tol=tol[name]))
        elif name == "composition":
            reports.append(an.verify_composition(table, result, tol=tol[name]))
        elif name == "concavity":
            reports.append(an.verify_potential_concavity(pots, measures, family, tensor, plan, result,
                                                         seed=seed, tol=tol[name]))
        elif name == "injectivity":
            reports.append(an.injectivity_report(result))
        for r in reports[before:]:
            r["name"] = name
    return reports


def _summarize(reports: list[dict], soft: set[str]) -> dict:
    failed = [r["name"] for r in reports if not r["passed"] and r["name"] not in soft]
    warnings = [r["name"] for r in reports if not r["passed"] and r["name"] in soft]
    return {"passed": not failed, "failed": failed, "warnings": warnings,
            "checks": [r["name"] for r in reports]}


def _soft_set(cfg_soft, method: str, names) -> set[str]:
    soft = set(cfg_soft)
    if method == "sinkhorn":
        # entropic plans are only approximately optimal; warn unless asked to be strict
        soft |= set(names) - {"marginals", "dual_feasibility"}
    return soft


# ---------------------------------------------------------------- commands


def solve_run(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.raw)
    write_json(out / "measures.json", [mu.to_dict() for mu in cfg.measures])
    try:
        tensor = ct.build_tensor(cfg.spec, cfg.family, cfg.measures, cfg.karcher)
        if cfg.method == "exact":
            plan, pots, report = sv.solve_exact(tensor, cfg.measures)
        else:
            kwargs = {}
            if cfg.tol is not None:
                kwargs["tol"] = float(cfg.tol)
            if cfg.max_iter is not None:
                kwargs["max_iter"] = int(cfg.max_iter)
            plan, pots, report = sv.solve_sinkhorn(tensor, cfg.measures, cfg.epsilon_schedule, **kwargs)
    except MMOTError as exc:
        print(f"mmot: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    write_json(out / "tensor.json", tensor.to_dict())
    write_json(out / "tensor_summary.json", tensor.summary())
    ct.export_binary(tensor, out / "tensor.bin")
    ct.export_csv(tensor, out / "tensor.csv")
    write_json(out / "plan.json", plan.to_dict())
    plan.to_csv(out / "plan.csv")
    write_json(out / "potentials.json", pots.to_dict())
    write_json(out / "report.json", report.to_dict())
    table = an.extract_monge(plan)
    write_json(out / "monge.json", table.to_dict())
    result = an.pushforward_barycenter(plan, tensor, cfg.measures)
    write_json(out / "barycenter.json", result.to_dict())
    _points_csv(out / "barycenter.csv", result.nu.points, result.nu.weights)

    tolerances = dict(cfg.tolerances)
    if cfg.method == "sinkhorn" and "duality" not in cfg.raw.get("tolerances", {}):
        tolerances["duality"] = 5 * report.epsilon * math.log(tensor.values.size)
    return _finish_checks(out, cfg, tensor, plan, pots, report.primal_value, tolerances)


def _finish_checks(out, cfg, tensor, plan, pots, primal, tolerances) -> int:
    reports = run_checks(cfg.verifications, cfg.spec, cfg.measures, cfg.family, tensor, plan, pots,
                         primal, tolerances, cfg.seed)
    summary = _summarize(reports, _soft_set(cfg.soft, cfg.method, cfg.verifications))
    write_json(out / "verification.json", {"summary": summary, "reports": reports})
    for w in summary["warnings"]:
        print(f"mmot: warning: check {w} did not pass (soft)", file=sys.stderr)
    if not summary["passed"]:
        print(f"mmot: verification failed: {', '.join(summary['failed'])}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_solve(config_path, output_dir=None) -> int:
    try:
        cfg = parse_config(_load_json(config_path))
    except ConfigError as exc:
        print(f"mmot: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(output_dir or cfg.output_dir)
    code = solve_run(cfg, out)
    print(out)
    return code


def cmd_verify(run_dir) -> int:
    run = Path(run_dir)
    try:
        cfg = parse_config(_load_json(run / "config.json"))
        cfg.measures = [sv.DiscreteMeasure.from_dict(d) for d in json.loads((run / "measures.json").read_text())]
        tensor = ct.CostTensor.from_dict(json.loads((run / "tensor.json").read_text()))
        pots = sv.DualPotentials.from_dict(json.loads((run / "potentials.json").read_text()))
        report = json.loads((run / "report.json").read_text())
    except (OSError, ValueError, KeyError, MMOTError) as exc:
        print(f"mmot: cannot load run directory {run}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        plan = sv.TransportPlan.from_dict(json.loads((run / "plan.json").read_text()))
        if plan.shape != tensor.shape or np.any(plan.index < 0) or \
                np.any(plan.index >= np.array(tensor.shape)) or np.any(plan.mass < 0):
            raise ValueError("plan does not fit the cost tensor")
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"mmot: verification failed: unusable plan.json ({exc})", file=sys.stderr)
        return EXIT_VERIFY
    tolerances = dict(cfg.tolerances)
    if cfg.method == "sinkhorn" and "duality" not in cfg.raw.get("tolerances", {}):
        tolerances["duality"] = 5 * report["epsilon"] * math.log(tensor.values.size)
    return _finish_checks(run, cfg, tensor, plan, pots, report["primal_value"], tolerances)


def cmd_karcher(config_path, output_dir=None) -> int:
    try:
        data = _load_json(config_path)
        _check_schema(data)
        spec = _spec(data)
        if "points" not in data:
            raise ConfigError("karcher config needs 'points'")
        points = np.atleast_2d(np.asarray(data["points"], dtype=float))
        family = _family(data, len(points))
        prob = fr.KarcherProblem(spec, points, family, data.get("weights"))
        opts = _karcher_options(data, int(data.get("seed", 0)))
        resolution = int(data.get("grid_resolution", 200))
    except ConfigError as exc:
        print(f"mmot: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TypeError, ValueError, MMOTError) as exc:
        print(f"mmot: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res = fr.solve(prob, opts)
    except MMOTError as exc:
        print(f"mmot: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = Path(output_dir or data.get("output_dir", "karcher_run"))
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "karcher.json", {"problem": {"spec": spec.to_dict(), "points": prob.points,
                                                  "weights": prob.weights, "cost": family.to_list()},
                                      "result": res.to_dict()})
    if spec.dim <= 2:
        G = fr.grid(spec, resolution, prob.points)
        vals = np.atleast_1d(fr.objective(prob, G))
        with open(out / "grid_scan.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"y{k}" for k in range(G.shape[1])] + ["objective"])
            for y, v in zip(G, vals):
                w.writerow([repr(float(c)) for c in y] + [repr(float(v))])
    print(out)
    return EXIT_OK


def cmd_gen(config_path, output_dir=None) -> int:
    try:
        data = _load_json(config_path)
        _check_schema(data)
        spec = _spec(data)
        measures = _measures(spec, data)
    except ConfigError as exc:
        print(f"mmot: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(output_dir or data.get("output_dir", "run"))
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "measures.json", [mu.to_dict() for mu in measures])
    for k, mu in enumerate(measures):
        _points_csv(out / f"measure_{k}.csv", mu.points, mu.weights)
    print(out / "measures.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmot", description="Multi-marginal transport with barycenter costs.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "build the cost tensor, solve, and verify"),
                           ("karcher", "solve one Karcher mean problem"),
                           ("gen", "write the generated marginals only")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("-c", "--config", required=True, help="JSON config file")
        s.add_argument("-o", "--output-dir", help="override the config's output_dir")
    v = sub.add_parser("verify", help="re-run verification checks on a run directory")
    v.add_argument("run_dir")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    limiter = _limit_threads()
    try:
        if args.command == "solve":
            return cmd_solve(args.config, args.output_dir)
        if args.command == "karcher":
            return cmd_karcher(args.config, args.output_dir)
        if args.command == "gen":
            return cmd_gen(args.config, args.output_dir)
        return cmd_verify(args.run_dir)
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
