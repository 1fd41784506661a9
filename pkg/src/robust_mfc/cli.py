"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 solver did not converge,
4 artifact does not match the model or configuration it is used with.
The default output directory can be set with ``RMFC_OUT_DIR``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
import warnings

import numpy as np

from .artifacts import ArtifactMismatchError, load_artifact, make_artifact, save_artifact
from .measures import DimensionError, ValidationError, project_weights
from .model import dump_model, load_model, model_from_dict, model_hash
from .solver import AssumptionError, NonConvergenceError, SearchConfig, solve_fixed_point

log = logging.getLogger("robust_mfc")

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_MISMATCH = 0, 2, 3, 4
OUT_ENV = "RMFC_OUT_DIR"


class UsageError(ValueError):
    pass


def _out_dir(args) -> str:
    d = args.out_dir or os.environ.get(OUT_ENV) or "."
    os.makedirs(d, exist_ok=True)
    return d


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str) -> list:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise UsageError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def _deltas(text: str) -> tuple:
    """Either a list ``0,0.1,0.2`` or a range ``start:stop:step``."""
    if ":" in text:
        parts = _floats(text.replace(":", ","))
        if len(parts) != 3 or parts[2] <= 0:
            raise UsageError("delta range must be start:stop:step with step > 0")
        n = int(round((parts[1] - parts[0]) / parts[2])) + 1
        return tuple(round(parts[0] + i * parts[2], 10) for i in range(n))
    return tuple(_floats(text))


def _search(args) -> SearchConfig:
    return SearchConfig(enum_cap=args.enum_cap, restarts=args.restarts, action_k=args.action_k,
                        refine=args.refine, seed=args.seed)


def _solver_config(args) -> dict:
    return {"grid_k": args.grid_k, "tol": args.tol, "max_iter": args.max_iter, "norm": args.norm.upper(),
            "search": _search(args).to_dict()}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    spec = load_model(args.model)
    cfg = _solver_config(args)
    start = time.perf_counter()
    value, policy, adversary, report = solve_fixed_point(
        spec, args.grid_k, _search(args), args.tol, args.max_iter,
        allow_assumption_violation=args.allow_assumption_violation, threads=args.threads, norm=args.norm)
    art = make_artifact(spec, cfg, value, policy, adversary, report)
    out = args.out or os.path.join(_out_dir(args), "artifact." + ("bin" if args.format == "binary" else "json"))
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_artifact(art, out, args.format)
    rep = report.to_dict(include_time=True)
    rep["wall_time"] = time.perf_counter() - start
    rep["config_hash"] = art.config_hash
    rep["artifact"] = out
    rep["value_at_initial"] = value.at(spec.initial_mu, args.norm)
    report_path = args.report or out + ".report.json"
    with open(report_path, "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"converged in {report.iterations} iterations, residual {report.residual:.3e}, "
          f"a-posteriori bound {report.a_posteriori_bound:.3e}")
    print(f"value at initial law: {rep['value_at_initial']:.10g}")
    print(f"artifact: {out}  config hash: {art.config_hash}")
    return EXIT_OK


def _load_pair(args):
    art = load_artifact(args.policy)
    if args.model:
        spec = load_model(args.model)
        art.check_model(spec)
    return art


def _noise_source(art, spec, text: str):
    """adversary | first | set:J | law:p1,p2,... | path:e1,e2,..."""
    from .simulator import NoisePath

    if text == "adversary":
        return art.adversary
    if text == "first":
        return spec.uncertainty_set[0].weights
    kind, _, rest = text.partition(":")
    if kind == "set":
        j = int(rest)
        if not 0 <= j < len(spec.uncertainty_set):
            raise UsageError(f"uncertainty set has no element {j}")
        return spec.uncertainty_set[j].weights
    if kind == "law":
        p = np.asarray(_floats(rest))
        if p.shape != (len(spec.common_space),) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise UsageError("noise law must be a probability vector over the common-noise space")
        return p
    if kind == "path":
        labels = _floats(rest)
        try:
            return NoisePath.from_labels(spec, [int(x) if x == int(x) else x for x in labels])
        except (KeyError, ValueError) as exc:
            raise UsageError(f"bad noise path: {exc}") from None
    raise UsageError(f"unknown noise source {text!r}")


def cmd_simulate(args) -> int:
    from .simulator import (NoisePath, conditional_flow, sample_flows, simulate_n_agents, value_estimate,
                            write_panel_csv, write_trace_csv)

    art = _load_pair(args)
    spec = art.spec
    src = _noise_source(art, spec, args.noise)
    out = _out_dir(args)
    if isinstance(src, NoisePath):
        traces = [conditional_flow(spec, art.policy, src)]
    else:
        traces = sample_flows(spec, art.policy, src, args.T, args.seed, np.arange(args.paths))
    trace_path = os.path.join(out, "trace.csv")
    write_trace_csv(trace_path, spec, traces, config_hash=art.config_hash)
    result = {"config_hash": art.config_hash, "trace": "trace.csv"}
    if not isinstance(src, NoisePath):
        est = value_estimate(spec, art.policy, src, args.paths, args.seed, tail_tol=args.tail_tol,
                             value_table=art.value)
        result.update({"value_mean": est.mean, "stderr": est.stderr, "truncation_bound": est.truncation_bound,
                       "horizon": est.horizon, "projection_error": est.projection_error,
                       "solved_value": art.value.at(spec.initial_mu, art.policy.norm)})
    if args.agents:
        panel = simulate_n_agents(spec, art.policy, traces[0].noise, args.agents, args.seed,
                                  interaction=args.interaction, policy_input=args.policy_input)
        if args.panel:
            write_panel_csv(os.path.join(out, "panel.csv"), panel, config_hash=art.config_hash)
            result["panel"] = "panel.csv"
    with open(os.path.join(out, "simulate.json"), "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_chaos(args) -> int:
    from .simulator import chaos_gap

    art = _load_pair(args)
    spec = art.spec
    src = _noise_source(art, spec, args.noise)
    res = chaos_gap(spec, art.policy, src, _ints(args.N), args.T, args.trials, args.seed,
                    interaction=args.interaction, policy_input=args.policy_input)
    out = _out_dir(args)
    with open(os.path.join(out, "chaos.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# config_hash={art.config_hash}"])
        w.writerow(["N", "t", "mean_gap", "median_gap", "slope"])
        for row in res.rows():
            w.writerow([row["N"], row["t"], repr(row["mean_gap"]), repr(row["median_gap"]), repr(row["slope"])])
    print(f"{'N':>8} " + " ".join(f"t={t:<9d}" for t in range(args.T)))
    for i, n in enumerate(res.n_values):
        print(f"{n:>8} " + " ".join(f"{g:<11.5f}" for g in res.mean[i]))
    print("slope  " + " ".join(f"{s:<11.4f}" for s in res.slopes))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .experiments import (EvalSettings, Example1Config, Example2Config, SolverSettings, build_example1,
                              build_example2, emit_trajectory_figures_data, run_delta_sweep, write_sweep_outputs)
    from .solver import solve_fixed_point as solve

    cls = Example1Config if args.example == 1 else Example2Config
    kw = {"seed": args.seed}
    if args.deltas:
        kw["deltas"] = _deltas(args.deltas)
    if args.runs:
        kw["runs"] = args.runs
    if args.count:
        kw["perturb_count"] = args.count
    if args.reward_sign:
        kw["reward_sign"] = args.reward_sign
    cfg = cls(**kw)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    grid_k = args.grid_k or (6 if args.example == 1 else 10)
    solver = SolverSettings(grid_k=grid_k, tol=args.tol, enum_cap=args.enum_cap, restarts=args.restarts,
                            action_k=args.action_k, refine=args.refine, threads=args.threads)
    evaluation = EvalSettings(paths=args.paths, seed=args.seed, nested=not args.independent)
    res = run_delta_sweep(args.example, cfg, solver, evaluation, log=log.info)
    out = _out_dir(args)
    summary = write_sweep_outputs(res, out, args.tol)
    if args.trajectories:
        spec = (build_example1 if args.example == 1 else build_example2)(cfg)
        spec = spec.with_uncertainty([cfg.v_ref])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, pol, _, _ = solve(spec, grid_k, solver.search(), args.tol, allow_assumption_violation=True)
        emit_trajectory_figures_data(spec, pol, list(range(args.trajectories)), out, T=args.horizon,
                                     noise_law=np.asarray(cfg.v_true), random_initial=args.random_initial,
                                     config_hash=res.config_hash)
    print(json.dumps(summary["checks"], indent=2, sort_keys=True))
    return EXIT_OK


def _parse_mu(text: str, spec) -> np.ndarray:
    n = spec.n_states
    if text == "uniform":
        return np.full(n, 1.0 / n)
    if text == "initial":
        return spec.initial_mu.weights
    mu = np.asarray(_floats(text))
    if mu.shape != (n,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-9:
        raise UsageError(f"--mu must be 'uniform', 'initial' or {n} nonnegative weights summing to 1")
    return mu / mu.sum()


def cmd_inspect(args) -> int:
    art = load_artifact(args.artifact)
    spec = art.spec
    mu = _parse_mu(args.mu, spec)
    g = int(project_weights(mu, art.value.grid, art.policy.norm))
    j = int(art.adversary.table[g])
    out = {
        "config_hash": art.config_hash,
        "grid_k": art.value.grid.k,
        "grid_point": art.value.grid.points[g].tolist(),
        "value": float(art.value.values[g]),
        "policy": {str(spec.state_space.labels[s]): dict(zip(map(str, spec.action_space.labels),
                                                             art.policy.kernels[g, s].tolist()))
                   for s in range(spec.n_states)},
        "joint": art.policy.joints[g].tolist(),
        "worst_case_index": j,
        "worst_case_law": art.adversary.uncertainty[j].tolist(),
        "report": {k: art.report.to_dict()[k] for k in ("iterations", "residual", "a_posteriori_bound",
                                                         "policy_class")},
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_write_example(args) -> int:
    from .experiments import Example1Config, Example2Config, example1_dict, example2_dict

    if args.example == 1:
        cfg = Example1Config(beta=args.beta if args.beta is not None else 0.4)
        to_dict = example1_dict
    else:
        cfg = Example2Config(beta=args.beta if args.beta is not None else 0.15)
        to_dict = example2_dict
    unc = None
    if args.delta is not None:
        unc = {"v_ref": list(cfg.v_ref), "delta": args.delta, "count": args.count, "seed": args.seed}
    doc = to_dict(cfg, unc)
    spec = model_from_dict(doc)
    dump_model(spec, args.out)
    print(f"wrote {args.out} (model hash {model_hash(spec)[:16]})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _solver_flags(p) -> None:
    p.add_argument("--grid-k", type=int, default=6, help="simplex grid resolution")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--enum-cap", type=int, default=5000, help="max |A|^|S| for deterministic enumeration")
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--action-k", type=int, default=4, help="per-state action grid for coordinate ascent")
    p.add_argument("--refine", action="store_true", help="refine enumerated optima by coordinate ascent")


def _sim_flags(p) -> None:
    p.add_argument("--model", help="model file; must match the artifact's model")
    p.add_argument("--policy", required=True, help="solver artifact")
    p.add_argument("--noise", default="adversary",
                   help="adversary | first | set:J | law:p1,..,pn | path:e1,..,eT")
    p.add_argument("--T", type=int, default=20)
    p.add_argument("--interaction", choices=("empirical", "conditional"), default="empirical")
    p.add_argument("--policy-input", choices=("conditional", "empirical"), default="conditional")


def _global_flags(p, suppress: bool) -> None:
    def default(v):
        return argparse.SUPPRESS if suppress else v
    p.add_argument("--seed", type=int, default=default(0))
    p.add_argument("--threads", type=int, default=default(1), help="worker threads; results do not depend on it")
    p.add_argument("--out-dir", default=default(None), help=f"output directory (default ${OUT_ENV} or .)")
    p.add_argument("--log-level", default=default("WARNING"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-mfc", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add("solve", help="solve the robust fixed point and write an artifact")
    p.add_argument("--model", required=True)
    _solver_flags(p)
    p.add_argument("--norm", choices=("W1", "L1", "w1", "l1"), default="W1")
    p.add_argument("--format", choices=("json", "binary"), default="json")
    p.add_argument("--out", help="artifact path")
    p.add_argument("--report", help="report path (default: artifact path + .report.json)")
    p.add_argument("--allow-assumption-violation", action="store_true",
                   help="proceed (with a warning) when 2*beta*C_F >= 1")
    p.set_defaults(func=cmd_solve)

    p = add("simulate", help="exact flows, value estimate and optional N-agent panel")
    _sim_flags(p)
    p.add_argument("--paths", type=int, default=100)
    p.add_argument("--tail-tol", type=float, default=1e-6)
    p.add_argument("--agents", type=int, default=0, help="also simulate this many agents on the first path")
    p.add_argument("--panel", action="store_true", help="write the agent panel CSV")
    p.set_defaults(func=cmd_simulate)

    p = add("chaos", help="N-agent vs mean-field gap table")
    _sim_flags(p)
    p.add_argument("--N", default="10,100,1000,10000")
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_chaos, T=5)

    p = add("sweep", help="reference vs robust comparison over uncertainty levels")
    p.add_argument("--example", type=int, choices=(1, 2), required=True)
    p.add_argument("--deltas", help="list a,b,c or range start:stop:step")
    p.add_argument("--runs", type=int)
    p.add_argument("--count", type=int, help="perturbations per uncertainty level")
    p.add_argument("--paths", type=int, default=200)
    p.add_argument("--independent", action="store_true", help="redraw sets per level instead of nesting")
    p.add_argument("--reward-sign", choices=("negative_distance", "paper_literal"))
    p.add_argument("--trajectories", type=int, default=0, help="emit trajectory data for this many seeds")
    p.add_argument("--horizon", type=int, default=20)
    p.add_argument("--random-initial", action="store_true")
    _solver_flags(p)
    p.set_defaults(func=cmd_sweep, grid_k=None)

    p = add("inspect", help="value, policy and worst-case law at a population law")
    p.add_argument("--artifact", required=True)
    p.add_argument("--mu", default="initial", help="uniform | initial | comma-separated weights")
    p.set_defaults(func=cmd_inspect)

    p = add("write-example", help="write a benchmark model file")
    p.add_argument("--example", type=int, choices=(1, 2), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--delta", type=float, help="perturbed uncertainty set of this size (default: reference law)")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_write_example)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("residual history: " + ", ".join(f"{r:.3e}" for r in exc.history[-10:]), file=sys.stderr)
        return EXIT_NONCONVERGED
    except ArtifactMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (ValidationError, DimensionError, AssumptionError, UsageError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
