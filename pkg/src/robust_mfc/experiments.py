"""The two benchmark models and the uncertainty-level sweep built on them.

Example 1 moves a population on seven sites towards a target distribution
with a shared +-1 shock.  Example 2 is an interbank-lending toy model with an
absorbing default state, a per-agent shock and a five-point common shock.
Both sweeps train a reference policy against the reference noise law and a
robust policy against a perturbed set, then score both under the true law.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .model import ModelSpec, canonical_json, make_perturbed_uncertainty_set, model_from_dict


def _arange(start: float, stop: float, step: float) -> tuple:
    n = int(round((stop - start) / step)) + 1
    return tuple(round(start + i * step, 10) for i in range(n))


@dataclass
class Example1Config:
    n_states: int = 7
    actions: tuple = (-1, 0, 1)
    e0_values: tuple = (-1, 0, 1)
    beta: float = 0.4
    target_mu: tuple = (0.0, 0.1, 0.2, 0.4, 0.2, 0.1, 0.0)
    initial_mu: tuple = (0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5)
    v_true: tuple = (0.2, 0.7, 0.1)
    v_ref: tuple = (0.0, 1.0, 0.0)
    deltas: tuple = _arange(0.0, 1.2, 0.1)
    perturb_count: int = 5
    runs: int = 8
    reward_sign: str = "negative_distance"
    seed: int = 0

    def validate(self) -> None:
        _check_law(self.target_mu, self.n_states, "target_mu")
        _check_law(self.initial_mu, self.n_states, "initial_mu")
        for name in ("v_true", "v_ref"):
            _check_law(getattr(self, name), len(self.e0_values), name)
        if any(d < 0 for d in self.deltas):
            raise ValueError("deltas must be nonnegative")


@dataclass
class Example2Config:
    s_min: int = -1
    s_max: int = 4
    absorbing_state: int | None = -1
    actions: tuple = (-1, 0, 1)
    e_values: tuple = (-1, 0, 1)
    lambda_eps: tuple = (0.05, 0.9, 0.05)
    e0_values: tuple = (-2, -1, 0, 1, 2)
    beta: float = 0.15
    q: float = 0.5
    epsilon: float = 0.5
    s_target: float = 2.0
    initial_mu: tuple = (0.0, 0.2, 0.2, 0.2, 0.2, 0.2)
    v_true: tuple = (0.1, 0.2, 0.4, 0.2, 0.1)
    v_ref: tuple = (0.0, 0.0, 1.0, 0.0, 0.0)
    deltas: tuple = _arange(0.0, 0.6, 0.1)
    perturb_count: int = 5
    runs: int = 15
    reward_sign: str = "negative_distance"
    seed: int = 0

    def validate(self) -> None:
        n = self.s_max - self.s_min + 1
        if n < 2:
            raise ValueError("need s_max > s_min")
        _check_law(self.initial_mu, n, "initial_mu")
        _check_law(self.lambda_eps, len(self.e_values), "lambda_eps")
        for name in ("v_true", "v_ref"):
            _check_law(getattr(self, name), len(self.e0_values), name)
        if any(d < 0 for d in self.deltas):
            raise ValueError("deltas must be nonnegative")


def _check_law(w, n: int, name: str) -> None:
    w = np.asarray(w, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a probability vector of length {n}")


def _space(labels) -> dict:
    return {"labels": list(labels)}


def example1_dict(cfg: Example1Config | None = None, uncertainty: dict | None = None) -> dict:
    cfg = cfg or Example1Config()
    cfg.validate()
    states = list(range(1, cfg.n_states + 1))
    return {
        "spaces": {
            "state": _space(states),
            "action": _space(cfg.actions),
            "idio": _space([0]),
            "common": _space(cfg.e0_values),
        },
        "transition": {"kind": "mean_field_fn", "name": "clamp_walk",
                       "params": {"lo": states[0], "hi": states[-1]}},
        "reward": {"name": "target_distance", "params": {"target": list(cfg.target_mu)},
                   "sign": cfg.reward_sign},
        "beta": cfg.beta,
        "lambda_eps": [1.0],
        "uncertainty": uncertainty or {"explicit": [list(cfg.v_ref)]},
        "initial_mu": list(cfg.initial_mu),
    }


def example2_dict(cfg: Example2Config | None = None, uncertainty: dict | None = None) -> dict:
    cfg = cfg or Example2Config()
    cfg.validate()
    params = {"lo": cfg.s_min, "hi": cfg.s_max}
    if cfg.absorbing_state is not None:
        params["absorbing"] = cfg.absorbing_state
    return {
        "spaces": {
            "state": _space(range(cfg.s_min, cfg.s_max + 1)),
            "action": _space(cfg.actions),
            "idio": _space(cfg.e_values),
            "common": _space(cfg.e0_values),
        },
        "transition": {"kind": "mean_field_fn", "name": "clamp_walk", "params": params},
        "reward": {"name": "systemic_risk",
                   "params": {"q": cfg.q, "epsilon": cfg.epsilon, "s_target": cfg.s_target},
                   "sign": cfg.reward_sign},
        "beta": cfg.beta,
        "lambda_eps": list(cfg.lambda_eps),
        "uncertainty": uncertainty or {"explicit": [list(cfg.v_ref)]},
        "initial_mu": list(cfg.initial_mu),
    }


def build_example1(cfg: Example1Config | None = None) -> ModelSpec:
    """Example 1 with the singleton reference set; use ``with_uncertainty`` for others."""
    return model_from_dict(example1_dict(cfg))


def build_example2(cfg: Example2Config | None = None) -> ModelSpec:
    return model_from_dict(example2_dict(cfg))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SolverSettings:
    grid_k: int = 6
    tol: float = 1e-6
    max_iter: int = 1000
    enum_cap: int = 5000
    restarts: int = 2
    action_k: int = 4
    refine: bool = False
    allow_assumption_violation: bool = True
    threads: int = 1

    def search(self):
        from .solver import SearchConfig
        return SearchConfig(enum_cap=self.enum_cap, restarts=self.restarts, action_k=self.action_k,
                            refine=self.refine)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")  # results do not depend on it
        return d


@dataclass
class EvalSettings:
    paths: int = 200
    seed: int = 0
    tail_tol: float = 1e-6
    nested: bool = True


@dataclass
class ComparisonRow:
    example: int
    delta: float
    run: int
    value_ref: float
    value_robust: float
    stderr_ref: float
    stderr_robust: float
    robust_bound: float  # solved robust value at the initial law
    worst_case_robust: float  # robust policy under its own uncertainty set
    worst_case_ref: float  # reference policy under the same set
    set_size: int
    seeds: dict = field(default_factory=dict)


@dataclass
class SweepResult:
    example: int
    rows: list
    config: dict
    config_hash: str
    reports: dict


def _cfg_for(example: int, cfg):
    if example == 1:
        return cfg or Example1Config(), example1_dict
    if example == 2:
        return cfg or Example2Config(), example2_dict
    raise ValueError("example must be 1 or 2")


def sweep_uncertainty_sets(v_ref, deltas, count: int, seed: int, run: int, nested: bool = True) -> list:
    """Uncertainty set per delta for one run.

    Each delta index draws its own perturbations on a stream keyed by
    (run, delta index).  In nested mode the set at delta_i also keeps every
    perturbation drawn for smaller deltas, so sets grow with delta.
    """
    order = sorted(range(len(deltas)), key=lambda i: deltas[i])
    fresh = {}
    for i in order:
        stream = run * 1000 + i
        draws = make_perturbed_uncertainty_set(v_ref, float(deltas[i]), count, seed, stream)
        fresh[i] = [np.asarray(w, dtype=float) for w in draws[1:]]
    ref = np.asarray(v_ref, dtype=float)
    sets = []
    for i, d in enumerate(deltas):
        members = [ref]
        pool = [j for j in order if deltas[j] <= d] if nested else [i]
        for j in pool:
            for w in fresh[j]:
                if not any(np.array_equal(w, m) for m in members):
                    members.append(w)
        sets.append(members)
    return sets


def run_delta_sweep(example: int, cfg=None, solver: SolverSettings | None = None,
                    evaluation: EvalSettings | None = None, log=None) -> SweepResult:
    """Reference vs robust policy values under the true noise law for each delta and run."""
    from .simulator import value_estimate
    from .solver import LiftedProblem, robust_policy_eval, solve_fixed_point

    cfg, to_dict = _cfg_for(example, cfg)
    solver = solver or SolverSettings()
    evaluation = evaluation or EvalSettings()
    base = model_from_dict(to_dict(cfg))
    problem = LiftedProblem(base, solver.grid_k, solver.search(), threads=solver.threads)
    p_true = np.asarray(cfg.v_true, dtype=float)

    def solve(spec, tag):
        try:
            return solve_fixed_point(spec, solver.grid_k, solver.search(), solver.tol, solver.max_iter,
                                     problem=problem,
                                     allow_assumption_violation=solver.allow_assumption_violation)
        except Exception as exc:
            raise RuntimeError(f"example {example}, {tag}: {exc}") from exc

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        v_ref_tab, pol_ref, _, rep_ref = solve(base, "reference policy")
    est_kw = dict(paths=evaluation.paths, seed=evaluation.seed, tail_tol=evaluation.tail_tol)
    ref_est = value_estimate(base, pol_ref, p_true, **est_kw)
    reports = {"reference": rep_ref.to_dict()}
    rows = []
    for run in range(cfg.runs):
        sets = sweep_uncertainty_sets(cfg.v_ref, cfg.deltas, cfg.perturb_count, cfg.seed, run, evaluation.nested)
        for d, laws in zip(cfg.deltas, sets):
            spec = base.with_uncertainty(laws)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                val, pol, _, rep = solve(spec, f"delta={d}, run={run}")
            est = value_estimate(spec, pol, p_true, **est_kw)
            prob = problem.rebind(spec)
            wc_rob = robust_policy_eval(pol, spec, solver.grid_k, solver.tol, problem=prob)
            wc_ref = robust_policy_eval(pol_ref, spec, solver.grid_k, solver.tol, problem=prob)
            mu0 = spec.initial_mu
            rows.append(ComparisonRow(
                example, float(d), run, ref_est.mean, est.mean, ref_est.stderr, est.stderr,
                val.at(mu0), wc_rob.at(mu0), wc_ref.at(mu0), len(laws),
                {"perturbation_seed": cfg.seed, "stream": run, "eval_seed": evaluation.seed}))
            reports[f"delta={d},run={run}"] = rep.to_dict()
            if log:
                log(f"example {example} delta={d:g} run={run}: ref {ref_est.mean:.5f} robust {est.mean:.5f}")
    conf = {"example": example, "cfg": _jsonable(asdict(cfg)), "solver": solver.to_dict(),
            "evaluation": asdict(evaluation)}
    return SweepResult(example, rows, conf, sweep_hash(conf), reports)


def _jsonable(obj):
    return json.loads(json.dumps(obj))


def sweep_hash(conf: dict) -> str:
    return hashlib.sha256(canonical_json(conf).encode()).hexdigest()


def delta_zero_check(rows: list, tol: float) -> dict:
    """At delta = 0 both policies solve the same problem, so their values must agree."""
    out = {"pass": True, "rows": 0, "max_gap": 0.0}
    for r in rows:
        if r.delta == 0.0:
            se = float(np.hypot(r.stderr_ref, r.stderr_robust))
            gap = abs(r.value_robust - r.value_ref)
            out["rows"] += 1
            out["max_gap"] = max(out["max_gap"], gap)
            if gap > 3.0 * (se + 2.0 * tol):
                out["pass"] = False
    return out


def robust_gain_check(rows: list, deltas=(0.1, 0.2, 0.3, 0.4)) -> dict:
    """Soft check: run-averaged robust value beats the reference for some moderate delta."""
    gains = {}
    for d in deltas:
        sel = [r for r in rows if abs(r.delta - d) < 1e-9]
        if sel:
            gains[d] = float(np.mean([r.value_robust - r.value_ref for r in sel]))
    return {"pass": any(g > 0 for g in gains.values()), "mean_gain": {str(k): v for k, v in gains.items()}}


def write_sweep_outputs(result: SweepResult, out_dir, tol: float = 1e-6) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "comparison.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# config_hash={result.config_hash}"])
        w.writerow(["example", "delta", "run", "policy", "value", "stderr"])
        for r in result.rows:
            w.writerow([r.example, repr(r.delta), r.run, "ref", repr(r.value_ref), repr(r.stderr_ref)])
            w.writerow([r.example, repr(r.delta), r.run, "robust", repr(r.value_robust), repr(r.stderr_robust)])
    with open(os.path.join(out_dir, "robust_checks.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# config_hash={result.config_hash}"])
        w.writerow(["example", "delta", "run", "set_size", "robust_bound", "worst_case_robust", "worst_case_ref"])
        for r in result.rows:
            w.writerow([r.example, repr(r.delta), r.run, r.set_size, repr(r.robust_bound),
                        repr(r.worst_case_robust), repr(r.worst_case_ref)])
    digests = {k: sweep_hash(v) for k, v in sorted(result.reports.items())}
    summary = {
        "config_hash": result.config_hash,
        "config": result.config,
        "solver_report_digests": digests,
        "checks": {
            "delta_zero_equality": delta_zero_check(result.rows, tol),
            "robust_gain_soft": robust_gain_check(result.rows),
        },
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


# ---------------------------------------------------------------------------
# trajectory data
# ---------------------------------------------------------------------------

def random_initial_law(n: int, seed: int) -> np.ndarray:
    """Uniformly distributed law on the simplex (normalized exponentials)."""
    u = rng.uniforms(seed, rng.INITIAL_LAW, np.arange(n))
    x = -np.log1p(-u)
    return x / x.sum()


def emit_trajectory_figures_data(spec: ModelSpec, policy, seeds, out_dir=None, T: int = 20,
                                 noise_law=None, random_initial: bool = False, config_hash: str = "") -> dict:
    """Population-law trajectories, per-state action laws and noise paths, one per seed.

    ``noise_law`` is a fixed common-noise law or an AdversarySelector; by
    default the first law of the model's uncertainty set.
    """
    from .simulator import sample_flows

    law = spec.uncertainty_set[0].weights if noise_law is None else noise_law
    traj, acts, noise = [], [], []
    labels_s = spec.state_space.labels
    for seed in seeds:
        mu0 = random_initial_law(spec.n_states, seed) if random_initial else None
        tr = sample_flows(spec, policy, law, T, seed, [0], mu0)[0]
        e0 = tr.noise.labels(spec)
        for t in range(T + 1):
            traj.append([seed, t] + [repr(float(x)) for x in tr.mu[t]])
        for t in range(T):
            kern = policy.kernel_batch(tr.mu[t][None], t, np.asarray(tr.noise.indices[:t])[None])[0]
            for s in range(spec.n_states):
                acts.append([seed, t, labels_s[s], repr(float(tr.mu[t][s]))] + [repr(float(x)) for x in kern[s]])
            noise.append([seed, t + 1, e0[t], int(tr.p_index[t])])
    header_mu = ["seed", "t"] + [f"mu_{x}" for x in labels_s]
    header_a = ["seed", "t", "state", "mass"] + [f"a_{x}" for x in spec.action_space.labels]
    bundle = {"trajectories.csv": (header_mu, traj), "actions.csv": (header_a, acts),
              "noise_paths.csv": (["seed", "t", "e0", "p_choice_index"], noise)}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for name, (header, rows) in bundle.items():
            with open(os.path.join(out_dir, name), "w", newline="") as fh:
                w = csv.writer(fh)
                if config_hash:
                    w.writerow([f"# config_hash={config_hash}"])
                w.writerow(header)
                w.writerows(rows)
    return bundle
