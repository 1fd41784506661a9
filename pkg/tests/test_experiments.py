import numpy as np
import pytest

from robust_mfc.experiments import (
    EvalSettings, Example1Config, Example2Config, SolverSettings, build_example2, delta_zero_check,
    emit_trajectory_figures_data, example1_dict, robust_gain_check, run_delta_sweep, sweep_uncertainty_sets,
    write_sweep_outputs,
)
from robust_mfc.model import model_from_dict
from robust_mfc.simulator import sample_flows
from robust_mfc.solver import solve_fixed_point

TOL = 1e-6


@pytest.fixture(scope="module")
def small_sweep():
    cfg = Example1Config(deltas=(0.0, 0.2, 0.4), runs=2, perturb_count=3)
    return run_delta_sweep(1, cfg, SolverSettings(grid_k=3, tol=TOL), EvalSettings(paths=40))


def _members(laws):
    return {tuple(np.round(w, 15)) for w in laws}


def test_sets_are_nested_and_anchored():
    deltas = (0.0, 0.1, 0.3, 0.2)
    sets = sweep_uncertainty_sets([0, 1, 0], deltas, 4, seed=0, run=1)
    assert len(sets[0]) == 1
    for laws in sets:
        assert np.array_equal(laws[0], [0, 1, 0])
        for w in laws:
            assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12
    by_delta = dict(zip(deltas, sets))
    assert _members(by_delta[0.1]) <= _members(by_delta[0.2]) <= _members(by_delta[0.3])
    again = sweep_uncertainty_sets([0, 1, 0], deltas, 4, seed=0, run=1)
    assert all(np.array_equal(a, b) for x, y in zip(sets, again) for a, b in zip(x, y))
    flat = sweep_uncertainty_sets([0, 1, 0], deltas, 4, seed=0, run=1, nested=False)
    assert len(flat[2]) == 5


def test_runs_draw_different_sets():
    a = sweep_uncertainty_sets([0, 1, 0], (0.3,), 3, seed=0, run=0)[0]
    b = sweep_uncertainty_sets([0, 1, 0], (0.3,), 3, seed=0, run=1)[0]
    assert _members(a) != _members(b)


def test_sweep_rows(small_sweep):
    rows = small_sweep.rows
    assert len(rows) == 3 * 2
    assert all(np.isfinite([r.value_ref, r.value_robust, r.stderr_ref, r.stderr_robust]).all() for r in rows)


def test_delta_zero_rows_identical(small_sweep):
    zero = [r for r in small_sweep.rows if r.delta == 0.0]
    assert zero and all(r.value_robust == r.value_ref for r in zero)
    assert delta_zero_check(small_sweep.rows, TOL)["pass"]


def test_robust_bound_monotone_in_delta(small_sweep):
    for run in range(2):
        bounds = [r.robust_bound for r in small_sweep.rows if r.run == run]
        assert all(b2 <= b1 + 2 * TOL for b1, b2 in zip(bounds, bounds[1:]))


def test_robust_policy_wins_its_own_worst_case(small_sweep):
    for r in small_sweep.rows:
        assert r.worst_case_robust >= r.worst_case_ref - 2 * TOL
        assert abs(r.worst_case_robust - r.robust_bound) <= 2 * TOL


def test_outputs(tmp_path, small_sweep):
    summary = write_sweep_outputs(small_sweep, tmp_path, TOL)
    lines = (tmp_path / "comparison.csv").read_text().splitlines()
    assert lines[0] == f"# config_hash={small_sweep.config_hash}"
    assert lines[1] == "example,delta,run,policy,value,stderr"
    assert len(lines) == 2 + 2 * len(small_sweep.rows)
    assert set(summary["checks"]) == {"delta_zero_equality", "robust_gain_soft"}


def test_gain_check_reads_means():
    class R:
        def __init__(self, d, ref, rob):
            self.delta, self.value_ref, self.value_robust = d, ref, rob
    rows = [R(0.1, 1.0, 0.9), R(0.2, 1.0, 1.1), R(0.2, 1.0, 0.95)]
    res = robust_gain_check(rows)
    assert res["pass"] and res["mean_gain"]["0.2"] == pytest.approx(0.025)
    assert not robust_gain_check(rows[:1])["pass"]


def test_example2_absorbing_mass_nondecreasing():
    spec = build_example2()
    _, P, _, _ = solve_fixed_point(spec, 3, allow_assumption_violation=True)
    for tr in sample_flows(spec, P, Example2Config().v_true, 15, 0, range(10)):
        mass = tr.mu[:, 0]
        assert np.all(np.diff(mass) >= -1e-15)


def test_trajectory_bundle(tmp_path, ex1):
    _, P, _, _ = solve_fixed_point(ex1, 3)
    bundle = emit_trajectory_figures_data(ex1, P, [0, 1, 2], tmp_path, T=20,
                                          noise_law=np.array([0.2, 0.7, 0.1]), config_hash="h")
    header, rows = bundle["trajectories.csv"]
    assert len(rows) == 3 * 21
    for r in rows:
        assert abs(sum(float(x) for x in r[2:]) - 1.0) <= 1e-9
    assert len(bundle["noise_paths.csv"][1]) == 3 * 20
    assert (tmp_path / "trajectories.csv").read_text().startswith("# config_hash=h")


def test_trajectory_bundle_degenerate_model():
    doc = example1_dict()
    doc["spaces"]["common"] = {"labels": [0]}
    doc["uncertainty"] = {"explicit": [[1.0]]}
    spec = model_from_dict(doc)
    _, P, _, _ = solve_fixed_point(spec, 3)
    rows = emit_trajectory_figures_data(spec, P, [0, 5, 9], T=6)["trajectories.csv"][1]
    per_seed = [[r[1:] for r in rows if r[0] == s] for s in (0, 5, 9)]
    assert per_seed[0] == per_seed[1] == per_seed[2]
