"""Robust dynamic programming on a simplex grid of population laws.

The operator maps a value table V on the grid to

    (TV)(mu) = max over lifted actions L with marginal mu of
               rbar(L) + beta * min over p in the uncertainty set of
               sum_e0 p(e0) V(proj(Fbar(L, e0)))

where ``proj`` is nearest-grid projection.  The max runs over a finite
policy class: every deterministic state-to-action map when there are few
enough of them, otherwise coordinate ascent over per-state action simplices.

For the enumerated class the successor grid indices and stage rewards do not
depend on V or on the uncertainty set, so ``LiftedProblem`` computes them
once and every operator application is a gather, a small matrix product and
two reductions.
"""
from __future__ import annotations

import itertools
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .lifted import JointDist, StatePolicy, disintegrate_batch, rewards_batch, successors_batch
from .measures import DimensionError, Dist, FiniteSpace, SimplexGrid, build_simplex_grid, project_weights
from .model import ModelSpec, audit_assumptions

TIE_TOL = 1e-12


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = list(history)


class AssumptionError(RuntimeError):
    """The discount is too large for the audited transition constant."""


@dataclass(frozen=True)
class SearchConfig:
    """Policy class for the inner maximization.

    ``enum_cap`` bounds |A|^|S| for exhaustive enumeration of deterministic
    maps.  Above it (or with ``refine``) coordinate ascent runs over per-state
    action grids of resolution ``action_k`` from ``restarts`` starting points.
    """

    enum_cap: int = 5000
    restarts: int = 2
    action_k: int = 4
    max_sweeps: int = 25
    refine: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        return {"enum_cap": self.enum_cap, "restarts": self.restarts, "action_k": self.action_k,
                "max_sweeps": self.max_sweeps, "refine": self.refine, "seed": self.seed}


@dataclass
class ValueTable:
    grid: SimplexGrid
    values: np.ndarray
    lipschitz_bound: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.grid),):
            raise DimensionError("value table does not match its grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("value table has non-finite entries")

    def at(self, mu, norm: str = "W1") -> float:
        w = mu.weights if isinstance(mu, Dist) else np.asarray(mu, dtype=float)
        return float(self.values[project_weights(w, self.grid, norm)])


@dataclass
class PolicyTable:
    """Maximizing lifted action per grid point and its disintegration."""

    grid: SimplexGrid
    action_space: FiniteSpace
    joints: np.ndarray  # (G, S, A)
    kernels: np.ndarray  # (G, S, A)
    policy_index: np.ndarray | None = None  # into the enumerated class, when used
    norm: str = "W1"

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float)
        self.kernels = np.asarray(self.kernels, dtype=float)
        shape = (len(self.grid), len(self.grid.space), len(self.action_space))
        if self.joints.shape != shape or self.kernels.shape != shape:
            raise DimensionError("policy table does not match its grid")
        if np.max(np.abs(self.joints.sum(axis=2) - self.grid.points)) > 1e-12:
            raise ValueError("stored joints must have the grid point as state marginal")

    @classmethod
    def from_joints(cls, grid: SimplexGrid, action_space: FiniteSpace, joints: np.ndarray,
                    policy_index=None, norm: str = "W1") -> "PolicyTable":
        return cls(grid, action_space, joints, disintegrate_batch(joints), policy_index, norm)

    def state_policy(self, g: int) -> StatePolicy:
        return StatePolicy(self.grid.space, self.action_space, self.kernels[g])

    def joint(self, g: int) -> JointDist:
        return JointDist(self.grid.space, self.action_space, self.joints[g],
                         s_marginal=Dist(self.grid.space, self.grid.points[g]))

    def kernel_batch(self, mu: np.ndarray, t: int = 0, history=None) -> np.ndarray:
        """Closed-loop action kernels pi(. | s, mu) for a batch of laws (P, S) -> (P, S, A)."""
        idx = project_weights(np.asarray(mu, dtype=float), self.grid, self.norm)
        return self.kernels[idx]


@dataclass
class AdversarySelector:
    """Worst-case noise law index for a lifted action.

    ``table`` mode looks up the on-policy argmin at the projected grid point of
    the joint's state marginal; ``online`` mode recomputes the argmin for the
    given joint against a value table.
    """

    mode: str
    uncertainty: np.ndarray  # (J, E0)
    table: np.ndarray | None = None
    grid: SimplexGrid | None = None
    spec: ModelSpec | None = None
    value: ValueTable | None = None
    norm: str = "W1"

    def __post_init__(self):
        if self.mode not in ("table", "online"):
            raise ValueError(f"unknown adversary mode {self.mode!r}")
        if self.mode == "table":
            if self.table is None or self.grid is None:
                raise ValueError("table mode needs a table and a grid")
            t = np.asarray(self.table)
            if np.any(t < 0) or np.any(t >= len(self.uncertainty)):
                raise ValueError("adversary table holds an invalid set index")
        elif self.spec is None or self.value is None:
            raise ValueError("online mode needs the model and a value table")

    def to_online(self, spec: ModelSpec, value: ValueTable) -> "AdversarySelector":
        return AdversarySelector("online", self.uncertainty, spec=spec, value=value, norm=self.norm)

    def select_batch(self, joints: np.ndarray) -> np.ndarray:
        joints = np.asarray(joints, dtype=float)
        if self.mode == "table":
            idx = project_weights(joints.sum(axis=2), self.grid, self.norm)
            return np.asarray(self.table)[idx]
        succ = successors_batch(self.spec, joints)
        vs = self.value.values[project_weights(succ, self.value.grid, self.norm)]  # (P, E0)
        _, arg = _min_over_set(vs, self.uncertainty)
        return arg

    def select(self, joint) -> int:
        w = joint.weights if isinstance(joint, JointDist) else np.asarray(joint, dtype=float)
        return int(self.select_batch(w[None])[0])

    def law(self, index: int) -> np.ndarray:
        return self.uncertainty[index]


@dataclass
class SolveReport:
    iterations: int
    residual: float
    residual_history: list
    wall_time: float
    contraction_ratios: list
    converged: bool
    policy_class: str
    a_posteriori_bound: float
    grid_k: int
    tol: float
    assumption_check: dict = field(default_factory=dict)

    def to_dict(self, include_time: bool = False) -> dict:
        out = {
            "iterations": self.iterations,
            "residual": self.residual,
            "residual_history": list(self.residual_history),
            "contraction_ratios": list(self.contraction_ratios),
            "converged": self.converged,
            "policy_class": self.policy_class,
            "a_posteriori_bound": self.a_posteriori_bound,
            "grid_k": self.grid_k,
            "tol": self.tol,
            "assumption_check": self.assumption_check,
        }
        if include_time:
            out["wall_time"] = self.wall_time
        return out


# ---------------------------------------------------------------------------
# reductions with documented tie-breaking
# ---------------------------------------------------------------------------

def _min_over_set(vs: np.ndarray, laws: np.ndarray):
    """Min over noise laws of the expected successor value; lowest index wins ties.

    ``vs`` has shape (..., E0).  The expectation is an explicit sum over e0 so
    results do not depend on BLAS blocking.
    """
    q = np.zeros((len(laws),) + vs.shape[:-1])
    for j, p in enumerate(laws):
        for e, w in enumerate(p):
            if w != 0.0:
                q[j] += w * vs[..., e]
    best = q.min(axis=0)
    arg = np.argmax(q <= best + TIE_TOL * np.maximum(1.0, np.abs(best)), axis=0)
    return best, arg


def _expect(vs: np.ndarray, p: np.ndarray) -> np.ndarray:
    out = np.zeros(vs.shape[:-1])
    for e, w in enumerate(p):
        if w != 0.0:
            out += w * vs[..., e]
    return out


def _argmax_first(total: np.ndarray):
    """Max along the last axis; the first index within tolerance of it wins."""
    best = total.max(axis=-1)
    tol = TIE_TOL * np.maximum(1.0, np.abs(best))
    arg = np.argmax(total >= (best - tol)[..., None], axis=-1)
    return best, arg


# ---------------------------------------------------------------------------
# the discretized problem
# ---------------------------------------------------------------------------

class LiftedProblem:
    """Grid, policy class and cached transition tables for one model.

    The cache depends on the state/action/noise spaces, the transition, the
    reward and the projection norm, but not on the uncertainty set or the
    discount, so ``rebind`` can reuse it across uncertainty sweeps.
    """

    def __init__(self, spec: ModelSpec, grid_k: int, search: SearchConfig | None = None,
                 norm: str = "W1", threads: int = 1, block: int = 64, grid: SimplexGrid | None = None):
        self.spec = spec
        self.search = search or SearchConfig()
        self.norm = norm.upper()
        self.threads = max(1, int(threads))
        self.block = block
        self.grid = grid if grid is not None else build_simplex_grid(spec.state_space, grid_k)
        nS, nA = spec.n_states, spec.n_actions
        self.enumerate = nA ** nS <= self.search.enum_cap
        self.policies = None
        self.succ = None
        self.reward = None
        if self.enumerate:
            self.policies = np.array(list(itertools.product(range(nA), repeat=nS)), dtype=np.int64)
            self._build_tables()
        self._action_grid = None

    @property
    def policy_class(self) -> str:
        if self.enumerate:
            return "deterministic-enumeration" + ("+coordinate-ascent" if self.search.refine else "")
        return "coordinate-ascent"

    def rebind(self, spec: ModelSpec) -> "LiftedProblem":
        """Same cached tables, different uncertainty set (or initial law)."""
        new = object.__new__(LiftedProblem)
        new.__dict__.update(self.__dict__)
        new.spec = spec
        return new

    @property
    def laws(self) -> np.ndarray:
        return self.spec.uncertainty_matrix

    # -- table construction -------------------------------------------------

    def _blocks(self):
        G = len(self.grid)
        return [(s, min(G, s + self.block)) for s in range(0, G, self.block)]

    def _map_blocks(self, fn):
        blocks = self._blocks()
        if self.threads == 1:
            return [fn(b) for b in blocks]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(fn, blocks))

    def _policy_joints(self, mu: np.ndarray) -> np.ndarray:
        """(B, S) laws -> (B, npol, S, A) joints for every deterministic map."""
        nA = self.spec.n_actions
        onehot = np.eye(nA)[self.policies]  # (npol, S, A)
        return mu[:, None, :, None] * onehot[None]

    def _build_tables(self) -> None:
        npol = len(self.policies)
        E0 = len(self.spec.common_space)

        def work(b):
            lo, hi = b
            joints = self._policy_joints(self.grid.points[lo:hi]).reshape(-1, self.spec.n_states, self.spec.n_actions)
            succ = successors_batch(self.spec, joints)
            idx = project_weights(succ, self.grid, self.norm).reshape(hi - lo, npol, E0)
            rew = rewards_batch(self.spec, joints).reshape(hi - lo, npol)
            return idx.astype(np.int32), rew

        parts = self._map_blocks(work)
        self.succ = np.concatenate([p[0] for p in parts])
        self.reward = np.concatenate([p[1] for p in parts])

    # -- operator ------------------------------------------------------------

    def joints_for(self, g: np.ndarray, pol: np.ndarray) -> np.ndarray:
        onehot = np.eye(self.spec.n_actions)[self.policies[pol]]  # (n, S, A)
        return self.grid.points[g][:, :, None] * onehot

    def apply(self, values: np.ndarray, mode: str = "robust", p: np.ndarray | None = None):
        """One operator application.

        ``mode`` is ``robust`` (min over the uncertainty set) or ``classical``
        (expectation under the single law ``p``).  Returns new values, the
        maximizing joints (G, S, A), the enumerated policy index (or None) and
        the on-policy adversary index (zeros in classical mode).
        """
        values = np.asarray(values, dtype=float)
        beta = self.spec.beta
        laws = self.laws

        if self.enumerate and not self.search.refine:
            def work(b):
                lo, hi = b
                vs = values[self.succ[lo:hi]]  # (B, npol, E0)
                if mode == "classical":
                    inner = _expect(vs, p)
                    arg_p = np.zeros(inner.shape, dtype=np.int64)
                else:
                    inner, arg_p = _min_over_set(vs, laws)
                total = self.reward[lo:hi] + beta * inner
                best, arg = _argmax_first(total)
                rows = np.arange(hi - lo)
                return best, arg, arg_p[rows, arg]

            parts = self._map_blocks(work)
            new = np.concatenate([x[0] for x in parts])
            pol = np.concatenate([x[1] for x in parts])
            adv = np.concatenate([x[2] for x in parts])
            joints = self.joints_for(np.arange(len(self.grid)), pol)
            return new, joints, pol, adv

        def work_ca(b):
            lo, hi = b
            out = [self._coordinate_ascent(g, values, mode, p) for g in range(lo, hi)]
            return out

        parts = [r for block in self._map_blocks(work_ca) for r in block]
        new = np.array([r[0] for r in parts])
        joints = np.stack([r[1] for r in parts])
        adv = np.array([r[2] for r in parts], dtype=np.int64)
        return new, joints, None, adv

    def evaluate_joints(self, joints: np.ndarray, values: np.ndarray, mode: str = "robust", p=None):
        """Objective rbar + beta * inner term for a batch of joints (n, S, A)."""
        succ = successors_batch(self.spec, joints)
        vs = values[project_weights(succ, self.grid, self.norm)]
        if mode == "classical":
            inner, arg = _expect(vs, p), np.zeros(len(joints), dtype=np.int64)
        else:
            inner, arg = _min_over_set(vs, self.laws)
        return rewards_batch(self.spec, joints) + self.spec.beta * inner, arg

    # -- coordinate ascent --------------------------------------------------

    def action_grid(self) -> np.ndarray:
        if self._action_grid is None:
            self._action_grid = build_simplex_grid(self.spec.action_space, self.search.action_k).points
        return self._action_grid

    def _start_points(self, g: int) -> list:
        cand = self.action_grid()
        nS, nA = self.spec.n_states, self.spec.n_actions
        uniform = np.full(nA, 1.0 / nA)
        centre = int(np.argmin(np.abs(cand - uniform).sum(axis=1)))
        starts = [np.full(nS, centre, dtype=np.int64)]
        vertices = [int(np.argmax(cand[:, a])) for a in range(nA)]
        for r in range(1, self.search.restarts):
            u = rng.uniforms(self.search.seed, rng.RESTART, g, r, np.arange(nS))
            starts.append(np.array([vertices[int(x * nA)] for x in u], dtype=np.int64))
        return starts

    def _coordinate_ascent(self, g: int, values: np.ndarray, mode: str, p):
        mu = self.grid.points[g]
        cand = self.action_grid()
        nS = self.spec.n_states
        support = np.flatnonzero(mu > 0)
        starts = self._start_points(g)
        if self.enumerate:
            # seed with the best deterministic map so refinement never loses to it
            _, det_pol = self._best_deterministic(g, values, mode, p)
            vertices = [int(np.argmax(cand[:, a])) for a in range(self.spec.n_actions)]
            starts.insert(0, np.array([vertices[a] for a in self.policies[det_pol]], dtype=np.int64))

        best = None
        for enc in starts:
            enc = enc.copy()
            val, arg = self.evaluate_joints((mu[:, None] * cand[enc])[None], values, mode, p)
            cur = float(val[0])
            for _ in range(self.search.max_sweeps):
                changed = False
                for s in support:
                    kern = np.repeat(cand[enc][None], len(cand), axis=0)
                    kern[:, s] = cand
                    vals, _ = self.evaluate_joints(mu[None, :, None] * kern, values, mode, p)
                    top, c = _argmax_first(vals)
                    if c != enc[s] and top >= cur:
                        enc[s] = c
                        cur = float(top)
                        changed = True
                if not changed:
                    break
            if best is None or cur > best[0] + TIE_TOL * max(1.0, abs(best[0])) or (
                    abs(cur - best[0]) <= TIE_TOL * max(1.0, abs(best[0])) and tuple(enc) < tuple(best[1])):
                best = (cur, enc.copy())
        joint = mu[:, None] * cand[best[1]]
        val, arg = self.evaluate_joints(joint[None], values, mode, p)
        return float(val[0]), joint, int(arg[0])

    def _best_deterministic(self, g: int, values, mode, p):
        vs = values[self.succ[g]]
        inner = _expect(vs, p) if mode == "classical" else _min_over_set(vs, self.laws)[0]
        best, arg = _argmax_first(self.reward[g] + self.spec.beta * inner)
        return float(best), int(arg)

    # -- fixed policies -------------------------------------------------------

    def policy_tables(self, policy) -> tuple:
        """Successor indices (G, E0) and rewards (G,) for a fixed closed-loop policy."""
        if isinstance(policy, PolicyTable) and policy.policy_index is not None and self.enumerate \
                and policy.grid.k == self.grid.k and np.all(policy.policy_index >= 0):
            g = np.arange(len(self.grid))
            return self.succ[g, policy.policy_index], self.reward[g, policy.policy_index]
        if isinstance(policy, StatePolicy):
            kernels = np.broadcast_to(policy.matrix, (len(self.grid),) + policy.matrix.shape)
        elif isinstance(policy, PolicyTable) and policy.grid.k == self.grid.k:
            kernels = policy.kernels
        else:
            kernels = policy.kernel_batch(self.grid.points, 0, None)
        joints = self.grid.points[:, :, None] * kernels
        succ = successors_batch(self.spec, joints)
        idx = project_weights(succ, self.grid, self.norm).astype(np.int32)
        return idx, rewards_batch(self.spec, joints)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _problem_for(value: ValueTable, spec: ModelSpec, search, problem) -> LiftedProblem:
    if problem is not None:
        if problem.grid.k != value.grid.k:
            raise DimensionError("problem grid and value grid differ")
        return problem if problem.spec is spec else problem.rebind(spec)
    return LiftedProblem(spec, value.grid.k, search, grid=value.grid)


def inner_min(joint: JointDist, value: ValueTable, spec: ModelSpec, norm: str = "W1"):
    """Worst expected successor value over the uncertainty set and its index."""
    succ = successors_batch(spec, joint.weights[None])[0]
    vs = value.values[project_weights(succ, value.grid, norm)]
    best, arg = _min_over_set(vs[None], spec.uncertainty_matrix)
    return float(best[0]), int(arg[0])


def local_max(mu, value: ValueTable, spec: ModelSpec, search: SearchConfig | None = None,
              problem: LiftedProblem | None = None):
    """Operator value at a grid point with its maximizing joint and worst-case index."""
    prob = _problem_for(value, spec, search, problem)
    w = mu.weights if isinstance(mu, Dist) else np.asarray(mu, dtype=float)
    g = int(prob.grid.rank(np.rint(w * prob.grid.k).astype(np.int64)))
    if not np.allclose(prob.grid.points[g], w, atol=1e-12):
        raise ValueError("local_max expects a grid point")
    if prob.enumerate and not prob.search.refine:
        val, pol = prob._best_deterministic(g, value.values, "robust", None)
        joint = prob.joints_for(np.array([g]), np.array([pol]))[0]
        _, arg = prob.evaluate_joints(joint[None], value.values)
    else:
        val, joint, arg = prob._coordinate_ascent(g, value.values, "robust", None)
        arg = np.array([arg])
    jd = JointDist(spec.state_space, spec.action_space, joint, s_marginal=Dist(spec.state_space, prob.grid.points[g]))
    return float(val), jd, int(arg[0])


def _tables(prob: LiftedProblem, joints, pol, adv):
    policy = PolicyTable.from_joints(prob.grid, prob.spec.action_space, joints, pol, prob.norm)
    adversary = AdversarySelector("table", prob.laws, table=np.asarray(adv, dtype=np.int64),
                                  grid=prob.grid, norm=prob.norm)
    return policy, adversary


def bellman_apply(value: ValueTable, spec: ModelSpec, search: SearchConfig | None = None,
                  problem: LiftedProblem | None = None):
    prob = _problem_for(value, spec, search, problem)
    new, joints, pol, adv = prob.apply(value.values)
    policy, adversary = _tables(prob, joints, pol, adv)
    return ValueTable(prob.grid, new, value.lipschitz_bound), policy, adversary


def _check_assumptions(spec: ModelSpec, allow_violation: bool) -> dict:
    report = audit_assumptions(spec)
    info = {"c_f_hat": report.c_f_hat, "c_r_hat": report.c_r_hat, "beta_ok": report.beta_ok,
            "lipschitz_bound": report.lipschitz_bound}
    if not report.beta_ok:
        msg = (f"discount {spec.beta} violates 2*beta*C_F < 1 with audited C_F={report.c_f_hat:g}; "
               "contraction of the operator still holds but the Lipschitz certificate does not")
        if not allow_violation:
            raise AssumptionError(msg)
        warnings.warn(msg, stacklevel=3)
    return info


def _iterate(prob: LiftedProblem, tol: float, max_iter: int, mode: str = "robust", p=None, v0=None):
    values = np.zeros(len(prob.grid)) if v0 is None else np.asarray(v0, dtype=float).copy()
    history, ratios = [], []
    for it in range(1, max_iter + 1):
        new, joints, pol, adv = prob.apply(values, mode, p)
        res = float(np.max(np.abs(new - values)))
        if history and history[-1] > 0:
            ratios.append(res / history[-1])
        history.append(res)
        values = new
        if res <= tol:
            return values, joints, pol, adv, it, history, ratios, True
    return values, joints, pol, adv, max_iter, history, ratios, False


def solve_fixed_point(spec: ModelSpec, grid_k: int, search: SearchConfig | None = None, tol: float = 1e-6,
                      max_iter: int = 1000, problem: LiftedProblem | None = None,
                      allow_assumption_violation: bool = False, threads: int = 1, norm: str = "W1"):
    """Value iteration from V = 0 until the sup-norm step is at most ``tol``.

    Returns (ValueTable, PolicyTable, AdversarySelector, SolveReport).  The
    policy and adversary are greedy with respect to the final value table.
    """
    start = time.perf_counter()
    check = _check_assumptions(spec, allow_assumption_violation)
    if problem is None:
        problem = LiftedProblem(spec, grid_k, search, norm=norm, threads=threads)
    elif problem.spec is not spec:
        problem = problem.rebind(spec)
    if problem.grid.k != grid_k:
        raise DimensionError("problem was built for a different grid")
    values, joints, pol, adv, iters, history, ratios, ok = _iterate(problem, tol, max_iter)
    if not ok:
        raise NonConvergenceError(
            f"no convergence in {max_iter} iterations (residual {history[-1]:.3e})", history)
    beta = spec.beta
    report = SolveReport(
        iterations=iters,
        residual=history[-1],
        residual_history=history,
        wall_time=time.perf_counter() - start,
        contraction_ratios=ratios,
        converged=True,
        policy_class=problem.policy_class,
        a_posteriori_bound=history[-1] * beta / (1.0 - beta),
        grid_k=grid_k,
        tol=tol,
        assumption_check=check,
    )
    value = ValueTable(problem.grid, values, check["lipschitz_bound"])
    policy, adversary = _tables(problem, joints, pol, adv)
    return value, policy, adversary, report


def classical_value_iteration(spec: ModelSpec, p, grid_k: int, search: SearchConfig | None = None,
                              tol: float = 1e-6, max_iter: int = 1000, problem: LiftedProblem | None = None):
    """Non-robust value iteration with the common noise fixed to law ``p``."""
    p = p.weights if isinstance(p, Dist) else np.asarray(p, dtype=float)
    if problem is None:
        problem = LiftedProblem(spec, grid_k, search)
    values, joints, pol, _, iters, history, _, ok = _iterate(problem, tol, max_iter, "classical", p)
    if not ok:
        raise NonConvergenceError(f"no convergence in {max_iter} iterations", history)
    return ValueTable(problem.grid, values)


def robust_policy_eval(policy, spec: ModelSpec, grid_k: int, tol: float = 1e-6, max_iter: int = 1000,
                       problem: LiftedProblem | None = None, p=None) -> ValueTable:
    """Worst-case value of a fixed closed-loop policy on the grid.

    ``policy`` is a PolicyTable, a StatePolicy applied at every law, or any
    object with ``kernel_batch(mu, t, history)``.  With ``p`` given the noise
    law is fixed instead of adversarial.
    """
    if problem is None:
        problem = LiftedProblem(spec, grid_k, SearchConfig(enum_cap=0))
    elif problem.spec is not spec:
        problem = problem.rebind(spec)
    succ, rew = problem.policy_tables(policy)
    laws = spec.uncertainty_matrix if p is None else np.asarray(
        p.weights if isinstance(p, Dist) else p, dtype=float)[None]
    values = np.zeros(len(problem.grid))
    history = []
    for _ in range(max_iter):
        inner, _ = _min_over_set(values[succ], laws)
        new = rew + spec.beta * inner
        res = float(np.max(np.abs(new - values)))
        history.append(res)
        values = new
        if res <= tol:
            return ValueTable(problem.grid, values)
    raise NonConvergenceError(f"policy evaluation did not converge in {max_iter} iterations", history)


def contraction_bound(beta: float, first_residual: float, tol: float) -> int:
    """Iterations guaranteed by the contraction estimate, counted like ``solve_fixed_point``."""
    if first_residual <= tol:
        return 1
    if beta == 0.0:
        return 2
    return int(np.ceil(np.log(tol * (1.0 - beta) / first_residual) / np.log(beta))) + 1
