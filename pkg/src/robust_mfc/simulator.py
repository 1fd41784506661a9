"""Conditional-law flows, N-agent rollouts and value estimates.

Policies are closed-loop rules: any object with
``kernel_batch(mu, t, history) -> (P, S, A)`` mapping a batch of population
laws (and the common-noise history, an integer array of shape (P, t)) to
per-state action laws.  ``PolicyTable`` from the solver qualifies, as do
``ConstantPolicy`` and ``OpenLoopPolicy`` below.

All randomness comes from counter-based streams keyed by
``(seed, trial, agent, t, channel)`` so results do not depend on evaluation
order or on how work is split across threads.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .lifted import rewards_batch, successors_batch
from .measures import product_cost, project_weights, w1_weights
from .model import ModelSpec
from .solver import AdversarySelector, ValueTable

SAMPLED_FIXED = "sampled-from-fixed-p"
SAMPLED_ADVERSARY = "sampled-from-adversary"
EXPLICIT = "explicit"


@dataclass(frozen=True)
class NoisePath:
    """Common-noise indices e0_1..e0_T into the common-noise space."""

    indices: tuple
    provenance: str = EXPLICIT

    @classmethod
    def from_labels(cls, spec: ModelSpec, labels) -> "NoisePath":
        return cls(tuple(spec.common_space.index(x) for x in labels), EXPLICIT)

    def labels(self, spec: ModelSpec) -> list:
        return [spec.common_space.labels[i] for i in self.indices]

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class FlowTrace:
    """Exact conditional flow along one noise path.

    ``mu`` has T+1 rows (t = 0..T); ``joints``, ``laws``, ``p_index`` and
    ``rewards`` have T rows, row t describing the step from t to t+1.
    ``p_index`` is -1 when the noise law is not drawn from the uncertainty set.
    """

    mu: np.ndarray
    joints: np.ndarray
    laws: np.ndarray
    p_index: np.ndarray
    rewards: np.ndarray
    noise: NoisePath

    @property
    def horizon(self) -> int:
        return len(self.rewards)

    def discounted_reward(self, beta: float) -> float:
        return float(sum(beta ** t * r for t, r in enumerate(self.rewards)))


@dataclass
class AgentPanel:
    states: np.ndarray  # (T+1, N) state indices
    actions: np.ndarray  # (T, N) action indices
    seed: int
    trial: int
    joints: np.ndarray = field(repr=False, default=None)  # (T, S, A) empirical joints

    @property
    def n_agents(self) -> int:
        return self.states.shape[1]


class ConstantPolicy:
    """The same per-state action law at every population law."""

    def __init__(self, matrix):
        self.matrix = np.asarray(getattr(matrix, "matrix", matrix), dtype=float)

    def kernel_batch(self, mu, t=0, history=None) -> np.ndarray:
        mu = np.asarray(mu)
        return np.broadcast_to(self.matrix, (len(mu),) + self.matrix.shape)


class OpenLoopPolicy:
    """Open-loop unrolling of a closed-loop policy.

    The action kernel at time t is a function of the common-noise history
    only: the flow is replayed from ``mu0`` along the history with the
    closed-loop rule and the kernel at the resulting law is returned.  The
    population law passed in is ignored.
    """

    def __init__(self, spec: ModelSpec, closed_loop, mu0=None):
        self.spec = spec
        self.closed_loop = closed_loop
        self.mu0 = np.asarray(spec.initial_mu.weights if mu0 is None else getattr(mu0, "weights", mu0), dtype=float)
        self._memo: dict = {(): self.mu0}

    def _law(self, hist: tuple) -> np.ndarray:
        if hist in self._memo:
            return self._memo[hist]
        prev = self._law(hist[:-1])
        t = len(hist) - 1
        kern = self.closed_loop.kernel_batch(prev[None], t, np.asarray(hist[:-1], dtype=np.int64)[None])[0]
        joint = prev[:, None] * kern
        nxt = successors_batch(self.spec, joint[None])[0, hist[-1]]
        self._memo[hist] = nxt
        return nxt

    def kernel_batch(self, mu, t=0, history=None) -> np.ndarray:
        mu = np.asarray(mu)
        hist = np.zeros((len(mu), 0), dtype=np.int64) if history is None else np.asarray(history)
        out = []
        for row in hist:
            law = self._law(tuple(int(x) for x in row[:t]))
            out.append(self.closed_loop.kernel_batch(law[None], t, row[None, :t])[0])
        return np.stack(out)


# ---------------------------------------------------------------------------
# exact flows
# ---------------------------------------------------------------------------

def _roll(spec: ModelSpec, policy, mu0: np.ndarray, T: int, draw):
    """Advance P flows for T steps; ``draw(t, joints)`` returns (e0, p_index, laws)."""
    P, S = mu0.shape
    E0 = len(spec.common_space)
    mu = np.empty((P, T + 1, S))
    mu[:, 0] = mu0
    joints = np.empty((P, T, S, spec.n_actions))
    laws = np.empty((P, T, E0))
    p_idx = np.empty((P, T), dtype=np.int64)
    rewards = np.empty((P, T))
    noise = np.empty((P, T), dtype=np.int64)
    rows = np.arange(P)
    for t in range(T):
        kern = policy.kernel_batch(mu[:, t], t, noise[:, :t])
        lam = mu[:, t, :, None] * kern
        joints[:, t] = lam
        rewards[:, t] = rewards_batch(spec, lam)
        e0, pi, law = draw(t, lam)
        noise[:, t] = e0
        p_idx[:, t] = pi
        laws[:, t] = law
        mu[:, t + 1] = successors_batch(spec, lam)[rows, e0]
    return mu, joints, laws, p_idx, rewards, noise


def _traces(out, provenance: str) -> list:
    mu, joints, laws, p_idx, rewards, noise = out
    return [FlowTrace(mu[i], joints[i], laws[i], p_idx[i], rewards[i],
                      NoisePath(tuple(int(x) for x in noise[i]), provenance))
            for i in range(len(mu))]


def _mu0(spec: ModelSpec, mu0) -> np.ndarray:
    if mu0 is None:
        return spec.initial_mu.weights
    return np.asarray(getattr(mu0, "weights", mu0), dtype=float)


def conditional_flow(spec: ModelSpec, policy, noise: NoisePath, mu0=None) -> FlowTrace:
    """Exact law flow along a given noise path (no sampling)."""
    idx = np.asarray(noise.indices, dtype=np.int64)
    nan = np.full(len(spec.common_space), np.nan)

    def draw(t, lam):
        return idx[t:t + 1], np.array([-1]), nan[None]

    out = _roll(spec, policy, _mu0(spec, mu0)[None], len(idx), draw)
    trace = _traces(out, noise.provenance)[0]
    trace.noise = noise
    return trace


def _sample(laws: np.ndarray, seed: int, paths: np.ndarray, t: int) -> np.ndarray:
    u = rng.uniforms(seed, paths, t, rng.COMMON_NOISE)
    return rng.inverse_cdf(laws, u)


def _fixed_draw(p: np.ndarray, seed: int, paths: np.ndarray):
    def draw(t, lam):
        laws = np.broadcast_to(p, (len(paths), len(p)))
        return _sample(laws, seed, paths, t), np.full(len(paths), -1), laws
    return draw


def _adversary_draw(adversary: AdversarySelector, seed: int, paths: np.ndarray):
    def draw(t, lam):
        j = adversary.select_batch(lam)
        laws = adversary.uncertainty[j]
        return _sample(laws, seed, paths, t), j, laws
    return draw


def sample_noise_path(spec: ModelSpec, p, T: int, seed: int, path: int = 0) -> NoisePath:
    p = np.asarray(getattr(p, "weights", p), dtype=float)
    paths = np.array([path])
    idx = [int(_sample(p[None], seed, paths, t)[0]) for t in range(T)]
    return NoisePath(tuple(idx), SAMPLED_FIXED)


def sample_flows(spec: ModelSpec, policy, noise_law, T: int, seed: int, paths, mu0=None) -> list:
    """Flows for several path ids at once.

    ``noise_law`` is a fixed law over the common-noise space (Dist or array)
    or an AdversarySelector, which picks the law from the current lifted action.
    """
    paths = np.asarray(paths, dtype=np.int64)
    start = np.broadcast_to(_mu0(spec, mu0), (len(paths), spec.n_states)).copy()
    if isinstance(noise_law, AdversarySelector):
        draw, prov = _adversary_draw(noise_law, seed, paths), SAMPLED_ADVERSARY
    else:
        p = np.asarray(getattr(noise_law, "weights", noise_law), dtype=float)
        draw, prov = _fixed_draw(p, seed, paths), SAMPLED_FIXED
    return _traces(_roll(spec, policy, start, T, draw), prov)


def sample_adversarial_path(spec: ModelSpec, policy, adversary: AdversarySelector, T: int, seed: int,
                            path: int = 0, mu0=None):
    """Noise path drawn from the worst-case selector along its own flow."""
    trace = sample_flows(spec, policy, adversary, T, seed, [path], mu0)[0]
    return trace.noise, trace


# ---------------------------------------------------------------------------
# N-agent system
# ---------------------------------------------------------------------------

def simulate_n_agents(spec: ModelSpec, policy, noise: NoisePath, N: int, seed: int, trial: int = 0,
                      interaction: str = "empirical", policy_input: str = "conditional",
                      mu0=None) -> AgentPanel:
    """Finite population driven by a shared noise path.

    ``interaction`` selects the law fed to the transition and reward: the
    empirical joint of the agents (``empirical``) or the exact conditional
    joint (``conditional``).  ``policy_input`` selects the law the policy
    reads: the exact conditional law (``conditional``, default) or the
    empirical state distribution (``empirical``).
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if interaction not in ("empirical", "conditional") or policy_input not in ("empirical", "conditional"):
        raise ValueError("interaction and policy_input must be 'empirical' or 'conditional'")
    T = len(noise)
    nS, nA = spec.n_states, spec.n_actions
    flow = conditional_flow(spec, policy, noise, mu0)
    agents = np.arange(N)
    states = np.empty((T + 1, N), dtype=np.int64)
    actions = np.empty((T, N), dtype=np.int64)
    emp_joints = np.empty((T, nS, nA))
    u0 = rng.uniforms(seed, trial, agents, 0, rng.INITIAL_STATE)
    states[0] = rng.inverse_cdf(_mu0(spec, mu0), u0)
    lam_eps = spec.lambda_eps.weights
    hist = np.asarray(noise.indices, dtype=np.int64)
    for t in range(T):
        s = states[t]
        emp_mu = np.bincount(s, minlength=nS) / N
        law_in = flow.mu[t] if policy_input == "conditional" else emp_mu
        kern = policy.kernel_batch(law_in[None], t, hist[None, :t])[0]
        ua = rng.uniforms(seed, trial, agents, t, rng.ACTION)
        a = rng.inverse_cdf(kern[s], ua)
        actions[t] = a
        emp = np.bincount(s * nA + a, minlength=nS * nA).reshape(nS, nA) / N
        emp_joints[t] = emp
        arg = emp if interaction == "empirical" else flow.joints[t]
        targets = spec.transition.targets(arg[None])[0]  # (S, A, E, E0)
        ue = rng.uniforms(seed, trial, agents, t, rng.IDIOSYNCRATIC)
        e = rng.inverse_cdf(lam_eps, ue)
        states[t + 1] = targets[s, a, e, hist[t]]
    return AgentPanel(states, actions, seed, trial, emp_joints)


def _w1_joint(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> float:
    return w1_weights(a.ravel(), b.ravel(), cost)


@dataclass
class ChaosResult:
    n_values: tuple
    gaps: np.ndarray  # (trials, len(N), T)
    mean: np.ndarray  # (len(N), T)
    median: np.ndarray  # (len(N), T)
    slopes: np.ndarray  # (T,) log-log slope of the mean gap in N

    def rows(self) -> list:
        out = []
        for i, n in enumerate(self.n_values):
            for t in range(self.mean.shape[1]):
                out.append({"N": n, "t": t, "mean_gap": float(self.mean[i, t]),
                            "median_gap": float(self.median[i, t]), "slope": float(self.slopes[t])})
        return out


def loglog_slope(n_values, gaps) -> float:
    x = np.log(np.asarray(n_values, dtype=float))
    y = np.asarray(gaps, dtype=float)
    if np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(x, np.log(y), 1)[0])


def chaos_gap(spec: ModelSpec, policy, noise_source, n_values, T: int, trials: int, seed: int,
              interaction: str = "empirical", policy_input: str = "conditional") -> ChaosResult:
    """Expected W1 gap between N-agent empirical joints and the conditional joint.

    ``noise_source`` is a fixed common-noise law, an AdversarySelector, or a
    NoisePath used for every trial.
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    cost = product_cost(spec.state_space, spec.action_space)
    n_values = tuple(int(n) for n in n_values)
    gaps = np.zeros((trials, len(n_values), T))
    for trial in range(trials):
        if isinstance(noise_source, NoisePath):
            path = noise_source
        elif isinstance(noise_source, AdversarySelector):
            path, _ = sample_adversarial_path(spec, policy, noise_source, T, seed, path=trial)
        else:
            path = sample_noise_path(spec, noise_source, T, seed, path=trial)
        flow = conditional_flow(spec, policy, path)
        for i, n in enumerate(n_values):
            panel = simulate_n_agents(spec, policy, path, n, seed, trial=trial,
                                      interaction=interaction, policy_input=policy_input)
            for t in range(T):
                gaps[trial, i, t] = _w1_joint(panel.joints[t], flow.joints[t], cost)
    mean = gaps.mean(axis=0)
    median = np.median(gaps, axis=0)
    slopes = np.array([loglog_slope(n_values, mean[:, t]) for t in range(T)])
    return ChaosResult(n_values, gaps, mean, median, slopes)


# ---------------------------------------------------------------------------
# value estimates
# ---------------------------------------------------------------------------

def truncation_horizon(beta: float, reward_bound: float, tail_tol: float) -> int:
    """Smallest T with beta^T C_r / (1 - beta) <= tail_tol."""
    if beta == 0.0 or reward_bound == 0.0:
        return 1
    T = math.ceil(math.log(tail_tol * (1.0 - beta) / reward_bound) / math.log(beta))
    return max(1, T)


@dataclass
class ValueEstimate:
    mean: float
    stderr: float
    truncation_bound: float
    horizon: int
    paths: int
    projection_error: float | None = None
    samples: np.ndarray = field(repr=False, default=None)


def value_estimate(spec: ModelSpec, policy, noise_law, paths: int, seed: int, T_trunc: int | None = None,
                   tail_tol: float = 1e-6, value_table: ValueTable | None = None, mu0=None) -> ValueEstimate:
    """Monte Carlo discounted reward of a policy under one common-noise law.

    The flows are exact; only the common noise is sampled.  With
    ``value_table`` given, also reports an a-posteriori bound on how far the
    table value at the start law may sit from the true expected reward,
    accumulated from the one-step Bellman defects along the sampled flows.
    """
    beta = spec.beta
    C_r = spec.reward_bound
    T = truncation_horizon(beta, C_r, tail_tol) if T_trunc is None else int(T_trunc)
    traces = sample_flows(spec, policy, noise_law, T, seed, np.arange(paths), mu0)
    disc = beta ** np.arange(T)
    totals = np.array([float(np.dot(disc, tr.rewards)) for tr in traces])
    stderr = float(totals.std(ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0
    trunc = beta ** T * C_r / (1.0 - beta)
    proj = None
    if value_table is not None:
        proj = _projection_error(spec, traces, value_table, disc)
    return ValueEstimate(float(totals.mean()), stderr, float(trunc), T, paths, proj, totals)


def _projection_error(spec: ModelSpec, traces: list, value: ValueTable, disc: np.ndarray) -> float:
    beta = spec.beta
    T = traces[0].horizon
    mu = np.stack([tr.mu[:T] for tr in traces])  # (P, T, S)
    joints = np.stack([tr.joints for tr in traces])
    laws = np.stack([tr.laws for tr in traces])
    rewards = np.stack([tr.rewards for tr in traces])
    norm = "W1"
    v_now = value.values[project_weights(mu, value.grid, norm)]
    succ = successors_batch(spec, joints.reshape((-1,) + joints.shape[2:]))
    v_next = value.values[project_weights(succ, value.grid, norm)].reshape(laws.shape)
    defect = v_now - rewards - beta * (laws * v_next).sum(axis=2)
    errs = np.abs(defect) @ disc
    tail = beta ** T * float(np.abs(value.values).max())
    return float(errs.mean()) + tail


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def write_trace_csv(path, spec: ModelSpec, traces, trial_ids=None, config_hash: str = "") -> None:
    """One row per (trial, t).

    ``e0`` is the common noise realized on the step out of t (empty on the
    final row) and ``p_choice_index`` the index of the law it was drawn from.
    A leading ``# config_hash=...`` comment line is written when a hash is given.
    """
    nS = spec.n_states
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if config_hash:
            w.writerow([f"# config_hash={config_hash}"])
        w.writerow(["trial", "t", "e0"] + [f"mu_{i + 1}" for i in range(nS)] + ["reward", "p_choice_index"])
        for k, tr in enumerate(traces):
            trial = k if trial_ids is None else trial_ids[k]
            labels = tr.noise.labels(spec)
            for t in range(tr.horizon + 1):
                last = t == tr.horizon
                w.writerow([trial, t, "" if last else labels[t]]
                           + [repr(float(x)) for x in tr.mu[t]]
                           + ["" if last else repr(float(tr.rewards[t])),
                              "" if last else int(tr.p_index[t])])


def write_panel_csv(path, panel: AgentPanel, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if config_hash:
            w.writerow([f"# config_hash={config_hash}"])
        w.writerow(["trial", "t", "agent", "state", "action"])
        T = panel.actions.shape[0]
        for t in range(T + 1):
            for i in range(panel.n_agents):
                w.writerow([panel.trial, t, i, int(panel.states[t, i]), "" if t == T else int(panel.actions[t, i])])
