"""Finite mean-field control models with an uncertain common-noise law.

A model is plain data (see ``model_from_dict``): four finite spaces, a
transition rule, a reward rule, a discount factor, the idiosyncratic noise
law, a finite set of candidate common-noise laws and an initial state law.
Transition and reward rules that need the population law are registered
named rules so model files never carry code.
"""
from __future__ import annotations

import copy
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng
from .measures import (
    Dist,
    DimensionError,
    FiniteSpace,
    ValidationError,
    build_simplex_grid,
    check_weights,
    product_cost,
    product_space,
    renorm,
    w1_weights,
)

SPACE_KEYS = ("state", "action", "idio", "common")
MODEL_KEYS = {"spaces", "transition", "reward", "beta", "lambda_eps", "uncertainty", "initial_mu"}
REWARD_SIGNS = {"negative_distance": -1.0, "paper_literal": 1.0}


# ---------------------------------------------------------------------------
# transition rules
# ---------------------------------------------------------------------------

TransitionFn = Callable[[np.ndarray], np.ndarray]
_TRANSITIONS: dict[str, Callable] = {}
_REWARDS: dict[str, Callable] = {}


def register_transition(name: str):
    """Register a transition factory ``factory(params, spaces) -> (fn, depends_on_joint)``.

    ``fn`` maps joint weights of shape (n, S, A) to next-state indices of shape
    (n, S, A, E, E0).
    """
    def deco(factory):
        _TRANSITIONS[name] = factory
        return factory
    return deco


def register_reward(name: str):
    """Register a reward factory ``factory(params, spaces, sign) -> (fn, bound)``.

    ``fn`` maps joint weights (n, S, A) to rewards r(s, a, joint) of shape (n, S, A).
    """
    def deco(factory):
        _REWARDS[name] = factory
        return factory
    return deco


@dataclass(frozen=True, eq=False)
class TransitionRule:
    kind: str
    fn: TransitionFn = field(repr=False)
    depends_on_joint: bool
    name: str | None = None
    params: dict = field(default_factory=dict)

    def targets(self, joints: np.ndarray) -> np.ndarray:
        return self.fn(np.asarray(joints, dtype=float).reshape((-1,) + np.shape(joints)[-2:]))


@dataclass(frozen=True, eq=False)
class RewardRule:
    kind: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    bound: float
    name: str | None = None
    params: dict = field(default_factory=dict)

    def values(self, joints: np.ndarray) -> np.ndarray:
        joints = np.asarray(joints, dtype=float)
        return self.fn(joints.reshape((-1,) + joints.shape[-2:])).reshape(joints.shape)


def _coordinate_lookup(space: FiniteSpace) -> dict:
    if space.coords.shape[1] != 1:
        raise ValidationError("walk rules need one-dimensional state coordinates")
    return {round(float(x), 9): i for i, x in enumerate(space.coords[:, 0])}


def _clamp_walk_table(params: dict, spaces: dict, shift=None) -> np.ndarray:
    S, A, E, E0 = (spaces[k] for k in SPACE_KEYS)
    xs, xa, xe, x0 = (sp.coords[:, 0] for sp in (S, A, E, E0))
    lo = float(params.get("lo", xs.min()))
    hi = float(params.get("hi", xs.max()))
    use_idio = bool(params.get("idio", True))
    step = (xs[:, None, None, None] + xa[None, :, None, None]
            + (xe[None, None, :, None] if use_idio else 0.0) + x0[None, None, None, :])
    if shift is not None:
        step = step + shift
    step = np.broadcast_to(step, (len(xs), len(xa), len(xe), len(x0)))
    nxt = np.clip(step, lo, hi)
    absorbing = params.get("absorbing")
    if absorbing is not None:
        stuck = np.isclose(xs, float(absorbing))
        nxt = np.where(stuck[:, None, None, None], xs[:, None, None, None], nxt)
    lookup = _coordinate_lookup(S)
    flat = np.round(nxt, 9).ravel()
    out = np.empty(flat.shape, dtype=np.int64)
    for i, x in enumerate(flat):
        if float(x) not in lookup:
            raise ValidationError(f"clamp_walk target {x} is not a state coordinate")
        out[i] = lookup[float(x)]
    return out.reshape(nxt.shape)


@register_transition("clamp_walk")
def _clamp_walk(params: dict, spaces: dict):
    """s' = clamp(s + a + e + e0, lo, hi); an optional absorbing state never moves."""
    table = _clamp_walk_table(params, spaces)

    def fn(joints):
        return np.broadcast_to(table, (len(joints),) + table.shape)
    return fn, False


@register_transition("herding_walk")
def _herding_walk(params: dict, spaces: dict):
    """clamp_walk plus a unit pull towards the population mean when it is far away."""
    S = spaces["state"]
    xs = S.coords[:, 0]
    pull = float(params.get("pull", 1.0))
    base_params = {k: v for k, v in params.items() if k != "pull"}
    tables = {d: _clamp_walk_table(base_params, spaces, shift=d) for d in (-1.0, 0.0, 1.0)}

    def fn(joints):
        mean = joints.sum(axis=2) @ xs
        drift = np.clip(np.rint(pull * (mean[:, None] - xs[None, :])), -1, 1)
        d = drift[:, :, None, None, None]
        out = np.where(d < 0, tables[-1.0][None], np.where(d > 0, tables[1.0][None], tables[0.0][None]))
        return out
    return fn, True


def _table_transition(raw, spaces: dict) -> TransitionRule:
    S, A, E, E0 = (spaces[k] for k in SPACE_KEYS)
    shape = (len(S), len(A), len(E), len(E0))
    arr = np.empty(shape, dtype=np.int64)
    try:
        nested = np.asarray(raw, dtype=object)
    except Exception as exc:  # pragma: no cover - numpy raises on ragged input
        raise ValidationError(f"transition table is ragged: {exc}") from None
    if nested.shape != shape:
        raise ValidationError(f"transition table has shape {nested.shape}, expected {shape}")
    for idx in np.ndindex(shape):
        label = nested[idx]
        if label not in S.labels:
            s, a, e, e0 = idx
            raise ValidationError(
                f"transition maps (s={S.labels[s]}, a={A.labels[a]}, e={E.labels[e]}, "
                f"e0={E0.labels[e0]}) to {label!r}, outside the state space"
            )
        arr[idx] = S.labels.index(label)
    arr.setflags(write=False)

    def fn(joints):
        return np.broadcast_to(arr, (len(joints),) + shape)
    return TransitionRule("table", fn, False, params={"table": raw})


# ---------------------------------------------------------------------------
# reward rules
# ---------------------------------------------------------------------------

def _quadratic_abs_max(a2: float, b1: float, c0: float, lo: float, hi: float) -> float:
    """max |a2 m^2 + b1 m + c0| over m in [lo, hi]."""
    cands = [lo, hi]
    if a2 != 0:
        v = -b1 / (2 * a2)
        if lo < v < hi:
            cands.append(v)
    return max(abs(a2 * m * m + b1 * m + c0) for m in cands)


@register_reward("target_distance")
def _target_distance(params: dict, spaces: dict, sign: float):
    target = check_weights(params["target"], len(spaces["state"]))

    def fn(joints):
        mu = joints.sum(axis=2)
        val = sign * ((mu - target) ** 2).sum(axis=1)
        return np.broadcast_to(val[:, None, None], joints.shape).copy()
    # convex in mu, so the sup over the simplex is attained at a Dirac
    eye = np.eye(len(target))
    bound = float(((eye - target) ** 2).sum(axis=1).max())
    return fn, bound


@register_reward("systemic_risk")
def _systemic_risk(params: dict, spaces: dict, sign: float):
    q = float(params.get("q", 0.5))
    eps = float(params.get("epsilon", 0.5))
    s_target = float(params.get("s_target", 2.0))
    if q < 0 or eps < 0 or q * q > eps:
        warnings.warn(f"systemic_risk constants q={q}, epsilon={eps} break the q^2 <= epsilon convention",
                      stacklevel=3)
    xs = spaces["state"].coords[:, 0]
    xa = spaces["action"].coords[:, 0]

    def fn(joints):
        m = joints.sum(axis=2) @ xs
        gap = (m[:, None] - xs[None, :]) ** 2  # (n, S)
        out = (-xa[None, None, :] ** 2
               + q * xa[None, None, :] * gap[:, :, None]
               - 0.5 * eps * gap[:, :, None]
               + sign * (m[:, None, None] - s_target) ** 2)
        return out
    lo, hi = float(xs.min()), float(xs.max())
    bound = 0.0
    for s in xs:
        for a in xa:
            k = q * a - 0.5 * eps
            # r(m) = -a^2 + k (m - s)^2 + sign (m - s_target)^2
            a2 = k + sign
            b1 = -2 * k * s - 2 * sign * s_target
            c0 = -a * a + k * s * s + sign * s_target * s_target
            bound = max(bound, _quadratic_abs_max(a2, b1, c0, lo, hi))
    return fn, float(bound)


@register_reward("constant")
def _constant(params: dict, spaces: dict, sign: float):
    c = float(params["c"])

    def fn(joints):
        return np.full(joints.shape, c)
    return fn, abs(c)


@register_reward("action_mean_target")
def _action_mean_target(params: dict, spaces: dict, sign: float):
    """-(mean action under the joint law - target)^2; rewards mixing actions."""
    xa = spaces["action"].coords[:, 0]
    target = float(params.get("target", 0.0))

    def fn(joints):
        m = joints.sum(axis=1) @ xa
        return np.broadcast_to((-(m - target) ** 2)[:, None, None], joints.shape).copy()
    bound = max((xa.min() - target) ** 2, (xa.max() - target) ** 2)
    return fn, float(bound)


def _tabular_reward(raw, spaces: dict) -> RewardRule:
    table = np.asarray(raw, dtype=float)
    shape = (len(spaces["state"]), len(spaces["action"]))
    if table.shape != shape:
        raise ValidationError(f"reward table has shape {table.shape}, expected {shape}")

    def fn(joints):
        return np.broadcast_to(table, joints.shape).copy()
    return RewardRule("tabular", fn, float(np.abs(table).max()), params={"table": raw})


# ---------------------------------------------------------------------------
# model spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModelSpec:
    state_space: FiniteSpace
    action_space: FiniteSpace
    idio_space: FiniteSpace
    common_space: FiniteSpace
    transition: TransitionRule
    reward: RewardRule
    beta: float
    lambda_eps: Dist
    uncertainty_set: tuple
    initial_mu: Dist
    source: dict = field(repr=False)

    @property
    def n_states(self) -> int:
        return len(self.state_space)

    @property
    def n_actions(self) -> int:
        return len(self.action_space)

    @property
    def uncertainty_matrix(self) -> np.ndarray:
        return np.stack([p.weights for p in self.uncertainty_set])

    @property
    def reward_bound(self) -> float:
        return self.reward.bound

    def lifted_kernels(self, joints: np.ndarray) -> np.ndarray:
        """K[n, s, a, e0, s'] = sum_e lambda_eps(e) 1{F(s, a, joint_n, e, e0) = s'}."""
        joints = np.asarray(joints, dtype=float).reshape((-1, self.n_states, self.n_actions))
        if not self.transition.depends_on_joint:
            return np.broadcast_to(self.static_kernel, (len(joints),) + self.static_kernel.shape)
        return _kernel_from_targets(self.transition.targets(joints), self.lambda_eps.weights, self.n_states)

    @property
    def static_kernel(self) -> np.ndarray:
        if self.transition.depends_on_joint:
            raise ValueError("transition depends on the joint law")
        cached = self.__dict__.get("_static_kernel")
        if cached is None:
            dummy = np.zeros((1, self.n_states, self.n_actions))
            dummy[0, 0, 0] = 1.0
            cached = _kernel_from_targets(self.transition.targets(dummy), self.lambda_eps.weights, self.n_states)[0]
            cached.setflags(write=False)
            object.__setattr__(self, "_static_kernel", cached)
        return cached

    def with_uncertainty(self, laws) -> "ModelSpec":
        laws = tuple(p if isinstance(p, Dist) else Dist(self.common_space, p) for p in laws)
        if not laws:
            raise ValidationError("uncertainty set must be non-empty")
        src = copy.deepcopy(self.source)
        src["uncertainty"] = {"explicit": [p.weights.tolist() for p in laws]}
        new = ModelSpec(self.state_space, self.action_space, self.idio_space, self.common_space,
                        self.transition, self.reward, self.beta, self.lambda_eps, laws,
                        self.initial_mu, src)
        if "_static_kernel" in self.__dict__:
            object.__setattr__(new, "_static_kernel", self.__dict__["_static_kernel"])
        return new

    def with_initial(self, mu) -> "ModelSpec":
        mu = mu if isinstance(mu, Dist) else Dist(self.state_space, mu)
        src = copy.deepcopy(self.source)
        src["initial_mu"] = mu.weights.tolist()
        new = ModelSpec(self.state_space, self.action_space, self.idio_space, self.common_space,
                        self.transition, self.reward, self.beta, self.lambda_eps,
                        self.uncertainty_set, mu, src)
        if "_static_kernel" in self.__dict__:
            object.__setattr__(new, "_static_kernel", self.__dict__["_static_kernel"])
        return new


def _kernel_from_targets(targets: np.ndarray, lam: np.ndarray, n_states: int) -> np.ndarray:
    # targets: (n, S, A, E, E0) -> kernel (n, S, A, E0, S')
    onehot = (targets[..., None] == np.arange(n_states)).astype(float)
    return np.einsum("e,nsaeod->nsaod", lam, onehot)


def _space_from_dict(d: dict, name: str) -> FiniteSpace:
    unknown = set(d) - {"labels", "coords", "metric"}
    if unknown:
        raise ValidationError(f"unknown keys in space {name!r}: {sorted(unknown)}")
    labels = d.get("labels")
    if not labels:
        raise ValidationError(f"space {name!r} needs labels")
    labels = [tuple(x) if isinstance(x, list) else x for x in labels]
    coords = d.get("coords")
    if coords is None:
        try:
            coords = [float(x) for x in labels]
        except (TypeError, ValueError):
            coords = list(range(len(labels)))
    try:
        return FiniteSpace.from_coords(labels, coords, d.get("metric"))
    except (ValidationError, DimensionError) as exc:
        raise ValidationError(f"space {name!r}: {exc}") from None


def make_perturbed_uncertainty_set(v_ref, delta: float, count: int, seed: int,
                                   stream: int = 0, max_retries: int = 100) -> list:
    """Reference law plus ``count`` random perturbations of size ``delta``.

    Each perturbation draws coordinates uniformly on [-delta, delta], removes
    their mean, adds the result to ``v_ref``, clips at zero and renormalizes.
    ``v_ref`` is always the first element; exact duplicates are dropped.
    """
    space = v_ref.space if isinstance(v_ref, Dist) else None
    ref = check_weights(v_ref.weights if isinstance(v_ref, Dist) else v_ref)
    if count < 1:
        raise ValidationError("count must be at least 1")
    if delta < 0:
        raise ValidationError("delta must be nonnegative")
    n = len(ref)
    out = [ref]
    coords = np.arange(n)
    for i in range(count):
        for attempt in range(max_retries):
            u = rng.uniforms(seed, rng.PERTURBATION, stream, i, attempt, coords)
            raw = delta * (2.0 * u - 1.0)
            clipped = np.maximum(0.0, ref + raw - raw.mean())
            if clipped.sum() > 0:
                break
        else:
            raise ValidationError("perturbation kept clipping to the zero vector")
        v = perturb_vector(ref, raw)
        if not any(np.array_equal(v, w) for w in out):
            out.append(v)
    if space is not None:
        return [Dist(space, w) for w in out]
    return out


def perturb_vector(v_ref, raw) -> np.ndarray:
    """renorm(max(0, v_ref + raw - mean(raw)))."""
    ref = np.asarray(v_ref, dtype=float)
    raw = np.asarray(raw, dtype=float)
    return renorm(np.maximum(0.0, ref + raw - raw.mean()))


def _uncertainty_from_dict(d: dict, common: FiniteSpace) -> tuple:
    if "explicit" in d:
        if set(d) != {"explicit"}:
            raise ValidationError("explicit uncertainty sets take no other keys")
        laws = d["explicit"]
        if not laws:
            raise ValidationError("uncertainty set must be non-empty")
        try:
            return tuple(Dist(common, w) for w in laws)
        except (ValidationError, DimensionError) as exc:
            raise ValidationError(f"uncertainty set: {exc}") from None
    unknown = set(d) - {"v_ref", "delta", "count", "seed", "stream"}
    if unknown or "v_ref" not in d:
        raise ValidationError(f"bad uncertainty block keys: {sorted(d)}")
    ref = Dist(common, d["v_ref"])
    laws = make_perturbed_uncertainty_set(ref, float(d.get("delta", 0.0)), int(d.get("count", 1)),
                                          int(d.get("seed", 0)), int(d.get("stream", 0)))
    return tuple(laws)


def model_from_dict(data: dict) -> ModelSpec:
    """Build and validate a model from its JSON document."""
    if not isinstance(data, dict):
        raise ValidationError("model document must be a JSON object")
    unknown = set(data) - MODEL_KEYS
    if unknown:
        raise ValidationError(f"unknown model keys: {sorted(unknown)}")
    missing = MODEL_KEYS - set(data)
    if missing:
        raise ValidationError(f"missing model keys: {sorted(missing)}")
    data = copy.deepcopy(data)
    sp = data["spaces"]
    if set(sp) != set(SPACE_KEYS):
        raise ValidationError(f"spaces must be exactly {SPACE_KEYS}")
    spaces = {k: _space_from_dict(sp[k], k) for k in SPACE_KEYS}

    beta = data["beta"]
    if not isinstance(beta, (int, float)) or not 0.0 <= beta < 1.0:
        raise ValidationError(f"discount beta={beta!r} must lie in [0, 1)")

    tr = data["transition"]
    kind = tr.get("kind")
    if kind == "table":
        if set(tr) != {"kind", "table"}:
            raise ValidationError("table transitions take keys {kind, table}")
        transition = _table_transition(tr["table"], spaces)
    elif kind == "mean_field_fn":
        if set(tr) - {"kind", "name", "params"} or "name" not in tr:
            raise ValidationError("named transitions take keys {kind, name, params}")
        if tr["name"] not in _TRANSITIONS:
            raise ValidationError(f"unknown transition rule {tr['name']!r}")
        params = tr.get("params", {})
        fn, dep = _TRANSITIONS[tr["name"]](params, spaces)
        transition = TransitionRule("mean_field_fn", fn, dep, tr["name"], params)
    else:
        raise ValidationError(f"unknown transition kind {kind!r}")

    rw = data["reward"]
    if set(rw) - {"name", "params", "sign"} or "name" not in rw:
        raise ValidationError("reward block takes keys {name, params, sign}")
    sign_name = rw.get("sign", "negative_distance")
    if sign_name not in REWARD_SIGNS:
        raise ValidationError(f"unknown reward sign {sign_name!r}")
    if rw["name"] == "tabular":
        reward = _tabular_reward(rw.get("params", {}).get("table"), spaces)
    elif rw["name"] in _REWARDS:
        params = rw.get("params", {})
        fn, bound = _REWARDS[rw["name"]](params, spaces, REWARD_SIGNS[sign_name])
        reward = RewardRule("named", fn, bound, rw["name"], params)
    else:
        raise ValidationError(f"unknown reward rule {rw['name']!r}")

    try:
        lam = Dist(spaces["idio"], data["lambda_eps"])
        mu0 = Dist(spaces["state"], data["initial_mu"])
    except (ValidationError, DimensionError) as exc:
        raise ValidationError(str(exc)) from None
    laws = _uncertainty_from_dict(data["uncertainty"], spaces["common"])

    spec = ModelSpec(spaces["state"], spaces["action"], spaces["idio"], spaces["common"],
                     transition, reward, float(beta), lam, laws, mu0, data)
    return validate_model(spec)


def validate_model(spec) -> ModelSpec:
    """Check every model invariant; accepts a ModelSpec or its JSON document."""
    if isinstance(spec, dict):
        return model_from_dict(spec)
    if not 0.0 <= spec.beta < 1.0:
        raise ValidationError(f"discount beta={spec.beta} must lie in [0, 1)")
    if not spec.uncertainty_set:
        raise ValidationError("uncertainty set must be non-empty")
    for p in spec.uncertainty_set:
        if p.space != spec.common_space:
            raise ValidationError("uncertainty laws must live on the common-noise space")
    if spec.lambda_eps.space != spec.idio_space or spec.initial_mu.space != spec.state_space:
        raise ValidationError("lambda_eps / initial_mu live on the wrong space")
    nS, nA = spec.n_states, spec.n_actions
    probes = _probe_joints(nS, nA)
    targets = spec.transition.targets(probes)
    expected = (len(probes), nS, nA, len(spec.idio_space), len(spec.common_space))
    if targets.shape != expected:
        raise ValidationError(f"transition produced shape {targets.shape}, expected {expected}")
    bad = np.argwhere((targets < 0) | (targets >= nS))
    if len(bad):
        n, s, a, e, e0 = bad[0]
        raise ValidationError(
            f"transition maps (s={spec.state_space.labels[s]}, a={spec.action_space.labels[a]}, "
            f"e={spec.idio_space.labels[e]}, e0={spec.common_space.labels[e0]}) outside the state space"
        )
    rewards = spec.reward.values(probes)
    if not np.all(np.isfinite(rewards)):
        raise ValidationError("reward is not finite on probe joints")
    if np.abs(rewards).max() > spec.reward.bound + 1e-9:
        raise ValidationError("reward exceeds its declared bound on probe joints")
    return spec


def _probe_joints(nS: int, nA: int) -> np.ndarray:
    diracs = np.eye(nS * nA).reshape(-1, nS, nA)
    uniform = np.full((1, nS, nA), 1.0 / (nS * nA))
    return np.concatenate([diracs, uniform])


def load_model(path) -> ModelSpec:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def model_to_dict(spec: ModelSpec) -> dict:
    return copy.deepcopy(spec.source)


def dump_model(spec: ModelSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def model_hash(spec: ModelSpec) -> str:
    return hashlib.sha256(canonical_json(model_to_dict(spec)).encode()).hexdigest()


# ---------------------------------------------------------------------------
# assumption audit
# ---------------------------------------------------------------------------

@dataclass
class AssumptionReport:
    c_f_hat: float
    c_r_hat: float
    beta_ok: bool
    details: dict

    @property
    def lipschitz_bound(self) -> float | None:
        """Value-function Lipschitz constant 2 C_r / (1 - 2 beta C_F), when finite."""
        return self.details.get("lipschitz_bound")


def audit_assumptions(spec: ModelSpec, lambda_grid_k: int = 1) -> AssumptionReport:
    """Numerical Lipschitz estimates of the averaged transition and the reward.

    Ratios are taken over all (s, a, joint, e0) pairs sharing ``a`` and ``e0``
    with joints drawn from the joint-simplex grid of resolution
    ``lambda_grid_k`` (which contains every Dirac joint).  Pairs at distance
    zero are skipped.  This is a plausibility check, not a proof.
    """
    nS, nA = spec.n_states, spec.n_actions
    joint_space = product_space(spec.state_space, spec.action_space)
    grid = build_simplex_grid(joint_space, lambda_grid_k)
    joints = grid.points.reshape(-1, nS, nA)
    L = len(joints)
    cost = product_cost(spec.state_space, spec.action_space)
    w1 = np.zeros((L, L))
    for i in range(L):
        for j in range(i + 1, L):
            w1[i, j] = w1[j, i] = w1_weights(grid.points[i], grid.points[j], cost)
    dS = spec.state_space.metric
    lam = spec.lambda_eps.weights
    targets = spec.transition.targets(joints)  # (L, S, A, E, E0)
    rewards = spec.reward.values(joints)  # (L, S, A)

    denom = dS[None, :, None, :] + w1[:, None, :, None]  # (L, S, L', S')
    valid = denom > 0
    safe = np.where(valid, denom, 1.0)

    c_f, f_wit = 0.0, None
    for a in range(nA):
        for e0 in range(len(spec.common_space)):
            t = targets[:, :, a, :, e0].reshape(L * nS, -1)  # (L*S, E)
            disp = np.zeros((L * nS, L * nS))
            for e, w in enumerate(lam):
                if w > 0:
                    disp += w * dS[t[:, None, e], t[None, :, e]]
            disp = disp.reshape(L, nS, L, nS)
            ratio = np.where(valid, disp / safe, 0.0)
            idx = np.unravel_index(np.argmax(ratio), ratio.shape)
            if ratio[idx] > c_f:
                c_f = float(ratio[idx])
                f_wit = {"a": a, "e0": e0, "s": int(idx[1]), "s_tilde": int(idx[3]),
                         "joint": int(idx[0]), "joint_tilde": int(idx[2])}

    c_lip, r_wit = 0.0, None
    for a in range(nA):
        r = rewards[:, :, a]
        diff = np.abs(r[:, :, None, None] - r[None, None, :, :])
        ratio = np.where(valid, diff / safe, 0.0)
        idx = np.unravel_index(np.argmax(ratio), ratio.shape)
        if ratio[idx] > c_lip:
            c_lip = float(ratio[idx])
            r_wit = {"a": a, "s": int(idx[1]), "s_tilde": int(idx[3]),
                     "joint": int(idx[0]), "joint_tilde": int(idx[2])}
    bound = max(float(np.abs(rewards).max()), spec.reward.bound)
    c_r = max(c_lip, bound)

    beta = spec.beta
    beta_ok = beta < 1.0 and (c_f == 0.0 or 2.0 * beta * c_f < 1.0)
    details = {
        "lambda_grid_k": lambda_grid_k,
        "n_joints": L,
        "c_r_lipschitz": c_lip,
        "c_r_bound": bound,
        "transition_witness": f_wit,
        "reward_witness": r_wit,
        "lipschitz_bound": (2.0 * c_r / (1.0 - 2.0 * beta * c_f)) if beta_ok else None,
    }
    return AssumptionReport(c_f, c_r, bool(beta_ok), details)
