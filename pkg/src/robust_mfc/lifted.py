"""Lifted dynamics on the space of population laws.

A lifted action is a joint law on S x A whose S-marginal is the current
population law.  Given such a joint, the next population law is the
push-forward of (joint x idiosyncratic law) through the transition for each
common-noise value, and the lifted reward integrates r against the joint.
Batch helpers (``*_batch``) work on raw arrays and are what the solver and
simulator call in their inner loops.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import NORM_TOL, Dist, DimensionError, FiniteSpace, ValidationError
from .model import ModelSpec


@dataclass(frozen=True, eq=False)
class JointDist:
    space_s: FiniteSpace
    space_a: FiniteSpace
    weights: np.ndarray
    s_marginal: Dist

    def __init__(self, space_s: FiniteSpace, space_a: FiniteSpace, weights, s_marginal: Dist | None = None):
        w = np.array(weights, dtype=float, copy=True)
        if w.shape != (len(space_s), len(space_a)):
            raise DimensionError(f"joint weights have shape {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)) or abs(w.sum() - 1.0) > NORM_TOL:
            raise ValidationError("joint weights must be a probability matrix")
        if s_marginal is None:
            s_marginal = Dist(space_s, w.sum(axis=1))
        w.setflags(write=False)
        object.__setattr__(self, "space_s", space_s)
        object.__setattr__(self, "space_a", space_a)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "s_marginal", s_marginal)

    def pj_s(self) -> Dist:
        return self.s_marginal


@dataclass(frozen=True, eq=False)
class StatePolicy:
    """Per-state action laws pi(. | s), stored as an (S, A) row-stochastic matrix."""

    space_s: FiniteSpace
    space_a: FiniteSpace
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float, copy=True)
        if m.shape != (len(self.space_s), len(self.space_a)):
            raise DimensionError(f"policy matrix has shape {m.shape}")
        if np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1.0) > NORM_TOL):
            raise ValidationError("policy rows must be probability vectors")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def row(self, s: int) -> Dist:
        return Dist(self.space_a, self.matrix[s])

    @classmethod
    def deterministic(cls, space_s: FiniteSpace, space_a: FiniteSpace, actions) -> "StatePolicy":
        m = np.zeros((len(space_s), len(space_a)))
        m[np.arange(len(space_s)), np.asarray(actions)] = 1.0
        return cls(space_s, space_a, m)


def kernel_to_joint(mu: Dist, pi: StatePolicy) -> JointDist:
    if mu.space != pi.space_s:
        raise DimensionError("policy and law live on different state spaces")
    return JointDist(pi.space_s, pi.space_a, mu.weights[:, None] * pi.matrix, s_marginal=mu)


def disintegrate(joint: JointDist) -> StatePolicy:
    """Conditional action law given the state; zero-mass rows become uniform."""
    return StatePolicy(joint.space_s, joint.space_a, disintegrate_batch(joint.weights))


def disintegrate_batch(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    mass = w.sum(axis=-1, keepdims=True)
    uniform = np.full_like(w, 1.0 / w.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(mass > 0, w / np.where(mass > 0, mass, 1.0), uniform)
    return out


def successors_batch(spec: ModelSpec, joints: np.ndarray) -> np.ndarray:
    """Next population laws for every common-noise value: (n, S, A) -> (n, E0, S)."""
    joints = np.asarray(joints, dtype=float)
    if spec.transition.depends_on_joint:
        kern = spec.lifted_kernels(joints)  # (n, S, A, E0, S')
        return np.einsum("nsa,nsaod->nod", joints, kern)
    kern = spec.static_kernel  # (S, A, E0, S')
    return np.einsum("nsa,saod->nod", joints, kern)


def rewards_batch(spec: ModelSpec, joints: np.ndarray) -> np.ndarray:
    joints = np.asarray(joints, dtype=float)
    return (spec.reward.values(joints) * joints).sum(axis=(-2, -1))


def _check_joint(joint: JointDist, spec: ModelSpec) -> None:
    if joint.space_s != spec.state_space or joint.space_a != spec.action_space:
        raise DimensionError("joint law does not match the model spaces")


def lifted_transition(joint: JointDist, e0, spec: ModelSpec) -> Dist:
    """Push-forward of joint x lambda_eps through F(., ., joint, ., e0); ``e0`` is a label."""
    _check_joint(joint, spec)
    k = spec.common_space.index(e0)
    nxt = successors_batch(spec, joint.weights[None])[0, k]
    return Dist(spec.state_space, nxt)


def lifted_kernel(joint: JointDist, p: Dist, spec: ModelSpec) -> list:
    """Law of the next population law under common-noise law ``p``.

    Returns ``[(Dist, weight), ...]`` with identical successors merged.
    """
    _check_joint(joint, spec)
    if p.space != spec.common_space:
        raise DimensionError("noise law lives on the wrong space")
    succ = successors_batch(spec, joint.weights[None])[0]
    out: list = []
    for k, w in enumerate(p.weights):
        if w <= 0:
            continue
        for i, (vec, acc) in enumerate(out):
            if np.max(np.abs(vec - succ[k])) <= 1e-12:
                out[i] = (vec, acc + w)
                break
        else:
            out.append((succ[k], w))
    return [(Dist(spec.state_space, vec), float(w)) for vec, w in out]


def lifted_reward(joint: JointDist, spec: ModelSpec) -> float:
    _check_joint(joint, spec)
    return float(rewards_batch(spec, joint.weights[None])[0])
