import numpy as np
import pytest

from robust_mfc.experiments import Example1Config, Example2Config, build_example1, build_example2


def _target(spec, s, a, e, e0, joint=None):
    joint = np.full((1, spec.n_states, spec.n_actions), 1 / (spec.n_states * spec.n_actions)) if joint is None else joint
    t = spec.transition.targets(joint)[0]
    idx = t[spec.state_space.index(s), spec.action_space.index(a), spec.idio_space.index(e), spec.common_space.index(e0)]
    return spec.state_space.labels[idx]


def test_example1_transition(ex1):
    assert _target(ex1, 7, 1, 0, 1) == 7
    assert _target(ex1, 4, 0, 0, 0) == 4
    assert _target(ex1, 1, -1, 0, -1) == 1
    for s in range(1, 8):
        for a in (-1, 0, 1):
            for e0 in (-1, 0, 1):
                assert _target(ex1, s, a, 0, e0) == max(1, min(7, s + a + e0))


def test_example1_reward_zero_at_target(ex1):
    target = np.array(Example1Config().target_mu)
    joint = target[:, None] * np.full(3, 1 / 3)
    assert np.allclose(ex1.reward.values(joint[None]), 0.0, atol=1e-15)


def test_example2_transition(ex2):
    for a in (-1, 0, 1):
        for e in (-1, 0, 1):
            for e0 in range(-2, 3):
                assert _target(ex2, -1, a, e, e0) == -1
    for s in range(0, 5):
        for a in (-1, 0, 1):
            for e in (-1, 0, 1):
                for e0 in range(-2, 3):
                    assert _target(ex2, s, a, e, e0) == max(-1, min(4, s + a + e + e0))


def test_example2_reward_terms(ex2):
    q, eps, s_target = 0.5, 0.5, 2.0
    states = np.arange(-1, 5)
    # population at Dirac(2): mean 2, last term vanishes
    joint = np.zeros((6, 3)); joint[3, 1] = 1.0
    r = ex2.reward.values(joint[None])[0]
    for i, s in enumerate(states):
        for k, a in enumerate((-1, 0, 1)):
            expected = -a * a + q * a * (2 - s) ** 2 - 0.5 * eps * (2 - s) ** 2
            assert r[i, k] == pytest.approx(expected, abs=1e-12)
    # at m = s and a = 0 only the target term survives
    for i, s in enumerate(states):
        joint = np.zeros((6, 3)); joint[i, 1] = 1.0
        val = ex2.reward.values(joint[None])[0, i, 1]
        assert val == pytest.approx(-(s - s_target) ** 2, abs=1e-12)
    lit = build_example2(Example2Config(reward_sign="paper_literal"))
    joint = np.zeros((6, 3)); joint[0, 1] = 1.0
    assert lit.reward.values(joint[None])[0, 0, 1] == pytest.approx(9.0)


def test_example2_state_count(ex2):
    assert ex2.state_space.labels == (-1, 0, 1, 2, 3, 4) or list(ex2.state_space.labels) == [-1, 0, 1, 2, 3, 4]
    assert len(ex2.common_space) == 5 and np.allclose(ex2.lambda_eps.weights, [0.05, 0.9, 0.05])
