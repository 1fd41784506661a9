import warnings

import numpy as np
import pytest
from scipy.optimize import linprog

from robust_mfc.experiments import Example1Config, build_example1, build_example2
from robust_mfc.model import make_perturbed_uncertainty_set
from robust_mfc.solver import LiftedProblem


def lp_w1(a, b, cost):
    """Dense transportation LP, used as an independent oracle."""
    a, b, cost = np.asarray(a, float), np.asarray(b, float), np.asarray(cost, float)
    n, m = len(a), len(b)
    rows = np.zeros((n + m, n * m))
    for i in range(n):
        rows[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        rows[n + j, j::m] = 1.0
    res = linprog(cost.ravel(), A_eq=rows, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    assert res.success
    return res.fun


def cdf_w1(a, b, coords):
    """W1 on a line: integral of |F_a - F_b|."""
    order = np.argsort(coords)
    x = np.asarray(coords, float)[order]
    fa = np.cumsum(np.asarray(a, float)[order])
    fb = np.cumsum(np.asarray(b, float)[order])
    return float(np.sum(np.abs(fa - fb)[:-1] * np.diff(x)))


@pytest.fixture(scope="session")
def ex1():
    return build_example1()


@pytest.fixture(scope="session")
def ex2():
    return build_example2()


@pytest.fixture(scope="session")
def ex1_robust(ex1):
    laws = make_perturbed_uncertainty_set(ex1.uncertainty_set[0], 0.3, 5, 0)
    return ex1.with_uncertainty(laws)


@pytest.fixture(scope="session")
def ex1_problem4(ex1):
    return LiftedProblem(ex1, 4)


@pytest.fixture(scope="session")
def ex1_problem6(ex1):
    return LiftedProblem(ex1, 6)


@pytest.fixture(autouse=True)
def _quiet_assumption_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*violates 2\\*beta\\*C_F.*")
        yield
