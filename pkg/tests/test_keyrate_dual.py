import math

import numpy as np
import pytest

from structqkd.keyrate_dual import (
    ExponentOverflow,
    OptimizerConfig,
    build_bb84_constraints,
    dual_gradient,
    dual_objective,
    hermitian_exp,
    keyrate_sweep,
    maximize_theta,
    pinch,
)
from structqkd.mubs import make_mubs
from structqkd.protocol import key_rate_analytic


@pytest.fixture(scope="module")
def cs():
    return build_bb84_constraints(0.1)


def test_error_operators(cs):
    _, EX, EZ = cs.operators
    assert np.max(np.abs(EX @ EX - EX)) < 1e-12
    assert np.trace(EX).real == pytest.approx(12.0)
    assert np.linalg.eigvalsh(EZ).min() > -1e-12 and np.linalg.eigvalsh(EZ).max() < 1 + 1e-12
    assert np.max(np.abs(sum(cs.key_map) - np.eye(16))) < 1e-12


def test_maximally_correlated_state_has_no_x_error(cs):
    v = sum(np.kron(np.eye(4)[i], np.eye(4)[i]) for i in range(4)) / 2
    assert abs(v.conj() @ cs.operators[1] @ v) < 1e-12


def test_only_d4():
    with pytest.raises(ValueError):
        build_bb84_constraints(0.1, make_mubs(2), d=2)


def test_hermitian_exp_examples():
    assert np.allclose(hermitian_exp(np.zeros((3, 3))), np.eye(3))
    assert np.allclose(hermitian_exp(np.diag([1.0, -2.0])), np.diag([math.e, math.exp(-2)]))
    with pytest.raises(ValueError):
        hermitian_exp(np.array([[0, 1], [0, 0]], dtype=float))
    with pytest.raises(ExponentOverflow):
        hermitian_exp(np.diag([800.0, 0.0]))


def test_lambda_zero_gives_scaled_identity(cs):
    R = hermitian_exp(-np.eye(16))
    assert np.allclose(R, np.eye(16) / math.e)
    assert dual_objective(np.zeros(3), cs) == pytest.approx(-1 / math.e)


def test_pinch_properties(cs):
    rng = np.random.default_rng(0)
    A = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    X = A @ A.conj().T
    P = pinch(X, cs.key_map)
    assert abs(np.trace(P) - np.trace(X)) < 1e-12 * abs(np.trace(X))
    assert np.linalg.eigvalsh(P).min() > -1e-12
    assert np.allclose(pinch(P, cs.key_map), P)
    with pytest.raises(ValueError):
        pinch(np.eye(4), cs.key_map)


def test_objective_is_continuous(cs):
    rng = np.random.default_rng(1)
    for _ in range(5):
        lam = rng.normal(size=3)
        d = rng.normal(size=3) * 1e-6
        assert abs(dual_objective(lam + d, cs) - dual_objective(lam, cs)) < 1e-3


def test_gradient_matches_finite_differences(cs):
    rng = np.random.default_rng(2)
    for _ in range(10):
        lam = rng.normal(size=3)
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        h = 1e-6
        num = (dual_objective(lam + h * u, cs) - dual_objective(lam - h * u, cs)) / (2 * h)
        ana = dual_gradient(lam, cs) @ u
        assert ana == pytest.approx(num, rel=1e-4, abs=1e-8)


def test_trace_norm_ignores_key_map(cs):
    # pinching preserves the trace, so the trace-norm objective is the same with or without it
    lam = np.array([0.2, 1.0, 2.0])
    Id = (np.eye(16),)
    cs_nokey = type(cs)(cs.d, cs.Q, cs.operators, cs.values, Id)
    assert dual_objective(lam, cs, "trace") == pytest.approx(dual_objective(lam, cs_nokey, "trace"))


@pytest.mark.parametrize("q,target", [(0.0, 2.0), (0.11, 0.65)])
def test_solver_examples(q, target):
    sol = maximize_theta(build_bb84_constraints(q))
    assert sol.K == pytest.approx(target, abs=0.02)
    assert sol.converged
    assert sol.K <= 2 + 1e-6
    # the reported multipliers reproduce Theta in the full three-variable objective
    assert dual_objective(np.array(sol.lam), build_bb84_constraints(q)) == pytest.approx(sol.theta, abs=1e-9)


def test_restarts_agree_and_stay_hermitian():
    sol = maximize_theta(build_bb84_constraints(0.15))
    assert sol.K == pytest.approx(key_rate_analytic(0.15, 4).R, abs=0.02)
    assert np.ptp(sol.restart_thetas) < 1e-6
    assert sol.max_hermitian_error < 1e-10


def test_sweep_is_monotone_and_in_band():
    qs = np.arange(0, 0.176, 0.025)
    rows = keyrate_sweep(qs, OptimizerConfig(restarts=8))
    assert len(rows) == len(qs)
    for q, kn, ka in rows:
        assert abs(kn - ka) <= 0.02
    ks = [r[1] for r in rows]
    assert all(b <= a + 1e-12 for a, b in zip(ks, ks[1:]))


def test_thread_count_does_not_change_result():
    cs = build_bb84_constraints(0.05)
    a = maximize_theta(cs, OptimizerConfig(threads=1))
    b = maximize_theta(cs, OptimizerConfig(threads=4))
    assert a.theta == b.theta and a.lam == b.lam


def test_iteration_cap_warns():
    cs = build_bb84_constraints(0.05)
    with pytest.warns(RuntimeWarning):
        sol = maximize_theta(cs, OptimizerConfig(restarts=2, max_iter=1, polish=False))
    assert not sol.converged
    assert sol.K <= key_rate_analytic(0.05, 4).R + 1e-9
