"""Numerical lower bound on the d=4 BB84 key rate from a dual problem.

With constraint operators Gamma = (1, E_X, E_Z), their expected values
gamma = (1, Q, Q) and the key-map projectors Z_j = |psi_j><psi_j| (x) 1,

    R(lam)  = exp(-1 - lam . Gamma)
    Theta   = max_lam  -||sum_j Z_j R(lam) Z_j|| - lam . gamma
    K      >= Theta / ln 2 - H(Z_A|Z_B)

The norm is a pluggable choice. Under the operator norm the multiplier of the
identity constraint can be eliminated in closed form, which leaves a smooth
concave problem in (lam_X, lam_Z). That reduced problem is what
:func:`maximize_theta` solves, with an analytic gradient. The identity
multiplier is recovered afterwards.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .mubs import MubSet, make_mubs
from .protocol import entropy_d, key_rate_analytic
from .rng import stream

#: Largest eigenvalue allowed in an exponent before :class:`ExponentOverflow` is raised.
EXP_LIMIT = 700.0
HERMITIAN_TOL = 1e-10


class ExponentOverflow(OverflowError):
    """The exponent of R(lambda) is too large to evaluate; shrink the step."""


@dataclass(frozen=True)
class ConstraintSet:
    d: int
    Q: float
    operators: tuple  # (identity, E_X, E_Z), each (d*d, d*d)
    values: tuple  # (1, Q, Q)
    key_map: tuple  # Z_A projectors

    def __post_init__(self):
        n = self.d * self.d
        for G in self.operators:
            if G.shape != (n, n):
                raise ValueError("constraint operator has the wrong shape")
            if np.max(np.abs(G - G.conj().T)) > 1e-12:
                raise ValueError("constraint operators must be Hermitian")
        if len(self.values) != len(self.operators):
            raise ValueError("one expected value per constraint operator")
        if np.max(np.abs(sum(self.key_map) - np.eye(n))) > 1e-12:
            raise ValueError("key-map projectors must sum to the identity")

    @property
    def dim(self) -> int:
        return self.d * self.d


@dataclass(frozen=True)
class DualSolution:
    Q: float
    lam: tuple  # (lam_identity, lam_X, lam_Z)
    theta: float
    h_ab: float  # H(Z_A|Z_B) in bits
    K: float
    converged: bool = True
    iterations: int = 0
    restart_thetas: tuple = field(default=(), compare=False)
    max_hermitian_error: float = 0.0

    def __post_init__(self):
        if self.K > 2.0 + 1e-6:
            raise ValueError("key rate exceeds log2(d)")


def _projector(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj())


def build_bb84_constraints(Q: float, mubs: MubSet | None = None, d: int = 4) -> ConstraintSet:
    """Identity, E_X = 1 - sum psi psi (x) psi psi and E_Z likewise for phi, on the joint space."""
    if d != 4:
        raise ValueError("only the two-basis d=4 instance is supported")
    mubs = mubs or make_mubs(4)
    if mubs.d != 4:
        raise ValueError("constraint set needs a d=4 MUB set")
    if not 0.0 <= Q <= 0.75:
        raise ValueError("Q must lie in [0, 0.75]")
    n = d * d
    one = np.eye(n, dtype=complex)
    psi, phi = mubs.bases
    EX = one - sum(np.kron(_projector(s.amplitudes), _projector(s.amplitudes)) for s in psi)
    EZ = one - sum(np.kron(_projector(s.amplitudes), _projector(s.amplitudes)) for s in phi)
    Z = tuple(np.kron(_projector(s.amplitudes), np.eye(d)) for s in psi)
    return ConstraintSet(d, float(Q), (one, EX, EZ), (1.0, float(Q), float(Q)), Z)


def _check_hermitian(M, tol: float = HERMITIAN_TOL) -> float:
    err = float(np.max(np.abs(M - M.conj().T))) if M.size else 0.0
    if err > tol * max(1.0, float(np.max(np.abs(M)))):
        raise ValueError(f"operator is not Hermitian (deviation {err:.3g})")
    return err


def hermitian_exp(M) -> np.ndarray:
    """exp(M) for Hermitian M via its eigendecomposition."""
    M = np.asarray(M)
    _check_hermitian(M)
    w, V = np.linalg.eigh(M)
    if w.max(initial=-np.inf) > EXP_LIMIT:
        raise ExponentOverflow(f"exponent eigenvalue {w.max():.1f} exceeds {EXP_LIMIT}")
    return (V * np.exp(w)) @ V.conj().T


def pinch(X, key_map) -> np.ndarray:
    """sum_j Z_j X Z_j."""
    X = np.asarray(X)
    if any(Z.shape != X.shape for Z in key_map):
        raise ValueError("operator and key-map dimensions differ")
    return sum(Z @ X @ Z for Z in key_map)


def operator_norm(X) -> float:
    return float(np.linalg.norm(X, 2))


def trace_norm(X) -> float:
    return float(np.linalg.norm(X, "nuc"))


NORMS = {"operator": operator_norm, "trace": trace_norm}


def _exponent(lam, cs: ConstraintSet) -> np.ndarray:
    return -np.eye(cs.dim) - sum(l * G for l, G in zip(lam, cs.operators))


def dual_objective(lam, cs: ConstraintSet, norm="operator") -> float:
    """-||pinch(R(lam))|| - lam . gamma. ``norm`` is a name from :data:`NORMS` or a callable."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (len(cs.operators),) or not np.all(np.isfinite(lam)):
        raise ValueError("lambda must be a finite vector with one entry per constraint")
    fn = NORMS[norm] if isinstance(norm, str) else norm
    R = hermitian_exp(_exponent(lam, cs))
    return -fn(pinch(R, cs.key_map)) - float(lam @ np.asarray(cs.values))


def _divided_exp(w) -> np.ndarray:
    """First divided differences of exp on the eigenvalues ``w`` (Daleckii-Krein kernel)."""
    a, b = np.meshgrid(w, w, indexing="ij")
    diff = a - b
    with np.errstate(invalid="ignore", divide="ignore"):
        F = np.where(np.abs(diff) > 1e-10, (np.exp(a) - np.exp(b)) / diff, np.exp(0.5 * (a + b)))
    return F


def dual_gradient(lam, cs: ConstraintSet) -> np.ndarray:
    """Analytic gradient of :func:`dual_objective` under the operator norm.

    Uses the Frechet derivative of exp in the eigenbasis of the exponent and the
    top eigenvector of the pinched operator (assumed non-degenerate).
    """
    lam = np.asarray(lam, dtype=float)
    M = _exponent(lam, cs)
    w, V = np.linalg.eigh(M)
    if w.max() > EXP_LIMIT:
        raise ExponentOverflow(f"exponent eigenvalue {w.max():.1f} exceeds {EXP_LIMIT}")
    R = (V * np.exp(w)) @ V.conj().T
    mu, U = np.linalg.eigh(pinch(R, cs.key_map))
    u = U[:, -1]
    W = pinch(np.outer(u, u.conj()), cs.key_map)
    Wt = V.conj().T @ W @ V
    F = _divided_exp(w)
    g = np.empty(len(lam))
    for i, G in enumerate(cs.operators):
        Gt = V.conj().T @ G @ V
        # d/dlam_i of lambda_max = Tr(W dR), with dR = V (F * (-Gt)) V^dagger
        g[i] = np.real(np.sum(Wt.T * (F * -Gt)))
    return -g - np.asarray(cs.values)


# Reduced problem ---------------------------------------------------------------

def _log_top(x, cs: ConstraintSet, with_grad: bool = True):
    """ln lambda_max(pinch(exp(-x_X E_X - x_Z E_Z))), its gradient and the Hermiticity error."""
    EX, EZ = cs.operators[1], cs.operators[2]
    M = -x[0] * EX - x[1] * EZ
    w, V = np.linalg.eigh(M)
    s = w.max()
    w = w - s  # log-domain shift keeps exp() bounded for any multipliers
    R = (V * np.exp(w)) @ V.conj().T
    P = pinch(R, cs.key_map)
    herm = float(np.max(np.abs(P - P.conj().T)))
    mu, U = np.linalg.eigh(P)
    a = mu[-1]
    val = s + math.log(a)
    if not with_grad:
        return val, None, herm
    u = U[:, -1]
    Wt = V.conj().T @ pinch(np.outer(u, u.conj()), cs.key_map) @ V
    F = _divided_exp(w)
    g = np.array([np.real(np.sum(Wt.T * (F * -(V.conj().T @ G @ V)))) / a for G in (EX, EZ)])
    return val, g, herm


def reduced_objective(x, cs: ConstraintSet) -> float:
    """Theta restricted to the optimal identity multiplier: -ln a(x) - Q (x_X + x_Z)."""
    val, _, _ = _log_top(np.asarray(x, float), cs, with_grad=False)
    return -val - cs.Q * float(np.sum(x))


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = 8
    max_iter: int = 5000
    tol: float = 1e-9
    seed: int = 0
    init_low: float = 0.0
    init_high: float = 6.0
    threads: int = 1
    armijo: float = 1e-4
    polish: bool = True


def _ascend(x, cs: ConstraintSet, cfg: OptimizerConfig):
    """Gradient ascent with Armijo backtracking and an adaptive step."""
    q = cs.Q

    def f_and_g(x):
        v, g, h = _log_top(x, cs)
        return -v - q * x.sum(), -g - q, h

    f, g, herm = f_and_g(x)
    step = 1.0
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        gg = float(g @ g)
        if gg == 0.0:
            converged = True
            break
        while True:
            xn = x + step * g
            fn, gn, hn = f_and_g(xn)
            if fn >= f + cfg.armijo * step * gg or step < 1e-14:
                break
            step *= 0.5
        df = fn - f
        x, f, g = xn, fn, gn
        herm = max(herm, hn)
        step *= 2.0
        if abs(df) < cfg.tol:
            converged = True
            break
    if cfg.polish:
        # The reduced objective has a ridge where the top eigenvalue of the
        # pinched operator changes branch; plain gradient steps zig-zag across
        # it and stall. A simplex search from the ascent end point finishes the job.
        ok = True
        for scale in (0.1, 0.01):  # one restart of the simplex guards against early collapse
            res = minimize(lambda y: -reduced_objective(y, cs), x, method="Nelder-Mead",
                           options=dict(xatol=1e-12, fatol=1e-14, maxiter=1500,
                                        initial_simplex=[x, x + [scale, 0.0], x + [0.0, scale]]))
            if -res.fun > f:
                x, f = res.x, -res.fun
            flat = float(np.ptp(res.final_simplex[1])) < cfg.tol
            ok = ok and (bool(res.success) or flat)
            it += int(res.nit)
        converged = converged and ok
    return x, f, converged, it, herm


def maximize_theta(cs: ConstraintSet, config: OptimizerConfig | None = None) -> DualSolution:
    """Multi-start maximization of the dual objective (operator norm).

    Returns the best restart. If no restart met the tolerance within
    ``max_iter`` steps a :class:`RuntimeWarning` is issued and the best value
    found is returned with ``converged=False``; any feasible point still gives
    a valid lower bound.
    """
    cfg = config or OptimizerConfig()
    if cfg.restarts < 1:
        raise ValueError("need at least one restart")

    def run(r):
        g = stream(cfg.seed, "restart", r)
        x0 = g.uniform(cfg.init_low, cfg.init_high, 2)
        return _ascend(x0, cs, cfg)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            results = list(ex.map(run, range(cfg.restarts)))
    else:
        results = [run(r) for r in range(cfg.restarts)]
    best = max(results, key=lambda r: r[1])
    x, theta, converged, iters, _ = best
    if not any(r[2] for r in results):
        warnings.warn("dual optimization hit the iteration cap; returning best bound found", RuntimeWarning)
    log_a, _, _ = _log_top(x, cs, with_grad=False)
    lam0 = log_a - 1.0  # stationary point of the identity multiplier
    h = float(entropy_d(cs.Q, cs.d))
    K = theta / math.log(2) - h
    return DualSolution(cs.Q, (float(lam0), float(x[0]), float(x[1])), float(theta), h, float(K),
                        bool(converged), int(iters), tuple(float(r[1]) for r in results),
                        float(max(r[4] for r in results)))


def keyrate_sweep(qs, config: OptimizerConfig | None = None, mubs: MubSet | None = None) -> list:
    """(Q, K_numeric, K_analytic) rows for each Q in ``qs`` (d = 4)."""
    mubs = mubs or make_mubs(4)
    rows = []
    for q in qs:
        sol = maximize_theta(build_bb84_constraints(float(q), mubs), config)
        rows.append((float(q), sol.K, key_rate_analytic(float(q), 4).R))
    return rows
