"""
Nonnegative Quadratic Program Solver
Solves  min_v 1/2 v^T M v + q^T v  subject to  v >= 0
with projected gradient (accelerated, monotone) and an exhaustive active-set oracle.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import nnls

from config import MAX_ITERS, POLISH, TOL_KKT
from errors import (
    ContractViolation,
    InputError,
    InternalConsistencyError,
    SizeError,
    SolverNotConverged,
)

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
BRUTEFORCE_MAX_M = 16
# Oracle acceptance slacks (primal v_S; dual gradient outside the support, scaled by 1 + max entry)
ORACLE_PRIMAL_SLACK = 1e-12
ORACLE_DUAL_SLACK = 1e-9
POLISH_INTERVAL = 5


# ---------------- TYPES ----------------
class SolverStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS_REACHED = "max_iters_reached"
    # ridge solve converged but v is not a KKT point of the unregularized problem
    RIDGE_UNCERTIFIED = "ridge_uncertified"


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_iters: int = Field(default=MAX_ITERS, ge=1)
    tol_kkt: float = Field(default=TOL_KKT, gt=0)
    ridge: float = Field(default=0.0, ge=0)
    acceleration: bool = True
    polish: bool = POLISH


@dataclass(frozen=True)
class NonnegQP:
    M: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        q = np.array(self.q, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ContractViolation(f"M must be square, got shape {M.shape}")
        if M.shape[0] < 1:
            raise ContractViolation("NonnegQP needs at least one variable")
        if q.shape != (M.shape[0],):
            raise ContractViolation(f"dimension mismatch: q has shape {q.shape}, M is {M.shape}")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(q))):
            raise InputError("M and q must contain only finite values")

        asymmetry = float(np.max(np.abs(M - M.T)))
        if asymmetry > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(M)))):
            raise ContractViolation(f"M is not symmetric (max |M - M^T| = {asymmetry:.3e})")
        M = 0.5 * (M + M.T)

        M.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "q", q)

    @property
    def m(self) -> int:
        return self.q.shape[0]

    def objective(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(0.5 * v @ (self.M @ v) + self.q @ v)

    def gradient(self, v) -> np.ndarray:
        return self.M @ v + self.q

    def regularized(self, ridge: float) -> "NonnegQP":
        if ridge == 0:
            return self
        return NonnegQP(self.M + ridge * np.eye(self.m), self.q)


@dataclass
class SolverResult:
    v_star: np.ndarray
    iterations: int
    kkt_residual: float
    status: SolverStatus
    objective: float
    history: List[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == SolverStatus.CONVERGED


# ---------------- CERTIFICATION ----------------
def kkt_residual(problem: NonnegQP, v) -> float:
    """
    ||min(v, Mv + q)||_inf, elementwise min.

    Zero exactly when v is a KKT point: stationary on the support,
    nonnegative gradient on the bound, complementary everywhere.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (problem.m,):
        raise ContractViolation(f"dimension mismatch: v has shape {v.shape}, expected ({problem.m},)")
    negative = np.flatnonzero(v < 0)
    if negative.size:
        i = int(negative[0])
        raise ContractViolation(f"v[{i}] = {v[i]!r} is negative")
    return float(np.max(np.abs(np.minimum(v, problem.gradient(v)))))


# ---------------- PROJECTED GRADIENT ----------------
def _polish(problem: NonnegQP, v: np.ndarray, tol: float):
    """Solve the equality system on the support of v; None unless the result is KKT."""
    support = np.flatnonzero(v > 0)
    if support.size == 0:
        return None
    M_ss = problem.M[np.ix_(support, support)]
    v_s = np.linalg.lstsq(M_ss, -problem.q[support], rcond=None)[0]
    if np.any(v_s < 0):
        return None
    candidate = np.zeros(problem.m)
    candidate[support] = v_s
    if kkt_residual(problem, candidate) > tol:
        return None
    return candidate


def solve_pg(problem: NonnegQP, config: SolverConfig = None) -> SolverResult:
    """
    Projected gradient with fixed step 1/L, L = trace(M), starting from v = 0.

    With acceleration on, runs Nesterov momentum and falls back to a plain
    projected step from the last accepted iterate whenever the accelerated
    candidate would raise the objective, so the recorded objective never
    increases.

    Args:
        problem: the nonnegative QP (M, q)
        config: iteration cap, KKT tolerance, ridge, acceleration, polishing

    With ridge > 0 the iteration runs on M + ridge * I, but kkt_residual,
    objective and status describe v against the problem as passed: a
    regularized answer that is not KKT for it comes back ridge_uncertified.

    Returns:
        SolverResult; max_iters_reached and ridge_uncertified are reported, not raised
    """
    if config is None:
        config = SolverConfig()
    if config.ridge > 0:
        logger.warning(f"Solving with ridge {config.ridge:g} added to M")
    work = problem.regularized(config.ridge)
    M, q = work.M, work.q

    lipschitz = float(np.trace(M))
    step = 1.0 / lipschitz if lipschitz > 0 else 1.0

    v = np.zeros(work.m)
    y = v.copy()
    t = 1.0
    f_v = work.objective(v)
    history = [f_v]

    status = SolverStatus.MAX_ITERS_REACHED
    iterations = 0
    residual = kkt_residual(work, v)
    if residual <= config.tol_kkt:
        status = SolverStatus.CONVERGED

    while status != SolverStatus.CONVERGED and iterations < config.max_iters:
        iterations += 1

        candidate = np.maximum(y - step * (M @ y + q), 0.0)
        f_candidate = work.objective(candidate)
        if config.acceleration and f_candidate > f_v:
            # Momentum overshot: restart from the last accepted iterate
            t = 1.0
            candidate = np.maximum(v - step * (M @ v + q), 0.0)
            f_candidate = work.objective(candidate)

        if config.acceleration:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = candidate + ((t - 1.0) / t_next) * (candidate - v)
            t = t_next
        else:
            y = candidate
        v, f_v = candidate, f_candidate
        history.append(f_v)

        if config.polish and iterations % POLISH_INTERVAL == 0:
            polished = _polish(work, v, config.tol_kkt)
            if polished is not None:
                f_polished = work.objective(polished)
                if f_polished <= f_v:
                    logger.debug(f"Polish accepted at iteration {iterations}")
                    v, f_v = polished, f_polished
                    y = v.copy()
                    history.append(f_v)

        residual = kkt_residual(work, v)
        if residual <= config.tol_kkt:
            status = SolverStatus.CONVERGED

    if config.polish and status == SolverStatus.CONVERGED:
        # Settle the final support exactly when that does not cost objective
        polished = _polish(work, v, residual)
        if polished is not None and work.objective(polished) <= f_v:
            v, f_v = polished, work.objective(polished)
            residual = kkt_residual(work, v)
            history.append(f_v)

    if work is not problem:
        # Report against the caller's problem; history stays on the regularized one
        residual = kkt_residual(problem, v)
        f_v = problem.objective(v)
        if residual <= config.tol_kkt:
            status = SolverStatus.CONVERGED
        elif status == SolverStatus.CONVERGED:
            status = SolverStatus.RIDGE_UNCERTIFIED
            logger.warning(f"Ridge solution is not a KKT point of the original problem (KKT residual {residual:.3e})")

    if status == SolverStatus.MAX_ITERS_REACHED:
        logger.warning(f"Projected gradient stopped after {iterations} iterations (KKT residual {residual:.3e})")
    elif status == SolverStatus.CONVERGED:
        logger.debug(f"Projected gradient converged in {iterations} iterations")

    return SolverResult(
        v_star=v,
        iterations=iterations,
        kkt_residual=residual,
        status=status,
        objective=f_v,
        history=history,
    )


# ---------------- ACTIVE-SET ORACLE ----------------
def solve_active_set_bruteforce(problem: NonnegQP) -> SolverResult:
    """
    Exact oracle: enumerate every support S, solve M_SS v_S = -q_S by least
    squares and keep the feasible candidate with the smallest objective.

    A candidate is accepted when v_S >= -1e-12 and the gradient outside S is
    >= -1e-9 * (1 + max(max|M|, max|q|)), i.e. the outside
    slack scales with the entries of (M, q).
    """
    m = problem.m
    if m > BRUTEFORCE_MAX_M:
        raise SizeError(f"brute-force oracle enumerates 2^m supports; m = {m} exceeds {BRUTEFORCE_MAX_M}")

    M, q = problem.M, problem.q
    dual_slack = ORACLE_DUAL_SLACK * (1.0 + max(float(np.max(np.abs(M))), float(np.max(np.abs(q)))))

    best = None
    best_objective = math.inf
    examined = 0
    for size in range(m + 1):
        for support in itertools.combinations(range(m), size):
            examined += 1
            v = np.zeros(m)
            if size:
                S = list(support)
                v_s = np.linalg.lstsq(M[np.ix_(S, S)], -q[S], rcond=None)[0]
                if np.any(v_s < -ORACLE_PRIMAL_SLACK):
                    continue
                v[S] = np.maximum(v_s, 0.0)
            grad = M @ v + q
            outside = np.ones(m, dtype=bool)
            outside[list(support)] = False
            if np.any(grad[outside] < -dual_slack):
                continue
            objective = problem.objective(v)
            if objective < best_objective:
                best, best_objective = v, objective

    if best is None:
        raise InternalConsistencyError("active-set enumeration accepted no candidate; M is not PSD or the oracle is broken")

    logger.debug(f"Brute-force oracle examined {examined} supports")
    return SolverResult(
        v_star=best,
        iterations=examined,
        kkt_residual=kkt_residual(problem, best),
        status=SolverStatus.CONVERGED,
        objective=best_objective,
        history=[best_objective],
    )


# ---------------- NNLS ----------------
def solve_nnls(G, g) -> SolverResult:
    """
    Solve the GEM dual through its least-squares form
    min_{v >= 0} ||G^T v - g||_2 with Lawson-Hanson (scipy).

    The returned objective is the dual objective 1/2 v^T G G^T v - g^T G^T v.
    """
    G = np.asarray(G, dtype=float)
    g = np.asarray(g, dtype=float)
    if G.ndim != 2 or G.shape[1] != g.shape[0]:
        raise ContractViolation(f"dimension mismatch: G is {G.shape}, g has length {g.shape[0]}")

    problem = NonnegQP(G @ G.T, -(G @ g))
    try:
        v, _ = nnls(G.T, g)
    except RuntimeError as e:
        raise SolverNotConverged(f"NNLS did not converge: {e}")

    return SolverResult(
        v_star=v,
        iterations=0,
        kkt_residual=kkt_residual(problem, v),
        status=SolverStatus.CONVERGED,
        objective=problem.objective(v),
        history=[problem.objective(v)],
    )
