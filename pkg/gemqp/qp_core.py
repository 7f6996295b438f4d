"""
Generic QP Primal/Dual Module
Primal  min_z 1/2 z^T C z + w^T z  s.t.  Az <= b,  its Lagrangian, the
stationarity map, the dual QP over v >= 0, and duality-gap certification.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

import nnq_solver
from config import FEAS_TOL
from errors import (
    CertificatePreconditionError,
    ContractViolation,
    InputError,
    NotPositiveDefinite,
    SolverNotConverged,
)
from nnq_solver import NonnegQP, SolverConfig, SolverStatus

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12


# ---------------- TYPES ----------------
class PrimalQP:
    """
    Inequality-constrained QP with a positive definite quadratic term.

    C is symmetrized on construction and factored once; every C^-1 x
    product afterwards goes through the stored factor. Instances are
    read-only, so one PrimalQP can be shared between threads.
    """

    def __init__(self, C, w, A=None, b=None):
        C = np.array(C, dtype=float)
        w = np.array(w, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] < 1:
            raise ContractViolation(f"C must be a nonempty square matrix, got shape {C.shape}")
        p = C.shape[0]
        if w.shape != (p,):
            raise ContractViolation(f"dimension mismatch: w has shape {w.shape}, expected ({p},)")

        if A is None or len(A) == 0:
            A = np.zeros((0, p))
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[1] != p:
            raise ContractViolation(f"dimension mismatch: A has shape {A.shape}, expected (m, {p})")
        m = A.shape[0]
        b = np.zeros(0) if b is None else np.array(b, dtype=float).reshape(-1)
        if b.shape != (m,):
            raise ContractViolation(f"dimension mismatch: b has shape {b.shape}, expected ({m},)")

        for name, arr in (("C", C), ("w", w), ("A", A), ("b", b)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contains non-finite values")

        asymmetry = float(np.max(np.abs(C - C.T)))
        if asymmetry > SYMMETRY_TOL:
            raise ContractViolation(f"C is not symmetric (max |C - C^T| = {asymmetry:.3e})")
        C = 0.5 * (C + C.T)

        try:
            self._factor = cho_factor(C, lower=True, check_finite=False)
        except LinAlgError as e:
            raise NotPositiveDefinite(str(e))
        # Square-root-free (LDL^T) pivots are the squared Cholesky diagonal
        pivots = np.diag(self._factor[0]) ** 2
        if not np.all(pivots > 0):
            raise NotPositiveDefinite(f"pivot {int(np.argmin(pivots))} is not positive")

        for arr in (C, w, A, b, pivots, self._factor[0]):
            arr.setflags(write=False)
        self.C, self.w, self.A, self.b = C, w, A, b
        self.pivots = pivots

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def solve(self, rhs) -> np.ndarray:
        """C^-1 rhs via the stored factorization."""
        return cho_solve(self._factor, rhs, check_finite=False)

    def __repr__(self):
        return f"PrimalQP(p={self.p}, m={self.m})"


@dataclass(frozen=True)
class DualQP:
    M: np.ndarray
    q: np.ndarray
    constant: float

    @property
    def m(self) -> int:
        return self.q.shape[0]

    def objective(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(0.5 * v @ (self.M @ v) + self.q @ v)

    def as_nonneg(self) -> NonnegQP:
        return NonnegQP(self.M, self.q)


@dataclass
class Certificate:
    z_star: np.ndarray
    v_star: np.ndarray
    primal_objective: float
    dual_objective: float
    duality_gap: float
    kkt_residual: float
    iterations: int
    status: SolverStatus


# ---------------- HELPERS ----------------
def _vector(x, length: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (length,):
        raise ContractViolation(f"dimension mismatch: {name} has shape {x.shape}, expected ({length},)")
    return x


# ---------------- PRIMAL / LAGRANGIAN ----------------
def primal_objective(qp: PrimalQP, z) -> float:
    z = _vector(z, qp.p, "z")
    return float(0.5 * z @ (qp.C @ z) + qp.w @ z)


def lagrangian(qp: PrimalQP, z, v) -> float:
    """L(z, v) = 1/2 z^T C z + w^T z + v^T (Az - b)."""
    z = _vector(z, qp.p, "z")
    v = _vector(v, qp.m, "v")
    return primal_objective(qp, z) + float(v @ (qp.A @ z - qp.b))


def stationary_point(qp: PrimalQP, v) -> np.ndarray:
    """
    Minimizer of the Lagrangian over z for fixed v: z* = -C^-1 (A^T v + w).

    Defined for every v, including negative entries.
    """
    v = _vector(v, qp.m, "v")
    return -qp.solve(qp.A.T @ v + qp.w)


# ---------------- DUAL ----------------
def form_dual(qp: PrimalQP) -> DualQP:
    """
    Dual QP over v >= 0:  M = A C^-1 A^T,  q = A C^-1 w + b,
    plus the constant 1/2 w^T C^-1 w the dual function carries.
    """
    C_inv_At = qp.solve(qp.A.T) if qp.m else np.zeros((qp.p, 0))
    M = qp.A @ C_inv_At
    M = 0.5 * (M + M.T)
    C_inv_w = qp.solve(qp.w)
    q = qp.A @ C_inv_w + qp.b
    constant = 0.5 * float(qp.w @ C_inv_w)
    return DualQP(M=M, q=q, constant=constant)


def dual_function_value(qp: PrimalQP, v) -> float:
    """g(v) = inf_z L(z, v) = -(1/2 v^T M v + q^T v) - 1/2 w^T C^-1 w."""
    v = _vector(v, qp.m, "v")
    dual = form_dual(qp)
    return -dual.objective(v) - dual.constant


def duality_gap(qp: PrimalQP, z, v, feas_tol: float = FEAS_TOL) -> float:
    """
    Primal objective minus dual function value for a feasible pair.

    Args:
        qp: the primal problem
        z: primal point with Az <= b + feas_tol
        v: dual point with v >= 0
        feas_tol: absolute slack on the primal constraints

    Returns:
        The gap; nonnegative up to round-off by weak duality
    """
    z = _vector(z, qp.p, "z")
    v = _vector(v, qp.m, "v")
    negative = np.flatnonzero(v < 0)
    if negative.size:
        i = int(negative[0])
        raise CertificatePreconditionError("dual", i, float(v[i]))
    slack = qp.A @ z - qp.b
    infeasible = np.flatnonzero(slack > feas_tol)
    if infeasible.size:
        i = int(infeasible[0])
        raise CertificatePreconditionError("primal", i, float(slack[i]))
    return primal_objective(qp, z) - dual_function_value(qp, v)


# ---------------- CERTIFICATION PIPELINE ----------------
def certify(qp: PrimalQP, config: Optional[SolverConfig] = None, solver: str = "pg",
            feas_tol: float = FEAS_TOL) -> Certificate:
    """Solve the dual, recover z* from the stationarity map and certify the pair."""
    if config is None:
        config = SolverConfig()
    dual = form_dual(qp)

    if qp.m == 0:
        v_star = np.zeros(0)
        residual, iterations, status = 0.0, 0, SolverStatus.CONVERGED
    else:
        problem = dual.as_nonneg()
        if solver == "bruteforce":
            result = nnq_solver.solve_active_set_bruteforce(problem)
        elif solver == "pg":
            result = nnq_solver.solve_pg(problem, config)
        else:
            raise ContractViolation(f"solver '{solver}' cannot solve a generic QP dual (use pg or bruteforce)")
        v_star, residual = result.v_star, result.kkt_residual
        iterations, status = result.iterations, result.status

    z_star = stationary_point(qp, v_star)
    primal = primal_objective(qp, z_star)
    dual_value = -dual.objective(v_star) - dual.constant
    certificate = Certificate(
        z_star=z_star,
        v_star=v_star,
        primal_objective=primal,
        dual_objective=dual_value,
        duality_gap=primal - dual_value,
        kkt_residual=residual,
        iterations=iterations,
        status=status,
    )

    if status != SolverStatus.CONVERGED:
        raise SolverNotConverged(f"dual solve stopped after {iterations} iterations", partial=certificate)

    # Feasibility of z* is the precondition of the certificate
    certificate.duality_gap = duality_gap(qp, z_star, v_star, feas_tol)
    logger.debug(f"Certified {qp!r}: gap {certificate.duality_gap:.3e}, KKT {residual:.3e}")
    return certificate
