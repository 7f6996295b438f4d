"""
GEM Gradient Projection Module
Keeps a proposed update g from increasing the loss of earlier tasks: if any
<g, g_k> < 0, replace g by the closest g_tilde with <g_tilde, g_k> >= 0 for all k,
computed through the small dual QP over one multiplier per earlier task.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

import nnq_solver
from config import FEAS_TOL, MARGIN, SOLVER
from errors import (
    ContractViolation,
    InputError,
    InternalConsistencyError,
    SolverNotConverged,
)
from nnq_solver import NonnegQP, SolverConfig, SolverResult, SolverStatus

logger = logging.getLogger(__name__)


# ---------------- TYPES ----------------
@dataclass(frozen=True)
class GradientSet:
    """Proposed update g and one memory gradient g_k per earlier task, in task order."""

    g: np.ndarray
    memory_grads: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        g = np.array(self.g, dtype=float)
        if g.ndim != 1 or g.shape[0] < 1:
            raise ContractViolation(f"g must be a nonempty vector, got shape {g.shape}")
        grads = []
        for k, g_k in enumerate(self.memory_grads):
            g_k = np.array(g_k, dtype=float)
            if g_k.shape != g.shape:
                raise ContractViolation(
                    f"dimension mismatch: memory gradient {k} has shape {g_k.shape}, g has shape {g.shape}"
                )
            grads.append(g_k)
        if not np.all(np.isfinite(g)) or not all(np.all(np.isfinite(g_k)) for g_k in grads):
            raise InputError("gradients must contain only finite values")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "memory_grads", grads)

    @property
    def p(self) -> int:
        return self.g.shape[0]

    @property
    def num_constraints(self) -> int:
        return len(self.memory_grads)


@dataclass
class ProjectionResult:
    g_tilde: np.ndarray
    v_star: np.ndarray
    violated: List[int]
    kkt_residual: float
    projected: bool
    iterations: int = 0
    status: SolverStatus = SolverStatus.CONVERGED


# ---------------- CONSTRAINTS ----------------
def check_constraints(gs: GradientSet, tol: float = 0.0) -> List[int]:
    """
    Indices k (ascending) with <g, g_k> < -tol * ||g|| * ||g_k||.

    tol = 0 is the exact sign test; an inner product of exactly 0 passes.
    """
    if tol < 0:
        raise ContractViolation("violation tolerance must be nonnegative")
    g_norm = float(np.linalg.norm(gs.g))
    violated = []
    for k, g_k in enumerate(gs.memory_grads):
        if float(gs.g @ g_k) < -tol * g_norm * float(np.linalg.norm(g_k)):
            violated.append(k)
    return violated


def build_constraint_matrix(memory_grads: Sequence) -> np.ndarray:
    """G = -(g_1, ..., g_{t-1}) as rows, so Gz <= 0 iff <z, g_k> >= 0 for every k."""
    if len(memory_grads) == 0:
        raise ContractViolation("constraint matrix needs at least one memory gradient")
    return -np.array(memory_grads, dtype=float)


def build_dual(g, G, margin=0.0) -> NonnegQP:
    """
    Dual of the projection QP: 1/2 v^T G G^T v - g^T G^T v over v >= 0,
    i.e. M = G G^T and q = -G g (shifted by -margin when b = -margin * 1).
    margin may also be one value per row of G.
    """
    g = np.asarray(g, dtype=float)
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[1] != g.shape[0]:
        raise ContractViolation(f"dimension mismatch: G is {G.shape}, g has length {g.shape[0]}")
    M = G @ G.T
    M = 0.5 * (M + M.T)
    q = -(G @ g) - margin
    return NonnegQP(M, q)


def recover(g, G, v_star) -> np.ndarray:
    """g_tilde = -G^T v* + g."""
    g = np.asarray(g, dtype=float)
    G = np.asarray(G, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    if G.shape != (v_star.shape[0], g.shape[0]):
        raise ContractViolation(f"dimension mismatch: G is {G.shape}, v* has {v_star.shape[0]}, g has {g.shape[0]}")
    if np.any(v_star < 0):
        raise ContractViolation("v* must be nonnegative")
    return g - G.T @ v_star


def _solve_dual(problem: NonnegQP, g, G, config: SolverConfig, solver: str, margin: float) -> SolverResult:
    if solver == "pg":
        return nnq_solver.solve_pg(problem, config)
    if solver == "bruteforce":
        return nnq_solver.solve_active_set_bruteforce(problem)
    if solver == "nnls":
        if margin != 0:
            raise ContractViolation("the NNLS solver only handles the margin-free problem")
        return nnq_solver.solve_nnls(G, g)
    raise ContractViolation(f"unknown solver '{solver}'")


# ---------------- PIPELINE ----------------
def project(gs: GradientSet, config: Optional[SolverConfig] = None, feas_tol: float = FEAS_TOL,
            tol: float = 0.0, margin: float = MARGIN, solver: str = SOLVER) -> ProjectionResult:
    """
    Project g onto {z : <z, g_k> >= 0 for all k} when any constraint is violated.

    The dual is built from g / ||g|| and g_k / ||g_k||, which leaves the
    feasible cone unchanged, and v_star is mapped back afterwards, so
    tol_kkt and feas_tol behave the same at every gradient scale.
    kkt_residual is the residual of that normalized dual.

    Args:
        gs: proposed gradient and memory gradients
        config: dual solver settings
        feas_tol: relative slack for the post-recovery feasibility check
        tol: relative slack of the violation test (raised to config.tol_kkt)
        margin: gamma >= 0, asks for <z, g_k> >= gamma instead of >= 0
        solver: "pg", "bruteforce" or "nnls"

    Returns:
        ProjectionResult. When nothing is violated, g_tilde is g unchanged
        and the solver is never called.

    Raises:
        SolverNotConverged: carrying the partial ProjectionResult
        InternalConsistencyError: g_tilde fails the feasibility check
    """
    if config is None:
        config = SolverConfig()
    if margin < 0:
        raise ContractViolation("margin must be nonnegative")

    t_minus_1 = gs.num_constraints
    # v = 0 meets the normalized dual's stopping test exactly when this finds nothing
    violated = check_constraints(gs, tol=max(tol, config.tol_kkt))
    if not violated:
        return ProjectionResult(
            g_tilde=gs.g.copy(),
            v_star=np.zeros(t_minus_1),
            violated=[],
            kkt_residual=0.0,
            projected=False,
        )

    if margin > 0 and any(not np.any(g_k) for g_k in gs.memory_grads):
        raise ContractViolation("a positive margin cannot be met against a zero memory gradient")

    # All constraints enter G, not only the violated ones
    G = build_constraint_matrix(gs.memory_grads)
    g_norm = float(np.linalg.norm(gs.g))
    row_norms = np.linalg.norm(G, axis=1)
    inverse_norms = np.divide(1.0, row_norms, out=np.zeros_like(row_norms), where=row_norms > 0)

    unit_g = gs.g / g_norm
    unit_G = G * inverse_norms[:, None]
    problem = build_dual(unit_g, unit_G, margin * inverse_norms / g_norm)
    solution = _solve_dual(problem, unit_g, unit_G, config, solver, margin)

    v_star = g_norm * inverse_norms * solution.v_star
    g_tilde = recover(gs.g, G, v_star)
    # Components cancelled to within solver accuracy are exact zeros
    cancellation = config.tol_kkt * (np.abs(gs.g) + np.abs(G.T) @ v_star)
    g_tilde[np.abs(g_tilde) <= cancellation] = 0.0

    result = ProjectionResult(
        g_tilde=g_tilde,
        v_star=v_star,
        violated=violated,
        kkt_residual=solution.kkt_residual,
        projected=True,
        iterations=solution.iterations,
        status=solution.status,
    )
    logger.debug(f"Projected against {len(violated)}/{t_minus_1} violated constraints in {solution.iterations} iterations")

    if solution.status != SolverStatus.CONVERGED:
        raise SolverNotConverged(
            f"dual solve stopped after {solution.iterations} iterations (KKT residual {solution.kkt_residual:.3e})",
            partial=result,
        )

    for k, g_k in enumerate(gs.memory_grads):
        inner = float(g_tilde @ g_k)
        if inner < -feas_tol * g_norm * row_norms[k]:
            raise InternalConsistencyError(
                f"projected gradient violates constraint {k}: <g_tilde, g_k> = {inner!r}; check tol_kkt against feas_tol"
            )
    return result
