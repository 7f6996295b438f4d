import sys, os, json
import argparse
import logging
from typing import List, Optional, TextIO

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
sys.path.append(BASE_DIR)

# ---------------- LOCAL MODULES ----------------
import cl_harness
import gem_projection
import nnq_solver
import qp_core
from config import FEAS_TOL, LOG_LEVEL, MARGIN, MAX_ITERS, SEED, SOLVER, SOLVERS, TOL_KKT
from errors import GemQPError, SolverNotConverged
from nnq_solver import SolverConfig, SolverStatus

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2


# ---------------- MODELS ----------------
class ProjectRequest(BaseModel):
    model_config = ConfigDict(allow_inf_nan=False, extra="forbid")

    g: List[float]
    memory_gradients: List[List[float]] = []
    tol_kkt: Optional[float] = None
    max_iters: Optional[int] = None
    margin: Optional[float] = None
    feas_tol: Optional[float] = None

    @model_validator(mode="after")
    def check_dimensions(self):
        if not self.g:
            raise ValueError("g must be nonempty")
        for k, row in enumerate(self.memory_gradients):
            if len(row) != len(self.g):
                raise ValueError(f"dimension mismatch: memory_gradients[{k}] has length {len(row)}, g has length {len(self.g)}")
        return self


class ProjectResponse(BaseModel):
    g_tilde: List[float]
    v_star: List[float]
    violated: List[int]
    projected: bool
    kkt_residual: float
    iterations: int
    status: str


class GenericQPRequest(BaseModel):
    model_config = ConfigDict(allow_inf_nan=False, extra="forbid")

    C: List[List[float]]
    w: List[float]
    A: List[List[float]] = []
    b: List[float] = []


class NonnegQPRequest(BaseModel):
    model_config = ConfigDict(allow_inf_nan=False, extra="forbid")

    M: List[List[float]]
    q: List[float]


# ---------------- HELPERS ----------------
def read_input(path: Optional[str], stdin: TextIO) -> str:
    if path:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    return stdin.read()


def emit_json(payload: dict, stdout: TextIO):
    # json.dumps writes each double with its shortest round-trip repr
    stdout.write(json.dumps(payload, indent=2) + "\n")


def solver_config(args, request=None) -> SolverConfig:
    """Explicit flag > request field > config default."""

    def pick(flag, field, default):
        if flag is not None:
            return flag
        if request is not None and getattr(request, field, None) is not None:
            return getattr(request, field)
        return default

    return SolverConfig(
        tol_kkt=pick(args.tol_kkt, "tol_kkt", TOL_KKT),
        max_iters=pick(args.max_iters, "max_iters", MAX_ITERS),
    )


def projection_response(result: gem_projection.ProjectionResult) -> ProjectResponse:
    return ProjectResponse(
        g_tilde=result.g_tilde.tolist(),
        v_star=result.v_star.tolist(),
        violated=list(result.violated),
        projected=result.projected,
        kkt_residual=result.kkt_residual,
        iterations=result.iterations,
        status=SolverStatus(result.status).value,
    )


# ---------------- COMMANDS ----------------
def cmd_project(args, stdin: TextIO, stdout: TextIO) -> int:
    request = ProjectRequest.model_validate_json(read_input(args.input, stdin))
    config = solver_config(args, request)
    feas_tol = args.feas_tol if args.feas_tol is not None else (request.feas_tol if request.feas_tol is not None else FEAS_TOL)
    margin = args.margin if args.margin is not None else (request.margin if request.margin is not None else MARGIN)

    gs = gem_projection.GradientSet(request.g, request.memory_gradients)
    try:
        result = gem_projection.project(gs, config=config, feas_tol=feas_tol, margin=margin, solver=args.solver)
    except SolverNotConverged as e:
        logger.error(f"Projection did not converge: {e}")
        emit_json(projection_response(e.partial).model_dump(), stdout)
        return EXIT_NOT_CONVERGED

    emit_json(projection_response(result).model_dump(), stdout)
    return EXIT_OK


def _certificate_report(cert: qp_core.Certificate) -> dict:
    return {
        "z_star": cert.z_star.tolist(),
        "v_star": cert.v_star.tolist(),
        "primal_objective": cert.primal_objective,
        "dual_objective": cert.dual_objective,
        "duality_gap": cert.duality_gap,
        "kkt_residual": cert.kkt_residual,
        "iterations": cert.iterations,
        "status": SolverStatus(cert.status).value,
    }


def cmd_solve(args, stdin: TextIO, stdout: TextIO) -> int:
    document = json.loads(read_input(args.input, stdin))
    if not isinstance(document, dict):
        raise ValueError("expected a JSON object with keys C, w, A, b or M, q")
    config = solver_config(args)
    if args.solver not in ("pg", "bruteforce"):
        raise ValueError("solve supports --solver pg or bruteforce")

    if "C" in document:
        request = GenericQPRequest.model_validate(document)
        qp = qp_core.PrimalQP(request.C, request.w, request.A, request.b)
        report = {}
        if args.dualize:
            dual = qp_core.form_dual(qp)
            report.update({"M": dual.M.tolist(), "q": dual.q.tolist(), "constant": dual.constant})
        if args.certify or not args.dualize:
            try:
                cert = qp_core.certify(qp, config, solver=args.solver)
            except SolverNotConverged as e:
                logger.error(f"Dual solve did not converge: {e}")
                report.update(_certificate_report(e.partial))
                emit_json(report, stdout)
                return EXIT_NOT_CONVERGED
            report.update(_certificate_report(cert))
        emit_json(report, stdout)
        return EXIT_OK

    if "M" in document:
        if args.dualize:
            raise ValueError("--dualize applies to generic QPs {C, w, A, b} only")
        request = NonnegQPRequest.model_validate(document)
        problem = nnq_solver.NonnegQP(request.M, request.q)
        if args.solver == "bruteforce":
            result = nnq_solver.solve_active_set_bruteforce(problem)
        else:
            result = nnq_solver.solve_pg(problem, config)
        emit_json({
            "v_star": result.v_star.tolist(),
            "objective": result.objective,
            "kkt_residual": result.kkt_residual,
            "iterations": result.iterations,
            "status": result.status.value,
        }, stdout)
        return EXIT_OK if result.converged else EXIT_NOT_CONVERGED

    raise ValueError("expected a JSON object with keys C, w, A, b or M, q")


def cmd_demo(args, stdin: TextIO, stdout: TextIO) -> int:
    tasks = cl_harness.make_synthetic_tasks(
        num_tasks=args.tasks,
        dim=args.dim,
        examples_per_task=args.examples_per_task,
        conflict=args.conflict,
        seed=args.seed,
        noise=args.noise,
    )
    config = cl_harness.ExperimentConfig(
        steps_per_task=args.steps,
        lr=args.lr,
        memory_capacity=args.memory,
        batch_size=args.batch,
        seed=args.seed,
        solver=solver_config(args),
        solver_name=args.solver,
        feas_tol=args.feas_tol if args.feas_tol is not None else FEAS_TOL,
        margin=args.margin if args.margin is not None else MARGIN,
    )
    metrics = cl_harness.run_experiment(tasks, cl_harness.Strategy(args.strategy), config)
    cl_harness.write_csv(metrics, stdout)
    return EXIT_OK


# ---------------- ARGUMENTS ----------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol-kkt", type=float, default=None, help=f"KKT residual tolerance (default {TOL_KKT:g})")
    common.add_argument("--max-iters", type=int, default=None, help=f"solver iteration cap (default {MAX_ITERS})")
    common.add_argument("--feas-tol", type=float, default=None, help=f"relative feasibility slack (default {FEAS_TOL:g})")
    common.add_argument("--margin", type=float, default=None, help=f"constraint margin gamma >= 0 (default {MARGIN:g})")
    common.add_argument("--solver", choices=SOLVERS, default=SOLVER)
    common.add_argument("--seed", type=int, default=SEED)
    common.add_argument("--log-level", default=LOG_LEVEL)

    parser = argparse.ArgumentParser(prog="gemqp", description="GEM gradient projection and small dense QP duality toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    project = sub.add_parser("project", parents=[common], help="project a gradient against memory gradients")
    project.add_argument("--input", help="request JSON file (default: stdin)")
    project.set_defaults(handler=cmd_project)

    solve = sub.add_parser("solve", parents=[common], help="dualize / solve / certify a QP")
    solve.add_argument("--input", help="problem JSON file (default: stdin)")
    solve.add_argument("--dualize", action="store_true", help="print the dual QP (M, q, constant)")
    solve.add_argument("--certify", action="store_true", help="solve the dual and certify the primal/dual pair")
    solve.set_defaults(handler=cmd_solve)

    demo = sub.add_parser("demo", parents=[common], help="run the continual-learning demo, CSV on stdout")
    demo.add_argument("--tasks", type=int, default=2)
    demo.add_argument("--dim", type=int, default=4)
    demo.add_argument("--steps", type=int, default=200, help="steps per task")
    demo.add_argument("--lr", type=float, default=1e-3)
    demo.add_argument("--memory", type=int, default=50, help="memory capacity per task")
    demo.add_argument("--batch", type=int, default=10)
    demo.add_argument("--conflict", type=float, default=1.0, help="pairwise task cosine is -conflict")
    demo.add_argument("--examples-per-task", type=int, default=100)
    demo.add_argument("--noise", type=float, default=cl_harness.NOISE_STD)
    demo.add_argument("--strategy", choices=[s.value for s in cl_harness.Strategy], default="gem")
    demo.set_defaults(handler=cmd_demo)
    return parser


# ---------------- RUN ----------------
def main(argv: Optional[List[str]] = None, stdin: TextIO = None, stdout: TextIO = None, stderr: TextIO = None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse already printed usage on stderr
        return EXIT_OK if e.code == 0 else EXIT_INPUT

    logging.basicConfig(level=args.log_level.upper(), stream=stderr)

    try:
        return args.handler(args, stdin, stdout)
    except ValidationError as e:
        stderr.write(f"invalid input: {e}\n")
    except json.JSONDecodeError as e:
        stderr.write(f"invalid JSON: {e}\n")
    except GemQPError as e:
        stderr.write(f"error: {e}\n")
        return e.exit_code
    except (ValueError, OSError) as e:
        stderr.write(f"error: {e}\n")
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
