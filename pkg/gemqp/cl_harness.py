"""
Continual-Learning Harness
Synthetic linear-regression task streams, per-task episodic memories and
training loops that compare GEM-projected updates with plain SGD.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, TextIO, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

import gem_projection
from config import FEAS_TOL, MARGIN, SEED, SOLVER
from errors import ContractViolation, ParameterError
from gem_projection import GradientSet
from nnq_solver import SolverConfig

logger = logging.getLogger(__name__)

NOISE_STD = 0.01
CSV_HEADER = "step,task,loss,violations"


# ---------------- DATA ----------------
@dataclass(frozen=True)
class Example:
    x: np.ndarray
    y: float
    task_id: int

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        x.setflags(write=False)
        if self.task_id < 1:
            raise ContractViolation(f"task_id must be >= 1, got {self.task_id}")
        if not (np.all(np.isfinite(x)) and np.isfinite(self.y)):
            raise ContractViolation("example features and target must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True)
class Task:
    task_id: int
    weights: np.ndarray
    examples: List[Example]

    def evaluate(self, model: "LinearModel") -> float:
        return model.loss(self.examples)


class EpisodicMemory:
    """One ring buffer of the most recent examples per task."""

    def __init__(self, capacity_per_task: int):
        if capacity_per_task < 1:
            raise ContractViolation("memory capacity must be at least 1")
        self.capacity_per_task = capacity_per_task
        self.buffers: Dict[int, Deque[Example]] = {}

    def add(self, example: Example):
        buffer = self.buffers.get(example.task_id)
        if buffer is None:
            buffer = deque(maxlen=self.capacity_per_task)
            self.buffers[example.task_id] = buffer
        buffer.append(example)

    def extend(self, examples):
        for example in examples:
            self.add(example)

    def examples(self, task_id: int) -> List[Example]:
        return list(self.buffers.get(task_id, ()))

    def task_ids(self) -> List[int]:
        return sorted(self.buffers)

    def __len__(self):
        return sum(len(buffer) for buffer in self.buffers.values())


@dataclass(frozen=True)
class LinearModel:
    """f_theta(x) = theta^T x with squared error 1/2 (theta^T x - y)^2."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise ContractViolation("model parameters must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, dim: int) -> "LinearModel":
        return cls(np.zeros(dim))

    def loss(self, examples: List[Example]) -> float:
        if not examples:
            raise ContractViolation("cannot evaluate a loss on an empty example set")
        X, y = _stack(examples)
        residual = X @ self.theta - y
        return float(0.5 * np.mean(residual * residual))


@dataclass
class StepDiagnostics:
    violations: int
    projected: bool
    kkt_residual: float
    g: np.ndarray
    g_tilde: np.ndarray
    memory_grads: List[np.ndarray] = field(default_factory=list)

    @property
    def directional_derivatives(self) -> List[float]:
        """<g_k, -g_tilde> per earlier task: first-order change of its memory loss."""
        return [float(-(g_k @ self.g_tilde)) for g_k in self.memory_grads]


@dataclass
class RunMetrics:
    per_step_task_losses: np.ndarray
    violation_counts: List[int]
    projection_counts: int
    steps: List[StepDiagnostics] = field(default_factory=list)

    @property
    def num_steps(self) -> int:
        return self.per_step_task_losses.shape[0]

    @property
    def num_tasks(self) -> int:
        return self.per_step_task_losses.shape[1]

    def final_losses(self) -> np.ndarray:
        return self.per_step_task_losses[-1].copy()


class Strategy(str, Enum):
    GEM = "gem"
    SGD = "sgd"


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    steps_per_task: int = Field(default=200, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    memory_capacity: int = Field(default=50, ge=1)
    batch_size: int = Field(default=10, ge=1)
    seed: int = SEED
    solver: SolverConfig = SolverConfig()
    solver_name: str = SOLVER
    feas_tol: float = Field(default=FEAS_TOL, gt=0)
    margin: float = Field(default=MARGIN, ge=0)


# ---------------- GRADIENTS ----------------
def _stack(examples: List[Example]) -> Tuple[np.ndarray, np.ndarray]:
    X = np.array([e.x for e in examples], dtype=float)
    y = np.array([e.y for e in examples], dtype=float)
    return X, y


def task_gradient(model: LinearModel, memory: List[Example]) -> np.ndarray:
    """Gradient of the mean squared-error loss over the given examples: (1/|M|) sum (theta^T x - y) x."""
    if not memory:
        raise ContractViolation("task gradient needs a nonempty memory")
    X, y = _stack(memory)
    if X.shape[1] != model.theta.shape[0]:
        raise ContractViolation(f"dimension mismatch: examples have {X.shape[1]} features, model has {model.theta.shape[0]}")
    residual = X @ model.theta - y
    return X.T @ residual / len(memory)


def _memory_gradients(model: LinearModel, memory: EpisodicMemory, current_task: int) -> List[np.ndarray]:
    return [
        task_gradient(model, memory.examples(task_id))
        for task_id in memory.task_ids()
        if task_id < current_task
    ]


# ---------------- STEPS ----------------
def sgd_step(model: LinearModel, current_batch: List[Example], lr: float) -> LinearModel:
    if lr <= 0:
        raise ContractViolation(f"learning rate must be positive, got {lr}")
    g = task_gradient(model, current_batch)
    return LinearModel(model.theta - lr * g)


def gem_step(model: LinearModel, current_batch: List[Example], memory: EpisodicMemory, lr: float,
             config: Optional[ExperimentConfig] = None) -> Tuple[LinearModel, StepDiagnostics]:
    """
    One GEM update: project the batch gradient against the memory gradient
    of every earlier task, then step along the projected direction.
    """
    if lr <= 0:
        raise ContractViolation(f"learning rate must be positive, got {lr}")
    if config is None:
        config = ExperimentConfig()
    current_task = current_batch[0].task_id if current_batch else 0

    g = task_gradient(model, current_batch)
    memory_grads = _memory_gradients(model, memory, current_task)
    result = gem_projection.project(
        GradientSet(g, memory_grads),
        config=config.solver,
        feas_tol=config.feas_tol,
        margin=config.margin,
        solver=config.solver_name,
    )
    diagnostics = StepDiagnostics(
        violations=len(result.violated),
        projected=result.projected,
        kkt_residual=result.kkt_residual,
        g=g,
        g_tilde=result.g_tilde,
        memory_grads=memory_grads,
    )
    return LinearModel(model.theta - lr * result.g_tilde), diagnostics


# ---------------- TASKS ----------------
def _task_weights(num_tasks: int, dim: int, conflict: float, rng: np.random.Generator) -> np.ndarray:
    if conflict == 0:
        # Disjoint feature blocks
        block = dim // num_tasks
        weights = np.zeros((num_tasks, dim))
        for t in range(num_tasks):
            direction = rng.standard_normal(block)
            weights[t, t * block:(t + 1) * block] = direction / np.linalg.norm(direction)
        return weights

    # Unit vectors whose Gram matrix has ones on the diagonal and -conflict elsewhere
    gram = (1.0 + conflict) * np.eye(num_tasks) - conflict * np.ones((num_tasks, num_tasks))
    eigvals, eigvecs = np.linalg.eigh(gram)
    if eigvals[0] < -1e-12:
        raise ParameterError(
            f"{num_tasks} tasks cannot have pairwise cosine -{conflict} (needs conflict <= 1/(num_tasks - 1))"
        )
    keep = eigvals > 1e-12
    rank = int(np.count_nonzero(keep))
    if rank > dim:
        raise ParameterError(f"pairwise cosine -{conflict} between {num_tasks} tasks needs dim >= {rank}, got {dim}")
    coords = eigvecs[:, keep] * np.sqrt(eigvals[keep])
    rotation, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    weights = coords @ rotation[:, :rank].T
    return weights / np.linalg.norm(weights, axis=1, keepdims=True)


def make_synthetic_tasks(num_tasks: int, dim: int, examples_per_task: int, conflict: float,
                         seed: int = SEED, noise: float = NOISE_STD) -> List[Task]:
    """
    Linear-regression tasks y = w_t^T x + noise with unit task weights.

    conflict = 0 puts each task on its own block of features (orthogonal
    gradients); conflict > 0 draws full-dimensional inputs and weights with
    pairwise cosine -conflict.
    """
    if num_tasks < 1 or examples_per_task < 1:
        raise ParameterError("need at least one task and one example per task")
    if not 0.0 <= conflict <= 1.0:
        raise ParameterError(f"conflict must lie in [0, 1], got {conflict}")
    if conflict == 0 and dim < 2 * num_tasks:
        raise ParameterError(f"disjoint supports for {num_tasks} tasks need dim >= {2 * num_tasks}, got {dim}")
    if dim < 1:
        raise ParameterError("dim must be positive")

    rng = np.random.default_rng(seed)
    weights = _task_weights(num_tasks, dim, conflict, rng)

    tasks = []
    for t in range(num_tasks):
        task_id = t + 1
        X = rng.standard_normal((examples_per_task, dim))
        if conflict == 0:
            block = dim // num_tasks
            support = np.zeros(dim)
            support[t * block:(t + 1) * block] = 1.0
            X = X * support
        y = X @ weights[t] + noise * rng.standard_normal(examples_per_task)
        examples = [Example(X[i], float(y[i]), task_id) for i in range(examples_per_task)]
        tasks.append(Task(task_id=task_id, weights=weights[t], examples=examples))
    return tasks


# ---------------- EXPERIMENT ----------------
def run_experiment(task_stream: List[Task], strategy: Strategy, config: ExperimentConfig) -> RunMetrics:
    """
    Train sequentially over the task stream and evaluate every task after every step.

    Each step draws a batch from the current task with the seeded generator,
    updates the model, then pushes the batch into the episodic memory.
    """
    if not task_stream:
        raise ContractViolation("task stream is empty")
    strategy = Strategy(strategy)
    dim = task_stream[0].examples[0].x.shape[0]
    rng = np.random.default_rng(config.seed)

    model = LinearModel.zeros(dim)
    memory = EpisodicMemory(config.memory_capacity)
    losses = []
    violation_counts = []
    steps = []
    projections = 0

    for task in task_stream:
        logger.info(f"Training task {task.task_id}/{len(task_stream)} with {strategy.value}")
        n = len(task.examples)
        for _ in range(config.steps_per_task):
            idx = rng.choice(n, size=min(config.batch_size, n), replace=False)
            batch = [task.examples[i] for i in idx]

            if strategy == Strategy.GEM:
                model, diagnostics = gem_step(model, batch, memory, config.lr, config)
            else:
                diagnostics = _sgd_diagnostics(model, batch, memory, config)
                model = sgd_step(model, batch, config.lr)
            projections += int(diagnostics.projected)
            violation_counts.append(diagnostics.violations)
            steps.append(diagnostics)

            memory.extend(batch)
            losses.append([t.evaluate(model) for t in task_stream])

    logger.info(f"Run finished: {len(losses)} steps, {projections} projections")
    return RunMetrics(
        per_step_task_losses=np.array(losses, dtype=float),
        violation_counts=violation_counts,
        projection_counts=projections,
        steps=steps,
    )


def _sgd_diagnostics(model: LinearModel, batch: List[Example], memory: EpisodicMemory,
                     config: ExperimentConfig) -> StepDiagnostics:
    """Constraints the unprojected update breaks; reporting only, the update is unchanged."""
    g = task_gradient(model, batch)
    memory_grads = _memory_gradients(model, memory, batch[0].task_id)
    violated = gem_projection.check_constraints(GradientSet(g, memory_grads), tol=config.solver.tol_kkt)
    return StepDiagnostics(
        violations=len(violated),
        projected=False,
        kkt_residual=0.0,
        g=g,
        g_tilde=g,
        memory_grads=memory_grads,
    )


def write_csv(metrics: RunMetrics, stream: TextIO):
    """Rows ordered by (step, task); losses with round-trip precision."""
    stream.write(CSV_HEADER + "\n")
    for step in range(metrics.num_steps):
        for task in range(metrics.num_tasks):
            loss = repr(float(metrics.per_step_task_losses[step, task]))
            stream.write(f"{step + 1},{task + 1},{loss},{metrics.violation_counts[step]}\n")
