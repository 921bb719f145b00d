"""Constrained welfare maximization over (operator, task) allocations.

Maximizes the summed operator utilities subject to a per-task resource cap
and non-negativity. The solver runs projected gradient ascent: each
iteration steps along the welfare gradient, then projects the iterate of
every task onto {x >= 0, sum(x) <= cap}. The projection shift divided by
the learning rate is an exact per-step multiplier and converges to the KKT
multiplier of the cap, so iterates never oscillate and the displacement
stop rule is trustworthy. Iteration stops when the Euclidean displacement
between consecutive allocation iterates falls below the tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .agents import AllocationVector, OperatorState, ScenarioWeights, TaskSpec
from .errors import DomainError, SolverError

# Spectrum classification band around zero.
SPECTRUM_TOL = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    """Step sizes and stopping limits for the allocation solver."""

    learning_rate: float = 0.01
    tolerance: float = 1e-6
    max_iterations: int = 100_000
    dual_step: float = 0.05

    def __post_init__(self) -> None:
        for name, v in (("learning_rate", self.learning_rate),
                        ("tolerance", self.tolerance),
                        ("dual_step", self.dual_step)):
            if not math.isfinite(v) or v <= 0:
                raise DomainError(f"solver config: {name} must be finite and > 0")
        if self.max_iterations < 1:
            raise DomainError("solver config: max_iterations must be >= 1")


@dataclass
class SolverState:
    """A point of the iteration: allocation, multipliers, bookkeeping."""

    x: AllocationVector
    multipliers: dict[str, float] = field(default_factory=dict)
    iteration: int = 0
    last_step_norm: float = 0.0

    def __post_init__(self) -> None:
        for task_id, lam in self.multipliers.items():
            if not math.isfinite(lam) or lam < 0:
                raise DomainError(f"multiplier for task {task_id} must be finite and >= 0")
        if self.last_step_norm < 0:
            raise DomainError("last_step_norm must be >= 0")


@dataclass(frozen=True)
class ConvergenceReport:
    converged: bool
    iterations: int
    step_norm: float
    constraint_violation: float
    multipliers: dict[str, float] = field(default_factory=dict)


class StabilityVerdict(Enum):
    CONCAVE_STABLE = "concave-stable"
    BOUNDARY = "boundary"
    INDEFINITE = "indefinite"


@dataclass(frozen=True)
class StabilityReport:
    hessian: np.ndarray
    eigen_extremes: tuple[float, float]
    verdict: StabilityVerdict


def entry_order(agents: Sequence[OperatorState],
                tasks: Sequence[TaskSpec]) -> list[tuple[str, str]]:
    """Deterministic (operator id, task id) ordering of decision variables."""
    return [(a, t) for a in sorted(x.id for x in agents) for t in sorted(x.id for x in tasks)]


def welfare(agents: Sequence[OperatorState], tasks: Sequence[TaskSpec],
            weights: ScenarioWeights, allocation: AllocationVector) -> float:
    """Summed utility over every (operator, task) pair."""
    from .agents import compute_utility

    by_agent = {a.id: a for a in agents}
    by_task = {t.id: t for t in tasks}
    return math.fsum(
        compute_utility(by_agent[a], by_task[t], weights, allocation.get(a, t))
        for a, t in entry_order(agents, tasks))


def lagrangian_gradient(agents: Sequence[OperatorState], tasks: Sequence[TaskSpec],
                        weights: ScenarioWeights,
                        state: SolverState) -> dict[tuple[str, str], float]:
    """Gradient of the cap-relaxed objective at ``state``.

    Entry (i, t) is (w1*c + w2*s) / (1 + x) - cost_rate - corruption_rate
    - multiplier[t], the marginal utility of one more allocation unit net
    of the task's shadow price.
    """
    state.x.validate(tasks)
    by_task = {t.id: t for t in tasks}
    grad: dict[tuple[str, str], float] = {}
    for a_id, t_id in entry_order(agents, tasks):
        task = by_task[t_id]
        c, s = task.gains_for(a_id)
        x = state.x.get(a_id, t_id)
        if not math.isfinite(x) or x < 0:
            raise DomainError(f"allocation for ({a_id}, {t_id}) must be finite and >= 0")
        lam = state.multipliers.get(t_id, 0.0)
        grad[(a_id, t_id)] = ((weights.w1 * c + weights.w2 * s) / (1.0 + x)
                              - task.cost_rate - task.corruption_rate - lam)
    return grad


def _project_capped(values: list[float], cap: float) -> tuple[list[float], float]:
    """Euclidean projection of ``values`` onto {z >= 0, sum(z) <= cap}.

    Returns the projected point and the uniform shift applied to reach the
    cap (zero when the clipped point is already feasible).
    """
    clipped = [max(0.0, v) for v in values]
    if math.fsum(clipped) <= cap:
        return clipped, 0.0
    ordered = sorted(values, reverse=True)
    running = 0.0
    shift = (math.fsum(ordered) - cap) / len(ordered)
    for j, v in enumerate(ordered, start=1):
        running += v
        candidate = (running - cap) / j
        nxt = ordered[j] if j < len(ordered) else -math.inf
        if candidate > nxt:
            shift = candidate
            break
    return [max(0.0, v - shift) for v in values], shift


def solve_allocation(agents: Sequence[OperatorState], tasks: Sequence[TaskSpec],
                     weights: ScenarioWeights, config: SolverConfig | None = None,
                     initial: AllocationVector | None = None,
                     ) -> tuple[AllocationVector, ConvergenceReport]:
    """Maximize total welfare subject to per-task caps and x >= 0.

    Starts from ``initial`` (zeros when omitted) and iterates projected
    gradient ascent until the displacement between consecutive iterates
    drops below ``config.tolerance`` or ``config.max_iterations`` is hit.
    The returned allocation is feasible; the report carries the final
    per-task multiplier estimates.
    """
    if not agents:
        raise DomainError("solver requires at least one operator")
    if not tasks:
        raise DomainError("solver requires at least one task")
    config = config or SolverConfig()

    order = entry_order(agents, tasks)
    by_task = {t.id: t for t in tasks}
    task_ids = sorted(by_task)
    # Per-task views into the flat entry vector.
    task_slots = {t: [i for i, (_, tid) in enumerate(order) if tid == t] for t in task_ids}

    x = [0.0] * len(order)
    if initial is not None:
        initial.validate(tasks)
        known = set(order)
        for entry, _ in initial.items():
            if entry not in known:
                raise DomainError(f"initial allocation has unknown entry {entry}")
        x = [initial.get(a, t) for a, t in order]

    # Marginal value and linear cost per entry never change across iterations.
    gains = []
    costs = []
    for a_id, t_id in order:
        task = by_task[t_id]
        c, s = task.gains_for(a_id)
        gains.append(weights.w1 * c + weights.w2 * s)
        costs.append(task.cost_rate + task.corruption_rate)

    alpha = config.learning_rate
    multipliers = {t: 0.0 for t in task_ids}
    iteration = 0
    step_norm = math.inf
    converged = False

    while iteration < config.max_iterations:
        iteration += 1
        new_x = list(x)
        for t_id in task_ids:
            slots = task_slots[t_id]
            stepped = [x[i] + alpha * (gains[i] / (1.0 + x[i]) - costs[i]) for i in slots]
            projected, shift = _project_capped(stepped, by_task[t_id].resource_cap)
            multipliers[t_id] = shift / alpha
            for i, v in zip(slots, projected):
                new_x[i] = v
        if not all(math.isfinite(v) for v in new_x):
            raise SolverError(f"non-finite iterate at iteration {iteration}", iteration)
        step_norm = math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(new_x, x)))
        x = new_x
        if step_norm < config.tolerance:
            converged = True
            break

    result = AllocationVector({entry: v for entry, v in zip(order, x)})
    violation = max(
        (max(0.0, result.task_total(t) - by_task[t].resource_cap) for t in task_ids),
        default=0.0)
    report = ConvergenceReport(
        converged=converged,
        iterations=iteration,
        step_norm=step_norm,
        constraint_violation=violation,
        multipliers=dict(multipliers),
    )
    return result, report


def stability_report(hessian: Sequence[Sequence[float]] | np.ndarray) -> StabilityReport:
    """Classify a symmetric matrix by its eigenvalue extremes.

    Verdicts: ``boundary`` when the whole spectrum sits within the zero
    band, ``concave-stable`` when the largest eigenvalue does not exceed
    it, ``indefinite`` otherwise.
    """
    matrix = np.asarray(hessian, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DomainError(f"hessian must be square, got shape {matrix.shape}")
    if matrix.size == 0:
        raise DomainError("hessian must be non-empty")
    if not np.all(np.isfinite(matrix)):
        raise DomainError("hessian entries must be finite")
    if np.max(np.abs(matrix - matrix.T)) > SPECTRUM_TOL:
        raise DomainError("hessian must be symmetric")

    eigenvalues = np.linalg.eigvalsh(matrix)
    low, high = float(eigenvalues[0]), float(eigenvalues[-1])
    if abs(low) <= SPECTRUM_TOL and abs(high) <= SPECTRUM_TOL:
        verdict = StabilityVerdict.BOUNDARY
    elif high <= SPECTRUM_TOL:
        verdict = StabilityVerdict.CONCAVE_STABLE
    else:
        verdict = StabilityVerdict.INDEFINITE
    return StabilityReport(hessian=matrix, eigen_extremes=(low, high), verdict=verdict)


def hessian_stability(agents: Sequence[OperatorState], tasks: Sequence[TaskSpec],
                      weights: ScenarioWeights,
                      allocation: AllocationVector) -> StabilityReport:
    """Stability verdict of the welfare objective at ``allocation``.

    Utilities are separable per entry, so the Hessian is diagonal with
    entries -(w1*c + w2*s) / (1 + x)^2.
    """
    allocation.validate(tasks)
    order = entry_order(agents, tasks)
    by_task = {t.id: t for t in tasks}
    diag = []
    for a_id, t_id in order:
        task = by_task[t_id]
        c, s = task.gains_for(a_id)
        x = allocation.get(a_id, t_id)
        diag.append(-(weights.w1 * c + weights.w2 * s) / (1.0 + x) ** 2)
    return stability_report(np.diag(diag))


def check_convergence(prev: AllocationVector, nxt: AllocationVector,
                      tolerance: float) -> bool:
    """True iff the Euclidean displacement is strictly below ``tolerance``."""
    prev_keys = [entry for entry, _ in prev.items()]
    next_keys = [entry for entry, _ in nxt.items()]
    if prev_keys != next_keys:
        raise DomainError("allocation vectors index different (operator, task) sets")
    displacement = math.sqrt(math.fsum(
        (nxt.get(*entry) - prev.get(*entry)) ** 2 for entry in prev_keys))
    return displacement < tolerance
