"""End-to-end orchestration: load a config, run epochs, emit reports.

Every epoch runs the full pipeline: solve the task allocation with
trust-scaled gains, assign submission windows by reputation, run one
consensus height per window, settle rewards and slashes, fold outcomes
into trust, apply the feedback step, and compute scenario metrics. All
randomness flows from per-purpose generators forked deterministically from
the run seed, so a (config, seed) pair fully determines the report.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .agents import (AllocationVector, OperatorState, OutcomeRecord, ScenarioWeights,
                     TaskSpec, evaluate_scores)
from .allocation import (ConvergenceReport, SolverConfig, hessian_stability,
                         solve_allocation)
from .consensus import (Behavior, EventTrace, NetworkModel, PartitionSpec,
                        ValidatorDescriptor, run_height)
from .errors import ConfigError, DomainError
from .incentives import (AggregationReport, EventKind, LedgerEntry, ReputationParams,
                         SettlementEvent, feedback_iterate, make_aggregation_report,
                         settle, update_trust)
from .scenarios import (FAILURE_RATE_CONSTANT, MetricsReport, PaymentNodeParams,
                        PaymentWindowLog, SequencerRunLog, failure_probability,
                        optimize_throughput, payment_metrics, payment_utility,
                        sequencer_metrics)
from .scheduling import apply_fallback, assign_windows, on_window_miss

SCENARIOS = ("sequencer", "payment")


# --- Configuration -----------------------------------------------------------


@dataclass(frozen=True)
class OperatorConfig:
    id: str
    stake: float
    behavior: str = "honest"
    trust: float | None = None
    capacity: float = 100.0
    resources: float = 10.0
    region_latency: int = 1
    payment: PaymentNodeParams | None = None


@dataclass(frozen=True)
class ScheduleParams:
    window_length: int = 8
    windows_per_epoch: int = 4
    grace_length: int = 4


@dataclass(frozen=True)
class IncentiveParams:
    reputation: ReputationParams = field(default_factory=ReputationParams)
    submit_fee: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    operators: tuple[OperatorConfig, ...]
    tasks: tuple[TaskSpec, ...]
    weights: ScenarioWeights
    solver: SolverConfig
    network: NetworkModel
    schedule: ScheduleParams
    incentives: IncentiveParams
    max_rounds: int = 10
    failure_rate_constant: float = FAILURE_RATE_CONSTANT
    epochs: int = 1
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        """Normalized config document with every default made explicit."""
        doc: dict[str, Any] = {
            "scenario": self.scenario,
            "seed": self.seed,
            "epochs": self.epochs,
            "max_rounds": self.max_rounds,
            "failure_rate_constant": self.failure_rate_constant,
            "weights": {"consensus": self.weights.w1, "performance": self.weights.w2},
            "solver": {
                "learning_rate": self.solver.learning_rate,
                "tolerance": self.solver.tolerance,
                "max_iterations": self.solver.max_iterations,
                "dual_step": self.solver.dual_step,
            },
            "network": {
                "drop_probability": self.network.drop_probability,
                "latency_jitter": self.network.latency_jitter,
                "partitions": [
                    {"start": p.start_tick, "end": p.end_tick,
                     "members": sorted(p.members)}
                    for p in self.network.partition_schedule
                ],
            },
            "schedule": {
                "window_length": self.schedule.window_length,
                "windows_per_epoch": self.schedule.windows_per_epoch,
                "grace_length": self.schedule.grace_length,
            },
            "incentives": {
                "smoothing": self.incentives.reputation.smoothing,
                "initial_trust": self.incentives.reputation.initial_trust,
                "slash_fraction": self.incentives.reputation.slash_fraction,
                "submit_fee": self.incentives.submit_fee,
            },
            "operators": [],
            "tasks": [],
        }
        for op in self.operators:
            entry: dict[str, Any] = {
                "id": op.id, "stake": op.stake, "behavior": op.behavior,
                "trust": op.trust if op.trust is not None
                else self.incentives.reputation.initial_trust,
                "capacity": op.capacity, "resources": op.resources,
                "region_latency": op.region_latency,
            }
            if op.payment is not None:
                entry["payment"] = {
                    "fee": op.payment.fee,
                    "validation_cost_coeff": op.payment.validation_cost_coeff,
                    "capacity": op.payment.capacity,
                    "penalty_coeff": op.payment.penalty_coeff,
                    "error_cost_coeff": op.payment.error_cost_coeff,
                    "error_rate": op.payment.error_rate,
                    "deadline": (op.payment.deadline
                                 if math.isfinite(op.payment.deadline) else None),
                    "validation_time": op.payment.validation_time,
                }
            doc["operators"].append(entry)
        for task in self.tasks:
            doc["tasks"].append({
                "id": task.id, "cost_rate": task.cost_rate,
                "corruption_rate": task.corruption_rate,
                "resource_cap": task.resource_cap, "value": task.value,
                "consensus_gain": dict(sorted(task.consensus_gain.items())),
                "performance_gain": dict(sorted(task.performance_gain.items())),
            })
        return doc


def _require_mapping(obj: Any, context: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{context} must be an object", field=context)
    return obj


class _Section:
    """Field extractor that rejects unknown keys on close."""

    def __init__(self, raw: dict, context: str):
        self._raw = dict(raw)
        self._context = context

    def take(self, name: str, default: Any = None, required: bool = False) -> Any:
        if name in self._raw:
            return self._raw.pop(name)
        if required:
            raise ConfigError(f"missing required field '{name}' in {self._context}",
                              field=name)
        return default

    def close(self) -> None:
        if self._raw:
            unknown = sorted(self._raw)[0]
            raise ConfigError(f"unknown field '{unknown}' in {self._context}",
                              field=unknown)


def _number(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"field '{name}' must be a number", field=name)
    return float(value)


def _integer(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"field '{name}' must be an integer", field=name)
    return value


def _gain_table(raw: Any, name: str, operator_ids: list[str]) -> dict[str, float]:
    """Scalar gains broadcast to every operator; tables must cover all."""
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return {op: float(raw) for op in operator_ids}
    table = _require_mapping(raw, name)
    for op in table:
        if op not in operator_ids:
            raise ConfigError(f"{name} references unknown operator '{op}'", field=name)
    missing = [op for op in operator_ids if op not in table]
    if missing:
        raise ConfigError(f"{name} missing operators {missing}", field=name)
    return {op: _number(v, f"{name}[{op}]") for op, v in table.items()}


def _parse_payment(raw: Any, context: str) -> PaymentNodeParams:
    section = _Section(_require_mapping(raw, context), context)
    stages = section.take("stages")
    validation_time = section.take("validation_time")
    error_rate = section.take("error_rate")
    if stages is not None:
        if not isinstance(stages, list) or not stages:
            raise ConfigError(f"{context}.stages must be a non-empty list",
                              field="stages")
        latency_total = 0.0
        pass_rate = 1.0
        for i, raw_stage in enumerate(stages):
            stage = _Section(_require_mapping(raw_stage, f"{context}.stages[{i}]"),
                             f"{context}.stages[{i}]")
            latency_total += _number(stage.take("latency", 0.0), "latency")
            pass_rate *= 1.0 - _number(stage.take("error_rate", 0.0), "error_rate")
            stage.close()
        if validation_time is None:
            validation_time = latency_total
        if error_rate is None:
            error_rate = min(1.0, max(0.0, 1.0 - pass_rate))
    deadline = section.take("deadline")
    params = dict(
        fee=_number(section.take("fee", required=True), "fee"),
        validation_cost_coeff=_number(
            section.take("validation_cost_coeff", required=True),
            "validation_cost_coeff"),
        capacity=_number(section.take("capacity", required=True), "capacity"),
        penalty_coeff=_number(section.take("penalty_coeff", 0.0), "penalty_coeff"),
        error_cost_coeff=_number(section.take("error_cost_coeff", 0.0),
                                 "error_cost_coeff"),
        error_rate=_number(error_rate if error_rate is not None else 0.0, "error_rate"),
        deadline=_number(deadline, "deadline") if deadline is not None else math.inf,
        validation_time=_number(validation_time if validation_time is not None else 0.0,
                                "validation_time"),
    )
    cap = section.take("validation_cost_cap")
    if cap is not None:
        params["validation_cost_cap"] = _number(cap, "validation_cost_cap")
    section.close()
    try:
        return PaymentNodeParams(**params)
    except DomainError as exc:
        raise ConfigError(f"{context}: {exc}", field=context) from exc


def load_config(source: str | Path) -> RunConfig:
    """Parse and validate a run configuration.

    ``source`` is a filesystem path unless it starts with '{', in which
    case it is treated as inline JSON text. Parse errors carry line and
    column; semantic errors name the offending field. Unknown fields are
    rejected everywhere. The returned config has every default filled in.
    """
    if isinstance(source, Path) or not source.lstrip().startswith("{"):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {source}: {exc}") from exc
    else:
        text = source
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}",
            line=exc.lineno, column=exc.colno) from exc

    top = _Section(_require_mapping(raw, "config"), "config")
    scenario = top.take("scenario", required=True)
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}, got '{scenario}'",
                          field="scenario")
    seed = _integer(top.take("seed", 0), "seed")
    epochs = _integer(top.take("epochs", 1), "epochs")
    if epochs < 0:
        raise ConfigError("epochs must be >= 0", field="epochs")
    max_rounds = _integer(top.take("max_rounds", 10), "max_rounds")
    if max_rounds < 1:
        raise ConfigError("max_rounds must be >= 1", field="max_rounds")
    kappa = _number(top.take("failure_rate_constant", FAILURE_RATE_CONSTANT),
                    "failure_rate_constant")
    if kappa < 0:
        raise ConfigError("failure_rate_constant must be >= 0",
                          field="failure_rate_constant")

    weights_sec = _Section(
        _require_mapping(top.take("weights", {}), "weights"), "weights")
    try:
        weights = ScenarioWeights(
            w1=_number(weights_sec.take("consensus", 1.0), "weights.consensus"),
            w2=_number(weights_sec.take("performance", 1.0), "weights.performance"))
    except DomainError as exc:
        raise ConfigError(f"weights: {exc}", field="weights") from exc
    weights_sec.close()

    solver_sec = _Section(_require_mapping(top.take("solver", {}), "solver"), "solver")
    try:
        solver = SolverConfig(
            learning_rate=_number(solver_sec.take("learning_rate", 0.01),
                                  "solver.learning_rate"),
            tolerance=_number(solver_sec.take("tolerance", 1e-6), "solver.tolerance"),
            max_iterations=_integer(solver_sec.take("max_iterations", 100_000),
                                    "solver.max_iterations"),
            dual_step=_number(solver_sec.take("dual_step", 0.05), "solver.dual_step"))
    except DomainError as exc:
        raise ConfigError(f"solver: {exc}", field="solver") from exc
    solver_sec.close()

    raw_ops = top.take("operators", required=True)
    if not isinstance(raw_ops, list) or not raw_ops:
        raise ConfigError("operators must be a non-empty list", field="operators")
    operators: list[OperatorConfig] = []
    for i, raw_op in enumerate(raw_ops):
        sec = _Section(_require_mapping(raw_op, f"operators[{i}]"), f"operators[{i}]")
        op_id = sec.take("id", required=True)
        if not isinstance(op_id, str) or not op_id:
            raise ConfigError(f"operators[{i}].id must be a non-empty string",
                              field="id")
        behavior = sec.take("behavior", "honest")
        try:
            Behavior(behavior)
        except ValueError:
            raise ConfigError(
                f"operators[{i}].behavior must be one of "
                f"{[b.value for b in Behavior]}", field="behavior") from None
        trust = sec.take("trust")
        if trust is not None:
            trust = _number(trust, f"operators[{i}].trust")
            if not 0.0 <= trust <= 1.0:
                raise ConfigError(f"operators[{i}].trust must lie in [0, 1]",
                                  field="trust")
        payment_raw = sec.take("payment")
        operators.append(OperatorConfig(
            id=op_id,
            stake=_number(sec.take("stake", required=True), f"operators[{i}].stake"),
            behavior=behavior,
            trust=trust,
            capacity=_number(sec.take("capacity", 100.0), f"operators[{i}].capacity"),
            resources=_number(sec.take("resources", 10.0), f"operators[{i}].resources"),
            region_latency=_integer(sec.take("region_latency", 1),
                                    f"operators[{i}].region_latency"),
            payment=(_parse_payment(payment_raw, f"operators[{i}].payment")
                     if payment_raw is not None else None),
        ))
        sec.close()
    op_ids = [op.id for op in operators]
    duplicates = sorted({i for i in op_ids if op_ids.count(i) > 1})
    if duplicates:
        raise ConfigError(f"duplicate operator ids: {duplicates}", field="operators")
    if scenario == "payment":
        missing = [op.id for op in operators if op.payment is None]
        if missing:
            raise ConfigError(
                f"payment scenario requires payment params for operators {missing}",
                field="operators")

    raw_tasks = top.take("tasks", required=True)
    if not isinstance(raw_tasks, list) or not raw_tasks:
        raise ConfigError("tasks must be a non-empty list", field="tasks")
    tasks: list[TaskSpec] = []
    for i, raw_task in enumerate(raw_tasks):
        sec = _Section(_require_mapping(raw_task, f"tasks[{i}]"), f"tasks[{i}]")
        task_id = sec.take("id", required=True)
        if not isinstance(task_id, str) or not task_id:
            raise ConfigError(f"tasks[{i}].id must be a non-empty string", field="id")
        try:
            tasks.append(TaskSpec(
                id=task_id,
                cost_rate=_number(sec.take("cost_rate", 0.0), f"tasks[{i}].cost_rate"),
                corruption_rate=_number(sec.take("corruption_rate", 0.0),
                                        f"tasks[{i}].corruption_rate"),
                resource_cap=_number(sec.take("resource_cap", required=True),
                                     f"tasks[{i}].resource_cap"),
                consensus_gain=_gain_table(sec.take("consensus_gain", 1.0),
                                           f"tasks[{i}].consensus_gain", op_ids),
                performance_gain=_gain_table(sec.take("performance_gain", 1.0),
                                             f"tasks[{i}].performance_gain", op_ids),
                value=_number(sec.take("value", 0.0), f"tasks[{i}].value"),
            ))
        except DomainError as exc:
            raise ConfigError(f"tasks[{i}]: {exc}", field=f"tasks[{i}]") from exc
        sec.close()
    task_ids = [t.id for t in tasks]
    duplicates = sorted({t for t in task_ids if task_ids.count(t) > 1})
    if duplicates:
        raise ConfigError(f"duplicate task ids: {duplicates}", field="tasks")

    net_sec = _Section(_require_mapping(top.take("network", {}), "network"), "network")
    partitions = []
    raw_parts = net_sec.take("partitions", [])
    if not isinstance(raw_parts, list):
        raise ConfigError("network.partitions must be a list", field="partitions")
    for i, raw_part in enumerate(raw_parts):
        part_sec = _Section(_require_mapping(raw_part, f"network.partitions[{i}]"),
                            f"network.partitions[{i}]")
        members = part_sec.take("members", required=True)
        if not isinstance(members, list):
            raise ConfigError(f"network.partitions[{i}].members must be a list",
                              field="members")
        for member in members:
            if member not in op_ids:
                raise ConfigError(
                    f"network.partitions[{i}] references unknown operator '{member}'",
                    field="members")
        partitions.append(PartitionSpec(
            start_tick=_integer(part_sec.take("start", required=True), "start"),
            end_tick=_integer(part_sec.take("end", required=True), "end"),
            members=frozenset(members)))
        part_sec.close()
    try:
        network = NetworkModel(
            drop_probability=_number(net_sec.take("drop_probability", 0.0),
                                     "network.drop_probability"),
            latency_jitter=_integer(net_sec.take("latency_jitter", 0),
                                    "network.latency_jitter"),
            rng_seed=0,
            partition_schedule=tuple(partitions))
    except DomainError as exc:
        raise ConfigError(f"network: {exc}", field="network") from exc
    net_sec.close()

    sched_sec = _Section(
        _require_mapping(top.take("schedule", {}), "schedule"), "schedule")
    window_length = _integer(sched_sec.take("window_length", 8),
                             "schedule.window_length")
    if window_length <= 0:
        raise ConfigError("schedule.window_length must be > 0", field="window_length")
    windows_per_epoch = _integer(
        sched_sec.take("windows_per_epoch", max(4, len(operators))),
        "schedule.windows_per_epoch")
    if windows_per_epoch < 1:
        raise ConfigError("schedule.windows_per_epoch must be >= 1",
                          field="windows_per_epoch")
    grace_raw = sched_sec.take("grace_length")
    grace_length = (window_length // 2 if grace_raw is None
                    else _integer(grace_raw, "schedule.grace_length"))
    if grace_length < 0 or grace_length > window_length // 2:
        raise ConfigError("schedule.grace_length must lie in [0, window_length // 2]",
                          field="grace_length")
    sched_sec.close()
    schedule = ScheduleParams(window_length=window_length,
                              windows_per_epoch=windows_per_epoch,
                              grace_length=grace_length)

    inc_sec = _Section(
        _require_mapping(top.take("incentives", {}), "incentives"), "incentives")
    try:
        reputation = ReputationParams(
            smoothing=_number(inc_sec.take("smoothing", 0.9), "incentives.smoothing"),
            initial_trust=_number(inc_sec.take("initial_trust", 0.5),
                                  "incentives.initial_trust"),
            slash_fraction=_number(inc_sec.take("slash_fraction", 0.05),
                                   "incentives.slash_fraction"))
    except DomainError as exc:
        raise ConfigError(f"incentives: {exc}", field="incentives") from exc
    submit_fee = _number(inc_sec.take("submit_fee", 1.0), "incentives.submit_fee")
    if submit_fee < 0:
        raise ConfigError("incentives.submit_fee must be >= 0", field="submit_fee")
    inc_sec.close()
    incentives = IncentiveParams(reputation=reputation, submit_fee=submit_fee)

    top.close()
    return RunConfig(scenario=scenario, operators=tuple(operators), tasks=tuple(tasks),
                     weights=weights, solver=solver, network=network,
                     schedule=schedule, incentives=incentives, max_rounds=max_rounds,
                     failure_rate_constant=kappa, epochs=epochs, seed=seed)


# --- Simulation --------------------------------------------------------------


def fork_seed(seed: int, label: str) -> int:
    """Derive an independent 64-bit child seed for one purpose label."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    metrics: MetricsReport
    convergence: ConvergenceReport
    stability_verdict: str
    eigen_extremes: tuple[float, float]
    aggregation: AggregationReport
    ledger: tuple[LedgerEntry, ...]
    stakes: dict[str, float]
    trusts: dict[str, float]
    allocation: dict[str, float]
    windows: tuple[dict, ...]
    heights: tuple[dict, ...]


@dataclass(frozen=True)
class RunReport:
    config: dict[str, Any]
    epochs: tuple[EpochReport, ...]
    ledger_totals: dict[str, float]
    trace_digest: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "epochs": [_epoch_to_dict(e) for e in self.epochs],
            "ledger_totals": self.ledger_totals,
            "trace_digest": self.trace_digest,
        }


def _metrics_to_dict(metrics: MetricsReport) -> dict[str, Any]:
    doc: dict[str, Any] = {}
    if metrics.sequencer is not None:
        doc["sequencer"] = {
            "throughput": metrics.sequencer.throughput,
            "latency": metrics.sequencer.latency,
            "fault_tolerance": metrics.sequencer.fault_tolerance,
            "efficiency": metrics.sequencer.efficiency,
        }
    if metrics.payment is not None:
        doc["payment"] = {
            "total_transactions": metrics.payment.total_transactions,
            "validation_efficiency": metrics.payment.validation_efficiency,
            "error_rate": metrics.payment.error_rate,
            "revenue_growth": metrics.payment.revenue_growth,
            "total_penalties": metrics.payment.total_penalties,
        }
    return doc


def _epoch_to_dict(report: EpochReport) -> dict[str, Any]:
    return {
        "epoch": report.epoch,
        "metrics": _metrics_to_dict(report.metrics),
        "convergence": {
            "converged": report.convergence.converged,
            "iterations": report.convergence.iterations,
            "step_norm": report.convergence.step_norm,
            "constraint_violation": report.convergence.constraint_violation,
            "multipliers": dict(sorted(report.convergence.multipliers.items())),
        },
        "stability": {
            "verdict": report.stability_verdict,
            "eigen_min": report.eigen_extremes[0],
            "eigen_max": report.eigen_extremes[1],
        },
        "aggregation": {
            "tick": report.aggregation.tick,
            "values": report.aggregation.values,
            "weights": report.aggregation.weights,
            "aggregate": report.aggregation.aggregate,
        },
        "ledger": [
            {"operator": e.operator_id, "tick": e.tick, "kind": e.kind.value,
             "amount": e.amount, "reason": e.reason}
            for e in report.ledger
        ],
        "stakes": report.stakes,
        "trusts": report.trusts,
        "allocation": report.allocation,
        "windows": list(report.windows),
        "heights": list(report.heights),
    }


def _scaled_tasks(tasks: Sequence[TaskSpec], scale: Mapping[str, float]) -> list[TaskSpec]:
    return [
        TaskSpec(
            id=t.id, cost_rate=t.cost_rate, corruption_rate=t.corruption_rate,
            resource_cap=t.resource_cap,
            consensus_gain={op: g * scale.get(op, 1.0)
                            for op, g in t.consensus_gain.items()},
            performance_gain={op: g * scale.get(op, 1.0)
                              for op, g in t.performance_gain.items()},
            value=t.value,
        )
        for t in tasks
    ]


def run_simulation(config: RunConfig) -> RunReport:
    """Run every epoch of the configured scenario deterministically."""
    failure_rng = random.Random(fork_seed(config.seed, "failures"))
    reputation = config.incentives.reputation

    trusts = {
        op.id: op.trust if op.trust is not None else reputation.initial_trust
        for op in config.operators
    }
    stakes = {op.id: op.stake for op in config.operators}
    histories: dict[str, list[OutcomeRecord]] = {op.id: [] for op in config.operators}
    aggregation_weights = dict(trusts)
    gain_scale = dict(trusts)
    warm_start: AllocationVector | None = None
    task_values = {t.id: t.value for t in config.tasks}
    horizon = config.schedule.window_length * config.schedule.windows_per_epoch

    trace_lines: list[str] = []
    epoch_reports: list[EpochReport] = []
    payment_logs: list[PaymentWindowLog] = []
    totals = {"rewards": 0.0, "fees": 0.0, "slashes": 0.0}
    height_index = 0

    for epoch in range(config.epochs):
        agents = [
            OperatorState(id=op.id, stake=stakes[op.id], trust=trusts[op.id],
                          capacity=op.capacity, resources=op.resources,
                          reputation_history=list(histories[op.id]))
            for op in sorted(config.operators, key=lambda o: o.id)
        ]
        tasks = _scaled_tasks(config.tasks, gain_scale)
        allocation, convergence = solve_allocation(
            agents, tasks, config.weights, config.solver, warm_start)
        stability = hessian_stability(agents, tasks, config.weights, allocation)

        schedule = assign_windows(trusts, horizon, config.schedule.window_length,
                                  config.schedule.grace_length)
        epoch_base_tick = epoch * horizon

        events: list[SettlementEvent] = []
        outcomes: dict[str, list[float]] = {op.id: [] for op in config.operators}
        missed_operators: set[str] = set()
        window_records: list[dict] = []
        height_records: list[dict] = []

        def note_outcome(operator_id: str, score: float, tick: int) -> None:
            outcomes[operator_id].append(score)
            histories[operator_id].append(
                OutcomeRecord(success=score >= 0.5, score=score, tick=tick))

        for window_slot in range(len(schedule.windows)):
            window = schedule.windows[window_slot]
            window_tick = epoch_base_tick + window.start_tick
            batch = [f"tx:{epoch}:{window.window_index}:{j}"
                     for j in range(max(1, len(config.operators)))]
            validators = [
                ValidatorDescriptor(id=op.id, stake=max(stakes[op.id], 1e-9),
                                    behavior=Behavior(op.behavior),
                                    region_latency=op.region_latency)
                for op in sorted(config.operators, key=lambda o: o.id)
            ]
            height_trace = EventTrace()
            net = NetworkModel(
                drop_probability=config.network.drop_probability,
                latency_jitter=config.network.latency_jitter,
                rng_seed=fork_seed(config.seed, f"net:{epoch}:{window.window_index}"),
                partition_schedule=config.network.partition_schedule)
            outcome = run_height(validators, batch, net, config.max_rounds,
                                 height=height_index, trace=height_trace)
            trace_lines.extend(height_trace.to_lines())
            height_records.append({
                "height": height_index,
                "window_index": window.window_index,
                "committed": outcome.committed,
                "digest": outcome.batch_digest,
                "rounds_used": outcome.rounds_used,
                "ticks_elapsed": outcome.ticks_elapsed,
                "signers": sorted(outcome.signature.signer_set)
                if outcome.signature else [],
            })
            height_index += 1

            for fault in height_trace.faults:
                if fault.kind == "unknown-validator":
                    continue
                events.append(SettlementEvent(EventKind.CONSENSUS_FAULT,
                                              fault.validator, window_tick))
                note_outcome(fault.validator, 0.0, window_tick)

            record = {"window_index": window.window_index,
                      "operator": window.operator_id,
                      "start": epoch_base_tick + window.start_tick,
                      "end": epoch_base_tick + window.end_tick,
                      "committed": outcome.committed,
                      "submitted": False, "fallback": None}
            if outcome.committed:
                submitter = window.operator_id
                miss_draw = failure_rng.random()
                if miss_draw < failure_probability(trusts[submitter],
                                                   config.failure_rate_constant):
                    events.append(SettlementEvent(EventKind.MISS, submitter,
                                                  window_tick))
                    note_outcome(submitter, 0.0, window_tick)
                    missed_operators.add(submitter)
                    trace_lines.append(
                        f"{window_tick},window-miss,{height_index - 1},"
                        f"{window.window_index},{submitter},-")
                    fallback = on_window_miss(schedule, window, trusts)
                    if fallback is not None:
                        schedule = apply_fallback(schedule, fallback)
                        fb_tick = epoch_base_tick + fallback.start_tick
                        fb_draw = failure_rng.random()
                        if fb_draw < failure_probability(
                                trusts[fallback.operator_id],
                                config.failure_rate_constant):
                            events.append(SettlementEvent(
                                EventKind.MISS, fallback.operator_id, fb_tick))
                            note_outcome(fallback.operator_id, 0.0, fb_tick)
                            missed_operators.add(fallback.operator_id)
                            trace_lines.append(
                                f"{fb_tick},unrecoverable-miss,{height_index - 1},"
                                f"{window.window_index},{fallback.operator_id},-")
                            record["fallback"] = {
                                "operator": fallback.operator_id, "submitted": False}
                        else:
                            events.append(SettlementEvent(
                                EventKind.SUBMIT_SUCCESS, fallback.operator_id,
                                fb_tick))
                            note_outcome(fallback.operator_id, 1.0, fb_tick)
                            trace_lines.append(
                                f"{fb_tick},fallback-submit,{height_index - 1},"
                                f"{window.window_index},{fallback.operator_id},-")
                            record["fallback"] = {
                                "operator": fallback.operator_id, "submitted": True}
                    else:
                        trace_lines.append(
                            f"{window_tick},unrecoverable-miss,{height_index - 1},"
                            f"{window.window_index},{submitter},-")
                else:
                    events.append(SettlementEvent(EventKind.SUBMIT_SUCCESS,
                                                  submitter, window_tick))
                    note_outcome(submitter, 1.0, window_tick)
                    record["submitted"] = True
                    trace_lines.append(
                        f"{window_tick},submit,{height_index - 1},"
                        f"{window.window_index},{submitter},-")
            window_records.append(record)

        # Task completion events: every operator with positive allocation
        # shares the task pool by performance score.
        epoch_end_tick = epoch_base_tick + horizon
        by_agent = {a.id: a for a in agents}
        for task in tasks:
            for agent_id in sorted(by_agent):
                units = allocation.get(agent_id, task.id)
                if units <= 0:
                    continue
                _, performance = evaluate_scores(by_agent[agent_id], task, units)
                events.append(SettlementEvent(EventKind.TASK_COMPLETE, agent_id,
                                              epoch_end_tick, task_id=task.id,
                                              score=performance))

        ledger, stakes = settle(events, agents, task_values, reputation,
                                config.incentives.submit_fee)
        for entry in ledger:
            if entry.kind.value == "reward":
                totals["rewards"] += entry.amount
            elif entry.kind.value == "fee":
                totals["fees"] += entry.amount
            else:
                totals["slashes"] += entry.amount

        trusts = {
            op: update_trust(outcomes[op], reputation, start=trusts[op])
            for op in sorted(trusts)
        }

        operator_outputs = {a.id: allocation.operator_total(a.id) for a in agents}
        aggregation = make_aggregation_report(epoch_end_tick, operator_outputs,
                                              aggregation_weights)
        new_weights, resolve_request = feedback_iterate(trusts, aggregation_weights,
                                                        allocation)
        aggregation_weights = new_weights
        gain_scale = resolve_request.gain_scale
        warm_start = resolve_request.warm_start

        metrics = _epoch_metrics(config, agents, tasks, allocation, missed_operators,
                                 payment_logs)
        epoch_reports.append(EpochReport(
            epoch=epoch,
            metrics=metrics,
            convergence=convergence,
            stability_verdict=stability.verdict.value,
            eigen_extremes=stability.eigen_extremes,
            aggregation=aggregation,
            ledger=tuple(ledger),
            stakes=dict(sorted(stakes.items())),
            trusts=dict(sorted(trusts.items())),
            allocation={f"{a}:{t}": v for (a, t), v in allocation.items()},
            windows=tuple(window_records),
            heights=tuple(height_records),
        ))

    trace_text = "\n".join(trace_lines)
    digest = hashlib.sha256(trace_text.encode()).hexdigest()
    return RunReport(config=config.to_dict(), epochs=tuple(epoch_reports),
                     ledger_totals=dict(sorted(totals.items())), trace_digest=digest)


def _epoch_metrics(config: RunConfig, agents: Sequence[OperatorState],
                   tasks: Sequence[TaskSpec], allocation: AllocationVector,
                   missed_operators: set[str],
                   payment_logs: list[PaymentWindowLog]) -> MetricsReport:
    if config.scenario == "sequencer":
        outputs: dict[str, float] = {}
        consensus_scores: dict[str, float] = {}
        performance_scores: dict[str, float] = {}
        costs: dict[str, float] = {}
        for agent in agents:
            total_c = total_s = total_cost = 0.0
            for task in tasks:
                units = allocation.get(agent.id, task.id)
                c, s = evaluate_scores(agent, task, units)
                total_c += c
                total_s += s
                total_cost += task.cost_rate * units
            if total_c + total_s <= 0:
                continue  # idle node: performed no validation work this epoch
            outputs[agent.id] = allocation.operator_total(agent.id)
            consensus_scores[agent.id] = total_c
            performance_scores[agent.id] = total_s
            costs[agent.id] = total_cost
        if not outputs:
            return MetricsReport()
        total_resources = math.fsum(a.resources for a in agents)
        log = SequencerRunLog(
            outputs=outputs, consensus_scores=consensus_scores,
            performance_scores=performance_scores,
            failures=len(missed_operators & set(outputs)),
            costs=costs, total_resources=total_resources)
        return MetricsReport(sequencer=sequencer_metrics(log))

    transactions: dict[str, float] = {}
    validation_costs: dict[str, float] = {}
    errors: dict[str, float] = {}
    penalties: dict[str, float] = {}
    profit = 0.0
    for op in sorted(config.operators, key=lambda o: o.id):
        params = op.payment
        assert params is not None  # guaranteed by config validation
        best = optimize_throughput(params)
        transactions[op.id] = best
        validation_costs[op.id] = params.validation_cost(best)
        errors[op.id] = params.expected_errors(best)
        penalties[op.id] = params.penalty(best)
        profit += payment_utility(params, best)
    payment_logs.append(PaymentWindowLog(
        transactions=transactions, validation_costs=validation_costs,
        errors=errors, penalties=penalties, profit=profit))
    # Totals describe this epoch only; growth compares the last two epochs.
    metrics = payment_metrics(payment_logs[-1:])
    if len(payment_logs) >= 2:
        growth = payment_metrics(payment_logs[-2:]).revenue_growth
        metrics = replace(metrics, revenue_growth=growth)
    return MetricsReport(payment=metrics)


# --- Report output ------------------------------------------------------------

_SEQUENCER_CSV_METRICS = ("throughput", "latency", "fault_tolerance", "efficiency")
_PAYMENT_CSV_METRICS = ("total_transactions", "validation_efficiency", "error_rate",
                        "revenue_growth", "total_penalties")


def _format_number(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_report(report: RunReport, fmt: str, destination: str | Path) -> None:
    """Serialize a run report as JSON (full document) or CSV (epoch metrics)."""
    if fmt not in ("json", "csv"):
        raise DomainError(f"format must be 'json' or 'csv', got '{fmt}'")
    path = Path(destination)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        return
    scenario = report.config["scenario"]
    names = _SEQUENCER_CSV_METRICS if scenario == "sequencer" else _PAYMENT_CSV_METRICS
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["epoch", "metric", "value"])
    for epoch in report.epochs:
        doc = _metrics_to_dict(epoch.metrics)
        section = doc.get(scenario, {})
        for name in names:
            writer.writerow([epoch.epoch, name, _format_number(section.get(name))])
    path.write_text(buffer.getvalue())


def read_report(path: str | Path) -> dict[str, Any]:
    """Load a JSON report document."""
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"report parse error at line {exc.lineno}: {exc.msg}",
                          line=exc.lineno, column=exc.colno) from exc
