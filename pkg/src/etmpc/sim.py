"""Deterministic closed-loop simulation of the event-triggered controller.

Each step of the event loop:

    1. apply the stored regional law, u(k) = K x(k) + b;
    2. predict x(k+1) = A x(k) + B u(k);
    3. if the prediction stays inside the current polytope, reuse the law
       (no network traffic); otherwise send the *predicted* state to the
       central node, decode the reply for the configured variant, and
       rebuild the law before step k+1 begins.

The very first law comes from a forced event at x(0), which doubles as the
feasibility check of the initial state.  The plant model is the exact
linear recursion, so the predicted state equals the measured one unless a
disturbance hook is installed; the law installed after an event is always
built from the prediction, never from the measurement.

``simulate_classical`` is the correctness oracle: a fresh QP solve at every
step, no regions, no network.  At full precision both loops must produce
the same closed-loop trajectory to within accumulated rounding.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .costmodel import Dims, FlopCounter, inverse_flops, predicted_bits, predicted_flops
from .errors import (
    CentralInfeasible,
    DegenerateActiveSet,
    EtmpcError,
    Infeasible,
    RankDeficient,
)
from .netio import CentralNode, LoopbackTransport, NodeClient
from .problem import CondensedQp, MpcProblem, condense
from .qp import identify_active_set, is_feasible, solve
from .region import build_region, build_region_from_inverse, contains, evaluate_law

__all__ = [
    "SimConfig", "StepRecord", "EventRecord", "Trajectory", "BatchError",
    "VariantAggregate", "BatchReport",
    "simulate_event_triggered", "simulate_classical",
    "sample_feasible_states", "run_batch", "max_state_deviation",
]

log = logging.getLogger(__name__)

_B16_EPS_ACTIVE = 1e-2  # identification slack once the input sequence is quantized


class BatchError(EtmpcError):
    """Per-run failure inside a batch, annotated with its indices."""

    def __init__(self, run_index: int, variant: str, cause: Exception):
        self.run_index = run_index
        self.variant = variant
        super().__init__(f"run {run_index} ({variant}): {cause}")


@dataclass(frozen=True)
class SimConfig:
    """Everything one closed-loop run depends on."""

    problem: MpcProblem
    x0: np.ndarray
    max_steps: int = 2000
    variant: str = "A1"
    backend: str = "lu-pivoted"
    precision: str = "full"            # "full" or "binary16-downlink"
    eps_stop: float = 1e-4
    stop_consecutive: int = 5
    eps_active: float = 1e-7
    count_flops: bool = True
    disturbance: object = None         # callable (k, x) -> additive state offset
    node_id: int = 1

    @property
    def wire_precision(self) -> str:
        return "half" if self.precision == "binary16-downlink" else "double"


@dataclass(frozen=True)
class StepRecord:
    k: int
    x: np.ndarray
    u: np.ndarray
    e: int
    q_active: int | None
    bits: int
    flops_inv: int
    flops_mat: int


@dataclass(frozen=True)
class EventRecord:
    step: int
    kind: str                    # "init" or "trigger"
    q_active: int | None
    bits_wire: int
    bits_predicted: int
    flops_inv: int               # analytic split for the variant's local work
    flops_mat: int
    flops_inv_counted: int | None = None
    flops_mat_counted: int | None = None


@dataclass
class Trajectory:
    steps: list[StepRecord] = field(default_factory=list)
    events: list[EventRecord] = field(default_factory=list)
    x_final: np.ndarray | None = None
    converged: bool = False
    aborted: str | None = None
    frames_sent: int = 0
    frames_received: int = 0
    variant: str = "A1"
    fallback_steps: int = 0

    @property
    def states(self) -> np.ndarray:
        xs = [s.x for s in self.steps]
        if self.x_final is not None:
            xs.append(self.x_final)
        return np.array(xs)

    @property
    def inputs(self) -> np.ndarray:
        return np.array([s.u for s in self.steps])

    @property
    def total_events(self) -> int:
        return len(self.events)

    @property
    def total_bits(self) -> int:
        return sum(ev.bits_wire for ev in self.events)

    def q_active_values(self) -> list[int]:
        return [ev.q_active for ev in self.events if ev.q_active is not None]


def _analytic_split(variant: str, dims: Dims) -> tuple[int, int]:
    """Local-node flop split per variant: inversion part vs everything else."""
    total = predicted_flops(variant, dims)
    if variant in ("A1", "A3"):
        inv = inverse_flops(dims.q_active)
        return inv, total - inv
    return 0, total


def _drop_input_independent_rows(qp: CondensedQp, aset) -> "ActiveSet":
    """Remove rows whose constraint does not involve the input sequence.

    Stage-zero state bounds have an all-zero row in G; they turn active
    whenever the current state touches its box, yet they can never belong
    to a full-row-rank active set and contribute nothing to the law.
    """
    from .region import ActiveSet

    keep = [i for i in aset.indices if np.any(qp.G[i - 1] != 0.0)]
    if len(keep) == len(aset.indices):
        return aset
    return ActiveSet(indices=tuple(keep), q=aset.q)


class _EventMachinery:
    """Shared event handling for the event-triggered loop."""

    def __init__(self, config: SimConfig, qp: CondensedQp, transport=None):
        self.config = config
        self.qp = qp
        self.central: CentralNode | None = None
        if transport is None:
            central = CentralNode()
            central.register(config.node_id, qp, config.variant, config.wire_precision)
            transport = LoopbackTransport(central)
            self.central = central
        elif isinstance(transport, LoopbackTransport):
            self.central = transport.central
        self.transport = transport
        self.client = NodeClient(
            transport, config.node_id, qp.dims, config.variant, config.wire_precision
        )
        self.counter = FlopCounter() if config.count_flops else None

    def handle(self, step: int, kind: str, x_request: np.ndarray):
        """One event round-trip; returns (region_or_None, EventRecord, build_error).

        The wire exchange is recorded even when the local rebuild fails;
        counted flops are then omitted since no complete schedule ran.
        """
        cfg, qp = self.config, self.qp
        decoded, msg = self.client.request_law(x_request)
        if self.counter is not None:
            self.counter.reset()
        q_active: int | None = None
        region = None
        build_error: Exception | None = None
        try:
            if cfg.variant == "A1":
                aset = decoded
                q_active = len(aset)
                region = build_region(qp, aset, cfg.backend, self.counter)
            elif cfg.variant == "A2":
                aset, gram_inv = decoded
                q_active = len(aset)
                region = build_region_from_inverse(qp, aset, gram_inv, self.counter)
            elif cfg.variant == "A3":
                eps = cfg.eps_active if cfg.wire_precision == "double" else _B16_EPS_ACTIVE
                aset = identify_active_set(qp, decoded, x_request, eps, self.counter)
                aset = _drop_input_independent_rows(qp, aset)
                q_active = len(aset)
                region = build_region(qp, aset, cfg.backend, self.counter)
            else:  # A4: the region arrives ready-made; q_active is central-side info
                region = decoded
                q_active = (
                    self.central.events_served(cfg.node_id)[-1]
                    if self.central is not None else None
                )
        except (DegenerateActiveSet, RankDeficient) as exc:
            build_error = exc
            # no law was established, so the event has no active-set size;
            # a degenerate identification may even exceed the mN cap
            q_active = None
        dims = Dims(*qp.dims, q_active=q_active or 0)
        inv, mat = _analytic_split(cfg.variant, dims)
        counted = (
            self.counter.snapshot()
            if self.counter is not None and build_error is None
            else (None, None)
        )
        record = EventRecord(
            step=step, kind=kind, q_active=q_active,
            bits_wire=msg.bit_length,
            bits_predicted=predicted_bits(cfg.variant, dims),
            flops_inv=inv, flops_mat=mat,
            flops_inv_counted=counted[0], flops_mat_counted=counted[1],
        )
        return region, record, build_error


def simulate_event_triggered(
    config: SimConfig,
    qp: CondensedQp | None = None,
    transport=None,
) -> Trajectory:
    """Run the event-triggered loop until the stop rule or max_steps."""
    qp = qp if qp is not None else condense(config.problem)
    A, B = config.problem.A, config.problem.B
    m = config.problem.m
    machinery = _EventMachinery(config, qp, transport)
    traj = Trajectory(variant=config.variant)

    x = np.asarray(config.x0, dtype=float).reshape(-1).copy()
    region = None
    try:
        region, record, build_error = machinery.handle(0, "init", x)
        traj.events.append(record)
        if build_error is not None:
            log.warning("initial regional build failed (%s); starting on per-step "
                        "solves", build_error)
    except CentralInfeasible as exc:
        raise Infeasible(f"initial state is infeasible: {exc}") from exc
    except (DegenerateActiveSet, RankDeficient) as exc:
        log.warning("central could not encode the initial law (%s); starting on "
                    "per-step solves", exc)

    consecutive = 0
    for k in range(config.max_steps):
        if region is not None:
            u = evaluate_law(region, x)
        else:
            # degenerate-recovery path: solve this step outright
            u = solve(qp, x, eps_active=config.eps_active).u_star[:m]
            traj.fallback_steps += 1
        x_pred = A @ x + B @ u
        e = 0
        step_bits = 0
        step_q = None
        step_inv = 0
        step_mat = 0
        if region is None or not contains(region, x_pred):
            e = 1
            try:
                region, record, build_error = machinery.handle(k, "trigger", x_pred)
                traj.events.append(record)
                step_bits = record.bits_wire
                step_q = record.q_active
                step_inv, step_mat = record.flops_inv, record.flops_mat
                if build_error is not None:
                    log.warning("step %d: regional rebuild failed (%s); "
                                "falling back to per-step solves", k, build_error)
            except (DegenerateActiveSet, RankDeficient) as exc:
                log.warning("step %d: central could not encode the law (%s); "
                            "falling back to per-step solves", k, exc)
                region = None
            except CentralInfeasible as exc:
                traj.steps.append(StepRecord(k, x, u, e, None, 0, 0, 0))
                traj.x_final = x_pred
                traj.aborted = f"central infeasible at step {k}: {exc}"
                break
        disturbance = config.disturbance(k, x) if config.disturbance else 0.0
        x_next = x_pred + disturbance
        traj.steps.append(StepRecord(k, x, u, e, step_q, step_bits, step_inv, step_mat))
        x = x_next
        if np.max(np.abs(x)) <= config.eps_stop:
            consecutive += 1
            if consecutive >= config.stop_consecutive:
                traj.converged = True
                break
        else:
            consecutive = 0
    traj.x_final = x if traj.aborted is None else traj.x_final
    traj.frames_sent = getattr(machinery.transport, "requests_sent", 0)
    traj.frames_received = getattr(machinery.transport, "replies_received", 0)
    return traj


def simulate_classical(config: SimConfig, qp: CondensedQp | None = None) -> Trajectory:
    """Solve the QP at every step; the oracle loop for equivalence checks."""
    qp = qp if qp is not None else condense(config.problem)
    A, B = config.problem.A, config.problem.B
    m = config.problem.m
    traj = Trajectory(variant="classical")
    x = np.asarray(config.x0, dtype=float).reshape(-1).copy()
    consecutive = 0
    for k in range(config.max_steps):
        try:
            sol = solve(qp, x, eps_active=config.eps_active)
        except Infeasible as exc:
            traj.aborted = f"infeasible at step {k}: {exc}"
            traj.x_final = x
            return traj
        u = sol.u_star[:m]
        traj.steps.append(StepRecord(k, x, u, 0, None, 0, 0, 0))
        x = A @ x + B @ u
        if config.disturbance:
            x = x + config.disturbance(k, traj.steps[-1].x)
        if np.max(np.abs(x)) <= config.eps_stop:
            consecutive += 1
            if consecutive >= config.stop_consecutive:
                traj.converged = True
                break
        else:
            consecutive = 0
    traj.x_final = x
    return traj


def max_state_deviation(a: Trajectory, b: Trajectory) -> float:
    """Max infinity-norm gap between two trajectories, step by step."""
    xa, xb = a.states, b.states
    steps = min(len(xa), len(xb))
    if steps == 0:
        return 0.0
    return float(np.max(np.abs(xa[:steps] - xb[:steps])))


def sample_feasible_states(
    problem: MpcProblem,
    count: int,
    seed: int,
    qp: CondensedQp | None = None,
) -> list[np.ndarray]:
    """Uniform rejection sampling over the state box, keeping feasible draws."""
    if count < 1:
        raise ValueError("count must be at least 1")
    qp = qp if qp is not None else condense(problem)
    rng = np.random.default_rng(seed)
    out: list[np.ndarray] = []
    attempts_this_sample = 0
    while len(out) < count:
        x = rng.uniform(problem.x_lo, problem.x_hi)
        attempts_this_sample += 1
        if is_feasible(qp, x):
            out.append(x)
            attempts_this_sample = 0
        elif attempts_this_sample >= 10**6:
            raise EtmpcError(
                "rejection sampling exceeded 1e6 attempts for one sample; "
                "the feasible set is a tiny fraction of the state box -- "
                "consider a smaller box"
            )
    return out


@dataclass
class VariantAggregate:
    variant: str
    runs: int = 0
    steps: int = 0
    events: int = 0
    bits: int = 0
    flops_inv: int = 0
    flops_mat: int = 0
    q_active_hist: Counter = field(default_factory=Counter)
    converged_runs: int = 0

    @property
    def event_rate(self) -> float:
        return self.events / self.steps if self.steps else 0.0


@dataclass
class BatchReport:
    problem_name: str
    count: int
    seed: int
    backend: str
    aggregates: dict[str, VariantAggregate] = field(default_factory=dict)
    initial_states: list[np.ndarray] = field(default_factory=list)


def run_batch(
    problem: MpcProblem,
    count: int,
    seed: int,
    variants: tuple[str, ...] = ("A1",),
    backend: str = "lu-pivoted",
    precision: str = "full",
    max_steps: int = 2000,
    qp: CondensedQp | None = None,
) -> BatchReport:
    """Event-triggered runs for ``count`` sampled feasible initial states.

    Runs every variant over the same initial states and aggregates events,
    bits, flop splits, and the active-set-size histogram per variant.
    """
    qp = qp if qp is not None else condense(problem)
    states = sample_feasible_states(problem, count, seed, qp)
    report = BatchReport(problem_name=problem.name or "problem", count=count,
                         seed=seed, backend=backend, initial_states=states)
    for variant in variants:
        agg = VariantAggregate(variant=variant)
        for i, x0 in enumerate(states):
            config = SimConfig(
                problem=problem, x0=x0, variant=variant, backend=backend,
                precision=precision, max_steps=max_steps,
            )
            try:
                traj = simulate_event_triggered(config, qp=qp)
            except EtmpcError as exc:
                raise BatchError(i, variant, exc) from exc
            agg.runs += 1
            agg.steps += len(traj.steps)
            agg.events += traj.total_events
            agg.bits += traj.total_bits
            agg.flops_inv += sum(ev.flops_inv for ev in traj.events)
            agg.flops_mat += sum(ev.flops_mat for ev in traj.events)
            agg.q_active_hist.update(traj.q_active_values())
            agg.converged_runs += int(traj.converged)
        report.aggregates[variant] = agg
    return report
