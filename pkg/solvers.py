"""
Epoch-structured variance-reduced solvers: SAGA, SVRG, AVRG and plain SGD.

Every solver owns a mutable state object and advances it one epoch at a time over an
index order (a permutation under random reshuffling, N independent uniform draws under
sampling with replacement). Per-sample gradient evaluations are counted exactly on the
state so the per-epoch cost of each method can be audited.
"""

import copy
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from analysis import (
    ReferenceSolution,
    excess_risk,
    inner_differences,
    relative_mse,
    theorem_bound,
    theorem_constants,
)
from config import Config
from datasets import Dataset
from errors import DivergenceError, InvalidInputError
from losses import CurvatureConstants, LossModel, curvature, full_grad, sample_grad
from models import EpochTrace, RunConfig
from sampling import RngStream, is_permutation, random_permutation, uniform_indices

logger = logging.getLogger(__name__)

NO_PROVENANCE = (-1, -1)


@dataclass
class SolverState:
    """Fields shared by every solver: current iterate, epoch counter, evaluation counter."""

    w: np.ndarray
    epoch: int = 0
    grad_evals: int = 0

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    def clone(self):
        return copy.deepcopy(self)


@dataclass
class SgdState(SolverState):
    pass


@dataclass
class SagaState(SolverState):
    """
    SAGA gradient table with its running average.

    ``phi_table`` and ``provenance`` are only kept in diagnostic mode: row n holds the
    iterate whose gradient is stored for sample n, and the ``(epoch, iterate index)`` it
    was written at. Cells never written hold NaN and provenance (-1, -1).
    """

    grad_table: np.ndarray = None
    table_avg: np.ndarray = None
    phi_convention: str = "post-step"
    phi_table: Optional[np.ndarray] = None
    provenance: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.grad_table.shape[0]

    @property
    def diagnostic(self) -> bool:
        return self.phi_table is not None


@dataclass
class SvrgState(SolverState):
    w_snapshot: np.ndarray = None
    snapshot_full_grad: np.ndarray = None


@dataclass
class AvrgState(SolverState):
    """AVRG snapshot plus the amortized gradient g^t and its accumulator for g^{t+1}."""

    w_snapshot: np.ndarray = None
    g_current: np.ndarray = None
    g_accum: np.ndarray = None


class EpochSink:
    """
    Observer of one epoch's inner loop.

    Keeps the iterate transcript w_0, …, w_N when ``retain_iterates`` is set and passes
    every applied step to ``on_step(state, inner_index, sample_index, direction)``.
    """

    def __init__(
        self,
        retain_iterates: bool = True,
        on_step: Optional[Callable[[SolverState, int, int, np.ndarray], None]] = None,
    ):
        self.retain_iterates = retain_iterates
        self.on_step = on_step
        self.epoch: Optional[int] = None
        self.order: Optional[np.ndarray] = None
        self._iterates: List[np.ndarray] = []

    def begin(self, epoch: int, order: np.ndarray, w: np.ndarray) -> None:
        self.epoch = epoch
        self.order = np.array(order, dtype=np.int64)
        self._iterates = [w.copy()] if self.retain_iterates else []

    def step(self, state: SolverState, inner_index: int, sample_index: int, direction: np.ndarray) -> None:
        if self.retain_iterates:
            self._iterates.append(state.w.copy())
        if self.on_step is not None:
            self.on_step(state, inner_index, sample_index, direction)

    @property
    def transcript(self) -> np.ndarray:
        if not self._iterates:
            raise InvalidInputError("No iterates were retained for this epoch")
        return np.array(self._iterates)


def _grad(state: SolverState, model: LossModel, dataset: Dataset, w: np.ndarray, n: int) -> np.ndarray:
    """Counted per-sample gradient evaluation."""
    state.grad_evals += 1
    return sample_grad(model, w, dataset[n])


def _check_step(mu: float) -> None:
    if not np.isfinite(mu) or mu < 0:
        raise InvalidInputError(f"Step size must be a finite nonnegative number, got {mu}")


def _check_order(order: Sequence[int], n: int, require_permutation: bool = False) -> np.ndarray:
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n,):
        raise InvalidInputError(f"Epoch order must hold {n} indices, got shape {order.shape}")
    if np.any(order < 0) or np.any(order >= n):
        raise InvalidInputError(f"Epoch order has indices outside 0..{n - 1}")
    if require_permutation and not is_permutation(order, n):
        raise InvalidInputError("AVRG requires random reshuffling: the epoch order must be a permutation")
    return order


def _check_finite(w: np.ndarray, solver: str, epoch: int, inner_index: int) -> None:
    if not np.all(np.isfinite(w)):
        raise DivergenceError(solver, epoch, inner_index)


def initial_state(
    solver: str,
    dataset: Dataset,
    diagnostic: bool = False,
    phi_convention: str = "post-step",
    w0: Optional[np.ndarray] = None,
) -> SolverState:
    """
    Fresh solver state at w0 (zeros by default).

    SAGA starts from a zero gradient table; AVRG starts with g^0 = 0.
    """
    dim = dataset.dim
    w = np.zeros(dim) if w0 is None else np.array(w0, dtype=float)
    if w.shape != (dim,):
        raise InvalidInputError(f"Initial iterate has shape {w.shape}, expected ({dim},)")

    if solver == "sgd":
        return SgdState(w=w)
    if solver == "saga":
        if phi_convention not in ("post-step", "pre-step"):
            raise InvalidInputError(f"Unknown phi convention {phi_convention!r}")
        state = SagaState(
            w=w,
            grad_table=np.zeros((dataset.n, dim)),
            table_avg=np.zeros(dim),
            phi_convention=phi_convention,
        )
        if diagnostic:
            state.phi_table = np.full((dataset.n, dim), np.nan)
            state.provenance = np.tile(np.array(NO_PROVENANCE, dtype=np.int64), (dataset.n, 1))
        return state
    if solver == "svrg":
        return SvrgState(w=w, w_snapshot=w.copy(), snapshot_full_grad=np.zeros(dim))
    if solver == "avrg":
        return AvrgState(w=w, w_snapshot=w.copy(), g_current=np.zeros(dim), g_accum=np.zeros(dim))
    raise InvalidInputError(f"Unknown solver {solver!r}; expected one of {', '.join(SOLVERS)}")


# ---------------------------------------------------------------------------
# SAGA
# ---------------------------------------------------------------------------

def saga_gradient_estimate(
    state: SagaState, dataset: Dataset, model: LossModel, w: np.ndarray, n: int
) -> np.ndarray:
    """∇Q(w; x_n) − grad_table[n] + table_avg. Does not touch the state or its counter."""
    if not 0 <= n < state.n:
        raise InvalidInputError(f"Sample index {n} outside 0..{state.n - 1}")
    return sample_grad(model, w, dataset[n]) - state.grad_table[n] + state.table_avg


def saga_step(
    state: SagaState,
    dataset: Dataset,
    model: LossModel,
    n: int,
    mu: float,
    inner_index: int,
) -> np.ndarray:
    """
    One SAGA inner iteration on sample ``n``; returns the applied direction.

    Under the post-step convention the table cell is rewritten with ∇Q(w_{i+1}; x_n)
    at the new iterate (two evaluations). Under pre-step the gradient already computed
    at w_i is stored (one evaluation).
    """
    w = state.w
    fresh = _grad(state, model, dataset, w, n)
    direction = fresh - state.grad_table[n] + state.table_avg
    w_next = w - mu * direction
    _check_finite(w_next, "saga", state.epoch, inner_index)

    if state.phi_convention == "post-step":
        stored = _grad(state, model, dataset, w_next, n)
        phi, iterate_index = w_next, inner_index + 1
    else:
        stored = fresh
        phi, iterate_index = w, inner_index

    state.table_avg = state.table_avg + (stored - state.grad_table[n]) / state.n
    state.grad_table[n] = stored
    if state.diagnostic:
        state.phi_table[n] = phi
        state.provenance[n] = (state.epoch, iterate_index)
    state.w = w_next
    return direction


def _resync_table(state: SagaState) -> None:
    exact = state.grad_table.mean(axis=0)
    scale = max(float(np.linalg.norm(exact)), np.finfo(float).tiny)
    drift = float(np.linalg.norm(state.table_avg - exact)) / scale
    if drift > Config.TABLE_RESYNC_TOL:
        logger.warning("SAGA table average drifted by %.3e (relative) before resync", drift)
    state.table_avg = exact


def saga_epoch(
    state: SagaState,
    dataset: Dataset,
    model: LossModel,
    order: Sequence[int],
    mu: float,
    sink: Optional[EpochSink] = None,
) -> SagaState:
    """Run one SAGA epoch over ``order`` and resynchronize the table average."""
    _check_step(mu)
    order = _check_order(order, state.n)
    if sink is not None:
        sink.begin(state.epoch, order, state.w)
    for i, n in enumerate(order):
        direction = saga_step(state, dataset, model, int(n), mu, i)
        if sink is not None:
            sink.step(state, i, int(n), direction)
    _resync_table(state)
    state.epoch += 1
    return state


def history_observation_violations(
    state: SagaState,
    start: SagaState,
    order: Sequence[int],
    steps_done: int,
    iterates: Optional[np.ndarray] = None,
) -> List[str]:
    """
    Check where every history cell points after ``steps_done`` reshuffled inner steps.

    Cells of the samples already visited this epoch must hold this epoch's iterates in
    visiting order; every other cell must still hold what it held at the epoch start.

    Args:
        state: diagnostic SAGA state in the middle of epoch ``start.epoch``
        start: clone of the same state taken at the epoch start
        order: the epoch's permutation
        steps_done: number of inner steps already applied (i)
        iterates: optional transcript w_0..w_i; when given, stored iterates are compared
            by value as well

    Returns:
        Human-readable descriptions of every violation (empty when all hold)
    """
    if not state.diagnostic or not start.diagnostic:
        raise InvalidInputError("History checks need diagnostic SAGA states")
    offset = 1 if state.phi_convention == "post-step" else 0
    epoch = start.epoch
    violations = []
    for k, n in enumerate(order):
        n = int(n)
        if k < steps_done:
            expected = (epoch, k + offset)
            if tuple(state.provenance[n]) != expected:
                violations.append(
                    f"sample {n}: provenance {tuple(state.provenance[n])}, expected {expected}"
                )
            if iterates is not None and not np.array_equal(state.phi_table[n], iterates[k + offset]):
                violations.append(f"sample {n}: stored iterate differs from w_{k + offset}")
        else:
            if tuple(state.provenance[n]) != tuple(start.provenance[n]):
                violations.append(
                    f"sample {n}: rewritten before being visited "
                    f"(provenance {tuple(state.provenance[n])})"
                )
            if not np.array_equal(state.phi_table[n], start.phi_table[n], equal_nan=True):
                violations.append(f"sample {n}: stored iterate changed before being visited")
    return violations


class HistoryAudit:
    """
    ``EpochSink.on_step`` observer running ``history_observation_violations`` after
    every inner step of one reshuffled diagnostic SAGA epoch.

    Build it from the state and order of the epoch about to run; violations are
    collected, prefixed with the inner index they were found at.
    """

    def __init__(self, start: SagaState, order: Sequence[int]):
        if not start.diagnostic:
            raise InvalidInputError("History audits need a diagnostic SAGA state")
        self.start = start.clone()
        self.order = np.array(order, dtype=np.int64)
        self.iterates: List[np.ndarray] = [start.w.copy()]
        self.steps_checked = 0
        self.violations: List[str] = []

    def __call__(self, state: SagaState, inner_index: int, sample_index: int, direction: np.ndarray) -> None:
        self.iterates.append(state.w.copy())
        found = history_observation_violations(
            state, self.start, self.order, inner_index + 1, np.array(self.iterates)
        )
        self.violations.extend(f"step {inner_index}: {v}" for v in found)
        self.steps_checked += 1


def history_gradients(state: SagaState, dataset: Dataset, model: LossModel) -> np.ndarray:
    """
    ∇Q(φ_n; x_n) for every history cell, recomputed from the stored iterates.

    Cells that were never written hold the zero gradient of the initial table.
    Non-diagnostic states have no stored iterates; their gradient table is returned.
    """
    if not state.diagnostic:
        return state.grad_table.copy()
    grads = np.zeros_like(state.grad_table)
    for n in range(state.n):
        if tuple(state.provenance[n]) != NO_PROVENANCE:
            grads[n] = sample_grad(model, state.phi_table[n], dataset[n])
    return grads


# ---------------------------------------------------------------------------
# SVRG
# ---------------------------------------------------------------------------

def svrg_epoch(
    state: SvrgState,
    dataset: Dataset,
    model: LossModel,
    order: Sequence[int],
    mu: float,
    sink: Optional[EpochSink] = None,
) -> SvrgState:
    """
    One SVRG epoch: a full-gradient pass at the snapshot (N evaluations) followed by N
    inner steps with two evaluations each, 3N in total.
    """
    _check_step(mu)
    order = _check_order(order, dataset.n)
    state.w_snapshot = state.w.copy()
    state.snapshot_full_grad = full_grad(model, state.w_snapshot, dataset)
    state.grad_evals += dataset.n

    if sink is not None:
        sink.begin(state.epoch, order, state.w)
    for i, n in enumerate(order):
        n = int(n)
        direction = (
            _grad(state, model, dataset, state.w, n)
            - _grad(state, model, dataset, state.w_snapshot, n)
            + state.snapshot_full_grad
        )
        state.w = state.w - mu * direction
        _check_finite(state.w, "svrg", state.epoch, i)
        if sink is not None:
            sink.step(state, i, n, direction)

    state.w_snapshot = state.w.copy()
    state.epoch += 1
    return state


# ---------------------------------------------------------------------------
# AVRG
# ---------------------------------------------------------------------------

def avrg_gradient_estimate(
    state: AvrgState, dataset: Dataset, model: LossModel, w: np.ndarray, n: int
) -> np.ndarray:
    """∇Q(w; x_n) − ∇Q(w_snapshot; x_n) + g^t, without mutation."""
    return (
        sample_grad(model, w, dataset[n])
        - sample_grad(model, state.w_snapshot, dataset[n])
        + state.g_current
    )


def avrg_epoch(
    state: AvrgState,
    dataset: Dataset,
    model: LossModel,
    order: Sequence[int],
    mu: float,
    sink: Optional[EpochSink] = None,
) -> AvrgState:
    """
    One AVRG epoch over a permutation.

    Each inner step evaluates ∇Q(w_i; x_n) once, using it both for the step and for
    the accumulation of g^{t+1}, plus ∇Q(w_0; x_n): 2N evaluations per epoch.

    Raises:
        InvalidInputError: if ``order`` is not a permutation
    """
    _check_step(mu)
    order = _check_order(order, dataset.n, require_permutation=True)
    state.w_snapshot = state.w.copy()
    state.g_accum = np.zeros(state.dim)

    if sink is not None:
        sink.begin(state.epoch, order, state.w)
    for i, n in enumerate(order):
        n = int(n)
        fresh = _grad(state, model, dataset, state.w, n)
        direction = fresh - _grad(state, model, dataset, state.w_snapshot, n) + state.g_current
        state.g_accum = state.g_accum + fresh / dataset.n
        state.w = state.w - mu * direction
        _check_finite(state.w, "avrg", state.epoch, i)
        if sink is not None:
            sink.step(state, i, n, direction)

    state.g_current = state.g_accum
    state.w_snapshot = state.w.copy()
    state.epoch += 1
    return state


# ---------------------------------------------------------------------------
# SGD
# ---------------------------------------------------------------------------

def sgd_epoch(
    state: SgdState,
    dataset: Dataset,
    model: LossModel,
    order: Sequence[int],
    mu: float,
    sink: Optional[EpochSink] = None,
) -> SgdState:
    _check_step(mu)
    order = _check_order(order, dataset.n)
    if sink is not None:
        sink.begin(state.epoch, order, state.w)
    for i, n in enumerate(order):
        n = int(n)
        direction = _grad(state, model, dataset, state.w, n)
        state.w = state.w - mu * direction
        _check_finite(state.w, "sgd", state.epoch, i)
        if sink is not None:
            sink.step(state, i, n, direction)
    state.epoch += 1
    return state


SOLVERS: Dict[str, Callable] = {
    "sgd": sgd_epoch,
    "saga": saga_epoch,
    "svrg": svrg_epoch,
    "avrg": avrg_epoch,
}

# Theorem whose step-size bound calibrates --mu-frac for each solver
BOUND_KIND = {"sgd": "saga-rr", "saga": "saga-rr", "svrg": "avrg", "avrg": "avrg"}

# Inner-difference summation range per solver
DIFFERENCE_CONVENTION = {"sgd": "saga", "saga": "saga", "svrg": "avrg", "avrg": "avrg"}


def energy_kind(solver: str, sampling: str) -> Optional[str]:
    """Theorem covering (solver, sampling), or None when no energy function applies."""
    if solver == "saga" and sampling == "rr":
        return "saga-rr"
    if solver == "avrg":
        return "avrg"
    return None


def resolve_step_size(config: RunConfig, constants: CurvatureConstants, n: int) -> float:
    if config.mu is not None:
        return float(config.mu)
    return config.mu_frac * theorem_bound(BOUND_KIND[config.solver], constants, n)


def draw_order(rng: RngStream, n: int, sampling: str) -> np.ndarray:
    if sampling == "rr":
        return random_permutation(rng, n)
    if sampling == "uniform":
        return uniform_indices(rng, n, n)
    raise InvalidInputError(f"Unknown sampling scheme {sampling!r}")


@dataclass
class EpochRecord:
    """Everything needed to replay or audit one epoch of a run."""

    epoch: int
    order: np.ndarray
    iterates: np.ndarray
    w_snapshot: Optional[np.ndarray] = None
    g_current: Optional[np.ndarray] = None


@dataclass
class RunTranscript:
    traces: List[EpochTrace]
    step_size: float
    state: SolverState
    records: List[EpochRecord] = field(default_factory=list)


def run_detailed(
    config: RunConfig,
    dataset: Dataset,
    model: LossModel,
    reference: ReferenceSolution,
    run_index: int = 0,
    keep_records: bool = False,
    w0: Optional[np.ndarray] = None,
) -> RunTranscript:
    """
    Execute ``config.epochs`` epochs of one seeded run.

    Row t of the trace is measured at the epoch-start iterate w_0^t. With diagnostics on,
    ``a_sq`` is epoch t's forward inner-difference sum and ``b_sq`` epoch t−1's backward
    sum, and ``energy`` is filled in for SAGA under reshuffling and for AVRG.

    Args:
        config: validated run configuration
        dataset: training data
        model: loss definition (its rho should match ``config.resolve_rho``)
        reference: minimizer used for the metrics
        run_index: selects the run's random stream (base_seed, run_index)
        keep_records: retain per-epoch orders and iterate transcripts
        w0: starting iterate (zeros by default)

    Returns:
        RunTranscript with one EpochTrace per epoch

    Raises:
        DivergenceError: if an iterate becomes non-finite
    """
    constants = curvature(model, dataset)
    n = dataset.n
    mu = resolve_step_size(config, constants, n)
    rng = RngStream.for_run(config.base_seed, run_index)
    state = initial_state(config.solver, dataset, config.diagnostic, config.phi_convention, w0)
    epoch_fn = SOLVERS[config.solver]

    kind = energy_kind(config.solver, config.sampling) if config.diagnostic else None
    gamma = coefficient = None
    if kind is not None:
        constants_t = theorem_constants(
            kind, mu, constants, n, config.gamma_variant, config.alpha_variant
        )
        gamma, coefficient = constants_t.gamma, constants_t.energy_coefficient

    retain = config.diagnostic or keep_records
    convention = DIFFERENCE_CONVENTION[config.solver]
    traces: List[EpochTrace] = []
    records: List[EpochRecord] = []
    previous_b = 0.0

    for t in range(config.epochs):
        w_start = state.w.copy()
        rel = relative_mse(w_start, reference)
        risk_gap = excess_risk(model, dataset, w_start, reference)
        snapshot = getattr(state, "w_snapshot", None)
        g_current = getattr(state, "g_current", None)
        snapshot = None if snapshot is None else snapshot.copy()
        g_current = None if g_current is None else g_current.copy()

        order = draw_order(rng, n, config.sampling)
        sink = EpochSink(retain_iterates=retain) if retain else None
        evals_before = state.grad_evals
        try:
            epoch_fn(state, dataset, model, order, mu, sink)
        except DivergenceError:
            logger.error("Run %d of %s diverged in epoch %d (mu=%.3e)", run_index, config.solver, t, mu)
            raise

        trace = EpochTrace(
            epoch=t,
            rel_mse=rel,
            excess_risk=risk_gap,
            grad_evals=state.grad_evals - evals_before,
        )
        if config.diagnostic:
            a_sq, b_sq = inner_differences(sink.transcript, convention)
            trace.a_sq, trace.b_sq = a_sq, previous_b
            previous_b = b_sq
            if kind is not None:
                trace.energy = rel * reference.sq_norm + coefficient * gamma * (trace.a_sq + trace.b_sq)
        if keep_records:
            records.append(EpochRecord(t, order, sink.transcript, snapshot, g_current))

        logger.debug("run %d epoch %d: rel_mse=%.6e excess=%.6e", run_index, t, rel, risk_gap)
        traces.append(trace)

    return RunTranscript(traces, mu, state, records)


def run(
    config: RunConfig,
    dataset: Dataset,
    model: LossModel,
    reference: ReferenceSolution,
    run_index: int = 0,
) -> List[EpochTrace]:
    """Trace of one seeded run; see ``run_detailed``."""
    return run_detailed(config, dataset, model, reference, run_index).traces


def run_seeds(
    config: RunConfig,
    dataset: Dataset,
    model: LossModel,
    reference: ReferenceSolution,
    workers: Optional[int] = None,
    progress: bool = False,
) -> List[List[EpochTrace]]:
    """
    Traces of every run index in ``config.seed_list()``, returned in that order.

    With ``workers > 1`` runs are spread over a process pool; each run owns its stream,
    so the result does not depend on scheduling.
    """
    indices = config.seed_list()
    workers = Config.WORKERS if workers is None else workers
    logger.info(
        "Running %s/%s for %d epochs over %d seed(s) with %d worker(s)",
        config.solver,
        config.sampling,
        config.epochs,
        len(indices),
        workers,
    )
    if workers > 1 and len(indices) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [
                executor.submit(run, config, dataset, model, reference, index) for index in indices
            ]
            return [
                future.result()
                for future in tqdm(futures, desc="seeds", unit="run", disable=not progress)
            ]
    return [
        run(config, dataset, model, reference, index)
        for index in tqdm(indices, desc="seeds", unit="run", disable=not progress)
    ]


def _mean_optional(values: List[Optional[float]]) -> Optional[float]:
    if any(v is None for v in values):
        return None
    return float(np.mean(values))


def aggregate_traces(seed_traces: Sequence[Sequence[EpochTrace]]) -> List[EpochTrace]:
    """Per-epoch average over seeds (sums taken in seed order)."""
    if not seed_traces:
        raise InvalidInputError("Cannot aggregate an empty set of traces")
    lengths = {len(traces) for traces in seed_traces}
    if len(lengths) != 1:
        raise InvalidInputError(f"Seeds disagree on the number of epochs: {sorted(lengths)}")

    aggregated = []
    for rows in zip(*seed_traces):
        evals = float(np.mean([row.grad_evals for row in rows]))
        aggregated.append(
            EpochTrace(
                epoch=rows[0].epoch,
                rel_mse=float(np.mean([row.rel_mse for row in rows])),
                excess_risk=float(np.mean([row.excess_risk for row in rows])),
                grad_evals=int(evals) if evals.is_integer() else evals,
                a_sq=_mean_optional([row.a_sq for row in rows]),
                b_sq=_mean_optional([row.b_sq for row in rows]),
                energy=_mean_optional([row.energy for row in rows]),
            )
        )
    return aggregated


def prepare_problem(
    config: RunConfig, dataset: Dataset
) -> Tuple[LossModel, CurvatureConstants, float]:
    """Loss model, curvature constants and resolved step size for ``config`` on ``dataset``."""
    model = LossModel(config.loss, config.resolve_rho(dataset.n))
    constants = curvature(model, dataset)
    return model, constants, resolve_step_size(config, constants, dataset.n)
