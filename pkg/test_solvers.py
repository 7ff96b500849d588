"""
Solver tests: update rules, gradient accounting, history-table bookkeeping and the
multi-seed driver
"""

import pickle

import numpy as np
import pytest
from pydantic import ValidationError

from analysis import inner_differences, reference_minimizer, theorem_bound, theorem_constants
from datasets import Dataset, synth_logistic
from errors import ConvergenceError, DivergenceError, InvalidInputError
from losses import LossModel, curvature, full_grad, sample_grad
from models import EpochTrace, RunConfig
from sampling import RngStream, random_permutation
from solvers import (
    SOLVERS,
    EpochSink,
    HistoryAudit,
    aggregate_traces,
    avrg_gradient_estimate,
    draw_order,
    history_gradients,
    history_observation_violations,
    initial_state,
    prepare_problem,
    resolve_step_size,
    run,
    run_detailed,
    run_seeds,
    saga_epoch,
    saga_gradient_estimate,
    saga_step,
)


def _config(**overrides):
    values = {
        "solver": "saga",
        "mu_frac": 1.0,
        "epochs": 5,
        "source": {"kind": "synthetic", "n": 8, "m": 3},
        "rho": 1.0 / 8,
    }
    values.update(overrides)
    return RunConfig(**values)


@pytest.mark.parametrize(
    "solver, sampling, convention, per_n",
    [
        ("sgd", "rr", "post-step", 1),
        ("saga", "rr", "post-step", 2),
        ("saga", "rr", "pre-step", 1),
        ("saga", "uniform", "pre-step", 1),
        ("svrg", "rr", "post-step", 3),
        ("svrg", "uniform", "post-step", 3),
        ("avrg", "rr", "post-step", 2),
    ],
)
def test_gradient_evaluations_per_epoch(small_dataset, logistic_model, saga_step_size, solver, sampling, convention, per_n):
    state = initial_state(solver, small_dataset, phi_convention=convention)
    rng = RngStream(0)
    for epoch in range(3):
        before = state.grad_evals
        SOLVERS[solver](state, small_dataset, logistic_model, draw_order(rng, 8, sampling), saga_step_size)
        assert state.grad_evals - before == per_n * 8
        assert state.epoch == epoch + 1


def test_avrg_rejects_non_permutation(small_dataset, logistic_model, saga_step_size):
    state = initial_state("avrg", small_dataset)
    with pytest.raises(InvalidInputError):
        SOLVERS["avrg"](state, small_dataset, logistic_model, [0, 0, 1, 2, 3, 4, 5, 6], saga_step_size)


def test_avrg_uniform_config_is_rejected():
    with pytest.raises(ValidationError):
        _config(solver="avrg", sampling="uniform")


@pytest.mark.parametrize("bad", [[0, 1, 2], [0, 1, 2, 3, 4, 5, 6, 8]])
def test_orders_are_validated(small_dataset, logistic_model, saga_step_size, bad):
    state = initial_state("saga", small_dataset)
    with pytest.raises(InvalidInputError):
        saga_epoch(state, small_dataset, logistic_model, bad, saga_step_size)


def test_negative_step_is_rejected(small_dataset, logistic_model):
    state = initial_state("sgd", small_dataset)
    with pytest.raises(InvalidInputError):
        SOLVERS["sgd"](state, small_dataset, logistic_model, np.arange(8), -1.0)


def test_unknown_solver_and_sampling(small_dataset):
    with pytest.raises(InvalidInputError):
        initial_state("adam", small_dataset)
    with pytest.raises(InvalidInputError):
        draw_order(RngStream(0), 8, "cyclic")


def test_saga_table_average_matches_table(small_dataset, logistic_model, saga_step_size):
    state = initial_state("saga", small_dataset)
    rng = RngStream(4)
    for _ in range(4):
        saga_epoch(state, small_dataset, logistic_model, random_permutation(rng, 8), saga_step_size)
        np.testing.assert_array_equal(state.table_avg, state.grad_table.mean(axis=0))


def test_saga_post_step_table_holds_gradients_at_stored_iterates(small_dataset, logistic_model, saga_step_size):
    state = initial_state("saga", small_dataset, diagnostic=True)
    saga_epoch(state, small_dataset, logistic_model, random_permutation(RngStream(1), 8), saga_step_size)
    for n in range(8):
        expected = sample_grad(logistic_model, state.phi_table[n], small_dataset[n])
        np.testing.assert_allclose(state.grad_table[n], expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize("convention, offset", [("post-step", 1), ("pre-step", 0)])
def test_saga_provenance_after_reshuffled_epoch(small_dataset, logistic_model, saga_step_size, convention, offset):
    state = initial_state("saga", small_dataset, diagnostic=True, phi_convention=convention)
    assert np.all(np.isnan(state.phi_table))
    assert np.all(state.provenance == -1)

    order = random_permutation(RngStream(2), 8)
    sink = EpochSink()
    saga_epoch(state, small_dataset, logistic_model, order, saga_step_size, sink)
    transcript = sink.transcript
    assert transcript.shape == (9, 3)
    for k, n in enumerate(order):
        assert tuple(state.provenance[n]) == (0, k + offset)
        np.testing.assert_array_equal(state.phi_table[n], transcript[k + offset])


def test_history_cells_mid_epoch(small_dataset, logistic_model, saga_step_size):
    rng = RngStream(6)
    state = initial_state("saga", small_dataset, diagnostic=True)
    saga_epoch(state, small_dataset, logistic_model, random_permutation(rng, 8), saga_step_size)
    start = state.clone()
    order = random_permutation(rng, 8)
    iterates = [state.w.copy()]
    for k in range(5):
        saga_step(state, small_dataset, logistic_model, int(order[k]), saga_step_size, k)
        iterates.append(state.w.copy())
    assert history_observation_violations(state, start, order, 5, np.array(iterates)) == []

    state.phi_table[int(order[6])] = 0.0
    assert history_observation_violations(state, start, order, 5) != []


def test_saga_gradient_estimate_does_not_mutate(small_dataset, logistic_model, saga_step_size):
    state = initial_state("saga", small_dataset)
    saga_epoch(state, small_dataset, logistic_model, np.arange(8), saga_step_size)
    before = state.clone()
    saga_gradient_estimate(state, small_dataset, logistic_model, state.w, 3)
    assert state.grad_evals == before.grad_evals
    np.testing.assert_array_equal(state.grad_table, before.grad_table)


def test_single_sample_saga_is_gradient_descent():
    dataset = synth_logistic(1, 3, 7)
    model = LossModel("logistic-l2", 1.0)
    state = initial_state("saga", dataset)
    mu = 0.3
    for _ in range(20):
        w = state.w.copy()
        saga_epoch(state, dataset, model, [0], mu)
        expected = w - mu * sample_grad(model, w, dataset[0])
        np.testing.assert_allclose(state.w, expected, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("solver", ["saga", "svrg", "avrg"])
def test_variance_reduced_solvers_converge(small_dataset, logistic_model, logistic_reference, solver):
    delta = curvature(logistic_model, small_dataset).delta
    mu = 1.0 / (3 * delta) if solver == "saga" else 0.1 / delta
    config = _config(solver=solver, mu_frac=None, mu=mu, epochs=100)
    traces = run(config, small_dataset, logistic_model, logistic_reference)
    assert traces[0].rel_mse == pytest.approx(1.0)
    assert traces[-1].rel_mse < 1e-2 * traces[0].rel_mse


def test_divergence_is_reported():
    dataset = synth_logistic(8, 3, 0)
    model = LossModel("quadratic-l2", 1.0 / 8)
    reference = reference_minimizer(model, dataset)
    config = _config(solver="sgd", mu_frac=None, mu=100.0, epochs=200, loss="quadratic-l2")
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError) as excinfo:
            run(config, dataset, model, reference)
    assert excinfo.value.solver == "sgd"


def test_runs_are_reproducible(small_dataset, logistic_model, logistic_reference):
    config = _config(epochs=4, diagnostic=True)
    first = run(config, small_dataset, logistic_model, logistic_reference, run_index=3)
    second = run(config, small_dataset, logistic_model, logistic_reference, run_index=3)
    other = run(config, small_dataset, logistic_model, logistic_reference, run_index=4)
    assert first == second
    assert first != other


def test_parallel_runs_match_sequential(small_dataset, logistic_model, logistic_reference):
    config = _config(seeds=3, epochs=3)
    sequential = run_seeds(config, small_dataset, logistic_model, logistic_reference, workers=1)
    parallel = run_seeds(config, small_dataset, logistic_model, logistic_reference, workers=2)
    assert sequential == parallel


def test_explicit_seed_list_selects_run_indices(small_dataset, logistic_model, logistic_reference):
    config = _config(seeds=[5, 2], epochs=2)
    traces = run_seeds(config, small_dataset, logistic_model, logistic_reference, workers=1)
    assert traces[0] == run(config, small_dataset, logistic_model, logistic_reference, 5)
    assert traces[1] == run(config, small_dataset, logistic_model, logistic_reference, 2)


def test_diagnostic_trace_fields(small_dataset, logistic_model, logistic_reference):
    config = _config(epochs=4, diagnostic=True)
    traces = run(config, small_dataset, logistic_model, logistic_reference)
    assert traces[0].b_sq == 0.0
    assert all(tr.a_sq is not None and tr.a_sq >= 0 for tr in traces)

    constants = curvature(logistic_model, small_dataset)
    mu = theorem_bound("saga-rr", constants, 8)
    theorem = theorem_constants("saga-rr", mu, constants, 8)
    for tr in traces:
        expected = tr.rel_mse * logistic_reference.sq_norm + 11 / 16 * theorem.gamma * (tr.a_sq + tr.b_sq)
        assert tr.energy == pytest.approx(expected, rel=1e-12)


def test_backward_sum_is_carried_to_next_epoch(small_dataset, logistic_model, logistic_reference):
    config = _config(epochs=3, diagnostic=True)
    transcript = run_detailed(config, small_dataset, logistic_model, logistic_reference, keep_records=True)
    for previous, record, trace in zip(transcript.records, transcript.records[1:], transcript.traces[1:]):
        _, b_sq = inner_differences(previous.iterates, "saga")
        assert trace.b_sq == b_sq
        a_sq, _ = inner_differences(record.iterates, "saga")
        assert trace.a_sq == a_sq


@pytest.mark.parametrize(
    "solver, sampling, has_energy",
    [("saga", "rr", True), ("saga", "uniform", False), ("avrg", "rr", True), ("svrg", "rr", False), ("sgd", "rr", False)],
)
def test_energy_only_where_a_theorem_applies(small_dataset, logistic_model, logistic_reference, solver, sampling, has_energy):
    config = _config(solver=solver, sampling=sampling, epochs=2, diagnostic=True)
    traces = run(config, small_dataset, logistic_model, logistic_reference)
    assert all((tr.energy is not None) == has_energy for tr in traces)
    assert all(tr.a_sq is not None for tr in traces)


def test_non_diagnostic_runs_leave_diagnostics_empty(small_dataset, logistic_model, logistic_reference):
    traces = run(_config(epochs=2), small_dataset, logistic_model, logistic_reference)
    assert all(tr.a_sq is None and tr.b_sq is None and tr.energy is None for tr in traces)


def test_mu_frac_scales_the_theorem_bound(small_dataset, logistic_model):
    constants = curvature(logistic_model, small_dataset)
    assert resolve_step_size(_config(mu_frac=0.5), constants, 8) == pytest.approx(
        0.5 * theorem_bound("saga-rr", constants, 8)
    )
    assert resolve_step_size(_config(solver="avrg", mu_frac=2.0), constants, 8) == pytest.approx(
        2.0 * theorem_bound("avrg", constants, 8)
    )
    assert resolve_step_size(_config(mu_frac=None, mu=0.01), constants, 8) == 0.01


def test_prepare_problem_resolves_rho(small_dataset):
    model, constants, mu = prepare_problem(_config(rho="1/N"), small_dataset)
    assert model.rho == pytest.approx(1 / 8)
    assert constants.nu == pytest.approx(1 / 8)
    assert mu > 0


def test_config_requires_exactly_one_step_size():
    with pytest.raises(ValidationError):
        _config(mu=0.1)
    with pytest.raises(ValidationError):
        _config(mu_frac=None)


def test_aggregate_traces():
    a = [EpochTrace(0, 1.0, 0.5, 16), EpochTrace(1, 0.5, 0.25, 16)]
    b = [EpochTrace(0, 3.0, 1.5, 16), EpochTrace(1, 1.5, 0.75, 16)]
    mean = aggregate_traces([a, b])
    assert mean[0] == EpochTrace(0, 2.0, 1.0, 16)
    assert mean[1].rel_mse == pytest.approx(1.0)
    assert isinstance(mean[0].grad_evals, int)
    with pytest.raises(InvalidInputError):
        aggregate_traces([a, a[:1]])
    with pytest.raises(InvalidInputError):
        aggregate_traces([])


def test_single_sample_avrg_is_lagged_gradient_descent():
    dataset = synth_logistic(1, 3, 7)
    model = LossModel("logistic-l2", 1.0)
    state = initial_state("avrg", dataset)
    mu = 0.3
    lagged = np.zeros(3)
    for _ in range(50):
        w = state.w.copy()
        SOLVERS["avrg"](state, dataset, model, [0], mu)
        np.testing.assert_allclose(state.w, w - mu * lagged, rtol=0, atol=1e-15)
        lagged = sample_grad(model, w, dataset[0])


def _quadratic_pair():
    return Dataset(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([1, -1])), LossModel("quadratic-l2", 0.5)


@pytest.mark.parametrize(
    "convention, w1, w2, table",
    [
        ("pre-step", [0.0, -0.1], [0.1, -0.145], [[-1.0, -0.05], [0.0, 1.0]]),
        ("post-step", [0.0, -0.1], [0.1, -0.1375], [[-0.85, -0.06875], [0.0, 0.85]]),
    ],
)
def test_saga_two_sample_epoch_matches_hand_transcript(convention, w1, w2, table):
    dataset, model = _quadratic_pair()
    state = initial_state("saga", dataset, phi_convention=convention)
    sink = EpochSink()
    saga_epoch(state, dataset, model, [1, 0], 0.1, sink)
    np.testing.assert_allclose(sink.transcript, [[0.0, 0.0], w1, w2], rtol=0, atol=1e-15)
    np.testing.assert_allclose(state.grad_table, table, rtol=0, atol=1e-15)
    np.testing.assert_allclose(state.table_avg, np.mean(table, axis=0), rtol=0, atol=1e-15)


def test_sgd_three_sample_epoch_matches_hand_transcript():
    dataset = Dataset(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), np.array([1, -1, 1]))
    model = LossModel("quadratic-l2", 0.5)
    state = initial_state("sgd", dataset)
    sink = EpochSink()
    SOLVERS["sgd"](state, dataset, model, [2, 0, 1], 0.1, sink)
    expected = [[0.0, 0.0], [0.1, 0.1], [0.185, 0.095], [0.17575, -0.01925]]
    np.testing.assert_allclose(sink.transcript, expected, rtol=0, atol=1e-15)
    assert state.grad_evals == 3


def test_avrg_accumulated_gradient_matches_transcript_replay(small_dataset, logistic_model, logistic_reference):
    config = _config(solver="avrg", epochs=5)
    transcript = run_detailed(config, small_dataset, logistic_model, logistic_reference, keep_records=True)
    completed = [record.g_current for record in transcript.records[1:]] + [transcript.state.g_current]
    np.testing.assert_array_equal(transcript.records[0].g_current, np.zeros(3))
    for record, g_next in zip(transcript.records, completed):
        replayed = np.mean(
            [sample_grad(logistic_model, w, small_dataset[int(n)]) for w, n in zip(record.iterates, record.order)],
            axis=0,
        )
        np.testing.assert_allclose(g_next, replayed, rtol=0, atol=1e-12)


class _AppliedDirections:
    """Compares every applied direction with the estimate from the state just before the step."""

    def __init__(self, estimate, state, dataset, model):
        self.estimate = estimate
        self.before = state.clone()
        self.dataset = dataset
        self.model = model
        self.errors = []

    def __call__(self, state, inner_index, sample_index, direction):
        expected = self.estimate(self.before, self.dataset, self.model, self.before.w, sample_index)
        self.errors.append(float(np.max(np.abs(expected - direction))))
        self.before = state.clone()


@pytest.mark.parametrize(
    "solver, estimate, convention",
    [
        ("saga", saga_gradient_estimate, "post-step"),
        ("saga", saga_gradient_estimate, "pre-step"),
        ("avrg", avrg_gradient_estimate, "post-step"),
    ],
)
def test_gradient_estimates_match_applied_directions(small_dataset, logistic_model, saga_step_size, solver, estimate, convention):
    state = initial_state(solver, small_dataset, phi_convention=convention)
    rng = RngStream(9)
    for _ in range(3):
        observer = _AppliedDirections(estimate, state, small_dataset, logistic_model)
        SOLVERS[solver](
            state, small_dataset, logistic_model, random_permutation(rng, 8), saga_step_size,
            EpochSink(retain_iterates=False, on_step=observer),
        )
        assert len(observer.errors) == 8
        assert max(observer.errors) <= 1e-15


def test_saga_table_average_tracks_table_mid_epoch(small_dataset, logistic_model, saga_step_size):
    drifts = []

    def record_drift(state, inner_index, sample_index, direction):
        exact = state.grad_table.mean(axis=0)
        drifts.append(float(np.linalg.norm(state.table_avg - exact)) / max(1.0, float(np.linalg.norm(exact))))

    state = initial_state("saga", small_dataset)
    rng = RngStream(5)
    for _ in range(5):
        saga_epoch(
            state, small_dataset, logistic_model, random_permutation(rng, 8), saga_step_size,
            EpochSink(retain_iterates=False, on_step=record_drift),
        )
    assert len(drifts) == 40
    assert max(drifts) <= 1e-10


@pytest.mark.parametrize("convention", ["post-step", "pre-step"])
def test_history_cells_hold_at_every_inner_step(small_dataset, logistic_model, saga_step_size, convention):
    state = initial_state("saga", small_dataset, diagnostic=True, phi_convention=convention)
    rng = RngStream(12)
    for _ in range(4):
        order = random_permutation(rng, 8)
        audit = HistoryAudit(state, order)
        saga_epoch(state, small_dataset, logistic_model, order, saga_step_size, EpochSink(on_step=audit))
        assert audit.steps_checked == 8
        assert audit.violations == []


def test_history_audit_flags_a_mismatched_order(small_dataset, logistic_model, saga_step_size):
    state = initial_state("saga", small_dataset, diagnostic=True)
    saga_epoch(state, small_dataset, logistic_model, np.arange(8), saga_step_size)
    order = random_permutation(RngStream(3), 8)
    audit = HistoryAudit(state, order[::-1])
    saga_epoch(state, small_dataset, logistic_model, order, saga_step_size, EpochSink(on_step=audit))
    assert audit.violations
    with pytest.raises(InvalidInputError):
        HistoryAudit(initial_state("saga", small_dataset), order)


def test_history_gradients_recompute_stored_iterates(small_dataset, logistic_model, saga_step_size):
    state = initial_state("saga", small_dataset, diagnostic=True)
    saga_step(state, small_dataset, logistic_model, 2, saga_step_size, 0)
    grads = history_gradients(state, small_dataset, logistic_model)
    np.testing.assert_array_equal(grads[2], sample_grad(logistic_model, state.phi_table[2], small_dataset[2]))
    assert not np.any(grads[[0, 1, 3, 4, 5, 6, 7]])


def test_single_sample_svrg_is_exact_snapshot_step():
    dataset = synth_logistic(1, 3, 7)
    model = LossModel("logistic-l2", 1.0)
    state = initial_state("svrg", dataset)
    mu = 0.3
    for _ in range(20):
        w = state.w.copy()
        SOLVERS["svrg"](state, dataset, model, [0], mu)
        np.testing.assert_allclose(state.w, w - mu * full_grad(model, w, dataset), rtol=1e-13, atol=1e-15)


def test_svrg_started_at_minimizer_stays_there(small_dataset, quadratic_model):
    reference = reference_minimizer(quadratic_model, small_dataset)
    state = initial_state("svrg", small_dataset, w0=reference.w_star)
    mu = 0.1
    SOLVERS["svrg"](state, small_dataset, quadratic_model, random_permutation(RngStream(0), 8), mu)
    assert np.linalg.norm(state.snapshot_full_grad) <= reference.tol
    assert np.linalg.norm(state.w - reference.w_star) <= 8 * mu * 10 * reference.tol


def test_divergence_in_worker_processes_is_reported():
    dataset = synth_logistic(8, 3, 0)
    model = LossModel("quadratic-l2", 1.0 / 8)
    reference = reference_minimizer(model, dataset)
    config = _config(solver="sgd", mu_frac=None, mu=1e30, epochs=5, seeds=2, loss="quadratic-l2")
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError) as excinfo:
            run_seeds(config, dataset, model, reference, workers=2)
    assert excinfo.value.solver == "sgd"
    assert 0 <= excinfo.value.epoch < 5


@pytest.mark.parametrize(
    "error",
    [DivergenceError("avrg", 3, 5), ConvergenceError(1e-6, 1e-12, 40)],
)
def test_structured_errors_survive_pickling(error):
    restored = pickle.loads(pickle.dumps(error))
    assert type(restored) is type(error)
    assert str(restored) == str(error)
    assert vars(restored) == vars(error)


@pytest.mark.slow
def test_saga_rr_error_decreases_almost_every_epoch():
    dataset = synth_logistic(50, 5, 0)
    model = LossModel("logistic-l2", 1 / 50)
    reference = reference_minimizer(model, dataset)
    config = RunConfig(
        solver="saga", mu_frac=1.0, epochs=200, seeds=100, source={"kind": "synthetic", "n": 50, "m": 5}, rho=1 / 50
    )
    mean = aggregate_traces(run_seeds(config, dataset, model, reference))
    decreasing = [later.rel_mse < earlier.rel_mse for earlier, later in zip(mean[1:], mean[2:])]
    assert np.mean(decreasing) >= 0.95
