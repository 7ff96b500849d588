"""Command line tests: exit codes, outputs and option handling."""

import io
import json

import pytest
from click.testing import CliRunner

from app import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_OK, EXIT_VERIFICATION, cli, main
from trace_store import read_trace_csv


@pytest.fixture
def runner():
    return CliRunner()


def _report(result):
    text = result.output
    return json.loads(text[text.index("{") : text.rindex("}") + 1])


def test_run_writes_trace_to_stdout(runner):
    result = runner.invoke(cli, ["run", "--solver", "saga", "--mu-frac", "1", "--epochs", "3", "--synthetic", "8", "3"])
    assert result.exit_code == EXIT_OK, result.output
    metadata, traces = read_trace_csv(io.StringIO(result.output))
    assert [t.epoch for t in traces] == [0, 1, 2]
    assert all(t.grad_evals == 16 for t in traces)
    assert metadata["n"] == 8


def test_run_writes_trace_file(runner, tmp_path):
    out = tmp_path / "avrg.csv"
    result = runner.invoke(
        cli,
        ["run", "--solver", "avrg", "--mu-frac", "1", "--epochs", "4", "--seeds", "2",
         "--diagnostic", "--synthetic", "8", "3", "--out", str(out)],
    )
    assert result.exit_code == EXIT_OK, result.output
    _, traces = read_trace_csv(out)
    assert len(traces) == 4
    assert all(t.energy is not None for t in traces)


def test_run_from_libsvm_file(runner, tmp_path):
    data = tmp_path / "tiny.libsvm"
    data.write_text("+1 1:1 2:1\n-1 1:2\n+1 2:3\n-1 1:1 2:-1\n")
    result = runner.invoke(cli, ["run", "--solver", "svrg", "--mu", "0.05", "--epochs", "2", "--data", str(data)])
    assert result.exit_code == EXIT_OK, result.output
    metadata, traces = read_trace_csv(io.StringIO(result.output))
    assert "accounting_note" in metadata
    assert traces[0].grad_evals == 12


@pytest.mark.parametrize(
    "args",
    [
        ["run", "--solver", "saga", "--mu", "0.1", "--mu-frac", "1", "--epochs", "2", "--synthetic", "8", "3"],
        ["run", "--solver", "avrg", "--sampling", "uniform", "--mu-frac", "1", "--epochs", "2", "--synthetic", "8", "3"],
        ["run", "--solver", "saga", "--mu-frac", "1", "--epochs", "2"],
        ["run", "--solver", "saga", "--mu-frac", "1", "--epochs", "0", "--synthetic", "8", "3"],
        ["run", "--solver", "lbfgs", "--mu-frac", "1", "--epochs", "2", "--synthetic", "8", "3"],
        ["verify", "lemma1", "--n", "4", "--trials", "10"],
    ],
)
def test_configuration_errors_exit_with_one(runner, args):
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_CONFIG, result.output


def test_divergence_exits_with_two(runner):
    result = runner.invoke(
        cli,
        ["run", "--solver", "sgd", "--mu", "1e30", "--epochs", "5", "--synthetic", "8", "3", "--loss", "quadratic-l2"],
    )
    assert result.exit_code == EXIT_DIVERGENCE
    assert "diverged" in result.output


def test_failed_verification_exits_with_three(runner):
    result = runner.invoke(
        cli, ["verify", "lemma2", "--n", "4", "--m", "2", "--i", "2", "--trials", "1000", "--tol", "1e-15"]
    )
    assert result.exit_code == EXIT_VERIFICATION
    assert "rel_err" in result.output


def test_accounting_report(runner):
    result = runner.invoke(cli, ["accounting", "--n", "6"])
    assert result.exit_code == EXIT_OK, result.output
    rows = {(r["solver"], r["sampling"], r["phi_convention"]): r["measured"] for r in _report(result)["rows"]}
    assert rows[("avrg", "rr", "post-step")] == 12
    assert rows[("saga", "rr", "pre-step")] == 6
    assert rows[("svrg", "rr", "post-step")] == 18


def test_reference_report(runner):
    result = runner.invoke(cli, ["reference", "--synthetic", "8", "3"])
    assert result.exit_code == EXIT_OK, result.output
    report = _report(result)
    assert report["grad_norm"] <= 1e-12
    assert len(report["w_star"]) == 3
    assert report["mu_max_avrg"] > report["mu_max_saga_rr"]


def test_bias_command(runner, tmp_path):
    out = tmp_path / "bias.json"
    result = runner.invoke(cli, ["verify", "bias", "--n", "5", "--states", "3", "--out", str(out)])
    assert result.exit_code == EXIT_OK, result.output
    assert json.loads(out.read_text())["passed"] is True


def test_unbiased_without_qualifying_epoch_is_inconclusive(runner):
    result = runner.invoke(cli, ["verify", "unbiased", "--n", "6", "--epochs", "3", "--eps", "1e-300"])
    assert result.exit_code == EXIT_OK, result.output
    assert _report(result)["status"] == "inconclusive"


def test_decay_requires_enough_seeds(runner):
    result = runner.invoke(cli, ["verify", "decay", "--n", "8", "--m", "3", "--seeds", "5", "--epochs", "3"])
    assert result.exit_code == EXIT_CONFIG


def test_recursion_command(runner):
    result = runner.invoke(cli, ["verify", "recursion", "--n", "8", "--m", "3", "--seeds", "5", "--epochs", "10"])
    assert result.exit_code == EXIT_OK, result.output
    assert _report(result)["status"] == "pass"


def test_main_returns_exit_status():
    assert main(["accounting", "--n", "4"]) == EXIT_OK
    assert main(["run", "--solver", "saga", "--epochs", "1"]) == EXIT_CONFIG


def test_help_exits_cleanly(runner):
    result = runner.invoke(cli, ["--help"])
    assert result.exit_code == EXIT_OK
    assert "verify" in result.output


def test_identical_runs_write_identical_files(runner, tmp_path):
    paths = [tmp_path / "first.csv", tmp_path / "second.csv"]
    for path in paths:
        result = runner.invoke(
            cli,
            ["run", "--solver", "saga", "--mu-frac", "1", "--epochs", "3", "--seeds", "3",
             "--diagnostic", "--synthetic", "8", "3", "--out", str(path)],
        )
        assert result.exit_code == EXIT_OK, result.output
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_divergence_in_worker_processes_exits_with_two(runner):
    result = runner.invoke(
        cli,
        ["run", "--solver", "sgd", "--mu", "1e30", "--epochs", "5", "--seeds", "2", "--workers", "2",
         "--synthetic", "8", "3", "--loss", "quadratic-l2"],
    )
    assert result.exit_code == EXIT_DIVERGENCE
    assert "diverged" in result.output


def test_too_few_trials_is_a_configuration_error(runner):
    result = runner.invoke(cli, ["verify", "lemma2", "--n", "4", "--trials", "10"])
    assert result.exit_code == EXIT_CONFIG
    assert "at least" in result.output
