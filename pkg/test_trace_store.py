"""Trace CSV writer/reader tests."""

import io
import json

import pytest

from errors import InvalidInputError
from losses import CurvatureConstants
from models import TRACE_COLUMNS, EpochTrace, RunConfig
from trace_store import SVRG_ACCOUNTING_NOTE, build_metadata, emit_csv, read_trace_csv, write_trace_file


@pytest.fixture
def traces():
    return [
        EpochTrace(0, 1.0, 0.6931471805599453, 16, 0.0123, 0.0, 1.25),
        EpochTrace(1, 0.1 + 0.2, 1e-300, 16, 3.3e-05, 0.0021, 0.31),
    ]


def _config(solver="saga"):
    return RunConfig(solver=solver, mu=0.01, epochs=2, source={"kind": "synthetic", "n": 8, "m": 3})


def test_layout_of_emitted_file(traces):
    sink = io.StringIO()
    emit_csv(traces, sink, {"n": 8, "mu": 0.01, "alpha": None})
    lines = sink.getvalue().splitlines()
    assert lines[:3] == ["# n: 8", "# mu: 0.01", "# alpha: "]
    assert lines[3] == ",".join(TRACE_COLUMNS)
    assert lines[4] == "0,1.0,0.6931471805599453,16,0.0123,0.0,1.25"
    assert lines[5].startswith("1,0.30000000000000004,1e-300,16,")


def test_missing_diagnostics_are_empty_fields():
    sink = io.StringIO()
    emit_csv([EpochTrace(0, 1.0, 0.5, 8)], sink)
    assert sink.getvalue().splitlines()[1] == "0,1.0,0.5,8,,,"


def test_file_reads_back(tmp_path, traces, logistic_reference):
    metadata = build_metadata(
        _config(), CurvatureConstants(delta=0.375, nu=0.125), 0.01, logistic_reference, n=8
    )
    path = tmp_path / "trace.csv"
    write_trace_file(path, traces, metadata)

    loaded_metadata, loaded = read_trace_csv(path)
    assert loaded == traces
    assert loaded_metadata["n"] == 8
    assert loaded_metadata["delta"] == 0.375
    assert loaded_metadata["alpha"] is None
    assert json.loads(loaded_metadata["config"])["solver"] == "saga"


def test_plain_traces_read_back_without_diagnostics():
    sink = io.StringIO()
    plain = [EpochTrace(0, 1.0, 0.5, 24), EpochTrace(1, 0.5, 0.25, 24)]
    emit_csv(plain, sink)
    sink.seek(0)
    _, loaded = read_trace_csv(sink)
    assert loaded == plain
    assert isinstance(loaded[0].grad_evals, int)


def test_svrg_metadata_carries_accounting_note(logistic_reference):
    constants = CurvatureConstants(delta=0.375, nu=0.125)
    svrg = build_metadata(_config("svrg"), constants, 0.01, logistic_reference)
    saga = build_metadata(_config(), constants, 0.01, logistic_reference)
    assert svrg["accounting_note"] == SVRG_ACCOUNTING_NOTE
    assert "accounting_note" not in saga


def test_empty_trace_is_rejected():
    with pytest.raises(InvalidInputError):
        emit_csv([], io.StringIO())


def test_foreign_table_is_rejected():
    with pytest.raises(InvalidInputError):
        read_trace_csv(io.StringIO("# n: 3\na,b,c\n1,2,3\n"))
