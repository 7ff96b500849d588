"""
Trace file persistence
Writes seed-averaged epoch traces as CSV with a '#'-prefixed metadata header and reads them back
"""

import io
import json
import logging
import math
import os
from typing import IO, Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from analysis import ReferenceSolution, TheoremConstants
from errors import InvalidInputError
from losses import CurvatureConstants
from models import TRACE_COLUMNS, EpochTrace, RunConfig

logger = logging.getLogger(__name__)

SVRG_ACCOUNTING_NOTE = "svrg evaluates 3N gradients per epoch as implemented; the published figure is 2.5N"


def build_metadata(
    config: RunConfig,
    constants: CurvatureConstants,
    mu: float,
    reference: ReferenceSolution,
    theorem: Optional[TheoremConstants] = None,
    n: Optional[int] = None,
) -> Dict[str, Any]:
    """
    Header fields of a trace file

    Args:
        config: the run configuration, echoed as JSON
        constants: curvature constants of the problem
        mu: resolved step size
        reference: reference solution the metrics were measured against
        theorem: theorem constants when the solver is covered by one
        n: number of samples

    Returns:
        Ordered metadata mapping
    """
    metadata: Dict[str, Any] = {
        "config": json.dumps(config.model_dump(mode="json"), sort_keys=True),
        "n": n,
        "delta": constants.delta,
        "nu": constants.nu,
        "mu": mu,
        "mu_max": theorem.mu_max if theorem else None,
        "alpha": theorem.alpha if theorem else None,
        "gamma": theorem.gamma if theorem else None,
        "reference_grad_norm": reference.grad_norm,
    }
    if config.solver == "svrg":
        metadata["accounting_note"] = SVRG_ACCOUNTING_NOTE
    return metadata


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def emit_csv(
    traces: Sequence[EpochTrace],
    sink: IO[str],
    metadata: Optional[Dict[str, Any]] = None,
) -> None:
    """
    Write traces to a text sink

    Numbers use the shortest round-trip decimal form; missing diagnostics are empty fields.

    Raises:
        InvalidInputError: if there are no traces
        OSError: if the sink cannot be written
    """
    if not traces:
        raise InvalidInputError("Cannot emit an empty trace")

    for key, value in (metadata or {}).items():
        sink.write(f"# {key}: {_format_value(value)}\n")

    sink.write(",".join(TRACE_COLUMNS) + "\n")
    for trace in traces:
        row = trace.to_row()
        sink.write(",".join(_format_value(row[column]) for column in TRACE_COLUMNS) + "\n")


def write_trace_file(
    path: Union[str, os.PathLike],
    traces: Sequence[EpochTrace],
    metadata: Optional[Dict[str, Any]] = None,
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        emit_csv(traces, f, metadata)
    logger.info("Wrote %d trace rows to %s", len(traces), path)


def _parse_metadata_value(text: str) -> Any:
    if text == "":
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _optional(value: Any) -> Optional[float]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return float(value)


def read_trace_csv(source: Union[str, os.PathLike, IO[str]]) -> Tuple[Dict[str, Any], List[EpochTrace]]:
    """
    Parse a trace file written by ``emit_csv``

    Returns:
        (metadata, traces)

    Raises:
        InvalidInputError: if the column row does not match the trace format
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8") as f:
            text = f.read()

    metadata: Dict[str, Any] = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(":")
            metadata[key.strip()] = _parse_metadata_value(value.strip())
        elif line:
            body.append(line)

    if not body or tuple(body[0].split(",")) != TRACE_COLUMNS:
        raise InvalidInputError(f"Trace file must start its table with {','.join(TRACE_COLUMNS)}")

    frame = pd.read_csv(io.StringIO("\n".join(body)), float_precision="round_trip")
    traces = []
    for row in frame.to_dict(orient="records"):
        evals = float(row["grad_evals"])
        traces.append(
            EpochTrace(
                epoch=int(row["epoch"]),
                rel_mse=float(row["rel_mse"]),
                excess_risk=float(row["excess_risk"]),
                grad_evals=int(evals) if evals.is_integer() else evals,
                a_sq=_optional(row["a_sq"]),
                b_sq=_optional(row["b_sq"]),
                energy=_optional(row["energy"]),
            )
        )
    return metadata, traces
