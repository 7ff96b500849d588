"""
Dataset representation for finite-sum training problems.

Datasets are stored densely: an ``N x M`` feature matrix plus a length-``N``
vector of ``±1`` labels. Sources are LIBSVM text files and a seeded synthetic
logistic generator.
"""

import io
import logging
import os
from dataclasses import dataclass
from typing import IO, Iterator, List, Tuple, Union

import numpy as np
from scipy.special import expit

from errors import InvalidInputError, ParseError

logger = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-12


@dataclass(frozen=True)
class Sample:
    """One labeled training example (feature vector ``h_n`` and label ``γ(n)``)."""

    features: np.ndarray
    label: int


class Dataset:
    """Immutable collection of ``N`` samples sharing dimension ``M``."""

    def __init__(self, features: np.ndarray, labels: np.ndarray):
        features = np.array(features, dtype=float, copy=True)
        labels = np.array(labels, dtype=float, copy=True)

        if features.ndim != 2:
            raise InvalidInputError(
                f"Features must be a 2-D array (N x M), got shape {features.shape}"
            )
        if features.shape[0] < 1:
            raise InvalidInputError("Dataset must contain at least one sample")
        if features.shape[1] < 1:
            raise InvalidInputError("Dataset feature dimension must be at least 1")
        if labels.shape != (features.shape[0],):
            raise InvalidInputError(
                f"Expected {features.shape[0]} labels, got shape {labels.shape}"
            )
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            bad = int(np.flatnonzero(~np.isin(labels, (-1.0, 1.0)))[0])
            raise InvalidInputError(
                f"Sample {bad} has label {labels[bad]!r}; labels must be -1 or +1"
            )
        if not np.all(np.isfinite(features)):
            raise InvalidInputError("Features must be finite")

        features.setflags(write=False)
        labels.setflags(write=False)
        self._features = features
        self._labels = labels

    @property
    def features(self) -> np.ndarray:
        return self._features

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def n(self) -> int:
        return self._features.shape[0]

    @property
    def dim(self) -> int:
        return self._features.shape[1]

    @property
    def samples(self) -> List[Sample]:
        return [self[i] for i in range(self.n)]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, index: int) -> Sample:
        return Sample(features=self._features[index], label=int(self._labels[index]))

    def __iter__(self) -> Iterator[Sample]:
        for i in range(self.n):
            yield self[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self._features, other._features) and np.array_equal(
            self._labels, other._labels
        )

    def __repr__(self) -> str:
        return f"<Dataset N={self.n} M={self.dim}>"

    def is_unit_normalized(self, tol: float = UNIT_NORM_TOL) -> bool:
        norms = np.linalg.norm(self._features, axis=1)
        return bool(np.all(np.abs(norms - 1.0) <= tol))


def _parse_line(line: str, line_number: int) -> Tuple[float, List[Tuple[int, float]]]:
    """Parse ``<label> <index>:<value> ...``; returns the raw label and the pairs."""
    tokens = line.split()
    try:
        label = float(tokens[0])
    except ValueError:
        raise ParseError(f"invalid label {tokens[0]!r}", line_number) from None

    pairs: List[Tuple[int, float]] = []
    previous = 0
    for token in tokens[1:]:
        index_text, sep, value_text = token.partition(":")
        if not sep:
            raise ParseError(f"expected <index>:<value>, got {token!r}", line_number)
        try:
            index = int(index_text)
            value = float(value_text)
        except ValueError:
            raise ParseError(f"malformed feature {token!r}", line_number) from None
        if index < 1:
            raise ParseError(f"feature index {index} must be 1-based", line_number)
        if index <= previous:
            raise ParseError(
                f"feature index {index} is not strictly increasing (after {previous})",
                line_number,
            )
        if not np.isfinite(value):
            raise ParseError(f"non-finite feature value {value_text!r}", line_number)
        pairs.append((index, value))
        previous = index
    return label, pairs


def parse_libsvm(stream: Union[bytes, str, IO]) -> Dataset:
    """
    Parse LIBSVM text into a dense Dataset.

    Args:
        stream: raw bytes, decoded text, or a binary/text file object

    Returns:
        Dataset with M equal to the largest feature index seen

    Raises:
        ParseError: on malformed lines, out-of-order indices, bad labels or empty input
    """
    if hasattr(stream, "read"):
        stream = stream.read()
    if isinstance(stream, bytes):
        try:
            stream = stream.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"input is not UTF-8 text: {e}") from None

    raw_labels: List[float] = []
    rows: List[List[Tuple[int, float]]] = []
    label_lines: List[int] = []
    for line_number, line in enumerate(io.StringIO(stream), start=1):
        # svm-light allows a trailing "# info" comment
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        label, pairs = _parse_line(content, line_number)
        raw_labels.append(label)
        rows.append(pairs)
        label_lines.append(line_number)

    if not rows:
        raise ParseError("no samples")

    distinct = set(raw_labels)
    if distinct <= {0.0, 1.0} and 0.0 in distinct:
        labels = [1.0 if value == 1.0 else -1.0 for value in raw_labels]
    else:
        for value, line_number in zip(raw_labels, label_lines):
            if value not in (-1.0, 1.0):
                raise ParseError(
                    f"label {value!r} is not in {{-1, +1}} (or a 0/1 file)", line_number
                )
        labels = raw_labels

    dim = max((pairs[-1][0] for pairs in rows if pairs), default=0)
    if dim == 0:
        raise ParseError("no feature values present")

    features = np.zeros((len(rows), dim))
    for row, pairs in enumerate(rows):
        for index, value in pairs:
            features[row, index - 1] = value

    return Dataset(features, np.asarray(labels))


def serialize_libsvm(dataset: Dataset) -> str:
    """Write a Dataset as LIBSVM text; the last index is always written so M survives."""
    lines = []
    last = dataset.dim - 1
    for sample in dataset:
        parts = ["+1" if sample.label > 0 else "-1"]
        for j, value in enumerate(sample.features):
            if value != 0.0 or j == last:
                parts.append(f"{j + 1}:{float(value)!r}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def load_libsvm(path: Union[str, os.PathLike], normalize: bool = False) -> Dataset:
    """Read a LIBSVM file from disk, optionally unit-normalizing the features."""
    with open(path, "rb") as f:
        dataset = parse_libsvm(f)
    logger.info("Loaded %s: N=%d M=%d", path, dataset.n, dataset.dim)
    return normalize_unit(dataset) if normalize else dataset


def normalize_unit(dataset: Dataset) -> Dataset:
    """
    Scale every feature vector to unit Euclidean norm.

    Raises:
        InvalidInputError: if a sample has a zero feature vector
    """
    norms = np.linalg.norm(dataset.features, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise InvalidInputError(f"Sample {int(zero[0])} has a zero feature vector")
    # Already-unit rows are left bit-identical so normalization is idempotent.
    scale = np.where(np.abs(norms - 1.0) <= UNIT_NORM_TOL, 1.0, norms)
    return Dataset(dataset.features / scale[:, None], dataset.labels)


def synth_logistic(n: int, m: int, seed: int) -> Dataset:
    """
    Deterministic synthetic binary classification data.

    Features are standard normal draws projected to the unit sphere; labels follow a
    logistic model of a hidden weight vector drawn from the same seeded stream.

    Args:
        n: number of samples (>= 1)
        m: feature dimension (>= 1)
        seed: integer seed; identical (n, m, seed) give bit-identical datasets

    Returns:
        Unit-normalized Dataset
    """
    if n < 1 or m < 1:
        raise InvalidInputError(f"synth_logistic needs n >= 1 and m >= 1, got n={n}, m={m}")
    if seed < 0:
        raise InvalidInputError(f"synth_logistic needs a nonnegative seed, got {seed}")

    rng = np.random.Generator(np.random.PCG64(seed))
    hidden = rng.standard_normal(m) * 2.0
    features = rng.standard_normal((n, m))
    norms = np.linalg.norm(features, axis=1)
    features = features / norms[:, None]
    prob = expit(features @ hidden)
    labels = np.where(rng.random(n) < prob, 1.0, -1.0)
    return Dataset(features, labels)
