"""
Data-contract models for runs and traces
RunConfig is validated with pydantic; EpochTrace is the per-epoch record written to CSV
"""

import math
from dataclasses import asdict, dataclass
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SolverKind = Literal["sgd", "saga", "svrg", "avrg"]
SamplingKind = Literal["rr", "uniform"]
PhiConvention = Literal["post-step", "pre-step"]
LossKind = Literal["logistic-l2", "quadratic-l2"]
ConstantVariant = Literal["derived", "printed"]


class SyntheticSource(BaseModel):
    """Seeded synthetic logistic data."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["synthetic"] = "synthetic"
    n: int = Field(ge=1)
    m: int = Field(ge=1)
    seed: int = Field(default=0, ge=0)


class FileSource(BaseModel):
    """LIBSVM file on disk."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["file"] = "file"
    path: str
    normalize: bool = True


class RunConfig(BaseModel):
    """
    Validated configuration of one experiment (one solver, one or more seeds).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    solver: SolverKind
    sampling: SamplingKind = "rr"
    mu: Optional[float] = Field(default=None, gt=0)
    mu_frac: Optional[float] = Field(default=None, gt=0)
    epochs: int = Field(ge=1)
    seeds: Union[int, List[int]] = 1
    base_seed: int = Field(default=0, ge=0)
    diagnostic: bool = False
    phi_convention: PhiConvention = "post-step"
    source: Union[SyntheticSource, FileSource] = Field(discriminator="kind")
    loss: LossKind = "logistic-l2"
    rho: Union[float, Literal["1/N"]] = "1/N"
    gamma_variant: ConstantVariant = "derived"
    alpha_variant: ConstantVariant = "derived"

    @field_validator("seeds")
    @classmethod
    def _check_seeds(cls, value):
        if isinstance(value, int):
            if value < 1:
                raise ValueError("seeds count must be at least 1")
        else:
            if not value:
                raise ValueError("explicit seed list must not be empty")
            if len(set(value)) != len(value):
                raise ValueError("explicit seed list contains duplicates")
            if any(s < 0 for s in value):
                raise ValueError("seeds must be nonnegative")
        return value

    @field_validator("rho")
    @classmethod
    def _check_rho(cls, value):
        if isinstance(value, float) and not (math.isfinite(value) and value > 0):
            raise ValueError("rho must be a positive number or '1/N'")
        return value

    @model_validator(mode="after")
    def _check_combination(self):
        if (self.mu is None) == (self.mu_frac is None):
            raise ValueError("exactly one of mu and mu_frac must be set")
        if self.solver == "avrg" and self.sampling != "rr":
            raise ValueError("AVRG requires random reshuffling")
        return self

    def seed_list(self) -> List[int]:
        """Run indices: 0..k−1 for a count, the explicit values otherwise."""
        if isinstance(self.seeds, int):
            return list(range(self.seeds))
        return list(self.seeds)

    def resolve_rho(self, n: int) -> float:
        return 1.0 / n if self.rho == "1/N" else float(self.rho)


@dataclass
class EpochTrace:
    """
    Metrics of epoch ``t``.

    ``rel_mse`` and ``excess_risk`` are measured at the epoch-start iterate w_0^t;
    ``a_sq`` is this epoch's forward inner-difference sum ÷ N and ``b_sq`` the previous
    epoch's backward sum ÷ N (0 at t = 0). Diagnostic fields are None when not retained.
    """

    epoch: int
    rel_mse: float
    excess_risk: float
    grad_evals: Union[int, float]
    a_sq: Optional[float] = None
    b_sq: Optional[float] = None
    energy: Optional[float] = None

    def to_row(self) -> dict:
        return asdict(self)


TRACE_COLUMNS = ("epoch", "rel_mse", "excess_risk", "grad_evals", "a_sq", "b_sq", "energy")
