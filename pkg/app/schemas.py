"""Pydantic schemas, enums and domain errors.

This module defines the request and response schemas shared by the CLI
and the HTTP API, the verification report format, and the exception
hierarchy raised by the library modules.
"""

from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

REPORT_SCHEMA_VERSION = "1.0"


class InterpolationConstantError(Exception):
    """Base class for all library errors."""


class DegenerateTriangleError(InterpolationConstantError, ValueError):
    """Raised for zero-area triangles or shapes with b <= 0."""


class InvalidShapeError(InterpolationConstantError, ValueError):
    """Raised for parameters outside an operation's admissible range."""


class ConsistencyError(InterpolationConstantError, ArithmeticError):
    """Raised when an invariant that cannot fail for valid input fails."""


class AssemblyError(InterpolationConstantError, ValueError):
    """Raised for incompatible space/constant pairs or too coarse meshes."""


class IntervalError(InterpolationConstantError, ArithmeticError):
    """Raised for interval operations without a finite enclosure."""


class UnknownLemmaError(InterpolationConstantError, KeyError):
    """Raised for identity checks that are not registered."""


class SpaceKind(str, Enum):
    """Discrete function spaces on the refined triangle."""
    V11 = "V11"
    V12 = "V12"
    V2 = "V2"


class FormKind(str, Enum):
    """Local quadratic forms of the two element families."""
    ALPHA0 = "alpha0"
    ALPHA1 = "alpha1"
    BETA0 = "beta0"
    BETA1 = "beta1"
    BETA2 = "beta2"


class SweepMode(str, Enum):
    """Verified sweep families."""
    THM61 = "thm61"
    THM62 = "thm62"


class Verdict(str, Enum):
    """Outcome of a single certificate."""
    VERIFIED = "verified"
    NOT_CERTIFIED = "not_certified"


class IdentityStatus(str, Enum):
    """Outcome of an identity check."""
    PASSED = "passed"
    FAILED = "failed"
    SKIPPED = "skipped"


class IdentityMethod(str, Enum):
    """How an identity was certified."""
    EXPAND = "expand"
    HESSIAN_REDUCE_EXPAND = "hessian_reduce_expand"
    EXACT_RANDOM_POINTS = "exact_random_points"


class OutputFormat(str, Enum):
    """CLI output formats."""
    JSON = "json"
    CSV = "csv"
    TEXT = "text"


class ShapeModel(BaseModel):
    """Normalized triangle shape T_{a,b} with (0,0), (1,0), (a,b)."""
    a: str = Field(..., description="Apex abscissa as 'p/q'")
    b: str = Field(..., description="Apex height as 'p/q'")
    a_float: float = Field(..., description="Apex abscissa as float")
    b_float: float = Field(..., description="Apex height as float")
    exact: bool = Field(
        True,
        description="False if the shape was rounded from floating input"
    )


class ConstantsResponse(BaseModel):
    """Closed-form constants of one triangle."""
    shape: ShapeModel = Field(..., description="Normalized shape")
    scale: float = Field(..., gt=0, description="Similarity ratio to T_{a,b}")
    k: Dict[str, float] = Field(..., description="K_1..K_4 keyed by j")
    l: Dict[str, str] = Field(
        ...,
        description="L_j(a,b) = K_j(T_{a,b})^2 as exact 'p/q' strings"
    )
    circumradius: float = Field(..., gt=0, description="R(T) = ABC/(4S)")
    converted_from_float: bool = Field(
        False,
        description="True if any coordinate was rounded to a rational"
    )

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "shape": {"a": "0", "b": "1", "a_float": 0.0,
                          "b_float": 1.0, "exact": True},
                "scale": 1.0,
                "k": {"1": 0.3340766, "2": 0.2417624,
                      "3": 0.1702673, "4": 0.4915960},
                "l": {"1": "25/224", "4": "29/120"},
                "circumradius": 0.7071068,
                "converted_from_float": False
            }
        }
    )


class TableRow(BaseModel):
    """One row of a constants table."""
    label: str = Field(..., description="Row label such as T_{1/4,1/2}")
    a: float = Field(..., description="Apex abscissa")
    b: float = Field(..., description="Apex height")
    k: float = Field(..., description="Closed-form bound K_j")
    upper: Dict[str, float] = Field(
        default_factory=dict,
        description="Upper bounds keyed by subdivision count n"
    )
    lower: Optional[float] = Field(
        None,
        description="Polynomial-subspace lower estimate"
    )


class TableResponse(BaseModel):
    """A reproduced constants table."""
    j: int = Field(..., ge=1, le=4, description="Constant index")
    n_values: List[int] = Field(default_factory=list)
    degree: Optional[int] = Field(None, ge=2)
    rows: List[TableRow] = Field(...)


class PointResult(BaseModel):
    """Verdict of one certified grid point."""
    k: Optional[int] = Field(None, description="Height level, thm61 only")
    l: int = Field(..., ge=0, description="Abscissa index")
    a: str = Field(..., description="'p/q'")
    b: str = Field(..., description="'p/q'")
    j: int = Field(..., ge=1, le=4)
    n: int = Field(..., ge=2)
    lambda_: str = Field(..., alias="lambda", description="Certified shift 'p/q'")
    verdict: Verdict
    falsified: bool = Field(
        False,
        description="Float estimate of the maximum eigenvalue exceeds lambda"
    )
    estimate: Optional[float] = Field(
        None,
        description="Float estimate of the maximum generalized eigenvalue"
    )
    implication: Optional[str] = Field(
        None,
        description="What a verified thm62 point implies for all 0 < b <= 1/10"
    )
    seconds: float = Field(..., ge=0)

    model_config = ConfigDict(populate_by_name=True)


class SweepConfig(BaseModel):
    """Configuration of a sweep slice."""
    mode: SweepMode
    n: int = Field(20, ge=2)
    j: List[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    k: List[int] = Field(default_factory=list)
    l: Optional[List[int]] = Field(
        None,
        description="Abscissa indices; None means every index of the level"
    )
    n_jobs: int = Field(1, ge=1)
    lambda_scale: str = Field("1", description="Multiplier applied to lambda")
    certificate: str = Field("interval_cholesky")
    deviates_from_reference: bool = Field(
        False,
        description="True when n differs from 20 or lambda is rescaled"
    )


class SweepSummary(BaseModel):
    """Counts over a sweep slice."""
    total: int = 0
    verified: int = 0
    not_certified: int = 0
    falsified: int = 0
    seconds: float = 0.0


class VerificationReport(BaseModel):
    """Structured outcome of a verified sweep slice."""
    schema_version: str = Field(REPORT_SCHEMA_VERSION)
    config: SweepConfig
    points: List[PointResult] = Field(default_factory=list)
    summary: SweepSummary = Field(default_factory=SweepSummary)
    seed: int = Field(..., description="Seed of pseudo-random harnesses")
    versions: Dict[str, str] = Field(default_factory=dict)

    @property
    def all_verified(self) -> bool:
        return self.summary.verified == self.summary.total


class IdentityCase(BaseModel):
    """Result of one identity check."""
    lemma_id: str
    method: IdentityMethod
    status: IdentityStatus
    detail: str = ""
    residual: Optional[str] = Field(
        None,
        description="Offending residual or evaluation point on failure"
    )
    checked: int = Field(0, ge=0, description="Number of certified equalities")
    seconds: float = Field(0.0, ge=0)


class IdentityManifest(BaseModel):
    """Results of an identity suite run."""
    manifest_sha256: str
    seed: int
    cases: List[IdentityCase] = Field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(c.status == IdentityStatus.PASSED for c in self.cases)


class ProofIngredient(BaseModel):
    """One step of the proof chain and whether it was re-checked locally."""
    name: str
    status: str = Field(..., description="re-verified, pending, inherited or failed")
    detail: str = ""


class ProofChainStatus(BaseModel):
    """Bookkeeping of which proof ingredients were re-verified."""
    status: str
    ingredients: List[ProofIngredient] = Field(default_factory=list)


class VerifyPointRequest(BaseModel):
    """Body of the single-point certificate endpoint."""
    j: int = Field(..., ge=1, le=4)
    n: int = Field(20, ge=2, le=40)
    a: str = Field(..., description="'p/q' or decimal")
    b: str = Field(..., description="'p/q' or decimal")
    mode: SweepMode = SweepMode.THM61


class HealthResponse(BaseModel):
    """API health check response."""
    status: str = Field(..., description="API operational status")
    manifest_ok: bool = Field(..., description="Identity manifest checksum matches")
    version: str = Field(..., description="API version")


class CliConfig(BaseModel):
    """Validated command-line configuration."""
    command: str
    shape: Optional[List[str]] = None
    vertices: Optional[List[str]] = None
    n: List[int] = Field(default_factory=list)
    j: List[int] = Field(default_factory=list)
    output_format: OutputFormat = OutputFormat.TEXT
    output: Optional[str] = None
    seed: int
    n_jobs: int = Field(1, ge=1)
    extra: Dict[str, Any] = Field(default_factory=dict)
