"""FastAPI surface over the constants, tables, identity checks and sweeps."""

import logging
from typing import List, Optional

from fastapi import FastAPI, HTTPException, Query

from app.config import settings
from app.geometry import Triangle, TriangleShape
from app.identities import check_lemma, manifest_ok
from app.schemas import (
    ConstantsResponse,
    HealthResponse,
    IdentityCase,
    InterpolationConstantError,
    InvalidShapeError,
    PointResult,
    ProofChainStatus,
    TableResponse,
    UnknownLemmaError,
    VerifyPointRequest,
)
from app.tables import constants_report, constants_table, shape_report
from app.verify import load_saved_runs, proof_chain_status, verify_point

logging.basicConfig(
    level=settings.LOG_LEVEL, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

app = FastAPI(
    title=settings.API_TITLE,
    version=settings.API_VERSION,
    description=settings.API_DESCRIPTION,
)


def _bad_request(e: Exception) -> HTTPException:
    logger.error(f"Rejected request: {type(e).__name__}: {e}")
    return HTTPException(status_code=400, detail=str(e))


def _parse_vertices(text: str) -> Triangle:
    points = [p.split(",") for p in text.split(";") if p.strip()]
    return Triangle.from_points([[c.strip() for c in p] for p in points])


@app.get("/")
async def root():
    return {
        "message": settings.API_TITLE,
        "version": settings.API_VERSION,
        "documentation": "/docs",
    }


@app.get("/health", response_model=HealthResponse)
async def health():
    """Health check with the identity manifest checksum state."""
    return HealthResponse(status="ok", manifest_ok=manifest_ok(), version=settings.API_VERSION)


@app.get("/constants", response_model=ConstantsResponse)
def constants(
    a: Optional[str] = Query(None, description="Apex abscissa, 'p/q' or decimal"),
    b: Optional[str] = Query(None, description="Apex height, 'p/q' or decimal"),
    vertices: Optional[str] = Query(None, description="x1,y1;x2,y2;x3,y3"),
):
    """K_1..K_4 and L_1..L_4 of a triangle given by its apex or its vertices."""
    if vertices is None and (a is None or b is None):
        raise HTTPException(status_code=400, detail="Give either a and b, or vertices")
    try:
        if vertices is not None:
            return constants_report(_parse_vertices(vertices))
        return shape_report(a, b)
    except (InterpolationConstantError, ValueError) as e:
        raise _bad_request(e)


@app.get("/table/{j}", response_model=TableResponse)
def table(
    j: int,
    n: List[int] = Query(default=[], description="Refinement levels"),
    degree: Optional[int] = Query(None, ge=2, description="Degree of the polynomial estimate"),
):
    """Rows of the constants table for C_j; without n and degree only K_j is computed."""
    try:
        return constants_table(j, n, degree)
    except (InterpolationConstantError, ValueError) as e:
        raise _bad_request(e)


@app.get("/identities/{lemma_id}", response_model=IdentityCase)
def identity(lemma_id: str):
    """Run the exact check of one lemma."""
    try:
        return check_lemma(lemma_id)
    except UnknownLemmaError:
        raise HTTPException(status_code=404, detail=f"Unknown lemma {lemma_id}")


@app.post("/verify-point", response_model=PointResult)
def verify_single_point(request: VerifyPointRequest):
    """Certify one (j, n, a, b) point against the threshold of its sweep."""
    try:
        shape = TriangleShape.of(request.a, request.b)
        if not shape.in_canonical_region():
            raise InvalidShapeError(f"({shape.a}, {shape.b}) is outside the canonical region")
        return verify_point(request.j, request.n, shape, request.mode, estimate=True)
    except (InterpolationConstantError, ValueError) as e:
        if isinstance(e, ArithmeticError):
            logger.error(f"Certificate of {request} failed internally: {e}")
            raise HTTPException(status_code=500, detail=str(e))
        raise _bad_request(e)


@app.get("/proof-chain", response_model=ProofChainStatus)
def proof_chain():
    """Status of every ingredient, using reports saved in the output directory."""
    reports, identities = load_saved_runs()
    return proof_chain_status(reports=reports, identities=identities)
