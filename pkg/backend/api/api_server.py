"""
FastAPI Backend for pathcast
Evaluation endpoints over submitted data (ingest, score, bands, trade) and
read access to stored backtest runs
"""

import logging
import os
import sys
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
from fastapi import FastAPI, File, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

# Add backend to Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from bands.prediction_bands import SCP_GRID, SIDES
from config.settings import db_path, load_environment, log_level
from database.run_store import RunStore
from exceptions import PathcastError
from main import band_rows, score_paths, trade_paths
from market_data.frame import PricePath
from market_data.loader import MarketDataLoader
from samplers.path_samplers import TrajectoryEnsemble

load_environment()

# Configure logging
logging.basicConfig(level=log_level())
logger = logging.getLogger(__name__)

app = FastAPI(
    title="pathcast API",
    description="Scoring, prediction bands and trading on intraday price-path ensembles",
    version="1.0.0"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=os.environ.get("PATHCAST_CORS_ORIGINS", "http://localhost:3000").split(","),
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

loader = MarketDataLoader()
run_store = RunStore(db_path())
run_store.initialize_database()


# Pydantic models for request/response
class EnsembleRequest(BaseModel):
    paths: List[List[float]] = Field(..., description="M trajectories of 10 subperiod prices")


class ScoreRequest(EnsembleRequest):
    observed: List[float]


class BandsRequest(EnsembleRequest):
    scp: List[float] = list(SCP_GRID)
    side: Optional[str] = None


class TradeRequest(ScoreRequest):
    t0: Optional[float] = None


def _ensemble(request: EnsembleRequest) -> np.ndarray:
    return TrajectoryEnsemble(paths=np.asarray(request.paths, dtype=float), generator="EXTERNAL").paths


def _rejected(action: str, error: Exception) -> HTTPException:
    logger.warning(f"{action} rejected: {error}")
    return HTTPException(status_code=422, detail=f"{type(error).__name__}: {error}")


def _failed(action: str, error: Exception) -> HTTPException:
    logger.error(f"{action} failed: {str(error)}")
    return HTTPException(status_code=500, detail=f"{action} failed: {str(error)}")


@app.get("/")
async def root():
    """Root endpoint with API information"""
    return {
        "message": "pathcast API",
        "version": "1.0.0",
        "endpoints": {
            "ingest": "POST /ingest - Validate a market CSV",
            "score": "POST /score - Score an ensemble against an observed path",
            "bands": "POST /bands - Prediction bands of an ensemble",
            "trade": "POST /trade - Majority-vote and benchmark trades",
            "runs": "GET /runs - List stored backtest runs",
        }
    }


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "timestamp": str(datetime.now())}


@app.post("/ingest")
async def ingest(file: UploadFile = File(...)):
    """
    Validate an uploaded market CSV

    Returns:
        Ingest summary (markets, range, missing cells, content hash)
    """
    try:
        frame = loader.ingest(await file.read())
        return loader.summary(frame)
    except PathcastError as e:
        raise _rejected("Ingest", e)
    except Exception as e:
        raise _failed("Ingest", e)


@app.post("/score")
async def score(request: ScoreRequest):
    """ES, DSS, VS-1, VS-0.5 and per-subperiod CRPS/MAE"""
    try:
        return score_paths(_ensemble(request), np.asarray(request.observed, dtype=float))
    except (PathcastError, ValueError) as e:
        raise _rejected("Scoring", e)
    except Exception as e:
        raise _failed("Scoring", e)


@app.post("/bands")
async def bands(request: BandsRequest):
    """Bands per SCP level, both sides unless one is asked for"""
    try:
        if request.side is not None and request.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}")
        sides = SIDES if request.side is None else (request.side,)
        return {"bands": band_rows(_ensemble(request), request.scp, sides)}
    except (PathcastError, ValueError) as e:
        raise _rejected("Bands", e)
    except Exception as e:
        raise _failed("Bands", e)


@app.post("/trade")
async def trade(request: TradeRequest):
    """Majority-vote decision with naive and crystal-ball benchmarks"""
    try:
        path = PricePath(key=None, values=np.asarray(request.observed, dtype=float), last_pre_vwap=request.t0)
        return trade_paths(_ensemble(request), path)
    except (PathcastError, ValueError) as e:
        raise _rejected("Trade", e)
    except Exception as e:
        raise _failed("Trade", e)


@app.get("/runs")
async def list_runs():
    """List all stored backtest runs"""
    try:
        runs = run_store.list_runs()
        return {"runs": runs, "total_count": len(runs)}
    except Exception as e:
        raise _failed("Listing runs", e)


@app.get("/runs/{run_id}")
async def get_run(run_id: int):
    """One run with its strategy totals and score table"""
    try:
        run = run_store.get_run(run_id)
        if not run:
            raise HTTPException(status_code=404, detail=f"Run with ID {run_id} not found")
        return run
    except HTTPException:
        raise
    except Exception as e:
        raise _failed("Reading run", e)


@app.delete("/runs/{run_id}")
async def delete_run(run_id: int):
    """Delete a stored run"""
    try:
        if not run_store.delete_run(run_id):
            raise HTTPException(status_code=404, detail=f"Run with ID {run_id} not found")
        return {"message": f"Run {run_id} deleted successfully"}
    except HTTPException:
        raise
    except Exception as e:
        raise _failed("Deleting run", e)


@app.get("/statistics")
async def get_statistics():
    """Run store statistics"""
    try:
        return {"run_stats": run_store.get_statistics()}
    except Exception as e:
        raise _failed("Statistics", e)


if __name__ == "__main__":
    import uvicorn

    port = int(os.environ.get("PORT", 8000))

    print("🚀 Starting pathcast API Server")
    print("=" * 50)
    print(f"Port: {port}")
    print("API Documentation: /docs")
    print("Health Check: /health")
    print("=" * 50)

    uvicorn.run(
        "api_server:app",
        host="0.0.0.0",
        port=port,
        reload=False,
        log_level="info"
    )
