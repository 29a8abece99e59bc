from typing import Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from src.simulation.consensus_demo import run_consensus_demo
from src.simulation.scenario import run_scenario
from src.utility.db_ops import get_report_rows, save_report
from src.utility.errors import BcdnError, ConfigError
from src.utility.logger import logger
from src.utility.models import ConsensusDemoRequest, ConsensusDemoResult, MetricsReport, ScenarioConfig


app = FastAPI(
    title="B-CDN Simulator",
    version="1.0.0",
)

app.add_middleware(
        CORSMiddleware,
        allow_origins=['http://localhost:8000'],
        allow_credentials=True,
        allow_methods=['*'],
        allow_headers=['*'],
    )


@app.get("/health")
async def health_check():
    return {"status": "ok"}


@app.post("/scenarios", response_model=MetricsReport)
def create_scenario_run(config: ScenarioConfig):
    """
    Runs a scenario and stores its metrics rows.

    The body is a ScenarioConfig; pydantic rejects invalid configurations with
    a 422 before any work starts.

    Args:
        config (ScenarioConfig): The experiment definition.

    Returns:
        MetricsReport: One row per (CP, architecture, Z) plus ledger checks.

    Raises:
        HTTPException: 400 for configuration or domain errors, 500 for anything else.
    """
    try:
        report = run_scenario(config)
        save_report(report)
        return report
    except (ConfigError, FileNotFoundError) as e:
        logger.error(f"Scenario rejected: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    except BcdnError as e:
        logger.error(f"Scenario failed: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.exception(f"Scenario crashed: {e}")
        raise HTTPException(status_code=500, detail="Internal server error")


@app.get("/reports")
async def read_reports(run_id: Optional[str] = Query(None, alias="runId")):
    """
    Endpoint to retrieve stored metrics rows.

    Args:
        run_id (Optional[str]): Run to fetch, passed as the ``runId`` query parameter.
            All rows are returned when omitted.

    Returns:
        JSONResponse:
            - 200: ``{"data": [...]}`` with one object per row.
            - 404: No rows stored (for that run).
    """
    rows = get_report_rows(run_id)
    if not rows:
        return JSONResponse(status_code=404, content={"message": "Report not found"})
    return {"data": rows}


@app.post("/consensus/demo", response_model=ConsensusDemoResult)
def consensus_demo(request: ConsensusDemoRequest):
    """Runs the PBFT harness with the given faults and returns the commit summary and safety verdict."""
    try:
        return run_consensus_demo(request)
    except ConfigError as e:
        logger.error(f"Consensus demo rejected: {e}")
        raise HTTPException(status_code=400, detail=str(e))
