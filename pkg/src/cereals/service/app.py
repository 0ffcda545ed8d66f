"""FastAPI application wrapping the core package.

Dataset generation is synchronous (seconds); reference runs and experiments
are jobs polled via /jobs/{id}. Curves and reports are fetched from the
results directory through the service so clients never touch the filesystem
directly.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse

from .. import __version__
from ..config import dataset_spec_from_json, experiment_config_from_json
from ..dataset import load_dataset
from ..errors import ConfigError, DataError
from ..experiment import run_experiment, run_reference
from ..synthetic import generate_dataset
from . import schemas
from .jobs import JobManager


def create_app(max_job_workers: int = 2) -> FastAPI:
    app = FastAPI(title="cereals", version=__version__)
    jobs = JobManager(max_workers=max_job_workers)
    app.state.jobs = jobs

    @app.exception_handler(ConfigError)
    async def _config_error(request, exc: ConfigError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=400, content={"detail": str(exc), "code": "config"})

    @app.exception_handler(DataError)
    async def _data_error(request, exc: DataError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=400, content={"detail": str(exc), "code": "data"})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/datasets/generate", response_model=schemas.GenerateResponse)
    def generate(request: schemas.GenerateRequest) -> schemas.GenerateResponse:
        spec = dataset_spec_from_json(request.spec.model_dump())
        dataset = generate_dataset(spec, request.out_dir)
        return schemas.GenerateResponse(
            dataset_dir=str(dataset.root),
            train_images=len(dataset.train_ids),
            val_images=len(dataset.val_ids),
            num_classes=dataset.num_classes,
            total_train_vertices=dataset.train_vertices(),
        )

    @app.post("/jobs/reference", response_model=schemas.JobCreated)
    def start_reference(request: schemas.ReferenceRequest) -> schemas.JobCreated:
        from ..learners.base import LearnerConfig

        dataset = load_dataset(request.dataset_dir)  # fail fast on bad paths
        learner_config = LearnerConfig(**request.learner.model_dump())

        def work(progress):
            progress("reference", 0, 1)
            result = run_reference(dataset, learner_config, use_cache=request.use_cache)
            progress("reference", 1, 1)
            return result

        job = jobs.submit("reference", work)
        return schemas.JobCreated(job_id=job.job_id)

    @app.post("/jobs/experiment", response_model=schemas.JobCreated)
    def start_experiment(request: schemas.ExperimentRequest) -> schemas.JobCreated:
        config = experiment_config_from_json(request.config.model_dump())
        if not Path(config.dataset_dir).is_dir():
            raise ConfigError(f"dataset_dir {config.dataset_dir} does not exist")

        def work(progress):
            return run_experiment(config, progress=progress)

        job = jobs.submit("experiment", work, results_dir=config.results_dir)
        return schemas.JobCreated(job_id=job.job_id)

    @app.get("/jobs/{job_id}", response_model=schemas.JobStatusResponse)
    def job_status(job_id: str) -> schemas.JobStatusResponse:
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no such job {job_id}")
        return schemas.JobStatusResponse(
            job_id=job.job_id,
            kind=job.kind,
            status=job.status,
            progress=job.progress,
            error=job.error,
            error_code=job.error_code,
            result=job.result,
        )

    @app.get("/jobs/{job_id}/curve", response_class=PlainTextResponse)
    def job_curve(job_id: str, which: str = "mean", rep: int = 0) -> str:
        job = jobs.get(job_id)
        if job is None or job.results_dir is None:
            raise HTTPException(status_code=404, detail=f"no curve for job {job_id}")
        base = Path(job.results_dir)
        path = base / "curve_mean.csv" if which == "mean" else base / "reps" / f"rep{rep:02d}" / "curve.csv"
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"curve not written yet: {path.name}")
        return path.read_text()

    @app.post("/reports", response_model=schemas.ReportResponse)
    def report(request: schemas.ReportRequest) -> schemas.ReportResponse:
        summary_path = Path(request.results_dir) / "summary.json"
        if not summary_path.is_file():
            raise HTTPException(
                status_code=404, detail=f"no summary.json under {request.results_dir}"
            )
        with open(summary_path) as fh:
            summary = json.load(fh)
        return schemas.ReportResponse(summary=summary, table=format_report(summary))

    return app


def format_report(summary: dict) -> str:
    def fmt(value) -> str:
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    lines = [
        f"strategy={summary.get('strategy')} measure={summary.get('measure')} "
        f"fusion={summary.get('fusion')} region_size={summary.get('region_size')} "
        f"cost_mode={summary.get('cost_mode')}",
        f"p100 mIoU {fmt(summary.get('p100_miou'))} (95% target {fmt(summary.get('target_miou'))})",
        f"p95 {fmt(summary.get('p95'))}   c95 {fmt(summary.get('c95'))}",
        "rep  rounds  stop             final_miou  p95        c95",
    ]
    for rep in summary.get("per_rep", []):
        lines.append(
            f"{rep['rep']:>3}  {rep['rounds']:>6}  {rep['stop_reason']:<15} "
            f"{fmt(rep['final_miou']):>10}  {fmt(rep['p95']):>9}  {fmt(rep['c95']):>9}"
        )
    return "\n".join(lines)
