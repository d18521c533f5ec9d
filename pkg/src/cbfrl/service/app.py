"""FastAPI application exposing the experiment runner and oracle suites.

Endpoints:
  GET  /health                          liveness + version
  GET  /config/defaults/{env}/{algo}    full default config for a pair
  POST /runs                            submit an experiment (async job)
  GET  /runs                            list runs
  GET  /runs/{run_id}                   poll status
  GET  /runs/{run_id}/artifacts         CSVs + aggregate once done
  POST /verify                          run an oracle suite (synchronous)
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..harness import (
    ConfigError,
    apply_overrides,
    default_config,
    parse_config_text,
    render_config_ini,
)
from ..verification import SUITES, run_suite
from .jobs import RunRegistry
from .models import (
    DefaultsResponse,
    HealthResponse,
    RunArtifacts,
    RunList,
    RunRequest,
    RunStatus,
    RunSubmitted,
    VerifyCheck,
    VerifyRequest,
    VerifyResponse,
)


def create_app(run_root=None) -> FastAPI:
    app = FastAPI(title="cbfrl experiment service", version=__version__)
    registry = RunRegistry(run_root)
    app.state.registry = registry

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.get("/config/defaults/{env}/{algorithm}", response_model=DefaultsResponse)
    def config_defaults(env: str, algorithm: str):
        try:
            cfg = default_config(env, algorithm)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return DefaultsResponse(
            env=env,
            algorithm=algorithm,
            config_ini=render_config_ini(cfg),
            config=cfg.model_dump(),
        )

    @app.post("/runs", response_model=RunSubmitted, status_code=202)
    def submit_run(req: RunRequest):
        try:
            cfg = parse_config_text(req.config_ini)
            if req.replications is not None or req.base_seed is not None:
                cfg = apply_overrides(cfg, replications=req.replications, base_seed=req.base_seed)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        record = registry.submit(cfg, label=req.label)
        return RunSubmitted(run_id=record.run_id, status=record.status)

    def _status(record) -> RunStatus:
        return RunStatus(
            run_id=record.run_id,
            status=record.status,
            label=record.label,
            env=record.config.experiment.env,
            algorithm=record.config.experiment.algorithm,
            replications_done=record.replications_done,
            replications_total=record.replications_total,
            error=record.error,
        )

    @app.get("/runs", response_model=RunList)
    def list_runs():
        return RunList(runs=[_status(r) for r in registry.all()])

    @app.get("/runs/{run_id}", response_model=RunStatus)
    def run_status(run_id: str):
        record = registry.get(run_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        return _status(record)

    @app.get("/runs/{run_id}/artifacts", response_model=RunArtifacts)
    def run_artifacts(run_id: str):
        record = registry.get(run_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        if record.status == "failed":
            raise HTTPException(status_code=500, detail=record.error or "run failed")
        if record.status != "done" or record.manifest is None:
            raise HTTPException(status_code=409, detail=f"run is {record.status}")
        workdir = Path(record.manifest["output_dir"])
        csvs = {
            name: (workdir / name).read_text()
            for name in record.manifest["csv_files"]
        }
        return RunArtifacts(
            run_id=run_id,
            csv_files=csvs,
            aggregate=record.manifest["aggregate"],
            timings_s=record.manifest["timings_s"],
            config_ini=(workdir / "config.ini").read_text(),
        )

    @app.post("/verify", response_model=VerifyResponse)
    def verify(req: VerifyRequest):
        if req.suite not in SUITES:
            raise HTTPException(
                status_code=400,
                detail=f"unknown suite {req.suite!r}; available: {sorted(SUITES)}",
            )
        checks = run_suite(req.suite)
        return VerifyResponse(
            suite=req.suite,
            passed=all(c.passed for c in checks),
            checks=[VerifyCheck(name=c.name, passed=c.passed, detail=c.detail) for c in checks],
        )

    return app


app = create_app()
