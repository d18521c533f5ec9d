"""Pydantic request/response models for the experiment service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class DefaultsResponse(BaseModel):
    env: str
    algorithm: str
    config_ini: str
    config: dict


class RunRequest(BaseModel):
    """Submit an experiment. The config is INI text; overrides mirror the
    CLI flags and are applied after parsing."""

    config_ini: str
    replications: int | None = Field(default=None, ge=1)
    base_seed: int | None = None
    label: str | None = None


class RunSubmitted(BaseModel):
    run_id: str
    status: str


class RunStatus(BaseModel):
    run_id: str
    status: str  # pending | running | done | failed
    label: str | None = None
    env: str | None = None
    algorithm: str | None = None
    replications_done: int = 0
    replications_total: int = 0
    error: str | None = None


class RunArtifacts(BaseModel):
    run_id: str
    csv_files: dict[str, str]  # filename -> CSV text
    aggregate: dict
    timings_s: list[float]
    config_ini: str


class RunList(BaseModel):
    runs: list[RunStatus]


class VerifyRequest(BaseModel):
    suite: str


class VerifyCheck(BaseModel):
    name: str
    passed: bool
    detail: str


class VerifyResponse(BaseModel):
    suite: str
    passed: bool
    checks: list[VerifyCheck]
