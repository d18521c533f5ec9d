"""Thin command-line client for the experiment service.

All work happens behind the HTTP API. With --server the client talks to
a remote service; without it, an in-process instance of the same app is
used, so the commands work standalone with identical behavior.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import click
import httpx

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def make_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=120.0)
    # in-process transport against a fresh app instance; same routes,
    # same validation, no sockets
    from starlette.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app())


def _fail(msg: str, code: int):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Safe-RL experiment runner (client for the cbfrl service)."""


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--run-root", default=None, help="Directory for server-side run artifacts.")
def serve(host, port, run_root):
    """Start the experiment service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(run_root), host=host, port=port)


@main.command("print-config")
@click.argument("env")
@click.argument("algorithm")
@click.option("--server", default=None, help="Service URL; defaults to in-process.")
def print_config(env, algorithm, server):
    """Print the full default config for ENV and ALGORITHM as INI text."""
    with make_client(server) as client:
        resp = client.get(f"/config/defaults/{env}/{algorithm}")
        if resp.status_code == 400:
            _fail(resp.json()["detail"], EXIT_USAGE)
        resp.raise_for_status()
        click.echo(resp.json()["config_ini"], nl=False)


@main.command()
@click.argument("config_path", type=click.Path(exists=False))
@click.option("--server", default=None, help="Service URL; defaults to in-process.")
@click.option("--seed", default=None, type=int, help="Override the base seed.")
@click.option("--replications", default=None, type=int, help="Override the replication count.")
@click.option("--output-dir", default=None, type=click.Path(), help="Where to write metrics files.")
@click.option("--poll-interval", default=2.0, show_default=True, type=float)
def run(config_path, server, seed, replications, output_dir, poll_interval):
    """Run the experiment described by the config file at CONFIG_PATH."""
    path = Path(config_path)
    if not path.is_file():
        _fail(f"config file not found: {path}", EXIT_USAGE)
    config_ini = path.read_text()

    with make_client(server) as client:
        resp = client.post(
            "/runs",
            json={
                "config_ini": config_ini,
                "replications": replications,
                "base_seed": seed,
                "label": path.name,
            },
        )
        if resp.status_code in (400, 422):
            detail = resp.json().get("detail", resp.text)
            _fail(f"invalid config: {detail}", EXIT_USAGE)
        resp.raise_for_status()
        run_id = resp.json()["run_id"]
        click.echo(f"submitted run {run_id}")

        while True:
            status = client.get(f"/runs/{run_id}").json()
            if status["status"] in ("done", "failed"):
                break
            click.echo(
                f"  {status['status']}: replication "
                f"{status['replications_done']}/{status['replications_total']}",
                err=True,
            )
            time.sleep(poll_interval)
        if status["status"] == "failed":
            _fail(f"run failed: {status['error']}", EXIT_RUNTIME)

        artifacts = client.get(f"/runs/{run_id}/artifacts")
        if artifacts.status_code != 200:
            _fail(f"could not fetch artifacts: {artifacts.text}", EXIT_RUNTIME)
        body = artifacts.json()

    # resolve the local destination: the CLI flag wins, then the config's
    # own output_dir
    if output_dir is None:
        import configparser

        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        parser.read_string(config_ini)
        output_dir = parser.get("experiment", "output_dir", fallback="results")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in body["csv_files"].items():
        (out / name).write_text(text, newline="")
    import json as _json

    (out / "aggregate.json").write_text(
        _json.dumps(body["aggregate"], indent=2, sort_keys=True) + "\n", newline=""
    )
    (out / "config.ini").write_text(body["config_ini"])
    (out / "timings.txt").write_text(
        "".join(f"replication {i}: {t:.3f}s\n" for i, t in enumerate(body["timings_s"]))
    )
    click.echo(f"wrote {len(body['csv_files'])} replication CSVs and aggregate.json to {out}")
    sys.exit(EXIT_OK)


@main.command()
@click.argument("suite")
@click.option("--server", default=None, help="Service URL; defaults to in-process.")
def verify(suite, server):
    """Run a built-in oracle suite (estq, scores, maxrect, invariance, normalization)."""
    with make_client(server) as client:
        resp = client.post("/verify", json={"suite": suite})
        if resp.status_code in (400, 422):
            _fail(resp.json().get("detail", resp.text), EXIT_USAGE)
        resp.raise_for_status()
        body = resp.json()
    width = max(len(c["name"]) for c in body["checks"])
    for c in body["checks"]:
        mark = "PASS" if c["passed"] else "FAIL"
        click.echo(f"[{mark}] {c['name']:<{width}}  {c['detail']}")
    sys.exit(EXIT_OK if body["passed"] else EXIT_RUNTIME)


if __name__ == "__main__":
    main()
