import time

import pytest
from starlette.testclient import TestClient

from cbfrl.service.app import create_app

TINY_CONFIG = """
[experiment]
env = pendulum
algorithm = safe_rpg
replications = 2
base_seed = 11
output_dir = unused

[pendulum]
theta_bound = 1.0
episode_len = 15

[safe_rpg]
max_iterations = 6
eval_interval = 3
eval_episodes = 2
hidden = 8
"""


@pytest.fixture()
def client(tmp_path):
    with TestClient(create_app(run_root=tmp_path)) as c:
        yield c


def wait_done(client, run_id, timeout=120.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        status = client.get(f"/runs/{run_id}").json()
        if status["status"] in ("done", "failed"):
            return status
        time.sleep(0.1)
    raise TimeoutError("run did not finish")


class TestHealthAndDefaults:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"

    def test_defaults_round_trip(self, client):
        resp = client.get("/config/defaults/quadcopter/ppo_beta")
        assert resp.status_code == 200
        body = resp.json()
        assert body["config"]["ppo"]["gamma"] == 0.9
        assert "[experiment]" in body["config_ini"]

    def test_defaults_unknown_pair(self, client):
        assert client.get("/config/defaults/boat/ppo_beta").status_code == 400
        assert client.get("/config/defaults/pendulum/dqn").status_code == 400


class TestRunLifecycle:
    def test_submit_poll_fetch(self, client):
        resp = client.post("/runs", json={"config_ini": TINY_CONFIG, "label": "tiny"})
        assert resp.status_code == 202
        run_id = resp.json()["run_id"]

        status = wait_done(client, run_id)
        assert status["status"] == "done"
        assert status["replications_total"] == 2

        art = client.get(f"/runs/{run_id}/artifacts")
        assert art.status_code == 200
        body = art.json()
        assert len(body["csv_files"]) == 2
        for text in body["csv_files"].values():
            assert text.startswith("iteration,return,safety_rate")
        assert body["aggregate"]["replications"] == 2
        assert len(body["timings_s"]) == 2

        listing = client.get("/runs").json()
        assert any(r["run_id"] == run_id for r in listing["runs"])

    def test_overrides_apply(self, client):
        resp = client.post(
            "/runs", json={"config_ini": TINY_CONFIG, "replications": 1, "base_seed": 99}
        )
        run_id = resp.json()["run_id"]
        status = wait_done(client, run_id)
        assert status["replications_total"] == 1
        art = client.get(f"/runs/{run_id}/artifacts").json()
        assert list(art["csv_files"]) == ["replication_00_seed_99.csv"]

    def test_invalid_config_is_400(self, client):
        resp = client.post("/runs", json={"config_ini": "[experiment]\nenv = x\nalgorithm = y"})
        assert resp.status_code == 400

    def test_malformed_body_is_422(self, client):
        assert client.post("/runs", json={"not_config": 1}).status_code == 422

    def test_unknown_run_is_404(self, client):
        assert client.get("/runs/doesnotexist").status_code == 404
        assert client.get("/runs/doesnotexist/artifacts").status_code == 404

    def test_artifacts_before_done_is_409(self, client):
        slow = TINY_CONFIG.replace("max_iterations = 6", "max_iterations = 4000")
        run_id = client.post("/runs", json={"config_ini": slow}).json()["run_id"]
        resp = client.get(f"/runs/{run_id}/artifacts")
        assert resp.status_code in (409, 200)  # 200 only if it finished very fast


class TestVerifyEndpoint:
    def test_unknown_suite(self, client):
        assert client.post("/verify", json={"suite": "nope"}).status_code == 400

    def test_normalization_suite_passes(self, client):
        body = client.post("/verify", json={"suite": "normalization"}).json()
        assert body["passed"] is True
        assert all(c["passed"] for c in body["checks"])
        assert len(body["checks"]) == 4
