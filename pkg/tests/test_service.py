import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from splateval.policy_server import serve_policy
from splateval.scene import load_scene
from splateval.service import create_app
from splateval.synthetic import scripted_policy_for_scene, write_pickplace_fixture


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    write_pickplace_fixture(root / "scene")
    return root / "scene"


@pytest.fixture()
def client(fixture_dir):
    app = create_app(asset_roots=[fixture_dir / "objects"], scene_root=fixture_dir)
    return TestClient(app)


def open_session(client, fixture_dir):
    resp = client.post("/session", json={"descriptor": str(fixture_dir / "scene.psd")})
    assert resp.status_code == 200
    return resp.json()["session"]


class TestAssets:
    def test_list_assets(self, client):
        assets = client.get("/assets").json()
        assert len(assets) == 1
        assert assets[0]["id"] == "cube"
        assert assets[0]["splats"] > 0

    def test_thumbnail_png(self, client):
        resp = client.get("/assets/cube/thumbnail")
        assert resp.status_code == 200
        assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_unknown_asset_404(self, client):
        assert client.get("/assets/nope/thumbnail").status_code == 404


class TestSessions:
    def test_placement_roundtrip_and_undo(self, client, fixture_dir):
        session = open_session(client, fixture_dir)
        before = client.get(f"/scene/{session}/placements").json()
        n0 = len(before["placements"])
        placement = {
            "asset": "cube",
            "instance": "cube_extra",
            "pose": list(np.eye(4)[:4].reshape(-1)),
            "randomization": {"x": [0, 0], "y": [0, 0], "z": [0, 0], "yaw": [0, 0]},
        }
        placement["pose"][3] = 0.05  # x translation
        placement["pose"][11] = 0.02  # z translation
        resp = client.post(
            f"/scene/{session}/placements",
            json={"op": "add", "placement": placement, "version": before["version"]},
        )
        assert resp.status_code == 200
        assert len(resp.json()["placements"]) == n0 + 1
        # undo restores the draft
        resp = client.post(f"/scene/{session}/undo")
        assert resp.status_code == 200
        after = client.get(f"/scene/{session}/placements").json()
        assert len(after["placements"]) == n0

    def test_version_conflict_409(self, client, fixture_dir):
        session = open_session(client, fixture_dir)
        placement = {"asset": "cube", "instance": "x", "pose": list(np.eye(4).reshape(-1))}
        r1 = client.post(
            f"/scene/{session}/placements", json={"op": "add", "placement": placement, "version": 0}
        )
        assert r1.status_code == 200
        r2 = client.post(
            f"/scene/{session}/placements", json={"op": "add", "placement": placement, "version": 0}
        )
        assert r2.status_code == 409

    def test_idempotency_key_replays(self, client, fixture_dir):
        session = open_session(client, fixture_dir)
        placement = {"asset": "cube", "instance": "once", "pose": list(np.eye(4).reshape(-1))}
        body = {"op": "add", "placement": placement}
        h = {"Idempotency-Key": "abc123"}
        r1 = client.post(f"/scene/{session}/placements", json=body, headers=h)
        r2 = client.post(f"/scene/{session}/placements", json=body, headers=h)
        assert r1.json() == r2.json()
        placements = client.get(f"/scene/{session}/placements").json()["placements"]
        assert sum(1 for p in placements if p.get("instance") == "once") == 1

    def test_rubric_post_and_bad_kind(self, client, fixture_dir):
        session = open_session(client, fixture_dir)
        rubric = {
            "task": "t", "instruction": "do it",
            "steps": [{"description": "s1", "kind": "near", "params": {"a": "cube", "b": "cube", "distance": 0.1}}],
        }
        assert client.post(f"/scene/{session}/rubric", json=rubric).status_code == 200
        bad = {"task": "t", "instruction": "i", "steps": [{"kind": "teleport", "params": {}}]}
        assert client.post(f"/scene/{session}/rubric", json=bad).status_code == 400

    def test_unknown_session_404(self, client):
        assert client.get("/scene/deadbeef").status_code == 404

    def test_schema_served(self, client):
        schema = client.get("/schema").json()
        assert "near" in schema["predicates"]
        assert "POST /render/preview" in schema["endpoints"]


class TestPreviewAndSave:
    def test_preview_deterministic(self, client, fixture_dir):
        session = open_session(client, fixture_dir)
        body = {"session": session, "camera": "external"}
        a = client.post("/render/preview", json=body)
        b = client.post("/render/preview", json=body)
        assert a.status_code == 200
        assert a.content == b.content  # byte-identical renders

    def test_preview_matches_direct_engine_render(self, client, fixture_dir):
        from splateval.render import RenderConfig, render
        from splateval.service import _png_bytes

        session = open_session(client, fixture_dir)
        resp = client.post("/render/preview", json={"session": session, "camera": "external"})
        scene = load_scene(fixture_dir / "scene.psd")
        flat = scene.flatten(scene.initial_q(), scene.nominal_poses())
        direct = render(flat, scene.external_cameras["external"], RenderConfig())
        assert resp.content == _png_bytes(direct.color)

    def test_saved_descriptor_validates(self, client, fixture_dir, tmp_path):
        session = open_session(client, fixture_dir)
        out = fixture_dir / "saved_scene.psd"
        resp = client.post(f"/scene/{session}/save", json={"path": str(out)})
        assert resp.status_code == 200
        scene = load_scene(out)
        assert scene.rubric.task == "cube-to-tray"
        from splateval.cli import main

        assert main(["compose", "--spec", str(out), "--validate"]) == 0


class TestEvalJobs:
    def test_eval_job_lifecycle(self, client, fixture_dir):
        scene = load_scene(fixture_dir / "scene.psd")
        with serve_policy(scripted_policy_for_scene(scene)) as server:
            resp = client.post(
                "/eval/start",
                json={
                    "scene": str(fixture_dir / "scene.psd"),
                    "policy": server.endpoint,
                    "episodes": 1,
                    "max_steps": 140,
                },
            )
            job = resp.json()["job"]
            deadline = time.time() + 120
            while time.time() < deadline:
                status = client.get(f"/eval/{job}/status").json()
                if status["state"] in ("done", "failed"):
                    break
                time.sleep(0.3)
        assert status["state"] == "done", status
        metrics = client.get(f"/metrics/{job}").json()
        assert metrics["summary"]["mean_score"] == 1.0
