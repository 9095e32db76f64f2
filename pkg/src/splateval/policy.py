"""Policy wire protocol, HTTP client, and scripted reference policies.

Wire format (POST /act): request body is JSON with ``instruction``,
``images`` ({name: {width, height, data=base64 raw RGB8}}), ``proprio``
(list of floats), and ``step``; the response carries ``actions`` (H x D
floats) and ``done``. Scripted policies plan an open-loop waypoint
script against the scene's nominal placements at step 0, which keeps
episodes fully deterministic.
"""

from __future__ import annotations

import base64
import hashlib
from dataclasses import dataclass

import numpy as np
import requests

from .world import Observation


class PolicyProtocolError(RuntimeError):
    """Endpoint unreachable, timed out, or returned a malformed response."""


@dataclass(frozen=True)
class ActionChunk:
    actions: np.ndarray  # (H, D)
    done: bool = False

    def __post_init__(self):
        a = np.asarray(self.actions, dtype=float)
        if a.ndim != 2 or a.shape[0] < 1:
            raise ValueError("action chunk must be (H, D) with H >= 1")
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite action values")
        object.__setattr__(self, "actions", a)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


def encode_image(img: np.ndarray) -> dict:
    u8 = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    return {
        "width": int(u8.shape[1]),
        "height": int(u8.shape[0]),
        "data": base64.b64encode(u8.tobytes()).decode("ascii"),
    }


def decode_image(payload: dict) -> np.ndarray:
    raw = base64.b64decode(payload["data"])
    h, w = int(payload["height"]), int(payload["width"])
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(float) / 255.0


def observation_request(obs: Observation) -> dict:
    return {
        "instruction": obs.instruction,
        "images": {name: encode_image(img) for name, img in obs.images.items()},
        "proprio": [float(v) for v in obs.proprio],
        "step": obs.step_index,
    }


def parse_action_response(doc: dict) -> ActionChunk:
    if "actions" not in doc:
        raise PolicyProtocolError("response missing 'actions'")
    try:
        return ActionChunk(np.array(doc["actions"], dtype=float), bool(doc.get("done", False)))
    except (ValueError, TypeError) as exc:
        raise PolicyProtocolError(f"malformed action chunk: {exc}") from exc


class PolicyClient:
    """HTTP client for the /act protocol."""

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._session = requests.Session()

    def act(self, obs: Observation) -> ActionChunk:
        try:
            resp = self._session.post(
                self.endpoint + "/act", json=observation_request(obs), timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise PolicyProtocolError(f"policy endpoint failed: {exc}") from exc
        if resp.status_code != 200:
            raise PolicyProtocolError(f"policy endpoint returned HTTP {resp.status_code}")
        try:
            doc = resp.json()
        except ValueError as exc:
            raise PolicyProtocolError("policy endpoint returned non-JSON body") from exc
        return parse_action_response(doc)


# --- scripted reference policies ----------------------------------------------


def _det_noise(seed: int, step: int, row: int, dim: int, scale: float) -> np.ndarray:
    """Deterministic pseudo-noise independent of call order."""
    if scale == 0.0:
        return np.zeros(dim)
    key = hashlib.sha256(f"{seed}:{step}:{row}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(key[:8], "little"))
    return rng.normal(0.0, scale, dim)


@dataclass
class ScriptedCompetence:
    """Knobs for graded policy quality."""

    stop_after_stage: int = 99  # truncate the waypoint script after this stage
    noise_scale: float = 0.0  # per-element action noise, radians/meters
    place_offset: tuple[float, float] = (0.0, 0.0)  # sloppy placement bias, meters
    seed: int = 0


class GantryPickPlacePolicy:
    """Open-loop pick-and-place script for the cartesian fixture robot.

    Plans joint-space waypoints from the scene's nominal object placement
    at step 0 (a real policy would infer this from the images; the script
    stands in as a deterministic oracle with a known score profile).
    """

    ACTION_DIM = 8

    def __init__(
        self,
        base_xyz,
        tool_drop: float,
        object_xy,
        object_z: float,
        target_xy,
        place_z: float,
        competence: ScriptedCompetence | None = None,
        hold_steps: int = 10,
        lift_z: float = 0.18,
    ):
        self.base_xyz = np.asarray(base_xyz, dtype=float)
        self.tool_drop = tool_drop
        self.object_xy = np.asarray(object_xy, dtype=float)
        self.object_z = object_z
        self.target_xy = np.asarray(target_xy, dtype=float)
        self.place_z = place_z
        self.competence = competence or ScriptedCompetence()
        self.hold_steps = hold_steps
        self.lift_z = lift_z
        self._script: np.ndarray | None = None

    def _tcp_to_joints(self, x: float, y: float, z: float) -> np.ndarray:
        q = np.zeros(7)
        q[0] = x - self.base_xyz[0]
        q[1] = y - self.base_xyz[1]
        q[2] = z - self.base_xyz[2] + self.tool_drop
        return q

    def _plan(self) -> np.ndarray:
        ox, oy = self.object_xy
        tx = self.target_xy[0] + self.competence.place_offset[0]
        ty = self.target_xy[1] + self.competence.place_offset[1]
        open_cmd, close_cmd = 1.0, 0.0
        stages = [
            (self._tcp_to_joints(ox, oy, self.lift_z), open_cmd),  # 0: above object
            (self._tcp_to_joints(ox, oy, self.object_z), open_cmd),  # 1: descend
            (self._tcp_to_joints(ox, oy, self.object_z), close_cmd),  # 2: close
            (self._tcp_to_joints(ox, oy, self.lift_z), close_cmd),  # 3: lift
            (self._tcp_to_joints(tx, ty, self.lift_z), close_cmd),  # 4: traverse
            (self._tcp_to_joints(tx, ty, self.place_z), close_cmd),  # 5: lower
            (self._tcp_to_joints(tx, ty, self.place_z), open_cmd),  # 6: open
            (self._tcp_to_joints(tx, ty, self.lift_z), open_cmd),  # 7: retreat
        ]
        stages = stages[: self.competence.stop_after_stage + 1]
        rows = []
        for q, grip in stages:
            for _ in range(self.hold_steps):
                rows.append(np.concatenate([q, [grip]]))
        return np.stack(rows)

    def act(self, proprio: np.ndarray, step: int, horizon: int = 10) -> tuple[np.ndarray, bool]:
        if step == 0 or self._script is None:
            self._script = self._plan()
        script = self._script
        start = min(step, len(script) - 1)
        rows = []
        done = False
        for k in range(horizon):
            idx = start + k
            if idx >= len(script):
                idx = len(script) - 1
                done = True
            row = script[idx].copy()
            row += _det_noise(self.competence.seed, step, k, self.ACTION_DIM, self.competence.noise_scale)
            row[-1] = np.clip(row[-1], 0.0, 1.0)
            rows.append(row)
        return np.stack(rows), done or step >= len(script)


class ZeroTargetPolicy:
    """Commands all-zero targets forever (a motionless lower bound)."""

    def __init__(self, action_dim: int = 8):
        self.action_dim = action_dim

    def act(self, proprio: np.ndarray, step: int, horizon: int = 10) -> tuple[np.ndarray, bool]:
        return np.zeros((horizon, self.action_dim)), False


class ReplayPolicy:
    """Replays a fixed action matrix, then holds the last row."""

    def __init__(self, actions: np.ndarray):
        self.actions = np.asarray(actions, dtype=float)

    def act(self, proprio: np.ndarray, step: int, horizon: int = 10) -> tuple[np.ndarray, bool]:
        rows = []
        done = False
        for k in range(horizon):
            idx = step + k
            if idx >= len(self.actions):
                idx = len(self.actions) - 1
                done = True
            rows.append(self.actions[idx])
        return np.stack(rows), done
