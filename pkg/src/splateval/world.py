"""Kinematic world stepping and observation rendering for rollouts.

The robot follows a rate-limited joint servo toward commanded targets at
a fixed control rate (default 15 Hz). Gripper attachment is a heuristic:
closing past a width threshold with an object within reach rigidly
attaches it to the gripper frame; opening past a release threshold
detaches it and settles it straight down onto the nearest support.
Everything is a pure function of (state, action, config).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import RigidTransform
from .render import RenderConfig, render
from .robot import JointConfig, clamp_to_limits, forward_kinematics
from .scene import ComposedScene, SceneState, _settle_instance
from .splats import Camera, RenderBuffers

CONTROL_HZ = 15.0


@dataclass(frozen=True)
class WorldConfig:
    dt: float = 1.0 / CONTROL_HZ
    v_max: float = 1.5  # rad/s (or m/s for prismatic joints), per joint
    gripper_v_max: float = 0.25  # m/s of width change
    grasp_width: float = 0.03  # closing past this width tries to attach
    release_width: float = 0.05  # opening past this width detaches
    grasp_distance: float = 0.06  # object center-to-gripper reach for attachment
    action_latency_steps: int = 0  # extra servo lag, models slower real hardware
    render: RenderConfig = field(default_factory=RenderConfig)


@dataclass(frozen=True)
class WorldState:
    q: np.ndarray  # arm joints, model order (excludes the gripper width)
    gripper_width: float
    instance_poses: dict[str, RigidTransform]
    initial_poses: dict[str, RigidTransform]
    attachment: tuple[str, RigidTransform] | None  # (instance, gripper->object)
    time: float
    pending_target: np.ndarray | None = None  # latency pipeline

    def attached_instance(self) -> str | None:
        return None if self.attachment is None else self.attachment[0]


@dataclass
class Observation:
    images: dict[str, np.ndarray]  # name -> (H,W,3) float in [0,1]
    proprio: np.ndarray  # arm q + gripper width, length dof+1
    instruction: str
    step_index: int


def arm_dof(scene: ComposedScene) -> int:
    return scene.robot.model.dof - 1  # last actuated joint is the gripper


def split_gripper(scene: ComposedScene, q_full: JointConfig) -> tuple[np.ndarray, float]:
    q = q_full.q
    return q[:-1].copy(), float(q[-1])


def initial_world_state(scene: ComposedScene, instance_poses: dict[str, RigidTransform]) -> WorldState:
    arm_q, width = split_gripper(scene, scene.initial_q())
    return WorldState(
        q=arm_q,
        gripper_width=width,
        instance_poses=dict(instance_poses),
        initial_poses=dict(instance_poses),
        attachment=None,
        time=0.0,
    )


def gripper_pose(scene: ComposedScene, q: np.ndarray, width: float) -> RigidTransform:
    """World pose of the wrist camera link's tool frame."""
    full = JointConfig(np.concatenate([q, [width]]))
    fk = forward_kinematics(scene.robot.model, full)
    link = scene.wrist_camera[1].link
    return scene.robot_base.compose(fk[link])


def scene_state(scene: ComposedScene, state: WorldState) -> SceneState:
    return SceneState(
        instance_poses=state.instance_poses,
        initial_poses=state.initial_poses,
        gripper_pose=gripper_pose(scene, state.q, state.gripper_width),
        gripper_width=state.gripper_width,
        attached_instance=state.attached_instance(),
    )


def step_world(
    scene: ComposedScene, state: WorldState, action: np.ndarray, config: WorldConfig
) -> WorldState:
    """Advance one control period toward an action row (arm targets + gripper cmd).

    The action's last element is a normalized gripper command in [0, 1]
    mapped onto the gripper joint's travel; the rest are joint position
    targets tracked with per-joint velocity clamping.
    """
    action = np.asarray(action, dtype=float).reshape(-1)
    dof = arm_dof(scene)
    if action.shape[0] != dof + 1:
        raise ValueError(f"action has {action.shape[0]} values, expected {dof + 1}")
    if not np.all(np.isfinite(action)):
        raise ValueError("non-finite action")

    lo, hi = scene.robot.model.joint_limits()
    if config.action_latency_steps > 0:
        if state.pending_target is not None:
            effective = state.pending_target
        else:
            # pipeline bootstrap: hold the current configuration one period
            width_cmd = (state.gripper_width - lo[-1]) / max(hi[-1] - lo[-1], 1e-12)
            effective = np.concatenate([state.q, [width_cmd]])
        pending = action
    else:
        effective, pending = action, None

    target_q = effective[:dof]
    grip_cmd = float(np.clip(effective[dof], 0.0, 1.0))

    limit = config.v_max * config.dt
    q_new = state.q + np.clip(target_q - state.q, -limit, limit)
    q_new = np.clip(q_new, lo[:-1], hi[:-1])

    g_lo, g_hi = lo[-1], hi[-1]
    width_target = g_lo + grip_cmd * (g_hi - g_lo)
    g_limit = config.gripper_v_max * config.dt
    width_new = state.gripper_width + float(np.clip(width_target - state.gripper_width, -g_limit, g_limit))
    width_new = float(np.clip(width_new, g_lo, g_hi))

    grip = gripper_pose(scene, q_new, width_new)
    attachment = state.attachment
    poses = dict(state.instance_poses)

    if attachment is not None:
        inst, grip_t = attachment
        if width_new >= config.release_width:
            # release: settle the object straight down onto its support
            released = grip.compose(grip_t)
            others = {k: v for k, v in poses.items() if k != inst}
            poses[inst] = _settle_instance(scene, inst, released, others)
            attachment = None
        else:
            poses[inst] = grip.compose(grip_t)
    else:
        closing = width_new < state.gripper_width
        if closing and width_new <= config.grasp_width:
            dists = {
                inst: float(np.linalg.norm(p.translation - grip.translation))
                for inst, p in poses.items()
            }
            if dists:
                inst = min(dists, key=dists.get)
                if dists[inst] <= config.grasp_distance:
                    attachment = (inst, grip.inverse().compose(poses[inst]))

    return WorldState(
        q=q_new,
        gripper_width=width_new,
        instance_poses=poses,
        initial_poses=state.initial_poses,
        attachment=attachment,
        time=state.time + config.dt,
        pending_target=pending,
    )


def wrist_camera_at(scene: ComposedScene, q: np.ndarray, width: float) -> Camera:
    name, wb = scene.wrist_camera
    full = JointConfig(np.concatenate([q, [width]]))
    fk = forward_kinematics(scene.robot.model, full)
    pose = scene.robot_base.compose(fk[wb.link]).compose(wb.offset)
    cam = Camera(pose, wb.fx, wb.fy, wb.cx, wb.cy, wb.width, wb.height)
    cam.validate()
    return cam


def render_observation(
    scene: ComposedScene, state: WorldState, instruction: str | None = None,
    step_index: int = 0, config: WorldConfig | None = None,
) -> Observation:
    """Render every named camera against the reposed flattened scene."""
    config = config or WorldConfig()
    q_full = JointConfig(np.concatenate([state.q, [state.gripper_width]]))
    flat = scene.flatten(q_full, state.instance_poses)
    images: dict[str, np.ndarray] = {}
    for cam_name, cam in scene.external_cameras.items():
        images[cam_name] = render(flat, cam, config.render).color
    wrist_name = scene.wrist_camera[0]
    wrist_cam = wrist_camera_at(scene, state.q, state.gripper_width)
    images[wrist_name] = render(flat, wrist_cam, config.render).color
    return Observation(
        images=images,
        proprio=np.concatenate([state.q, [state.gripper_width]]),
        instruction=instruction if instruction is not None else scene.rubric.instruction,
        step_index=step_index,
    )
