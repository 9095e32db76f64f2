"""Closed-loop episode execution, suite aggregation, and replay analysis.

An episode loops render -> query policy -> execute the returned action
rows through the servo world model -> update rubric progress, until the
rubric completes, the policy declares done, or the step budget runs out.
Endpoint failures mark the episode failed-infrastructure; those never
count as task failures and are tallied separately. Suites share episode
seeds across policies so every policy sees identical initial states.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import RigidTransform
from .policy import ActionChunk, PolicyClient, PolicyProtocolError
from .scene import ComposedScene, rubric_progress, sample_initial_state
from .world import WorldConfig, WorldState, initial_world_state, render_observation, scene_state, step_world


@dataclass
class StepRecord:
    index: int
    action: np.ndarray
    q: np.ndarray
    gripper_width: float
    instance_poses: dict[str, RigidTransform]
    attached: str | None
    time: float
    progress: float


@dataclass
class EpisodeRecord:
    scene_hash: str
    episode_seed: int
    steps: list[StepRecord] = field(default_factory=list)
    progress_trace: list[float] = field(default_factory=list)
    final_score: float = 0.0
    termination: str = "incomplete"
    infrastructure_error: str | None = None

    @property
    def failed_infrastructure(self) -> bool:
        return self.infrastructure_error is not None

    def trace_matrix(self) -> np.ndarray:
        """Dense numeric trace used for bit-level determinism comparisons."""
        rows = []
        for s in self.steps:
            pose_vals = []
            for inst in sorted(s.instance_poses):
                pose_vals.extend(s.instance_poses[inst].as_matrix().reshape(-1))
            rows.append(
                np.concatenate([[s.time], s.action, s.q, [s.gripper_width], pose_vals, [s.progress]])
            )
        return np.stack(rows) if rows else np.zeros((0, 0))


def run_episode(
    scene: ComposedScene,
    policy_endpoint: str | PolicyClient,
    episode_seed: int,
    max_steps: int = 400,
    world_config: WorldConfig | None = None,
    replan_interval: int | None = None,
    policy_timeout: float = 10.0,
    render_dir=None,
) -> EpisodeRecord:
    """One rollout; deterministic given (scene, seed, deterministic policy).

    ``render_dir`` saves each policy observation's images as PNGs.
    """
    config = world_config or WorldConfig()
    if render_dir is not None:
        render_dir = Path(render_dir)
        render_dir.mkdir(parents=True, exist_ok=True)
    client = (
        policy_endpoint
        if isinstance(policy_endpoint, PolicyClient)
        else PolicyClient(policy_endpoint, timeout=policy_timeout)
    )
    record = EpisodeRecord(scene_hash=scene.content_hash, episode_seed=episode_seed)

    poses = sample_initial_state(scene, episode_seed)
    state = initial_world_state(scene, poses)
    states = [scene_state(scene, state)]
    progress, achieved = rubric_progress(scene, states, scene.rubric)
    record.progress_trace.append(progress)

    step_idx = 0
    termination = "max_steps"
    while step_idx < max_steps:
        obs = render_observation(scene, state, step_index=step_idx, config=config)
        if render_dir is not None:
            _save_observation_pngs(obs, render_dir)
        try:
            chunk: ActionChunk = client.act(obs)
        except PolicyProtocolError as exc:
            record.infrastructure_error = str(exc)
            record.termination = "failed-infrastructure"
            record.final_score = 0.0
            return record
        take = chunk.horizon if replan_interval is None else min(replan_interval, chunk.horizon)
        for row in chunk.actions[:take]:
            state = step_world(scene, state, row, config)
            states.append(scene_state(scene, state))
            progress, achieved = rubric_progress(scene, states, scene.rubric)
            record.progress_trace.append(progress)
            record.steps.append(
                StepRecord(
                    index=step_idx,
                    action=np.asarray(row, dtype=float).copy(),
                    q=state.q.copy(),
                    gripper_width=state.gripper_width,
                    instance_poses=dict(state.instance_poses),
                    attached=state.attached_instance(),
                    time=state.time,
                    progress=progress,
                )
            )
            step_idx += 1
            if progress >= 1.0 or step_idx >= max_steps:
                break
        if progress >= 1.0:
            termination = "rubric-complete"
            break
        if chunk.done and step_idx < max_steps:
            termination = "policy-done"
            break

    record.final_score = record.progress_trace[-1]
    record.termination = termination
    return record


@dataclass
class SuiteResult:
    scores: dict[tuple[str, str], float]  # (policy, scene) -> mean progress
    episode_counts: dict[tuple[str, str], int]
    infrastructure_failures: dict[tuple[str, str], int]
    records: dict[tuple[str, str], list[EpisodeRecord]] = field(default_factory=dict)

    def score_rows(self, source: str) -> list[dict]:
        rows = []
        for (policy, scene), score in sorted(self.scores.items()):
            rows.append(
                {
                    "policy": policy,
                    "environment": scene,
                    "source": source,
                    "score": score,
                    "episodes": self.episode_counts[(policy, scene)],
                }
            )
        return rows


def run_suite(
    scenes: dict[str, ComposedScene],
    policy_endpoints: dict[str, str | PolicyClient],
    episodes_per_task: int,
    max_steps: int = 400,
    world_config: WorldConfig | None = None,
    base_seed: int = 1000,
    keep_records: bool = False,
) -> SuiteResult:
    """Paired evaluation: every policy sees the same per-index episode seeds."""
    if not scenes or not policy_endpoints:
        raise ValueError("need at least one scene and one policy")
    scores: dict[tuple[str, str], float] = {}
    counts: dict[tuple[str, str], int] = {}
    failures: dict[tuple[str, str], int] = {}
    records: dict[tuple[str, str], list[EpisodeRecord]] = {}
    for scene_name, scene in scenes.items():
        seeds = [base_seed + i for i in range(episodes_per_task)]
        for policy_name, endpoint in policy_endpoints.items():
            cell = (policy_name, scene_name)
            ok_scores = []
            failed = 0
            cell_records = []
            for seed in seeds:
                rec = run_episode(
                    scene, endpoint, seed, max_steps=max_steps, world_config=world_config
                )
                if rec.failed_infrastructure:
                    failed += 1
                else:
                    ok_scores.append(rec.final_score)
                if keep_records:
                    cell_records.append(rec)
            scores[cell] = float(np.mean(ok_scores)) if ok_scores else float("nan")
            counts[cell] = len(ok_scores)
            failures[cell] = failed
            if keep_records:
                records[cell] = cell_records
    return SuiteResult(scores, counts, failures, records)


def _save_observation_pngs(obs, directory: Path) -> None:
    from PIL import Image

    for name, img in obs.images.items():
        u8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(u8).save(directory / f"step{obs.step_index:05d}_{name}.png")


# --- episode record persistence -------------------------------------------------


def save_episode_record(record: EpisodeRecord, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "scene_hash": record.scene_hash,
        "episode_seed": record.episode_seed,
        "final_score": record.final_score,
        "termination": record.termination,
        "infrastructure_error": record.infrastructure_error,
        "steps": len(record.steps),
        "instances": sorted(record.steps[0].instance_poses) if record.steps else [],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    with open(directory / "steps.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        insts = manifest["instances"]
        header = (
            ["index", "time", "progress", "gripper_width", "attached"]
            + [f"a{i}" for i in range(len(record.steps[0].action))]
            + [f"q{i}" for i in range(len(record.steps[0].q))]
            + [f"{inst}_{k}" for inst in insts for k in ("x", "y", "z")]
        ) if record.steps else ["index"]
        writer.writerow(header)
        for s in record.steps:
            row = [s.index, repr(s.time), repr(s.progress), repr(s.gripper_width), s.attached or ""]
            row += [repr(float(v)) for v in s.action]
            row += [repr(float(v)) for v in s.q]
            for inst in insts:
                row += [repr(float(v)) for v in s.instance_poses[inst].translation]
            writer.writerow(row)


# --- open-loop replay error analysis ---------------------------------------------


def replay_error_analysis(
    commanded: np.ndarray,
    achieved: np.ndarray,
    mode: str,
    dt: float = 1.0 / 15.0,
    v_max: float = 1.5,
    disturbance_scale: float = 0.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate open-loop replay of a recording under the servo model.

    ``commanded``/``achieved`` are (T, d) joint matrices from a recorded
    execution. Position mode servos toward each commanded target
    (feedback to an absolute reference); velocity mode integrates the
    finite-differenced targets with no feedback, so per-step actuation
    disturbances accumulate. ``disturbance_scale`` injects uniform
    per-step actuation error in [-scale, scale] per joint, modelling the
    replaying system's tracking imperfection. Returns (times, |error|)
    with error per step and joint against the recorded achieved path.
    """
    commanded = np.asarray(commanded, dtype=float)
    achieved = np.asarray(achieved, dtype=float)
    if commanded.ndim != 2 or commanded.shape[0] == 0:
        raise ValueError("empty recording")
    if commanded.shape != achieved.shape:
        raise ValueError(
            f"commanded {commanded.shape} and achieved {achieved.shape} streams disagree"
        )
    if mode not in ("position", "velocity"):
        raise ValueError(f"unknown mode {mode!r}")
    t_steps, dof = commanded.shape
    rng = np.random.default_rng(seed)
    limit = v_max * dt

    q = achieved[0].copy()
    errors = np.zeros((t_steps, dof))
    errors[0] = np.abs(q - achieved[0])
    for t in range(1, t_steps):
        if mode == "position":
            target = commanded[t]
        else:
            target = q + (commanded[t] - commanded[t - 1])
        step = np.clip(target - q, -limit, limit)
        disturbance = rng.uniform(-disturbance_scale, disturbance_scale, dof) if disturbance_scale else 0.0
        q = q + step + disturbance
        errors[t] = np.abs(q - achieved[t])
    times = np.arange(t_steps) * dt
    return times, errors


def save_error_curve(times: np.ndarray, errors: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"joint{i}" for i in range(errors.shape[1])])
        for t, row in zip(times, errors):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
