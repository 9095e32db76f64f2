"""Splat-based real-to-sim reconstruction and policy-evaluation toolkit."""

from .align import CorrespondenceSet, Sim3, apply_sim3_camera, apply_sim3_scene, estimate_sim3
from .articulate import ArticulatedSplat, assign_splats_to_links, pose_articulated_splat
from .geometry import RigidTransform
from .metrics import FaithfulnessReport, ScoreTable, build_report, ingest_scores, mmrv, pearson
from .objective import LossBreakdown, ReconConfig, photometric_objective
from .optimize import optimize_scene
from .render import RenderConfig, composite, ray_splat_intersect, render
from .robot import JointConfig, KinematicModel, forward_kinematics, parse_robot_model
from .scene import ComposedScene, Predicate, Rubric, compose, eval_predicate, load_scene, score_rubric
from .splats import Camera, GaussianPrimitive, RenderBuffers, SplatScene
from .tsdf import TSDFVolume, fuse_tsdf
from .meshing import TriangleMesh, extract_mesh
from .world import WorldConfig, WorldState, render_observation, step_world
from .episode import EpisodeRecord, replay_error_analysis, run_episode, run_suite

__all__ = [
    "ArticulatedSplat",
    "Camera",
    "ComposedScene",
    "CorrespondenceSet",
    "EpisodeRecord",
    "FaithfulnessReport",
    "GaussianPrimitive",
    "JointConfig",
    "KinematicModel",
    "LossBreakdown",
    "Predicate",
    "ReconConfig",
    "RenderBuffers",
    "RenderConfig",
    "RigidTransform",
    "Rubric",
    "ScoreTable",
    "Sim3",
    "SplatScene",
    "TSDFVolume",
    "TriangleMesh",
    "WorldConfig",
    "WorldState",
    "apply_sim3_camera",
    "apply_sim3_scene",
    "assign_splats_to_links",
    "build_report",
    "compose",
    "composite",
    "estimate_sim3",
    "eval_predicate",
    "extract_mesh",
    "forward_kinematics",
    "fuse_tsdf",
    "ingest_scores",
    "load_scene",
    "mmrv",
    "optimize_scene",
    "parse_robot_model",
    "pearson",
    "photometric_objective",
    "pose_articulated_splat",
    "ray_splat_intersect",
    "render",
    "render_observation",
    "replay_error_analysis",
    "run_episode",
    "run_suite",
    "score_rubric",
    "step_world",
]

__version__ = "0.1.0"
