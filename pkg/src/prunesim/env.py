"""The reach environment: velocity actions, shaped rewards, success test.

One step applies a cutter twist for half a second.  The twist is turned into
joint velocities with a damped pseudo-inverse at every substep, and every
substep is checked for contact.  Rigid contact stops the arm where it was;
small branches are brushed through (and penalized).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import IO, Sequence

import numpy as np

from .contact import RIGID, SMALL, RobotCollider
from .episodes import Episode, episode_scene
from .perception import CameraModel, camera_pose, compute_flow, render_cutpoint_image
from .robot import (
    CutterFrame,
    KinematicModel,
    clamp_joint_velocities,
    forward_kinematics,
    joint_frames,
    proprioception,
    rotation_log,
    solve_joint_velocities,
)
from .scene import SceneConfig
from .treegen import TreeModel, TrellisSpec

__all__ = [
    "Cutpoint",
    "RewardWeights",
    "RewardBreakdown",
    "SuccessReport",
    "Observation",
    "StepResult",
    "EnvConfig",
    "EnvError",
    "PruningEnv",
    "cosine_similarity",
    "r_reach",
    "r_point",
    "r_perp",
    "pointing_cosine",
    "check_success",
    "assemble_reward",
]

DEGENERATE = 1e-3


class EnvError(RuntimeError):
    """Protocol misuse: stepping before reset or after the episode ended."""


class EpisodeRejected(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Cutpoint:
    p_g: np.ndarray  # robot base frame
    b: np.ndarray
    branch: int = -1
    tree: int = -1

    def __post_init__(self):
        if abs(float(np.linalg.norm(self.b)) - 1.0) > 1e-9:
            raise ValueError("branch direction must be a unit vector")


@dataclass(frozen=True)
class RewardWeights:
    alpha_m: float = 5.0
    alpha_p1: float = 6.0
    alpha_p2: float = 2.0
    r_term: float = 2.0
    r_slack: float = -0.1
    c_small: float = -0.01
    c_rigid: float = -0.1


@dataclass(frozen=True)
class RewardBreakdown:
    r_reach: float
    r_point: float
    r_perp: float
    r_col: float
    r_term: float
    r_slack: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ reward terms


def _norm(v) -> float:
    # math.sqrt of a dot product is much cheaper than np.linalg.norm on 3-vectors
    return math.sqrt(float(v @ v))


def cosine_similarity(v1, v2) -> float:
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    n1, n2 = _norm(v1), _norm(v2)
    if n1 <= DEGENERATE or n2 <= DEGENERATE:
        raise ValueError("cosine similarity of a (near) zero vector")
    return max(-1.0, min(1.0, float(v1 @ v2) / (n1 * n2)))


def r_reach(p_prev, p_cur, p_g) -> float:
    p_g = np.asarray(p_g, dtype=float)
    return _norm(np.asarray(p_prev) - p_g) - _norm(np.asarray(p_cur) - p_g)


def _perp_offset(p_e, p_g, b) -> np.ndarray:
    w = np.asarray(p_g, dtype=float) - np.asarray(p_e, dtype=float)
    return w - (w @ b) * b


def pointing_cosine(frame: CutterFrame, p_g, b) -> float:
    """Cosine between the pointing axis and the shortest way onto the branch
    line; 1 when the jaw is already on the line."""
    u = _perp_offset(frame.position, p_g, np.asarray(b, dtype=float))
    if _norm(u) < DEGENERATE:
        return 1.0
    return cosine_similarity(u, frame.pointing)


def r_point(frame_prev: CutterFrame, frame_cur: CutterFrame, p_g, b) -> float:
    return pointing_cosine(frame_cur, p_g, b) - pointing_cosine(frame_prev, p_g, b)


def r_perp(frame_prev: CutterFrame, frame_cur: CutterFrame, b) -> float:
    return abs(cosine_similarity(frame_cur.lateral, b)) - abs(cosine_similarity(frame_prev.lateral, b))


def assemble_reward(w: RewardWeights, reach: float, point: float, perp: float, col: float, term: float) -> RewardBreakdown:
    total = w.alpha_m * reach + w.alpha_p1 * perp + w.alpha_p2 * point + term + w.r_slack + col
    return RewardBreakdown(reach, point, perp, col, term, w.r_slack, total)


# ------------------------------------------------------------------ success


@dataclass(frozen=True)
class SuccessReport:
    passed: bool
    distance: float
    pointing_deg: float
    perpendicular_deg: float
    mouth_offset: float
    margins: tuple  # (distance, pointing, perpendicular, mouth); positive means inside

    @property
    def failed(self) -> tuple:
        names = ("distance", "pointing", "perpendicular", "mouth")
        return tuple(n for n, m in zip(names, self.margins) if m < 0)


def _line_distance(p1, d1, p2, d2) -> float:
    n = np.cross(d1, d2)
    nn = float(np.linalg.norm(n))
    w = np.asarray(p2) - np.asarray(p1)
    if nn < 1e-9:
        return float(np.linalg.norm(w - (w @ d1) * d1))
    return abs(float(w @ n)) / nn


def check_success(
    frame: CutterFrame,
    cut: Cutpoint,
    max_distance: float = 0.05,
    max_angle_deg: float = 30.0,
    jaw_half_gap: float = 0.02,
) -> SuccessReport:
    b = np.asarray(cut.b, dtype=float)
    dist = float(np.linalg.norm(frame.position - cut.p_g))
    pointing = math.degrees(math.acos(pointing_cosine(frame, cut.p_g, b)))
    perp = math.degrees(math.acos(min(1.0, abs(cosine_similarity(frame.lateral, b)))))
    mouth = _line_distance(cut.p_g, b, frame.position, frame.pointing)
    margins = (max_distance - dist, max_angle_deg - pointing, max_angle_deg - perp, jaw_half_gap - mouth)
    return SuccessReport(all(m >= 0 for m in margins), dist, pointing, perp, mouth, margins)


# ------------------------------------------------------------------ environment


@dataclass(frozen=True)
class EnvConfig:
    weights: RewardWeights = field(default_factory=RewardWeights)
    linear_scale: float = 0.1  # m/s at |a| = 1
    angular_scale: float = 0.1  # rad/s at |a| = 1
    step_time: float = 0.5
    substeps: int = 10
    damping: float = 0.01
    horizon: int = 100
    success_distance: float = 0.05
    success_angle_deg: float = 30.0
    jaw_half_gap: float = 0.02
    cut_fraction: float = 0.25
    render: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        w = RewardWeights(**d.pop("weights", {}))
        return cls(weights=w, **d)


@dataclass(frozen=True, eq=False)
class Observation:
    flow: np.ndarray  # (2, H, W) float32
    cutpoint_img: np.ndarray  # (1, H, W) uint8
    proprio: np.ndarray  # (27,)
    p_g_base: np.ndarray
    p_g_ee: np.ndarray


@dataclass(frozen=True, eq=False)
class StepResult:
    observation: Observation
    reward: RewardBreakdown
    terminated: bool
    truncated: bool
    info: dict


class PruningEnv:
    """Single-threaded environment over a read-only tree bank."""

    def __init__(
        self,
        bank: Sequence[TreeModel],
        config: EnvConfig | None = None,
        *,
        spec: TrellisSpec | None = None,
        scene_config: SceneConfig | None = None,
        model: KinematicModel | None = None,
        camera: CameraModel | None = None,
        trace: IO[str] | None = None,
    ):
        self.bank = bank
        self.config = config or EnvConfig()
        self.spec = spec or TrellisSpec()
        self.scene_config = scene_config or SceneConfig()
        self.model = model or KinematicModel.default()
        self.base_camera = camera or CameraModel()
        self.trace = trace
        self.episode: Episode | None = None
        self._done = True

    # -- helpers

    def _frame(self, q) -> CutterFrame:
        return forward_kinematics(self.model, q)

    def _camera_pose(self, q) -> np.ndarray:
        flange = joint_frames(self.model, q, self.scene.base_pose)[6]
        return camera_pose(flange, self.camera)

    def _observe(self, q, prev_pose, twist) -> Observation:
        cfg, cam = self.config, self.camera
        frame = self._frame(q)
        pose = self._camera_pose(q)
        if cfg.render:
            flow = np.zeros((cam.height, cam.width, 2), dtype=np.float32)
            if prev_pose is not None:
                flow = compute_flow(self.scene, prev_pose, pose, cam)
            cut_img = render_cutpoint_image(self.cut_world, pose, cam)
        else:
            flow = np.zeros((cam.height, cam.width, 2), dtype=np.float32)
            cut_img = np.zeros((cam.height, cam.width), dtype=np.uint8)
        p_ee = frame.rotation.T @ (self.cut.p_g - frame.position)
        return Observation(
            np.ascontiguousarray(flow.transpose(2, 0, 1)),
            cut_img[None],
            proprioception(frame, twist, q),
            self.cut.p_g.copy(),
            p_ee,
        )

    def _info(self, frame: CutterFrame, report: SuccessReport, mask: int) -> dict:
        return {
            "pointing_cos": pointing_cosine(frame, self.cut.p_g, self.cut.b),
            "perpendicular_cos": abs(cosine_similarity(frame.lateral, self.cut.b)),
            "distance": report.distance,
            "collision_small": bool(mask & SMALL),
            "collision_rigid": bool(mask & RIGID),
            "success": report.passed,
            "margins": list(report.margins),
        }

    # -- API

    def reset(self, episode: Episode) -> Observation:
        self.episode = None
        self._done = True
        self.scene = episode_scene(episode, self.bank, self.spec, self.scene_config)
        self.camera = self.base_camera.with_pan_tilt(*episode.camera_noise)
        base = self.scene.base_pose
        Rb, tb = base[:3, :3], base[:3, 3]
        tree = self.scene.trees[0]
        br = tree.model.branches[episode.branch]
        self.cut_world = tree.to_world(br.cutpoint(tree.model.skeleton, self.config.cut_fraction))
        b_world = np.asarray(episode.b, dtype=float)
        b = Rb.T @ b_world
        self.cut = Cutpoint(Rb.T @ (self.cut_world - tb), b / np.linalg.norm(b), episode.branch, episode.tree_id)
        self.collider = RobotCollider(self.scene, self.model, base, (0, episode.branch))
        q0 = np.array(episode.start_q, dtype=float)
        if self.collider.contacts(q0):
            raise EpisodeRejected(f"episode {episode.id}: start configuration is in contact")
        self.episode = episode
        self.q = q0
        self.steps = 0
        self._done = False
        self.start_distance = float(np.linalg.norm(self._frame(q0).position - self.cut.p_g))
        self._pose = self._camera_pose(q0)
        self.last_observation = self._observe(q0, None, np.zeros(6))
        return self.last_observation

    def step(self, action) -> StepResult:
        if self.episode is None:
            raise EnvError("step before reset")
        if self._done:
            raise EnvError("step after the episode ended")
        cfg = self.config
        a = np.clip(np.asarray(action, dtype=float).reshape(6), -1.0, 1.0)
        twist = np.concatenate([cfg.linear_scale * a[:3], cfg.angular_scale * a[3:]])
        dt = cfg.step_time / cfg.substeps
        m = self.model
        q = self.q.copy()
        frame_prev = self._frame(q)
        mask = 0
        report = None
        substep = cfg.substeps
        halted = False
        for k in range(cfg.substeps):
            qdot, _ = clamp_joint_velocities(m, solve_joint_velocities(m, q, twist, cfg.damping))
            q_next = np.clip(q + qdot * dt, -m.joint_limit, m.joint_limit)
            hit = self.collider.contacts(q_next)
            mask |= hit
            if hit & RIGID:
                halted = True
                substep = k
                break
            q = q_next
            report = check_success(self._frame(q), self.cut, cfg.success_distance, cfg.success_angle_deg,
                                   cfg.jaw_half_gap)
            if report.passed:
                substep = k + 1
                break
        frame = self._frame(q)
        if report is None:
            report = check_success(frame, self.cut, cfg.success_distance, cfg.success_angle_deg, cfg.jaw_half_gap)
        w = cfg.weights
        col = (w.c_small if mask & SMALL else 0.0) + (w.c_rigid if mask & RIGID else 0.0)
        reward = assemble_reward(
            w,
            r_reach(frame_prev.position, frame.position, self.cut.p_g),
            r_point(frame_prev, frame, self.cut.p_g, self.cut.b),
            r_perp(frame_prev, frame, self.cut.b),
            col,
            w.r_term if report.passed else 0.0,
        )
        achieved = np.concatenate(
            [frame.position - frame_prev.position, rotation_log(frame.rotation @ frame_prev.rotation.T)]
        ) / cfg.step_time
        self.q = q
        self.steps += 1
        pose = self._camera_pose(q)
        obs = self._observe(q, self._pose, achieved)
        self._pose = pose
        terminated = report.passed
        truncated = self.steps >= cfg.horizon
        self._done = terminated or truncated
        info = self._info(frame, report, mask)
        info.update(step=self.steps, substeps=substep, halted=halted)
        self.last_observation = obs
        if self.trace is not None:
            self.trace.write(json.dumps({
                "episode": self.episode.id,
                "step": self.steps,
                "action": a.tolist(),
                "reward": reward.to_dict(),
                "info": info,
                "terminated": terminated,
                "truncated": truncated,
            }, sort_keys=True) + "\n")
        return StepResult(obs, reward, terminated, truncated, info)

    @property
    def frame(self) -> CutterFrame:
        return self._frame(self.q)
