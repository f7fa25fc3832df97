"""Controllers and the rollout runner.

A policy is any callable ``policy(env, observation) -> action``; it may also
have ``reset(env)``, called once per episode.  ``PrivilegedServo`` reads the
true cutpoint from the env and stands in for a learned controller.
``RemotePolicy`` forwards observations to an external process over the
server's wire format.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import IO, Callable, Iterable, Sequence

import numpy as np

from .env import EnvError, PruningEnv, StepResult, check_success
from .episodes import Episode, make_training_episode
from .robot import CutterFrame, rotation_log

__all__ = [
    "RolloutRecord",
    "PrivilegedServo",
    "ZeroPolicy",
    "RemotePolicy",
    "privileged_servo",
    "run_rollouts",
    "write_records",
    "read_records",
    "error_angles",
    "make_floated_set",
]


@dataclass(frozen=True)
class RolloutRecord:
    episode: str
    method: str
    steps: int
    success: bool
    final_distance: float
    pointing_error_deg: float
    perpendicular_error_deg: float
    collisions_small: int
    collisions_rigid: int
    reward_sum: float
    error: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def error_angles(frame: CutterFrame, p_g, b) -> tuple[float, float, float]:
    """(distance, pointing, perpendicular) errors of a cutter pose."""
    from .env import Cutpoint

    rep = check_success(frame, Cutpoint(np.asarray(p_g, dtype=float), np.asarray(b, dtype=float)))
    return rep.distance, rep.pointing_deg, rep.perpendicular_deg


# ------------------------------------------------------------------ servo


def _scaled(v: np.ndarray) -> np.ndarray:
    """Shrink so no component exceeds 1 (direction preserved)."""
    m = float(np.max(np.abs(v)))
    return v / m if m > 1.0 else v


def _approach_direction(frame: CutterFrame, p_g, b) -> np.ndarray:
    w = p_g - frame.position
    u = w - (w @ b) * b
    if np.linalg.norm(u) < 1e-3:
        u = frame.pointing - (frame.pointing @ b) * b
    return u / np.linalg.norm(u)


def _orientation_error(frame: CutterFrame, b, approach) -> np.ndarray:
    lateral = b if frame.lateral @ b >= 0 else -b
    R_t = np.column_stack([np.cross(lateral, approach), lateral, approach])
    return rotation_log(R_t @ frame.rotation.T)


def privileged_servo(frame: CutterFrame, p_g, b, approach=None, *, standoff: float = 0.15,
                     gain: float = 10.0, approaching: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """One proportional command toward the standoff point or the cutpoint.

    ``approach`` is the unit direction from the jaw onto the branch; when
    omitted it is taken from the current offset (or the current pointing
    axis when the jaw is on the branch line).  Returns ``(action, approach)``.
    """
    p_g = np.asarray(p_g, dtype=float)
    b = np.asarray(b, dtype=float)
    if approach is None:
        approach = _approach_direction(frame, p_g, b)
    target = p_g if approaching else p_g - standoff * approach
    lin = gain * (target - frame.position)
    ang = gain * _orientation_error(frame, b, approach)
    return np.concatenate([_scaled(lin), _scaled(ang)]), approach


class PrivilegedServo:
    """Standoff-then-approach servo on ground-truth cutpoint and branch.

    The approach direction is fixed at the start of the episode; the jaw
    first goes to a point ``standoff`` back along it, and moves in once
    it is there and roughly aligned.
    """

    name = "servo"

    def __init__(self, standoff: float = 0.15, gain: float = 10.0, switch_distance: float = 0.03,
                 switch_angle: float = math.radians(15.0)):
        self.standoff = standoff
        self.gain = gain
        self.switch_distance = switch_distance
        self.switch_angle = switch_angle
        self.approach = None
        self.approaching = False

    def reset(self, env: PruningEnv) -> None:
        self.approach = None
        self.approaching = False

    def __call__(self, env: PruningEnv, observation=None) -> np.ndarray:
        frame, cut = env.frame, env.cut
        if self.approach is None:
            # come at the branch from the robot's side
            w = cut.p_g - (cut.p_g @ cut.b) * cut.b
            if np.linalg.norm(w) < 1e-3:
                self.approach = _approach_direction(frame, cut.p_g, cut.b)
            else:
                self.approach = w / np.linalg.norm(w)
        if not self.approaching:
            stand = cut.p_g - self.standoff * self.approach
            near = np.linalg.norm(frame.position - stand) < self.switch_distance
            aligned = np.linalg.norm(_orientation_error(frame, cut.b, self.approach)) < self.switch_angle
            self.approaching = bool(near and aligned)
        a, _ = privileged_servo(frame, cut.p_g, cut.b, self.approach, standoff=self.standoff, gain=self.gain,
                                approaching=self.approaching)
        return a


class ZeroPolicy:
    name = "zero"

    def __call__(self, env, observation=None) -> np.ndarray:
        return np.zeros(6)


class RemotePolicy:
    """Ask an external process for each action.

    Every observation is written to ``out`` as one ``step_request`` line (the
    server's observation bundle); one line with ``{"action": [...]}`` is read
    back from ``inp``.
    """

    name = "remote"

    def __init__(self, inp: IO[str], out: IO[str]):
        self.inp = inp
        self.out = out
        self.seq = 0

    def __call__(self, env, observation) -> np.ndarray:
        from .server import encode_observation

        self.seq += 1
        self.out.write(json.dumps({"type": "act", "seq": self.seq, "observation": encode_observation(observation)},
                                  sort_keys=True, separators=(",", ":")) + "\n")
        self.out.flush()
        line = self.inp.readline()
        if not line:
            raise EOFError("remote policy closed the stream")
        msg = json.loads(line)
        a = np.asarray(msg["action"], dtype=float)
        if a.shape != (6,) or not np.all(np.isfinite(a)):
            raise ValueError("remote policy sent a malformed action")
        return np.clip(a, -1.0, 1.0)


# ------------------------------------------------------------------ rollouts


def _rollout(env: PruningEnv, policy, ep: Episode, horizon: int, method: str) -> RolloutRecord:
    obs = env.reset(ep)
    if hasattr(policy, "reset"):
        policy.reset(env)
    total, small, rigid, steps = 0.0, 0, 0, 0
    res: StepResult | None = None
    while steps < horizon:
        res = env.step(policy(env, obs))
        steps += 1
        total += res.reward.total
        small += res.info["collision_small"]
        rigid += res.info["collision_rigid"]
        obs = res.observation
        if res.terminated or res.truncated:
            break
    d, pe, pp = error_angles(env.frame, env.cut.p_g, env.cut.b)
    return RolloutRecord(ep.id, method, steps, bool(res is not None and res.terminated), d, pe, pp, small, rigid, total)


def run_rollouts(
    env_factory: Callable[[], PruningEnv],
    policy,
    episodes: Iterable[Episode],
    horizon: int = 100,
    method: str | None = None,
) -> list[RolloutRecord]:
    """One record per episode; an episode that fails to run still gets a
    (failed) record with the error message."""
    env = env_factory()
    method = method or getattr(policy, "name", "policy")
    out = []
    for ep in episodes:
        try:
            out.append(_rollout(env, policy, ep, horizon, method))
        except (EnvError, ValueError, KeyError, EOFError) as exc:
            out.append(RolloutRecord(ep.id, method, 0, False, math.nan, math.nan, math.nan, 0, 0, 0.0, str(exc)))
    return out


def write_records(records: Sequence, path) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_records(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(s) for s in f if s.strip()]


def make_floated_set(bank, n: int, seed: int = 0, *, goal_samples: int = 20, max_tries: int = 20) -> list[Episode]:
    """Obstacle-free episodes (only the target branch in the scene) whose
    cutpoint admits at least one collision-free success configuration."""
    from .env import EnvConfig
    from .planner import goal_configurations, sample_goal_poses

    rng = np.random.default_rng(seed)
    env = PruningEnv(bank, EnvConfig(render=False))
    out = []
    while len(out) < n:
        for _ in range(max_tries):
            ep = make_training_episode(bank, rng=rng, seed=seed, floated=True, ep_id=f"float-{len(out):04d}")
            env.reset(ep)
            goals = sample_goal_poses(env.cut, goal_samples, rng)
            if goal_configurations(env.model, goals, ep.start_q, env.collider, rng):
                out.append(ep)
                break
        else:
            raise RuntimeError(f"no reachable floated episode after {max_tries} tries")
    return out
