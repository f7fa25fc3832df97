"""Episode generation: where the cutpoint goes, which branch it is, how the
tree is moved to put it there, and how much the robot and camera are off.

Positions are expressed in the nominal robot base frame (x forward toward the
row, z up).  The nominal base has no rotation, so directions are the same in
world and base frames.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .contact import RobotCollider
from .robot import KinematicModel, ready_configuration
from .scene import BASE_Z_RANGE, SceneConfig, assemble_scene, isolate_branch, translate_tree
from .treegen import TreeModel, TrellisSpec

__all__ = [
    "ReachableRegion",
    "NoiseBounds",
    "Episode",
    "BranchMatch",
    "NoMatch",
    "EpisodeGenerationError",
    "sample_reachable_point",
    "random_orientation",
    "fibonacci_directions",
    "match_branch",
    "make_training_episode",
    "make_eval_set",
    "noisy_base_pose",
    "episode_scene",
    "write_episodes",
    "read_episodes",
    "bank_digest",
]

EPISODE_SCHEMA = "prunesim.episodes/1"
GENERATOR_VERSION = "1"
CANONICAL_AXIS = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class ReachableRegion:
    r_min: float = 0.70
    r_max: float = 0.95

    def __post_init__(self):
        if not 0 <= self.r_min < self.r_max:
            raise ValueError("need 0 <= r_min < r_max")

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        r = float(np.linalg.norm(p))
        return self.r_min <= r <= self.r_max and p[2] >= 0 and p[0] >= 0


@dataclass(frozen=True)
class NoiseBounds:
    robot: float = math.radians(5.0)  # yaw, pitch, roll
    camera: float = math.radians(2.0)  # pan, tilt

    def draw(self, rng: np.random.Generator) -> tuple[tuple, tuple]:
        robot = tuple(float(x) for x in rng.uniform(-self.robot, self.robot, 3))
        camera = tuple(float(x) for x in rng.uniform(-self.camera, self.camera, 2))
        return robot, camera


@dataclass(frozen=True, eq=False)
class Episode:
    id: str
    tree_id: int
    transform: np.ndarray  # world placement of the tree
    branch: int
    p_g: np.ndarray  # cutpoint, nominal base frame
    b: np.ndarray  # unit branch direction
    robot_noise: tuple  # yaw, pitch, roll (rad)
    camera_noise: tuple  # pan, tilt (rad)
    seed: int
    start_q: np.ndarray = field(default_factory=lambda: np.zeros(6))
    requested: np.ndarray | None = None  # direction the episode was generated for
    floated: bool = False  # only the target branch is present

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "tree_id": self.tree_id,
            "transform": self.transform.tolist(),
            "branch": self.branch,
            "p_g": self.p_g.tolist(),
            "b": self.b.tolist(),
            "robot_noise": list(self.robot_noise),
            "camera_noise": list(self.camera_noise),
            "seed": self.seed,
            "start_q": self.start_q.tolist(),
        }
        if self.requested is not None:
            d["requested"] = self.requested.tolist()
        if self.floated:
            d["floated"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        return cls(
            id=d["id"],
            tree_id=int(d["tree_id"]),
            transform=np.array(d["transform"], dtype=float),
            branch=int(d["branch"]),
            p_g=np.array(d["p_g"], dtype=float),
            b=np.array(d["b"], dtype=float),
            robot_noise=tuple(d["robot_noise"]),
            camera_noise=tuple(d["camera_noise"]),
            seed=int(d["seed"]),
            start_q=np.array(d["start_q"], dtype=float),
            requested=np.array(d["requested"], dtype=float) if "requested" in d else None,
            floated=bool(d.get("floated", False)),
        )


class NoMatch(LookupError):
    pass


class EpisodeGenerationError(RuntimeError):
    pass


# ------------------------------------------------------------------ sampling


def sample_reachable_point(region: ReachableRegion, rng: np.random.Generator) -> np.ndarray:
    """Uniform by volume over the front, upper part of the shell."""
    R = region.r_max
    lo = np.array([0.0, -R, 0.0])
    hi = np.array([R, R, R])
    while True:
        p = rng.uniform(lo, hi)
        if region.contains(p):
            return p


def random_orientation(rng: np.random.Generator | None = None, u=None) -> np.ndarray:
    """Uniform random unit quaternion (x, y, z, w) from three uniforms."""
    u1, u2, u3 = rng.random(3) if u is None else u
    a, b = math.sqrt(1.0 - u1), math.sqrt(u1)
    return np.array(
        [a * math.sin(2 * math.pi * u2), a * math.cos(2 * math.pi * u2), b * math.sin(2 * math.pi * u3),
         b * math.cos(2 * math.pi * u3)]
    )


def fibonacci_directions(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n, dtype=float)
    z = 1.0 - 2.0 * (i + 0.5) / n
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    s = np.sqrt(1.0 - z * z)
    return np.column_stack([np.cos(phi) * s, np.sin(phi) * s, z])


# ------------------------------------------------------------------ matching


@dataclass(frozen=True)
class BranchMatch:
    tree: int
    branch: int
    error_deg: float
    sign: int  # +1 when the branch points along the query, -1 when against


@lru_cache(maxsize=8)
def _bank_table(bank_key: int, bank: tuple):
    rows, dirs = [], []
    for t, model in enumerate(bank):
        for b in model.prunable:
            rows.append((t, b.id))
            dirs.append(b.direction)
    return np.array(rows, dtype=int).reshape(-1, 2), np.array(dirs, dtype=float).reshape(-1, 3)


def match_branch(bank: Sequence[TreeModel], direction, tolerance_deg: float = 10.0) -> list[BranchMatch]:
    """Prunable branches within ``tolerance_deg`` of ``direction`` or its
    opposite, best first."""
    if len(bank) == 0:
        raise ValueError("empty bank")
    rows, dirs = _bank_table(id(bank), tuple(bank))
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    if len(dirs) == 0:
        return []
    c = dirs @ d
    err = np.degrees(np.arccos(np.clip(np.abs(c), 0.0, 1.0)))
    ok = np.nonzero(err <= tolerance_deg)[0]
    order = sorted(ok, key=lambda k: (err[k], rows[k, 0], rows[k, 1]))
    return [BranchMatch(int(rows[k, 0]), int(rows[k, 1]), float(err[k]), 1 if c[k] >= 0 else -1) for k in order]


# ------------------------------------------------------------------ placement


def _rpy(yaw: float, pitch: float, roll: float) -> np.ndarray:
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


def noisy_base_pose(cfg: SceneConfig, robot_noise) -> np.ndarray:
    T = cfg.base_pose()
    T[:3, :3] = T[:3, :3] @ _rpy(*robot_noise)
    return T


def episode_scene(ep: Episode, bank: Sequence[TreeModel], spec: TrellisSpec | None = None,
                  cfg: SceneConfig | None = None):
    """Scene with the episode's tree in place: assembled at the nominal row
    position, then translated."""
    cfg = cfg or SceneConfig()
    spec = spec or TrellisSpec()
    if not 0 <= ep.tree_id < len(bank):
        raise KeyError(f"episode {ep.id}: no tree {ep.tree_id} in the bank")
    nominal = cfg.row_transform()
    scene = assemble_scene([(bank[ep.tree_id], nominal, ep.tree_id)], spec, noisy_base_pose(cfg, ep.robot_noise), cfg)
    scene = translate_tree(scene, 0, ep.transform[:3, 3] - nominal[:3, 3])
    return isolate_branch(scene, 0, ep.branch) if ep.floated else scene


@dataclass
class _Placer:
    bank: Sequence[TreeModel]
    region: ReachableRegion
    noise: NoiseBounds
    spec: TrellisSpec
    cfg: SceneConfig
    model: KinematicModel
    start_q: np.ndarray
    cut_fraction: float = 0.25
    floated: bool = False

    def offset(self, match: BranchMatch, p: np.ndarray) -> np.ndarray:
        tree = self.bank[match.tree]
        br = tree.branches[match.branch]
        nominal = self.cfg.row_transform()
        cut_world = nominal[:3, :3] @ br.cutpoint(tree.skeleton, self.cut_fraction) + nominal[:3, 3]
        return self.cfg.base_pose()[:3, 3] + p - cut_world

    def height_ok(self, match: BranchMatch, p: np.ndarray) -> bool:
        lo, hi = BASE_Z_RANGE
        return lo <= self.cfg.row_transform()[2, 3] + self.offset(match, p)[2] <= hi

    def choose(self, matches, p, rng):
        """A random match whose tree can be moved to put it at ``p``."""
        ok = [m for m in matches if self.height_ok(m, p)]
        return ok[int(rng.integers(len(ok)))] if ok else None

    def place(self, match: BranchMatch, p: np.ndarray, rng, ep_id: str, seed: int, requested=None):
        """Try to put ``match``'s cutpoint at ``p``; ``None`` if not allowed."""
        if not self.height_ok(match, p):
            return None
        tree = self.bank[match.tree]
        br = tree.branches[match.branch]
        nominal = self.cfg.row_transform()
        offset = self.offset(match, p)
        robot_noise, camera_noise = self.noise.draw(rng)
        T = nominal.copy()
        T[:3, 3] += offset
        b = nominal[:3, :3] @ br.direction
        if requested is not None and b @ requested < 0:
            b = -b
        ep = Episode(ep_id, match.tree, T, match.branch, p.copy(), b, robot_noise, camera_noise, seed,
                     self.start_q.copy(), None if requested is None else np.asarray(requested, dtype=float),
                     self.floated)
        scene = episode_scene(ep, self.bank, self.spec, self.cfg)
        collider = RobotCollider(scene, self.model, scene.base_pose, (0, match.branch))
        if collider.contacts(self.start_q):
            return None
        return ep


def _placer(bank, region, noise, spec, cfg, model, floated=False) -> _Placer:
    model = model or KinematicModel.default()
    return _Placer(bank, region or ReachableRegion(), noise or NoiseBounds(), spec or TrellisSpec(),
                   cfg or SceneConfig(), model, ready_configuration(model), floated=floated)


def make_training_episode(
    bank: Sequence[TreeModel],
    region: ReachableRegion | None = None,
    rng: np.random.Generator | None = None,
    *,
    seed: int = 0,
    noise: NoiseBounds | None = None,
    spec: TrellisSpec | None = None,
    cfg: SceneConfig | None = None,
    model: KinematicModel | None = None,
    max_tries: int = 100,
    ep_id: str | None = None,
    floated: bool = False,
) -> Episode:
    """Random position, random orientation, a matching branch, and noise.

    ``floated`` episodes keep only the target branch in the scene.
    """
    if len(bank) == 0:
        raise ValueError("empty bank")
    rng = rng or np.random.default_rng(seed)
    placer = _placer(bank, region, noise, spec, cfg, model, floated)
    reasons = {"no_match": 0, "height": 0, "collision": 0}
    for _ in range(max_tries):
        p = sample_reachable_point(placer.region, rng)
        d = Rotation.from_quat(random_orientation(rng)).apply(CANONICAL_AXIS)
        matches = match_branch(bank, d)
        if not matches:
            reasons["no_match"] += 1
            continue
        m = placer.choose(matches, p, rng)
        if m is None:
            reasons["height"] += 1
            continue
        ep = placer.place(m, p, rng, ep_id or f"train-{seed}", seed, d)
        if ep is not None:
            return ep
        reasons["collision"] += 1
    raise EpisodeGenerationError(f"no episode after {max_tries} tries: {reasons}")


@dataclass
class EvalSet:
    episodes: list
    unmatched: list  # indices of orientations without any usable branch
    directions: np.ndarray


def make_eval_set(
    bank: Sequence[TreeModel],
    n_orientations: int = 1000,
    positions_per: int = 3,
    region: ReachableRegion | None = None,
    rng: np.random.Generator | None = None,
    *,
    seed: int = 0,
    noise: NoiseBounds | None = None,
    spec: TrellisSpec | None = None,
    cfg: SceneConfig | None = None,
    model: KinematicModel | None = None,
    max_tries: int = 100,
) -> EvalSet:
    """Fibonacci orientations, each matched to a branch and placed at
    ``positions_per`` independent positions."""
    rng = rng or np.random.default_rng(seed)
    placer = _placer(bank, region, noise, spec, cfg, model)
    dirs = fibonacci_directions(n_orientations)
    episodes, unmatched = [], []
    for k, d in enumerate(dirs):
        matches = match_branch(bank, d)
        placed = 0
        if matches:
            for j in range(positions_per):
                for _ in range(max_tries):
                    p = sample_reachable_point(placer.region, rng)
                    m = placer.choose(matches, p, rng)
                    if m is None:
                        continue
                    ep = placer.place(m, p, rng, f"eval-{k:04d}-{j}", seed, d)
                    if ep is not None:
                        episodes.append(ep)
                        placed += 1
                        break
        if placed == 0:
            unmatched.append(k)
    return EvalSet(episodes, unmatched, dirs)


# ------------------------------------------------------------------ files


def bank_digest(bank: Sequence[TreeModel]) -> str:
    h = hashlib.sha256()
    for t in bank:
        h.update(t.symbols.serialize().encode())
    return h.hexdigest()


def write_episodes(episodes: Sequence[Episode], path: str | Path, bank_hash: str = "", extra: dict | None = None):
    header = {"kind": "header", "schema": EPISODE_SCHEMA, "generator": GENERATOR_VERSION, "bank_hash": bank_hash,
              "count": len(episodes)}
    if extra:
        header.update(extra)
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(ep.to_dict(), sort_keys=True) for ep in episodes]
    Path(path).write_text("\n".join(lines) + "\n")


def read_episodes(path: str | Path) -> tuple[dict, list[Episode]]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty episode file")
    header = json.loads(lines[0])
    if header.get("schema") != EPISODE_SCHEMA:
        raise ValueError(f"{path}: unsupported episode schema {header.get('schema')!r}")
    return header, [Episode.from_dict(json.loads(s)) for s in lines[1:] if s.strip()]
