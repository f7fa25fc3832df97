"""Orchard scenes: placed trees, their trellis bays, ground and backdrop.

Everything that can be touched is a capsule or a plane, tagged with a
collision category.  Trees keep their own frame (row along local +y, trunk
leaning toward local -x); a placement transform puts them in the world,
where the robot base sits near the origin looking down +x.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Sequence

import numpy as np

from .geometry import SpatialGrid, capsule_plane_penetration, ray_capsules, ray_planes, segment_distance
from .treegen import BranchClass, TreeModel, TrellisSpec

__all__ = [
    "Category",
    "Hit",
    "PlacedTree",
    "Scene",
    "PlacementError",
    "SceneConfig",
    "rigid_transform",
    "assemble_scene",
    "translate_tree",
    "isolate_branch",
    "collision_query",
    "collision_query_bruteforce",
    "raycast",
    "scene_to_doc",
    "scene_from_doc",
]

SCENE_SCHEMA = "prunesim.scene/1"
BASE_Z_RANGE = (-0.2, 0.05)


class Category(IntEnum):
    SMALL_BRANCH = 0
    RIGID = 1
    GROUND = 2
    ROBOT = 3


class PlacementError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    base_height: float = 0.6
    row_distance: float = 0.8  # robot base to the row along +x
    backdrop_offset: float = 1.0
    post_radius: float = 0.05
    wire_radius: float = 0.002
    grid_cell: float = 0.1

    def base_pose(self) -> np.ndarray:
        return rigid_transform(translation=(0.0, 0.0, self.base_height))

    def row_transform(self, y: float = 0.0) -> np.ndarray:
        return rigid_transform(translation=(self.row_distance, y, 0.0))


def rigid_transform(rotation=None, translation=(0.0, 0.0, 0.0)) -> np.ndarray:
    T = np.eye(4)
    if rotation is not None:
        T[:3, :3] = rotation
    T[:3, 3] = translation
    return T


def _check_rigid(T: np.ndarray) -> None:
    R = T[:3, :3]
    if T.shape != (4, 4) or not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
        raise ValueError("placement transform is not rigid")


@dataclass(frozen=True)
class Hit:
    point: np.ndarray
    distance: float
    primitive: int
    category: Category
    tree: int = -1
    branch: int = -1
    probe: int = -1


@dataclass(frozen=True, eq=False)
class PlacedTree:
    model: TreeModel
    transform: np.ndarray
    bank_id: int | None = None

    def to_world(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p) @ self.transform[:3, :3].T + self.transform[:3, 3]

    def dir_to_world(self, d: np.ndarray) -> np.ndarray:
        return np.asarray(d) @ self.transform[:3, :3].T

    @property
    def base_z(self) -> float:
        return float(self.transform[2, 3])


@dataclass(frozen=True, eq=False)
class Scene:
    trees: tuple
    spec: TrellisSpec
    config: SceneConfig
    base_pose: np.ndarray
    a: np.ndarray
    b: np.ndarray
    r: np.ndarray
    category: np.ndarray
    tree: np.ndarray
    branch: np.ndarray
    plane_point: np.ndarray
    plane_normal: np.ndarray
    plane_category: np.ndarray
    grid: SpatialGrid

    @property
    def n_capsules(self) -> int:
        return len(self.a)

    @property
    def n_primitives(self) -> int:
        return len(self.a) + len(self.plane_point)

    def cutpoint(self, tree: int, branch: int) -> np.ndarray:
        pt = self.trees[tree]
        return pt.to_world(pt.model.branches[branch].cutpoint(pt.model.skeleton))

    def branch_direction(self, tree: int, branch: int) -> np.ndarray:
        pt = self.trees[tree]
        return pt.dir_to_world(pt.model.branches[branch].direction)


# ------------------------------------------------------------------ assembly


def _bay(spec: TrellisSpec, cfg: SceneConfig):
    """Posts and wires of one trellis bay in the tree frame."""
    half = spec.tree_spacing / 2
    lean = np.array([-math.sin(spec.trunk_tilt), 0.0, math.cos(spec.trunk_tilt)])
    top = (spec.wire_count * spec.wire_spacing + 0.15) / lean[2]
    a, b, r = [], [], []
    for y in (-half, half):
        a.append([0.0, y, 0.0])
        b.append(np.array([0.0, y, 0.0]) + lean * top)
        r.append(cfg.post_radius)
    for k in range(1, spec.wire_count + 1):
        h, x = spec.wire_height(k), spec.wire_x(k)
        a.append([x, -half, h])
        b.append([x, half, h])
        r.append(cfg.wire_radius)
    return np.array(a, dtype=float), np.array(b, dtype=float), np.array(r)


def _tree_primitives(pt: PlacedTree, idx: int, spec: TrellisSpec, cfg: SceneConfig):
    sk = pt.model.skeleton
    cat = np.where(pt.model.segment_class == BranchClass.TERTIARY, Category.SMALL_BRANCH, Category.RIGID)
    ba, bb, br = _bay(spec, cfg)
    n_bay = len(br)
    return (
        pt.to_world(np.concatenate([sk.start.reshape(-1, 3), ba])),
        pt.to_world(np.concatenate([sk.end.reshape(-1, 3), bb])),
        np.concatenate([np.maximum(sk.r_start, sk.r_end), br]),  # capsules take the larger end radius
        np.concatenate([cat, np.full(n_bay, Category.RIGID)]),
        np.full(len(sk) + n_bay, idx),
        np.concatenate([pt.model.segment_branch, np.full(n_bay, -1)]),
    )


def _build(trees, spec, cfg, base_pose) -> Scene:
    parts = [_tree_primitives(pt, i, spec, cfg) for i, pt in enumerate(trees)]
    if parts:
        a, b, r, cat, tree, branch = (np.concatenate(x) for x in zip(*parts))
    else:
        a = np.zeros((0, 3))
        b = np.zeros((0, 3))
        r = np.zeros(0)
        cat = tree = branch = np.zeros(0, dtype=int)
    plane_point = np.array([[0.0, 0.0, 0.0], [cfg.row_distance + cfg.backdrop_offset, 0.0, 0.0]])
    plane_normal = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]])
    plane_cat = np.array([Category.GROUND, Category.RIGID])
    arrays = [a, b, r, cat.astype(int), tree.astype(int), branch.astype(int)]
    for x in arrays:
        x.flags.writeable = False
    grid = SpatialGrid.build(a, b, r, cell=cfg.grid_cell)
    return Scene(tuple(trees), spec, cfg, base_pose, *arrays, plane_point, plane_normal, plane_cat, grid)


def assemble_scene(
    trees: Sequence[tuple],
    spec: TrellisSpec | None = None,
    base_pose: np.ndarray | None = None,
    config: SceneConfig | None = None,
) -> Scene:
    """Build a scene from ``(TreeModel, transform[, bank_id])`` tuples.

    Each tree brings its own trellis bay: two posts and one wire per level.
    """
    spec = spec or TrellisSpec()
    cfg = config or SceneConfig()
    placed = []
    for item in trees:
        model, T = item[0], np.asarray(item[1], dtype=float)
        _check_rigid(T)
        pt = PlacedTree(model, T, item[2] if len(item) > 2 else None)
        if len(model.skeleton):
            low = min(pt.to_world(model.skeleton.start)[:, 2].min(), pt.to_world(model.skeleton.end)[:, 2].min())
            if low < -0.01:
                raise PlacementError(f"tree {len(placed)} reaches {low:.3f} m below ground")
        placed.append(pt)
    pose = cfg.base_pose() if base_pose is None else np.asarray(base_pose, dtype=float)
    return _build(placed, spec, cfg, pose)


def translate_tree(scene: Scene, tree: int, offset) -> Scene:
    """Move one tree (and its trellis bay) rigidly by ``offset``."""
    offset = np.asarray(offset, dtype=float)
    pt = scene.trees[tree]
    T = pt.transform.copy()
    T[:3, 3] += offset
    lo, hi = BASE_Z_RANGE
    if not lo <= T[2, 3] <= hi:
        raise PlacementError(f"tree base would sit at z={T[2, 3]:.3f} m, outside [{lo}, {hi}]")
    if not np.any(offset):
        return scene
    trees = list(scene.trees)
    trees[tree] = PlacedTree(pt.model, T, pt.bank_id)
    return _build(trees, scene.spec, scene.config, scene.base_pose)


def isolate_branch(scene: Scene, tree: int, branch: int) -> Scene:
    """The same scene with every capsule removed except one branch's.

    Planes stay.  Used for obstacle-free control checks.
    """
    keep = (scene.tree == tree) & (scene.branch == branch)
    arrays = [np.array(x[keep]) for x in (scene.a, scene.b, scene.r, scene.category, scene.tree, scene.branch)]
    for x in arrays:
        x.flags.writeable = False
    grid = SpatialGrid.build(arrays[0], arrays[1], arrays[2], cell=scene.config.grid_cell)
    return replace(scene, a=arrays[0], b=arrays[1], r=arrays[2], category=arrays[3], tree=arrays[4],
                   branch=arrays[5], grid=grid)


def with_config(scene: Scene, **changes) -> Scene:
    return _build(list(scene.trees), scene.spec, replace(scene.config, **changes), scene.base_pose)


# ------------------------------------------------------------------ queries


def _as_probes(probes):
    a, b, r = probes
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    r = np.broadcast_to(np.asarray(r, dtype=float), (len(a),))
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(r))):
        raise ValueError("probes must be finite")
    return a, b, r


def _surface_point(c_prim, c_probe, radius):
    d = c_probe - c_prim
    n = np.linalg.norm(d)
    if n < 1e-15:
        return c_prim
    return c_prim + d / n * radius


def _capsule_hits(scene, pa, pb, pr, i, ids, out):
    if len(ids) == 0:
        return
    dist, c1, c2 = segment_distance(pa[i], pb[i], scene.a[ids], scene.b[ids])
    pen = pr[i] + scene.r[ids] - dist
    for k in np.nonzero(pen > 0)[0]:
        j = int(ids[k])
        out.append(
            Hit(
                point=_surface_point(c2[k], c1[k], scene.r[j]),
                distance=float(pen[k]),
                primitive=j,
                category=Category(int(scene.category[j])),
                tree=int(scene.tree[j]),
                branch=int(scene.branch[j]),
                probe=i,
            )
        )


def _plane_hits(scene, pa, pb, pr, i, out):
    for p in range(len(scene.plane_point)):
        n = scene.plane_normal[p]
        pen = float(capsule_plane_penetration(pa[i], pb[i], pr[i], scene.plane_point[p], n)[0])
        if pen > 0:
            low = pa[i] if (pa[i] - scene.plane_point[p]) @ n <= (pb[i] - scene.plane_point[p]) @ n else pb[i]
            point = low - ((low - scene.plane_point[p]) @ n) * n
            out.append(Hit(point, pen, scene.n_capsules + p, Category(int(scene.plane_category[p])), probe=i))


def collision_query(scene: Scene, probes) -> list[Hit]:
    """Every (probe, primitive) pair that overlaps, found through the grid."""
    pa, pb, pr = _as_probes(probes)
    out: list[Hit] = []
    for i in range(len(pa)):
        lo = np.minimum(pa[i], pb[i]) - pr[i]
        hi = np.maximum(pa[i], pb[i]) + pr[i]
        _capsule_hits(scene, pa, pb, pr, i, scene.grid.candidates(lo, hi), out)
        _plane_hits(scene, pa, pb, pr, i, out)
    return out


def collision_query_bruteforce(scene: Scene, probes) -> list[Hit]:
    pa, pb, pr = _as_probes(probes)
    out: list[Hit] = []
    ids = np.arange(scene.n_capsules)
    for i in range(len(pa)):
        _capsule_hits(scene, pa, pb, pr, i, ids, out)
        _plane_hits(scene, pa, pb, pr, i, out)
    return out


def raycast(scene: Scene, origin, direction) -> Hit | None:
    """Nearest front-face hit along the ray, or ``None``."""
    d = np.asarray(direction, dtype=float)
    n = np.linalg.norm(d)
    if not n > 0:
        raise ValueError("ray direction must be non-zero")
    d = d / n
    o = np.asarray(origin, dtype=float)
    tc = ray_capsules(o, d, scene.a, scene.b, scene.r) if scene.n_capsules else np.zeros(0)
    tp = ray_planes(o, d, scene.plane_point, scene.plane_normal)
    t = np.concatenate([tc, tp])
    k = int(np.argmin(t))
    if not np.isfinite(t[k]):
        return None
    if k < scene.n_capsules:
        cat, tree, branch = Category(int(scene.category[k])), int(scene.tree[k]), int(scene.branch[k])
    else:
        cat, tree, branch = Category(int(scene.plane_category[k - scene.n_capsules])), -1, -1
    return Hit(o + t[k] * d, float(t[k]), k, cat, tree, branch)


# ------------------------------------------------------------------ documents


def scene_to_doc(scene: Scene) -> dict:
    return {
        "schema": SCENE_SCHEMA,
        "trellis": scene.spec.to_dict(),
        "config": {k: getattr(scene.config, k) for k in scene.config.__dataclass_fields__},
        "base_pose": scene.base_pose.tolist(),
        "trees": [{"bank_id": pt.bank_id, "transform": pt.transform.tolist()} for pt in scene.trees],
    }


def scene_from_doc(doc: dict, bank: Sequence[TreeModel]) -> Scene:
    if doc.get("schema") != SCENE_SCHEMA:
        raise ValueError(f"unsupported scene schema {doc.get('schema')!r}")
    spec = TrellisSpec(**doc["trellis"])
    cfg = SceneConfig(**doc["config"])
    trees = [(bank[t["bank_id"]], np.array(t["transform"]), t["bank_id"]) for t in doc["trees"]]
    placed = [PlacedTree(m, T, i) for m, T, i in trees]
    return _build(placed, spec, cfg, np.array(doc["base_pose"]))


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_doc(scene), sort_keys=True)
