"""Fast robot-versus-scene contact test used inside stepping and planning.

Same semantics as ``scene.collision_query`` on the robot's capsules, plus
self contact, compiled with numba.  The public scene query stays the
independent reference; tests pin the two against each other.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from .geometry import nb_segment_distance
from .robot import KinematicModel, nb_capsule_chain, self_collision_pairs
from .scene import Category, Scene

__all__ = ["RobotCollider", "SMALL", "RIGID"]

SMALL = 1
RIGID = 2
CUTTER = 6


@nb.njit(cache=True)
def _contacts(
    q, d, a, alpha, tool, base, radii, pairs,
    sa, sb, sr, scat, sflag, g_origin, g_cell, g_dims, g_start, g_items,
    pp, pn, pcat, first_only_rigid,
):
    pts = np.empty((8, 3))
    nb_capsule_chain(q, d, a, alpha, tool, base, pts)
    mask = 0
    for k in range(pairs.shape[0]):
        i, j = pairs[k, 0], pairs[k, 1]
        if nb_segment_distance(pts[i], pts[i + 1], pts[j], pts[j + 1]) < radii[i] + radii[j]:
            mask |= 2
            if first_only_rigid:
                return mask
    for i in range(7):
        p0 = pts[i]
        p1 = pts[i + 1]
        r = radii[i]
        for p in range(pp.shape[0]):
            da = (p0[0] - pp[p, 0]) * pn[p, 0] + (p0[1] - pp[p, 1]) * pn[p, 1] + (p0[2] - pp[p, 2]) * pn[p, 2]
            db = (p1[0] - pp[p, 0]) * pn[p, 0] + (p1[1] - pp[p, 1]) * pn[p, 1] + (p1[2] - pp[p, 2]) * pn[p, 2]
            if r - min(da, db) > 0:
                mask |= 1 if pcat[p] == 0 else 2
        if g_items.shape[0] == 0:
            continue
        lo = np.empty(3, dtype=np.int64)
        hi = np.empty(3, dtype=np.int64)
        outside = False
        for c in range(3):
            l = min(p0[c], p1[c]) - r
            h = max(p0[c], p1[c]) + r
            top = g_origin[c] + g_dims[c] * g_cell
            if h < g_origin[c] or l > top:
                outside = True
            lo[c] = min(max(int(math.floor((l - g_origin[c]) / g_cell)), 0), g_dims[c] - 1)
            hi[c] = min(max(int(math.floor((h - g_origin[c]) / g_cell)), 0), g_dims[c] - 1)
        if outside:
            continue
        for x in range(lo[0], hi[0] + 1):
            for y in range(lo[1], hi[1] + 1):
                for z in range(lo[2], hi[2] + 1):
                    cell = (x * g_dims[1] + y) * g_dims[2] + z
                    for t in range(g_start[cell], g_start[cell + 1]):
                        s = g_items[t]
                        if i == 6 and sflag[s]:
                            continue
                        bit = 1 if scat[s] == 0 else 2
                        if mask & bit:
                            continue
                        if nb_segment_distance(p0, p1, sa[s], sb[s]) < r + sr[s]:
                            mask |= bit
                            if bit == 2 and first_only_rigid:
                                return mask
    return mask


class RobotCollider:
    """Contact test for one (scene, robot base, target branch) combination.

    ``contacts(q)`` returns a bit mask: ``SMALL`` for small-branch contact,
    ``RIGID`` for anything unyielding (trunk, supports, trellis, ground,
    backdrop, the robot itself).  The cutter never collides with the target
    branch, which it is meant to hold in its jaws.
    """

    def __init__(self, scene: Scene, model: KinematicModel, base_pose: np.ndarray, target=None):
        self.scene = scene
        self.model = model
        self.base = np.ascontiguousarray(base_pose, dtype=float)
        self.radii = np.ascontiguousarray(model.capsule_radii, dtype=float)
        self.pairs = self_collision_pairs()
        flag = np.zeros(scene.n_capsules, dtype=np.bool_)
        if target is not None:
            tree, branch = target
            flag = (scene.tree == tree) & (scene.branch == branch)
        self.ignore = np.ascontiguousarray(flag)
        g = scene.grid
        self._args = (
            np.ascontiguousarray(model.d), np.ascontiguousarray(model.a), np.ascontiguousarray(model.alpha),
            float(model.tool_offset), self.base, self.radii, self.pairs,
            np.ascontiguousarray(scene.a, dtype=float), np.ascontiguousarray(scene.b, dtype=float),
            np.ascontiguousarray(scene.r, dtype=float),
            np.ascontiguousarray((scene.category != Category.SMALL_BRANCH).astype(np.int64)),
            self.ignore,
            np.ascontiguousarray(g.origin, dtype=float), float(g.cell), np.ascontiguousarray(g.dims, dtype=np.int64),
            np.ascontiguousarray(g.cell_start), np.ascontiguousarray(g.items),
            scene.plane_point, scene.plane_normal,
            np.ascontiguousarray((scene.plane_category != Category.SMALL_BRANCH).astype(np.int64)),
        )

    def contacts(self, q) -> int:
        return int(_contacts(np.ascontiguousarray(q, dtype=float), *self._args, False))

    def in_collision(self, q) -> bool:
        """Rigid contact only (small branches are passable)."""
        return bool(_contacts(np.ascontiguousarray(q, dtype=float), *self._args, True) & RIGID)
