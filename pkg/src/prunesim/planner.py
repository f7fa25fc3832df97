"""Oracle motion planning: sample goal poses around the cutpoint, turn them
into joint configurations, and search joint space with RRT-Connect.

The search checks contacts with the compiled collider; ``validate_path``
re-checks a finished path through the scene's own collision query.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .contact import RobotCollider
from .env import Cutpoint, check_success
from .geometry import segment_distance
from .robot import CutterFrame, KinematicModel, forward_kinematics, robot_capsules, self_collision_pairs, wrap_angles
from .scene import Scene, collision_query

__all__ = [
    "PlanStatus",
    "PlanRequest",
    "PlanResult",
    "PathReport",
    "sample_goal_poses",
    "ik_solve",
    "goal_configurations",
    "rrt_connect",
    "shortcut",
    "densify",
    "validate_path",
    "plan",
]


class PlanStatus(str, enum.Enum):
    SUCCESS = "Success"
    NO_GOAL = "NoGoalFound"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class PlanRequest:
    n_goal_samples: int = 100
    time_budget: float = 60.0
    max_iterations: int = 2000
    step_size: float = 0.2
    resolution: float = 0.05
    goal_tolerance: float = 0.02
    goal_bias: float = 0.1
    ik_restarts: int = 8
    shortcut_tries: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.n_goal_samples < 1:
            raise ValueError("n_goal_samples must be >= 1")
        if not self.time_budget > 0 or self.max_iterations < 1:
            raise ValueError("budget must be positive")


@dataclass
class PlanResult:
    status: PlanStatus
    path: list = field(default_factory=list)
    iterations: int = 0
    nodes: int = 0
    wall_time: float = 0.0
    n_goals: int = 0

    @property
    def success(self) -> bool:
        return self.status is PlanStatus.SUCCESS


# ------------------------------------------------------------------ goal poses


def _cone_sample(axis, max_angle, rng):
    """Uniform direction within ``max_angle`` of ``axis``."""
    c = rng.uniform(math.cos(max_angle), 1.0)
    s = math.sqrt(max(0.0, 1.0 - c * c))
    phi = rng.uniform(0.0, 2 * math.pi)
    e1 = np.cross(axis, [1.0, 0.0, 0.0] if abs(axis[0]) < 0.9 else [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return c * axis + s * (math.cos(phi) * e1 + math.sin(phi) * e2)


def sample_goal_poses(
    cut: Cutpoint,
    n: int,
    rng: np.random.Generator,
    *,
    max_distance: float = 0.05,
    max_angle_deg: float = 30.0,
    jaw_half_gap: float = 0.02,
    approach_spread: float = math.pi,
    both_signs: bool = True,
    max_tries: int = 10_000,
) -> list[CutterFrame]:
    """Poses inside the success set, each confirmed by ``check_success``.

    The approach direction (jaw toward the branch) is spread by up to
    ``approach_spread`` around the one seen from the robot base.  With all
    slack at zero and ``both_signs=False`` the result is the single aligned
    pose with the jaw on the cutpoint.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    b = np.asarray(cut.b, dtype=float)
    ang = math.radians(max_angle_deg)
    e1 = cut.p_g - (cut.p_g @ b) * b
    if np.linalg.norm(e1) < 1e-9:
        e1 = np.cross(b, [0.0, 0.0, 1.0] if abs(b[2]) < 0.9 else [1.0, 0.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(b, e1)
    out = []
    for _ in range(max_tries):
        if len(out) == n:
            break
        sign = -1.0 if both_signs and rng.random() < 0.5 else 1.0
        lateral = sign * _cone_sample(b, ang, rng)
        psi = rng.uniform(-approach_spread, approach_spread)
        approach = math.cos(psi) * e1 + math.sin(psi) * e2
        pointing = approach - (approach @ lateral) * lateral
        pointing /= np.linalg.norm(pointing)
        pointing = _rotate(pointing, lateral, rng.uniform(-ang, ang))
        side_axis = np.cross(pointing, b)
        side_axis /= max(np.linalg.norm(side_axis), 1e-9)
        position = (cut.p_g - rng.uniform(0.0, max_distance) * pointing
                    + rng.uniform(-max_distance, max_distance) * b
                    + rng.uniform(-jaw_half_gap, jaw_half_gap) * side_axis)
        frame = CutterFrame(position, np.column_stack([np.cross(lateral, pointing), lateral, pointing]))
        if check_success(frame, cut, max_distance, max_angle_deg, jaw_half_gap).passed:
            out.append(frame)
    return out


def _rotate(v, axis, angle):
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * (axis @ v) * (1 - c)


# ------------------------------------------------------------------ inverse kinematics


@nb.njit(cache=True)
def _fk_jac(q, d, a, alpha, tool):
    T = np.eye(4)
    origins = np.empty((6, 3))
    axes = np.empty((6, 3))
    M = np.empty((4, 4))
    for i in range(6):
        origins[i] = T[:3, 3]
        axes[i] = T[:3, 2]
        ct, st = math.cos(q[i]), math.sin(q[i])
        ca, sa = math.cos(alpha[i]), math.sin(alpha[i])
        M[0, 0] = ct
        M[0, 1] = -st * ca
        M[0, 2] = st * sa
        M[0, 3] = a[i] * ct
        M[1, 0] = st
        M[1, 1] = ct * ca
        M[1, 2] = -ct * sa
        M[1, 3] = a[i] * st
        M[2, 0] = 0.0
        M[2, 1] = sa
        M[2, 2] = ca
        M[2, 3] = d[i]
        M[3, :] = 0.0
        M[3, 3] = 1.0
        T = T @ M
    p = T[:3, 3] + T[:3, 2] * tool
    J = np.empty((6, 6))
    for i in range(6):
        r = p - origins[i]
        z = axes[i]
        J[0, i] = z[1] * r[2] - z[2] * r[1]
        J[1, i] = z[2] * r[0] - z[0] * r[2]
        J[2, i] = z[0] * r[1] - z[1] * r[0]
        J[3:, i] = z
    return p, T[:3, :3].copy(), J


@nb.njit(cache=True)
def _log(R):
    c = (R[0, 0] + R[1, 1] + R[2, 2] - 1.0) / 2.0
    c = min(1.0, max(-1.0, c))
    ang = math.acos(c)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if ang < 1e-8:
        return 0.5 * w
    if math.pi - ang < 1e-6:
        k = 0
        for j in range(3):
            if R[j, j] > R[k, k]:
                k = j
        ax = (R[:, k] + np.eye(3)[:, k]) / 2.0
        ax = ax / np.linalg.norm(ax)
        if w @ ax < 0:
            ax = -ax
        return ax * ang
    return w * (ang / (2.0 * math.sin(ang)))


@nb.njit(cache=True)
def _ik(q0, d, a, alpha, tool, p_t, R_t, iters, tol_pos, tol_rot, damping):
    q = q0.copy()
    e = np.empty(6)
    for it in range(iters + 1):
        p, R, J = _fk_jac(q, d, a, alpha, tool)
        e[:3] = p_t - p
        e[3:] = _log(R_t @ R.T)
        if np.linalg.norm(e[:3]) < tol_pos and np.linalg.norm(e[3:]) < tol_rot:
            return q, True, it
        if it == iters:
            break
        A = J @ J.T + damping * damping * np.eye(6)
        step = J.T @ np.linalg.solve(A, e)
        n = np.linalg.norm(step)
        if n > 0.5:
            step *= 0.5 / n
        q = q + step
    return q, False, iters


def ik_solve(
    m: KinematicModel,
    target: CutterFrame,
    seed,
    rng: np.random.Generator | None = None,
    *,
    iters: int = 200,
    tol_pos: float = 1e-3,
    tol_rot: float = 1e-2,
    damping: float = 0.05,
    restarts: int = 8,
):
    """Damped least-squares IK in the robot base frame.

    Tries ``seed`` first, then random seeds; returns ``(q, iterations)`` or
    ``None`` when no attempt converges.
    """
    if not (tol_pos > 0 and tol_rot > 0):
        raise ValueError("tolerances must be positive")
    rng = rng or np.random.default_rng(0)
    args = (np.ascontiguousarray(m.d), np.ascontiguousarray(m.a), np.ascontiguousarray(m.alpha), float(m.tool_offset),
            np.ascontiguousarray(target.position, dtype=float), np.ascontiguousarray(target.rotation, dtype=float))
    q0 = np.asarray(seed, dtype=float)
    for k in range(max(1, restarts)):
        start = q0 if k == 0 else rng.uniform(-math.pi, math.pi, 6)
        q, ok, it = _ik(np.ascontiguousarray(start), *args, iters, tol_pos, tol_rot, damping)
        if ok:
            return q, it
    return None


def goal_configurations(
    m: KinematicModel, goals, start_q, collider: RobotCollider, rng, restarts: int = 8
) -> list[np.ndarray]:
    """Collision-free joint solutions for the goal poses, wrapped near the start."""
    out = []
    for g in goals:
        sol = ik_solve(m, g, start_q, rng, restarts=restarts)
        if sol is None:
            continue
        q = wrap_angles(sol[0], start_q)
        if np.all(np.abs(q) <= m.joint_limit) and not collider.contacts(q):
            out.append(q)
    return out


# ------------------------------------------------------------------ search


def densify(q0, q1, resolution: float) -> np.ndarray:
    """Points from ``q0`` to ``q1`` (both included), at most ``resolution``
    apart in every joint."""
    q0, q1 = np.asarray(q0, dtype=float), np.asarray(q1, dtype=float)
    n = max(1, int(math.ceil(float(np.max(np.abs(q1 - q0))) / resolution - 1e-12)))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return q0 + t * (q1 - q0)


class _Tree:
    def __init__(self, roots):
        roots = np.atleast_2d(np.asarray(roots, dtype=float))
        self.q = np.empty((max(64, 2 * len(roots)), 6))
        self.q[: len(roots)] = roots
        self.parent = np.full(len(self.q), -1, dtype=np.int64)
        self.n = len(roots)

    def nearest(self, q) -> int:
        d = self.q[: self.n] - q
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))

    def add(self, q, parent: int) -> int:
        if self.n == len(self.q):
            self.q = np.concatenate([self.q, np.empty_like(self.q)])
            self.parent = np.concatenate([self.parent, np.full(len(self.parent), -1, dtype=np.int64)])
        self.q[self.n] = q
        self.parent[self.n] = parent
        self.n += 1
        return self.n - 1

    def branch(self, i: int) -> list:
        out = []
        while i >= 0:
            out.append(self.q[i].copy())
            i = int(self.parent[i])
        return out


def rrt_connect(start, goals, free, request: PlanRequest, rng: np.random.Generator | None = None,
                limit: float = 2 * math.pi) -> PlanResult:
    """Bidirectional RRT with one tree at the start and one rooted at every goal.

    ``free(q)`` is the configuration predicate; edges are checked at
    ``request.resolution``.
    """
    t0 = time.perf_counter()
    rng = rng or np.random.default_rng(request.seed)
    start = np.asarray(start, dtype=float)
    goals = [np.asarray(g, dtype=float) for g in goals if free(g)]
    if not goals:
        return PlanResult(PlanStatus.NO_GOAL, wall_time=time.perf_counter() - t0)
    if not free(start):
        raise ValueError("start configuration is in collision")
    ta, tb = _Tree(start), _Tree(goals)
    a_is_start = True
    step, res = request.step_size, request.resolution

    def edge_free(q0, q1) -> bool:
        return all(free(q) for q in densify(q0, q1, res)[1:])

    def extend(tree: _Tree, q) -> tuple[str, int]:
        i = tree.nearest(q)
        near = tree.q[i]
        d = q - near
        n = float(np.max(np.abs(d)))
        new = q if n <= step else near + d * (step / n)
        if not edge_free(near, new):
            return "trapped", i
        j = tree.add(new, i)
        return ("reached" if n <= step else "advanced"), j

    def connect(tree: _Tree, q) -> tuple[str, int]:
        while True:
            status, j = extend(tree, q)
            if status != "advanced":
                return status, j

    for it in range(1, request.max_iterations + 1):
        if time.perf_counter() - t0 > request.time_budget:
            return PlanResult(PlanStatus.TIMEOUT, iterations=it - 1, nodes=ta.n + tb.n, n_goals=len(goals),
                              wall_time=time.perf_counter() - t0)
        if rng.random() < request.goal_bias:
            q_rand = goals[int(rng.integers(len(goals)))] if a_is_start else start
        else:
            # every configuration has an equivalent within pi of the start
            q_rand = np.clip(start + rng.uniform(-math.pi, math.pi, 6), -limit, limit)
        status, j = extend(ta, q_rand)
        if status != "trapped":
            s2, k = connect(tb, ta.q[j])
            gap = float(np.max(np.abs(tb.q[k] - ta.q[j])))
            if s2 == "reached" or (gap <= request.goal_tolerance and edge_free(ta.q[j], tb.q[k])):
                head, tail = ta.branch(j)[::-1], tb.branch(k)
                if s2 == "reached":
                    tail = tail[1:]
                path = head + tail if a_is_start else (head + tail)[::-1]
                return PlanResult(PlanStatus.SUCCESS, path, it, ta.n + tb.n, time.perf_counter() - t0, len(goals))
        ta, tb = tb, ta
        a_is_start = not a_is_start
    return PlanResult(PlanStatus.TIMEOUT, iterations=request.max_iterations, nodes=ta.n + tb.n, n_goals=len(goals),
                      wall_time=time.perf_counter() - t0)


def shortcut(path, free, resolution: float, tries: int, rng: np.random.Generator) -> list:
    """Random shortcutting; endpoints are kept."""
    path = [np.asarray(q, dtype=float) for q in path]
    for _ in range(tries):
        if len(path) < 3:
            break
        i, j = sorted(rng.choice(len(path), 2, replace=False))
        if j - i < 2:
            continue
        if all(free(q) for q in densify(path[i], path[j], resolution)[1:-1]):
            path = path[: i + 1] + path[j:]
    return path


# ------------------------------------------------------------------ validation


@dataclass(frozen=True)
class PathReport:
    valid: bool
    edge: int = -1  # first offending edge
    q: np.ndarray | None = None
    reason: str = ""
    checked: int = 0


def _config_violation(scene: Scene, m: KinematicModel, q, target) -> str:
    a, b, r = robot_capsules(m, q, scene.base_pose)
    for i, j in self_collision_pairs():
        if segment_distance(a[i], b[i], a[j][None], b[j][None])[0][0] < r[i] + r[j]:
            return f"self contact between links {i} and {j}"
    for h in collision_query(scene, (a, b, r)):
        if target is not None and h.probe == len(a) - 1 and (h.tree, h.branch) == tuple(target):
            continue
        return f"link {h.probe} touches primitive {h.primitive} ({h.category.name})"
    return ""


def validate_path(path, scene: Scene, m: KinematicModel, target=None, resolution: float = 0.05) -> PathReport:
    """Re-densify every edge and check each configuration with the scene's
    collision query.  ``target`` (tree, branch) may touch the cutter."""
    if len(path) == 0:
        raise ValueError("empty path")
    path = [np.asarray(q, dtype=float) for q in path]
    checked = 0
    if len(path) == 1:
        why = _config_violation(scene, m, path[0], target)
        return PathReport(not why, 0 if why else -1, path[0] if why else None, why, 1)
    for e in range(len(path) - 1):
        pts = densify(path[e], path[e + 1], resolution)
        for q in pts if e == 0 else pts[1:]:
            checked += 1
            if np.any(np.abs(q) > m.joint_limit):
                return PathReport(False, e, q, "joint limit", checked)
            why = _config_violation(scene, m, q, target)
            if why:
                return PathReport(False, e, q, why, checked)
    return PathReport(True, checked=checked)


# ------------------------------------------------------------------ driver


def plan(scene: Scene, cut: Cutpoint, start_q, m: KinematicModel, request: PlanRequest | None = None,
         target=None) -> PlanResult:
    """Goal sampling, IK, search and smoothing for one cutpoint."""
    request = request or PlanRequest()
    t0 = time.perf_counter()
    rng = np.random.default_rng(request.seed)
    collider = RobotCollider(scene, m, scene.base_pose, target)
    free = lambda q: collider.contacts(q) == 0  # noqa: E731
    goals = sample_goal_poses(cut, request.n_goal_samples, rng)
    qs = goal_configurations(m, goals, start_q, collider, rng, request.ik_restarts)
    res = rrt_connect(start_q, qs, free, request, rng)
    if res.success:
        res.path = shortcut(res.path, free, request.resolution, request.shortcut_tries, rng)
    res.wall_time = time.perf_counter() - t0
    return res
