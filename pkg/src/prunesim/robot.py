"""Six-joint arm kinematics with a cutter on the flange.

Frames follow standard DH: joint ``i`` turns about ``z_{i-1}``.  The cutter
frame shares the flange rotation; its jaw center sits ``tool_offset`` along
the flange z axis.  Columns of the cutter rotation are (up, left-right,
pointing).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numba as nb
import numpy as np

__all__ = [
    "KinematicModel",
    "CutterFrame",
    "forward_kinematics",
    "joint_frames",
    "jacobian",
    "solve_joint_velocities",
    "clamp_joint_velocities",
    "robot_capsules",
    "self_collision_pairs",
    "proprioception",
    "rotation_log",
    "ik_solve",
    "ready_configuration",
    "wrap_angles",
]

N_JOINTS = 6


@dataclass(frozen=True, eq=False)
class KinematicModel:
    d: np.ndarray
    a: np.ndarray
    alpha: np.ndarray
    tool_offset: float = 0.15
    link_radii: tuple = (0.06, 0.055, 0.045, 0.04, 0.04, 0.04)
    cutter_radius: float = 0.04
    joint_limit: float = 2 * math.pi
    velocity_limit: float = math.pi
    name: str = "arm"

    def __post_init__(self):
        if not self.tool_offset > 0:
            raise ValueError("tool offset must be positive")
        for v in (self.d, self.a, self.alpha):
            if np.shape(v) != (N_JOINTS,):
                raise ValueError("DH table needs six rows")

    @classmethod
    def from_json(cls, path: str | Path) -> "KinematicModel":
        return cls._from_doc(json.loads(Path(path).read_text()))

    @classmethod
    def default(cls) -> "KinematicModel":
        return cls._from_doc(json.loads(resources.files("prunesim.data").joinpath("ur5.json").read_text()))

    @classmethod
    def _from_doc(cls, doc: dict) -> "KinematicModel":
        dh = doc["dh"]
        return cls(
            d=np.array(dh["d"], dtype=float),
            a=np.array(dh["a"], dtype=float),
            alpha=np.array(dh["alpha"], dtype=float),
            tool_offset=float(doc.get("tool_offset", 0.15)),
            link_radii=tuple(doc.get("link_radii", cls.link_radii)),
            cutter_radius=float(doc.get("cutter_radius", 0.04)),
            joint_limit=float(doc.get("joint_limit", 2 * math.pi)),
            velocity_limit=float(doc.get("velocity_limit", math.pi)),
            name=doc.get("name", "arm"),
        )

    @property
    def capsule_radii(self) -> np.ndarray:
        return np.array([*self.link_radii, self.cutter_radius])


@dataclass(frozen=True, eq=False)
class CutterFrame:
    position: np.ndarray  # jaw center
    rotation: np.ndarray

    @property
    def pointing(self) -> np.ndarray:
        return self.rotation[:, 2]

    @property
    def lateral(self) -> np.ndarray:
        return self.rotation[:, 1]

    @property
    def up(self) -> np.ndarray:
        return self.rotation[:, 0]

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T


def _dh(theta, d, a, alpha):
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def joint_frames(m: KinematicModel, q, base: np.ndarray | None = None) -> np.ndarray:
    """Frames 0..6 (base, after each joint) plus the jaw frame: shape (8, 4, 4)."""
    T = np.eye(4) if base is None else np.asarray(base, dtype=float)
    out = [T]
    for i in range(N_JOINTS):
        T = T @ _dh(float(q[i]), m.d[i], m.a[i], m.alpha[i])
        out.append(T)
    tool = np.eye(4)
    tool[2, 3] = m.tool_offset
    out.append(T @ tool)
    return np.array(out)


def forward_kinematics(m: KinematicModel, q, base: np.ndarray | None = None) -> CutterFrame:
    T = joint_frames(m, q, base)[-1]
    return CutterFrame(T[:3, 3].copy(), T[:3, :3].copy())


def jacobian(m: KinematicModel, q, base: np.ndarray | None = None) -> np.ndarray:
    """Geometric Jacobian at the jaw center; rows (linear, angular)."""
    F = joint_frames(m, q, base)
    p = F[-1][:3, 3]
    J = np.empty((6, N_JOINTS))
    for i in range(N_JOINTS):
        z = F[i][:3, 2]
        J[:3, i] = np.cross(z, p - F[i][:3, 3])
        J[3:, i] = z
    return J


def solve_joint_velocities(m: KinematicModel, q, twist, damping: float = 0.01, base=None) -> np.ndarray:
    """Damped least squares: ``J^T (J J^T + damping^2 I)^-1 twist``."""
    if damping < 0:
        raise ValueError("damping must be non-negative")
    J = jacobian(m, q, base)
    A = J @ J.T + damping ** 2 * np.eye(6)
    return J.T @ np.linalg.solve(A, np.asarray(twist, dtype=float))


def clamp_joint_velocities(m: KinematicModel, qdot) -> tuple[np.ndarray, bool]:
    qdot = np.asarray(qdot, dtype=float)
    out = np.clip(qdot, -m.velocity_limit, m.velocity_limit)
    return out, bool(np.any(out != qdot))


def wrap_angles(q, reference=None) -> np.ndarray:
    """Wrap into (-pi, pi], or to the 2*pi-equivalent nearest ``reference``."""
    q = np.asarray(q, dtype=float)
    ref = np.zeros_like(q) if reference is None else np.asarray(reference, dtype=float)
    return ref + (q - ref + math.pi) % (2 * math.pi) - math.pi


# ------------------------------------------------------------------ bodies


def robot_capsules(m: KinematicModel, q, base=None):
    """Seven capsules (six links, cutter) as ``(a, b, r)`` arrays."""
    F = joint_frames(m, q, base)
    pts = F[:, :3, 3]
    return pts[:-1].copy(), pts[1:].copy(), m.capsule_radii


def self_collision_pairs() -> np.ndarray:
    """Capsule pairs checked for self contact; neighbours along the chain are skipped."""
    pairs = [(0, j) for j in (2, 3, 4, 5, 6)]
    pairs += [(1, j) for j in (3, 4, 5, 6)]
    pairs += [(2, j) for j in (5, 6)]
    return np.array(pairs, dtype=np.int64)


# ------------------------------------------------------------------ encodings


def proprioception(frame: CutterFrame, twist, q) -> np.ndarray:
    """27 values: jaw position, two rotation columns, twist, (sin, cos) per joint."""
    q = np.asarray(q, dtype=float)
    sc = np.empty(2 * N_JOINTS)
    sc[0::2] = np.sin(q)
    sc[1::2] = np.cos(q)
    return np.concatenate([frame.position, frame.rotation[:, :2].T.ravel(), np.asarray(twist, dtype=float), sc])


def rotation_from_6d(v) -> np.ndarray:
    a1, a2 = np.asarray(v[:3], dtype=float), np.asarray(v[3:6], dtype=float)
    b1 = a1 / np.linalg.norm(a1)
    b2 = a2 - (b1 @ a2) * b1
    b2 /= np.linalg.norm(b2)
    return np.column_stack([b1, b2, np.cross(b1, b2)])


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R`` (axis times angle)."""
    c = max(-1.0, min(1.0, (np.trace(R) - 1.0) / 2.0))
    ang = math.acos(c)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if ang < 1e-8:
        return 0.5 * w
    if math.pi - ang < 1e-6:
        # near pi: axis from the symmetric part
        M = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(M)))
        axis = M[:, k] / math.sqrt(max(M[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if w @ axis < 0:
            axis = -axis
        return axis * ang
    return w * (ang / (2.0 * math.sin(ang)))


def pose_error(frame: CutterFrame, p, R) -> np.ndarray:
    """Twist-like error taking ``frame`` to (p, R), expressed in the base frame."""
    return np.concatenate([np.asarray(p) - frame.position, rotation_log(np.asarray(R) @ frame.rotation.T)])


def ik_solve(
    m: KinematicModel,
    p,
    R,
    q0,
    iters: int = 200,
    tol_pos: float = 1e-3,
    tol_rot: float = 1e-2,
    damping: float = 0.05,
    base=None,
):
    """Damped least-squares IK from ``q0``.  Returns ``(q, converged)``."""
    q = np.array(q0, dtype=float)
    for _ in range(iters):
        e = pose_error(forward_kinematics(m, q, base), p, R)
        if np.linalg.norm(e[:3]) < tol_pos and np.linalg.norm(e[3:]) < tol_rot:
            return q, True
        step = solve_joint_velocities(m, q, e, damping, base)
        n = np.linalg.norm(step)
        if n > 0.5:
            step *= 0.5 / n
        q = q + step
    e = pose_error(forward_kinematics(m, q, base), p, R)
    return q, bool(np.linalg.norm(e[:3]) < tol_pos and np.linalg.norm(e[3:]) < tol_rot)


# cutter level and pointing along +x of the base, elbow up; y offset keeps
# the wrist in the plane of the arm
READY_ROTATION = np.array([[0.0, 0.0, 1.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0]])
READY_POSITION = np.array([0.5, 0.1, 0.2])
_READY_SEED = np.array([3.1, -1.7, 2.3, -0.6, 1.55, 1.57])


def ready_configuration(m: KinematicModel | None = None) -> np.ndarray:
    """Joint angles of the home pose (solved once per model)."""
    m = m or KinematicModel.default()
    q, ok = ik_solve(m, READY_POSITION, READY_ROTATION, _READY_SEED, iters=500, tol_pos=1e-9, tol_rot=1e-9)
    if not ok:
        raise RuntimeError("ready pose is unreachable for this kinematic model")
    return wrap_angles(q)


# ------------------------------------------------------------------ numba kernels


@nb.njit(cache=True)
def nb_capsule_chain(q, d, a, alpha, tool, base, out_pts):
    """Fill ``out_pts`` (8, 3) with frame origins 0..6 and the jaw center."""
    T = base.copy()
    out_pts[0, :] = T[:3, 3]
    M = np.empty((4, 4))
    for i in range(6):
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
        M[3, 0] = 0.0
        M[3, 1] = 0.0
        M[3, 2] = 0.0
        M[3, 3] = 1.0
        T = T @ M
        out_pts[i + 1, :] = T[:3, 3]
    for k in range(3):
        out_pts[7, k] = T[k, 3] + T[k, 2] * tool
    return T
