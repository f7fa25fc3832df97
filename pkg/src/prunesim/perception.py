"""Eye-in-hand camera: depth by ray casting, exact optical flow, goal marker.

Pixel ``(i, j)`` (row, column) has its center at integer coordinates and
looks along ``((j - cx) / fx, (i - cy) / fy, 1)`` in the camera frame.
Depth is the range along that ray.  Flow is the current pixel minus the
pixel where the same 3D point projected in the previous frame.
"""
from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .geometry import nb_ray_capsule, nb_ray_plane

__all__ = [
    "CameraModel",
    "camera_pose",
    "pixel_rays",
    "render_depth",
    "compute_flow",
    "flow_from_depth",
    "project",
    "render_cutpoint_image",
    "write_flo",
    "read_flo",
    "write_pgm",
    "read_pgm",
    "write_ppm",
    "flow_to_rgb",
]

FLO_MAGIC = b"PIEH"


def _default_mount() -> np.ndarray:
    # camera x = flange y, camera y = -flange x, camera z = flange z; 5 cm "above" the flange
    T = np.eye(4)
    T[:3, :3] = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    T[:3, 3] = (0.05, 0.0, 0.0)
    return T


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float = 161.7
    fy: float = 161.7
    cx: float = 112.0
    cy: float = 112.0
    width: int = 224
    height: int = 224
    mount: np.ndarray = field(default_factory=_default_mount)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def with_pan_tilt(self, pan: float, tilt: float) -> "CameraModel":
        """Perturb the mount: ``pan`` about camera y, ``tilt`` about camera x (radians)."""
        cp, sp = math.cos(pan), math.sin(pan)
        ct, st = math.cos(tilt), math.sin(tilt)
        Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
        Rx = np.array([[1, 0, 0], [0, ct, -st], [0, st, ct]])
        mount = self.mount.copy()
        mount[:3, :3] = mount[:3, :3] @ Ry @ Rx
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height, mount)


def camera_pose(flange: np.ndarray, cam: CameraModel) -> np.ndarray:
    """World pose of the camera given the flange pose (both 4x4)."""
    return np.asarray(flange) @ cam.mount


def pixel_rays(cam: CameraModel) -> np.ndarray:
    """Unit ray directions in the camera frame, shape (H, W, 3)."""
    j, i = np.meshgrid(np.arange(cam.width, dtype=float), np.arange(cam.height, dtype=float))
    d = np.stack([(j - cam.cx) / cam.fx, (i - cam.cy) / cam.fy, np.ones_like(j)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


@nb.njit(cache=True)
def _render(o, Rwc, fx, fy, cx, cy, W, H, ca, cb, cr, pp, pn):
    depth = np.full((H, W), np.inf)
    ids = np.full((H, W), -1, dtype=np.int64)
    nc = ca.shape[0]
    dirs = np.empty((H, W, 3))
    for i in range(H):
        for j in range(W):
            x = (j - cx) / fx
            y = (i - cy) / fy
            n = math.sqrt(x * x + y * y + 1.0)
            for k in range(3):
                dirs[i, j, k] = (Rwc[k, 0] * x + Rwc[k, 1] * y + Rwc[k, 2]) / n
    corner = np.empty(3)
    for c in range(nc):
        # conservative pixel box from the capsule's bounding box corners
        lo0 = min(ca[c, 0], cb[c, 0]) - cr[c]
        lo1 = min(ca[c, 1], cb[c, 1]) - cr[c]
        lo2 = min(ca[c, 2], cb[c, 2]) - cr[c]
        hi0 = max(ca[c, 0], cb[c, 0]) + cr[c]
        hi1 = max(ca[c, 1], cb[c, 1]) + cr[c]
        hi2 = max(ca[c, 2], cb[c, 2]) + cr[c]
        umin, umax, vmin, vmax = np.inf, -np.inf, np.inf, -np.inf
        full = False
        behind = 0
        for m in range(8):
            corner[0] = hi0 if m & 1 else lo0
            corner[1] = hi1 if m & 2 else lo1
            corner[2] = hi2 if m & 4 else lo2
            px = corner[0] - o[0]
            py = corner[1] - o[1]
            pz = corner[2] - o[2]
            zc = Rwc[0, 2] * px + Rwc[1, 2] * py + Rwc[2, 2] * pz
            if zc <= 1e-9:
                behind += 1
                full = True
                continue
            xc = Rwc[0, 0] * px + Rwc[1, 0] * py + Rwc[2, 0] * pz
            yc = Rwc[0, 1] * px + Rwc[1, 1] * py + Rwc[2, 1] * pz
            u = fx * xc / zc + cx
            v = fy * yc / zc + cy
            umin = min(umin, u)
            umax = max(umax, u)
            vmin = min(vmin, v)
            vmax = max(vmax, v)
        if behind == 8:
            continue
        if full:
            j0, j1, i0, i1 = 0, W - 1, 0, H - 1
        else:
            j0 = max(int(math.floor(umin)), 0)
            j1 = min(int(math.ceil(umax)), W - 1)
            i0 = max(int(math.floor(vmin)), 0)
            i1 = min(int(math.ceil(vmax)), H - 1)
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                t = nb_ray_capsule(o[0], o[1], o[2], dirs[i, j, 0], dirs[i, j, 1], dirs[i, j, 2], ca[c], cb[c], cr[c])
                if t < depth[i, j]:
                    depth[i, j] = t
                    ids[i, j] = c
    for p in range(pp.shape[0]):
        for i in range(H):
            for j in range(W):
                t = nb_ray_plane(o[0], o[1], o[2], dirs[i, j, 0], dirs[i, j, 1], dirs[i, j, 2], pp[p], pn[p])
                if t < depth[i, j]:
                    depth[i, j] = t
                    ids[i, j] = nc + p
    return depth, ids


def render_depth(scene, pose: np.ndarray, cam: CameraModel, extra_capsules=None):
    """Range image and primitive ids (-1 where nothing is hit).

    ``extra_capsules`` (a, b, r) are appended after the scene capsules, e.g.
    the robot's own links.
    """
    pose = np.asarray(pose, dtype=float)
    R = pose[:3, :3]
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
        raise ValueError("camera pose is not rigid")
    a, b, r = scene.a, scene.b, scene.r
    if extra_capsules is not None:
        ea, eb, er = extra_capsules
        a = np.concatenate([a, ea])
        b = np.concatenate([b, eb])
        r = np.concatenate([r, er])
    depth, ids = _render(
        np.ascontiguousarray(pose[:3, 3]), np.ascontiguousarray(R), cam.fx, cam.fy, cam.cx, cam.cy,
        cam.width, cam.height, np.ascontiguousarray(a, dtype=float), np.ascontiguousarray(b, dtype=float),
        np.ascontiguousarray(r, dtype=float), scene.plane_point, scene.plane_normal,
    )
    # keep scene numbering for planes; extra capsules come after every scene primitive
    n_extra = len(a) - scene.n_capsules
    if n_extra:
        extra = (ids >= scene.n_capsules) & (ids < len(a))
        planes = ids >= len(a)
        ids = np.where(planes, ids - n_extra, np.where(extra, ids - scene.n_capsules + scene.n_primitives, ids))
    return depth, ids


def project(points: np.ndarray, pose: np.ndarray, cam: CameraModel):
    """Pixel coordinates (u, v) and camera-frame depth z of world points."""
    P = (np.asarray(points, dtype=float) - pose[:3, 3]) @ pose[:3, :3]
    z = P[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * P[..., 0] / z + cam.cx
        v = cam.fy * P[..., 1] / z + cam.cy
    return u, v, z


def flow_from_depth(depth: np.ndarray, pose_prev: np.ndarray, pose_cur: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Flow (H, W, 2) given the current range image."""
    if np.array_equal(pose_prev, pose_cur):
        # the reprojection below would leave round-off residue of order 1e-14 px
        return np.zeros((cam.height, cam.width, 2), dtype=np.float32)
    rays = pixel_rays(cam) @ pose_cur[:3, :3].T
    ok = np.isfinite(depth)
    pts = pose_cur[:3, 3] + rays * np.where(ok, depth, 0.0)[..., None]
    u, v, z = project(pts, pose_prev, cam)
    ok &= z > 1e-9
    j, i = np.meshgrid(np.arange(cam.width, dtype=float), np.arange(cam.height, dtype=float))
    flow = np.zeros((cam.height, cam.width, 2), dtype=np.float32)
    flow[..., 0] = np.where(ok, j - np.where(ok, u, 0.0), 0.0)
    flow[..., 1] = np.where(ok, i - np.where(ok, v, 0.0), 0.0)
    return flow


def compute_flow(scene, pose_prev, pose_cur, cam: CameraModel, extra_capsules=None) -> np.ndarray:
    depth, _ = render_depth(scene, pose_cur, cam, extra_capsules)
    return flow_from_depth(depth, np.asarray(pose_prev, dtype=float), np.asarray(pose_cur, dtype=float), cam)


def render_cutpoint_image(p_g, pose, cam: CameraModel, diameter: int = 5) -> np.ndarray:
    """White disc (255) where ``p_g`` projects; all zero if behind or off-frame."""
    img = np.zeros((cam.height, cam.width), dtype=np.uint8)
    u, v, z = project(np.asarray(p_g, dtype=float)[None], np.asarray(pose, dtype=float), cam)
    u, v, z = float(u[0]), float(v[0]), float(z[0])
    if not z > 1e-9 or not (-0.5 <= u < cam.width - 0.5 and -0.5 <= v < cam.height - 0.5):
        return img
    cj, ci = int(round(u)), int(round(v))
    rad = diameter / 2.0
    k = int(math.floor(rad))
    for di in range(-k, k + 1):
        for dj in range(-k, k + 1):
            if di * di + dj * dj <= rad * rad:
                i, j = ci + di, cj + dj
                if 0 <= i < cam.height and 0 <= j < cam.width:
                    img[i, j] = 255
    return img


# ------------------------------------------------------------------ files


def write_flo(flow: np.ndarray, path: str | Path) -> None:
    flow = np.asarray(flow, dtype="<f4")
    h, w, c = flow.shape
    if c != 2:
        raise ValueError("flow needs two channels")
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        f.write(struct.pack("<ii", w, h))
        f.write(flow.tobytes(order="C"))


def read_flo(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FLO_MAGIC:
        raise ValueError(f"{path}: not a .flo file")
    w, h = struct.unpack("<ii", data[4:12])
    return np.frombuffer(data, dtype="<f4", offset=12, count=w * h * 2).reshape(h, w, 2).copy()


def write_pgm(image: np.ndarray, path: str | Path) -> None:
    image = np.asarray(image)
    if image.dtype == np.uint8:
        maxval, payload = 255, image.tobytes()
    else:
        maxval, payload = 65535, image.astype(">u2").tobytes()
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        f.write(payload)


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    # exactly one whitespace byte ends the header; the payload may start with any byte value
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(x) for x in m.groups())
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    img = np.frombuffer(data, dtype=dtype, count=w * h, offset=m.end()).reshape(h, w)
    return img.astype(np.uint8 if maxval < 256 else np.uint16)


def write_ppm(rgb: np.ndarray, path: str | Path) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.tobytes())


def flow_to_rgb(flow: np.ndarray, max_mag: float | None = None) -> np.ndarray:
    """Hue for direction, brightness for magnitude."""
    du, dv = flow[..., 0], flow[..., 1]
    mag = np.hypot(du, dv)
    scale = max_mag or max(float(mag.max()), 1e-9)
    hue = (np.arctan2(dv, du) / (2 * np.pi)) % 1.0
    val = np.clip(mag / scale, 0, 1)
    h6 = hue * 6.0
    out = np.empty(flow.shape[:2] + (3,))
    for c, n in enumerate((5.0, 3.0, 1.0)):
        kk = (n + h6) % 6.0
        out[..., c] = val * (1 - np.clip(np.minimum(kk, 4 - kk), 0, 1))
    return (out * 255).astype(np.uint8)
