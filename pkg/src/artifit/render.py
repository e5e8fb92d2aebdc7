"""Pinhole projection and a software Z-buffer for visibility reasoning.

The buffer keeps one depth layer per primitive in addition to the composite
nearest-surface depth, so "which primitives are in front of this sample"
is a constant-time lookup. Rasterization is plain barycentric triangle
filling with perspective-correct depth (1/z interpolated in screen space),
jitted with numba since it is the single CPU hot spot.

Nothing here carries gradients: visibility masks and occluder sets are
recomputed from detached geometry every optimization step, and gradients
enter only through the existence probabilities in occlusion_probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kinematics import RigidTransform

DELTA_REL = 0.01    # relative depth margin for visibility / occlusion tests
DELTA_ABS = 1e-4    # absolute margin, scene units
_Z_NEAR = 1e-6


@dataclass
class Camera:
    """World-to-camera pose plus pinhole intrinsics (x right, y down, z forward)."""

    pose: RigidTransform
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def default(cls, pose: RigidTransform, width: int = 256, height: int = 256) -> "Camera":
        f = 0.8 * width
        return cls(pose, f, f, width / 2.0, height / 2.0, width, height)

    def to_camera(self, points_world: np.ndarray) -> np.ndarray:
        R = np.asarray(self.pose.rotation.data if isinstance(self.pose.rotation, Tensor)
                       else self.pose.rotation)
        t = np.asarray(self.pose.translation.data if isinstance(self.pose.translation, Tensor)
                       else self.pose.translation)
        return points_world @ R.T + t

    def project(self, points_world: np.ndarray):
        """Pixel coordinates (N, 2) and camera depths (N,); depth <= 0 is behind."""
        pc = self.to_camera(np.asarray(points_world, dtype=np.float64))
        z = pc[:, 2]
        safe = np.where(np.abs(z) < _Z_NEAR, _Z_NEAR, z)
        u = self.fx * pc[:, 0] / safe + self.cx
        v = self.fy * pc[:, 1] / safe + self.cy
        return np.stack([u, v], axis=1), z


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """World-to-camera transform with +z pointing from eye toward target."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    z = fwd / n
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise ValueError("view direction parallel to up vector")
    x /= nx
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=0)
    return RigidTransform(R, -R @ eye)


@numba.njit(cache=True)
def _raster_triangles(layer, xs, ys, zs, width, height):  # pragma: no cover - jitted
    for i in range(xs.shape[0]):
        x0, x1, x2 = xs[i, 0], xs[i, 1], xs[i, 2]
        y0, y1, y2 = ys[i, 0], ys[i, 1], ys[i, 2]
        z0, z1, z2 = zs[i, 0], zs[i, 1], zs[i, 2]
        if z0 <= _Z_NEAR or z1 <= _Z_NEAR or z2 <= _Z_NEAR:
            continue
        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area2 > -1e-12 and area2 < 1e-12:
            continue
        lo_x = int(max(0.0, np.floor(min(x0, min(x1, x2)))))
        hi_x = int(min(width - 1.0, np.ceil(max(x0, max(x1, x2)))))
        lo_y = int(max(0.0, np.floor(min(y0, min(y1, y2)))))
        hi_y = int(min(height - 1.0, np.ceil(max(y0, max(y1, y2)))))
        if lo_x > hi_x or lo_y > hi_y:
            continue
        inv0, inv1, inv2 = 1.0 / z0, 1.0 / z1, 1.0 / z2
        inv_area = 1.0 / area2
        for py in range(lo_y, hi_y + 1):
            cy = py + 0.5
            for px in range(lo_x, hi_x + 1):
                cx = px + 0.5
                w0 = (x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1)
                w1 = (x0 - x2) * (cy - y2) - (y0 - y2) * (cx - x2)
                w2 = (x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0)
                if area2 > 0.0:
                    if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                        continue
                else:
                    if w0 > 0.0 or w1 > 0.0 or w2 > 0.0:
                        continue
                l0 = w0 * inv_area
                l1 = w1 * inv_area
                l2 = w2 * inv_area
                z = 1.0 / (l0 * inv0 + l1 * inv1 + l2 * inv2)
                if z < layer[py, px]:
                    layer[py, px] = z
    return layer


@dataclass
class DepthBuffer:
    """Composite nearest depth/owner plus one depth layer per primitive."""

    depth: np.ndarray          # (H, W) nearest depth, inf where empty
    owner: np.ndarray          # (H, W) nearest primitive id, -1 where empty
    layers: np.ndarray         # (Q, H, W) per-primitive depth
    camera: Camera


def rasterize(meshes, cam: Camera, cull_backfaces: bool = False) -> DepthBuffer:
    """Z-buffer the given meshes: list of (primitive_id, verts_world, faces).

    Triangles with any vertex at or behind the near plane are skipped
    (cameras in this pipeline always orbit outside the scene).

    cull_backfaces drops triangles whose outward normal points away from the
    camera; only valid for closed meshes with consistent outward winding
    (the depth result is then identical up to stray silhouette pixels whose
    centers are covered by a back face only).
    """
    H, W = cam.height, cam.width
    ids = [m[0] for m in meshes]
    q_max = max(ids) + 1 if ids else 0
    layers = np.full((q_max, H, W), np.inf)
    for qid, verts, faces in meshes:
        if len(faces) == 0:
            continue
        tri = np.asarray(faces)
        if cull_backfaces:
            pc = cam.to_camera(np.asarray(verts, dtype=np.float64))
            a, b, c = pc[tri[:, 0]], pc[tri[:, 1]], pc[tri[:, 2]]
            normal = np.cross(b - a, c - a)
            tri = tri[np.einsum("ij,ij->i", normal, a) < 0.0]
            if len(tri) == 0:
                continue
        pix, z = cam.project(verts)
        xs = pix[:, 0][tri]
        ys = pix[:, 1][tri]
        zs = z[tri]
        _raster_triangles(layers[qid], xs, ys, zs, W, H)
    if q_max:
        depth = layers.min(axis=0)
        owner = np.where(np.isfinite(depth), layers.argmin(axis=0), -1).astype(np.int32)
    else:
        depth = np.full((H, W), np.inf)
        owner = np.full((H, W), -1, dtype=np.int32)
    return DepthBuffer(depth=depth, owner=owner, layers=layers, camera=cam)


def _pixel_indices(cam: Camera, points_world: np.ndarray):
    pix, z = cam.project(points_world)
    px = np.floor(pix[:, 0]).astype(np.int64)
    py = np.floor(pix[:, 1]).astype(np.int64)
    in_img = (z > _Z_NEAR) & (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
    px = np.clip(px, 0, cam.width - 1)
    py = np.clip(py, 0, cam.height - 1)
    return px, py, z, in_img


def visible_points(points_world: np.ndarray, buf: DepthBuffer) -> np.ndarray:
    """Boolean mask: in front of the camera, inside the image, and no surface
    meaningfully nearer than the sample at its pixel (margin-tolerant)."""
    px, py, z, ok = _pixel_indices(buf.camera, np.asarray(points_world, dtype=np.float64))
    surf = buf.depth[py, px]
    near_enough = z <= surf * (1.0 + DELTA_REL) + DELTA_ABS
    return ok & near_enough


def occluder_sets(points_world: np.ndarray, point_ids: np.ndarray,
                  buf: DepthBuffer) -> np.ndarray:
    """(N, Q) mask: primitive q' occludes the sample if q' is not the owner and
    its own depth layer is nearer than the sample by more than the margin."""
    pts = np.asarray(points_world, dtype=np.float64)
    px, py, z, ok = _pixel_indices(buf.camera, pts)
    q = buf.layers.shape[0]
    layer_d = buf.layers[:, py, px].T  # (N, Q)
    occ = z[:, None] > layer_d * (1.0 + DELTA_REL) + DELTA_ABS
    occ &= ok[:, None]
    ids = np.asarray(point_ids)
    occ[np.arange(len(pts)), np.clip(ids, 0, q - 1)] = False
    return occ


def occlusion_probability(alpha: Tensor, point_ids: np.ndarray,
                          occluders: np.ndarray) -> Tensor:
    """gamma_n = alpha_owner(n) * prod over occluding q' of (1 - alpha_q').

    Differentiable in alpha only; the occluder sets are fixed constants.
    """
    alpha = ad._wrap(alpha)
    ids = np.asarray(point_ids)
    own = ad.gather(alpha, ids, axis=0)
    log_miss = ad.log(1.0 - alpha)  # alpha in (0,1) via sigmoid, so safe
    mask = np.asarray(occluders, dtype=np.float64)
    return own * ad.exp((ad._wrap(mask) * log_miss.reshape(1, -1)).sum(axis=1))


def write_pgm(path, depth: np.ndarray) -> None:
    """Dump a depth buffer as an 8-bit PGM (near = bright, empty = black)."""
    d = np.asarray(depth, dtype=np.float64)
    finite = np.isfinite(d)
    img = np.zeros(d.shape, dtype=np.uint8)
    if finite.any():
        lo, hi = d[finite].min(), d[finite].max()
        span = hi - lo if hi > lo else 1.0
        img[finite] = np.round(255 * (1.0 - (d[finite] - lo) / span)).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{d.shape[1]} {d.shape[0]}\n255\n".encode())
        f.write(img.tobytes())
