"""Superquadric primitives: implicit surface, differentiable sampling, meshing.

A superquadric with scale s = (s_x, s_y, s_z) and shape (eps1, eps2) is the
level set F(x) = 1 of

    F(x) = [ (|x/s_x|^(2/eps2) + |y/s_y|^(2/eps2))^(eps2/eps1)
             + |z/s_z|^(2/eps1) ]

Shape parameters live in [0.1, 1.9]: spheres and boxes at the ends, rounded
boxes and cylinders in between. Points inside give F < 1, outside F > 1.

Parameters are stored in unconstrained form (log-scale, logit-shape,
existence logit) so a plain gradient step can never leave the valid set.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

EPS_LO, EPS_HI = 0.1, 1.9
_TINY = 1e-12


def _logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def abs_pow(x: Tensor, e) -> Tensor:
    """|x|^e with exact zeros preserved (0^e = 0 for e > 0).

    A naive exp(e*log|x|) blows up at x = 0; here entries with |x| below a
    tiny floor are pinned to 0 with zero gradient, which matches the limit.
    `e` may be a Tensor (broadcastable) or a float.
    """
    ax = ad.absolute(x)
    small = ax.data < _TINY
    safe = ad.where(small, np.ones_like(ax.data), ax)
    powed = ad.exp(ad._wrap(e) * ad.log(safe))
    return ad.where(small, np.zeros(powed.shape), powed)


def signed_pow(x: Tensor, e) -> Tensor:
    """sign(x)*|x|^e, the odd extension used by the explicit surface equation."""
    return ad._wrap(np.sign(x.data if isinstance(x, Tensor) else x)) * abs_pow(ad._wrap(x), e)


def rotation_from_6d(r6: Tensor) -> Tensor:
    """Orthonormalize a 6-vector (first two columns of a rotation) into R.

    Gram-Schmidt: b1 = a1/|a1|, b2 = normalize(a2 - (b1.a2) b1), b3 = b1 x b2.
    Columns of the result are (b1, b2, b3); always a proper rotation.
    """
    a1 = r6[..., 0:3]
    a2 = r6[..., 3:6]
    b1 = a1 / ad.norm_l2(a1, axis=-1, keepdims=True, eps=_TINY)
    proj = (b1 * a2).sum(axis=-1, keepdims=True)
    u2 = a2 - proj * b1
    b2 = u2 / ad.norm_l2(u2, axis=-1, keepdims=True, eps=_TINY)
    b3 = ad.cross(b1, b2)
    return ad.stack([b1, b2, b3], axis=-1)


@dataclass
class Superquadric:
    """One primitive's free parameters (all leaf Tensors).

    log_scale:   (3,)  scale = exp(log_scale), always positive
    eps_raw:     (2,)  eps = 0.1 + 1.8 * sigmoid(eps_raw)
    rotation6d:  (6,)
    translation: (3,)
    alpha_logit: ()    existence probability alpha = sigmoid(alpha_logit)
    feature:     (16,) per-primitive descriptor consumed by the assignment net
    """

    log_scale: Tensor
    eps_raw: Tensor
    rotation6d: Tensor
    translation: Tensor
    alpha_logit: Tensor
    feature: Tensor

    @classmethod
    def from_values(cls, scale, eps, translation=(0.0, 0.0, 0.0),
                    rotation6d=(1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
                    alpha: float = 0.5, feature=None,
                    requires_grad: bool = False) -> "Superquadric":
        scale = np.asarray(scale, dtype=np.float64)
        eps = np.asarray(eps, dtype=np.float64)
        if scale.shape != (3,) or np.any(scale <= 0):
            raise ValueError(f"scale must be 3 positive lengths, got {scale}")
        if eps.shape != (2,) or np.any(eps < EPS_LO) or np.any(eps > EPS_HI):
            raise ValueError(f"shape parameters must lie in [{EPS_LO},{EPS_HI}], got {eps}")
        eps = np.clip(eps, EPS_LO + 1e-9, EPS_HI - 1e-9)
        g = np.zeros(16) if feature is None else np.asarray(feature, dtype=np.float64)
        rg = requires_grad
        return cls(
            log_scale=Tensor(np.log(scale), rg),
            eps_raw=Tensor(_logit((eps - EPS_LO) / (EPS_HI - EPS_LO)), rg),
            rotation6d=Tensor(np.asarray(rotation6d, dtype=np.float64), rg),
            translation=Tensor(np.asarray(translation, dtype=np.float64), rg),
            alpha_logit=Tensor(_logit(alpha), rg),
            feature=Tensor(g, rg),
        )

    @property
    def scale(self) -> Tensor:
        return ad.exp(self.log_scale)

    @property
    def eps(self) -> Tensor:
        return EPS_LO + (EPS_HI - EPS_LO) * ad.sigmoid(self.eps_raw)

    @property
    def alpha(self) -> Tensor:
        return ad.sigmoid(self.alpha_logit)

    @property
    def rotation(self) -> Tensor:
        return rotation_from_6d(self.rotation6d)

    def parameters(self) -> list:
        return [self.log_scale, self.eps_raw, self.rotation6d,
                self.translation, self.alpha_logit, self.feature]


def implicit_value(sq: Superquadric, x_local) -> Tensor:
    """Inside-outside function F at canonical-frame points (..., 3).

    F = 1 on the surface, < 1 inside, > 1 outside.
    """
    scale = sq.scale
    if np.any(scale.data <= 0.0) or np.any(~np.isfinite(scale.data)):
        raise ValueError("superquadric scale must be positive and finite")
    x = ad._wrap(x_local)
    eps = sq.eps
    e1, e2 = eps[0], eps[1]
    u = x / scale
    fx = abs_pow(u[..., 0], 2.0 / e2)
    fy = abs_pow(u[..., 1], 2.0 / e2)
    fz = abs_pow(u[..., 2], 2.0 / e1)
    return abs_pow(fx + fy, e2 / e1) + fz


def sample_surface(sq: Superquadric, directions) -> Tensor:
    """Surface points along unit directions, differentiable in scale and shape.

    For a unit direction v the ray t*v hits the unit superquadric at
    t = [ (|v_x|^(2/e2) + |v_y|^(2/e2))^(e2/e1) + |v_z|^(2/e1) ]^(-e1/2);
    the point is then scaled per-axis into the canonical frame.
    """
    d = np.asarray(directions.data if isinstance(directions, Tensor) else directions,
                   dtype=np.float64)
    norms = np.linalg.norm(d, axis=-1)
    if np.any(norms < _TINY):
        raise ValueError("zero direction vector")
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("directions must be unit-norm")
    v = ad._wrap(directions)
    eps = sq.eps
    e1, e2 = eps[0], eps[1]
    gx = abs_pow(v[..., 0], 2.0 / e2)
    gy = abs_pow(v[..., 1], 2.0 / e2)
    gz = abs_pow(v[..., 2], 2.0 / e1)
    radic = abs_pow(gx + gy, e2 / e1) + gz
    t = ad.exp(ad.log(radic) * (e1 * -0.5))
    return v * t[..., None] * sq.scale


def uniform_directions(m: int, rng: np.random.Generator) -> np.ndarray:
    """m quasi-uniform unit vectors via normalized Gaussian draws."""
    d = rng.normal(size=(m, 3))
    n = np.linalg.norm(d, axis=1, keepdims=True)
    n[n < _TINY] = 1.0
    return d / n


# -- meshing -------------------------------------------------------------------


def icosphere(subdivisions: int = 2):
    """Unit icosphere: icosahedron subdivided `subdivisions` times.

    Returns (vertices (V,3) float64, faces (F,3) int64). Level 2 gives
    162 vertices / 320 faces.
    """
    verts, faces = _icosphere_cached(subdivisions)
    return verts.copy(), faces.copy()


@functools.lru_cache(maxsize=None)
def _icosphere_cached(subdivisions: int):
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict = {}
        vlist = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key in cache:
                return cache[key]
            m = np.array(vlist[i]) + np.array(vlist[j])
            m /= np.linalg.norm(m)
            vlist.append(tuple(m))
            cache[key] = len(vlist) - 1
            return cache[key]

        new_faces = []
        for (a, b, c) in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        verts, faces = vlist, new_faces
    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64)


def build_mesh(sq: Superquadric, subdivisions: int = 2):
    """Deform an icosphere onto the superquadric surface (canonical frame).

    Each sphere vertex is read as angles (eta, omega) = (asin z, atan2(y, x))
    and pushed through the explicit surface equation with the signed-power
    convention, so connectivity carries over unchanged from the sphere.
    Returns (vertices (V,3), faces (F,3)) as plain arrays.
    """
    sphere_v, faces = icosphere(subdivisions)
    scale = sq.scale.data
    e1, e2 = sq.eps.data
    z = np.clip(sphere_v[:, 2], -1.0, 1.0)
    eta = np.arcsin(z)
    omega = np.arctan2(sphere_v[:, 1], sphere_v[:, 0])

    def spow(c, e):
        return np.sign(c) * np.abs(c) ** e

    ce, se = np.cos(eta), np.sin(eta)
    cw, sw = np.cos(omega), np.sin(omega)
    verts = np.stack([
        scale[0] * spow(ce, e1) * spow(cw, e2),
        scale[1] * spow(ce, e1) * spow(sw, e2),
        scale[2] * spow(se, e1),
    ], axis=1)
    return verts, faces


def to_world(sq: Superquadric, points_canonical, transform) -> Tensor:
    """Map canonical-frame points through the primitive pose then `transform`.

    p_world = T_rot (R_q p + t_q) + T_trans. `transform` needs .rotation and
    .translation; it must be rigid (checked on the detached values).
    """
    R_t = transform.rotation
    t_t = transform.translation
    Rd = R_t.data if isinstance(R_t, Tensor) else np.asarray(R_t, dtype=np.float64)
    if Rd.shape != (3, 3) or not np.allclose(Rd @ Rd.T, np.eye(3), atol=1e-9) \
            or abs(np.linalg.det(Rd) - 1.0) > 1e-9:
        raise ValueError("transform is not a proper rigid rotation")
    p = ad._wrap(points_canonical)
    Rq = sq.rotation
    local = p @ Rq.transpose(1, 0) + sq.translation
    return local @ ad._wrap(R_t).transpose(1, 0) + ad._wrap(t_t)


def export_ply(path, vertices, faces) -> None:
    """Write an ASCII PLY mesh (positions and triangle indices only)."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(vertices)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write(f"element face {len(faces)}\n")
        f.write("property list uchar int vertex_indices\nend_header\n")
        for v in vertices:
            f.write(f"{v[0]:.8g} {v[1]:.8g} {v[2]:.8g}\n")
        for fc in faces:
            f.write(f"3 {fc[0]} {fc[1]} {fc[2]}\n")
