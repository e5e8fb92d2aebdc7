"""Screw-theory kinematics: twists, the SE(3) exponential, per-part motion.

Each articulated part is a one-degree-of-freedom joint described by a screw
(twist) S. A revolute joint rotating about the line through q with direction
omega has S = [omega_hat, -omega_hat x q_perp] where q_perp is q projected
onto the plane normal to the axis; a prismatic joint sliding along v has
S = [0, v_hat]. A motion amount theta turns the screw into a rigid transform
via the SE(3) exponential (Rodrigues for the rotation, the V-matrix for the
translation). Primitives move by exponentiating a soft assignment-weighted
sum of part screws, so assignment stays differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

_TINY = 1e-12
_TAYLOR_CUT = 1e-6  # switch rotation coefficients to series below this angle

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


def _logit(p):
    return float(np.log(p / (1.0 - p)))


@dataclass
class RigidTransform:
    """Proper rigid motion; rotation and translation may be Tensors or arrays."""

    rotation: object
    translation: object

    def __post_init__(self):
        R = self.rotation.data if isinstance(self.rotation, Tensor) else np.asarray(self.rotation)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise ValueError("rotation is not a proper rotation matrix")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def _R(self) -> Tensor:
        return ad._wrap(self.rotation)

    def _t(self) -> Tensor:
        return ad._wrap(self.translation)

    def apply(self, points) -> Tensor:
        """Map points (..., 3) through R p + t."""
        return ad._wrap(points) @ self._R().transpose(1, 0) + self._t()

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self * other)(p) = self(other(p))."""
        R, t = self._R(), self._t()
        return RigidTransform(R @ other._R(), (R @ other._t()) + t)

    def inverse(self) -> "RigidTransform":
        Rt = self._R().transpose(1, 0)
        return RigidTransform(Rt, -(Rt @ self._t()))

    def matrix(self) -> np.ndarray:
        """Detached 4x4 homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self._R().data
        M[:3, 3] = self._t().data
        return M


@dataclass
class PartState:
    """One joint's free parameters.

    joint_type is fixed at init. The axis (omega for revolute, v_dir for
    prismatic) is stored unnormalized and normalized on use. theta holds the
    motion amount per frame; frame 0 is the reference pose, so only frames
    1..T-1 are free and theta[0] is pinned to zero by construction.
    """

    joint_type: str
    omega: Tensor
    q_point: Tensor
    v_dir: Tensor
    theta_free: Tensor  # (T-1,)
    beta_logit: Tensor

    def __post_init__(self):
        if self.joint_type not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint type {self.joint_type!r}")

    @classmethod
    def new(cls, joint_type: str, frames: int, omega=(0.0, 0.0, 1.0),
            q_point=(0.0, 0.0, 0.0), v_dir=(0.0, 0.0, 1.0),
            beta: float = 0.5, requires_grad: bool = False) -> "PartState":
        if frames < 1:
            raise ValueError("need at least one frame")
        rg = requires_grad
        return cls(
            joint_type=joint_type,
            omega=Tensor(np.asarray(omega, dtype=np.float64), rg),
            q_point=Tensor(np.asarray(q_point, dtype=np.float64), rg),
            v_dir=Tensor(np.asarray(v_dir, dtype=np.float64), rg),
            theta_free=Tensor(np.zeros(frames - 1), rg),
            beta_logit=Tensor(np.array(_logit(beta)), rg),
        )

    @property
    def frames(self) -> int:
        return self.theta_free.data.shape[0] + 1

    @property
    def theta(self) -> Tensor:
        """(T,) motion amounts with the frozen zero for frame 0 prepended."""
        return ad.concat([Tensor(np.zeros(1)), self.theta_free.reshape(-1)], axis=0)

    @property
    def beta(self) -> Tensor:
        return ad.sigmoid(self.beta_logit)

    def parameters(self) -> list:
        axis = [self.omega, self.q_point] if self.joint_type == REVOLUTE else [self.v_dir]
        return axis + [self.theta_free, self.beta_logit]


def _normalized(v: Tensor) -> Tensor:
    n = np.linalg.norm(v.data)
    if n < 1e-9:
        raise ValueError("axis vector is numerically zero")
    return v / ad.norm_l2(v, axis=-1, keepdims=True, eps=_TINY)


def twist_of(part: PartState) -> Tensor:
    """6-vector screw [angular, linear] for the part's joint."""
    if part.joint_type == PRISMATIC:
        v = _normalized(part.v_dir)
        return ad.concat([Tensor(np.zeros(3)), v], axis=0)
    w = _normalized(part.omega)
    q = part.q_point
    q_perp = q - (q * w).sum() * w
    lin = -ad.cross(w, q_perp)
    return ad.concat([w, lin], axis=0)


def _skew(w: Tensor) -> Tensor:
    z = w[0] * 0.0
    return ad.stack([
        ad.stack([z, -w[2], w[1]], axis=0),
        ad.stack([w[2], z, -w[0]], axis=0),
        ad.stack([-w[1], w[0], z], axis=0),
    ], axis=0)


def _rot_coeffs(phi_sq: Tensor):
    """(sin phi/phi, (1-cos phi)/phi^2, (phi-sin phi)/phi^3) as functions of phi^2.

    Below the cutover angle each coefficient uses its 4th-order Taylor series
    (in phi, i.e. quadratic in phi^2), which is exact to double precision
    there and keeps gradients finite at phi = 0.
    """
    small = phi_sq.data < _TAYLOR_CUT ** 2
    safe_sq = ad.where(small, np.ones_like(phi_sq.data), phi_sq)
    phi = ad.sqrt(safe_sq)
    sp, cp = ad.sin(phi), ad.cos(phi)
    p2 = phi_sq
    p4 = phi_sq * phi_sq
    A = ad.where(small, 1.0 - p2 * (1.0 / 6.0) + p4 * (1.0 / 120.0), sp / phi)
    B = ad.where(small, 0.5 - p2 * (1.0 / 24.0) + p4 * (1.0 / 720.0), (1.0 - cp) / safe_sq)
    C = ad.where(small, 1.0 / 6.0 - p2 * (1.0 / 120.0) + p4 * (1.0 / 5040.0),
                 (phi - sp) / (safe_sq * phi))
    return A, B, C


def exp_screw(xi: Tensor) -> RigidTransform:
    """SE(3) exponential of an unnormalized twist (w, u) = xi[:3], xi[3:].

    R = I + A [w]x + B [w]x^2 and t = (I + B [w]x + C [w]x^2) u with the
    coefficients from _rot_coeffs; handles w = 0 (pure translation) exactly.
    """
    xi = ad._wrap(xi)
    w, u = xi[0:3], xi[3:6]
    phi_sq = (w * w).sum()
    A, B, C = _rot_coeffs(phi_sq)
    K = _skew(w)
    K2 = K @ K
    eye = Tensor(np.eye(3))
    R = eye + A * K + B * K2
    V = eye + B * K + C * K2
    return RigidTransform(R, V @ u)


def exp_twist(S: Tensor, theta) -> RigidTransform:
    """Rigid transform of moving `theta` along screw S (exp of theta*S)."""
    return exp_screw(ad._wrap(S) * ad._wrap(theta))


def primitive_transform(v_row: Tensor, parts, t: int) -> RigidTransform:
    """Motion of one primitive at frame t under soft part assignment v_row.

    Exponentiates the assignment-weighted sum of part screws scaled by their
    frame-t motion amounts. A one-hot row reduces to that part's own motion.
    """
    v_row = ad._wrap(v_row)
    xi = None
    for p, part in enumerate(parts):
        term = v_row[p] * part.theta[t] * twist_of(part)
        xi = term if xi is None else xi + term
    return exp_screw(xi)


def blended_twists(v: Tensor, parts) -> Tensor:
    """(Q, 6) assignment-weighted screws, shared across frames.

    Row q is sum_p v[q, p] * S_p; scaling by theta happens per frame.
    """
    S = ad.stack([twist_of(p) for p in parts], axis=0)  # (P, 6)
    return ad._wrap(v) @ S


def exp_screws_batch(xi: Tensor):
    """SE(3) exponential applied to each row of (..., 6) twists.

    Returns (R (..., 3, 3), t (..., 3)) as Tensors; used to pose all
    primitives and frames in one vectorized call.
    """
    xi = ad._wrap(xi)
    w, u = xi[..., 0:3], xi[..., 3:6]
    phi_sq = (w * w).sum(axis=-1)
    A, B, C = _rot_coeffs(phi_sq)
    zeros = np.zeros(w.shape[:-1])
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    z = ad._wrap(zeros)
    K = ad.stack([
        ad.stack([z, -wz, wy], axis=-1),
        ad.stack([wz, z, -wx], axis=-1),
        ad.stack([-wy, wx, z], axis=-1),
    ], axis=-2)
    K2 = K @ K
    eye = ad._wrap(np.broadcast_to(np.eye(3), K.shape).copy())
    R = eye + A[..., None, None] * K + B[..., None, None] * K2
    V = eye + B[..., None, None] * K + C[..., None, None] * K2
    t = (V @ u[..., None])[..., 0]
    return R, t
