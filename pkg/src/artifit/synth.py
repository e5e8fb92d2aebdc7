"""Synthetic articulated scenes: parametric objects, orbiting cameras, and
exact partial point clouds rendered through the Z-buffer.

Each scene is a union of cuboid-like parts, one optional static base plus
joints that are either revolute (axis + pivot) or prismatic (direction).
Ground truth comes for free: per-point part labels from the rasterizer's
owner buffer and per-point scene flow by advecting each sample with its
part's relative motion. Clouds contain only camera-visible surface points,
sampled uniformly over covered pixels and unprojected at pixel centers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import PRISMATIC, REVOLUTE, PartState, RigidTransform, exp_twist, twist_of
from .render import Camera, look_at, rasterize
from .superquadric import Superquadric, build_mesh

STATIC = "static"


def motion_profile(kind: str, amount: float, frames: int) -> np.ndarray:
    """Per-frame motion amounts, zero at frame 0, reaching `amount` at the end.

    "early" finishes the motion in the first half of the sequence and holds;
    "late" holds still and then moves in the second half. Staggering lets a
    multi-joint scene move one part at a time.
    """
    s = np.linspace(0.0, 1.0, frames)
    if kind == "linear":
        ramp = s
    elif kind == "smoothstep":
        ramp = s * s * (3.0 - 2.0 * s)
    elif kind == "early":
        u = np.clip(2.0 * s, 0.0, 1.0)
        ramp = u * u * (3.0 - 2.0 * u)
    elif kind == "late":
        u = np.clip(2.0 * s - 1.0, 0.0, 1.0)
        ramp = u * u * (3.0 - 2.0 * u)
    else:
        raise ValueError(f"unknown motion profile {kind!r}")
    return amount * ramp


@dataclass
class PartSpec:
    """One rigid part: a cuboid-ish shape at a rest pose plus its joint."""

    name: str
    half_extents: tuple
    center: tuple
    joint_type: str = STATIC
    axis: tuple = (0.0, 0.0, 1.0)       # revolute axis or prismatic direction
    pivot: tuple = (0.0, 0.0, 0.0)      # point on the revolute axis
    profile: str = "smoothstep"
    amount: float = 0.0                 # radians or scene units at the last frame
    shape_eps: tuple = (0.15, 0.15)     # superquadric roundness of the block

    def rest_mesh(self, subdivisions: int = 3):
        sq = Superquadric.from_values(self.half_extents, self.shape_eps)
        verts, faces = build_mesh(sq, subdivisions)
        return verts + np.asarray(self.center, dtype=np.float64), faces

    def transform_at(self, theta: float) -> RigidTransform:
        if self.joint_type == STATIC or theta == 0.0:
            return RigidTransform.identity()
        if self.joint_type == REVOLUTE:
            part = PartState.new(REVOLUTE, 2, omega=self.axis, q_point=self.pivot)
        elif self.joint_type == PRISMATIC:
            part = PartState.new(PRISMATIC, 2, v_dir=self.axis)
        else:
            raise ValueError(f"unknown joint type {self.joint_type!r}")
        return exp_twist(twist_of(part), theta)


@dataclass
class ArticulatedSpec:
    name: str
    parts: list
    scale: float = 1.0

    def __post_init__(self):
        if not self.parts:
            raise ValueError("spec needs at least one part")
        for p in self.parts:
            if p.joint_type not in (STATIC, REVOLUTE, PRISMATIC):
                raise ValueError(f"part {p.name}: bad joint type {p.joint_type!r}")

    def radius(self) -> float:
        """Bounding radius of the rest object around the origin."""
        r = 0.0
        for p in self.parts:
            c = np.asarray(p.center, dtype=np.float64)
            h = np.asarray(p.half_extents, dtype=np.float64)
            r = max(r, float(np.linalg.norm(c) + np.linalg.norm(h)))
        return r * self.scale

    def scaled(self) -> "ArticulatedSpec":
        """Bake `scale` into the part geometry. Lengths scale (extents,
        centers, pivots, prismatic amounts); revolute angles do not."""
        if self.scale == 1.0:
            return self
        s = self.scale
        parts = [replace(
            p,
            half_extents=tuple(s * np.asarray(p.half_extents, dtype=np.float64)),
            center=tuple(s * np.asarray(p.center, dtype=np.float64)),
            pivot=tuple(s * np.asarray(p.pivot, dtype=np.float64)),
            amount=p.amount * s if p.joint_type == PRISMATIC else p.amount,
        ) for p in self.parts]
        return ArticulatedSpec(self.name, parts, scale=1.0)


# -- camera trajectories ---------------------------------------------------------


def camera_circular(t: float, theta_start: float, theta_end: float,
                    r: float, h0: float, dh: float) -> np.ndarray:
    """Orbit position at normalized time t: azimuth linear in t, height
    oscillating with the azimuth: (r cos a, r sin a, h0 + dh cos a)."""
    a = theta_start + t * (theta_end - theta_start)
    return np.array([r * np.cos(a), r * np.sin(a), h0 + dh * np.cos(a)])


def pingpong_fraction(t: float, mode: str = "smooth") -> float:
    if mode == "smooth":
        return (1.0 - np.cos(2.0 * np.pi * t)) / 2.0
    if mode == "constant":
        return 1.0 - 2.0 * abs((t - np.floor(t)) - 0.5)
    raise ValueError(f"unknown ping-pong mode {mode!r}")


def camera_pingpong(t: float, theta_start: float, theta_end: float,
                    r: float, h0: float, dh: float, mode: str = "smooth") -> np.ndarray:
    """Back-and-forth sweep along the same arc; t=0 and t=1 both sit at
    theta_start, the far end is reached mid-sequence."""
    f = pingpong_fraction(t, mode)
    a = theta_start + f * (theta_end - theta_start)
    return np.array([r * np.cos(a), r * np.sin(a), h0 + dh * np.cos(a)])


@dataclass
class Trajectory:
    kind: str = "circular"              # or "pingpong"
    theta_start: float = np.pi / 6.0    # 120 degree sweep facing the +y side,
    theta_end: float = 5.0 * np.pi / 6.0  # where the builtin objects open
    r: float = 1.0
    h0: float = 1.0
    dh: float = 0.3
    mode: str = "smooth"                # ping-pong easing

    def position(self, t: float) -> np.ndarray:
        if self.kind == "circular":
            return camera_circular(t, self.theta_start, self.theta_end,
                                   self.r, self.h0, self.dh)
        if self.kind == "pingpong":
            return camera_pingpong(t, self.theta_start, self.theta_end,
                                   self.r, self.h0, self.dh, self.mode)
        raise ValueError(f"unknown trajectory kind {self.kind!r}")

    @classmethod
    def around(cls, spec: ArticulatedSpec, kind: str = "circular", **kw) -> "Trajectory":
        """Default orbit scaled to the object: radius 2.5x its bounding
        radius, at a height giving a shallow three-quarter view."""
        rad = spec.radius()
        params = dict(r=2.5 * rad, h0=1.2 * rad, dh=0.4 * rad)
        params.update(kw)
        return cls(kind=kind, **params)

    def as_dict(self) -> dict:
        return dict(kind=self.kind, theta_start=self.theta_start,
                    theta_end=self.theta_end, r=self.r, h0=self.h0,
                    dh=self.dh, mode=self.mode)


# -- scene generation --------------------------------------------------------------


@dataclass
class GtJoint:
    part_label: int
    joint_type: str
    axis: np.ndarray
    pivot: np.ndarray          # meaningful for revolute only
    theta: np.ndarray          # (T,)


@dataclass
class SceneSequence:
    name: str
    clouds: list               # T x (N, 3) world points
    flows: list                # T x (N, 3); zeros at the last frame
    labels: list               # T x (N,) part ids
    cameras: list              # T x Camera
    joints: list               # GtJoint per dynamic part
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def frames(self) -> int:
        return len(self.clouds)

    @property
    def points_per_frame(self) -> int:
        return self.clouds[0].shape[0]


def _unproject(cam: Camera, px, py, depth):
    """Pixel centers + depths back to world points."""
    x = (px + 0.5 - cam.cx) / cam.fx * depth
    y = (py + 0.5 - cam.cy) / cam.fy * depth
    pc = np.stack([x, y, depth], axis=1)
    M = cam.pose.matrix()  # world to camera; invert as w = R^T (p - t)
    return (pc - M[:3, 3]) @ M[:3, :3]


def generate(spec: ArticulatedSpec, trajectory: Trajectory, frames: int,
             points: int, seed: int, resolution: int = 256) -> SceneSequence:
    """Render the articulated object along the trajectory and sample clouds.

    Per frame: pose each part by its ground-truth joint, rasterize the union,
    pick `points` covered pixels uniformly (with replacement and a warning if
    coverage is short), unproject them, and label them with the owning part.
    Flow advects each sample by its part's motion to the next frame.
    """
    if frames < 2:
        raise ValueError("need at least two frames")
    spec = spec.scaled()
    meshes_rest = [p.rest_mesh() for p in spec.parts]
    thetas = np.stack([
        motion_profile(p.profile, p.amount, frames) if p.joint_type != STATIC
        else np.zeros(frames)
        for p in spec.parts
    ], axis=1)  # (T, P)

    part_mats = np.empty((frames, len(spec.parts), 4, 4))
    for t in range(frames):
        for p, ps in enumerate(spec.parts):
            part_mats[t, p] = ps.transform_at(thetas[t, p]).matrix()

    clouds, flows, labels, cams = [], [], [], []
    for t in range(frames):
        eye = trajectory.position(t / (frames - 1.0))
        cam = Camera.default(look_at(eye, np.zeros(3)), resolution, resolution)
        posed = []
        for p, (verts, faces) in enumerate(meshes_rest):
            M = part_mats[t, p]
            posed.append((p, verts @ M[:3, :3].T + M[:3, 3], faces))
        buf = rasterize(posed, cam)
        cover = np.argwhere(np.isfinite(buf.depth))
        if cover.shape[0] == 0:
            raise ValueError(f"frame {t}: object not visible from the camera")
        # fresh generator per frame: identical coverage gives identical picks,
        # so a static scene under a fixed camera repeats its cloud exactly
        rng = np.random.default_rng(seed)
        if cover.shape[0] < points:
            warnings.warn(f"frame {t}: only {cover.shape[0]} covered pixels "
                          f"for {points} samples; sampling with replacement")
            pick = rng.choice(cover.shape[0], size=points, replace=True)
        else:
            pick = rng.choice(cover.shape[0], size=points, replace=False)
        py, px = cover[pick, 0], cover[pick, 1]
        depth = buf.depth[py, px]
        lab = buf.owner[py, px].astype(np.int64)
        pts = _unproject(cam, px.astype(np.float64), py.astype(np.float64), depth)
        clouds.append(pts)
        labels.append(lab)
        cams.append(cam)

    for t in range(frames):
        if t == frames - 1:
            flows.append(np.zeros_like(clouds[t]))
            continue
        rel = np.empty((len(spec.parts), 4, 4))
        for p in range(len(spec.parts)):
            rel[p] = part_mats[t + 1, p] @ np.linalg.inv(part_mats[t, p])
        x = clouds[t]
        lab = labels[t]
        moved = np.einsum("nij,nj->ni", rel[lab][:, :3, :3], x) + rel[lab][:, :3, 3]
        flows.append(moved - x)

    joints = [
        GtJoint(part_label=p, joint_type=ps.joint_type,
                axis=np.asarray(ps.axis, dtype=np.float64) /
                np.linalg.norm(ps.axis),
                pivot=np.asarray(ps.pivot, dtype=np.float64),
                theta=thetas[:, p].copy())
        for p, ps in enumerate(spec.parts) if ps.joint_type != STATIC
    ]
    meta = dict(spec=spec.name, resolution=resolution,
                trajectory=trajectory.as_dict())
    return SceneSequence(name=spec.name, clouds=clouds, flows=flows,
                         labels=labels, cameras=cams, joints=joints,
                         seed=seed, meta=meta)


# -- the scene zoo -----------------------------------------------------------------


def builtin_scenes() -> dict:
    """Named furniture-scale objects covering the joint types under test.

    Sizes sit around a meter on purpose: the fitter initializes primitives
    with half-meter scales, so parts of comparable size keep several
    primitives competitive instead of one blob swallowing the object.
    """
    deg = np.pi / 180.0
    scenes = {}

    scenes["hinged-box"] = ArticulatedSpec("hinged-box", [
        PartSpec("base", (0.625, 0.5, 0.125), (0.0, 0.0, 0.0)),
        PartSpec("lid", (0.625, 0.5, 0.05), (0.0, 0.0, 0.175),
                 joint_type=REVOLUTE, axis=(1.0, 0.0, 0.0),
                 pivot=(0.0, -0.5, 0.125), amount=60 * deg),
    ])

    scenes["drawer"] = ArticulatedSpec("drawer", [
        PartSpec("cabinet", (0.625, 0.625, 0.375), (0.0, 0.0, 0.0)),
        PartSpec("tray", (0.5, 0.6, 0.15), (0.0, 0.125, 0.0),
                 joint_type=PRISMATIC, axis=(0.0, 1.0, 0.0), amount=0.5),
    ])

    scenes["fridge"] = ArticulatedSpec("fridge", [
        PartSpec("body", (0.6, 0.5, 1.0), (0.0, 0.0, 0.0)),
        PartSpec("door-left", (0.3, 0.04, 1.0), (-0.3, 0.54, 0.0),
                 joint_type=REVOLUTE, axis=(0.0, 0.0, 1.0),
                 pivot=(-0.6, 0.54, 0.0), amount=50 * deg),
        PartSpec("door-right", (0.3, 0.04, 1.0), (0.3, 0.54, 0.0),
                 joint_type=REVOLUTE, axis=(0.0, 0.0, 1.0),
                 pivot=(0.6, 0.54, 0.0), amount=-50 * deg),
    ])

    scenes["static-block"] = ArticulatedSpec("static-block", [
        PartSpec("block", (0.625, 0.45, 0.3), (0.0, 0.0, 0.0)),
    ])

    # lid swings during the first half, tray slides during the second; one
    # motion at a time keeps the flow of each joint unambiguous. The tray
    # starts half-open so its face is visible from frame 0.
    scenes["mixed"] = ArticulatedSpec("mixed", [
        PartSpec("base", (0.625, 0.625, 0.25), (0.0, 0.0, 0.0)),
        PartSpec("lid", (0.625, 0.625, 0.05), (0.0, 0.0, 0.325),
                 joint_type=REVOLUTE, axis=(1.0, 0.0, 0.0),
                 pivot=(0.0, -0.625, 0.275), amount=55 * deg,
                 profile="early"),
        PartSpec("tray", (0.45, 0.6, 0.125), (0.0, 0.25, 0.0),
                 joint_type=PRISMATIC, axis=(0.0, 1.0, 0.0), amount=0.5,
                 profile="late"),
    ])

    return scenes
