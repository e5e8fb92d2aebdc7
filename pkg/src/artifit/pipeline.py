"""End-to-end fitting: initialize a soft primitive/part state, optimize all
losses jointly with Adam over multiple seeds, then extract hard parts, joint
parameters, and per-point labels from the converged state.

One optimization step: sample fresh surface points on every primitive, pose
them with the assignment-blended screw motions, rasterize the current shapes
into per-frame depth buffers for visibility and occlusion, evaluate the loss
stack, backprop, and update. Visibility masks, occluder sets, and all loss
targets are recomputed from detached values each step; gradients flow through
distances, probabilities, and transforms only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from . import autodiff as ad
from .assignment import (AssignmentState, bbox_normalizer, normalize_points,
                         part_probs, point_part_probs, point_primitive_probs)
from .autodiff import Adam, DomainError, NanGradientError, Tensor
from .kinematics import (PRISMATIC, REVOLUTE, PartState, exp_screws_batch,
                         twist_of)
from .losses import (LossWeights, combine, loss_flow, loss_match, loss_motion,
                     loss_part_existence, loss_part_sparsity,
                     loss_prim_existence, loss_prim_sparsity,
                     loss_rec_Q_to_X, loss_rec_X_to_Q)
from .render import (occluder_sets, occlusion_probability, rasterize,
                     visible_points)
from .superquadric import (Superquadric, build_mesh, rotation_from_6d,
                           sample_surface, uniform_directions)


@dataclass
class FitConfig:
    """Knobs of the optimization.

    The defaults are the desk-scale configuration: small enough to converge
    in minutes on one CPU core. `full_scale()` returns the heavyweight setup
    (more frames, points, primitives, parts, steps, and seeds).
    """

    frames: int = 12
    points: int = 1024
    num_primitives: int = 6
    num_parts: int = 4
    steps: int = 3000
    lr: float = 5e-3
    seeds: int = 3
    weights: LossWeights = field(default_factory=LossWeights)
    tau_beta: float = 0.05
    tau_alpha_per_point: float = 0.005
    alpha_cut: float = 0.5
    beta_cut: float = 0.5
    static_cut: float = 0.02      # radians or scene units
    resolution: int = 128         # depth buffer used during fitting
    samples_per_primitive: int = 128

    def __post_init__(self):
        if self.num_primitives < 1 or self.num_parts < 1:
            raise ValueError("need at least one primitive and one part")
        if self.num_parts % 2:
            raise ValueError("part count must be even: half prismatic, half revolute")
        if self.steps < 1 or self.seeds < 1:
            raise ValueError("steps and seeds must be positive")

    @classmethod
    def full_scale(cls) -> "FitConfig":
        return cls(frames=25, points=4096, num_primitives=10, num_parts=8,
                   steps=10000, seeds=5, resolution=256,
                   samples_per_primitive=500)

    def tau_alpha(self) -> float:
        return self.tau_alpha_per_point * self.frames * self.points

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["weights"] = self.weights.as_dict()
        return d


@dataclass
class FitState:
    """All free parameters of one seed plus its optimization record."""

    primitives: list
    parts: list
    assign: AssignmentState
    seed: int
    final_loss: float = float("inf")
    trace: list = field(default_factory=list)   # per-step loss-term dicts
    error: str = ""

    def parameters(self) -> list:
        out = []
        for sq in self.primitives:
            out.extend(sq.parameters())
        for part in self.parts:
            out.extend(part.parameters())
        out.extend(self.assign.parameters())
        return out


@dataclass
class PartReport:
    joint_type: str
    axis: np.ndarray            # unit
    pivot: object               # (3,) for revolute, None for prismatic
    theta: np.ndarray           # (T,)
    is_static: bool


@dataclass
class PrimitiveReport:
    scale: np.ndarray
    eps: np.ndarray
    rotation6d: np.ndarray
    translation: np.ndarray
    alpha: float
    part_id: int                # index into FitResult.parts, -1 if orphaned


@dataclass
class FitResult:
    parts: list                 # PartReport
    primitives: list            # PrimitiveReport
    labels: list                # per frame (N,) indices into parts, -1 if none
    final_loss: float
    seed: int


def initialize(clouds, config: FitConfig, seed: int) -> FitState:
    """Fresh optimization state; bit-identical for a fixed seed.

    Superquadrics start as small spheres-cum-boxes (scale 0.5, shape
    (0.2, 0.2), existence 0.5) at random poses inside the first frame's
    bounding box. The first half of the parts is prismatic, the rest
    revolute, with random unit axes anchored at the cloud centroid and zero
    motion. Assignment logits start uniform (zero).
    """
    rng = np.random.default_rng(seed)
    frame0 = np.asarray(clouds[0], dtype=np.float64)
    lo, hi = frame0.min(axis=0), frame0.max(axis=0)
    centroid = frame0.mean(axis=0)
    frames = len(clouds)

    prims = []
    for _ in range(config.num_primitives):
        rot6 = rng.standard_normal(6)
        trans = rng.uniform(lo, hi)
        prims.append(Superquadric.from_values(
            (0.5, 0.5, 0.5), (0.2, 0.2), translation=trans, rotation6d=rot6,
            alpha=0.5, requires_grad=True))

    parts = []
    for p in range(config.num_parts):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        kind = PRISMATIC if p < config.num_parts // 2 else REVOLUTE
        parts.append(PartState.new(kind, frames, omega=axis, q_point=centroid,
                                   v_dir=axis, beta=0.5, requires_grad=True))

    assign = AssignmentState.init(config.num_primitives, config.num_parts, rng)
    return FitState(primitives=prims, parts=parts, assign=assign, seed=seed)


def _rest_meshes(state: FitState, subdivisions: int = 2):
    """Detached rest-pose world meshes from the current primitive params."""
    out = []
    for sq in state.primitives:
        verts, faces = build_mesh(sq, subdivisions)
        Rq = rotation_from_6d(sq.rotation6d).data
        out.append((verts @ Rq.T + sq.translation.data, faces))
    return out


def _posed_meshes(rest_meshes, R_np, t_np, t: int):
    """Rest meshes moved by the frame-t blended screw motion of each primitive."""
    return [(q, verts @ R_np[t, q].T + t_np[t, q], faces)
            for q, (verts, faces) in enumerate(rest_meshes)]


def objective(state: FitState, scene, config: FitConfig, rng):
    """One full evaluation of the loss stack; returns (total, float log)."""
    prims, parts = state.primitives, state.parts
    Q, P = len(prims), len(parts)
    T = scene.frames
    S = config.samples_per_primitive
    clouds = scene.clouds

    theta = ad.stack([p.theta for p in parts], axis=1)              # (T, P)
    screws = ad.stack([twist_of(p) for p in parts], axis=0)         # (P, 6)
    per_part = theta.reshape(T, P, 1) * screws.reshape(1, P, 6)     # (T, P, 6)
    v = part_probs(state.assign.h)                                  # (Q, P)
    Rp, tp = exp_screws_batch(per_part)                             # (T,P,3,3)
    Rq, tq = exp_screws_batch(v.reshape(1, Q, P) @ per_part)        # (T,Q,3,3)

    rest = []
    for sq in prims:
        local = sample_surface(sq, uniform_directions(S, rng))
        rest.append(local @ sq.rotation.transpose(1, 0) + sq.translation)
    rest = ad.stack(rest, axis=0)                                   # (Q, S, 3)
    posed = rest.reshape(1, Q, S, 3) @ Rq.transpose(0, 1, 3, 2) \
        + tq.reshape(T, Q, 1, 3)                                    # (T,Q,S,3)

    alpha = ad.stack([sq.alpha for sq in prims], axis=0)            # (Q,)
    beta = ad.stack([p.beta for p in parts], axis=0)                # (P,)
    ids = np.repeat(np.arange(Q), S)

    gam_frames, visibles, d2_frames = [], np.empty((T, Q, S), dtype=bool), []
    posed_np = posed.data
    rest_meshes = _rest_meshes(state)
    for t in range(T):
        buf = rasterize(_posed_meshes(rest_meshes, Rq.data, tq.data, t),
                        scene.cameras[t], cull_backfaces=True)
        flat = posed_np[t].reshape(Q * S, 3)
        visibles[t] = visible_points(flat, buf).reshape(Q, S)
        gam_frames.append(
            occlusion_probability(alpha, ids, occluder_sets(flat, ids, buf)))
        d2_frames.append(cdist(clouds[t], flat, "sqeuclidean"))
    gammas = ad.stack(gam_frames, axis=0).reshape(T, Q, S)

    center, half = bbox_normalizer(np.concatenate(clouds, axis=0))
    G = ad.stack([sq.feature for sq in prims], axis=0)              # (Q, 16)
    n = scene.points_per_frame
    all_pts = normalize_points(np.concatenate(clouds, axis=0), center, half)
    w_flat = point_primitive_probs(all_pts, state.assign.mlp, G)    # (T*N, Q)
    w_all = w_flat.reshape(T, n, Q)
    u_all = point_part_probs(w_flat, v).reshape(T, n, P)

    terms = {
        "rec_qx": loss_rec_Q_to_X(posed, gammas, visibles, clouds, d2_frames),
        "rec_xq": loss_rec_X_to_Q(clouds, w_all, posed, visibles, d2_frames),
        "flow": loss_flow(clouds, scene.flows, u_all, (Rp, tp)),
        "part_sparsity": loss_part_sparsity(v),
        "part_existence": loss_part_existence(beta, v, config.tau_beta),
        "prim_sparsity": loss_prim_sparsity([w_flat]),
        "prim_existence": loss_prim_existence(
            alpha, [w_flat], config.tau_alpha_per_point * T * n),
        "motion": loss_motion(theta),
        "match": loss_match(v),
    }
    return combine(config.weights, terms)


def fit_seed(scene, config: FitConfig, seed: int, callback=None) -> FitState:
    """Optimize one seed to completion; NaN anywhere aborts this seed only."""
    state = initialize(scene.clouds, config, seed)
    rng = np.random.default_rng([seed, 1])
    opt = Adam(state.parameters(), lr=config.lr)
    try:
        for step in range(config.steps):
            opt.zero_grad()
            total, log = objective(state, scene, config, rng)
            if not np.isfinite(total.data):
                raise NanGradientError(f"non-finite loss at step {step}")
            total.backward()
            opt.step()
            state.trace.append(log)
            if callback is not None:
                callback(seed, step, log)
        state.final_loss = state.trace[-1]["total"]
    except (NanGradientError, DomainError) as e:
        # diverged parameters saturate a sigmoid or blow up a gradient; the
        # seed is recorded as failed and the remaining seeds go on
        state.error = str(e)
        state.final_loss = float("inf")
    return state


def fit(scene, config: FitConfig, callback=None) -> list:
    """All seeds, sequentially; each seed is fully independent."""
    return [fit_seed(scene, config, seed, callback)
            for seed in range(config.seeds)]


def _axis_pivot(part: PartState, centroid: np.ndarray):
    if part.joint_type == REVOLUTE:
        axis = part.omega.data / np.linalg.norm(part.omega.data)
        q = part.q_point.data
        base = q - np.dot(q, axis) * axis      # same line, canonical anchor
        pivot = base + np.dot(centroid - base, axis) * axis
        return axis, pivot
    axis = part.v_dir.data / np.linalg.norm(part.v_dir.data)
    return axis, None


def extract(state: FitState, scene, config: FitConfig) -> FitResult:
    """Hard decisions from the converged soft state.

    Primitives survive by existence probability, parts by existence
    probability plus at least one surviving primitive. A surviving part is
    static when its motion never leaves the dead zone. Labels restrict the
    per-point part posterior to surviving parts.
    """
    alpha = np.array([sq.alpha.data for sq in state.primitives])
    beta = np.array([p.beta.data for p in state.parts])
    v = part_probs(state.assign.h).data
    keep_q = np.flatnonzero(alpha > config.alpha_cut)
    hard_part = v.argmax(axis=1)

    members = {p: [q for q in keep_q if hard_part[q] == p]
               for p in range(len(state.parts))}
    keep_p = [p for p in range(len(state.parts))
              if beta[p] > config.beta_cut and members[p]]
    report_id = {p: i for i, p in enumerate(keep_p)}

    parts = []
    for p in keep_p:
        part = state.parts[p]
        theta = part.theta.data.copy()
        centroid = np.mean([state.primitives[q].translation.data
                            for q in members[p]], axis=0)
        axis, pivot = _axis_pivot(part, centroid)
        parts.append(PartReport(
            joint_type=part.joint_type, axis=axis, pivot=pivot, theta=theta,
            is_static=bool(np.max(np.abs(theta)) < config.static_cut)))

    prims = []
    for q in keep_q:
        sq = state.primitives[q]
        prims.append(PrimitiveReport(
            scale=sq.scale.data.copy(), eps=sq.eps.data.copy(),
            rotation6d=sq.rotation6d.data.copy(),
            translation=sq.translation.data.copy(),
            alpha=float(alpha[q]), part_id=report_id.get(hard_part[q], -1)))

    labels = []
    if keep_p:
        center, half = bbox_normalizer(np.concatenate(scene.clouds, axis=0))
        G = ad.stack([sq.feature for sq in state.primitives], axis=0)
        for t in range(scene.frames):
            w = point_primitive_probs(
                normalize_points(scene.clouds[t], center, half),
                state.assign.mlp, G)
            u = point_part_probs(w, ad._wrap(v)).data
            best = np.argmax(u[:, keep_p], axis=1)
            labels.append(np.array([report_id[keep_p[b]] for b in best],
                                   dtype=np.int64))
    else:
        labels = [np.full(scene.points_per_frame, -1, dtype=np.int64)
                  for _ in range(scene.frames)]

    return FitResult(parts=parts, primitives=prims, labels=labels,
                     final_loss=state.final_loss, seed=state.seed)


def select_best(results) -> FitResult:
    """Lowest final loss wins; ties go to the lowest seed id."""
    results = list(results)
    if not results:
        raise ValueError("no results to select from")
    return min(results, key=lambda r: (r.final_loss, r.seed))


def run(scene, config: FitConfig, callback=None):
    """fit + extract + select_best; returns (best result, all states)."""
    states = fit(scene, config, callback)
    results = [extract(s, scene, config) for s in states]
    return select_best(results), states
