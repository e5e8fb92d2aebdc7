"""Objective terms: two visibility-aware reconstruction losses, a scene-flow
consistency loss, and six regularizers, combined by fixed weights.

Conventions shared by every term:
  - clouds[t] is the frame-t observation, an (N, 3) float array (constant).
  - Primitive surface samples are Tensors so scale/shape/pose gradients flow.
  - Nearest-neighbor indices, visibility masks, occluder sets, and the BCE
    indicator targets are recomputed from detached values each call; gradients
    flow through distances and probabilities, never through set membership.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import autodiff as ad
from .autodiff import Tensor

TAU_BETA = 0.05            # part keeps its existence target above this mean v
TAU_ALPHA_PER_POINT = 0.005  # scaled by T*N for the primitive indicator
_CLAMP = 1e-6


@dataclass
class LossWeights:
    rec_qx: float = 2.0
    rec_xq: float = 2.0
    flow: float = 1.0
    part_sparsity: float = 0.1
    part_existence: float = 0.05
    prim_sparsity: float = 0.01
    prim_existence: float = 0.05
    motion: float = 0.1
    match: float = 0.1

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if val < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {val}")

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def loss_rec_Q_to_X(samples, gammas, visibles, clouds, d2_per_frame=None) -> Tensor:
    """Occlusion-weighted distance from visible primitive samples to the clouds.

    samples[t][q]: (M, 3) Tensor of world-frame surface samples
    gammas[t][q]:  (M,) Tensor of not-occluded probabilities
    visibles[t][q]: (M,) bool mask (constant)
    clouds[t]:     (N, 3) array

    Sum of gamma * min-squared-distance over all visible samples, divided by
    the sum of gamma over the same set. If nothing is visible (or the total
    weight vanishes) the term degenerates to 0 with a warning.

    Stacked fast path: samples as one (T, Q, S, 3) Tensor with gammas
    (T, Q, S) and visibles (T, Q, S); optionally reuses precomputed
    d2_per_frame[t] = squared distances (N, Q*S) shared with the other
    reconstruction direction. Identical math, one graph node per op.
    """
    if isinstance(samples, Tensor):
        return _rec_Q_to_X_stacked(samples, gammas, visibles, clouds, d2_per_frame)
    num = None
    den = None
    for t, cloud in enumerate(clouds):
        cloud = np.asarray(cloud, dtype=np.float64)
        for q in range(len(samples[t])):
            y = samples[t][q]
            vis = np.asarray(visibles[t][q], dtype=bool)
            if cloud.shape[0] == 0 or not vis.any():
                continue
            d2 = cdist(_data(y), cloud, "sqeuclidean")
            nn = cloud[d2.argmin(axis=1)]          # (M, 3) constant
            diff = y - nn
            dist = (diff * diff).sum(axis=-1)      # (M,)
            wvis = gammas[t][q] * vis.astype(np.float64)
            term_num = (wvis * dist).sum()
            term_den = wvis.sum()
            num = term_num if num is None else num + term_num
            den = term_den if den is None else den + term_den
    if den is None or den.item() <= 0.0:
        warnings.warn("no visible samples with weight; primitive-to-cloud term is 0")
        return Tensor(0.0)
    return num / den


def _rec_Q_to_X_stacked(samples: Tensor, gammas, visibles, clouds, d2_per_frame):
    T, Q, S, _ = samples.data.shape
    vis = np.asarray(visibles, dtype=np.float64)
    if not vis.any():
        warnings.warn("no visible samples with weight; primitive-to-cloud term is 0")
        return Tensor(0.0)
    nn = np.empty((T, Q * S, 3))
    for t in range(T):
        cloud = np.asarray(clouds[t], dtype=np.float64)
        flat = samples.data[t].reshape(Q * S, 3)
        d2 = cdist(flat, cloud, "sqeuclidean") if d2_per_frame is None \
            else d2_per_frame[t].T
        nn[t] = cloud[d2.argmin(axis=1)]
    diff = samples - nn.reshape(T, Q, S, 3)
    dist = (diff * diff).sum(axis=-1)
    wvis = ad._wrap(gammas) * vis
    num = (wvis * dist).sum()
    den = wvis.sum()
    if den.item() <= 0.0:
        warnings.warn("no visible samples with weight; primitive-to-cloud term is 0")
        return Tensor(0.0)
    return num / den


def loss_rec_X_to_Q(clouds, w_per_frame, samples, visibles, d2_per_frame=None) -> Tensor:
    """Soft-assignment-weighted distance from observed points to primitives.

    w_per_frame[t]: (N, Q) Tensor, rows stochastic. For each point and
    primitive, the distance is to the nearest *visible* sample of that
    primitive this frame; a primitive with no visible samples falls back to
    all of its samples. Mean over T*N (empty frames skipped, mean over the
    rest).

    Stacked fast path mirrors loss_rec_Q_to_X: w_per_frame (T, N, Q) Tensor,
    samples (T, Q, S, 3) Tensor, visibles (T, Q, S).
    """
    if isinstance(samples, Tensor):
        return _rec_X_to_Q_stacked(clouds, w_per_frame, samples, visibles,
                                   d2_per_frame)
    total = None
    points_used = 0
    for t, cloud in enumerate(clouds):
        cloud = np.asarray(cloud, dtype=np.float64)
        n = cloud.shape[0]
        if n == 0:
            continue
        points_used += n
        w = w_per_frame[t]
        frame = None
        for q in range(len(samples[t])):
            y = samples[t][q]
            vis = np.asarray(visibles[t][q], dtype=bool)
            d2 = cdist(cloud, _data(y), "sqeuclidean")
            if vis.any():
                d2 = d2 + np.where(vis, 0.0, np.inf)[None, :]
            nn_idx = d2.argmin(axis=1)             # (N,) constant
            ynn = ad.gather_rows(y, nn_idx)
            diff = ynn - cloud
            dist = (diff * diff).sum(axis=-1)      # (N,)
            contrib = (w[:, q] * dist).sum()
            frame = contrib if frame is None else frame + contrib
        total = frame if total is None else total + frame
    if points_used == 0:
        raise ValueError("all cloud frames are empty")
    return total / float(points_used)


def _rec_X_to_Q_stacked(clouds, w_per_frame, samples: Tensor, visibles,
                        d2_per_frame):
    T, Q, S, _ = samples.data.shape
    cl = np.stack([np.asarray(c, dtype=np.float64) for c in clouds], axis=0)
    n = cl.shape[1]
    if T * n == 0:
        raise ValueError("all cloud frames are empty")
    vis = np.asarray(visibles, dtype=bool)
    # per (t, q): +inf on hidden samples unless the primitive has none visible,
    # then fall back to all of its samples
    mask = np.where(vis, 0.0, np.inf)
    mask[~vis.any(axis=2)] = 0.0
    idx = np.empty((T, n, Q), dtype=np.int64)
    for t in range(T):
        d2 = cdist(cl[t], samples.data[t].reshape(Q * S, 3), "sqeuclidean") \
            if d2_per_frame is None else d2_per_frame[t]
        best = (d2.reshape(n, Q, S) + mask[t][None]).argmin(axis=2)
        idx[t] = best + (np.arange(Q) + t * Q)[None, :] * S
    ynn = ad.gather_rows(samples.reshape(T * Q * S, 3), idx.reshape(-1))
    diff = ynn.reshape(T, n, Q, 3) - cl.reshape(T, n, 1, 3)
    dist = (diff * diff).sum(axis=-1)
    return (ad._wrap(w_per_frame) * dist).sum() / float(T * n)


def loss_flow(clouds, flows, u_per_frame, part_transforms) -> Tensor:
    """Mean L1 between predicted and observed per-point displacement.

    Each point is advanced by the assignment-weighted relative part motion
    T_{p,t+1} T_{p,t}^{-1}; the prediction minus the point must match the
    scene flow. flows[t] covers t = 0..T-2; part_transforms[t][p] is part p's
    pose at frame t (all T frames).

    Stacked fast path: part_transforms as a (R (T, P, 3, 3), t (T, P, 3))
    Tensor pair with u_per_frame a (T, N, P) Tensor.
    """
    if isinstance(part_transforms, tuple):
        return _flow_stacked(clouds, flows, u_per_frame, part_transforms)
    T = len(clouds)
    if len(flows) < T - 1:
        raise ValueError(f"need scene flow for {T - 1} transitions, got {len(flows)}")
    total = None
    count = 0
    for t in range(T - 1):
        x = np.asarray(clouds[t], dtype=np.float64)
        f = np.asarray(flows[t], dtype=np.float64)
        if x.shape != f.shape:
            raise ValueError(f"flow shape {f.shape} != cloud shape {x.shape} at frame {t}")
        u = u_per_frame[t]
        pred = None
        for p in range(u.data.shape[1]):
            rel = part_transforms[t + 1][p].compose(part_transforms[t][p].inverse())
            moved = rel.apply(x)                   # (N, 3)
            term = u[:, p:p + 1] * moved
            pred = term if pred is None else pred + term
        resid = pred - x - f
        l1 = ad.absolute(resid).sum()
        total = l1 if total is None else total + l1
        count += x.shape[0]
    return total / float(count)


def _flow_stacked(clouds, flows, u_per_frame, part_transforms):
    Rall, tall = part_transforms
    T, P = Rall.data.shape[0], Rall.data.shape[1]
    if len(flows) < T - 1:
        raise ValueError(f"need scene flow for {T - 1} transitions, got {len(flows)}")
    x = np.stack([np.asarray(clouds[t], dtype=np.float64) for t in range(T - 1)])
    f = np.stack([np.asarray(flows[t], dtype=np.float64) for t in range(T - 1)])
    if x.shape != f.shape:
        raise ValueError(f"flow shape {f.shape} != cloud shape {x.shape}")
    n = x.shape[1]
    Rrel = Rall[1:] @ Rall[:-1].transpose(0, 1, 3, 2)           # (T-1,P,3,3)
    trel = tall[1:] - (Rrel @ tall[:-1].reshape(T - 1, P, 3, 1)).reshape(T - 1, P, 3)
    moved = x.reshape(T - 1, 1, n, 3) @ Rrel.transpose(0, 1, 3, 2) \
        + trel.reshape(T - 1, P, 1, 3)                          # (T-1,P,N,3)
    u = ad._wrap(u_per_frame)[:T - 1].transpose(0, 2, 1)        # (T-1,P,N)
    pred = (u.reshape(T - 1, P, n, 1) * moved).sum(axis=1)      # (T-1,N,3)
    resid = pred - x - f
    return ad.absolute(resid).sum() / float((T - 1) * n)


def loss_part_sparsity(v: Tensor) -> Tensor:
    """Squared mean of per-part root-mean assignment mass; favors few parts."""
    v = ad._wrap(v)
    col_mean = v.mean(axis=0)            # (P,) each in (0,1)
    root = ad.sqrt(col_mean)
    return root.mean() ** 2


def loss_part_existence(beta: Tensor, v: Tensor, tau_beta: float = TAU_BETA) -> Tensor:
    """BCE pushing each part's existence probability toward an indicator of
    whether the part actually receives assignment mass (target detached)."""
    v = ad._wrap(v)
    target = (v.data.mean(axis=0) > tau_beta).astype(np.float64)
    return _bce(beta, target)


def loss_prim_sparsity(w_per_frame) -> Tensor:
    """Same root-mean penalty over the point-to-primitive masses."""
    w_sum = None
    count = 0
    for w in w_per_frame:
        w = ad._wrap(w)
        s = w.sum(axis=0)
        w_sum = s if w_sum is None else w_sum + s
        count += w.data.shape[0]
    root = ad.sqrt(w_sum * (1.0 / count))
    return root.mean() ** 2


def loss_prim_existence(alpha: Tensor, w_per_frame, tau_alpha: float) -> Tensor:
    """BCE for primitive existence against detached assignment-mass indicators."""
    mass = np.zeros(ad._wrap(alpha).data.shape[0])
    for w in w_per_frame:
        mass += _data(w).sum(axis=0)
    target = (mass > tau_alpha).astype(np.float64)
    return _bce(alpha, target)


def _bce(prob: Tensor, target: np.ndarray) -> Tensor:
    p = ad.clamp(ad._wrap(prob), _CLAMP, 1.0 - _CLAMP)
    t = np.asarray(target, dtype=np.float64)
    return -(t * ad.log(p) + (1.0 - t) * ad.log(1.0 - p)).mean()


def loss_motion(theta: Tensor) -> Tensor:
    """Sum of squared frame-to-frame changes of each part's motion amount.

    theta: (T, P) Tensor (column p is part p's per-frame amounts).
    """
    theta = ad._wrap(theta)
    d = theta[1:, :] - theta[:-1, :]
    return (d * d).sum()


def loss_match(v: Tensor) -> Tensor:
    """Mean row entropy of the primitive-to-part assignment."""
    v = ad._wrap(v)
    safe = ad.clamp(v, 1e-12, 1.0)
    ent = -(v * ad.log(safe)).sum()
    return ent / float(v.data.shape[0])


def tau_alpha_for(frames: int, points_per_frame: int) -> float:
    return TAU_ALPHA_PER_POINT * frames * points_per_frame


def combine(weights: LossWeights, terms: dict) -> tuple:
    """Weighted sum of the sub-terms; returns (total Tensor, float log dict)."""
    mapping = {
        "rec_qx": weights.rec_qx, "rec_xq": weights.rec_xq, "flow": weights.flow,
        "part_sparsity": weights.part_sparsity, "part_existence": weights.part_existence,
        "prim_sparsity": weights.prim_sparsity, "prim_existence": weights.prim_existence,
        "motion": weights.motion, "match": weights.match,
    }
    unknown = set(terms) - set(mapping)
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    total = None
    log = {}
    for name, term in terms.items():
        log[name] = float(_data(term))
        weighted = mapping[name] * ad._wrap(term)
        total = weighted if total is None else total + weighted
    log["total"] = float(_data(total))
    return total, log
