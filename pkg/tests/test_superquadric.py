"""Superquadric geometry checks: implicit/explicit consistency, sampling, meshing."""

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import artifit.superquadric as sq_mod
from artifit.autodiff import Tensor
from artifit.superquadric import (
    Superquadric, build_mesh, export_ply, icosphere, implicit_value,
    rotation_from_6d, sample_surface, to_world, uniform_directions,
)

from helpers import check_grads

rng = np.random.default_rng(7)


def make_sq(scale=(1.0, 1.0, 1.0), eps=(1.0, 1.0), **kw):
    return Superquadric.from_values(scale, eps, **kw)


@dataclass
class Rigid:
    rotation: np.ndarray
    translation: np.ndarray


def random_rotation(r):
    q = r.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def np_implicit(scale, eps, x):
    # independent inside-outside oracle, plain numpy
    u = np.abs(np.asarray(x) / np.asarray(scale))
    e1, e2 = eps
    return (u[..., 0] ** (2 / e2) + u[..., 1] ** (2 / e2)) ** (e2 / e1) + u[..., 2] ** (2 / e1)


# -- implicit ------------------------------------------------------------------


def test_unit_sphere_surface():
    sq = make_sq()
    assert implicit_value(sq, np.array([1.0, 0.0, 0.0])).item() == pytest.approx(1.0, abs=1e-12)
    assert implicit_value(sq, np.array([0.0, 0.0, 0.5])).item() == pytest.approx(0.25, abs=1e-12)


def test_pole_on_surface_for_any_shape():
    for eps in [(0.11, 0.11), (1.0, 0.3), (1.89, 1.89), (0.5, 1.3)]:
        sq = make_sq(scale=(0.7, 1.3, 2.1), eps=eps)
        f = implicit_value(sq, np.array([0.0, 0.0, 2.1])).item()
        assert f == pytest.approx(1.0, abs=1e-9), eps


def test_implicit_matches_numpy_oracle():
    for _ in range(20):
        scale = rng.uniform(0.3, 2.5, size=3)
        eps = rng.uniform(0.15, 1.85, size=2)
        x = rng.normal(size=(8, 3))
        got = implicit_value(make_sq(scale, eps), x).data
        np.testing.assert_allclose(got, np_implicit(scale, eps, x), rtol=1e-12)


def test_implicit_explicit_consistency_boxlike():
    # explicit-equation point at chosen angles must land on the F=1 level set
    e1, e2 = 0.2, 0.2
    sq = make_sq(scale=(1, 1, 1), eps=(e1, e2))
    spow = lambda c, e: np.sign(c) * np.abs(c) ** e
    for eta, omega in [(0.3, 0.7), (-0.9, 2.4), (1.1, -2.9), (0.0, 0.785)]:
        p = np.array([
            spow(np.cos(eta), e1) * spow(np.cos(omega), e2),
            spow(np.cos(eta), e1) * spow(np.sin(omega), e2),
            spow(np.sin(eta), e1),
        ])
        assert implicit_value(sq, p).item() == pytest.approx(1.0, abs=1e-9)
    # and the interior point stays interior
    assert implicit_value(sq, np.array([0.9, 0.9, 0.0])).item() == pytest.approx(
        np_implicit((1, 1, 1), (e1, e2), np.array([0.9, 0.9, 0.0])), rel=1e-12)


def test_zero_scale_rejected():
    sq = make_sq()
    sq.log_scale.data[0] = -np.inf
    with pytest.raises(ValueError):
        implicit_value(sq, np.zeros(3))


def test_constructor_validation():
    with pytest.raises(ValueError):
        Superquadric.from_values((1, 1, -1), (1, 1))
    with pytest.raises(ValueError):
        Superquadric.from_values((1, 1, 1), (0.05, 1.0))


# -- sampling ------------------------------------------------------------------


def test_sample_sphere_cardinal():
    sq = make_sq(scale=(2.0, 3.0, 4.0), eps=(1.0, 1.0))
    pts = sample_surface(sq, np.eye(3)).data
    np.testing.assert_allclose(pts, np.diag([2.0, 3.0, 4.0]), atol=1e-12)


def test_sample_pole_any_shape():
    sq = make_sq(scale=(0.5, 0.8, 1.7), eps=(0.3, 1.6))
    p = sample_surface(sq, np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])).data
    np.testing.assert_allclose(p, [[0, 0, 1.7], [0, 0, -1.7]], atol=1e-9)


def test_sampled_points_on_surface():
    sq = make_sq(scale=(1.0, 1.0, 1.0), eps=(0.5, 1.3))
    v = np.ones(3) / np.sqrt(3.0)
    p = sample_surface(sq, v[None]).data[0]
    assert np_implicit((1, 1, 1), (0.5, 1.3), p) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_property_sample_implicit_identity(seed):
    r = np.random.default_rng(seed)
    scale = r.uniform(0.3, 2.5, size=3)
    eps = r.uniform(0.12, 1.88, size=2)
    sq = make_sq(scale, eps)
    d = uniform_directions(16, r)
    pts = sample_surface(sq, d)
    f = implicit_value(sq, pts).data
    np.testing.assert_allclose(f, 1.0, atol=1e-9)


def test_sample_rejects_bad_directions():
    sq = make_sq()
    with pytest.raises(ValueError):
        sample_surface(sq, np.zeros((1, 3)))
    with pytest.raises(ValueError):
        sample_surface(sq, np.array([[1.0, 1.0, 0.0]]))


def test_sample_gradients_wrt_scale_and_shape():
    d = uniform_directions(5, rng)
    w = rng.normal(size=(5, 3))

    def f(log_scale, eps_raw):
        sq = make_sq()
        sq.log_scale, sq.eps_raw = log_scale, eps_raw
        return (sample_surface(sq, d) * w).sum()

    check_grads(f, [np.log(np.array([0.8, 1.2, 1.5])), np.array([0.4, -0.3])],
                rtol=1e-4)


def test_sample_gradient_matches_fd_relative():
    # rel err < 1e-4 on the full jacobian-vector product
    d = uniform_directions(8, rng)
    w = rng.normal(size=(8, 3))

    def f(log_scale, eps_raw):
        sq = make_sq()
        sq.log_scale, sq.eps_raw = log_scale, eps_raw
        return (sample_surface(sq, d) * w).sum()

    ana, num = check_grads(f, [np.zeros(3), np.zeros(2)], rtol=1e-4)
    for a, n in zip(ana, num):
        assert np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-12) < 1e-4


# -- meshing -------------------------------------------------------------------


def test_icosphere_counts():
    v0, f0 = icosphere(0)
    assert v0.shape == (12, 3) and f0.shape == (20, 3)
    v2, f2 = icosphere(2)
    assert v2.shape == (162, 3) and f2.shape == (320, 3)
    edges = {tuple(sorted(e)) for f in f2 for e in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]}
    assert len(v2) - len(edges) + len(f2) == 2  # Euler characteristic
    np.testing.assert_allclose(np.linalg.norm(v2, axis=1), 1.0, atol=1e-12)


def test_mesh_identity_for_sphere():
    sq = make_sq()
    verts, faces = build_mesh(sq, subdivisions=2)
    sphere_v, sphere_f = icosphere(2)
    np.testing.assert_allclose(verts, sphere_v, atol=1e-9)
    np.testing.assert_array_equal(faces, sphere_f)


def test_mesh_vertices_on_surface():
    sq = make_sq(scale=(0.6, 1.1, 2.0), eps=(0.4, 1.5))
    verts, _ = build_mesh(sq, subdivisions=2)
    f = np_implicit((0.6, 1.1, 2.0), (0.4, 1.5), verts)
    np.testing.assert_allclose(f, 1.0, atol=1e-6)


def test_mesh_negative_subdivisions():
    with pytest.raises(ValueError):
        icosphere(-1)


def test_ply_roundtrip(tmp_path):
    sq = make_sq(scale=(1.0, 2.0, 0.5), eps=(0.8, 0.8))
    verts, faces = build_mesh(sq, subdivisions=1)
    path = tmp_path / "mesh.ply"
    export_ply(path, verts, faces)
    lines = path.read_text().splitlines()
    assert lines[0] == "ply"
    nv = int([l for l in lines if l.startswith("element vertex")][0].split()[-1])
    nf = int([l for l in lines if l.startswith("element face")][0].split()[-1])
    assert (nv, nf) == (len(verts), len(faces))
    body = lines[lines.index("end_header") + 1:]
    got_v = np.array([[float(x) for x in l.split()] for l in body[:nv]])
    np.testing.assert_allclose(got_v, verts, atol=1e-6)
    got_f = np.array([[int(x) for x in l.split()[1:]] for l in body[nv:nv + nf]])
    np.testing.assert_array_equal(got_f, faces)


# -- pose / world mapping --------------------------------------------------------


def test_rotation_from_6d_proper():
    for _ in range(25):
        r6 = rng.normal(size=6)
        R = rotation_from_6d(Tensor(r6)).data
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


def test_rotation_from_6d_identity():
    R = rotation_from_6d(Tensor(np.array([1.0, 0, 0, 0, 1.0, 0]))).data
    np.testing.assert_allclose(R, np.eye(3), atol=1e-12)


def test_to_world_identity_and_shift():
    sq = make_sq()
    pts = rng.normal(size=(6, 3))
    ident = Rigid(np.eye(3), np.zeros(3))
    np.testing.assert_allclose(to_world(sq, pts, ident).data, pts, atol=1e-12)
    d = np.array([1.0, -2.0, 3.0])
    shifted = to_world(sq, pts, Rigid(np.eye(3), d)).data
    np.testing.assert_allclose(shifted, pts + d, atol=1e-12)


def test_to_world_rigid_chain_isometry():
    r = np.random.default_rng(3)
    sq = Superquadric.from_values((1, 1, 1), (1, 1),
                                  translation=r.normal(size=3),
                                  rotation6d=r.normal(size=6))
    pts = r.normal(size=(10, 3))
    ref = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
    out = pts
    for _ in range(4):
        T = Rigid(random_rotation(r), r.normal(size=3))
        out = to_world(sq, out, T).data
    got = np.linalg.norm(out[:, None] - out[None, :], axis=-1)
    np.testing.assert_allclose(got, ref, atol=1e-10)


def test_to_world_rejects_nonrigid():
    sq = make_sq()
    with pytest.raises(ValueError):
        to_world(sq, np.zeros((1, 3)), Rigid(np.eye(3) * 2.0, np.zeros(3)))


def test_eps_stays_in_bounds_under_optimizer():
    from artifit.autodiff import Adam
    sq = make_sq(eps=(0.2, 0.2))
    for p in sq.parameters():
        p.requires_grad = True
    opt = Adam(sq.parameters(), lr=0.5)
    for _ in range(50):
        opt.zero_grad()
        loss = (sq.eps ** 2).sum() - sq.eps.sum() * 4.0  # pushes toward high end
        loss.backward()
        opt.step()
    e = sq.eps.data
    assert np.all(e >= sq_mod.EPS_LO) and np.all(e <= sq_mod.EPS_HI)
