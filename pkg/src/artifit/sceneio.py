"""On-disk interchange formats: binary point-cloud frames plus a JSON
manifest for scenes, a JSON schema for fit results, PLY helpers for external
data, and provenance records.

A scene directory holds `manifest.json` and one `frame_%04d.bin` per frame.
Frame files are little-endian: magic "AIPS", u32 version, u32 point count,
then per point 3xf32 position, 3xf32 flow, u16 label, u16 pad, then the
4x4 world-to-camera matrix as 16xf32 row-major and 4xf32 (fx, fy, cx, cy).
All writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .kinematics import RigidTransform
from .render import Camera
from .synth import GtJoint, SceneSequence

MAGIC = b"AIPS"
VERSION = 1

_HEADER_DT = np.dtype([("magic", "S4"), ("version", "<u4"), ("count", "<u4")])
_POINT_DT = np.dtype([("pos", "<f4", (3,)), ("flow", "<f4", (3,)),
                      ("label", "<u2"), ("pad", "<u2")])
_TAIL_DT = np.dtype([("w2c", "<f4", (16,)), ("intr", "<f4", (4,))])


class FormatError(ValueError):
    """Malformed or mismatched on-disk data."""


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    # sorted keys keep identical payloads byte-identical across runs
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True)
                              + "\n").encode())


def _json_ready(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _json_ready(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_ready(v) for v in x]
    return x


# -- scene directories ---------------------------------------------------------------


def frame_bytes(cloud, flow, labels, camera: Camera) -> bytes:
    cloud = np.asarray(cloud, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    labels = np.asarray(labels)
    n = cloud.shape[0]
    if cloud.shape != (n, 3) or flow.shape != (n, 3) or labels.shape != (n,):
        raise ValueError("cloud, flow, and labels must agree on point count")
    if labels.min() < 0 or labels.max() > np.iinfo(np.uint16).max:
        raise ValueError("labels must fit in u16")
    head = np.zeros(1, dtype=_HEADER_DT)
    head["magic"] = MAGIC
    head["version"] = VERSION
    head["count"] = n
    pts = np.zeros(n, dtype=_POINT_DT)
    pts["pos"] = cloud.astype("<f4")
    pts["flow"] = flow.astype("<f4")
    pts["label"] = labels.astype("<u2")
    tail = np.zeros(1, dtype=_TAIL_DT)
    tail["w2c"] = camera.pose.matrix().astype("<f4").reshape(16)
    tail["intr"] = np.array([camera.fx, camera.fy, camera.cx, camera.cy],
                            dtype="<f4")
    return head.tobytes() + pts.tobytes() + tail.tobytes()


def parse_frame(data: bytes, width: int, height: int):
    """Inverse of frame_bytes; returns (cloud, flow, labels, Camera)."""
    if len(data) < _HEADER_DT.itemsize:
        raise FormatError("frame file truncated before header")
    head = np.frombuffer(data, dtype=_HEADER_DT, count=1)[0]
    if head["magic"].tobytes() != MAGIC:
        raise FormatError(f"bad magic {head['magic'].tobytes()!r}")
    if head["version"] != VERSION:
        raise FormatError(f"unsupported version {int(head['version'])}")
    n = int(head["count"])
    want = _HEADER_DT.itemsize + n * _POINT_DT.itemsize + _TAIL_DT.itemsize
    if len(data) != want:
        raise FormatError(f"frame file is {len(data)} bytes, expected {want}")
    pts = np.frombuffer(data, dtype=_POINT_DT, count=n,
                        offset=_HEADER_DT.itemsize)
    tail = np.frombuffer(data, dtype=_TAIL_DT, count=1,
                         offset=_HEADER_DT.itemsize + n * _POINT_DT.itemsize)[0]
    M = tail["w2c"].astype(np.float64).reshape(4, 4)
    fx, fy, cx, cy = (float(v) for v in tail["intr"])
    cam = Camera(RigidTransform(M[:3, :3], M[:3, 3]), fx, fy, cx, cy,
                 width, height)
    pos = pts["pos"].astype(np.float64)
    flow = pts["flow"].astype(np.float64)
    if not (np.isfinite(pos).all() and np.isfinite(flow).all()):
        raise FormatError("frame contains non-finite coordinates")
    return pos, flow, pts["label"].astype(np.int64), cam


def _frame_name(t: int) -> str:
    return f"frame_{t:04d}.bin"


def save_scene(scene: SceneSequence, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cam0 = scene.cameras[0]
    manifest = {
        "format": "AIPS",
        "version": VERSION,
        "name": scene.name,
        "frames": scene.frames,
        "points": scene.points_per_frame,
        "units": "meters",
        "seed": scene.seed,
        # f32-quantized like the frame binaries, so save(load(d)) == d
        "intrinsics": {"width": cam0.width, "height": cam0.height,
                       "fx": float(np.float32(cam0.fx)),
                       "fy": float(np.float32(cam0.fy)),
                       "cx": float(np.float32(cam0.cx)),
                       "cy": float(np.float32(cam0.cy))},
        "joints": [{"part_label": int(j.part_label), "type": j.joint_type,
                    "axis": _json_ready(j.axis), "pivot": _json_ready(j.pivot),
                    "theta": _json_ready(j.theta)} for j in scene.joints],
        "meta": _json_ready(scene.meta),
    }
    write_json(out_dir / "manifest.json", manifest)
    for t in range(scene.frames):
        atomic_write_bytes(out_dir / _frame_name(t),
                           frame_bytes(scene.clouds[t], scene.flows[t],
                                       scene.labels[t], scene.cameras[t]))
    return out_dir


def load_scene(scene_dir) -> SceneSequence:
    scene_dir = Path(scene_dir)
    mpath = scene_dir / "manifest.json"
    if not mpath.is_file():
        raise FormatError(f"{scene_dir} has no manifest.json")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest.json is not valid JSON: {e}") from e
    for key in ("frames", "points", "intrinsics", "joints"):
        if key not in manifest:
            raise FormatError(f"manifest.json missing {key!r}")
    width = int(manifest["intrinsics"]["width"])
    height = int(manifest["intrinsics"]["height"])
    clouds, flows, labels, cams = [], [], [], []
    for t in range(int(manifest["frames"])):
        fpath = scene_dir / _frame_name(t)
        if not fpath.is_file():
            raise FormatError(f"missing {fpath.name}")
        cloud, flow, lab, cam = parse_frame(fpath.read_bytes(), width, height)
        if cloud.shape[0] != int(manifest["points"]):
            raise FormatError(f"{fpath.name}: point count "
                              f"{cloud.shape[0]} != manifest "
                              f"{manifest['points']}")
        clouds.append(cloud)
        flows.append(flow)
        labels.append(lab)
        cams.append(cam)
    joints = [GtJoint(part_label=int(j["part_label"]), joint_type=j["type"],
                      axis=np.asarray(j["axis"], dtype=np.float64),
                      pivot=(None if j["pivot"] is None
                             else np.asarray(j["pivot"], dtype=np.float64)),
                      theta=np.asarray(j["theta"], dtype=np.float64))
              for j in manifest["joints"]]
    return SceneSequence(name=manifest.get("name", scene_dir.name),
                         clouds=clouds, flows=flows, labels=labels,
                         cameras=cams, joints=joints,
                         seed=int(manifest.get("seed", 0)),
                         meta=manifest.get("meta", {}))


# -- fit results ---------------------------------------------------------------------


def result_to_dict(result, config_dict: dict, labels_uri: str) -> dict:
    return {
        "parts": [{"type": p.joint_type,
                   "axis": _json_ready(p.axis),
                   "pivot": _json_ready(p.pivot),
                   "theta": _json_ready(p.theta),
                   "static": bool(p.is_static)} for p in result.parts],
        "primitives": [{"scale": _json_ready(q.scale),
                        "eps": _json_ready(q.eps),
                        "rotation6d": _json_ready(q.rotation6d),
                        "translation": _json_ready(q.translation),
                        "alpha": float(q.alpha),
                        "part_id": int(q.part_id)} for q in result.primitives],
        "labels_uri": labels_uri,
        "final_loss": float(result.final_loss),
        "seed": int(result.seed),
        "config": _json_ready(config_dict),
    }


def save_result(result, config_dict: dict, out_path) -> Path:
    """Result JSON next to an .npy holding the (T, N) per-point labels."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    labels_uri = out_path.stem + "_labels.npy"
    buf = _NpyBytes()
    np.save(buf, np.stack(result.labels).astype(np.int32))
    atomic_write_bytes(out_path.parent / labels_uri, buf.getvalue())
    write_json(out_path, result_to_dict(result, config_dict, labels_uri))
    return out_path


class _NpyBytes:
    """Tiny write-only buffer so np.save can feed atomic_write_bytes."""

    def __init__(self):
        self._chunks = []

    def write(self, b):
        self._chunks.append(bytes(b))
        return len(b)

    def getvalue(self) -> bytes:
        return b"".join(self._chunks)


def load_result(path):
    """Returns (result dict, labels array or None)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path.name} is not valid JSON: {e}") from e
    for key in ("parts", "primitives", "labels_uri", "final_loss", "seed"):
        if key not in doc:
            raise FormatError(f"{path.name} missing {key!r}")
    labels = None
    if doc["labels_uri"]:
        lpath = path.parent / doc["labels_uri"]
        if lpath.is_file():
            labels = np.load(lpath)
    return doc, labels


# -- PLY helpers ---------------------------------------------------------------------


def read_ply_xyz(path) -> np.ndarray:
    """x/y/z vertex positions from an ascii or binary little-endian PLY.

    Deliberately minimal: only the vertex element is read, extra properties
    are skipped, big-endian files are rejected.
    """
    path = Path(path)
    raw = path.read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise FormatError(f"{path.name}: not a PLY file")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]

    fmt = None
    count = 0
    props = []          # (name, dtype) of the vertex element
    in_vertex = False
    type_map = {"float": "<f4", "float32": "<f4", "double": "<f8",
                "float64": "<f8", "uchar": "u1", "uint8": "u1",
                "char": "i1", "int8": "i1", "short": "<i2", "ushort": "<u2",
                "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4"}
    for line in header[1:]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise FormatError(f"{path.name}: list property in vertex element")
            if tok[1] not in type_map:
                raise FormatError(f"{path.name}: unsupported type {tok[1]!r}")
            props.append((tok[2], type_map[tok[1]]))
    names = [n for n, _ in props]
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path.name}: unsupported format {fmt!r}")
    if count == 0 or not {"x", "y", "z"} <= set(names):
        raise FormatError(f"{path.name}: no vertex x/y/z data")

    if fmt == "ascii":
        rows = np.loadtxt([l for l in body.decode("ascii").splitlines()
                           if l.strip()][:count], ndmin=2)
        if rows.shape != (count, len(props)):
            raise FormatError(f"{path.name}: vertex rows malformed")
        data = {n: rows[:, i] for i, (n, _) in enumerate(props)}
    else:
        dt = np.dtype([(n, t) for n, t in props])
        if len(body) < count * dt.itemsize:
            raise FormatError(f"{path.name}: vertex data truncated")
        arr = np.frombuffer(body, dtype=dt, count=count)
        data = {n: arr[n] for n in names}
    return np.stack([np.asarray(data[k], dtype=np.float64)
                     for k in ("x", "y", "z")], axis=1)


def write_ply_mesh(path, vertices, faces):
    """ascii PLY triangle mesh, for eyeballing exports in a viewer."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    lines = ["ply", "format ascii 1.0",
             f"element vertex {len(vertices)}",
             "property float x", "property float y", "property float z",
             f"element face {len(faces)}",
             "property list uchar int vertex_indices", "end_header"]
    lines += [f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f}" for v in vertices]
    lines += [f"3 {f[0]} {f[1]} {f[2]}" for f in faces]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def convert_external(cloud_paths, poses_path, out_dir, flow_paths=None,
                     name: str = "external", seed: int = 0) -> Path:
    """Per-frame PLY clouds plus a poses JSON into a scene directory.

    The poses JSON holds {"width", "height", "frames": [{"world_to_camera":
    [16 row-major], "fx", "fy", "cx", "cy"}, ...]}. Flow PLYs are optional
    and hold per-point flow vectors in x/y/z, aligned with the cloud order;
    without them flows are zero. Labels are all zero (unknown segmentation).
    """
    cloud_paths = [Path(p) for p in cloud_paths]
    if len(cloud_paths) < 2:
        raise FormatError("need at least two frames")
    try:
        poses = json.loads(Path(poses_path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"poses file is not valid JSON: {e}") from e
    frames = poses.get("frames")
    if not isinstance(frames, list) or len(frames) != len(cloud_paths):
        raise FormatError("poses JSON must list one entry per cloud")
    if flow_paths is not None and len(flow_paths) != len(cloud_paths):
        raise FormatError("need one flow file per cloud")

    width = int(poses.get("width", 256))
    height = int(poses.get("height", 256))
    clouds, flows, labels, cams = [], [], [], []
    for t, cp in enumerate(cloud_paths):
        cloud = read_ply_xyz(cp)
        if t > 0 and cloud.shape[0] != clouds[0].shape[0]:
            raise FormatError("all frames must have the same point count")
        entry = frames[t]
        M = np.asarray(entry["world_to_camera"], dtype=np.float64).reshape(4, 4)
        cam = Camera(RigidTransform(M[:3, :3], M[:3, 3]),
                     float(entry["fx"]), float(entry["fy"]),
                     float(entry["cx"]), float(entry["cy"]), width, height)
        if flow_paths is not None and t < len(cloud_paths) - 1:
            flow = read_ply_xyz(flow_paths[t])
            if flow.shape != cloud.shape:
                raise FormatError(f"flow frame {t} shape mismatch")
        else:
            flow = np.zeros_like(cloud)
        clouds.append(cloud)
        flows.append(flow)
        labels.append(np.zeros(cloud.shape[0], dtype=np.int64))
        cams.append(cam)
    scene = SceneSequence(name=name, clouds=clouds, flows=flows,
                          labels=labels, cameras=cams, joints=[], seed=seed,
                          meta={"source": "external"})
    return save_scene(scene, out_dir)


# -- provenance ----------------------------------------------------------------------


def config_hash(config_dict: dict) -> str:
    blob = json.dumps(_json_ready(config_dict), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def write_run_record(out_dir, command: str, args: dict, config_dict=None):
    import numba
    import scipy

    from . import __version__
    args = {k: v for k, v in args.items()
            if not callable(v) and not k.startswith("_")}
    record = {
        "command": command,
        "args": _json_ready(args),
        "config_hash": config_hash(config_dict or {}),
        "versions": {"python": sys.version.split()[0],
                     "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "numba": numba.__version__,
                     "artifit": __version__},
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "run.json", record)
    return record
