"""Command-line surface tying the pieces together.

Subcommands: `generate` renders a synthetic scene to a directory, `fit` runs
the multi-seed optimization on a scene directory, `eval` scores a fit against
the scene's ground truth, `report` aggregates metric CSVs into a mean/std
table, and `convert` ingests externally produced PLY sequences.

Exit codes: 0 on success, 2 on malformed inputs, 3 when every seed of a fit
diverged.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import metrics, sceneio
from .kinematics import PRISMATIC, REVOLUTE, PartState, exp_twist, twist_of
from .pipeline import FitConfig, extract, fit_seed
from .superquadric import Superquadric, build_mesh
from .synth import (STATIC, ArticulatedSpec, PartSpec, Trajectory,
                    builtin_scenes, generate)

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_DIVERGED = 3


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_BAD_INPUT


# -- generate ------------------------------------------------------------------------


def _spec_from_file(path: Path) -> ArticulatedSpec:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise sceneio.FormatError(f"spec file is not valid JSON: {e}") from e
    if "parts" not in doc:
        raise sceneio.FormatError("spec file needs a 'parts' list")
    parts = []
    for i, p in enumerate(doc["parts"]):
        try:
            parts.append(PartSpec(
                name=p.get("name", f"part{i}"),
                half_extents=tuple(p["half_extents"]),
                center=tuple(p.get("center", (0.0, 0.0, 0.0))),
                joint_type=p.get("joint_type", STATIC),
                axis=tuple(p.get("axis", (0.0, 0.0, 1.0))),
                pivot=tuple(p.get("pivot", (0.0, 0.0, 0.0))),
                profile=p.get("profile", "smoothstep"),
                amount=float(p.get("amount", 0.0)),
                shape_eps=tuple(p.get("shape_eps", (0.15, 0.15))),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise sceneio.FormatError(f"part {i}: {e}") from e
    return ArticulatedSpec(doc.get("name", path.stem), parts,
                           scale=float(doc.get("scale", 1.0)))


def _resolve_spec(token: str) -> ArticulatedSpec:
    zoo = builtin_scenes()
    if token in zoo:
        return zoo[token]
    path = Path(token)
    if path.is_file():
        return _spec_from_file(path)
    raise sceneio.FormatError(
        f"unknown scene {token!r}; builtins: {', '.join(sorted(zoo))}")


def _trajectory_for(spec: ArticulatedSpec, args) -> Trajectory:
    kw = {}
    for name in ("theta_start", "theta_end", "r", "h0", "dh", "mode"):
        val = getattr(args, name)
        if val is not None:
            kw[name] = val
    return Trajectory.around(spec, kind=args.trajectory, **kw)


def cmd_generate(args) -> int:
    spec = _resolve_spec(args.scene)
    traj = _trajectory_for(spec, args)
    scene = generate(spec, traj, frames=args.frames, points=args.points,
                     seed=args.seed, resolution=args.resolution)
    out = sceneio.save_scene(scene, args.out)
    sceneio.write_run_record(out, "generate", vars(args))
    print(f"wrote {scene.frames} frames x {scene.points_per_frame} points "
          f"to {out}")
    return EXIT_OK


# -- fit -----------------------------------------------------------------------------


def _config_from_args(args) -> FitConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise sceneio.FormatError(f"config file is not valid JSON: {e}") from e
        base.pop("weights", None)    # loss weights are part of the method
    if args.full_scale:
        base = {**FitConfig.full_scale().as_dict(), **base}
        base.pop("weights", None)
    for flag, key in (("steps", "steps"), ("seeds", "seeds"), ("lr", "lr"),
                      ("num_primitives", "num_primitives"),
                      ("num_parts", "num_parts"),
                      ("fit_resolution", "resolution"),
                      ("samples", "samples_per_primitive")):
        val = getattr(args, flag)
        if val is not None:
            base[key] = val
    try:
        return FitConfig(**base)
    except (TypeError, ValueError) as e:
        raise sceneio.FormatError(f"bad fit configuration: {e}") from e


def _fit_one_seed(payload):
    scene_dir, config_dict, seed = payload
    scene = sceneio.load_scene(scene_dir)
    config = FitConfig(**{**config_dict, "weights": FitConfig().weights})
    state = fit_seed(scene, config, seed)
    result = extract(state, scene, config)
    return seed, state.final_loss, state.error, state.trace, result


def _write_loss_csv(path, trace):
    buf = io.StringIO()
    writer = None
    for step, row in enumerate(trace):
        if writer is None:
            writer = csv.DictWriter(buf, fieldnames=["step"] + list(row))
            writer.writeheader()
        writer.writerow({"step": step, **row})
    sceneio.atomic_write_bytes(path, buf.getvalue().encode())


def cmd_fit(args) -> int:
    config = _config_from_args(args)
    scene = sceneio.load_scene(args.scene_dir)
    if scene.frames != config.frames:
        config = FitConfig(**{**config.as_dict(), "frames": scene.frames,
                              "weights": config.weights})
    if scene.points_per_frame != config.points:
        config = FitConfig(**{**config.as_dict(),
                              "points": scene.points_per_frame,
                              "weights": config.weights})
    out_path = Path(args.out)
    out_dir = out_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)

    config_dict = config.as_dict()
    config_for_worker = dict(config_dict)
    config_for_worker.pop("weights")
    payloads = [(str(args.scene_dir), config_for_worker, s)
                for s in range(config.seeds)]
    workers = args.workers or min(config.seeds, _cpu_count())
    if workers > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(workers) as pool:
            outcomes = pool.map(_fit_one_seed, payloads)
    else:
        outcomes = [_fit_one_seed(p) for p in payloads]

    best = None
    for seed, loss, err, trace, result in outcomes:
        _write_loss_csv(out_dir / f"loss_seed{seed}.csv", trace)
        status = err or f"final loss {loss:.6f}"
        print(f"seed {seed}: {status}")
        if math.isfinite(loss) and not err:
            if best is None or (loss, seed) < (best[1], best[0]):
                best = (seed, loss, result)
    sceneio.write_run_record(out_dir, "fit", vars(args), config_dict)
    if best is None:
        print("error: optimization diverged on every seed", file=sys.stderr)
        return EXIT_DIVERGED

    seed, loss, result = best
    sceneio.save_result(result, config_dict, out_path)
    if args.export_ply:
        _export_primitive_ply(result, scene.frames, Path(args.export_ply))
    print(f"best seed {seed} (loss {loss:.6f}) -> {out_path}")
    return EXIT_OK


def _cpu_count() -> int:
    import os
    return os.cpu_count() or 1


def _part_transform(part, t: int):
    """Detached (R, t) of an extracted part report at frame t."""
    theta = float(part.theta[t])
    if part.joint_type == REVOLUTE:
        state = PartState.new(REVOLUTE, 2, omega=part.axis,
                              q_point=part.pivot if part.pivot is not None
                              else (0.0, 0.0, 0.0))
    else:
        state = PartState.new(PRISMATIC, 2, v_dir=part.axis)
    tf = exp_twist(twist_of(state), theta)
    return tf._R().data, tf._t().data


def _export_primitive_ply(result, frames: int, out_dir: Path):
    """One ascii PLY per frame with every kept primitive posed by its part."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rests = []
    for q in result.primitives:
        sq = Superquadric.from_values(q.scale, q.eps, q.translation,
                                      q.rotation6d)
        verts, faces = build_mesh(sq, subdivisions=2)
        rests.append((verts.data, faces, q.part_id))
    for t in range(frames):
        tfs = [_part_transform(p, t) for p in result.parts]
        all_v, all_f, base = [], [], 0
        for verts, faces, part_id in rests:
            if part_id >= 0:
                R, tr = tfs[part_id]
                verts = verts @ R.T + tr
            all_v.append(verts)
            all_f.append(faces + base)
            base += len(verts)
        sceneio.write_ply_mesh(out_dir / f"primitives_{t:04d}.ply",
                               np.concatenate(all_v), np.concatenate(all_f))


# -- eval ----------------------------------------------------------------------------


_CSV_FIELDS = ["scene", "seed", "final_loss", "miou", "type_accuracy",
               "num_pred_parts", "num_pred_dynamic", "num_spurious_dynamic",
               "axis_error_deg", "pivot_error_cm",
               "state_error_rev_deg", "state_error_pri_cm"]


def _metric_row(scene_name: str, doc: dict, rep: dict) -> dict:
    """One CSV row; per-joint errors averaged over matched dynamic parts."""
    def mean_of(key, types=None):
        vals = [r[key] for r in rep["joints"]
                if r[key] is not None and (types is None or r["gt_type"] in types)]
        return float(np.mean(vals)) if vals else ""

    return {
        "scene": scene_name,
        "seed": doc["seed"],
        "final_loss": doc["final_loss"],
        "miou": rep["miou"],
        "type_accuracy": "" if rep["type_accuracy"] is None
        else rep["type_accuracy"],
        "num_pred_parts": rep["num_pred_parts"],
        "num_pred_dynamic": rep["num_pred_dynamic"],
        "num_spurious_dynamic": len(rep["spurious_dynamic"]),
        "axis_error_deg": mean_of("axis_error_deg"),
        "pivot_error_cm": mean_of("pivot_error_cm"),
        "state_error_rev_deg": mean_of("state_error", {REVOLUTE}),
        "state_error_pri_cm": mean_of("state_error", {PRISMATIC}),
    }


def _result_from_doc(doc: dict, labels):
    from .pipeline import FitResult, PartReport, PrimitiveReport
    parts = [PartReport(joint_type=p["type"],
                        axis=np.asarray(p["axis"], dtype=np.float64),
                        pivot=(None if p["pivot"] is None
                               else np.asarray(p["pivot"], dtype=np.float64)),
                        theta=np.asarray(p["theta"], dtype=np.float64),
                        is_static=bool(p["static"])) for p in doc["parts"]]
    prims = [PrimitiveReport(scale=np.asarray(q["scale"]),
                             eps=np.asarray(q["eps"]),
                             rotation6d=np.asarray(q["rotation6d"]),
                             translation=np.asarray(q["translation"]),
                             alpha=float(q["alpha"]),
                             part_id=int(q["part_id"]))
             for q in doc["primitives"]]
    if labels is None:
        raise sceneio.FormatError("result has no readable labels file")
    return FitResult(parts=parts, primitives=prims,
                     labels=[labels[t] for t in range(labels.shape[0])],
                     final_loss=float(doc["final_loss"]),
                     seed=int(doc["seed"]))


def cmd_eval(args) -> int:
    doc, labels = sceneio.load_result(Path(args.result))
    scene = sceneio.load_scene(args.scene_dir)
    result = _result_from_doc(doc, labels)
    if len(result.labels) != scene.frames:
        raise sceneio.FormatError("result and scene disagree on frame count")
    rep = metrics.evaluate(result, scene,
                           include_static=not args.exclude_static)
    out_json = Path(args.out) if args.out else Path(args.result).with_name(
        "metrics.json")
    sceneio.write_json(out_json, sceneio._json_ready(rep))
    row = _metric_row(scene.name, doc, rep)
    out_csv = Path(args.csv) if args.csv else out_json.with_suffix(".csv")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_CSV_FIELDS)
    writer.writeheader()
    writer.writerow(row)
    sceneio.atomic_write_bytes(out_csv, buf.getvalue().encode())
    sceneio.write_run_record(out_json.parent, "eval", vars(args))
    shown = {k: row[k] for k in ("miou", "type_accuracy", "axis_error_deg",
                                 "pivot_error_cm", "state_error_rev_deg",
                                 "state_error_pri_cm") if row[k] != ""}
    print(f"{scene.name}: " + "  ".join(f"{k}={v:.4g}" if isinstance(v, float)
                                        else f"{k}={v}"
                                        for k, v in shown.items()))
    return EXIT_OK


# -- report --------------------------------------------------------------------------


def aggregate_rows(rows: list) -> dict:
    """Mean and population std per numeric metric column."""
    out = {}
    for key in _CSV_FIELDS:
        if key in ("scene", "seed"):
            continue
        vals = []
        for r in rows:
            v = r.get(key, "")
            if v not in ("", None):
                vals.append(float(v))
        if vals:
            arr = np.asarray(vals)
            out[key] = (float(arr.mean()), float(arr.std()))
    return out


def cmd_report(args) -> int:
    rows = []
    for path in args.csvs:
        path = Path(path)
        if not path.is_file():
            raise sceneio.FormatError(f"no such metrics CSV: {path}")
        with path.open(newline="") as f:
            rows.extend(csv.DictReader(f))
    if not rows:
        raise sceneio.FormatError("metrics CSVs contain no rows")
    agg = aggregate_rows(rows)
    width = max(len(k) for k in agg)
    lines = [f"{len(rows)} scene(s)"]
    lines += [f"{k.ljust(width)}  {m:9.4f} +/- {s:.4f}"
              for k, (m, s) in agg.items()]
    text = "\n".join(lines)
    print(text)
    if args.out:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["metric", "mean", "std"])
        for k, (m, s) in agg.items():
            writer.writerow([k, m, s])
        sceneio.atomic_write_bytes(Path(args.out), buf.getvalue().encode())
    return EXIT_OK


# -- convert -------------------------------------------------------------------------


def cmd_convert(args) -> int:
    out = sceneio.convert_external(args.clouds, args.poses, args.out,
                                   flow_paths=args.flows, name=args.name,
                                   seed=args.seed)
    sceneio.write_run_record(out, "convert", vars(args))
    print(f"wrote scene directory {out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="artifit",
        description="Discover articulated parts and joints in point-cloud "
                    "sequences by fitting moving superquadric primitives.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic scene directory")
    g.add_argument("scene", help="builtin scene name or spec JSON file")
    g.add_argument("--out", required=True)
    g.add_argument("--frames", "-T", type=int, default=12)
    g.add_argument("--points", "-N", type=int, default=1024)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--resolution", type=int, default=256)
    g.add_argument("--trajectory", choices=("circular", "pingpong"),
                   default="circular")
    for name in ("theta_start", "theta_end", "r", "h0", "dh"):
        g.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float,
                       default=None)
    g.add_argument("--mode", choices=("smooth", "constant"), default=None,
                   help="ping-pong easing")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="optimize primitives and joints on a scene")
    f.add_argument("scene_dir")
    f.add_argument("--out", required=True, help="output FitResult JSON path")
    f.add_argument("--config", help="FitConfig JSON file")
    f.add_argument("--full-scale", action="store_true",
                   help="start from the heavyweight configuration")
    f.add_argument("--steps", type=int, default=None)
    f.add_argument("--seeds", type=int, default=None)
    f.add_argument("--lr", type=float, default=None)
    f.add_argument("--num-primitives", type=int, default=None)
    f.add_argument("--num-parts", type=int, default=None)
    f.add_argument("--fit-resolution", type=int, default=None)
    f.add_argument("--samples", type=int, default=None,
                   help="surface samples per primitive")
    f.add_argument("--workers", type=int, default=None,
                   help="parallel seed processes (default: one per core)")
    f.add_argument("--export-ply", default=None, metavar="DIR",
                   help="write posed primitive meshes per frame")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="score a fit against scene ground truth")
    e.add_argument("result", help="FitResult JSON")
    e.add_argument("scene_dir")
    e.add_argument("--out", help="metrics JSON path")
    e.add_argument("--csv", help="metrics CSV path")
    e.add_argument("--exclude-static", action="store_true",
                   help="score dynamic ground-truth parts only")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="aggregate metric CSVs (mean +/- std)")
    r.add_argument("csvs", nargs="+")
    r.add_argument("--out", help="write the aggregate as CSV")
    r.set_defaults(func=cmd_report)

    c = sub.add_parser("convert", help="ingest PLY clouds + poses JSON")
    c.add_argument("--clouds", nargs="+", required=True)
    c.add_argument("--poses", required=True)
    c.add_argument("--flows", nargs="+", default=None)
    c.add_argument("--name", default="external")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("out", help="output scene directory")
    c.set_defaults(func=cmd_convert)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except sceneio.FormatError as e:
        return _fail(str(e))
    except FileNotFoundError as e:
        return _fail(f"{e.filename or e}: not found")


if __name__ == "__main__":
    sys.exit(main())
