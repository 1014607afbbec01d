"""Command-line entry point for synthetic data, registration and evaluation.

Four subcommands wire the library into reproducible runs:

    synth      build sphere or ellipsoid meshes, optionally truncated
    register   align a source mesh onto a target mesh
    evaluate   score landmark files, optionally transporting them first
    deform     push points or a voxel grid through a saved map

Every run writes a manifest recording the command line, tool version,
config hash and input hashes.  Exit codes: 0 success, 1 numerical
failure, 2 usage or input error.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .deformation import (
    DeformationKernel,
    DivergenceError,
    ShootingState,
    grid_nodes,
    shoot,
    write_displacement_field,
)
from .evaluation import (
    LandmarkSet,
    emit_report,
    landmark_metric,
    load_landmarks_csv,
    save_landmarks_csv,
    surface_metric,
    transport_landmarks,
    transport_points,
)
from .geometry import (
    EmptyTruncationError,
    MeshIOError,
    RigidTransform,
    face_elements,
    inconsistent_face_pairs,
    load_mesh,
    save_mesh,
    synth_ellipsoid,
    synth_sphere,
    truncate_by_cylinder,
)
from .registration import (
    PIPELINE_METHODS,
    RegistrationConfig,
    pipeline,
)
from .lbfgs import LbfgsOptions

E_NUMERICAL = 1
E_USAGE = 2


class UsageError(Exception):
    pass


def _vector(text, n, name):
    parts = [p for p in text.split(",") if p.strip() != ""]
    if len(parts) != n:
        raise UsageError(f"{name} needs {n} comma-separated values, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise UsageError(f"{name}: {exc}") from exc


def _sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir, args, config=None, inputs=(), outputs=()):
    doc = {
        "tool": "varimatch",
        "version": __version__,
        "argv": list(args),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config_sha256": None,
        "inputs": [
            {"path": str(p), "sha256": _sha256_file(p)} for p in inputs
        ],
        "outputs": [str(p) for p in outputs],
    }
    if config is not None:
        canon = json.dumps(config.to_dict(), sort_keys=True)
        doc["config_sha256"] = hashlib.sha256(canon.encode()).hexdigest()
    _write_json(f"{out_dir}/manifest.json", doc)


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="varimatch",
        description="Partial shape registration with oriented varifolds.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic meshes")
    p.add_argument("--shape", choices=("sphere", "ellipsoid"), default="sphere")
    p.add_argument("--radius", type=float, default=10.0)
    p.add_argument("--semi-axes", default=None, help="a,b,c for ellipsoids")
    p.add_argument("--subdivisions", type=int, default=2)
    p.add_argument("--truncate-radius", type=float, default=None)
    p.add_argument("--truncate-axis", default="0,0,1")
    p.add_argument("--truncate-point", default="0,0,0")
    p.add_argument("--poi-count", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("register", help="register a source mesh onto a target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--method", default="translation+lddmm")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--sigma-w", default=None, help="comma-separated scale schedule")
    p.add_argument("--sigma0", type=float, default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--regularizer", choices=("none", "global", "local"), default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--check-orientation", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score landmark agreement")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--map", default=None, help="transport landmarks first")
    p.add_argument("--deformed-mesh", default=None)
    p.add_argument("--target-mesh", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("deform", help="push points or a grid through a map")
    p.add_argument("--map", required=True)
    p.add_argument("--points", default=None, help="landmark CSV to transport")
    p.add_argument("--grid-origin", default=None)
    p.add_argument("--grid-spacing", default=None)
    p.add_argument("--grid-shape", default=None)
    p.add_argument("--out", required=True)
    return parser


def _cmd_synth(args, argv):
    out = _ensure_dir(args.out)
    if args.shape == "ellipsoid":
        if args.semi_axes is None:
            raise UsageError("--semi-axes is required for ellipsoids")
        target = synth_ellipsoid(_vector(args.semi_axes, 3, "--semi-axes"),
                                 args.subdivisions)
    else:
        target = synth_sphere(args.radius, args.subdivisions)
    written = []
    save_mesh(target, f"{out}/target.off")
    written.append(f"{out}/target.off")
    source = target
    if args.truncate_radius is not None:
        try:
            source = truncate_by_cylinder(
                target,
                _vector(args.truncate_point, 3, "--truncate-point"),
                _vector(args.truncate_axis, 3, "--truncate-axis"),
                args.truncate_radius,
            )
        except EmptyTruncationError as exc:
            raise UsageError(str(exc)) from exc
    save_mesh(source, f"{out}/source.off")
    written.append(f"{out}/source.off")
    if args.poi_count > 0:
        n = len(target.vertices)
        if args.poi_count > n:
            raise UsageError(f"--poi-count exceeds the {n} available vertices")
        idx = np.unique(np.round(np.linspace(0, n - 1, args.poi_count)).astype(int))
        lm = LandmarkSet(
            [f"poi_{i:04d}" for i in range(len(idx))], target.vertices[idx]
        )
        save_landmarks_csv(f"{out}/pois.csv", lm)
        written.append(f"{out}/pois.csv")
    _write_manifest(out, argv, outputs=written)
    return 0


def _load_config(args):
    data = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    if args.sigma_w is not None:
        vals = [p for p in args.sigma_w.split(",") if p.strip() != ""]
        try:
            data["sigma_w_schedule"] = [float(v) for v in vals]
        except ValueError as exc:
            raise UsageError(f"--sigma-w: {exc}") from exc
    for key, value in (
        ("sigma0", args.sigma0),
        ("lambda1", args.lambda1),
        ("lambda2", args.lambda2),
        ("regularizer", args.regularizer),
        ("epsilon", args.epsilon),
        ("n_steps", args.steps),
    ):
        if value is not None:
            data[key] = value
    if args.max_iters is not None:
        lb = dict(data.get("lbfgs", {}))
        lb["max_iters"] = args.max_iters
        data["lbfgs"] = lb
    try:
        return RegistrationConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from exc


def _map_stages(result):
    stages = []
    for entry in result.maps:
        if isinstance(entry, RigidTransform):
            stages.append({
                "type": "rigid",
                "euler_deg": [float(v) for v in entry.euler_deg],
                "translation": [float(v) for v in entry.translation],
            })
        else:
            trajectory, kernel = entry
            initial = trajectory.initial
            stages.append({
                "type": "lddmm",
                "sigma0": kernel.sigma0,
                "scale_divisors": list(kernel.scale_divisors),
                "n_steps": trajectory.n_steps,
                "control_points": initial.control_points.tolist(),
                "momenta": initial.momenta.tolist(),
            })
    return stages


def load_map_stages(path):
    """Rebuild transport maps from a map.json written by cmd_register."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    maps = []
    for i, stage in enumerate(doc.get("stages", [])):
        kind = stage.get("type")
        if kind == "rigid":
            maps.append(RigidTransform(stage["euler_deg"], stage["translation"]))
        elif kind == "lddmm":
            kernel = DeformationKernel(stage["sigma0"], stage["scale_divisors"])
            state = ShootingState(stage["control_points"], stage["momenta"])
            maps.append((shoot(state, kernel, stage["n_steps"]), kernel))
        else:
            raise UsageError(f"{path}: stage {i} has unknown type {kind!r}")
    if not maps:
        raise UsageError(f"{path}: no transport stages found")
    return maps


def _cmd_register(args, argv):
    cfg = _load_config(args)
    if args.method not in PIPELINE_METHODS:
        raise UsageError(
            f"unknown method {args.method!r}; choose from {', '.join(PIPELINE_METHODS)}"
        )
    try:
        source = load_mesh(args.source)
        target = load_mesh(args.target)
    except (MeshIOError, OSError) as exc:
        raise UsageError(str(exc)) from exc
    if args.check_orientation:
        for name, mesh in (("source", source), ("target", target)):
            bad = inconsistent_face_pairs(mesh)
            if bad:
                raise UsageError(
                    f"{name} mesh has {len(bad)} inconsistently oriented face pairs; "
                    f"first: {bad[0]}"
                )
    out = _ensure_dir(args.out)
    try:
        result = pipeline(args.method, source, target, cfg)
    except DivergenceError as exc:
        print(f"varimatch: numerical failure: {exc}", file=sys.stderr)
        _write_manifest(out, argv, config=cfg, inputs=(args.source, args.target))
        return E_NUMERICAL
    save_mesh(result.deformed_source, f"{out}/deformed.off")
    _write_json(f"{out}/map.json", {"stages": _map_stages(result)})
    metric = surface_metric(
        face_elements(result.deformed_source), face_elements(target)
    )
    emit_report(
        result,
        {"surface": {"mean_mm": metric}},
        f"{out}/report.json",
        config=cfg,
    )
    _write_manifest(
        out, argv, config=cfg,
        inputs=(args.source, args.target),
        outputs=(f"{out}/deformed.off", f"{out}/map.json", f"{out}/report.json"),
    )
    return 0


def _cmd_evaluate(args, argv):
    try:
        moved = load_landmarks_csv(args.landmarks)
        reference = load_landmarks_csv(args.reference)
    except (MeshIOError, OSError) as exc:
        raise UsageError(str(exc)) from exc
    if args.map:
        moved = transport_landmarks(load_map_stages(args.map), moved)
    try:
        metrics = {"landmarks": landmark_metric(moved, reference)}
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if (args.deformed_mesh is None) != (args.target_mesh is None):
        raise UsageError("--deformed-mesh and --target-mesh go together")
    if args.deformed_mesh:
        try:
            deformed = load_mesh(args.deformed_mesh)
            target = load_mesh(args.target_mesh)
        except (MeshIOError, OSError) as exc:
            raise UsageError(str(exc)) from exc
        metrics["surface"] = {
            "mean_mm": surface_metric(face_elements(deformed), face_elements(target))
        }
    out = _ensure_dir(args.out)
    emit_report(None, metrics, f"{out}/report.json")
    inputs = [args.landmarks, args.reference]
    if args.map:
        inputs.append(args.map)
    if args.deformed_mesh:
        inputs += [args.deformed_mesh, args.target_mesh]
    _write_manifest(out, argv, inputs=inputs, outputs=(f"{out}/report.json",))
    return 0


def _cmd_deform(args, argv):
    maps = load_map_stages(args.map)
    grid_flags = (args.grid_origin, args.grid_spacing, args.grid_shape)
    if args.points is None and not any(grid_flags):
        raise UsageError("deform needs --points or the full set of --grid-* options")
    if args.points is not None and any(grid_flags):
        raise UsageError("--points and --grid-* are mutually exclusive")
    out = _ensure_dir(args.out)
    written = []
    if args.points is not None:
        try:
            lm = load_landmarks_csv(args.points)
        except (MeshIOError, OSError) as exc:
            raise UsageError(str(exc)) from exc
        moved = transport_landmarks(maps, lm)
        save_landmarks_csv(f"{out}/transported.csv", moved)
        written.append(f"{out}/transported.csv")
        inputs = [args.map, args.points]
    else:
        if not all(grid_flags):
            raise UsageError("--grid-origin, --grid-spacing and --grid-shape go together")
        origin = _vector(args.grid_origin, 3, "--grid-origin")
        spacing = _vector(args.grid_spacing, 3, "--grid-spacing")
        try:
            shape = [int(v) for v in args.grid_shape.split(",")]
        except ValueError as exc:
            raise UsageError(f"--grid-shape: {exc}") from exc
        if len(shape) != 3:
            raise UsageError("--grid-shape needs nx,ny,nz")
        nodes = grid_nodes(origin, spacing, shape)
        moved = transport_points(maps, nodes)
        write_displacement_field(
            f"{out}/field.bin", moved - nodes, origin, spacing, shape
        )
        written += [f"{out}/field.bin", f"{out}/field.bin.json"]
        inputs = [args.map]
    _write_manifest(out, argv, inputs=inputs, outputs=written)
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "register": _cmd_register,
        "evaluate": _cmd_evaluate,
        "deform": _cmd_deform,
    }
    try:
        return handlers[args.command](args, argv)
    except UsageError as exc:
        print(f"varimatch: error: {exc}", file=sys.stderr)
        return E_USAGE
    except (ValueError, MeshIOError) as exc:
        print(f"varimatch: error: {exc}", file=sys.stderr)
        return E_USAGE
    except DivergenceError as exc:
        print(f"varimatch: numerical failure: {exc}", file=sys.stderr)
        return E_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
