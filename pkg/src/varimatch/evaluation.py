"""Registration quality metrics, landmark transport and run reports.

Landmarks are labeled 3-D points riding the same ambient maps as the
registered surfaces; metrics summarize label-matched distances, and the
surface metric reuses the nearest-center dissimilarity so evaluation
and ICP agree bitwise.  Reports serialize to a JSON document plus a CSV
companion with one row per landmark.
"""

import csv
import json
import time

import numpy as np

from .deformation import FlowTrajectory, flow_points
from .geometry import MeshIOError, RigidTransform
from .varifold import icp_dissimilarity

__all__ = [
    "LandmarkSet",
    "LANDMARK_ROLES",
    "load_landmarks_csv",
    "save_landmarks_csv",
    "transport_points",
    "transport_landmarks",
    "landmark_metric",
    "surface_metric",
    "emit_report",
]

LANDMARK_ROLES = ("poi", "tumor_axis")


class LandmarkSet:
    """Labeled evaluation points with a role tag per landmark."""

    def __init__(self, labels, points, roles=None):
        self.labels = tuple(str(l) for l in labels)
        self.points = np.array(points, dtype=np.float64)
        if roles is None:
            roles = ["poi"] * len(self.labels)
        self.roles = tuple(str(r) for r in roles)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("landmark points must be (n, 3)")
        if not (len(self.labels) == len(self.points) == len(self.roles)):
            raise ValueError("labels, points and roles must have equal lengths")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("landmark labels must be unique")
        bad = sorted(set(self.roles) - set(LANDMARK_ROLES))
        if bad:
            raise ValueError(f"unknown landmark roles {bad}; expected {LANDMARK_ROLES}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("landmark points must be finite")
        self.points.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    def with_points(self, points):
        return LandmarkSet(self.labels, points, self.roles)


def load_landmarks_csv(path):
    """Read a landmark CSV with header label,x,y,z,role."""
    labels, points, roles = [], [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for ln, row in enumerate(reader, start=1):
            if not row or (ln == 1 and row[0].strip().lower() == "label"):
                continue
            if len(row) != 5:
                raise MeshIOError(f"{path}:{ln}: expected 5 columns, got {len(row)}")
            try:
                xyz = [float(v) for v in row[1:4]]
            except ValueError as exc:
                raise MeshIOError(f"{path}:{ln}: bad coordinate: {exc}") from exc
            labels.append(row[0].strip())
            points.append(xyz)
            roles.append(row[4].strip())
    if not labels:
        raise MeshIOError(f"{path}: no landmarks found")
    try:
        return LandmarkSet(labels, points, roles)
    except ValueError as exc:
        raise MeshIOError(f"{path}: {exc}") from exc


def save_landmarks_csv(path, lm):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "x", "y", "z", "role"])
        for label, point, role in zip(lm.labels, lm.points, lm.roles):
            writer.writerow([label] + [f"{v:.17g}" for v in point] + [role])


def _apply_map(transport, points):
    if isinstance(transport, RigidTransform):
        return transport.apply_points(points)
    if (
        isinstance(transport, tuple)
        and len(transport) == 2
        and isinstance(transport[0], FlowTrajectory)
    ):
        trajectory, kernel = transport
        return flow_points(trajectory, points, kernel)
    raise TypeError(
        "transport map must be a RigidTransform or a "
        "(FlowTrajectory, DeformationKernel) pair"
    )


def transport_points(transport, points):
    """Carry raw (n, 3) points through one map or a list of maps in order."""
    maps = transport if isinstance(transport, list) else [transport]
    for entry in maps:
        points = _apply_map(entry, points)
    return points


def transport_landmarks(transport, lm):
    """Carry landmarks through one map or a list of maps in order."""
    return lm.with_points(transport_points(transport, lm.points))


def landmark_metric(a, b):
    """Label-matched distance statistics between two landmark sets.

    Returns mean, std, median, per-label distances and per-role means
    (roles taken from the first argument).  Raises when the label sets
    differ, naming the mismatch.
    """
    if set(a.labels) != set(b.labels):
        only_a = sorted(set(a.labels) - set(b.labels))
        only_b = sorted(set(b.labels) - set(a.labels))
        raise ValueError(
            f"landmark label mismatch: only in first={only_a}, only in second={only_b}"
        )
    index_b = {label: i for i, label in enumerate(b.labels)}
    order = [index_b[label] for label in a.labels]
    dist = np.linalg.norm(a.points - b.points[order], axis=1)
    per_label = {label: float(d) for label, d in zip(a.labels, dist)}
    per_role = {}
    for role in sorted(set(a.roles)):
        mask = np.array([r == role for r in a.roles])
        per_role[role] = float(dist[mask].mean())
    return {
        "mean": float(dist.mean()),
        "std": float(dist.std()),
        "median": float(np.median(dist)),
        "per_label": per_label,
        "per_role": per_role,
    }


def surface_metric(deformed, target):
    """Mean nearest-center distance; identical to icp_dissimilarity."""
    return icp_dissimilarity(deformed, target)


def emit_report(result, metrics, path, config=None):
    """Write a run report as JSON plus a per-landmark CSV companion.

    The JSON carries the method, config echo, per-stage metadata, the
    objective trace, the metrics dict, a timestamp and wall time; the
    companion (same path with a .csv suffix) lists label,distance_mm
    rows when the metrics include per-label distances.
    """
    doc = {
        "method": getattr(result, "method", None),
        "config": config.to_dict() if hasattr(config, "to_dict") else config,
        "stages": getattr(result, "stages", None),
        "objective_trace": getattr(result, "objective_trace", None),
        "converged": getattr(result, "converged", None),
        "reason": getattr(result, "reason", None),
        "metrics": metrics,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "wall_time_s": getattr(result, "wall_time_s", None),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    per_label = (metrics or {}).get("landmarks", {}).get("per_label")
    if per_label:
        base = str(path)
        if base.endswith(".json"):
            base = base[:-5]
        with open(base + ".csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "distance_mm"])
            for label in sorted(per_label):
                writer.writerow([label, f"{per_label[label]:.17g}"])
    return doc
