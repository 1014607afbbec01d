"""Shape containers and discrete geometry.

Triangle meshes and polylines are reduced to oriented varifold elements
(center, unit director, weight): a face contributes its centroid, unit
normal and area, a segment its midpoint, unit tangent and length.  The
module also covers mesh and polyline file I/O, rigid motions, cylinder
truncation and synthetic test shapes.
"""

import csv
import io
import os

import numpy as np

# elements thinner than these are considered degenerate (mm^2 / mm)
DEGENERATE_AREA = 1e-12
DEGENERATE_LENGTH = 1e-12

_UNIT_TOL = 1e-12


class MeshIOError(Exception):
    """Mesh or polyline file could not be parsed or written."""


class DegenerateElementError(ValueError):
    """A face or segment is too small to carry a direction."""


class EmptyTruncationError(ValueError):
    """Truncation removed every face of the mesh."""


def _as_float_array(a, name, shape_tail):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1:] != shape_tail:
        raise ValueError(f"{name} must have shape (n, {shape_tail[0]}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


class Mesh:
    """Triangle mesh with float64 vertices and integer face indices.

    Parameters
    ----------
    vertices : (nv, 3) array_like
    faces : (nf, 3) array_like of int
        Vertex indices; orientation is given by the winding order.
    """

    def __init__(self, vertices, faces):
        self.vertices = np.array(vertices, dtype=np.float64)
        self.faces = np.array(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must have shape (n, 3), got {self.vertices.shape}")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("vertices contain non-finite values")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError(f"faces must have shape (m, 3), got {self.faces.shape}")
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ValueError("face index out of range")
            same = (
                (self.faces[:, 0] == self.faces[:, 1])
                | (self.faces[:, 1] == self.faces[:, 2])
                | (self.faces[:, 0] == self.faces[:, 2])
            )
            if same.any():
                raise ValueError(
                    f"face {int(np.nonzero(same)[0][0])} repeats a vertex index"
                )
        _freeze(self.vertices, self.faces)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def with_vertices(self, vertices):
        """Same connectivity, new vertex positions."""
        return Mesh(vertices, self.faces)

    def bounding_box_diagonal(self):
        if not len(self.vertices):
            return 0.0
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(ext))


class Polyline:
    """Collection of oriented segments in 2 or 3 dimensions.

    Parameters
    ----------
    vertices : (nv, d) array_like with d in {2, 3}
    segments : (ns, 2) array_like of int
        Index pairs; orientation runs from the first to the second vertex.
    """

    def __init__(self, vertices, segments):
        self.vertices = np.array(vertices, dtype=np.float64)
        self.segments = np.array(segments, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] not in (2, 3):
            raise ValueError(f"vertices must have shape (n, 2|3), got {self.vertices.shape}")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("vertices contain non-finite values")
        if self.segments.ndim != 2 or self.segments.shape[1] != 2:
            raise ValueError(f"segments must have shape (m, 2), got {self.segments.shape}")
        if self.segments.size:
            if self.segments.min() < 0 or self.segments.max() >= len(self.vertices):
                raise ValueError("segment index out of range")
            if (self.segments[:, 0] == self.segments[:, 1]).any():
                bad = int(np.nonzero(self.segments[:, 0] == self.segments[:, 1])[0][0])
                raise ValueError(f"segment {bad} repeats a vertex index")
        _freeze(self.vertices, self.segments)

    @property
    def dim(self):
        return self.vertices.shape[1]


class DiscreteVarifold:
    """Oriented varifold atoms: centers, unit directors and positive weights.

    Weights carry the element measure (area in mm^2 for faces, length in
    mm for segments).  Directors must be unit vectors to 1e-12.
    """

    def __init__(self, centers, directors, weights):
        self.centers = np.array(centers, dtype=np.float64)
        self.directors = np.array(directors, dtype=np.float64)
        self.weights = np.array(weights, dtype=np.float64)
        if self.centers.ndim != 2 or self.centers.shape[1] not in (2, 3):
            raise ValueError(f"centers must have shape (n, 2|3), got {self.centers.shape}")
        if self.directors.shape != self.centers.shape:
            raise ValueError("directors and centers must have the same shape")
        if self.weights.shape != (len(self.centers),):
            raise ValueError("weights must be a vector matching the element count")
        if not (
            np.all(np.isfinite(self.centers))
            and np.all(np.isfinite(self.directors))
            and np.all(np.isfinite(self.weights))
        ):
            raise ValueError("varifold data contains non-finite values")
        if self.weights.size and self.weights.min() <= 0.0:
            raise ValueError("weights must be strictly positive")
        norms = np.linalg.norm(self.directors, axis=1)
        if norms.size and np.abs(norms - 1.0).max() > _UNIT_TOL:
            raise ValueError("directors must be unit vectors")
        _freeze(self.centers, self.directors, self.weights)

    @property
    def n(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.centers.shape[1]

    def total_weight(self):
        return float(self.weights.sum())


def _euler_matrices_deg(angles_deg):
    """Rotation matrix and its three angle derivatives (XYZ intrinsic, degrees).

    Returns (R, [dR/da, dR/db, dR/dc]) with derivatives taken per radian.
    """
    a, b, c = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    dx = np.array([[0, 0, 0], [0, -sa, -ca], [0, ca, -sa]])
    dy = np.array([[-sb, 0, cb], [0, 0, 0], [-cb, 0, -sb]])
    dz = np.array([[-sc, -cc, 0], [cc, -sc, 0], [0, 0, 0]])
    r = rx @ ry @ rz
    return r, [dx @ ry @ rz, rx @ dy @ rz, rx @ ry @ dz]


class RigidTransform:
    """Rigid motion x -> R x + t with Euler angles in degrees (XYZ intrinsic)."""

    def __init__(self, euler_deg, translation):
        self.euler_deg = np.array(euler_deg, dtype=np.float64)
        self.translation = np.array(translation, dtype=np.float64)
        if self.euler_deg.shape != (3,) or self.translation.shape != (3,):
            raise ValueError("euler_deg and translation must be 3-vectors")
        if not (np.all(np.isfinite(self.euler_deg)) and np.all(np.isfinite(self.translation))):
            raise ValueError("transform parameters must be finite")
        _freeze(self.euler_deg, self.translation)

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def pure_translation(cls, t):
        return cls(np.zeros(3), t)

    def matrix(self):
        return _euler_matrices_deg(self.euler_deg)[0]

    def apply_points(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix().T + self.translation


def matrix_to_euler_deg(r):
    """Recover XYZ-intrinsic Euler angles (degrees) from a rotation matrix.

    R = Rx(a) Ry(b) Rz(c) gives R[0, 2] = sin(b); near the |b| = 90 deg
    gimbal the split between a and c is conventional (a = 0 is chosen).
    """
    r = np.asarray(r, dtype=np.float64)
    sb = np.clip(r[0, 2], -1.0, 1.0)
    b = np.arcsin(sb)
    if np.abs(sb) < 1.0 - 1e-12:
        a = np.arctan2(-r[1, 2], r[2, 2])
        c = np.arctan2(-r[0, 1], r[0, 0])
    else:
        a = 0.0
        c = np.arctan2(r[1, 0], r[1, 1]) * np.sign(sb)
    return np.rad2deg(np.array([a, b, c]))


def apply_rigid(transform, shape):
    """Apply a rigid motion to a Mesh or a 3-D DiscreteVarifold.

    Varifold centers rotate and translate, directors only rotate and
    weights are untouched.
    """
    if isinstance(shape, Mesh):
        return shape.with_vertices(transform.apply_points(shape.vertices))
    if isinstance(shape, DiscreteVarifold):
        if shape.dim != 3:
            raise ValueError("rigid motions are only defined for 3-D varifolds")
        r = transform.matrix()
        return DiscreteVarifold(
            shape.centers @ r.T + transform.translation,
            shape.directors @ r.T,
            shape.weights,
        )
    raise TypeError(f"cannot apply rigid motion to {type(shape).__name__}")


def face_elements(mesh):
    """Varifold elements of a mesh: centroids, unit normals, areas.

    The normal direction follows the face winding.  Raises
    DegenerateElementError if any face area is below 1e-12.
    """
    v1 = mesh.vertices[mesh.faces[:, 0]]
    v2 = mesh.vertices[mesh.faces[:, 1]]
    v3 = mesh.vertices[mesh.faces[:, 2]]
    centers = (v1 + v2 + v3) / 3.0
    normals = 0.5 * np.cross(v2 - v1, v3 - v1)
    areas = np.linalg.norm(normals, axis=1)
    if areas.size and areas.min() < DEGENERATE_AREA:
        bad = int(np.argmin(areas))
        raise DegenerateElementError(
            f"face {bad} is degenerate (area {areas[bad]:.3e} < {DEGENERATE_AREA:.0e})"
        )
    return DiscreteVarifold(centers, normals / areas[:, None], areas)


def segment_elements(polyline):
    """Varifold elements of a polyline: midpoints, unit tangents, lengths."""
    p1 = polyline.vertices[polyline.segments[:, 0]]
    p2 = polyline.vertices[polyline.segments[:, 1]]
    centers = 0.5 * (p1 + p2)
    chords = p2 - p1
    lengths = np.linalg.norm(chords, axis=1)
    if lengths.size and lengths.min() < DEGENERATE_LENGTH:
        bad = int(np.argmin(lengths))
        raise DegenerateElementError(
            f"segment {bad} is degenerate (length {lengths[bad]:.3e} < {DEGENERATE_LENGTH:.0e})"
        )
    return DiscreteVarifold(centers, chords / lengths[:, None], lengths)


def barycenter(elements):
    """Weight-averaged center of a varifold."""
    w = elements.weights
    return (w[:, None] * elements.centers).sum(axis=0) / w.sum()


def barycenter_translation(source, target):
    """Translation taking the source weighted barycenter onto the target's."""
    return barycenter(target) - barycenter(source)


def vertex_gradients(mesh, d_centers, d_directors, d_weights):
    """Pull element-quantity gradients back to mesh vertex positions.

    Given the partials of a scalar with respect to each face's centroid,
    (unconstrained) unit normal and area, applies the chain rule through
    centroid = mean(vertices), eta = 0.5 (v2-v1) x (v3-v1), area = |eta|,
    normal = eta/|eta| and accumulates per-vertex gradients.

    Returns an (nv, 3) array.
    """
    v1 = mesh.vertices[mesh.faces[:, 0]]
    v2 = mesh.vertices[mesh.faces[:, 1]]
    v3 = mesh.vertices[mesh.faces[:, 2]]
    e1 = v2 - v1
    e2 = v3 - v1
    eta = 0.5 * np.cross(e1, e2)
    area = np.linalg.norm(eta, axis=1)
    tau = eta / area[:, None]

    # d/d(eta) through area and unit normal
    g_eta = tau * d_weights[:, None]
    g_eta += (d_directors - tau * (tau * d_directors).sum(axis=1)[:, None]) / area[:, None]

    g1 = d_centers / 3.0 + 0.5 * np.cross(e1 - e2, g_eta)
    g2 = d_centers / 3.0 + 0.5 * np.cross(e2, g_eta)
    g3 = d_centers / 3.0 + 0.5 * np.cross(g_eta, e1)

    out = np.zeros_like(mesh.vertices)
    np.add.at(out, mesh.faces[:, 0], g1)
    np.add.at(out, mesh.faces[:, 1], g2)
    np.add.at(out, mesh.faces[:, 2], g3)
    return out


def truncate_by_cylinder(mesh, axis_point, axis_direction, radius):
    """Keep the faces whose three vertices all lie inside an infinite cylinder.

    Whole faces are culled, never clipped.  Unused vertices are dropped
    (face order is preserved).  Raises EmptyTruncationError if nothing
    survives.
    """
    if radius <= 0:
        raise ValueError("cylinder radius must be positive")
    p0 = np.asarray(axis_point, dtype=np.float64)
    d = np.asarray(axis_direction, dtype=np.float64)
    nd = np.linalg.norm(d)
    if nd == 0:
        raise ValueError("cylinder axis direction must be nonzero")
    d = d / nd
    rel = mesh.vertices - p0
    perp = rel - np.outer(rel @ d, d)
    inside = (perp * perp).sum(axis=1) <= radius * radius
    keep = inside[mesh.faces].all(axis=1)
    if not keep.any():
        raise EmptyTruncationError("cylinder truncation removed every face")
    faces = mesh.faces[keep]
    used = np.unique(faces)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Mesh(mesh.vertices[used], remap[faces])


_ICOSAHEDRON_TAU = (1.0 + np.sqrt(5.0)) / 2.0

_ICOSAHEDRON_VERTS = np.array(
    [
        (-1, _ICOSAHEDRON_TAU, 0), (1, _ICOSAHEDRON_TAU, 0),
        (-1, -_ICOSAHEDRON_TAU, 0), (1, -_ICOSAHEDRON_TAU, 0),
        (0, -1, _ICOSAHEDRON_TAU), (0, 1, _ICOSAHEDRON_TAU),
        (0, -1, -_ICOSAHEDRON_TAU), (0, 1, -_ICOSAHEDRON_TAU),
        (_ICOSAHEDRON_TAU, 0, -1), (_ICOSAHEDRON_TAU, 0, 1),
        (-_ICOSAHEDRON_TAU, 0, -1), (-_ICOSAHEDRON_TAU, 0, 1),
    ],
    dtype=np.float64,
)

_ICOSAHEDRON_FACES = np.array(
    [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ],
    dtype=np.int64,
)


def synth_sphere(radius, subdivisions):
    """Icosphere of the given radius: 20 * 4**subdivisions outward faces."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    verts = [tuple(v) for v in _ICOSAHEDRON_VERTS]
    faces = [tuple(f) for f in _ICOSAHEDRON_FACES]
    for _ in range(subdivisions):
        midpoint = {}
        new_faces = []

        def mid(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                va, vb = verts[i], verts[j]
                verts.append(tuple((np.array(va) + np.array(vb)) / 2.0))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        for i1, i2, i3 in faces:
            a, b, c = mid(i1, i2), mid(i2, i3), mid(i3, i1)
            new_faces += [(i1, a, c), (i2, b, a), (i3, c, b), (a, b, c)]
        faces = new_faces
    v = np.asarray(verts, dtype=np.float64)
    v = v * (radius / np.linalg.norm(v, axis=1))[:, None]
    return Mesh(v, np.asarray(faces, dtype=np.int64))


def synth_ellipsoid(semi_axes, subdivisions):
    """Axis-aligned ellipsoid: unit icosphere scaled per axis."""
    ax = np.asarray(semi_axes, dtype=np.float64)
    if ax.shape != (3,) or ax.min() <= 0:
        raise ValueError("semi_axes must be three positive lengths")
    sphere = synth_sphere(1.0, subdivisions)
    return sphere.with_vertices(sphere.vertices * ax)


def inconsistent_face_pairs(mesh):
    """Adjacent face pairs whose windings disagree across the shared edge.

    A consistently oriented surface traverses each shared edge in opposite
    directions; pairs that traverse it in the same direction are returned
    as (face_a, face_b) index tuples.
    """
    seen = {}
    bad = []
    for fi, (a, b, c) in enumerate(mesh.faces):
        for u, v in ((a, b), (b, c), (c, a)):
            u, v = int(u), int(v)
            if (u, v) in seen:
                bad.append((seen[(u, v)], fi))
            else:
                seen[(u, v)] = fi
    return bad


# ---------------------------------------------------------------------------
# file I/O


def _significant_lines(text):
    """Yield (line_number, stripped_line) skipping blanks and # comments."""
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield ln, line


def _parse_floats(line, count, ln, path):
    parts = line.split()
    if len(parts) < count:
        raise MeshIOError(f"{path}:{ln}: expected {count} numbers, got {len(parts)}")
    try:
        return [float(p) for p in parts[:count]]
    except ValueError as exc:
        raise MeshIOError(f"{path}:{ln}: {exc}") from None


def load_mesh(path, fmt=None):
    """Read a triangle mesh from an OFF or ASCII PLY file.

    The format is inferred from the extension unless given explicitly as
    "off" or "ply".  Parse errors name the offending line.
    """
    fmt = fmt or os.path.splitext(str(path))[1].lstrip(".").lower()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise MeshIOError(f"{path}: {exc}") from None
    if fmt == "off":
        return _parse_off(text, str(path))
    if fmt == "ply":
        return _parse_ply(text, str(path))
    raise MeshIOError(f"{path}: unsupported mesh format {fmt!r}")


def _parse_off(text, path):
    lines = list(_significant_lines(text))
    if not lines:
        raise MeshIOError(f"{path}:1: empty OFF file")
    pos = 0
    ln, first = lines[pos]
    if first == "OFF":
        pos += 1
    elif first.startswith("OFF"):
        lines[pos] = (ln, first[3:].strip())
    if pos >= len(lines):
        raise MeshIOError(f"{path}:{ln}: missing OFF count line")
    ln, counts = lines[pos]
    parts = counts.split()
    if len(parts) < 2:
        raise MeshIOError(f"{path}:{ln}: expected 'nv nf ne' counts")
    try:
        nv, nf = int(parts[0]), int(parts[1])
    except ValueError:
        raise MeshIOError(f"{path}:{ln}: non-integer OFF counts") from None
    pos += 1
    if len(lines) - pos < nv + nf:
        raise MeshIOError(f"{path}:{ln}: file ends before {nv} vertices and {nf} faces")
    verts = np.empty((nv, 3), dtype=np.float64)
    for i in range(nv):
        vln, line = lines[pos + i]
        verts[i] = _parse_floats(line, 3, vln, path)
    pos += nv
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        fln, line = lines[pos + i]
        parts = line.split()
        try:
            ints = [int(p) for p in parts]
        except ValueError as exc:
            raise MeshIOError(f"{path}:{fln}: {exc}") from None
        if not ints or ints[0] != 3 or len(ints) < 4:
            raise MeshIOError(f"{path}:{fln}: only triangular faces are supported")
        faces[i] = ints[1:4]
    try:
        return Mesh(verts, faces)
    except ValueError as exc:
        raise MeshIOError(f"{path}: {exc}") from None


def _parse_ply(text, path):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshIOError(f"{path}:1: not a PLY file (missing 'ply' magic)")
    nv = nf = None
    fmt_seen = False
    current = None
    vertex_props = []
    body_start = None
    for ln, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("comment"):
            continue
        if line == "end_header":
            body_start = ln
            break
        parts = line.split()
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise MeshIOError(f"{path}:{ln}: only ASCII PLY is supported")
            fmt_seen = True
        elif parts[0] == "element":
            current = parts[1]
            if current == "vertex":
                nv = int(parts[2])
            elif current == "face":
                nf = int(parts[2])
        elif parts[0] == "property" and current == "vertex":
            vertex_props.append(parts[-1])
    if body_start is None:
        raise MeshIOError(f"{path}: missing end_header")
    if not fmt_seen:
        raise MeshIOError(f"{path}: missing PLY format line")
    if nv is None or nf is None:
        raise MeshIOError(f"{path}: header must declare vertex and face elements")
    if vertex_props[:3] != ["x", "y", "z"]:
        raise MeshIOError(f"{path}: vertex properties must start with x, y, z")
    body = [(ln, raw.strip()) for ln, raw in enumerate(lines[body_start:], start=body_start + 1)
            if raw.strip()]
    if len(body) < nv + nf:
        raise MeshIOError(f"{path}: file ends before {nv} vertices and {nf} faces")
    verts = np.empty((nv, 3), dtype=np.float64)
    for i in range(nv):
        vln, line = body[i]
        verts[i] = _parse_floats(line, 3, vln, path)
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        fln, line = body[nv + i]
        parts = line.split()
        try:
            ints = [int(p) for p in parts]
        except ValueError as exc:
            raise MeshIOError(f"{path}:{fln}: {exc}") from None
        if not ints or ints[0] != 3 or len(ints) < 4:
            raise MeshIOError(f"{path}:{fln}: only triangular faces are supported")
        faces[i] = ints[1:4]
    try:
        return Mesh(verts, faces)
    except ValueError as exc:
        raise MeshIOError(f"{path}: {exc}") from None


def save_mesh(mesh, path, fmt=None):
    """Write a mesh as OFF or ASCII PLY with full float64 precision."""
    fmt = fmt or os.path.splitext(str(path))[1].lstrip(".").lower()
    buf = io.StringIO()
    if fmt == "off":
        buf.write("OFF\n")
        buf.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        for v in mesh.vertices:
            buf.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            buf.write(f"3 {f[0]} {f[1]} {f[2]}\n")
    elif fmt == "ply":
        buf.write("ply\nformat ascii 1.0\n")
        buf.write(f"element vertex {mesh.n_vertices}\n")
        buf.write("property double x\nproperty double y\nproperty double z\n")
        buf.write(f"element face {mesh.n_faces}\n")
        buf.write("property list uchar int vertex_indices\nend_header\n")
        for v in mesh.vertices:
            buf.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            buf.write(f"3 {f[0]} {f[1]} {f[2]}\n")
    else:
        raise MeshIOError(f"{path}: unsupported mesh format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def load_polyline_csv(path):
    """Read a polyline from CSV rows of x,y,z,segment_id.

    Rows sharing a segment_id form one chain in file order; each chain of
    k points contributes k-1 oriented segments.  A header row is allowed.
    """
    rows = []
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for ln, rec in enumerate(csv.reader(fh), start=1):
                if not rec or not "".join(rec).strip():
                    continue
                if ln == 1 and not _looks_numeric(rec[0]):
                    continue
                if len(rec) < 4:
                    raise MeshIOError(f"{path}:{ln}: expected x,y,z,segment_id")
                try:
                    rows.append((float(rec[0]), float(rec[1]), float(rec[2]), int(rec[3]), ln))
                except ValueError as exc:
                    raise MeshIOError(f"{path}:{ln}: {exc}") from None
    except OSError as exc:
        raise MeshIOError(f"{path}: {exc}") from None
    if not rows:
        raise MeshIOError(f"{path}: no polyline points found")
    verts = np.array([(r[0], r[1], r[2]) for r in rows])
    segs = []
    for i in range(1, len(rows)):
        if rows[i][3] == rows[i - 1][3]:
            segs.append((i - 1, i))
    if not segs:
        raise MeshIOError(f"{path}: no chain has two or more points")
    return Polyline(verts, np.array(segs, dtype=np.int64))


def _looks_numeric(token):
    try:
        float(token)
        return True
    except ValueError:
        return False


def save_polyline_csv(polyline, path):
    """Write a polyline as x,y,z,segment_id rows (one chain per maximal run)."""
    verts = polyline.vertices
    if polyline.dim == 2:
        verts = np.column_stack([verts, np.zeros(len(verts))])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,z,segment_id\n")
        chain = 0
        prev_end = None
        for a, b in polyline.segments:
            if prev_end is None or a != prev_end:
                chain += 1
                va = verts[a]
                fh.write(f"{va[0]:.17g},{va[1]:.17g},{va[2]:.17g},{chain}\n")
            vb = verts[b]
            fh.write(f"{vb[0]:.17g},{vb[1]:.17g},{vb[2]:.17g},{chain}\n")
            prev_end = b
