"""Meshes, rotations, surface sampling, and exact polyhedral mass properties.

Conventions used throughout the package:
  - world up-axis is +z, coordinate frame is right-handed
  - quaternions are (w, x, y, z), unit norm, canonicalized to w >= 0
  - axis-angle rotation vectors have angle = |vector| in [0, pi]
  - all quantities are SI (m, kg, s); angles in radians unless a function
    says degrees
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


class GeomError(ValueError):
    """Invalid geometry: degenerate, open, or inconsistently wound meshes."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# quaternions / rotation vectors
# ---------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    """Normalize to unit length and canonicalize to the w >= 0 hemisphere."""
    q = np.asarray(q, dtype=np.float64)
    n = math.sqrt(float(q @ q))
    if n == 0.0:
        raise GeomError("zero quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a*b (apply b first, then a), not normalized."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    """3x3 rotation matrix for the unit quaternion q."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector v by quaternion q."""
    return quat_to_matrix(q) @ np.asarray(v, dtype=np.float64)


def quat_exp(rotvec) -> np.ndarray:
    """Unit quaternion for the axis-angle rotation vector (angle = |vec|)."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = math.sqrt(float(rotvec @ rotvec))
    half = 0.5 * angle
    if angle < 1e-12:
        # sin(h)/h -> 1/2 for the vector part; keeps the map smooth at zero
        return quat_normalize(np.array([1.0, *(0.5 * rotvec)]))
    s = math.sin(half) / angle
    return quat_normalize(np.array([math.cos(half), *(s * rotvec)]))


def quat_log(q) -> np.ndarray:
    """Rotation vector of a unit quaternion, angle in [0, pi].

    Zero rotation maps to the zero vector (axis undefined by convention).
    """
    q = quat_normalize(q)
    vn = math.sqrt(float(q[1:] @ q[1:]))
    if vn < 1e-15:
        return np.zeros(3)
    angle = 2.0 * math.atan2(vn, q[0])
    return (angle / vn) * q[1:]


def compose_rotation(q, delta) -> np.ndarray:
    """Apply an incremental axis-angle rotation: exp(delta) o q, canonical."""
    return quat_normalize(quat_multiply(quat_exp(delta), q))


def relative_rotvec(q_from, q_to) -> np.ndarray:
    """Rotation vector r with exp(r) o q_from = q_to (world frame)."""
    return quat_log(quat_multiply(q_to, quat_conjugate(q_from)))


def up_axis_tilt(q) -> float:
    """Angle in degrees between the body up-axis (+z) and world +z, in [0, 180]."""
    w, x, y, z = q
    # third column of the rotation matrix, z component
    uz = 1.0 - 2.0 * (x * x + y * y)
    return math.degrees(math.acos(max(-1.0, min(1.0, uz))))


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mesh:
    """Triangle mesh; vertices (V,3) float64, triangles (T,3) int indices."""

    vertices: np.ndarray
    triangles: np.ndarray
    closed: bool = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(v) == 0 or len(t) == 0:
            raise GeomError("empty mesh")
        if t.min() < 0 or t.max() >= len(v):
            raise GeomError("triangle index out of range")
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "triangles", _readonly(t))
        object.__setattr__(self, "closed", _is_closed(t))

    def transformed(self, scale=None, offset=None) -> "Mesh":
        v = np.array(self.vertices)
        if scale is not None:
            v = v * np.asarray(scale, dtype=np.float64)
        if offset is not None:
            v = v + np.asarray(offset, dtype=np.float64)
        return Mesh(v, self.triangles)


def _is_closed(triangles: np.ndarray) -> bool:
    # closed <=> each directed edge appears exactly once and its reverse exists
    seen = {}
    for a, b, c in triangles:
        for i, j in ((a, b), (b, c), (c, a)):
            key = (int(i), int(j))
            if key in seen:
                return False  # duplicated directed edge: inconsistent winding
            seen[key] = True
    return all((j, i) in seen for (i, j) in seen)


def merge_meshes(parts) -> Mesh:
    """Concatenate meshes into one rigid body (no boolean union)."""
    verts, tris, off = [], [], 0
    for m in parts:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += len(m.vertices)
    return Mesh(np.vstack(verts), np.vstack(tris))


def normalize_to_unit_cube(mesh: Mesh) -> tuple[Mesh, float]:
    """Center the bounding box at the origin and scale the longest side to 1.

    Returns the normalized mesh and the uniform scale factor applied.
    """
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise GeomError("degenerate mesh: zero extent on all axes")
    scale = 1.0 / extent
    center = 0.5 * (lo + hi)
    return Mesh((mesh.vertices - center) * scale, mesh.triangles), scale


# ---------------------------------------------------------------------------
# surface sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointCloud:
    """Surface samples of one object, points (N,3) float64."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(p) < 1:
            raise GeomError("empty point cloud")
        object.__setattr__(self, "points", _readonly(p))

    def __len__(self) -> int:
        return len(self.points)


def triangle_areas(mesh: Mesh) -> np.ndarray:
    v = mesh.vertices
    t = mesh.triangles
    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def sample_surface(mesh: Mesh, n: int, seed: int) -> PointCloud:
    """Area-weighted uniform surface sampling, deterministic given seed."""
    if n < 1:
        raise GeomError("need at least one sample")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if total <= 0.0:
        raise GeomError("zero-area mesh")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(areas), size=n, p=areas / total)
    # uniform barycentric coordinates via the sqrt trick
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    v = mesh.vertices
    t = mesh.triangles[idx]
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    pts = (1.0 - r1)[:, None] * a + (r1 * (1.0 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return PointCloud(pts)


# ---------------------------------------------------------------------------
# mass properties
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MassProps:
    mass: float          # kg
    volume: float        # m^3
    center_of_mass: np.ndarray  # m, same frame as the mesh
    inertia_body: np.ndarray    # kg m^2, 3x3 about the COM, mesh axes

    def __post_init__(self):
        object.__setattr__(self, "center_of_mass", _readonly(np.asarray(self.center_of_mass, dtype=np.float64)))
        object.__setattr__(self, "inertia_body", _readonly(np.asarray(self.inertia_body, dtype=np.float64)))


def mass_properties(mesh: Mesh, density: float) -> MassProps:
    """Exact volume, center of mass, and inertia tensor of a closed mesh.

    Uses signed tetrahedra against the origin (divergence theorem); each
    integral is accumulated with math.fsum so the result is independent of
    triangle order. Exact for polyhedra with uniform density.
    """
    if not mesh.closed:
        raise GeomError("mass properties need a closed, consistently wound mesh")
    if density <= 0.0:
        raise GeomError("density must be positive")

    v = mesh.vertices
    t = mesh.triangles
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    # signed volume of tetra (origin, a, b, c), times 6
    d6 = np.einsum("ij,ij->i", a, np.cross(b, c))

    # canonical tetra moment integrals, scaled by the signed determinant
    def s1(w):  # integral of x over the tetra, times common factor
        return d6 * (w[:, 0] + w[:, 1] + w[:, 2])

    def s2(w):  # integral of x^2
        x0, x1, x2 = w[:, 0], w[:, 1], w[:, 2]
        return d6 * (x0 * x0 + x1 * x1 + x2 * x2 + x0 * x1 + x1 * x2 + x0 * x2)

    def sxy(wa, wb):  # integral of x*y
        x0, x1, x2 = wa[:, 0], wa[:, 1], wa[:, 2]
        y0, y1, y2 = wb[:, 0], wb[:, 1], wb[:, 2]
        return d6 * (2 * (x0 * y0 + x1 * y1 + x2 * y2)
                     + x0 * y1 + x1 * y0 + x1 * y2 + x2 * y1 + x0 * y2 + x2 * y0)

    ax = np.stack([a[:, 0], b[:, 0], c[:, 0]], axis=1)
    ay = np.stack([a[:, 1], b[:, 1], c[:, 1]], axis=1)
    az = np.stack([a[:, 2], b[:, 2], c[:, 2]], axis=1)

    vol6 = math.fsum(d6)
    volume = vol6 / 6.0
    if volume <= 0.0:
        raise GeomError("non-positive volume: check winding orientation")

    cx = math.fsum(s1(ax)) / 24.0
    cy = math.fsum(s1(ay)) / 24.0
    cz = math.fsum(s1(az)) / 24.0
    com = np.array([cx, cy, cz]) / volume

    ixx2 = math.fsum(s2(ax)) / 60.0   # integral of x^2 dV
    iyy2 = math.fsum(s2(ay)) / 60.0
    izz2 = math.fsum(s2(az)) / 60.0
    pxy = math.fsum(sxy(ax, ay)) / 120.0
    pyz = math.fsum(sxy(ay, az)) / 120.0
    pzx = math.fsum(sxy(az, ax)) / 120.0

    mass = density * volume
    # inertia about the origin, then shift to the COM (parallel axis)
    ixx = density * (iyy2 + izz2)
    iyy = density * (ixx2 + izz2)
    izz = density * (ixx2 + iyy2)
    ixy = -density * pxy
    iyz = -density * pyz
    izx = -density * pzx
    inertia_origin = np.array([
        [ixx, ixy, izx],
        [ixy, iyy, iyz],
        [izx, iyz, izz],
    ])
    r = com
    shift = mass * (float(r @ r) * np.eye(3) - np.outer(r, r))
    inertia_com = inertia_origin - shift
    return MassProps(mass=mass, volume=volume, center_of_mass=com, inertia_body=inertia_com)


# ---------------------------------------------------------------------------
# kinematic state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectState:
    """Full rigid-body state at one instant.

    `stable` is False exactly when the up-axis tilt exceeded the topple
    threshold at the time the state was recorded.
    """

    position: np.ndarray   # m
    orientation: np.ndarray  # unit quaternion (w,x,y,z), w >= 0
    lin_vel: np.ndarray    # m/s
    ang_vel: np.ndarray    # rad/s
    stable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "position", _readonly(np.asarray(self.position, dtype=np.float64)))
        object.__setattr__(self, "orientation", _readonly(quat_normalize(self.orientation)))
        object.__setattr__(self, "lin_vel", _readonly(np.asarray(self.lin_vel, dtype=np.float64)))
        object.__setattr__(self, "ang_vel", _readonly(np.asarray(self.ang_vel, dtype=np.float64)))
        for f in (self.position, self.orientation, self.lin_vel, self.ang_vel):
            if not np.all(np.isfinite(f)):
                raise GeomError("non-finite state component")

    @staticmethod
    def at_rest(position, orientation=None) -> "ObjectState":
        q = QUAT_IDENTITY if orientation is None else orientation
        return ObjectState(position, q, np.zeros(3), np.zeros(3), True)


# ---------------------------------------------------------------------------
# point-cloud text files (one point per line, full round-trip precision)
# ---------------------------------------------------------------------------

def write_point_cloud(cloud: PointCloud, path) -> None:
    with open(path, "w") as f:
        for p in cloud.points:
            f.write("%.17g %.17g %.17g\n" % (p[0], p[1], p[2]))


def read_point_cloud(path) -> PointCloud:
    pts = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise GeomError(f"{path}:{ln}: expected 3 floats, got {len(parts)}")
            pts.append([float(x) for x in parts])
    return PointCloud(np.array(pts))
