"""Single-body rigid contact simulator on the plane z = 0.

Physics model: semi-implicit (symplectic Euler) integration, sequential
impulses with a fixed iteration count for non-penetration + Coulomb
friction, restitution on the normal velocity above an approach-speed
threshold, and direct positional projection out of the plane. Gyroscopic
torque is omitted for stability. Simulation is deterministic: identical
inputs give bit-identical trajectories on one platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial import ConvexHull

from .geom import (
    GeomError,
    Mesh,
    MassProps,
    ObjectState,
    mass_properties,
    quat_normalize,
    up_axis_tilt,
)


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class RigidBody:
    """Simulation body; frame origin at the center of mass."""

    mesh: Mesh                    # original mesh (original frame)
    collider_points: np.ndarray   # convex hull vertices, COM frame (P,3)
    mass_props: MassProps
    friction_mu: float
    restitution: float

    def __post_init__(self):
        if self.friction_mu < 0:
            raise SimError("friction coefficient must be non-negative")
        if not (0.0 <= self.restitution <= 1.0):
            raise SimError("restitution must lie in [0, 1]")
        pts = np.ascontiguousarray(self.collider_points, dtype=np.float64)
        pts.flags.writeable = False
        object.__setattr__(self, "collider_points", pts)


@dataclass(frozen=True)
class SimParams:
    gravity: float = 9.81          # m/s^2, downward
    internal_dt: float = 1.0 / 480.0
    record_hz: float = 15.0
    max_time: float = 5.0
    topple_deg: float = 45.0
    rest_lin_vel: float = 1e-3     # m/s
    rest_ang_vel: float = 1e-2     # rad/s
    rest_hold: float = 0.2         # s
    solver_iters: int = 16
    slop: float = 1e-4             # allowed penetration, m
    contact_tol: float = 1e-3      # contact detection band above the plane, m
    restitution_min_speed: float = 0.05  # m/s; slower impacts are resting contact

    def __post_init__(self):
        if min(self.internal_dt, self.record_hz, self.max_time, self.rest_lin_vel,
               self.rest_ang_vel, self.rest_hold, self.topple_deg) <= 0:
            raise SimError("simulation thresholds must be positive")
        if abs(self.substeps_per_record * self.internal_dt - 1.0 / self.record_hz) > 1e-12:
            raise SimError("internal_dt must divide 1/record_hz exactly")

    @property
    def substeps_per_record(self) -> int:
        return round(1.0 / (self.record_hz * self.internal_dt))

    @property
    def record_dt(self) -> float:
        return 1.0 / self.record_hz


@dataclass(frozen=True)
class ImpulseSpec:
    impulse: np.ndarray            # N*s, world frame
    application_point: np.ndarray  # m, world frame

    def __post_init__(self):
        j = np.asarray(self.impulse, dtype=np.float64)
        p = np.asarray(self.application_point, dtype=np.float64)
        if not (np.all(np.isfinite(j)) and np.all(np.isfinite(p))):
            raise SimError("non-finite impulse spec")
        object.__setattr__(self, "impulse", j)
        object.__setattr__(self, "application_point", p)


@dataclass(frozen=True)
class ImpulseRanges:
    """Sampling config for random impulses.

    Magnitudes are per unit mass (N*s/kg), so the induced speed range does
    not depend on density. The direction's vertical component is clamped to
    max_vertical_frac times the horizontal magnitude (1.0 = the default
    horizontal-dominance rule; smaller values give flatter hits).
    """

    mag_per_kg: tuple = (0.5, 6.0)
    point_halfwidth: float = 0.15  # m, box around the center of mass
    max_vertical_frac: float = 1.0


@dataclass(frozen=True)
class Trajectory:
    object_id: str
    dt: float                      # s between recorded states
    states: tuple                  # ObjectState sequence
    toppled: bool
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.states) < 1:
            raise SimError("trajectory must contain at least one state")
        if self.toppled != any(not s.stable for s in self.states):
            raise SimError("toppled flag inconsistent with state stability")

    def __len__(self) -> int:
        return len(self.states)


# ---------------------------------------------------------------------------
# body construction and impulses
# ---------------------------------------------------------------------------

def make_body(mesh: Mesh, density: float, mu: float, restitution: float) -> RigidBody:
    """Build a simulation body: convex-hull collider + exact mass properties."""
    props = mass_properties(mesh, density)  # raises on open meshes
    hull = ConvexHull(mesh.vertices)
    pts = mesh.vertices[np.sort(hull.vertices)] - props.center_of_mass
    return RigidBody(mesh=mesh, collider_points=pts, mass_props=props,
                     friction_mu=mu, restitution=restitution)


def apply_impulse(body: RigidBody, state: ObjectState, spec: ImpulseSpec) -> ObjectState:
    """Instantaneous impulse at a world point; body frame origin is the COM."""
    m = body.mass_props.mass
    r = spec.application_point - state.position
    from .geom import quat_to_matrix
    rot = quat_to_matrix(state.orientation)
    inertia_w = rot @ body.mass_props.inertia_body @ rot.T
    dv = spec.impulse / m
    dw = np.linalg.solve(inertia_w, np.cross(r, spec.impulse))
    return ObjectState(state.position, state.orientation,
                       state.lin_vel + dv, state.ang_vel + dw, state.stable)


def random_impulse(rng_seed: int, body: RigidBody, config: ImpulseRanges = ImpulseRanges(),
                   com_world=None) -> ImpulseSpec:
    """Random impulse: uniform direction/magnitude/application point."""
    rng = np.random.default_rng(rng_seed)
    d = rng.normal(size=3)
    n = np.linalg.norm(d)
    if n < 1e-12:
        d = np.array([1.0, 0.0, 0.0])
    else:
        d = d / n
    horiz = math.hypot(d[0], d[1])
    if abs(d[2]) > config.max_vertical_frac * horiz:
        d[2] = math.copysign(config.max_vertical_frac * horiz, d[2]) if horiz > 0 else 0.0
        n = np.linalg.norm(d)
        d = d / n if n > 0 else np.array([1.0, 0.0, 0.0])
    mag = rng.uniform(*config.mag_per_kg) * body.mass_props.mass
    com = np.zeros(3) if com_world is None else np.asarray(com_world, dtype=np.float64)
    point = com + rng.uniform(-config.point_halfwidth, config.point_halfwidth, size=3)
    return ImpulseSpec(impulse=mag * d, application_point=point)


def is_at_rest(state: ObjectState, params: SimParams) -> bool:
    return (np.linalg.norm(state.lin_vel) < params.rest_lin_vel
            and np.linalg.norm(state.ang_vel) < params.rest_ang_vel)


def rest_height(body: RigidBody) -> float:
    """COM height that puts the lowest collider point on the plane (upright)."""
    return -float(body.collider_points[:, 2].min())


def rest_state(body: RigidBody) -> ObjectState:
    return ObjectState.at_rest(np.array([0.0, 0.0, rest_height(body)]))


# ---------------------------------------------------------------------------
# contact kernel
# ---------------------------------------------------------------------------

@njit(cache=True)
def _substep_kernel(s, pts, inv_m, ib, inv_ib, mu, e, e_thresh, g, dt, slop,
                    contact_tol, iters, rest_lin, rest_ang, wp, acc_n, acc_t, cidx):
    """One internal step. s = [pos(3), quat(4), vel(3), omg(3)], mutated."""
    # gravity
    s[9] -= g * dt

    qw, qx, qy, qz = s[3], s[4], s[5], s[6]
    # rotation matrix
    rm = np.empty((3, 3))
    rm[0, 0] = 1.0 - 2.0 * (qy * qy + qz * qz)
    rm[0, 1] = 2.0 * (qx * qy - qw * qz)
    rm[0, 2] = 2.0 * (qx * qz + qw * qy)
    rm[1, 0] = 2.0 * (qx * qy + qw * qz)
    rm[1, 1] = 1.0 - 2.0 * (qx * qx + qz * qz)
    rm[1, 2] = 2.0 * (qy * qz - qw * qx)
    rm[2, 0] = 2.0 * (qx * qz - qw * qy)
    rm[2, 1] = 2.0 * (qy * qz + qw * qx)
    rm[2, 2] = 1.0 - 2.0 * (qx * qx + qy * qy)

    # implicit gyroscopic update in the body frame (one Newton step);
    # slightly dissipative, keeps tumbling stable without energy gain
    wbx = rm[0, 0] * s[10] + rm[1, 0] * s[11] + rm[2, 0] * s[12]
    wby = rm[0, 1] * s[10] + rm[1, 1] * s[11] + rm[2, 1] * s[12]
    wbz = rm[0, 2] * s[10] + rm[1, 2] * s[11] + rm[2, 2] * s[12]
    lbx = ib[0, 0] * wbx + ib[0, 1] * wby + ib[0, 2] * wbz
    lby = ib[1, 0] * wbx + ib[1, 1] * wby + ib[1, 2] * wbz
    lbz = ib[2, 0] * wbx + ib[2, 1] * wby + ib[2, 2] * wbz
    fx = dt * (wby * lbz - wbz * lby)
    fy = dt * (wbz * lbx - wbx * lbz)
    fz = dt * (wbx * lby - wby * lbx)
    # Jacobian J = I + dt*(skew(w) I - skew(I w))
    jm = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            jm[i, j] = ib[i, j]
    jm[0, 0] += dt * (-wbz * ib[1, 0] + wby * ib[2, 0])
    jm[0, 1] += dt * (-wbz * ib[1, 1] + wby * ib[2, 1] + lbz)
    jm[0, 2] += dt * (-wbz * ib[1, 2] + wby * ib[2, 2] - lby)
    jm[1, 0] += dt * (wbz * ib[0, 0] - wbx * ib[2, 0] - lbz)
    jm[1, 1] += dt * (wbz * ib[0, 1] - wbx * ib[2, 1])
    jm[1, 2] += dt * (wbz * ib[0, 2] - wbx * ib[2, 2] + lbx)
    jm[2, 0] += dt * (-wby * ib[0, 0] + wbx * ib[1, 0] + lby)
    jm[2, 1] += dt * (-wby * ib[0, 1] + wbx * ib[1, 1] - lbx)
    jm[2, 2] += dt * (-wby * ib[0, 2] + wbx * ib[1, 2])
    det = (jm[0, 0] * (jm[1, 1] * jm[2, 2] - jm[1, 2] * jm[2, 1])
           - jm[0, 1] * (jm[1, 0] * jm[2, 2] - jm[1, 2] * jm[2, 0])
           + jm[0, 2] * (jm[1, 0] * jm[2, 1] - jm[1, 1] * jm[2, 0]))
    if abs(det) > 1e-300:
        inv_det = 1.0 / det
        dwx = ((jm[1, 1] * jm[2, 2] - jm[1, 2] * jm[2, 1]) * fx
               + (jm[0, 2] * jm[2, 1] - jm[0, 1] * jm[2, 2]) * fy
               + (jm[0, 1] * jm[1, 2] - jm[0, 2] * jm[1, 1]) * fz) * inv_det
        dwy = ((jm[1, 2] * jm[2, 0] - jm[1, 0] * jm[2, 2]) * fx
               + (jm[0, 0] * jm[2, 2] - jm[0, 2] * jm[2, 0]) * fy
               + (jm[0, 2] * jm[1, 0] - jm[0, 0] * jm[1, 2]) * fz) * inv_det
        dwz = ((jm[1, 0] * jm[2, 1] - jm[1, 1] * jm[2, 0]) * fx
               + (jm[0, 1] * jm[2, 0] - jm[0, 0] * jm[2, 1]) * fy
               + (jm[0, 0] * jm[1, 1] - jm[0, 1] * jm[1, 0]) * fz) * inv_det
        wbx -= dwx
        wby -= dwy
        wbz -= dwz
        s[10] = rm[0, 0] * wbx + rm[0, 1] * wby + rm[0, 2] * wbz
        s[11] = rm[1, 0] * wbx + rm[1, 1] * wby + rm[1, 2] * wbz
        s[12] = rm[2, 0] * wbx + rm[2, 1] * wby + rm[2, 2] * wbz

    # world inertia inverse: R * inv_ib * R^T
    iw = np.empty((3, 3))
    for i in range(3):
        t0 = rm[i, 0] * inv_ib[0, 0] + rm[i, 1] * inv_ib[1, 0] + rm[i, 2] * inv_ib[2, 0]
        t1 = rm[i, 0] * inv_ib[0, 1] + rm[i, 1] * inv_ib[1, 1] + rm[i, 2] * inv_ib[2, 1]
        t2 = rm[i, 0] * inv_ib[0, 2] + rm[i, 1] * inv_ib[1, 2] + rm[i, 2] * inv_ib[2, 2]
        for j in range(3):
            iw[i, j] = t0 * rm[j, 0] + t1 * rm[j, 1] + t2 * rm[j, 2]

    npts = pts.shape[0]
    nc = 0
    for k in range(npts):
        bx, by, bz = pts[k, 0], pts[k, 1], pts[k, 2]
        wx = rm[0, 0] * bx + rm[0, 1] * by + rm[0, 2] * bz
        wy = rm[1, 0] * bx + rm[1, 1] * by + rm[1, 2] * bz
        wz = rm[2, 0] * bx + rm[2, 1] * by + rm[2, 2] * bz
        wp[k, 0] = wx
        wp[k, 1] = wy
        wp[k, 2] = wz
        # contact band, plus predictive contact for points that would
        # sweep through the plane within this substep (fast impacts)
        z = s[2] + wz
        if z < contact_tol or z + (s[9] + s[10] * wy - s[11] * wx) * dt < 0.0:
            cidx[nc] = k
            nc += 1

    if nc > 0:
        # per-contact normal effective mass and restitution bias
        kn = np.empty(nc)
        bn = np.empty(nc)
        for c in range(nc):
            k = cidx[c]
            rx, ry, rz = wp[k, 0], wp[k, 1], wp[k, 2]
            # r x n with n = +z is (ry, -rx, 0)
            cx, cy = ry, -rx
            tx = iw[0, 0] * cx + iw[0, 1] * cy
            ty = iw[1, 0] * cx + iw[1, 1] * cy
            kn[c] = inv_m + cx * tx + cy * ty
            un = s[9] + (s[10] * ry - s[11] * rx)
            bn[c] = -e * un if un < -e_thresh else 0.0
            acc_n[c] = 0.0
            acc_t[c, 0] = 0.0
            acc_t[c, 1] = 0.0

        for _ in range(iters):
            for c in range(nc):
                k = cidx[c]
                rx, ry, rz = wp[k, 0], wp[k, 1], wp[k, 2]
                # normal impulse
                un = s[9] + (s[10] * ry - s[11] * rx)
                dl = -(un - bn[c]) / kn[c]
                new_n = acc_n[c] + dl
                if new_n < 0.0:
                    new_n = 0.0
                dl = new_n - acc_n[c]
                acc_n[c] = new_n
                if dl != 0.0:
                    s[9] += inv_m * dl
                    cx, cy = ry * dl, -rx * dl
                    s[10] += iw[0, 0] * cx + iw[0, 1] * cy
                    s[11] += iw[1, 0] * cx + iw[1, 1] * cy
                    s[12] += iw[2, 0] * cx + iw[2, 1] * cy
                # friction impulse, tangential plane
                ux = s[7] + (s[11] * rz - s[12] * ry)
                uy = s[8] + (s[12] * rx - s[10] * rz)
                sp = math.sqrt(ux * ux + uy * uy)
                max_f = mu * acc_n[c]
                if sp > 1e-12 and max_f > 0.0:
                    tx = -ux / sp
                    ty = -uy / sp
                    # r x t, t = (tx, ty, 0)
                    c0 = ry * 0.0 - rz * ty
                    c1 = rz * tx - rx * 0.0
                    c2 = rx * ty - ry * tx
                    i0 = iw[0, 0] * c0 + iw[0, 1] * c1 + iw[0, 2] * c2
                    i1 = iw[1, 0] * c0 + iw[1, 1] * c1 + iw[1, 2] * c2
                    i2 = iw[2, 0] * c0 + iw[2, 1] * c1 + iw[2, 2] * c2
                    # (I^-1 (r x t)) x r, dot t
                    gx = i1 * rz - i2 * ry
                    gy = i2 * rx - i0 * rz
                    kt = inv_m + gx * tx + gy * ty
                    dlt = sp / kt
                    n0 = acc_t[c, 0] + dlt * tx
                    n1 = acc_t[c, 1] + dlt * ty
                    norm = math.sqrt(n0 * n0 + n1 * n1)
                    if norm > max_f:
                        sc = max_f / norm
                        n0 *= sc
                        n1 *= sc
                    d0 = n0 - acc_t[c, 0]
                    d1 = n1 - acc_t[c, 1]
                    acc_t[c, 0] = n0
                    acc_t[c, 1] = n1
                    if d0 != 0.0 or d1 != 0.0:
                        s[7] += inv_m * d0
                        s[8] += inv_m * d1
                        c0 = ry * 0.0 - rz * d1
                        c1 = rz * d0 - rx * 0.0
                        c2 = rx * d1 - ry * d0
                        s[10] += iw[0, 0] * c0 + iw[0, 1] * c1 + iw[0, 2] * c2
                        s[11] += iw[1, 0] * c0 + iw[1, 1] * c1 + iw[1, 2] * c2
                        s[12] += iw[2, 0] * c0 + iw[2, 1] * c1 + iw[2, 2] * c2

    # sleep-snap: a supported body below the rest thresholds is exactly at
    # rest; kills slow solver-residual drift during the at-rest tail
    if nc > 0:
        if (s[7] * s[7] + s[8] * s[8] + s[9] * s[9] < rest_lin * rest_lin
                and s[10] * s[10] + s[11] * s[11] + s[12] * s[12] < rest_ang * rest_ang):
            for i in range(7, 13):
                s[i] = 0.0

    # integrate position
    s[0] += s[7] * dt
    s[1] += s[8] * dt
    s[2] += s[9] * dt

    # integrate orientation: quat <- exp(omega*dt) * quat
    ox, oy, oz = s[10] * dt, s[11] * dt, s[12] * dt
    ang = math.sqrt(ox * ox + oy * oy + oz * oz)
    if ang < 1e-12:
        dw, f = 1.0, 0.5
    else:
        dw, f = math.cos(0.5 * ang), math.sin(0.5 * ang) / ang
    dx, dy, dz = f * ox, f * oy, f * oz
    nw = dw * qw - dx * qx - dy * qy - dz * qz
    nx = dw * qx + dx * qw + dy * qz - dz * qy
    ny = dw * qy - dx * qz + dy * qw + dz * qx
    nz = dw * qz + dx * qy - dy * qx + dz * qw
    inv = 1.0 / math.sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
    if nw < 0.0:
        inv = -inv
    s[3], s[4], s[5], s[6] = nw * inv, nx * inv, ny * inv, nz * inv

    # positional projection out of the plane (allow slop penetration)
    qw, qx, qy, qz = s[3], s[4], s[5], s[6]
    r20 = 2.0 * (qx * qz - qw * qy)
    r21 = 2.0 * (qy * qz + qw * qx)
    r22 = 1.0 - 2.0 * (qx * qx + qy * qy)
    min_z = 1e30
    for k in range(npts):
        wz = r20 * pts[k, 0] + r21 * pts[k, 1] + r22 * pts[k, 2]
        if wz < min_z:
            min_z = wz
    min_z += s[2]
    if min_z < -slop:
        s[2] += (-slop - min_z)


def _state_to_vec(state: ObjectState) -> np.ndarray:
    s = np.empty(13)
    s[0:3] = state.position
    s[3:7] = state.orientation
    s[7:10] = state.lin_vel
    s[10:13] = state.ang_vel
    return s


def _vec_to_state(s: np.ndarray, topple_deg: float) -> ObjectState:
    q = quat_normalize(s[3:7])
    stable = up_axis_tilt(q) <= topple_deg
    return ObjectState(s[0:3].copy(), q, s[7:10].copy(), s[10:13].copy(), stable)


def _scratch(body: RigidBody):
    n = len(body.collider_points)
    return (np.empty((n, 3)), np.empty(n), np.empty((n, 2)),
            np.empty(n, dtype=np.int64))


def step(body: RigidBody, state: ObjectState, params: SimParams) -> ObjectState:
    """Advance one internal_dt; pure function of (body, state, params)."""
    s = _state_to_vec(state)
    if not np.all(np.isfinite(s)):
        raise SimError("non-finite state")
    wp, acc_n, acc_t, cidx = _scratch(body)
    mp = body.mass_props
    _substep_kernel(s, body.collider_points, 1.0 / mp.mass,
                    np.ascontiguousarray(mp.inertia_body),
                    np.linalg.inv(mp.inertia_body), body.friction_mu,
                    body.restitution, params.restitution_min_speed,
                    params.gravity, params.internal_dt, params.slop,
                    params.contact_tol, params.solver_iters,
                    params.rest_lin_vel, params.rest_ang_vel,
                    wp, acc_n, acc_t, cidx)
    return _vec_to_state(s, params.topple_deg)


def simulate(body: RigidBody, spec: ImpulseSpec, params: SimParams = SimParams(),
             object_id: str = "object", seed: int | None = None,
             initial_state: ObjectState | None = None) -> Trajectory:
    """Run one trajectory from the upright rest pose hit by `spec`.

    Records at record_hz until the at-rest criterion has held for rest_hold
    seconds or max_time is reached. Simulation continues after toppling.
    """
    start = rest_state(body) if initial_state is None else initial_state
    from .geom import quat_to_matrix
    world_z = (start.position + (quat_to_matrix(start.orientation)
                                 @ body.collider_points.T).T)[:, 2]
    if world_z.min() < -params.slop:
        raise SimError("body interpenetrates the plane at start")
    state0 = apply_impulse(body, start, spec)

    s = _state_to_vec(state0)
    wp, acc_n, acc_t, cidx = _scratch(body)
    mp = body.mass_props
    inv_m = 1.0 / mp.mass
    ib = np.ascontiguousarray(mp.inertia_body)
    inv_ib = np.linalg.inv(mp.inertia_body)
    dt = params.internal_dt
    spr = params.substeps_per_record
    n_records = int(round(params.max_time * params.record_hz))
    rest_lin2 = params.rest_lin_vel ** 2
    rest_ang2 = params.rest_ang_vel ** 2
    hold_steps = int(math.ceil(params.rest_hold / dt))

    states = [_vec_to_state(s, params.topple_deg)]
    rest_run = 0
    if s[7] * s[7] + s[8] * s[8] + s[9] * s[9] < rest_lin2 \
            and s[10] * s[10] + s[11] * s[11] + s[12] * s[12] < rest_ang2:
        rest_run = 1  # initial state already at rest
    for _ in range(n_records):
        for _ in range(spr):
            _substep_kernel(s, body.collider_points, inv_m, ib, inv_ib,
                            body.friction_mu, body.restitution,
                            params.restitution_min_speed, params.gravity,
                            dt, params.slop, params.contact_tol,
                            params.solver_iters, params.rest_lin_vel,
                            params.rest_ang_vel, wp, acc_n, acc_t, cidx)
            if s[7] * s[7] + s[8] * s[8] + s[9] * s[9] < rest_lin2 \
                    and s[10] * s[10] + s[11] * s[11] + s[12] * s[12] < rest_ang2:
                rest_run += 1
            else:
                rest_run = 0
        states.append(_vec_to_state(s, params.topple_deg))
        if rest_run >= hold_steps:
            break

    toppled = any(not st.stable for st in states)
    meta = {
        "mu": body.friction_mu,
        "restitution": body.restitution,
        "impulse": np.asarray(spec.impulse).tolist(),
        "application_point": np.asarray(spec.application_point).tolist(),
        "seed": seed,
    }
    return Trajectory(object_id=object_id, dt=params.record_dt,
                      states=tuple(states), toppled=toppled, meta=meta)


def total_energy(body: RigidBody, state: ObjectState, params: SimParams) -> float:
    """Kinetic + gravitational potential energy of the body (J)."""
    from .geom import quat_to_matrix
    m = body.mass_props.mass
    rot = quat_to_matrix(state.orientation)
    inertia_w = rot @ body.mass_props.inertia_body @ rot.T
    ke = 0.5 * m * float(state.lin_vel @ state.lin_vel)
    ke += 0.5 * float(state.ang_vel @ (inertia_w @ state.ang_vel))
    return ke + m * params.gravity * float(state.position[2])
