"""Procedural desk-scale object generation: boxes, cylinders, composites.

Composites are rigid assemblies of box/cylinder parts concatenated into one
mesh (no boolean union; small part overlaps are an accepted approximation
for mass integrals). Every generated mesh is closed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import GeomError, Mesh, merge_meshes, normalize_to_unit_cube

CATEGORIES = ("box", "cylinder", "composite")


@dataclass(frozen=True)
class ShapeSpec:
    kind: str                 # box | cylinder | composite
    base_params: tuple        # kind-specific dimensions (m)
    scale: tuple              # per-axis factors in [0.5, 1.5]

    def __post_init__(self):
        if self.kind not in CATEGORIES:
            raise GeomError(f"unknown shape kind {self.kind!r}")
        if any(not (0.5 <= s <= 1.5) for s in self.scale):
            raise GeomError("scale components must lie in [0.5, 1.5]")
        if any(p <= 0 for p in self.base_params):
            raise GeomError("base params must be positive")


def make_box(dx: float, dy: float, dz: float) -> Mesh:
    """Closed axis-aligned box centered at the origin, 12 triangles."""
    if dx <= 0 or dy <= 0 or dz <= 0:
        raise GeomError("box dimensions must be positive")
    hx, hy, hz = dx / 2.0, dy / 2.0, dz / 2.0
    v = np.array([
        [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
        [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
    ])
    t = np.array([
        [0, 2, 1], [0, 3, 2],  # bottom (-z)
        [4, 5, 6], [4, 6, 7],  # top (+z)
        [0, 1, 5], [0, 5, 4],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [1, 2, 6], [1, 6, 5],  # +x
        [3, 0, 4], [3, 4, 7],  # -x
    ])
    return Mesh(v, t)


def make_cylinder(radius: float, height: float, segments: int = 32) -> Mesh:
    """Closed triangulated cylinder, axis along +z, centered at the origin."""
    if radius <= 0 or height <= 0:
        raise GeomError("cylinder dimensions must be positive")
    if segments < 8:
        raise GeomError("need at least 8 segments")
    n = segments
    ang = 2.0 * np.pi * np.arange(n) / n
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    hz = height / 2.0
    bottom = np.column_stack([ring, np.full(n, -hz)])
    top = np.column_stack([ring, np.full(n, hz)])
    verts = np.vstack([bottom, top, [[0.0, 0.0, -hz]], [[0.0, 0.0, hz]]])
    cb, ct = 2 * n, 2 * n + 1
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris.append([i, j, j + n])           # side
        tris.append([i, j + n, i + n])
        tris.append([cb, j, i])              # bottom cap, outward = -z
        tris.append([ct, i + n, j + n])      # top cap, outward = +z
    return Mesh(verts, np.array(tris))


def _composite_parts(rng: np.random.Generator):
    """Pick one configuration from the generator table.

    Kinds: mug (cylinder body + handle box), bottle2/bottle3 (stacked
    cylinders), speaker (single tall box). Part counts 1..3.
    """
    kind = rng.choice(["mug", "bottle2", "bottle3", "speaker"])
    u = lambda a, b: float(rng.uniform(a, b))
    if kind == "mug":
        r, h = u(0.3, 0.45), u(0.6, 1.0)
        body = make_cylinder(r, h, 24)
        hw = u(0.08, 0.15)
        handle = make_box(hw, u(0.2, 0.3), h * u(0.5, 0.8))
        handle = handle.transformed(offset=[r + hw / 2.0, 0.0, 0.0])
        return kind, [body, handle]
    if kind == "bottle2":
        r, h = u(0.3, 0.45), u(0.5, 0.8)
        rn, hn = r * u(0.35, 0.55), u(0.25, 0.45)
        body = make_cylinder(r, h, 24)
        neck = make_cylinder(rn, hn, 16).transformed(offset=[0.0, 0.0, (h + hn) / 2.0 - 0.01])
        return kind, [body, neck]
    if kind == "bottle3":
        r, h = u(0.3, 0.45), u(0.4, 0.6)
        rs, hs = r * u(0.6, 0.8), u(0.15, 0.3)
        rn, hn = r * u(0.3, 0.45), u(0.15, 0.3)
        body = make_cylinder(r, h, 24)
        shoulder = make_cylinder(rs, hs, 20).transformed(offset=[0.0, 0.0, (h + hs) / 2.0 - 0.01])
        neck = make_cylinder(rn, hn, 16).transformed(offset=[0.0, 0.0, h / 2.0 + hs + hn / 2.0 - 0.02])
        return kind, [body, shoulder, neck]
    # speaker: single tall box
    return kind, [make_box(u(0.4, 0.7), u(0.3, 0.6), u(0.9, 1.4))]


def make_composite(seed: int) -> Mesh:
    """Deterministic multi-part everyday-shape stand-in; always closed."""
    rng = np.random.default_rng(seed)
    _, parts = _composite_parts(rng)
    return merge_meshes(parts)


def random_scaled(mesh: Mesh, rng_seed: int) -> Mesh:
    """Apply per-axis scales from U[0.5, 1.5], then normalize to the unit cube."""
    rng = np.random.default_rng(rng_seed)
    scale = rng.uniform(0.5, 1.5, size=3)
    out, _ = normalize_to_unit_cube(mesh.transformed(scale=scale))
    return out


def base_mesh(kind: str, seed: int) -> Mesh:
    """Canonical base shape for a category; composites vary with the seed."""
    if kind == "box":
        return make_box(1.0, 1.0, 1.0)
    if kind == "cylinder":
        return make_cylinder(0.5, 1.0, 32)
    if kind == "composite":
        return make_composite(seed)
    raise GeomError(f"unknown shape kind {kind!r}")


def generate_object(kind: str, seed: int) -> Mesh:
    """One randomly scaled, unit-cube-normalized object of the category."""
    return random_scaled(base_mesh(kind, seed), seed + 1)
