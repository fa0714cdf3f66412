"""Persistence: dataset directories, trajectory files, checkpoints.

All formats are versioned text (`v1`), floats printed with %.17g so every
round-trip is bit-exact. Dataset directories are written object files
first and the manifest last (write-temp-then-rename), so a reader never
observes a partial dataset. Generation is deterministic for a fixed
master seed: per-object and per-trajectory seeds are derived through
numpy SeedSequence spawn keys.

Layout:
    DIR/manifest.json
    DIR/objects/<object_id>.obj          mesh (OBJ subset: v/f lines)
    DIR/objects/<object_id>.pts          point cloud, one point per line
    DIR/trajectories/<object_id>__NNN.traj

Trajectory file: header
    # v1 object_id dt n_steps mu restitution seed jx jy jz px py pz
then one line per state, `t px py pz qw qx qy qz vx vy vz wx wy wz s`
where s is 1 when the state is unstable (tilt past the topple threshold).
"""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import net, shapegen, simkit
from .geom import Mesh, ObjectState, PointCloud, read_point_cloud, sample_surface, write_point_cloud
from .net import NetConfig, Model
from .simkit import ImpulseRanges, SimParams, Trajectory


class StoreError(ValueError):
    pass


def _fmt(x: float) -> str:
    return "%.17g" % x


def _atomic_write(path, text: str, binary: bool = False):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb" if binary else "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def write_trajectory(traj: Trajectory, path) -> None:
    meta = traj.meta
    j = meta.get("impulse", [0.0, 0.0, 0.0])
    p = meta.get("application_point", [0.0, 0.0, 0.0])
    seed = meta.get("seed")
    header = "# v1 %s %s %d %s %s %d %s %s %s %s %s %s\n" % (
        traj.object_id, _fmt(traj.dt), len(traj.states),
        _fmt(meta.get("mu", 0.0)), _fmt(meta.get("restitution", 0.0)),
        -1 if seed is None else int(seed),
        _fmt(j[0]), _fmt(j[1]), _fmt(j[2]), _fmt(p[0]), _fmt(p[1]), _fmt(p[2]))
    lines = [header]
    for k, st in enumerate(traj.states):
        row = [k * traj.dt, *st.position, *st.orientation, *st.lin_vel, *st.ang_vel]
        lines.append(" ".join(_fmt(x) for x in row) + (" 0\n" if st.stable else " 1\n"))
    _atomic_write(path, "".join(lines))


def read_trajectory(path) -> Trajectory:
    with open(path) as f:
        header = f.readline()
        parts = header.split()
        if len(parts) != 14 or parts[0] != "#" or parts[1] != "v1":
            raise StoreError(f"{path}:1: bad trajectory header")
        object_id = parts[2]
        dt = float(parts[3])
        n_steps = int(parts[4])
        mu, restitution = float(parts[5]), float(parts[6])
        seed = int(parts[7])
        impulse = [float(x) for x in parts[8:11]]
        point = [float(x) for x in parts[11:14]]
        states = []
        for ln, line in enumerate(f, 2):
            cols = line.split()
            if not cols:
                continue
            if len(cols) != 15:
                raise StoreError(f"{path}:{ln}: expected 15 columns, got {len(cols)}")
            v = [float(x) for x in cols]
            k = len(states)
            if abs(v[0] - k * dt) > 1e-9:
                raise StoreError(f"{path}:{ln}: timestamp {v[0]} != {k * dt}")
            states.append(ObjectState(v[1:4], v[4:8], v[8:11], v[11:14],
                                      stable=cols[14] == "0"))
    if len(states) != n_steps:
        raise StoreError(f"{path}: header says {n_steps} states, file has {len(states)}")
    meta = {"mu": mu, "restitution": restitution, "impulse": impulse,
            "application_point": point, "seed": None if seed < 0 else seed}
    return Trajectory(object_id=object_id, dt=dt, states=tuple(states),
                      toppled=any(not s.stable for s in states), meta=meta)


# ---------------------------------------------------------------------------
# meshes (OBJ subset)
# ---------------------------------------------------------------------------

def write_mesh(mesh: Mesh, path) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append("v %s %s %s\n" % (_fmt(v[0]), _fmt(v[1]), _fmt(v[2])))
    for t in mesh.triangles:
        lines.append("f %d %d %d\n" % (t[0] + 1, t[1] + 1, t[2] + 1))
    _atomic_write(path, "".join(lines))


def read_mesh(path) -> Mesh:
    verts, tris = [], []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            cols = line.split()
            if not cols or cols[0].startswith("#"):
                continue
            if cols[0] == "v":
                verts.append([float(x) for x in cols[1:4]])
            elif cols[0] == "f":
                tris.append([int(x.split("/")[0]) - 1 for x in cols[1:4]])
    return Mesh(np.array(verts), np.array(tris))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def write_checkpoint(model: Model, path) -> None:
    """Text manifest (name, shape, byte offset) + little-endian f64 blob."""
    cfg = model.config
    names = sorted(model.params)
    head = ["# v1 checkpoint %d\n" % len(names)]
    head.append("# config predictor=%s hidden=%d encoder=%s head=%d mlp=%d\n" % (
        cfg.predictor, cfg.hidden, ",".join(str(w) for w in cfg.encoder_widths),
        cfg.head_width, cfg.mlp_width))
    blobs = []
    offset = 0
    for name in names:
        arr = model.params[name]
        head.append("%s %s %d\n" % (name, "x".join(str(d) for d in arr.shape), offset))
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        blobs.append(raw)
        offset += len(raw)
    head.append("# blob %d\n" % offset)
    _atomic_write(path, "".join(head).encode("ascii") + b"".join(blobs), binary=True)


def read_checkpoint(path) -> Model:
    with open(path, "rb") as f:
        data = f.read()
    try:
        first_nl = data.index(b"\n")
        head = data[:first_nl].decode("ascii").split()
        if head[:3] != ["#", "v1", "checkpoint"]:
            raise StoreError(f"{path}: not a checkpoint file")
        n_entries = int(head[3])
        pos = first_nl + 1
        cfg_end = data.index(b"\n", pos)
        cfg_cols = data[pos:cfg_end].decode("ascii").split()
        if cfg_cols[:2] != ["#", "config"]:
            raise StoreError(f"{path}: missing config line")
        kv = dict(c.split("=", 1) for c in cfg_cols[2:])
        config = NetConfig(predictor=kv["predictor"], hidden=int(kv["hidden"]),
                           encoder_widths=tuple(int(w) for w in kv["encoder"].split(",")),
                           head_width=int(kv["head"]), mlp_width=int(kv["mlp"]))
        pos = cfg_end + 1
        entries = []
        for _ in range(n_entries):
            end = data.index(b"\n", pos)
            name, shape_s, off_s = data[pos:end].decode("ascii").split()
            shape = tuple(int(d) for d in shape_s.split("x"))
            entries.append((name, shape, int(off_s)))
            pos = end + 1
        end = data.index(b"\n", pos)
        blob_cols = data[pos:end].decode("ascii").split()
        if blob_cols[:2] != ["#", "blob"]:
            raise StoreError(f"{path}: missing blob marker")
        n_bytes = int(blob_cols[2])
        blob = data[end + 1:]
    except (ValueError, IndexError, KeyError) as exc:
        raise StoreError(f"{path}: malformed checkpoint ({exc})") from exc
    if len(blob) != n_bytes:
        raise StoreError(f"{path}: blob length {len(blob)} != declared {n_bytes}")
    params = {}
    for name, shape, off in entries:
        count = int(np.prod(shape))
        raw = blob[off:off + 8 * count]
        if len(raw) != 8 * count:
            raise StoreError(f"{path}: truncated blob for parameter {name}")
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    expected = net.init_params(config, seed=0)
    if set(expected) != set(params):
        raise StoreError(f"{path}: parameter names do not match the config")
    for name in expected:
        if expected[name].shape != params[name].shape:
            raise StoreError(f"{path}: parameter {name} has shape "
                             f"{params[name].shape}, config expects {expected[name].shape}")
    return Model(config=config, params=params)


# ---------------------------------------------------------------------------
# dataset manifest and loading
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetManifest:
    version: int
    objects: list      # {object_id, category, cloud, mesh}
    trajectories: list  # {path, object_id, split}
    config: dict


@dataclass
class ObjectRecord:
    object_id: str
    category: str
    cloud: PointCloud
    mesh_path: str


@dataclass
class TrajRecord:
    trajectory: Trajectory
    object_id: str
    split: str


@dataclass
class Dataset:
    root: str
    objects: dict
    trajectories: list
    config: dict

    def split_trajectories(self, split: str) -> list:
        return [t for t in self.trajectories if t.split == split]

    def categories(self) -> set:
        return {o.category for o in self.objects.values()}


def write_manifest(manifest: DatasetManifest, root) -> None:
    _atomic_write(os.path.join(root, "manifest.json"),
                  json.dumps(asdict(manifest), indent=1, sort_keys=True) + "\n")


def read_manifest(root) -> DatasetManifest:
    path = os.path.join(root, "manifest.json")
    with open(path) as f:
        d = json.load(f)
    if d.get("version") != 1:
        raise StoreError(f"{path}: unsupported manifest version {d.get('version')}")
    return DatasetManifest(version=1, objects=d["objects"],
                           trajectories=d["trajectories"], config=d["config"])


def load_dataset(root) -> Dataset:
    """Load a dataset directory; every referenced file must exist."""
    manifest = read_manifest(root)
    objects = {}
    for o in manifest.objects:
        oid = o["object_id"]
        if oid in objects:
            raise StoreError(f"duplicate object id {oid}")
        objects[oid] = ObjectRecord(
            object_id=oid, category=o["category"],
            cloud=read_point_cloud(os.path.join(root, o["cloud"])),
            mesh_path=os.path.join(root, o["mesh"]))
    trajectories = []
    for t in manifest.trajectories:
        if t["object_id"] not in objects:
            raise StoreError(f"trajectory references unknown object {t['object_id']}")
        trajectories.append(TrajRecord(
            trajectory=read_trajectory(os.path.join(root, t["path"])),
            object_id=t["object_id"], split=t["split"]))
    return Dataset(root=str(root), objects=objects, trajectories=trajectories,
                   config=manifest.config)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenConfig:
    out_dir: str
    shapes: tuple = ("box",)
    num_objects: int = 20
    sims_per_object: int = 5
    seed: int = 0
    mu: float = 0.5
    mu_range: tuple | None = None      # (lo, hi) overrides mu when set
    restitution: float = 0.2
    density: float = 1000.0
    cloud_points: int = 1024
    test_objects: int | None = None    # default: 10% of objects, at least 1
    impulse: ImpulseRanges = field(default_factory=ImpulseRanges)
    sim: SimParams = field(default_factory=SimParams)


def _object_seed(master: int, idx: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(idx,)).generate_state(1)[0])


def _sim_seed(master: int, idx: int, k: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(idx, k)).generate_state(1)[0])


def _gen_object(args):
    """Worker: build one object, simulate its trajectories, write files."""
    cfg, idx = args
    category = cfg.shapes[idx % len(cfg.shapes)]
    oid = f"{category}_{idx:04d}"
    oseed = _object_seed(cfg.seed, idx)
    mesh = shapegen.generate_object(category, oseed)
    cloud = sample_surface(mesh, cfg.cloud_points, oseed + 2)

    mesh_rel = os.path.join("objects", oid + ".obj")
    cloud_rel = os.path.join("objects", oid + ".pts")
    write_mesh(mesh, os.path.join(cfg.out_dir, mesh_rel))
    write_point_cloud(cloud, os.path.join(cfg.out_dir, cloud_rel))

    traj_entries = []
    for k in range(cfg.sims_per_object):
        sseed = _sim_seed(cfg.seed, idx, k)
        rng = np.random.default_rng(sseed)
        mu = rng.uniform(*cfg.mu_range) if cfg.mu_range else cfg.mu
        body = simkit.make_body(mesh, cfg.density, mu, cfg.restitution)
        spec = simkit.random_impulse(sseed + 1, body, cfg.impulse,
                                     com_world=[0, 0, simkit.rest_height(body)])
        traj = simkit.simulate(body, spec, cfg.sim, object_id=oid, seed=sseed)
        rel = os.path.join("trajectories", f"{oid}__{k:03d}.traj")
        write_trajectory(traj, os.path.join(cfg.out_dir, rel))
        traj_entries.append(rel)
    return oid, category, mesh_rel, cloud_rel, traj_entries


def worker_count() -> int:
    env = os.environ.get("PLANARDYN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def generate_dataset(cfg: GenConfig) -> Dataset:
    """Write a full dataset directory; byte-identical for a fixed seed."""
    os.makedirs(os.path.join(cfg.out_dir, "objects"), exist_ok=True)
    os.makedirs(os.path.join(cfg.out_dir, "trajectories"), exist_ok=True)
    n_test = cfg.test_objects
    if n_test is None:
        n_test = max(1, round(0.1 * cfg.num_objects))
    if n_test >= cfg.num_objects:
        raise StoreError("test_objects must be smaller than num_objects")

    tasks = [(cfg, i) for i in range(cfg.num_objects)]
    workers = min(worker_count(), cfg.num_objects)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_gen_object, tasks, chunksize=4))
    else:
        results = [_gen_object(t) for t in tasks]

    objects, trajectories = [], []
    for i, (oid, category, mesh_rel, cloud_rel, traj_rels) in enumerate(results):
        split = "test" if i >= cfg.num_objects - n_test else "train"
        objects.append({"object_id": oid, "category": category,
                        "cloud": cloud_rel, "mesh": mesh_rel})
        for rel in traj_rels:
            trajectories.append({"path": rel, "object_id": oid, "split": split})

    snapshot = {
        "shapes": list(cfg.shapes), "num_objects": cfg.num_objects,
        "sims_per_object": cfg.sims_per_object, "seed": cfg.seed,
        "mu": cfg.mu, "mu_range": list(cfg.mu_range) if cfg.mu_range else None,
        "restitution": cfg.restitution, "density": cfg.density,
        "cloud_points": cfg.cloud_points, "test_objects": n_test,
        "impulse_mag_per_kg": list(cfg.impulse.mag_per_kg),
        "impulse_point_halfwidth": cfg.impulse.point_halfwidth,
        "record_hz": cfg.sim.record_hz, "internal_dt": cfg.sim.internal_dt,
        "max_time": cfg.sim.max_time,
    }
    write_manifest(DatasetManifest(version=1, objects=objects,
                                   trajectories=trajectories, config=snapshot),
                   cfg.out_dir)
    return load_dataset(cfg.out_dir)
