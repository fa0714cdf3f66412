import hashlib
import os

import numpy as np
import pytest

from planardyn import net, simkit, store
from planardyn.geom import ObjectState
from planardyn.net import Model, NetConfig
from planardyn.shapegen import generate_object
from planardyn.simkit import ImpulseRanges, SimParams, Trajectory
from planardyn.store import (
    GenConfig,
    StoreError,
    generate_dataset,
    load_dataset,
    read_checkpoint,
    read_mesh,
    read_trajectory,
    write_checkpoint,
    write_mesh,
    write_trajectory,
)


def simulated_trajectory(seed=5):
    mesh = generate_object("box", 42)
    body = simkit.make_body(mesh, 1000.0, 0.5, 0.2)
    spec = simkit.random_impulse(seed, body,
                                 com_world=[0, 0, simkit.rest_height(body)])
    return simkit.simulate(body, spec, SimParams(), object_id="box_0042", seed=seed)


class TestTrajectoryFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        traj = simulated_trajectory()
        path = tmp_path / "t.traj"
        write_trajectory(traj, path)
        back = read_trajectory(path)
        assert back.object_id == traj.object_id
        assert back.dt == traj.dt
        assert back.toppled == traj.toppled
        assert back.meta == traj.meta
        for a, b in zip(traj.states, back.states):
            assert np.array_equal(a.position, b.position)
            assert np.array_equal(a.orientation, b.orientation)
            assert np.array_equal(a.lin_vel, b.lin_vel)
            assert np.array_equal(a.ang_vel, b.ang_vel)
            assert a.stable == b.stable

    def test_wrong_column_count_names_line(self, tmp_path):
        traj = simulated_trajectory()
        path = tmp_path / "t.traj"
        write_trajectory(traj, path)
        lines = path.read_text().splitlines(keepends=True)
        lines[2] = " ".join(lines[2].split()[:13]) + "\n"  # drop two columns
        path.write_text("".join(lines))
        with pytest.raises(StoreError, match=":3:"):
            read_trajectory(path)

    def test_header_count_mismatch(self, tmp_path):
        traj = simulated_trajectory()
        path = tmp_path / "t.traj"
        write_trajectory(traj, path)
        lines = path.read_text().splitlines(keepends=True)
        path.write_text("".join(lines[:-1]))  # drop last state
        with pytest.raises(StoreError, match="header says"):
            read_trajectory(path)

    def test_hand_written_stationary_trajectory(self, tmp_path):
        dt = 1 / 15
        path = tmp_path / "hand.traj"
        path.write_text(
            "# v1 manual %.17g 2 0.5 0.2 -1 0 0 0 0 0 0\n" % dt
            + "0 0 0 0.5 1 0 0 0 0 0 0 0 0 0 0\n"
            + "%.17g 0 0 0.5 1 0 0 0 0 0 0 0 0 0 0\n" % dt)
        traj = read_trajectory(path)
        assert len(traj.states) == 2
        assert not traj.toppled
        targets = net.target_array(traj)
        assert np.array_equal(targets, np.zeros((1, 13)))

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.traj"
        path.write_text("# v2 x 0.066 1 0.5 0.2 -1 0 0 0 0 0 0\n")
        with pytest.raises(StoreError, match="header"):
            read_trajectory(path)


class TestMeshFiles:
    def test_round_trip(self, tmp_path):
        mesh = generate_object("composite", 9)
        path = tmp_path / "m.obj"
        write_mesh(mesh, path)
        back = read_mesh(path)
        assert np.array_equal(mesh.vertices, back.vertices)
        assert np.array_equal(mesh.triangles, back.triangles)
        assert back.closed


class TestCheckpoints:
    def test_round_trip_bit_exact(self, tmp_path):
        model = Model.create(NetConfig(hidden=24, encoder_widths=(8, 16),
                                       head_width=8), seed=3)
        path = tmp_path / "m.ckpt"
        write_checkpoint(model, path)
        back = read_checkpoint(path)
        assert back.config == model.config
        assert set(back.params) == set(model.params)
        for k in model.params:
            assert np.array_equal(model.params[k], back.params[k])

    def test_identical_seeded_models_identical_bytes(self, tmp_path):
        cfg = NetConfig(hidden=16, encoder_widths=(8,), head_width=8)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        write_checkpoint(Model.create(cfg, seed=7), a)
        write_checkpoint(Model.create(cfg, seed=7), b)
        assert a.read_bytes() == b.read_bytes()

    def test_wrong_shape_manifest_rejected(self, tmp_path):
        model = Model.create(NetConfig(hidden=16, encoder_widths=(8,),
                                       head_width=8), seed=1)
        path = tmp_path / "m.ckpt"
        write_checkpoint(model, path)
        data = path.read_bytes()
        mutated = data.replace(b"out_w 16x13", b"out_w 16x14", 1)
        assert mutated != data
        path.write_bytes(mutated)
        with pytest.raises(StoreError):
            read_checkpoint(path)

    def test_truncated_blob_rejected(self, tmp_path):
        model = Model.create(NetConfig(hidden=16, encoder_widths=(8,),
                                       head_width=8), seed=1)
        path = tmp_path / "m.ckpt"
        write_checkpoint(model, path)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(StoreError):
            read_checkpoint(path)

    def test_mlp_checkpoint_round_trip(self, tmp_path):
        model = Model.create(NetConfig(predictor="mlp", mlp_width=16), seed=2)
        path = tmp_path / "m.ckpt"
        write_checkpoint(model, path)
        back = read_checkpoint(path)
        assert back.config.predictor == "mlp"
        assert all(np.array_equal(model.params[k], back.params[k])
                   for k in model.params)


def _dir_digest(root):
    h = hashlib.sha256()
    for dirpath, _, files in sorted(os.walk(root)):
        for fn in sorted(files):
            h.update(fn.encode())
            with open(os.path.join(dirpath, fn), "rb") as f:
                h.update(f.read())
    return h.hexdigest()


class TestDatasetGeneration:
    def test_byte_identical_for_fixed_seed(self, tmp_path):
        kw = dict(shapes=("box", "composite"), num_objects=4, sims_per_object=2,
                  seed=55, test_objects=1,
                  impulse=ImpulseRanges(mag_per_kg=(2.0, 5.0)))
        generate_dataset(GenConfig(out_dir=str(tmp_path / "a"), **kw))
        generate_dataset(GenConfig(out_dir=str(tmp_path / "b"), **kw))
        assert _dir_digest(tmp_path / "a") == _dir_digest(tmp_path / "b")

    def test_manifest_self_validation(self, small_dataset):
        # every referenced file loads; re-loading from disk succeeds
        ds = load_dataset(small_dataset.root)
        assert set(ds.objects) == set(small_dataset.objects)
        assert len(ds.trajectories) == len(small_dataset.trajectories)

    def test_missing_file_detected(self, tmp_path):
        cfg = GenConfig(out_dir=str(tmp_path / "ds"), shapes=("box",),
                        num_objects=3, sims_per_object=1, seed=1, test_objects=1)
        generate_dataset(cfg)
        victim = next((tmp_path / "ds" / "trajectories").iterdir())
        victim.unlink()
        with pytest.raises(OSError):
            load_dataset(tmp_path / "ds")

    def test_split_tags(self, small_dataset):
        tags = {t.split for t in small_dataset.trajectories}
        assert tags == {"train", "test"}
        test_objects = {t.object_id for t in small_dataset.trajectories
                        if t.split == "test"}
        train_objects = {t.object_id for t in small_dataset.trajectories
                         if t.split == "train"}
        assert not (test_objects & train_objects)

    def test_config_snapshot_recorded(self, small_dataset):
        snap = small_dataset.config
        assert snap["mu"] == 0.5
        assert snap["seed"] == 101
        assert snap["impulse_mag_per_kg"] == [3.0, 6.0]
