import numpy as np
import pytest

from planardyn import simkit, store


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Mixed-category dataset shared by training/eval/store tests."""
    root = tmp_path_factory.mktemp("ds") / "small"
    cfg = store.GenConfig(
        out_dir=str(root), shapes=("box", "cylinder"), num_objects=12,
        sims_per_object=3, seed=101, test_objects=3,
        impulse=simkit.ImpulseRanges(mag_per_kg=(3.0, 6.0),
                                     point_halfwidth=0.05,
                                     max_vertical_frac=0.3),
        restitution=0.05)
    return store.generate_dataset(cfg)


@pytest.fixture(scope="session")
def tiny_net_config():
    from planardyn.net import NetConfig
    return NetConfig(hidden=16, encoder_widths=(8, 16, 32), head_width=16)
