"""Object-disjoint splitting, window sampling, and the training loop.

Training is teacher-forced: every step's velocity input comes from the
ground-truth trajectory. Windows of `window_len` steps are drawn at
uniformly random starts, one per usable trajectory per epoch; the LSTM
hidden state is zero-initialized at each window start. Validation loss
(fixed non-overlapping windows over held-out objects) drives early
stopping; the best-validation parameters are returned.

The optimizer update is a single serialized section; for a fixed seed the
whole loop is deterministic and two runs produce identical checkpoints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import net
from . import tensor as T
from .net import LossWeights, Model, NetConfig
from .tensor import AdamState, Tensor, adam_step


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    window_len: int = 15
    batch_size: int = 16
    lr: float = 1e-3
    max_epochs: int = 50
    max_steps: int | None = None     # optional cap on optimizer steps
    patience: int = 10
    val_frac: float = 0.1            # 0 disables validation/early stopping
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    leave_out: str | None = None     # category excluded from train/val

    def __post_init__(self):
        if self.window_len < 2:
            raise TrainError("window_len must be at least 2")
        if not (0.0 <= self.val_frac < 1.0):
            raise TrainError("val_frac must lie in [0, 1)")


@dataclass(frozen=True)
class DatasetSplit:
    train_objects: tuple
    val_objects: tuple
    test_objects: tuple

    def __post_init__(self):
        sets = [set(self.train_objects), set(self.val_objects), set(self.test_objects)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise TrainError("object splits must be disjoint")


def split_by_object(dataset, val_frac: float, seed: int,
                    leave_out: str | None = None) -> DatasetSplit:
    """Partition objects (never trajectories) into train/val/test.

    Manifest test-tagged objects stay in test; with `leave_out`, every
    object of that category moves to test regardless of its tag.
    """
    if leave_out is not None and leave_out not in dataset.categories():
        raise TrainError(f"leave-out category {leave_out!r} not in dataset")
    tagged_train = sorted({t.object_id for t in dataset.trajectories if t.split == "train"})
    tagged_test = sorted({t.object_id for t in dataset.trajectories if t.split == "test"})
    test = list(tagged_test)
    pool = []
    for oid in tagged_train:
        if leave_out is not None and dataset.objects[oid].category == leave_out:
            test.append(oid)
        else:
            pool.append(oid)
    if val_frac == 0.0:
        return DatasetSplit(tuple(pool), (), tuple(sorted(test)))
    if len(pool) < 3:
        raise TrainError("need at least 3 objects to split train/val")
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(pool))
    n_val = min(max(1, round(val_frac * len(pool))), len(pool) - 1)
    val = sorted(order[:n_val])
    train = sorted(order[n_val:])
    return DatasetSplit(tuple(train), tuple(val), tuple(sorted(test)))


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

@dataclass
class Sequence:
    """Precomputed training arrays for one trajectory."""

    object_id: str
    vel_inputs: np.ndarray   # (T, 6)
    targets: np.ndarray      # (T, 13)

    @property
    def steps(self) -> int:
        return len(self.targets)


def prepare_sequences(dataset, object_ids) -> list:
    ids = set(object_ids)
    out = []
    for rec in dataset.trajectories:
        if rec.object_id in ids and len(rec.trajectory.states) >= 2:
            out.append(Sequence(rec.object_id,
                                net.velocity_inputs(rec.trajectory),
                                net.target_array(rec.trajectory)))
    return out


def sample_window(seq: Sequence, window_len: int, rng) -> tuple | None:
    """Uniform random window; None when the trajectory is too short."""
    if seq.steps < window_len:
        return None
    start = int(rng.integers(0, seq.steps - window_len + 1))
    return (seq.vel_inputs[start:start + window_len],
            seq.targets[start:start + window_len])


def fixed_windows(seq: Sequence, window_len: int) -> list:
    """Non-overlapping windows from the start (deterministic validation)."""
    return [(seq.vel_inputs[s:s + window_len], seq.targets[s:s + window_len])
            for s in range(0, seq.steps - window_len + 1, window_len)]


def teacher_forced_pass(model_leaves, config: NetConfig, feature: Tensor,
                        window, weights: LossWeights = LossWeights()) -> Tensor:
    """Loss of one teacher-forced window given a precomputed shape feature.

    `window` is (vel_inputs (T,6), targets (T,13)); ground-truth
    velocities fill the input slots at every step.
    """
    vel, tgt = window
    preds = net.forward_window(model_leaves, config, feature, vel[:, None, :])
    return net.total_loss(preds, tgt[:, None, :], weights)


# ---------------------------------------------------------------------------
# batched forward/backward
# ---------------------------------------------------------------------------

def _batch_loss(leaves, config, clouds_by_object, items, weights):
    """Loss over a batch of equal-length windows.

    items: list of (object_id, vel (T,6), tgt (T,13)). Each distinct
    object's cloud is encoded once; a 0/1 selector matrix distributes
    features to batch rows (keeps the graph differentiable through the
    encoder for every row).
    """
    uniq = sorted({oid for oid, _, _ in items})
    stack = np.stack([clouds_by_object[oid] for oid in uniq])
    feats = net.encode_clouds(leaves, stack)          # (U, 16)
    sel = np.zeros((len(items), len(uniq)))
    pos = {oid: i for i, oid in enumerate(uniq)}
    for r, (oid, _, _) in enumerate(items):
        sel[r, pos[oid]] = 1.0
    feature = T.matmul(Tensor(sel), feats)            # (B, 16)
    vel = np.stack([v for _, v, _ in items], axis=1)  # (T, B, 6)
    tgt = np.stack([t for _, _, t in items], axis=1)  # (T, B, 13)
    preds = net.forward_window(leaves, config, feature, vel)
    return net.total_loss(preds, tgt, weights)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    wallclock_s: float


def format_log(log) -> str:
    return "".join(f"{e.epoch} {e.train_loss:.9g} {e.val_loss:.9g} {e.wallclock_s:.3f}\n"
                   for e in log)


def fit(config: TrainConfig, dataset) -> tuple[Model, DatasetSplit, list]:
    """Train a model on the dataset's train split.

    Returns (best-validation model, the object split, per-epoch log).
    With val_frac=0 validation and early stopping are disabled and the
    final parameters are returned (overfit/debug mode).
    """
    split = split_by_object(dataset, config.val_frac, config.seed, config.leave_out)
    train_seqs = prepare_sequences(dataset, split.train_objects)
    val_seqs = prepare_sequences(dataset, split.val_objects)
    usable = [s for s in train_seqs if s.steps >= config.window_len]
    if not usable:
        raise TrainError("no trajectory long enough for the window length")
    clouds = {oid: np.asarray(dataset.objects[oid].cloud.points)
              for oid in set(split.train_objects) | set(split.val_objects)}

    model = Model.create(config.net, seed=config.seed)
    state = AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)

    val_windows = []
    for s in val_seqs:
        val_windows.extend((s.object_id, v, t)
                           for v, t in fixed_windows(s, config.window_len))

    best_params = {k: v.copy() for k, v in model.params.items()}
    best_val = float("inf")
    bad_epochs = 0
    steps = 0
    log = []
    t0 = time.time()

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(usable))
        batches = [order[i:i + config.batch_size]
                   for i in range(0, len(order), config.batch_size)]
        train_losses = []
        for batch in batches:
            if config.max_steps is not None and steps >= config.max_steps:
                break
            items = []
            for idx in batch:
                seq = usable[idx]
                win = sample_window(seq, config.window_len, rng)
                items.append((seq.object_id, win[0], win[1]))
            leaves = model.leaves()
            loss = _batch_loss(leaves, config.net, clouds, items, config.weights)
            loss.backward()
            grads = {k: t.grad for k, t in leaves.items() if t.grad is not None}
            new_params, state = adam_step(model.params, grads, state)
            model = model.with_params(new_params)
            train_losses.append(loss.item())
            steps += 1

        train_loss = float(np.mean(train_losses)) if train_losses else float("nan")
        if val_windows:
            val_loss = evaluate_loss(model, clouds, val_windows, config)
        else:
            val_loss = train_loss
        log.append(EpochLog(epoch, train_loss, val_loss, time.time() - t0))

        if config.val_frac > 0.0:
            if val_loss < best_val:
                best_val = val_loss
                best_params = {k: v.copy() for k, v in model.params.items()}
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs > config.patience:
                    break
        else:
            best_params = model.params
        if config.max_steps is not None and steps >= config.max_steps:
            break

    return model.with_params(best_params), split, log


def evaluate_loss(model: Model, clouds, windows, config: TrainConfig) -> float:
    """Mean teacher-forced loss over fixed windows (no gradients)."""
    if not windows:
        return float("nan")
    consts = model.constants()
    losses = []
    with T.no_grad():
        for i in range(0, len(windows), config.batch_size):
            chunk = windows[i:i + config.batch_size]
            losses.append(_batch_loss(consts, config.net, clouds, chunk,
                                      config.weights).item() * len(chunk))
    return float(sum(losses) / len(windows))
