"""Learned dynamics model: point-cloud shape encoder + recurrent predictor.

The model maps a 22-dim input (linear velocity 3, angular velocity 3,
shape feature 16) to the 13-dim change in state per step: position change
(3), rotation change as an axis-angle vector (3), linear and angular
velocity changes (3+3), and a stability logit (1). The shape feature is
computed once per object and reused at every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .geom import ObjectState, compose_rotation, relative_rotvec
from .tensor import Tensor

# layout of the 13-dim change vector
POS = slice(0, 3)
ROT = slice(3, 6)
LIN = slice(6, 9)
ANG = slice(9, 12)
STAB = 12

INPUT_DIM = 22   # 6 velocities + 16 shape feature
OUTPUT_DIM = 13
FEATURE_DIM = 16

LOSS_EPS = 1e-8


class NetError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    predictor: str = "lstm"              # "lstm" | "mlp"
    hidden: int = 128                    # LSTM hidden width (paper-scale: 1024)
    encoder_widths: tuple = (64, 128, 256)
    head_width: int = 128
    mlp_width: int = 128                 # width of the 5-layer baseline

    def __post_init__(self):
        if self.predictor not in ("lstm", "mlp"):
            raise NetError(f"unknown predictor {self.predictor!r}")


@dataclass(frozen=True)
class LossWeights:
    w_pos: float = 1.0
    w_rot: float = 1.0
    w_lin: float = 1.0
    w_ang: float = 1.0
    w_stab: float = 2.0


@dataclass(frozen=True)
class StateChange:
    """Per-step change in object state; 13 scalars.

    For ground-truth targets `stability` holds the 0/1 unstable label; for
    predictions it holds the raw logit (probability after sigmoid).
    """

    pos: np.ndarray        # m
    rot: np.ndarray        # axis-angle, rad
    lin_vel: np.ndarray    # m/s
    ang_vel: np.ndarray    # rad/s
    stability: float

    def to_vector(self) -> np.ndarray:
        v = np.empty(13)
        v[POS], v[ROT], v[LIN], v[ANG] = self.pos, self.rot, self.lin_vel, self.ang_vel
        v[STAB] = self.stability
        return v

    @staticmethod
    def from_vector(v) -> "StateChange":
        v = np.asarray(v, dtype=np.float64)
        return StateChange(v[POS].copy(), v[ROT].copy(), v[LIN].copy(),
                           v[ANG].copy(), float(v[STAB]))


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _xavier(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_params(config: NetConfig, seed: int) -> dict:
    """Fresh parameter arrays; deterministic given the seed."""
    rng = np.random.default_rng(seed)
    p = {}
    widths = (3,) + tuple(config.encoder_widths)
    for i in range(len(widths) - 1):
        p[f"enc{i}_w"] = _xavier(rng, widths[i], widths[i + 1])
        p[f"enc{i}_b"] = np.zeros(widths[i + 1])
    p["head0_w"] = _xavier(rng, widths[-1], config.head_width)
    p["head0_b"] = np.zeros(config.head_width)
    p["head1_w"] = _xavier(rng, config.head_width, FEATURE_DIM)
    p["head1_b"] = np.zeros(FEATURE_DIM)

    if config.predictor == "lstm":
        h = config.hidden
        p["lstm_wx"] = _xavier(rng, INPUT_DIM, 4 * h)
        p["lstm_wh"] = _xavier(rng, h, 4 * h)
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0  # forget-gate bias
        p["lstm_b"] = b
        p["out_w"] = _xavier(rng, h, OUTPUT_DIM)
        p["out_b"] = np.zeros(OUTPUT_DIM)
    else:
        dims = [INPUT_DIM] + [config.mlp_width] * 4 + [OUTPUT_DIM]
        for i in range(5):
            p[f"mlp{i}_w"] = _xavier(rng, dims[i], dims[i + 1])
            p[f"mlp{i}_b"] = np.zeros(dims[i + 1])
    return p


@dataclass
class Model:
    """Bundled config + parameter arrays."""

    config: NetConfig
    params: dict

    @staticmethod
    def create(config: NetConfig = NetConfig(), seed: int = 0) -> "Model":
        return Model(config=config, params=init_params(config, seed))

    def leaves(self) -> dict:
        """Fresh leaf Tensors over the current arrays (one training step)."""
        return {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}

    def constants(self) -> dict:
        """Parameter Tensors without gradient tracking (evaluation)."""
        return {k: Tensor(v) for k, v in self.params.items()}

    def with_params(self, params: dict) -> "Model":
        return replace(self, params=params)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def encode_clouds(pt: dict, clouds: np.ndarray) -> Tensor:
    """Shape features for a batch of point clouds (B,N,3) -> (B,16).

    Per-point MLP, max-pool over points, then the head MLP. Exactly
    permutation- and duplicate-invariant because only the pointwise max
    reaches the head.
    """
    clouds = np.asarray(clouds, dtype=np.float64)
    if clouds.ndim != 3:
        raise NetError("expected clouds of shape (B, N, 3)")
    b, n, _ = clouds.shape
    x = Tensor(clouds.reshape(b * n, 3))
    i = 0
    while f"enc{i}_w" in pt:
        x = T.relu(T.add(T.matmul(x, pt[f"enc{i}_w"]), pt[f"enc{i}_b"]))
        i += 1
    x = T.max_along(T.reshape(x, (b, n, x.shape[1])), axis=1)
    x = T.relu(T.add(T.matmul(x, pt["head0_w"]), pt["head0_b"]))
    return T.add(T.matmul(x, pt["head1_w"]), pt["head1_b"])


def encode_shape(model_or_params, cloud) -> np.ndarray:
    """Shape feature (16,) of one point cloud; evaluation convenience."""
    pt = model_or_params.constants() if isinstance(model_or_params, Model) else model_or_params
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud)
    with T.no_grad():
        return encode_clouds(pt, pts[None]).data[0]


def lstm_init(hidden: int, batch: int) -> tuple[Tensor, Tensor]:
    return Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden)))


def predict_step(pt: dict, config: NetConfig, hidden, inputs: Tensor):
    """One predictor step on (B,22) inputs -> (hidden', (B,13) changes).

    `hidden` is an (h, c) pair for the LSTM and None for the MLP baseline
    (which is stateless and returns None back).
    """
    if inputs.shape[-1] != INPUT_DIM:
        raise NetError(f"predictor input must have width {INPUT_DIM}")
    if config.predictor == "lstm":
        h, c = hidden if hidden is not None else lstm_init(config.hidden, inputs.shape[0])
        z = T.add(T.add(T.matmul(inputs, pt["lstm_wx"]), T.matmul(h, pt["lstm_wh"])),
                  pt["lstm_b"])
        hw = config.hidden
        gi = T.sigmoid(T.narrow(z, 1, 0, hw))
        gf = T.sigmoid(T.narrow(z, 1, hw, hw))
        gg = T.tanh(T.narrow(z, 1, 2 * hw, hw))
        go = T.sigmoid(T.narrow(z, 1, 3 * hw, hw))
        c2 = T.add(T.mul(gf, c), T.mul(gi, gg))
        h2 = T.mul(go, T.tanh(c2))
        out = T.add(T.matmul(h2, pt["out_w"]), pt["out_b"])
        return (h2, c2), out
    x = inputs
    for i in range(4):
        x = T.relu(T.add(T.matmul(x, pt[f"mlp{i}_w"]), pt[f"mlp{i}_b"]))
    out = T.add(T.matmul(x, pt["mlp4_w"]), pt["mlp4_b"])
    return None, out


def forward_window(pt: dict, config: NetConfig, feature: Tensor,
                   vel_inputs: np.ndarray) -> list:
    """Teacher-forced pass over a window.

    vel_inputs: ground-truth (T,B,6) current velocities. Returns the list
    of per-step (B,13) prediction Tensors. The shape feature is shared by
    every step.
    """
    t_steps, batch, _ = vel_inputs.shape
    hidden = None
    outs = []
    for t in range(t_steps):
        inp = T.concat([Tensor(vel_inputs[t]), feature], axis=1)
        hidden, out = predict_step(pt, config, hidden, inp)
        outs.append(out)
    return outs


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def relative_vec_loss(pred, gt, norm: str = "L2") -> Tensor:
    """Relative vector error |pred-gt|_p / (|pred|_p + |gt|_p + eps).

    Reduces over the last axis; lies in [0, 1]; exactly 0 when pred == gt
    (including the all-zero case, via the eps term).
    """
    pred = T.as_tensor(pred)
    gt = T.as_tensor(gt)
    if norm == "L2":
        def vec_norm(v):
            return T.sqrt(T.tsum(T.square(v), axis=-1))
    elif norm == "L1":
        def vec_norm(v):
            return T.tsum(T.tabs(v), axis=-1)
    else:
        raise NetError(f"unknown norm {norm!r}")
    num = vec_norm(T.sub(pred, gt))
    den = T.add(T.add(vec_norm(pred), vec_norm(gt)), LOSS_EPS)
    return T.div(num, den)


def stability_loss(logit, label) -> Tensor:
    """Binary cross entropy on sigmoid(logit), numerically stable form."""
    z = T.as_tensor(logit)
    y = np.asarray(label, dtype=np.float64)
    # y*softplus(-z) + (1-y)*softplus(z)
    return T.add(T.mul(T.softplus(T.mul(z, -1.0)), y),
                 T.mul(T.softplus(z), 1.0 - y))


def step_loss(pred: Tensor, gt: np.ndarray, w: LossWeights = LossWeights()) -> Tensor:
    """Weighted per-step loss on (B,13) predictions vs targets; (B,) out."""
    gt = np.asarray(gt, dtype=np.float64)
    loss = T.mul(relative_vec_loss(T.narrow(pred, 1, 0, 3), gt[:, POS], "L2"), w.w_pos)
    loss = T.add(loss, T.mul(relative_vec_loss(T.narrow(pred, 1, 3, 3), gt[:, ROT], "L1"), w.w_rot))
    loss = T.add(loss, T.mul(relative_vec_loss(T.narrow(pred, 1, 6, 3), gt[:, LIN], "L2"), w.w_lin))
    loss = T.add(loss, T.mul(relative_vec_loss(T.narrow(pred, 1, 9, 3), gt[:, ANG], "L2"), w.w_ang))
    logit = T.reshape(T.narrow(pred, 1, 12, 1), (pred.shape[0],))
    loss = T.add(loss, T.mul(stability_loss(logit, gt[:, STAB]), w.w_stab))
    return loss


def total_loss(preds, gts, w: LossWeights = LossWeights()) -> Tensor:
    """Mean over timesteps (and batch) of the weighted five-term sum.

    preds: list of per-step (B,13) Tensors or StateChange sequences;
    gts: (T,B,13) array or StateChange sequence of matching length.
    """
    preds = _as_step_tensors(preds)
    gts = _as_target_array(gts, len(preds))
    if len(preds) != len(gts):
        raise NetError("prediction/target length mismatch")
    stacked = T.concat(preds, axis=0) if len(preds) > 1 else preds[0]
    return T.tmean(step_loss(stacked, gts.reshape(-1, OUTPUT_DIM), w))


def _as_step_tensors(preds) -> list:
    out = []
    for p in preds:
        if isinstance(p, StateChange):
            out.append(Tensor(p.to_vector()[None]))
        elif isinstance(p, Tensor):
            out.append(p if len(p.shape) == 2 else T.reshape(p, (1, OUTPUT_DIM)))
        else:
            arr = np.asarray(p, dtype=np.float64)
            out.append(Tensor(arr if arr.ndim == 2 else arr[None]))
    return out


def _as_target_array(gts, t_steps) -> np.ndarray:
    if isinstance(gts, np.ndarray) and gts.ndim == 3:
        return gts
    rows = []
    for g in gts:
        if isinstance(g, StateChange):
            rows.append(g.to_vector()[None])
        else:
            arr = np.asarray(g, dtype=np.float64)
            rows.append(arr if arr.ndim == 2 else arr[None])
    return np.stack(rows)


# ---------------------------------------------------------------------------
# targets and reconstruction
# ---------------------------------------------------------------------------

def target_array(traj) -> np.ndarray:
    """Per-step ground-truth change vectors, (len(states)-1, 13)."""
    states = traj.states
    if len(states) < 2:
        raise NetError("need at least two states to derive changes")
    out = np.empty((len(states) - 1, 13))
    for t in range(len(states) - 1):
        a, b = states[t], states[t + 1]
        out[t, POS] = b.position - a.position
        out[t, ROT] = relative_rotvec(a.orientation, b.orientation)
        out[t, LIN] = b.lin_vel - a.lin_vel
        out[t, ANG] = b.ang_vel - a.ang_vel
        out[t, STAB] = 0.0 if b.stable else 1.0
    return out


def velocity_inputs(traj) -> np.ndarray:
    """Ground-truth per-step input velocities, (len(states)-1, 6)."""
    states = traj.states
    out = np.empty((len(states) - 1, 6))
    for t in range(len(states) - 1):
        out[t, 0:3] = states[t].lin_vel
        out[t, 3:6] = states[t].ang_vel
    return out


def targets_from_trajectory(traj) -> list:
    """StateChange sequence between consecutive recorded states."""
    return [StateChange.from_vector(v) for v in target_array(traj)]


def reconstruct_states(initial: ObjectState, changes) -> list:
    """Accumulate change vectors from the initial state (inverse of targets).

    Positions and velocities add; orientations compose the axis-angle
    exponential in the world frame. The stability flag follows the change
    rows (label or logit > 0.5 means unstable).
    """
    if isinstance(changes, np.ndarray):
        rows = changes
    else:
        rows = np.stack([c.to_vector() if isinstance(c, StateChange) else np.asarray(c)
                         for c in changes])
    states = [initial]
    pos = np.array(initial.position)
    quat = np.array(initial.orientation)
    lin = np.array(initial.lin_vel)
    ang = np.array(initial.ang_vel)
    for row in rows:
        pos = pos + row[POS]
        quat = compose_rotation(quat, row[ROT])
        lin = lin + row[LIN]
        ang = ang + row[ANG]
        states.append(ObjectState(pos, quat, lin, ang, stable=row[STAB] < 0.5))
    return states
