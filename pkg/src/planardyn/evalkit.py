"""Roll-out generation, single-step and roll-out error metrics.

Single-step errors follow the teacher-forced protocol: ground-truth
velocities feed every step and the per-step predicted changes are
compared with the true changes (toppling sequences included). Roll-out
errors compare accumulated predicted state against ground truth while the
model consumes its own velocity predictions after the first `steps_in`
ground-truth-fed steps; toppling sequences are excluded by default.

Angle metrics compare rotation magnitudes (degrees) and rotation axes
(1 - cos of the angle between them) separately; steps whose ground-truth
angle is below 1e-6 rad are skipped in the axis metric. Roll-out rotation
errors apply the same two metrics to the accumulated rotation from the
initial orientation. All internal state is SI; cm/deg conversions happen
only at report time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import net
from . import tensor as T
from .geom import quat_conjugate, quat_log, quat_multiply
from .net import ANG, LIN, POS, ROT, STAB, Model
from .tensor import Tensor

METRICS = ("lin_vel", "ang_vel", "position", "angle", "axis")
UNITS = {"lin_vel": "cm/s", "ang_vel": "rad/s", "position": "cm",
         "angle": "deg", "axis": "1-cos"}
_SCALE = {"lin_vel": 100.0, "ang_vel": 1.0, "position": 100.0,
          "angle": 180.0 / math.pi, "axis": 1.0}
AXIS_MIN_ANGLE = 1e-6  # rad; below this the rotation axis is undefined


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class RolloutResult:
    predicted_states: tuple     # ObjectState sequence, length n_steps+1
    predicted_changes: np.ndarray  # (n_steps, 13), stability column = logit
    steps_in: int


@dataclass(frozen=True)
class MetricsReport:
    v_err: float       # cm/s
    w_err: float       # rad/s
    p_err: float       # cm
    angle_err: float   # degrees
    axis_err: float    # 1 - cos(alpha), in [0, 2]
    curves: dict = field(default_factory=dict)  # metric -> {step, mean, median}
    n_included: int = 0
    n_excluded: int = 0

    def summary(self) -> dict:
        return {"lin_vel": self.v_err, "ang_vel": self.w_err,
                "position": self.p_err, "angle": self.angle_err,
                "axis": self.axis_err}


def axis_error(a_pred, a_gt) -> float:
    """1 - cos(alpha) between two unit axes; 0 identical, 2 opposite."""
    return 1.0 - float(np.dot(a_pred, a_gt))


def build_eval_items(dataset, split: str = "test", category: str | None = None) -> list:
    """(points, trajectory) pairs for one manifest split, optionally filtered."""
    items = []
    for rec in dataset.trajectories:
        if rec.split != split:
            continue
        obj = dataset.objects[rec.object_id]
        if category is not None and obj.category != category:
            continue
        items.append((np.asarray(obj.cloud.points), rec.trajectory))
    return items


# ---------------------------------------------------------------------------
# roll-out
# ---------------------------------------------------------------------------

def rollout(model: Model, cloud, gt_states, n_steps: int, steps_in: int = 1) -> RolloutResult:
    """Autoregressive trajectory prediction from ground-truth initial state.

    The first `steps_in` steps receive ground-truth velocities as input;
    afterwards the input velocity is the last forced velocity plus the
    cumulative sum of predicted velocity changes. Positions/orientations
    accumulate predicted changes from the first state throughout. With
    steps_in == n_steps the inputs match teacher forcing exactly.
    """
    if steps_in < 1:
        raise EvalError("steps_in must be at least 1")
    if steps_in > len(gt_states):
        raise EvalError("steps_in exceeds available ground-truth states")
    if steps_in > n_steps:
        raise EvalError("steps_in cannot exceed the roll-out horizon")
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud)
    consts = model.constants()
    changes = np.empty((n_steps, 13))
    with T.no_grad():
        feature = net.encode_clouds(consts, pts[None])
        hidden = None
        vel = np.empty(6)
        for t in range(n_steps):
            if t < steps_in:
                vel[0:3] = gt_states[t].lin_vel
                vel[3:6] = gt_states[t].ang_vel
            else:
                vel[0:3] += changes[t - 1, LIN]
                vel[3:6] += changes[t - 1, ANG]
            inp = T.concat([Tensor(vel[None].copy()), feature], axis=1)
            hidden, out = net.predict_step(consts, model.config, hidden, inp)
            changes[t] = out.data[0]
    # binarize the stability column for state reconstruction
    recon = changes.copy()
    recon[:, STAB] = (changes[:, STAB] >= 0.0).astype(np.float64)
    states = net.reconstruct_states(gt_states[0], recon)
    return RolloutResult(predicted_states=tuple(states),
                         predicted_changes=changes, steps_in=steps_in)


def teacher_forced_changes(model: Model, cloud, traj) -> np.ndarray:
    """Per-step predicted changes with ground-truth inputs, (T,13)."""
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud)
    vel = net.velocity_inputs(traj)
    consts = model.constants()
    with T.no_grad():
        feature = net.encode_clouds(consts, pts[None])
        preds = net.forward_window(consts, model.config, feature, vel[:, None, :])
    return np.stack([p.data[0] for p in preds])


def classify_toppling(result: RolloutResult) -> bool:
    """True when any predicted step is unstable (sigmoid(logit) >= 0.5)."""
    return bool(np.any(result.predicted_changes[:, STAB] >= 0.0))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _angle_axis_errors(pred_vec, gt_vec):
    """(angle error rad, axis error or None) for one rotation-vector pair."""
    gt_ang = float(np.linalg.norm(gt_vec))
    pr_ang = float(np.linalg.norm(pred_vec))
    angle = abs(pr_ang - gt_ang)
    if gt_ang < AXIS_MIN_ANGLE:
        return angle, None
    a_gt = gt_vec / gt_ang
    a_pr = pred_vec / max(pr_ang, 1e-12)
    return angle, axis_error(a_pr, a_gt)


def single_step_errors(model: Model, items) -> MetricsReport:
    """Mean teacher-forced per-step errors over all steps of all items.

    Toppling sequences are included. items: (cloud, trajectory) pairs.
    """
    if not items:
        raise EvalError("empty evaluation set")
    acc = {m: [] for m in METRICS}
    for cloud, traj in items:
        preds = teacher_forced_changes(model, cloud, traj)
        gts = net.target_array(traj)
        acc["lin_vel"].extend(np.linalg.norm(preds[:, LIN] - gts[:, LIN], axis=1))
        acc["ang_vel"].extend(np.linalg.norm(preds[:, ANG] - gts[:, ANG], axis=1))
        acc["position"].extend(np.linalg.norm(preds[:, POS] - gts[:, POS], axis=1))
        for k in range(len(gts)):
            ang, ax = _angle_axis_errors(preds[k, ROT], gts[k, ROT])
            acc["angle"].append(ang)
            if ax is not None:
                acc["axis"].append(ax)
    # fsum: correctly rounded, so the report is exactly order-independent
    means = {m: (_SCALE[m] * math.fsum(acc[m]) / len(acc[m]) if acc[m] else float("nan"))
             for m in METRICS}
    return MetricsReport(v_err=means["lin_vel"], w_err=means["ang_vel"],
                         p_err=means["position"], angle_err=means["angle"],
                         axis_err=means["axis"], n_included=len(items))


def rollout_errors(model: Model, items, steps_in: int = 1, n_steps: int = 15,
                   exclude_toppling: bool = True) -> MetricsReport:
    """Accumulated-state errors per roll-out step, with mean/median curves.

    Only trajectories with at least n_steps+1 recorded states enter;
    toppling trajectories are excluded unless exclude_toppling is False.
    """
    used, skipped = [], 0
    for cloud, traj in items:
        if exclude_toppling and traj.toppled:
            skipped += 1
        elif len(traj.states) < n_steps + 1:
            skipped += 1
        else:
            used.append((cloud, traj))
    if not used:
        raise EvalError("no trajectories left to evaluate after exclusion")

    per_step = {m: np.full((len(used), n_steps), np.nan) for m in METRICS}
    for i, (cloud, traj) in enumerate(used):
        res = rollout(model, cloud, traj.states, n_steps, steps_in)
        q0 = traj.states[0].orientation
        for k in range(1, n_steps + 1):
            gt, pr = traj.states[k], res.predicted_states[k]
            per_step["position"][i, k - 1] = np.linalg.norm(pr.position - gt.position)
            per_step["lin_vel"][i, k - 1] = np.linalg.norm(pr.lin_vel - gt.lin_vel)
            per_step["ang_vel"][i, k - 1] = np.linalg.norm(pr.ang_vel - gt.ang_vel)
            gt_acc = quat_log(quat_multiply(gt.orientation, quat_conjugate(q0)))
            pr_acc = quat_log(quat_multiply(pr.orientation, quat_conjugate(q0)))
            ang, ax = _angle_axis_errors(pr_acc, gt_acc)
            per_step["angle"][i, k - 1] = ang
            if ax is not None:
                per_step["axis"][i, k - 1] = ax

    curves = {}
    summary = {}
    for m in METRICS:
        vals = per_step[m] * _SCALE[m]
        with np.errstate(invalid="ignore"):
            curves[m] = {"step": np.arange(1, n_steps + 1),
                         "mean": np.nanmean(vals, axis=0),
                         "median": np.nanmedian(vals, axis=0)}
            summary[m] = float(np.nanmean(vals))
    return MetricsReport(v_err=summary["lin_vel"], w_err=summary["ang_vel"],
                         p_err=summary["position"], angle_err=summary["angle"],
                         axis_err=summary["axis"], curves=curves,
                         n_included=len(used), n_excluded=skipped)


def toppling_fscore(model: Model, items, steps_in: int = 1) -> float:
    """F1 of rolled-out toppling classification vs ground-truth flags."""
    labels = [traj.toppled for _, traj in items]
    if len(set(labels)) < 2:
        raise EvalError("toppling F-score needs both classes in the test set")
    tp = fp = fn = 0
    for (cloud, traj), label in zip(items, labels):
        res = rollout(model, cloud, traj.states, len(traj.states) - 1,
                      steps_in=min(steps_in, len(traj.states) - 1))
        pred = classify_toppling(res)
        if pred and label:
            tp += 1
        elif pred and not label:
            fp += 1
        elif not pred and label:
            fn += 1
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


# ---------------------------------------------------------------------------
# CSV report
# ---------------------------------------------------------------------------

def write_metrics_csv(report: MetricsReport, path) -> None:
    """Summary rows `metric,value,unit`, then curve rows `step,metric,mean,median`."""
    lines = ["metric,value,unit\n"]
    for m, v in report.summary().items():
        lines.append(f"{m},{v:.9g},{UNITS[m]}\n")
    lines.append(f"included,{report.n_included},count\n")
    lines.append(f"excluded,{report.n_excluded},count\n")
    if report.curves:
        lines.append("step,metric,mean,median\n")
        for m, c in report.curves.items():
            for s, mean, med in zip(c["step"], c["mean"], c["median"]):
                lines.append(f"{int(s)},{m},{mean:.9g},{med:.9g}\n")
    from .store import _atomic_write
    _atomic_write(path, "".join(lines))


def read_metrics_csv(path) -> tuple[dict, dict]:
    """Returns (summary dict, curves dict metric -> list of (step, mean, median))."""
    summary, curves = {}, {}
    mode = None
    with open(path) as f:
        for line in f:
            cols = line.strip().split(",")
            if cols == ["metric", "value", "unit"]:
                mode = "summary"
                continue
            if cols == ["step", "metric", "mean", "median"]:
                mode = "curves"
                continue
            if mode == "summary" and len(cols) == 3:
                summary[cols[0]] = float(cols[1])
            elif mode == "curves" and len(cols) == 4:
                curves.setdefault(cols[1], []).append(
                    (int(cols[0]), float(cols[2]), float(cols[3])))
    return summary, curves
