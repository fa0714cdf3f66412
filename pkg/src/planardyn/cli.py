"""Command-line entry point: gen | train | eval | rollout | plot.

Every command validates its flags before doing work, writes outputs
atomically (no partial files), and exits nonzero with a message on
stderr for bad input. All randomness derives from --seed, so reruns with
identical flags produce identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import evalkit, net, simkit, store, train
from .net import NetConfig
from .simkit import ImpulseRanges


def _parse_range(text: str) -> tuple:
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise ValueError(f"expected LO:HI, got {text!r}")
    if not lo < hi:
        raise ValueError(f"range must satisfy lo < hi, got {text!r}")
    return (lo, hi)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="planardyn",
                                 description="Rigid-body sliding/toppling dynamics: "
                                             "data generation, training, evaluation.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a trajectory dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--shapes", default="box",
                   help="comma list of box,cylinder,composite")
    g.add_argument("--num-objects", type=int, default=20)
    g.add_argument("--sims-per-object", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mu", type=float, default=None)
    g.add_argument("--mu-range", type=str, default=None, metavar="LO:HI")
    g.add_argument("--restitution", type=float, default=0.2)
    g.add_argument("--test-objects", type=int, default=None,
                   help="objects held out as the unseen test split (default 10%%)")
    g.add_argument("--impulse-range", type=str, default=None, metavar="LO:HI",
                   help="impulse magnitude range per unit mass, N*s/kg")
    g.add_argument("--cloud-points", type=int, default=1024)

    t = sub.add_parser("train", help="train a dynamics model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--predictor", choices=("lstm", "mlp"), default="lstm")
    t.add_argument("--hidden", type=int, default=128)
    t.add_argument("--window", type=int, default=15)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--val-frac", type=float, default=0.1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--leave-out", type=str, default=None)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--encoder-widths", type=str, default="64,128,256")
    t.add_argument("--head-width", type=int, default=128)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--mode", choices=("single-step", "rollout"), default="single-step")
    e.add_argument("--steps-in", type=int, default=1)
    e.add_argument("--steps", type=int, default=15, help="roll-out horizon")
    e.add_argument("--include-toppling", action="store_true")
    e.add_argument("--split", default="test")
    e.add_argument("--category", type=str, default=None)
    e.add_argument("--out", required=True, help="metrics CSV path")

    r = sub.add_parser("rollout", help="roll out a prediction for one trajectory")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--traj", required=True)
    r.add_argument("--cloud", required=True, help="point-cloud file of the object")
    r.add_argument("--steps-in", type=int, default=1)
    r.add_argument("--out", required=True, help="predicted trajectory path")

    p = sub.add_parser("plot", help="render roll-out error curves to SVG")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    return ap


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.mu is not None and args.mu_range is not None:
        raise ValueError("--mu and --mu-range are mutually exclusive")
    shapes = tuple(s.strip() for s in args.shapes.split(",") if s.strip())
    impulse = ImpulseRanges()
    if args.impulse_range:
        impulse = ImpulseRanges(mag_per_kg=_parse_range(args.impulse_range))
    cfg = store.GenConfig(
        out_dir=args.out, shapes=shapes, num_objects=args.num_objects,
        sims_per_object=args.sims_per_object, seed=args.seed,
        mu=args.mu if args.mu is not None else 0.5,
        mu_range=_parse_range(args.mu_range) if args.mu_range else None,
        restitution=args.restitution, test_objects=args.test_objects,
        cloud_points=args.cloud_points, impulse=impulse)
    ds = store.generate_dataset(cfg)
    n_top = sum(t.trajectory.toppled for t in ds.trajectories)
    print(f"wrote {len(ds.objects)} objects, {len(ds.trajectories)} trajectories "
          f"({n_top} toppling) to {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = store.load_dataset(args.data)
    ncfg = NetConfig(predictor=args.predictor, hidden=args.hidden,
                     encoder_widths=tuple(int(w) for w in args.encoder_widths.split(",")),
                     head_width=args.head_width)
    tcfg = train.TrainConfig(window_len=args.window, batch_size=args.batch,
                             lr=args.lr, max_epochs=args.epochs,
                             patience=args.patience, val_frac=args.val_frac,
                             seed=args.seed, net=ncfg, leave_out=args.leave_out)
    model, split, log = train.fit(tcfg, ds)
    store.write_checkpoint(model, args.out)
    store._atomic_write(args.out + ".log", train.format_log(log))
    store._atomic_write(args.out + ".split.json", json.dumps({
        "train_objects": list(split.train_objects),
        "val_objects": list(split.val_objects),
        "test_objects": list(split.test_objects)}, indent=1) + "\n")
    best = min(log, key=lambda e: e.val_loss)
    print(f"trained {len(log)} epochs; best val loss {best.val_loss:.6g} "
          f"(epoch {best.epoch}); checkpoint: {args.out}")
    return 0


def cmd_eval(args) -> int:
    ds = store.load_dataset(args.data)
    model = store.read_checkpoint(args.ckpt)
    items = evalkit.build_eval_items(ds, split=args.split, category=args.category)
    if args.mode == "single-step":
        if args.steps_in != 1:
            print("warning: --steps-in is ignored in single-step mode", file=sys.stderr)
        report = evalkit.single_step_errors(model, items)
    else:
        report = evalkit.rollout_errors(model, items, steps_in=args.steps_in,
                                        n_steps=args.steps,
                                        exclude_toppling=not args.include_toppling)
    evalkit.write_metrics_csv(report, args.out)
    print(f"{args.mode} over {report.n_included} trajectories -> {args.out}")
    for m, v in report.summary().items():
        print(f"  {m}: {v:.6g} {evalkit.UNITS[m]}")
    return 0


def cmd_rollout(args) -> int:
    from .geom import read_point_cloud
    model = store.read_checkpoint(args.ckpt)
    traj = store.read_trajectory(args.traj)
    cloud = read_point_cloud(args.cloud)
    n_steps = len(traj.states) - 1
    if n_steps < 1:
        raise ValueError("trajectory has no steps to roll out")
    res = evalkit.rollout(model, cloud, traj.states, n_steps,
                          steps_in=min(args.steps_in, n_steps))
    pred = simkit.Trajectory(
        object_id=traj.object_id, dt=traj.dt, states=res.predicted_states,
        toppled=any(not s.stable for s in res.predicted_states),
        meta=dict(traj.meta))
    store.write_trajectory(pred, args.out)
    print(f"rolled out {n_steps} steps (steps_in={res.steps_in}) -> {args.out}")
    return 0


def cmd_plot(args) -> int:
    summary, curves = evalkit.read_metrics_csv(args.metrics)
    if not curves:
        raise ValueError(f"{args.metrics} contains no curve rows (rollout mode only)")
    svg = render_curves_svg(curves)
    store._atomic_write(args.out, svg)
    print(f"wrote {args.out}")
    return 0


def render_curves_svg(curves: dict, width: int = 640, panel_h: int = 220) -> str:
    """Minimal hand-emitted SVG: position and angle mean/median vs step."""
    panels = [("position", "position error (cm)"), ("angle", "angle error (deg)")]
    pad = 50
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{panel_h * len(panels)}" font-family="sans-serif" font-size="11">']
    for pi, (metric, label) in enumerate(panels):
        rows = curves.get(metric, [])
        if not rows:
            continue
        top = pi * panel_h + 20
        bot = (pi + 1) * panel_h - 30
        steps = [r[0] for r in rows]
        ymax = max(max(r[1] for r in rows), max(r[2] for r in rows), 1e-9)
        xmin, xmax = min(steps), max(steps)

        def sx(s):
            return pad + (width - pad - 15) * (s - xmin) / max(xmax - xmin, 1)

        def sy(v):
            return bot - (bot - top) * (v / (1.05 * ymax))

        parts.append(f'<line x1="{pad}" y1="{bot}" x2="{width - 15}" y2="{bot}" stroke="black"/>')
        parts.append(f'<line x1="{pad}" y1="{top}" x2="{pad}" y2="{bot}" stroke="black"/>')
        for frac in (0.0, 0.5, 1.0):
            v = frac * ymax
            parts.append(f'<text x="{pad - 6}" y="{sy(v) + 4}" text-anchor="end">{v:.3g}</text>')
            parts.append(f'<line x1="{pad - 4}" y1="{sy(v)}" x2="{pad}" y2="{sy(v)}" stroke="black"/>')
        for s in steps:
            parts.append(f'<text x="{sx(s)}" y="{bot + 14}" text-anchor="middle">{s}</text>')
        for key, dash, color in (("mean", "", "#d62728"), ("median", "4 3", "#1f77b4")):
            idx = 1 if key == "mean" else 2
            pts = " ".join(f"{sx(r[0]):.1f},{sy(r[idx]):.1f}" for r in rows)
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-dasharray="{dash}" '
                         f'points="{pts}"/>')
        parts.append(f'<text x="{pad}" y="{top - 6}" font-weight="bold">{label}</text>')
        parts.append(f'<text x="{width - 120}" y="{top + 12}" fill="#d62728">mean</text>')
        parts.append(f'<text x="{width - 120}" y="{top + 26}" fill="#1f77b4">median</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
            "rollout": cmd_rollout, "plot": cmd_plot}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
