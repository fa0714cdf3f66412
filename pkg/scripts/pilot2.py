"""Second pilot: gentle-impulse regime, medium scale (dev only)."""
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np
from planardyn import evalkit, net, store, train, simkit
from planardyn.tensor import AdamState, adam_step

OUT = "/tmp/pilot2"
IMP = simkit.ImpulseRanges(mag_per_kg=(3.0, 6.0), point_halfwidth=0.03,
                           max_vertical_frac=0.2)

t0 = time.time()
if not os.path.exists(os.path.join(OUT, "ds", "manifest.json")):
    cfg = store.GenConfig(out_dir=os.path.join(OUT, "ds"), shapes=("box",),
                          num_objects=80, sims_per_object=8, seed=90,
                          test_objects=8, impulse=IMP, restitution=0.05)
    ds = store.generate_dataset(cfg)
else:
    ds = store.load_dataset(os.path.join(OUT, "ds"))
print(f"dataset ready in {time.time()-t0:.1f}s: {len(ds.trajectories)} trajs", flush=True)

items = evalkit.build_eval_items(ds, "test")
ncfg = net.NetConfig(hidden=128)
tcfg = train.TrainConfig(seed=7, net=ncfg, lr=2e-3)
split = train.split_by_object(ds, tcfg.val_frac, tcfg.seed)
seqs = [s for s in train.prepare_sequences(ds, split.train_objects) if s.steps >= 15]
clouds = {oid: np.asarray(ds.objects[oid].cloud.points)
          for oid in set(split.train_objects) | set(split.val_objects)}
print(f"usable train seqs: {len(seqs)} / test items {len(items)}", flush=True)

model = net.Model.create(ncfg, seed=tcfg.seed)
state = AdamState(lr=tcfg.lr)
rng = np.random.default_rng(tcfg.seed + 1)

for epoch in range(61):
    t0 = time.time()
    order = rng.permutation(len(seqs))
    losses = []
    for i in range(0, len(order), tcfg.batch_size):
        batch = order[i:i + tcfg.batch_size]
        wins = []
        for idx in batch:
            sq = seqs[idx]
            v, t = train.sample_window(sq, 15, rng)
            wins.append((sq.object_id, v, t))
        leaves = model.leaves()
        loss = train._batch_loss(leaves, ncfg, clouds, wins, tcfg.weights)
        loss.backward()
        grads = {k: t.grad for k, t in leaves.items() if t.grad is not None}
        newp, state = adam_step(model.params, grads, state)
        model = model.with_params(newp)
        losses.append(loss.item())
    el = time.time() - t0
    if epoch % 5 == 0:
        ss = evalkit.single_step_errors(model, items)
        ro = evalkit.rollout_errors(model, items, steps_in=1, n_steps=15)
        print(f"ep {epoch} ({el:.1f}s/ep): train {np.mean(losses):.3f} | "
              f"ss P {ss.p_err:.3f}cm ang {ss.angle_err:.3f} v {ss.v_err:.2f} "
              f"w {ss.w_err:.3f} ax {ss.axis_err:.3f} | ro P {ro.p_err:.2f}cm "
              f"ang {ro.angle_err:.2f} (n={ro.n_included})", flush=True)
    else:
        print(f"ep {epoch} ({el:.1f}s/ep): train {np.mean(losses):.3f}", flush=True)
