"""Training the context model and measuring the rate it buys.

Trains on a densely sampled plane (strong structure along the serialized
node order), then compares bits per input point against the uniform-model
baseline on the same cloud.  Also prints the two-stage loss trace shape:
stage 1 fits the 8-way occupancy branch (MSE), stage 2 fits the 255-way
head (cross-entropy) with the branch frozen.
"""

import numpy as np

from octpcc import (ContextModel, ModelConfig, ContextConfig, TrainSchedule,
                    build, encode, quantize, synth, train, zero_head_layers)

pc = synth("plane", 30000, seed=100)
depth = 6
seq = build(quantize(pc, depth))
print(f"corpus: {len(pc)} points -> {len(seq)} octree nodes at depth {depth}")

cfg = ModelConfig(ctx=ContextConfig(n_window=32, k_ancestors=2), d_embed=8,
                  d_model=32, d_hidden_main=64, d_hidden_branch=32, heads=4,
                  seed=0)
model = ContextModel.create(cfg)
schedule = TrainSchedule(branch_epochs=4, main_epochs=16, lr=3e-3)
trace = train(model, [seq], schedule)

stage1 = [r for r in trace if r.stage == 1]
stage2 = [r for r in trace if r.stage == 2]
print(f"\nstage 1 (branch, MSE): {len(stage1)} batches, "
      f"{stage1[0].mse_loss:.4f} -> {stage1[-1].mse_loss:.4f}")
print(f"stage 2 (main, CE):    {len(stage2)} batches")
per_epoch = len(stage2) // schedule.main_epochs
for e in range(0, schedule.main_epochs, 4):
    chunk = [r.ce_loss for r in stage2[e * per_epoch:(e + 1) * per_epoch]]
    print(f"  epoch {e:>2}: mean CE {np.mean(chunk):.3f} bits/node")

uniform = zero_head_layers(ContextModel.create(cfg))
_, rep_u = encode(pc, depth, depth, uniform)
_, rep_t = encode(pc, depth, depth, model)
print(f"\nuniform-model bpip: {rep_u.bpip:.4f}")
print(f"trained bpip:       {rep_t.bpip:.4f}  "
      f"({100 * (1 - rep_t.bpip / rep_u.bpip):.1f}% saved)")
