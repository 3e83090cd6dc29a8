"""Voxelization and octree serialization, step by step.

Generates a synthetic cloud, quantizes it onto an integer grid, builds the
breadth-first node stream, and shows what partial (truncated) decoding of
that stream reconstructs.
"""

import numpy as np

from octpcc import build, dequantize, quantize, reconstruct, synth

pc = synth("sphere", 20000, seed=7)
print(f"raw cloud: {len(pc)} points, bbox "
      f"{pc.points.min(0).round(3)} .. {pc.points.max(0).round(3)}")

depth = 7
qpc = quantize(pc, depth)
print(f"\nquantized at depth {depth}: {len(qpc)} voxels "
      f"(duplicates collapsed), scale {qpc.scale:.6f}")

seq = build(qpc)
print(f"\noctree: {len(seq)} nodes over {seq.levels_present} levels")
print(f"{'level':>5} {'nodes':>7} {'mean occupancy bits':>20}")
for lvl in range(1, depth + 1):
    sl = seq.level_slice(lvl)
    occ = seq.occupancy[sl]
    bits = np.unpackbits(occ.astype(np.uint8)[:, None], axis=1).sum(axis=1)
    print(f"{lvl:>5} {len(occ):>7} {bits.mean():>20.2f}")

print("\ntruncated reconstruction (decode fewer levels -> coarser cloud):")
print(f"{'levels':>6} {'voxels':>8} {'mean radius error':>18}")
for levels in range(3, depth + 1):
    vox = reconstruct(seq, levels)
    pts = qpc.origin + qpc.scale * vox
    err = np.abs(np.linalg.norm(pts, axis=1) - 0.8).mean()
    print(f"{levels:>6} {len(vox):>8} {err:>18.5f}")

back = quantize(dequantize(qpc), depth)
print(f"\nround trip quantize(dequantize(q)) exact: {back.same_voxels(qpc)}")
