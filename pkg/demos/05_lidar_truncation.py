"""Rate-distortion sweep by octree truncation on a LiDAR-style cloud.

Sparse scanner data is coded at a fixed full depth but decoded from fewer
levels; fewer coded levels mean fewer bits and a coarser cloud.  Distortion
is measured with the symmetric Chamfer distance and point-to-point PSNR.
"""

from octpcc import (ContextModel, ModelConfig, chamfer, d1_psnr, decode,
                    encode, quantize, synth)

pc = synth("lidar_rings", 20000, seed=11)
depth = 10
reference = quantize(pc, depth)
print(f"{len(pc)} scanner returns, depth {depth}: {len(reference)} voxels")

model = ContextModel.create(ModelConfig.tiny(seed=2))
print(f"\n{'levels':>6} {'bpip':>8} {'voxels':>8} {'chamfer':>12} {'d1 psnr':>9}")
for levels in range(6, depth + 1):
    bitstream, report = encode(pc, depth, levels, model)
    decoded = decode(bitstream, model)
    cd = chamfer(reference, decoded)
    psnr = d1_psnr(reference, decoded)
    psnr_txt = "lossless" if psnr == float("inf") else f"{psnr:8.2f}"
    print(f"{levels:>6} {report.bpip:>8.4f} {len(decoded):>8} "
          f"{cd:>12.6g} {psnr_txt:>9}")
