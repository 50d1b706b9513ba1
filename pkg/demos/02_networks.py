"""
The three networks
==================

ZipperNet takes both inputs and swaps encoder features between its two
paths. The single-path nets estimate lighting maps and the two alphas.
"""

import torch

from retinexfuse import networks as nw

zipper = nw.build_zippernet(nw.ZIPPER, seed=0)
lighting = nw.build_singlepath(nw.LIGHTING, seed=1)
adjusting = nw.build_singlepath(nw.ADJUSTING, seed=2)

for name, params in [("zipper", zipper), ("lighting", lighting), ("adjusting", adjusting)]:
    print(f"{name:10s} {nw.count_parameters(params):>9,d} parameters in {len(params)} tensors")

# %%
# Feature shapes down the encoder and back up the decoder
feats = {}
with torch.no_grad():
    out = nw.zippernet_forward(zipper, torch.rand(1, 64, 64), torch.rand(1, 64, 64), feats)
for key, value in feats.items():
    if key.startswith(("a.", "dec")):
        print(f"{key:8s} {tuple(value.shape)}")
print("output", tuple(out.shape), "range", float(out.min()), float(out.max()))

# %%
# AdjustingNet reads two alphas off the centre pixel of its 2-channel output
with torch.no_grad():
    alpha_map = nw.singlepath_forward(adjusting, torch.rand(1, 32, 32) * 0.1)
print("alphas:", [round(a.item(), 4) for a in nw.extract_alpha(alpha_map)])
