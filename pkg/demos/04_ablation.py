"""
Loss ablation
=============

Train the same scene five times, each time with part of the loss removed,
and compare what comes out.

Usage: python3 demos/04_ablation.py [iterations]
"""

import sys

import numpy as np

from retinexfuse import metrics as mt
from retinexfuse import trainer as tr
from retinexfuse.synthetic import synthetic_pair

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 100

ir, vis = synthetic_pair(64, seed=0)
scene = tr.prepare_scene(ir, vis, scale=1, seed=0)
config = tr.TrainConfig(iterations=iterations, log_every=10)

results = {v: tr.run_ablation(scene, config, v) for v in tr.VARIANTS}

# %%
for v, r in results.items():
    m = mt.evaluate_all(ir, vis, r.fused)
    print(f"{v:9s} alpha ({r.alpha1:.3f}, {r.alpha2:.3f})  mean {r.fused.mean():.3f}  "
          f"MG {m.mg:6.2f}  SF {m.sf:6.2f}")

# %%
# How far each variant drifts from the full loss
full = results["full"].fused
for v in tr.VARIANTS[1:]:
    print(f"mean |full - {v}| = {np.abs(full - results[v].fused).mean():.4f}")
