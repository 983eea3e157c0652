"""Train a small network at 4x sparsity and compare it with the baselines.

A short run (a few minutes on one core).  The full desk protocol uses 200
training phantoms and 2000 iterations; see tests/test_acceptance.py.

Run: python3 demos/03_train_and_compare.py
"""

# %%
import dataclasses
import logging
import time

from sparseodt.model import DESK_MODEL, ASBA
from sparseodt.phantom import PhantomTemplate, gen_dataset
from sparseodt.train import TrainConfig, compare_methods, prepare, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

template = PhantomTemplate(depth=64, width=64)
train_set = [prepare(s.raw, s.gt_flow) for s in gen_dataset(template, 60, seed=1)]
test_set = [prepare(s.raw, s.gt_flow) for s in gen_dataset(template, 10, seed=2)]

# %%
delta = 4
cfg = dataclasses.replace(DESK_MODEL, delta=delta)
print(f"model parameters: {ASBA(cfg).num_parameters():,}")

t0 = time.time()
model, curve = train(train_set, cfg, TrainConfig(iterations=300), progress_every=50)
print(f"trained in {time.time() - t0:.0f}s, loss {curve[0]['L']:.4f} -> {curve[-1]['L']:.4f}")

# %%
print(f"{'method':12s} {'masked PSNR':>12s} {'SSIM':>6s} {'MIP PSNR':>9s} {'MIP SSIM':>9s}")
for name, r in compare_methods(test_set, delta, model).items():
    print(f"{name:12s} {r.psnr_mean:12.2f} {r.ssim_mean:6.3f} {r.mip_psnr:9.2f} {r.mip_ssim:9.3f}")
