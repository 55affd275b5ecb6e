"""Average solidity as a label-free stopping criterion.

Trains a small baseline on one blob domain while watching a shifted
domain, then shows how the per-epoch average solidity of the target
predictions tracks the (normally unavailable) target IoU, and which
epoch the solidity criterion picks.

Run:  python demos/02_solidity_selection.py
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from mitoadapt import dataio, morpho, nets, train

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

source = dataio.make_blob_fixture(6, 96, 96, 4, rng_seed=3, name="source")
# Mild shift: the baseline still finds blobs, imperfectly.
target = dataio.make_blob_fixture(3, 96, 96, 4, rng_seed=4, name="target",
                                  fg_level=0.36, bg_level=0.70, noise_sigma=0.05)

spec = nets.NetworkSpec(variant="attention_unet", depth=2, base_filters=8)
plan = train.baseline_plan(epochs=10, max_lr=2e-3, rng_seed=0)
sampler = dataio.PatchSampler(patch_size=32, count=40, val_fraction=0.1, rng_seed=1)
result = train.train_baseline(source, spec, plan, sampler=sampler, eval_target=target)

trace = result.trace
print(f"source objective solidity: {trace.objective_solidity:.3f}")
for entry in trace.entries:
    sol = "undefined" if entry.target_solidity is None else f"{entry.target_solidity:.3f}"
    print(f"  epoch {entry.epoch}: solidity={sol}  target IoU={entry.target_iou:.3f}")

picked = morpho.select_by_solidity(trace)
best = max(trace.entries, key=lambda e: e.target_iou)
print(f"solidity criterion picks epoch {picked} "
      f"(IoU {trace.entry_at(picked).target_iou:.3f}); "
      f"best epoch was {best.epoch} (IoU {best.target_iou:.3f})")

epochs = [e.epoch for e in trace.entries]
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
ax1.plot(epochs, [e.target_solidity for e in trace.entries], marker="o")
ax1.axhline(trace.objective_solidity, linestyle="--", color="k", label="source objective")
ax1.axvline(picked, color="tab:red", alpha=0.5, label="selected epoch")
ax1.set_xlabel("epoch")
ax1.set_title("target average solidity")
ax1.legend()
ax2.plot(epochs, [e.target_iou for e in trace.entries], marker="o", color="tab:green")
ax2.axvline(picked, color="tab:red", alpha=0.5)
ax2.set_xlabel("epoch")
ax2.set_title("target IoU (hidden at deployment)")
fig.tight_layout()
fig.savefig(out_dir / "solidity_selection.png", dpi=120)
print("wrote", out_dir / "solidity_selection.png")
