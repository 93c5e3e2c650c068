"""
One decoder head or two
=======================

Train a small Light-AE on synthetic shapes twice, once with a single
decoder head and once with two heads that each emit half the points,
then compare the reconstruction metrics and look at how the heads split
the work. Runs in about a minute on one core.
"""
import os
import tempfile

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from prae.harness.compare import compare_records
from prae.harness.config import ExperimentConfig
from prae.harness.train import prepare_dataset, train
from prae.checkpoint import load_checkpoint

out = tempfile.mkdtemp(prefix="prae_demo_")
base = ExperimentConfig(backbone="LightAE", depth=3, points=256, epochs=10,
                        synthetic_per_category=20, output_dir=out)

###############################################################################
# Two runs that differ only in the number of heads.
records = []
for heads in (1, 2):
    cfg = base.replace(heads=heads, output_dir=os.path.join(out, f"m{heads}"))
    rec = train(cfg)
    records.append(rec)
    print(f"M={heads}: {rec.param_count:,} decoder parameters, "
          f"best test CD {rec.best_metrics['cd']:.5f} at epoch {rec.best_epoch}")

print(compare_records(records).render())

###############################################################################
# Loss curves.
fig, ax = plt.subplots(figsize=(5, 3))
for rec in records:
    ax.semilogy(rec.train_loss, label=f"M={rec.config['heads']}")
ax.set_xlabel("epoch")
ax.set_ylabel("training loss")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(out, "loss_curves.svg"))

###############################################################################
# Where does each head put its points? Colour one reconstruction by head.
model = load_checkpoint(records[1].best_checkpoint).model
ds = prepare_dataset(base.replace(heads=2))
x = ds.clouds[:1].transpose(0, 2, 1)
halves = model.forward(x, train=False)
fig = plt.figure(figsize=(4, 4))
ax = fig.add_subplot(projection="3d")
for h, pts in enumerate(halves):
    ax.scatter(*pts[0].T, s=3, label=f"head {h}")
ax.legend()
fig.savefig(os.path.join(out, "heads.svg"))
print("figures in", out)
