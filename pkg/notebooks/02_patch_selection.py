"""
Where does the policy look?
===========================

Trains the extractor on source clips only, then compares the selected spatial
patches with the sprite boxes on target clips it never saw, against patches
placed at random.  Overlays for two clips go to ``patches/``.
"""

import sys

from patchda.data import DatasetConfig, DatasetManifest, generate
from patchda.harness.config import config_from_json
from patchda.harness.train import evaluate, train_local
from patchda.harness.visualize import localisation_iou, random_center_iou, visualize_patches

root = sys.argv[1] if len(sys.argv) > 1 else "desk_data"
try:
    manifest = DatasetManifest.load(root)
except Exception:
    manifest = generate(DatasetConfig(), root)

cfg = config_from_json({"train": {"seed": 0}})
ckpt = train_local(manifest, cfg, out="ck_local")

target_val = manifest.ids("target", "val")
iou = localisation_iou(ckpt, manifest, target_val)
chance = random_center_iou(manifest, target_val, cfg.model.patch_size, cfg.model.num_segments)
print(f"patch vs sprite IoU on target val: {iou:.3f}  (random centres {chance:.3f}, ratio {iou / chance:.2f})")

# the phase-1 head is only a training aid, but it shows what the features carry
print("source val", evaluate(ckpt, manifest, "source/val").to_dict())
print("target val", evaluate(ckpt, manifest, "target/val").to_dict())

written = visualize_patches(ckpt, manifest, target_val[:2], "patches")
print(len(written), "overlays written, e.g.", written[0]["overlay"])
