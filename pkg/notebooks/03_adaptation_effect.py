"""
Adaptation losses and the local branch
======================================

For each seed: one source-only phase 1, then phase 2 with and without the
adversarial and entropy terms, plus a run without the local branch at all.
Target-val action top-1 is printed per seed and as a median.
"""

import statistics
import sys
import time

from patchda.data import DatasetConfig, DatasetManifest, generate
from patchda.harness.config import config_from_json
from patchda.harness.train import evaluate, train_adapt, train_local

root = sys.argv[1] if len(sys.argv) > 1 else "desk_data"
seeds = [int(s) for s in sys.argv[2].split(",")] if len(sys.argv) > 2 else [0, 1, 2, 3, 4]
try:
    manifest = DatasetManifest.load(root)
except Exception:
    manifest = generate(DatasetConfig(), root)

no_adapt = {"lambda_sd": 0.0, "lambda_rd": 0.0, "lambda_td": 0.0, "gamma": 0.0}
rows = []
for seed in seeds:
    t0 = time.time()
    cfg = config_from_json({"train": {"seed": seed}})
    ck1 = train_local(manifest, cfg)
    full = evaluate(train_adapt(manifest, ck1, cfg), manifest).action_top1

    cfg_off = config_from_json({"train": {"seed": seed, **no_adapt}})
    source_only = evaluate(train_adapt(manifest, ck1, cfg_off), manifest).action_top1

    cfg_glob = config_from_json({"train": {"seed": seed}, "model": {"use_local": False}})
    global_only = evaluate(train_adapt(manifest, train_local(manifest, cfg_glob), cfg_glob), manifest).action_top1

    rows.append((full, source_only, global_only))
    print(f"seed {seed}: full {full:.1f}  source-only losses {source_only:.1f}  global only {global_only:.1f}  ({time.time() - t0:.0f}s)")

print(f"median gain from adaptation losses: {statistics.median(f - s for f, s, _ in rows):+.1f} pts")
print(f"median gain from the local branch: {statistics.median(f - g for f, _, g in rows):+.1f} pts")
