# CMC and DET on clustered stand-in features, then the same curves as PNGs.
# Swap `features` for extract_manifest_features(...) to evaluate a real model.
import sys
from pathlib import Path

import numpy as np

from tatttrn import evalkit
from tatttrn.retrieval import FeatureVector

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/eval")
out.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(5)


def unit(v):
    return v / np.linalg.norm(v)


K, C, per_cat = 16, 12, 8
centers = rng.normal(size=(C, 2 * K))
features = []
for c in range(C):
    for k in range(per_cat):
        v = centers[c] + 1.2 * rng.normal(size=2 * K)
        features.append(FeatureVector(np.concatenate([unit(v[:K]), unit(v[K:])]), c, f"c{c:02d}_{k}"))

# closed set: every probe category has one enrolled sample
splits = evalkit.make_splits(features, n_splits=5, mode="closed", seed=0)
per_split, curve = evalkit.evaluate_splits(features, splits)
print("rank-1 per split:", [round(float(r[0]), 3) for r in per_split])
print(f"CMC rank-1 {curve.mean_ir[0]:.3f} +/- {curve.std_ir[0]:.3f}, rank-5 {curve.mean_ir[4]:.3f}")
evalkit.write_cmc_csv(curve, out / "cmc.csv")

# open set: 30% of categories never enrolled
splits = evalkit.make_splits(features, n_splits=5, mode="open", seed=0, open_fraction=0.3)
print("withheld:", [s.withheld_categories for s in splits])
per_split, det = evalkit.evaluate_splits(features, splits)
print(f"EER {det.eer:.3f} +/- {det.eer_std:.3f}")
# single-split curves keep their raw scores, so any operating point can be read off
fpir, fnir = per_split[0].rates_at(np.array([0.7, 0.5, 0.3]))
for t, a, b in zip((0.7, 0.5, 0.3), fpir, fnir):
    print(f"  tau={t}: FPIR={a:.3f} FNIR={b:.3f}")
evalkit.write_det_csv(det, out / "det.csv")

# plotting goes through the CLI so the demo and the command share one path
from tatttrn.cli import main  # noqa: E402

main(["plot", "--cmc", str(out / "cmc.csv"), "--det", str(out / "det.csv"), "--out", str(out)])
