# Train a small TattTRN, enrol a gallery and run a few searches.
# Sized to finish in a minute or two on a laptop CPU.
import logging
import sys
from pathlib import Path

import numpy as np

from tatttrn import retrieval, synthgen
from tatttrn.model import (ModelConfig, extract_manifest_features, load_checkpoint,
                           reconstruct_templates, load_manifest_arrays, train)

logging.basicConfig(level=logging.INFO, format="%(message)s")
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/train")

templates = synthgen.generate_glyph_templates(8, side=64, seed=11)
pools = [synthgen.procedural_skin_bases(6, 96, 96, seed=1, prefix="a"),
         synthgen.procedural_skin_bases(6, 96, 96, seed=2, prefix="b")]
train_set = synthgen.build_dataset(templates, pools, 16, 1, out / "train_set", out_side=32)
probe_set = synthgen.build_dataset(templates, [synthgen.procedural_skin_bases(3, 96, 96, seed=3, prefix="c")],
                                   4, 2, out / "probe_set", out_side=32)

config = ModelConfig(C=8, K=64, input_side=32, epochs=8, batch_size=16, lr=2e-3,
                     backbone_spec="tiny", unet_width=8, checkpoint_every=4)
state = train(train_set, config, out / "run", seed=0)
print("loss by epoch:", [round(h["total"], 3) for h in state.history])

# checkpoints reload into an identical model
state = load_checkpoint(out / "run" / "checkpoint_last.pt")

gallery = retrieval.enroll(extract_manifest_features(train_set, state))
probes = extract_manifest_features(probe_set, state)
hits = 0
for p in probes:
    cands = retrieval.search(p, gallery, top_k=5)
    hits += cands[0].category_label == p.category_label
print(f"top-1 category hits: {hits}/{len(probes)}")

cands = retrieval.search(probes[0], gallery, top_k=5)
for c in cands:
    print(f"  {c.sample_id:<14} label={c.category_label} sim={c.similarity:.3f}")
print("accepted at tau=0.5:", len(retrieval.decide(cands, 0.5)))

# what the translation branch makes of the probe images
images, targets, _ = load_manifest_arrays(probe_set, 32)   # NCHW tensors
R_T = reconstruct_templates(images[:8], state)
gray = images[:8].mean(dim=1)
columns = [np.concatenate([gray[i].numpy(), targets[i, 0].numpy(), R_T[i, 0].numpy()], axis=0) for i in range(8)]
sheet = np.concatenate(columns, axis=1)   # rows: input, clean target, reconstruction
synthgen.save_png(sheet, out / "reconstructions.png")
print("wrote", out / "reconstructions.png")
