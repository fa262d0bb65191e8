# Building a small semi-synthetic tattoo set and looking at what comes out.
import sys
from pathlib import Path

import numpy as np

from tatttrn import synthgen

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/data")

# procedural glyphs stand in for tattoo artwork, one per category
templates = synthgen.generate_glyph_templates(6, side=96, seed=7)
print([t.id for t in templates], templates[0].ink.shape)

# two skin pools; samples alternate between them
pools = [synthgen.procedural_skin_bases(4, 128, 128, seed=1, prefix="armA"),
         synthgen.procedural_skin_bases(4, 128, 128, seed=2, prefix="armB")]

# one composite by hand: draw parameters, blend, crop around the ink
rng = np.random.default_rng(0)
params = synthgen.sample_params(rng, pools[0][0].image.shape)
sample = synthgen.compose(templates[0], pools[0][0], params)
crop = synthgen.crop_to_tattoo(sample, margin_frac=0.1, out_side=64)
print(params)
print("mask pixels", int(sample.mask.sum()), "bbox", crop.bbox, "crop", crop.image.shape)

# the whole dataset in one call; same seed -> same bytes
manifest = synthgen.build_dataset(templates, pools, per_template_count=10, global_seed=3,
                                  out_dir=out, out_side=64)
print(len(manifest), "samples,", manifest.category_counts())
print(manifest.entries[0].to_record())

# a contact sheet: sample over its clean target, one column per category
rows = []
for e in manifest.entries[::10]:
    img = synthgen.load_image(manifest.resolve(e.path))
    tgt = synthgen.load_image(manifest.resolve(e.target_path), gray=True)
    rows.append(np.concatenate([img, np.repeat(tgt[..., None], 3, axis=2)], axis=0))
synthgen.save_png(np.concatenate(rows, axis=1), out / "contact_sheet.png")
print("wrote", out / "contact_sheet.png")
