from __future__ import annotations

import numpy as np
import torch

from ..synthgen import DatasetManifest
from .networks import TattTRN
from .training import TrainState, load_manifest_arrays, to_tensor

BRANCHES = ("both", "raw", "template")


def _model(state) -> TattTRN:
    return state.model if isinstance(state, TrainState) else state


@torch.no_grad()
def extract_feature(images, state, branch: str = "both", batch_size: int = 64) -> np.ndarray:
    """Retrieval features for a batch of images.

    ``branch="both"`` gives the 2K concatenation [raw embedding, embedding of
    the reconstructed template]; each half is unit-norm and the whole is left
    un-normalized. ``"raw"`` and ``"template"`` return a single K-dim half.
    """
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}")
    model = _model(state)
    x = images if isinstance(images, torch.Tensor) else to_tensor(images)
    model._check(x, 3)
    was_training = model.training
    model.eval()
    try:
        parts = []
        for start in range(0, x.shape[0], batch_size):
            xb = x[start:start + batch_size].float()
            halves = []
            if branch in ("both", "raw"):
                halves.append(model.embed_raw(xb))
            if branch in ("both", "template"):
                R_T, _ = model.itt_forward(xb)
                halves.append(model.embed_template(R_T))
            parts.append(torch.cat(halves, dim=1))
        feats = torch.cat(parts).double().numpy()
    finally:
        model.train(was_training)
    return feats


def extract_manifest_features(manifest: DatasetManifest, state, branch: str = "both"):
    """FeatureVectors (with labels and sample ids) for every manifest entry."""
    from ..retrieval import FeatureVector

    model = _model(state)
    images, _, labels = load_manifest_arrays(manifest, model.config.input_side, targets=False)
    feats = extract_feature(images, model, branch)
    return [FeatureVector(values=f, category_label=int(y), sample_id=e.sample_id)
            for f, y, e in zip(feats, labels.tolist(), manifest.entries)]


@torch.no_grad()
def reconstruct_templates(images, state, batch_size: int = 64) -> torch.Tensor:
    model = _model(state)
    x = images if isinstance(images, torch.Tensor) else to_tensor(images)
    model.eval()
    return torch.cat([model.itt_forward(x[i:i + batch_size])[0]
                      for i in range(0, x.shape[0], batch_size)])
