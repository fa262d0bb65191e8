from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torchvision.transforms.functional as TF

from ..errors import InvalidStateError
from ..synthgen import DatasetManifest, load_image, resize
from .config import ModelConfig
from .losses import arcface_loss, bce, total_loss
from .networks import TattTRN

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "tatttrn-checkpoint"
CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = ("epoch", "L_I_arc", "L_T_arc", "L_rec", "total")


@dataclass
class TrainState:
    config: ModelConfig
    model: TattTRN
    optimizer: torch.optim.Optimizer
    scheduler: torch.optim.lr_scheduler.LRScheduler | None = None
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    seed: int = 0


def new_state(config: ModelConfig, seed: int = 0) -> TrainState:
    torch.manual_seed(seed)
    model = TattTRN(config)
    wd = config.decay if config.decay_mode == "weight" else 0.0
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, weight_decay=wd)
    sched = None
    if config.decay_mode == "lr":
        sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=config.decay)
    return TrainState(config=config, model=model, optimizer=opt, scheduler=sched, seed=seed)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "seed": state.seed,
        "history": state.history,
        "model": state.model.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "scheduler": state.scheduler.state_dict() if state.scheduler else None,
    }, path)
    return path


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> TrainState:
    """Restore a TrainState; refuses files whose K, C or input_side differ from ``expected``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a tatttrn checkpoint")
    if blob["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {blob['version']} != supported {CHECKPOINT_VERSION}")
    config = ModelConfig.from_dict(blob["config"])
    if expected is not None and not expected.compatible_with(config):
        raise ValueError(
            f"checkpoint config (K={config.K}, C={config.C}, side={config.input_side}) does not "
            f"match (K={expected.K}, C={expected.C}, side={expected.input_side})")
    state = new_state(expected or config, seed=blob["seed"])
    state.model.load_state_dict(blob["model"])
    state.optimizer.load_state_dict(blob["optimizer"])
    if state.scheduler is not None and blob["scheduler"] is not None:
        state.scheduler.load_state_dict(blob["scheduler"])
    state.epoch = blob["epoch"]
    state.history = list(blob["history"])
    return state


def write_history(history: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in HISTORY_COLUMNS})


def read_history(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(f)]


# ---------------------------------------------------------------------------
# data


def to_tensor(images: np.ndarray) -> torch.Tensor:
    """NxHxWxC (or HxWxC, or NxHxW grayscale) float array -> NxCxHxW float32 tensor."""
    a = np.asarray(images, dtype=np.float32)
    if a.ndim == 2:
        a = a[None, ..., None]
    elif a.ndim == 3 and a.shape[-1] in (1, 3):
        a = a[None]
    elif a.ndim == 3:
        a = a[..., None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2)))


def load_manifest_arrays(manifest: DatasetManifest, side: int, targets: bool = True):
    """Load every sample (and clean target) in manifest order, resized to ``side``."""
    images, tgts, labels = [], [], []
    for e in manifest.entries:
        p = manifest.resolve(e.path)
        if not p.exists():
            raise FileNotFoundError(p)
        images.append(resize(load_image(p), (side, side)))
        if targets:
            tp = manifest.resolve(e.target_path)
            if not tp.exists():
                raise FileNotFoundError(tp)
            tgts.append(resize(load_image(tp, gray=True), (side, side)))
        labels.append(e.label)
    x = to_tensor(np.clip(np.stack(images), 0, 1))
    t = to_tensor(np.clip(np.stack(tgts), 0, 1)) if targets else None
    return x, t, torch.tensor(labels, dtype=torch.long)


def color_jitter(images: torch.Tensor, config: ModelConfig, gen: torch.Generator) -> torch.Tensor:
    """Random per-image brightness, contrast, saturation and hue adjustment."""
    n = images.shape[0]

    def factors(width):
        return 1.0 + width * (2.0 * torch.rand(n, generator=gen) - 1.0)

    b, c, s = factors(config.jitter_brightness), factors(config.jitter_contrast), factors(config.jitter_saturation)
    h = config.jitter_hue * (2.0 * torch.rand(n, generator=gen) - 1.0)
    out = []
    for i in range(n):
        im = TF.adjust_brightness(images[i], float(b[i]))
        im = TF.adjust_contrast(im, float(c[i]))
        im = TF.adjust_saturation(im, float(s[i]))
        if config.jitter_hue > 0:
            im = TF.adjust_hue(im, float(h[i]))
        out.append(im)
    return torch.stack(out).clamp(0.0, 1.0)


# ---------------------------------------------------------------------------
# training


def compute_losses(model: TattTRN, images, targets, labels, config: ModelConfig) -> dict:
    R_T, R_I, e_raw, e_tpl = model(images)
    cycle = images if config.cycle_target == "image" else targets.expand_as(R_I)
    L_T_rec = bce(targets, R_T)
    L_I_rec = bce(cycle, R_I)
    L_rec = L_T_rec + L_I_rec
    L_I_arc = arcface_loss(e_raw, labels, model.raw_head(), config.m, config.s)
    L_T_arc = arcface_loss(e_tpl, labels, model.tpl_head(), config.m, config.s)
    return {"L_I_arc": L_I_arc, "L_T_arc": L_T_arc, "L_rec": L_rec,
            "total": total_loss(L_I_arc, L_T_arc, L_rec, config.lam)}


def train(manifest: DatasetManifest | str | Path, config: ModelConfig, out: str | Path,
          seed: int = 0, resume: str | Path | None = None, data=None) -> TrainState:
    """Mini-batch Adam on the combined loss; writes ``history.csv`` and checkpoints to ``out``.

    Colour jitter is applied to the network inputs only. Shuffling and jitter
    draw from a generator reseeded per epoch, so resuming from a checkpoint
    replays the same batches an uninterrupted run would have seen.
    ``data`` may carry preloaded ``(images, targets, labels)`` tensors.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.read(manifest)
    n_cats = len({e.label for e in manifest.entries})
    if n_cats != config.C or max(e.label for e in manifest.entries) >= config.C:
        raise ValueError(f"manifest has {n_cats} categories but config.C = {config.C}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    images, targets, labels = data if data is not None else load_manifest_arrays(manifest, config.input_side)
    state = load_checkpoint(resume, expected=config) if resume else new_state(config, seed)
    model, opt = state.model, state.optimizer
    n = images.shape[0]
    bs = min(config.batch_size, n)

    for epoch in range(state.epoch + 1, config.epochs + 1):
        gen = torch.Generator().manual_seed(state.seed * 1_000_003 + epoch)
        perm = torch.randperm(n, generator=gen)
        model.train()
        sums = dict.fromkeys(HISTORY_COLUMNS[1:], 0.0)
        seen = 0
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            if idx.numel() < 2:  # batch norm needs more than one sample
                continue
            x = color_jitter(images[idx], config, gen)
            try:
                losses = compute_losses(model, x, targets[idx], labels[idx], config)
            except InvalidStateError:
                save_checkpoint(state, out / "checkpoint_abort.pt")
                raise
            opt.zero_grad()
            losses["total"].backward()
            opt.step()
            k = idx.numel()
            seen += k
            for name in sums:
                sums[name] += float(losses[name].detach()) * k
        if state.scheduler is not None:
            state.scheduler.step()
        state.epoch = epoch
        row = {"epoch": epoch, **{k: v / max(seen, 1) for k, v in sums.items()}}
        state.history.append(row)
        write_history(state.history, out / "history.csv")
        log.info("epoch %d: %s", epoch, ", ".join(f"{k}={v:.4f}" for k, v in row.items() if k != "epoch"))
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(state, out / f"checkpoint_epoch{epoch:03d}.pt")

    save_checkpoint(state, out / "checkpoint_last.pt")
    write_history(state.history, out / "history.csv")
    return state
