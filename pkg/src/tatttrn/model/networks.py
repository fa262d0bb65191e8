from __future__ import annotations

from typing import Callable

import torch
import torch.nn as nn

from .config import ModelConfig
from .losses import l2_normalize


def conv_bn_relu(in_ch: int, out_ch: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """Three-level encoder-decoder with skip connections and a sigmoid head."""

    def __init__(self, in_ch: int, out_ch: int, nf: int = 16):
        super().__init__()
        self.enc0 = nn.Sequential(conv_bn_relu(in_ch, nf), conv_bn_relu(nf, nf))
        self.enc1 = nn.Sequential(nn.MaxPool2d(2), conv_bn_relu(nf, 2 * nf), conv_bn_relu(2 * nf, 2 * nf))
        self.enc2 = nn.Sequential(nn.MaxPool2d(2), conv_bn_relu(2 * nf, 4 * nf), conv_bn_relu(4 * nf, 4 * nf))
        self.center = nn.Sequential(nn.MaxPool2d(2), conv_bn_relu(4 * nf, 8 * nf),
                                    nn.ConvTranspose2d(8 * nf, 4 * nf, 2, stride=2))
        self.dec2 = nn.Sequential(conv_bn_relu(8 * nf, 4 * nf), nn.ConvTranspose2d(4 * nf, 2 * nf, 2, stride=2))
        self.dec1 = nn.Sequential(conv_bn_relu(4 * nf, 2 * nf), nn.ConvTranspose2d(2 * nf, nf, 2, stride=2))
        self.dec0 = nn.Sequential(conv_bn_relu(2 * nf, nf), nn.Conv2d(nf, out_ch, 1))

    def forward(self, x):
        e0 = self.enc0(x)
        e1 = self.enc1(e0)
        e2 = self.enc2(e1)
        c = self.center(e2)
        d2 = self.dec2(torch.cat([c, e2], 1))
        d1 = self.dec1(torch.cat([d2, e1], 1))
        return torch.sigmoid(self.dec0(torch.cat([d1, e0], 1)))


class ConvEncoder(nn.Module):
    """Four strided conv stages, global average pooling, linear projection to K.

    Returns the un-normalized embedding; callers L2-normalize.
    """

    def __init__(self, in_ch: int, K: int, widths=(16, 32, 64, 128)):
        super().__init__()
        layers, prev = [], in_ch
        for w in widths:
            layers += [conv_bn_relu(prev, w, stride=2), conv_bn_relu(w, w)]
            prev = w
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.proj = nn.Linear(prev, K)

    def forward(self, x):
        return self.proj(self.pool(self.features(x)).flatten(1))


BACKBONES: dict[str, Callable[[int, int], nn.Module]] = {
    "tiny": lambda in_ch, K: ConvEncoder(in_ch, K, (8, 16, 32, 64)),
    "small": lambda in_ch, K: ConvEncoder(in_ch, K, (16, 32, 64, 128)),
    "base": lambda in_ch, K: ConvEncoder(in_ch, K, (32, 64, 128, 256)),
}


def register_backbone(name: str, factory: Callable[[int, int], nn.Module]) -> None:
    """Make ``factory(in_channels, K) -> nn.Module`` available as ``backbone_spec=name``.

    The module must map an NxCxHxW batch to NxK un-normalized embeddings.
    """
    BACKBONES[name] = factory


def make_backbone(spec: str, in_ch: int, K: int) -> nn.Module:
    try:
        return BACKBONES[spec](in_ch, K)
    except KeyError:
        raise ValueError(f"unknown backbone {spec!r}; available: {sorted(BACKBONES)}") from None


class ArcFaceHead(nn.Module):
    """Bias-free class-weight matrix, row-normalized on every access."""

    def __init__(self, K: int, C: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(C, K))
        nn.init.xavier_normal_(self.weight)

    def forward(self) -> torch.Tensor:
        return l2_normalize(self.weight)


class TattTRN(nn.Module):
    """Image-to-template translation cycle plus two embedding backbones."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.img_to_tpl = UNet(3, 1, config.unet_width)
        self.tpl_to_img = UNet(1, 3, config.unet_width)
        self.raw_backbone = make_backbone(config.backbone_spec, 3, config.K)
        self.tpl_backbone = make_backbone(config.backbone_spec, 1, config.K)
        self.raw_head = ArcFaceHead(config.K, config.C)
        self.tpl_head = ArcFaceHead(config.K, config.C)

    def _check(self, x: torch.Tensor, channels: int) -> None:
        side = self.config.input_side
        if x.ndim != 4 or x.shape[1] != channels or x.shape[2:] != (side, side):
            raise ValueError(
                f"expected a Nx{channels}x{side}x{side} batch, got {tuple(x.shape)}")

    def itt_forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (reconstructed template, image reconstructed from that template)."""
        self._check(images, 3)
        R_T = self.img_to_tpl(images)
        return R_T, self.tpl_to_img(R_T)

    def embed_raw(self, images: torch.Tensor) -> torch.Tensor:
        self._check(images, 3)
        return l2_normalize(self.raw_backbone(images))

    def embed_template(self, templates: torch.Tensor) -> torch.Tensor:
        self._check(templates, 1)
        return l2_normalize(self.tpl_backbone(templates))

    def forward(self, images: torch.Tensor):
        R_T, R_I = self.itt_forward(images)
        return R_T, R_I, self.embed_raw(images), self.embed_template(R_T)
