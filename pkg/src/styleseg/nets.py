"""Shared network building blocks and checkpoint I/O.

The U-net here follows the vanilla encoder-decoder with skip connections;
normalization and dropout are knobs because the pipeline uses the same
body twice: batch norm + dropout-after-concatenation for the segmentation
nets, instance norm (style normalization) for the heart localizer.
"""

from __future__ import annotations

from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F


class CheckpointError(Exception):
    pass


CHECKPOINT_FORMAT = 1


def _norm(kind: str, ch: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm2d(ch)
    if kind == "instance":
        return nn.InstanceNorm2d(ch, affine=True)
    raise ValueError(f"unsupported norm {kind!r}")


class _DoubleConv(nn.Module):
    def __init__(self, in_ch, out_ch, norm):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
            _norm(norm, out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
            _norm(norm, out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class UNet(nn.Module):
    """U-net with a softmax head producing per-class probabilities.

    dropout (if > 0) is applied right after each expanding-path
    concatenation, before the decoder convolutions.
    """

    def __init__(self, in_channels=1, n_classes=4, base_width=32, depth=4,
                 dropout=0.1, norm="batch"):
        super().__init__()
        self.arch = {
            "in_channels": in_channels, "n_classes": n_classes,
            "base_width": base_width, "depth": depth,
            "dropout": dropout, "norm": norm,
        }
        self.encoders = nn.ModuleList()
        ch = in_channels
        for d in range(depth):
            w = base_width * 2 ** d
            self.encoders.append(_DoubleConv(ch, w, norm))
            ch = w
        self.bottleneck = _DoubleConv(ch, ch * 2, norm)
        ch *= 2
        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for d in reversed(range(depth)):
            w = base_width * 2 ** d
            self.upsamplers.append(nn.ConvTranspose2d(ch, w, 2, stride=2))
            self.decoders.append(_DoubleConv(2 * w, w, norm))
            ch = w
        self.dropout = nn.Dropout2d(dropout) if dropout > 0 else None
        self.head = nn.Conv2d(ch, n_classes, 1)

    def forward(self, x):
        if x.shape[1] != self.arch["in_channels"]:
            raise ValueError(
                f"expected {self.arch['in_channels']} input channels, got {x.shape[1]}"
            )
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            x = up(x)
            x = torch.cat([x, skip], dim=1)
            if self.dropout is not None:
                x = self.dropout(x)
            x = dec(x)
        return F.softmax(self.head(x), dim=1)


class CascadePair(nn.Module):
    """Two-stage cascade: the second net consumes [image, first-net probs]."""

    def __init__(self, first: UNet, second: UNet):
        super().__init__()
        if second.arch["in_channels"] != first.arch["in_channels"] + first.arch["n_classes"]:
            raise ValueError("second net must take image channels + class channels")
        self.first = first
        self.second = second

    def forward(self, x):
        p1 = self.first(x)
        p2 = self.second(torch.cat([x, p1], dim=1))
        return p1, p2


def save_checkpoint(path, kind: str, config: dict, state: dict, extra: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "kind": kind,
            "config": config,
            "state": state,
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path, kind: str, expected_config: dict | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {payload.get('format')}")
    if payload.get("kind") != kind:
        raise CheckpointError(f"{path}: expected kind {kind!r}, got {payload.get('kind')!r}")
    if expected_config is not None and payload["config"] != expected_config:
        raise CheckpointError(
            f"{path}: architecture config mismatch\n"
            f"  checkpoint: {payload['config']}\n  expected:   {expected_config}"
        )
    return payload
